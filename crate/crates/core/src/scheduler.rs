//! Per-slot rate allocation at the base station.
//!
//! Every allocator here solves (or, for PF, greedily approximates) a
//! weighted-rate problem over the capacity region
//! `sum_i r_i / rho_i <= c`, with each user capped by its queued bits.
//! The weighted-rate LP is solved exactly by filling users in decreasing
//! `weight * rho` order.

use serde::{Deserialize, Serialize};

use crate::channel::CAPACITY_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    /// Base-priority weighted-rate allocation (RA^b then RA^e).
    Raquel,
    /// Single-queue weighted-rate allocation.
    Nova,
    /// Proportional fair, base queues before enhancement queues.
    Pf1,
    /// Proportional fair over one mixed FIFO per user.
    Pf2,
}

impl SchedulerKind {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Raquel => "raquel",
            SchedulerKind::Nova => "nova",
            SchedulerKind::Pf1 => "pf1",
            SchedulerKind::Pf2 => "pf2",
        }
    }

    pub fn is_pf(self) -> bool {
        matches!(self, SchedulerKind::Pf1 | SchedulerKind::Pf2)
    }
}

/// When enhancement data may use the slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotGranularity {
    /// Capacity left after all base queues drain is handed to enhancement
    /// queues within the same slot.
    #[default]
    Sub,
    /// Enhancement data is served only in slots that start with every base
    /// queue empty.
    Strict,
}

/// How capacity left over by positive-weight users is shared among
/// backlogged users whose weight is zero. Either choice is optimal for the
/// weighted-rate problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroKeyRule {
    /// Equal slot-time shares.
    #[default]
    EqualShare,
    /// Highest peak rate first (maximizes total throughput).
    MaxRate,
}

/// Per-user rates for one slot, bits/second.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AllocationVector {
    pub base: Vec<f64>,
    pub enh: Vec<f64>,
}

impl AllocationVector {
    pub fn zeros(users: usize) -> Self {
        AllocationVector {
            base: vec![0.0; users],
            enh: vec![0.0; users],
        }
    }

    pub fn clear(&mut self) {
        self.base.iter_mut().for_each(|r| *r = 0.0);
        self.enh.iter_mut().for_each(|r| *r = 0.0);
    }

    pub fn total(&self, user: usize) -> f64 {
        self.base[user] + self.enh[user]
    }

    /// Fraction of the slot used, `sum_i (r^b_i + r^e_i) / rho_i`.
    pub fn usage(&self, rho: &[f64]) -> f64 {
        (0..rho.len()).map(|i| self.total(i) / rho[i]).sum()
    }

    pub fn is_feasible(&self, rho: &[f64]) -> bool {
        self.base.iter().chain(&self.enh).all(|&r| r >= 0.0)
            && self.usage(rho) <= 1.0 + CAPACITY_EPS
    }
}

/// Queued bits per user at the start of a slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueueState {
    pub base_backlog: Vec<f64>,
    pub enh_backlog: Vec<f64>,
}

impl QueueState {
    pub fn zeros(users: usize) -> Self {
        QueueState {
            base_backlog: vec![0.0; users],
            enh_backlog: vec![0.0; users],
        }
    }

    pub fn any_base(&self) -> bool {
        self.base_backlog.iter().any(|&b| b > 0.0)
    }
}

/// Zero-key rule plus reusable scratch space for [`water_fill`].
#[derive(Debug, Default, Clone)]
pub struct FillScratch {
    pub zero_key: ZeroKeyRule,
    order: Vec<usize>,
    idle: Vec<usize>,
}

impl FillScratch {
    pub fn new(zero_key: ZeroKeyRule) -> Self {
        FillScratch {
            zero_key,
            ..Default::default()
        }
    }
}

/// Greedy fill of `capacity` (a fraction of the slot) in decreasing `key`
/// order, ties toward the lower index, each user capped at
/// `backlog / tau_slot`. Backlogged users with a zero key contribute nothing
/// to the weighted objective; they take what is left according to
/// `scratch.zero_key`, so
/// the fill is work conserving. Rates are added to `out`; returns the
/// fraction of the slot used.
#[allow(clippy::too_many_arguments)]
pub fn water_fill(
    keys: &[f64],
    rho: &[f64],
    backlog_bits: &[f64],
    tau_slot: f64,
    capacity: f64,
    scratch: &mut FillScratch,
    out: &mut [f64],
) -> f64 {
    let FillScratch {
        zero_key: rule,
        order,
        idle,
    } = scratch;
    order.clear();
    idle.clear();
    for i in 0..rho.len() {
        if backlog_bits[i] > 0.0 && rho[i] > 0.0 {
            if keys[i] > 0.0 {
                order.push(i);
            } else {
                idle.push(i);
            }
        }
    }
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));

    let mut left = capacity.max(0.0);
    let fill = |order: &[usize], left: &mut f64, out: &mut [f64]| {
        for &i in order {
            if *left <= 0.0 {
                break;
            }
            let need = backlog_bits[i] / (rho[i] * tau_slot);
            let share = need.min(*left);
            out[i] += share * rho[i];
            *left -= share;
        }
    };
    fill(order, &mut left, out);
    if left <= 0.0 || idle.is_empty() {
        return capacity.max(0.0) - left.max(0.0);
    }

    match *rule {
        ZeroKeyRule::MaxRate => {
            idle.sort_by(|&a, &b| rho[b].total_cmp(&rho[a]).then(a.cmp(&b)));
            fill(idle, &mut left, out);
        }
        ZeroKeyRule::EqualShare => {
            // Re-spread what users with small backlogs cannot take.
            let mut pending: &mut [usize] = idle.as_mut_slice();
            while left > 0.0 && !pending.is_empty() {
                let share = left / pending.len() as f64;
                let mut kept = 0;
                let mut spent = 0.0;
                for j in 0..pending.len() {
                    let i = pending[j];
                    let need = backlog_bits[i] / (rho[i] * tau_slot);
                    if need <= share {
                        out[i] += need * rho[i];
                        spent += need;
                    } else {
                        pending[kept] = i;
                        kept += 1;
                    }
                }
                if kept == pending.len() {
                    for &i in pending.iter() {
                        out[i] += share * rho[i];
                    }
                    left = 0.0;
                    break;
                }
                left -= spent;
                pending = &mut pending[..kept];
            }
        }
    }
    capacity.max(0.0) - left.max(0.0)
}

/// Base-layer allocation: maximize `sum_i b^b_i r_i` over users with queued
/// base bits. Returns the fraction of the slot used.
pub fn ra_base(
    vbuf_base: &[f64],
    rho: &[f64],
    queues: &QueueState,
    tau_slot: f64,
    scratch: &mut FillScratch,
    keys: &mut Vec<f64>,
    out: &mut AllocationVector,
) -> f64 {
    weighted_keys(vbuf_base, rho, keys);
    water_fill(
        keys,
        rho,
        &queues.base_backlog,
        tau_slot,
        1.0,
        scratch,
        &mut out.base,
    )
}

/// Enhancement allocation over the residual `capacity_frac` of the slot,
/// weights `b^e_i`. Returns the fraction of the slot used.
#[allow(clippy::too_many_arguments)]
pub fn ra_enh(
    vbuf_enh: &[f64],
    rho: &[f64],
    queues: &QueueState,
    tau_slot: f64,
    capacity_frac: f64,
    scratch: &mut FillScratch,
    keys: &mut Vec<f64>,
    out: &mut AllocationVector,
) -> f64 {
    if capacity_frac <= 0.0 {
        return 0.0;
    }
    weighted_keys(vbuf_enh, rho, keys);
    water_fill(
        keys,
        rho,
        &queues.enh_backlog,
        tau_slot,
        capacity_frac,
        scratch,
        &mut out.enh,
    )
}

/// Single-queue weighted-rate allocation; rates go to `out.base`.
pub fn nova_alloc(
    vbuf: &[f64],
    rho: &[f64],
    queues: &QueueState,
    tau_slot: f64,
    scratch: &mut FillScratch,
    keys: &mut Vec<f64>,
    out: &mut AllocationVector,
) -> f64 {
    weighted_keys(vbuf, rho, keys);
    water_fill(
        keys,
        rho,
        &queues.base_backlog,
        tau_slot,
        1.0,
        scratch,
        &mut out.base,
    )
}

fn weighted_keys(weights: &[f64], rho: &[f64], keys: &mut Vec<f64>) {
    keys.clear();
    keys.extend(weights.iter().zip(rho).map(|(w, r)| w * r));
}

/// Proportional fair: the backlogged user with the largest `rho / avg` takes
/// the slot, residual capacity going down the ranking. `backlog` is the
/// candidate queue; rates are added to `out`. Returns the fraction used.
#[allow(clippy::too_many_arguments)]
pub fn pf_alloc(
    avg: &[f64],
    rho: &[f64],
    backlog: &[f64],
    tau_slot: f64,
    capacity: f64,
    scratch: &mut FillScratch,
    keys: &mut Vec<f64>,
    out: &mut [f64],
) -> f64 {
    keys.clear();
    keys.extend(rho.iter().zip(avg).map(|(r, a)| r / a));
    water_fill(keys, rho, backlog, tau_slot, capacity, scratch, out)
}

/// `avg_i <- (1 - alpha) avg_i + alpha granted_i`, floored at `floor`.
pub fn update_pf_averages(avg: &mut [f64], granted: &[f64], alpha: f64, floor: f64) {
    for (a, &g) in avg.iter_mut().zip(granted) {
        *a = ((1.0 - alpha) * *a + alpha * g).max(floor);
    }
}

/// Session-owned allocator state: PF averages and scratch buffers.
#[derive(Debug, Clone)]
pub struct Scheduler {
    pub kind: SchedulerKind,
    pub granularity: SlotGranularity,
    pub pf_avg: Vec<f64>,
    pub pf_alpha: f64,
    pub pf_floor_bps: f64,
    scratch: FillScratch,
    keys: Vec<f64>,
    mixed: Vec<f64>,
}

impl Scheduler {
    pub const PF_TIME_CONSTANT_S: f64 = 1.0;
    pub const PF_FLOOR_BPS: f64 = 1e3;

    pub fn new(
        kind: SchedulerKind,
        granularity: SlotGranularity,
        zero_key: ZeroKeyRule,
        users: usize,
        tau_slot: f64,
    ) -> Self {
        Scheduler {
            kind,
            granularity,
            pf_avg: vec![Self::PF_FLOOR_BPS; users],
            pf_alpha: (tau_slot / Self::PF_TIME_CONSTANT_S).min(1.0),
            pf_floor_bps: Self::PF_FLOOR_BPS,
            scratch: FillScratch::new(zero_key),
            keys: Vec::with_capacity(users),
            mixed: vec![0.0; users],
        }
    }

    /// Fills `out` with this slot's allocation. For PF2 the per-user total
    /// is returned in `out.base`; the caller splits it over the mixed FIFO.
    pub fn allocate(
        &mut self,
        vbuf_base: &[f64],
        vbuf_enh: &[f64],
        rho: &[f64],
        queues: &QueueState,
        tau_slot: f64,
        out: &mut AllocationVector,
    ) {
        out.clear();
        let s = &mut self.scratch;
        let k = &mut self.keys;
        match self.kind {
            SchedulerKind::Nova => {
                nova_alloc(vbuf_base, rho, queues, tau_slot, s, k, out);
            }
            SchedulerKind::Raquel => {
                let strict_block = self.granularity == SlotGranularity::Strict && queues.any_base();
                let used = ra_base(vbuf_base, rho, queues, tau_slot, s, k, out);
                if !strict_block {
                    ra_enh(vbuf_enh, rho, queues, tau_slot, 1.0 - used, s, k, out);
                }
            }
            SchedulerKind::Pf1 => {
                let strict_block = self.granularity == SlotGranularity::Strict && queues.any_base();
                let used = pf_alloc(
                    &self.pf_avg,
                    rho,
                    &queues.base_backlog,
                    tau_slot,
                    1.0,
                    s,
                    k,
                    &mut out.base,
                );
                if !strict_block {
                    pf_alloc(
                        &self.pf_avg,
                        rho,
                        &queues.enh_backlog,
                        tau_slot,
                        1.0 - used,
                        s,
                        k,
                        &mut out.enh,
                    );
                }
            }
            SchedulerKind::Pf2 => {
                for (m, (b, e)) in self
                    .mixed
                    .iter_mut()
                    .zip(queues.base_backlog.iter().zip(&queues.enh_backlog))
                {
                    *m = b + e;
                }
                pf_alloc(
                    &self.pf_avg,
                    rho,
                    &self.mixed,
                    tau_slot,
                    1.0,
                    s,
                    k,
                    &mut out.base,
                );
            }
        }
    }

    /// EWMA update of PF averages with the rates actually served.
    pub fn observe(&mut self, served: &AllocationVector) {
        if self.kind.is_pf() {
            for (m, (b, e)) in self
                .mixed
                .iter_mut()
                .zip(served.base.iter().zip(&served.enh))
            {
                *m = b + e;
            }
            update_pf_averages(
                &mut self.pf_avg,
                &self.mixed,
                self.pf_alpha,
                self.pf_floor_bps,
            );
        }
    }
}
