//! Clairvoyant offline optimum for tiny instances.
//!
//! Every quality matrix is a candidate; candidates are visited in order of
//! decreasing objective and the first one with a feasible delivery schedule
//! wins. Feasibility is a transportation problem over slots: a max-flow for a
//! single user, an LP when users share the cell.
//!
//! Timing model. Segment `s` (0-based) plays at `D_s`; its base layer and
//! enhancement bundle must be fully delivered in slots ending by `D_s`.
//!
//! * [`DeadlineMode::Aggregate`] (default): `D_s = (s + 1 + beta_bar * S) * tau_seg`,
//!   i.e. the whole stall budget may be spent up front. Any online policy whose
//!   startup plus stalls stay within `tau_seg + beta_bar * S * tau_seg` meets
//!   these deadlines, so the optimum here bounds it from above.
//! * [`DeadlineMode::PerSegment`]: `D_s = (1 + beta_bar) * (s + 1) * tau_seg`,
//!   stalls spread evenly. Tighter, and not an upper bound in general.
//!
//! In both modes base segment `s` is released at `s * tau_seg - tau_lim`,
//! the earliest time any playback clock could allow the request. Using the
//! earliest clock keeps the feasible set monotone in `beta_bar` and `tau_lim`.

pub mod flow;
pub mod lp;

pub use flow::FlowNetwork;

use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelTrace;
use crate::error::{Error, Result};
use crate::metrics;
use crate::video::{QualityLevel, VideoSpec};

pub const MAX_USERS: usize = 2;
pub const MAX_SEGMENTS: usize = 6;
pub const MAX_LAYERS: usize = 2;
pub const MAX_SLOTS: usize = 200;
pub const MAX_ENUMERATION: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeadlineMode {
    #[default]
    Aggregate,
    PerSegment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TinyInstance {
    pub video: VideoSpec,
    pub slot_duration_s: f64,
    /// `peak_rates_bps[user][slot]`.
    pub peak_rates_bps: Vec<Vec<f64>>,
    #[serde(default = "default_buffer_limit")]
    pub buffer_limit_s: f64,
    /// Allowed re-buffer fraction.
    #[serde(default)]
    pub beta_bar: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub mode: DeadlineMode,
}

fn default_buffer_limit() -> f64 {
    50.0
}

fn default_eta() -> f64 {
    0.1
}

/// One unit of demand: the base layer or the enhancement bundle of a
/// segment, deliverable in slots `release..deadline`.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub user: usize,
    pub segment: usize,
    pub enhancement: bool,
    pub bits: f64,
    pub release: usize,
    pub deadline: usize,
}

/// A feasible delivery plan. `bits[user][2 * s + e][slot]`, where `e` is 0
/// for the base layer and 1 for the enhancement bundle of segment `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSchedule {
    pub slot_duration_s: f64,
    pub bits: Vec<Vec<Vec<f64>>>,
}

impl OracleSchedule {
    pub fn base_rate(&self, user: usize, slot: usize) -> f64 {
        self.layer_rate(user, slot, 0)
    }

    pub fn enh_rate(&self, user: usize, slot: usize) -> f64 {
        self.layer_rate(user, slot, 1)
    }

    fn layer_rate(&self, user: usize, slot: usize, e: usize) -> f64 {
        self.bits[user]
            .iter()
            .skip(e)
            .step_by(2)
            .map(|b| b[slot])
            .sum::<f64>()
            / self.slot_duration_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// `quality[user][segment]`.
    pub quality: Vec<Vec<QualityLevel>>,
    /// Sum over users of `mean - eta * std`.
    pub objective: f64,
    pub schedule: OracleSchedule,
}

impl TinyInstance {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let inst: TinyInstance = serde_json::from_str(&text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn users(&self) -> usize {
        self.peak_rates_bps.len()
    }

    pub fn slots(&self) -> usize {
        self.peak_rates_bps.first().map_or(0, Vec::len)
    }

    pub fn trace(&self) -> Result<ChannelTrace> {
        ChannelTrace::new(self.peak_rates_bps.clone(), self.slot_duration_s)
    }

    /// Number of quality matrices, `(L + 1)^(N * S)`.
    pub fn enumeration_size(&self) -> u64 {
        let per = self.video.num_layers() as u64 + 1;
        let exp = (self.users() * self.video.num_segments) as u32;
        per.checked_pow(exp).unwrap_or(u64::MAX)
    }

    pub fn validate(&self) -> Result<()> {
        self.video.validate()?;
        let too_large = |m: String| Err(Error::EnumerationTooLarge(m));
        if self.users() == 0 || self.users() > MAX_USERS {
            return too_large(format!("{} users (1..={MAX_USERS})", self.users()));
        }
        if self.video.num_segments > MAX_SEGMENTS {
            return too_large(format!(
                "{} segments (max {MAX_SEGMENTS})",
                self.video.num_segments
            ));
        }
        if self.video.num_layers() > MAX_LAYERS {
            return too_large(format!(
                "{} layers (max {MAX_LAYERS})",
                self.video.num_layers()
            ));
        }
        if self.slots() == 0 || self.slots() > MAX_SLOTS {
            return too_large(format!("{} slots (1..={MAX_SLOTS})", self.slots()));
        }
        if self.enumeration_size() > MAX_ENUMERATION {
            return too_large(format!("{} quality matrices", self.enumeration_size()));
        }
        self.trace()?;
        let bad = |m: &str| Err(Error::Params(m.to_string()));
        if !(self.buffer_limit_s >= 0.0) {
            return bad("buffer_limit_s must be >= 0");
        }
        if !(self.beta_bar >= 0.0 && self.beta_bar.is_finite()) {
            return bad("beta_bar must be finite and >= 0");
        }
        if !(self.eta >= 0.0) {
            return bad("eta must be >= 0");
        }
        Ok(())
    }

    fn slot_index(&self, t: f64) -> usize {
        let x = t / self.slot_duration_s;
        // Absorb rounding so that exact multiples land on the boundary.
        (x + 1e-9).floor().max(0.0) as usize
    }

    fn deadline(&self, segment: usize) -> usize {
        let seg = self.video.segment_duration_s;
        let s = (segment + 1) as f64;
        let t = match self.mode {
            DeadlineMode::Aggregate => (s + self.beta_bar * self.video.num_segments as f64) * seg,
            DeadlineMode::PerSegment => (1.0 + self.beta_bar) * s * seg,
        };
        self.slot_index(t).min(self.slots())
    }

    fn base_release(&self, segment: usize) -> usize {
        let t = segment as f64 * self.video.segment_duration_s - self.buffer_limit_s;
        if t <= 0.0 {
            0
        } else {
            let x = t / self.slot_duration_s;
            (x - 1e-9).ceil() as usize
        }
    }

    /// Demand implied by a quality matrix; zero-size bundles are omitted.
    pub fn jobs(&self, quality: &[Vec<QualityLevel>]) -> Vec<Job> {
        let ladder = self.video.ladder();
        let mut jobs = Vec::new();
        for (user, row) in quality.iter().enumerate() {
            for (segment, level) in row.iter().enumerate() {
                let scale = self.video.segment_scale(segment);
                let deadline = self.deadline(segment);
                jobs.push(Job {
                    user,
                    segment,
                    enhancement: false,
                    bits: ladder.layer_bits[0] * scale,
                    release: self.base_release(segment),
                    deadline,
                });
                if level.0 > 0 {
                    jobs.push(Job {
                        user,
                        segment,
                        enhancement: true,
                        bits: ladder.enhancement_bits(*level) * scale,
                        release: 0,
                        deadline,
                    });
                }
            }
        }
        jobs
    }
}

/// Whether the quality matrix can be delivered; returns a witness schedule.
pub fn feasibility_check(
    inst: &TinyInstance,
    quality: &[Vec<QualityLevel>],
) -> Result<Option<OracleSchedule>> {
    if quality.len() != inst.users() {
        return Err(Error::Dimension {
            expected: inst.users(),
            got: quality.len(),
        });
    }
    for row in quality {
        if row.len() != inst.video.num_segments {
            return Err(Error::Dimension {
                expected: inst.video.num_segments,
                got: row.len(),
            });
        }
        if let Some(l) = row.iter().find(|l| l.0 > inst.video.num_layers()) {
            return Err(Error::LevelOutOfRange {
                level: l.0,
                max: inst.video.num_layers(),
            });
        }
    }
    let jobs = inst.jobs(quality);
    if jobs.iter().any(|j| j.release >= j.deadline) {
        return Ok(None);
    }
    let tau = inst.slot_duration_s;
    let per_job = if inst.users() == 1 {
        flow::single_user_schedule(&jobs, &inst.peak_rates_bps[0], tau)
    } else {
        lp::multi_user_schedule(&jobs, &inst.peak_rates_bps, tau)?
    };
    Ok(per_job.map(|per_job| {
        let k = inst.slots();
        let s = inst.video.num_segments;
        let mut bits = vec![vec![vec![0.0; k]; 2 * s]; inst.users()];
        for (job, row) in jobs.iter().zip(per_job) {
            bits[job.user][2 * job.segment + job.enhancement as usize] = row;
        }
        OracleSchedule {
            slot_duration_s: tau,
            bits,
        }
    }))
}

/// All quality vectors of one user, best objective first.
fn ranked_vectors(inst: &TinyInstance) -> Result<Vec<(f64, Vec<QualityLevel>)>> {
    let levels = inst.video.num_layers() + 1;
    let s = inst.video.num_segments;
    let quality = inst.video.ladder().quality;
    let mut out = Vec::with_capacity(levels.pow(s as u32));
    let mut digits = vec![0usize; s];
    loop {
        let q: Vec<f64> = digits.iter().map(|&l| quality[l]).collect();
        out.push((
            metrics::objective(&q, inst.eta)?,
            digits.iter().map(|&l| QualityLevel(l)).collect(),
        ));
        let mut i = s;
        loop {
            if i == 0 {
                out.sort_by(|a, b| b.0.total_cmp(&a.0));
                return Ok(out);
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < levels {
                break;
            }
            digits[i] = 0;
        }
    }
}

fn dominates(a: &[Vec<QualityLevel>], b: &[Vec<QualityLevel>]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| x.iter().zip(y).all(|(p, q)| p >= q))
}

#[derive(PartialEq)]
struct Candidate {
    objective: f64,
    idx: Vec<usize>,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.objective
            .total_cmp(&other.objective)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Best feasible quality matrix, or `None` if even all-base is infeasible.
pub fn solve(inst: &TinyInstance) -> Result<Option<OracleSolution>> {
    inst.validate()?;
    let n = inst.users();
    let ranked = ranked_vectors(inst)?;

    // A user that cannot meet its own demand with the whole cell to itself
    // cannot meet it when sharing.
    let mut solo_ok: HashMap<(usize, usize), bool> = HashMap::new();
    let mut solo = |user: usize, idx: usize| -> Result<bool> {
        if n == 1 {
            return Ok(true);
        }
        if let Some(&ok) = solo_ok.get(&(user, idx)) {
            return Ok(ok);
        }
        let single = TinyInstance {
            peak_rates_bps: vec![inst.peak_rates_bps[user].clone()],
            ..inst.clone()
        };
        let ok = feasibility_check(&single, std::slice::from_ref(&ranked[idx].1))?.is_some();
        solo_ok.insert((user, idx), ok);
        Ok(ok)
    };

    let mut heap = BinaryHeap::new();
    let mut seen = HashSet::new();
    let start = vec![0usize; n];
    heap.push(Candidate {
        objective: ranked[0].0 * n as f64,
        idx: start.clone(),
    });
    seen.insert(start);
    let mut infeasible: Vec<Vec<Vec<QualityLevel>>> = Vec::new();
    while let Some(Candidate { objective, idx }) = heap.pop() {
        for u in 0..n {
            if idx[u] + 1 < ranked.len() {
                let mut next = idx.clone();
                next[u] += 1;
                if seen.insert(next.clone()) {
                    heap.push(Candidate {
                        objective: next.iter().map(|&i| ranked[i].0).sum(),
                        idx: next,
                    });
                }
            }
        }
        let quality: Vec<Vec<QualityLevel>> = idx.iter().map(|&i| ranked[i].1.clone()).collect();
        if infeasible.iter().any(|f| dominates(&quality, f)) {
            continue;
        }
        let mut alone = true;
        for (u, &i) in idx.iter().enumerate() {
            alone &= solo(u, i)?;
        }
        let schedule = if alone {
            feasibility_check(inst, &quality)?
        } else {
            None
        };
        match schedule {
            Some(schedule) => {
                return Ok(Some(OracleSolution {
                    quality,
                    objective,
                    schedule,
                }))
            }
            None => infeasible.push(quality),
        }
    }
    Ok(None)
}
