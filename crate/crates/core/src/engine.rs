//! The slotted simulation loop.
//!
//! Each slot runs, in order: playback of the slot (using data delivered in
//! earlier slots), discard of enhancement bundles whose segment has started,
//! allocation, draining of head-of-line requests, completion handling, new
//! requests, and the virtual-buffer tick.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSource, ChannelTrace, SyntheticChannel, TraceGenParams};
use crate::client::{
    ClientState, Request, RequestContext, RequestKind, SelectorKind, SelectorParams, ServiceModel,
    Timing,
};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, FleetSummary, SessionMetrics};
use crate::scheduler::{
    AllocationVector, QueueState, Scheduler, SchedulerKind, SlotGranularity, ZeroKeyRule,
};
use crate::video::{Ladder, QualityLevel, VideoSpec};

/// Where per-slot peak rates come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    /// Log-AR(1) process; its seed is replaced by the session seed.
    Synthetic(TraceGenParams),
    Constant {
        rate_bps: f64,
    },
    /// A pre-recorded trace file.
    Trace {
        path: std::path::PathBuf,
    },
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec::Synthetic(TraceGenParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub model: ServiceModel,
    pub scheduler: SchedulerKind,
    pub selector: SelectorKind,
    pub users: usize,
    pub video: VideoSpec,
    pub channel: ChannelSpec,
    pub params: SelectorParams,
    pub slot_duration_s: f64,
    pub granularity: SlotGranularity,
    pub zero_key: ZeroKeyRule,
    /// Count the startup delay as re-buffering.
    pub include_startup_in_rebuffer: bool,
    /// Slot cap as a multiple of the video duration beyond one playthrough:
    /// `K = ceil((1 + factor) * S * tau_seg / tau_slot)`.
    pub max_stall_factor: f64,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            model: ServiceModel::Streamloading,
            scheduler: SchedulerKind::Raquel,
            selector: SelectorKind::Quel,
            users: 1,
            video: VideoSpec::default(),
            channel: ChannelSpec::default(),
            params: SelectorParams::default(),
            slot_duration_s: 0.01,
            granularity: SlotGranularity::Sub,
            zero_key: ZeroKeyRule::EqualShare,
            include_startup_in_rebuffer: false,
            max_stall_factor: 1.0,
            seed: 0,
        }
    }
}

/// Whether `(model, scheduler, selector)` is a supported combination.
pub fn combination_allowed(
    model: ServiceModel,
    scheduler: SchedulerKind,
    selector: SelectorKind,
) -> bool {
    match model {
        ServiceModel::Streamloading => {
            matches!(
                scheduler,
                SchedulerKind::Raquel | SchedulerKind::Pf1 | SchedulerKind::Pf2
            ) && matches!(selector, SelectorKind::Quel | SelectorKind::Rm)
        }
        ServiceModel::Streaming | ServiceModel::Downloading => {
            matches!(
                scheduler,
                SchedulerKind::Nova | SchedulerKind::Pf1 | SchedulerKind::Pf2
            ) && matches!(selector, SelectorKind::Nova | SelectorKind::Rm)
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.video.validate()?;
        self.params.validate()?;
        if self.users == 0 {
            return Err(Error::Config("at least one user is required".into()));
        }
        if !combination_allowed(self.model, self.scheduler, self.selector) {
            return Err(Error::Config(format!(
                "unsupported combination: model={} scheduler={} selector={}; allowed: \
                 streamloading with raquel|pf1|pf2 and quel|rm, \
                 streaming or downloading with nova|pf1|pf2 and nova|rm",
                self.model.name(),
                self.scheduler.name(),
                self.selector.name()
            )));
        }
        if !(self.max_stall_factor >= 0.0) {
            return Err(Error::Config("max_stall_factor must be >= 0".into()));
        }
        match &self.channel {
            ChannelSpec::Synthetic(p) => p.validate()?,
            ChannelSpec::Constant { rate_bps } if !(*rate_bps > 0.0) => {
                return Err(Error::Channel("constant rate must be positive".into()));
            }
            _ => {}
        }
        self.timing().map(|_| ())
    }

    pub fn timing(&self) -> Result<Timing> {
        Timing::new(
            self.slot_duration_s,
            self.video.segment_duration_s,
            self.video.num_segments,
        )
    }

    pub fn max_slots(&self) -> Result<u64> {
        let t = self.timing()?;
        Ok(((1.0 + self.max_stall_factor) * t.video_slots() as f64).ceil() as u64)
    }
}

/// Counts of per-slot constraint checks that failed. All zero in a correct run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConstraintReport {
    pub slots_checked: u64,
    pub capacity: u64,
    pub buffer_limit: u64,
    pub causality: u64,
    pub prefetch_limit: u64,
    pub negative_vbuf: u64,
    pub conservation: u64,
}

impl ConstraintReport {
    pub fn total_violations(&self) -> u64 {
        self.capacity
            + self.buffer_limit
            + self.causality
            + self.prefetch_limit
            + self.negative_vbuf
            + self.conservation
    }

    pub fn merge(&mut self, other: &ConstraintReport) {
        self.slots_checked += other.slots_checked;
        self.capacity += other.capacity;
        self.buffer_limit += other.buffer_limit;
        self.causality += other.causality;
        self.prefetch_limit += other.prefetch_limit;
        self.negative_vbuf += other.negative_vbuf;
        self.conservation += other.conservation;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionResult {
    pub users: Vec<SessionMetrics>,
    pub fleet: FleetSummary,
    pub constraints: ConstraintReport,
    pub slots_run: u64,
}

#[derive(Debug, Clone)]
struct Queued {
    seq: u64,
    req: Request,
}

/// Requests queued at the base station, per user.
#[derive(Debug, Clone, Default)]
pub struct BaseStationState {
    base: Vec<VecDeque<Queued>>,
    enh: Vec<VecDeque<Queued>>,
    next_seq: u64,
}

impl BaseStationState {
    pub fn new(users: usize) -> Self {
        BaseStationState {
            base: vec![VecDeque::new(); users],
            enh: vec![VecDeque::new(); users],
            next_seq: 0,
        }
    }

    pub fn enqueue(&mut self, req: Request) {
        let q = Queued {
            seq: self.next_seq,
            req,
        };
        self.next_seq += 1;
        match q.req.kind {
            RequestKind::Base => self.base[q.req.user].push_back(q),
            RequestKind::Enhancement => self.enh[q.req.user].push_back(q),
        }
    }

    pub fn queue_len(&self, user: usize) -> (usize, usize) {
        (self.base[user].len(), self.enh[user].len())
    }

    fn backlogs_into(&self, out: &mut QueueState) {
        for (i, (b, e)) in self.base.iter().zip(&self.enh).enumerate() {
            out.base_backlog[i] = b.iter().map(|q| q.req.bits_remaining).sum();
            out.enh_backlog[i] = e.iter().map(|q| q.req.bits_remaining).sum();
        }
    }
}

/// View of one slot, passed to an optional observer.
#[derive(Debug)]
pub struct SlotRecord<'a> {
    pub slot: u64,
    pub rho: &'a [f64],
    pub alloc: &'a AllocationVector,
    pub clients: &'a [ClientState],
    pub queues: &'a QueueState,
}

/// Writes one CSV row per (slot, user).
pub struct CsvSlotDump<W: io::Write> {
    out: W,
    line: String,
    header_written: bool,
}

impl<W: io::Write> CsvSlotDump<W> {
    pub fn new(out: W) -> Self {
        CsvSlotDump {
            out,
            line: String::new(),
            header_written: false,
        }
    }

    pub fn record(&mut self, r: &SlotRecord) -> io::Result<()> {
        if !self.header_written {
            writeln!(
                self.out,
                "slot,user,rho_bps,rate_base_bps,rate_enh_bps,vbuf_base,vbuf_enh,backlog_base_bits,backlog_enh_bits,playhead_slots"
            )?;
            self.header_written = true;
        }
        for (i, c) in r.clients.iter().enumerate() {
            self.line.clear();
            let _ = write!(
                self.line,
                "{},{},{},{},{},{},{},{},{},{}",
                r.slot,
                i,
                r.rho[i],
                r.alloc.base[i],
                r.alloc.enh[i],
                c.vbuf_base,
                c.vbuf_enh,
                r.queues.base_backlog[i],
                r.queues.enh_backlog[i],
                c.playhead_slots
            );
            writeln!(self.out, "{}", self.line)?;
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Runs one session with the channel described in the config.
pub fn run(config: &SessionConfig) -> Result<SessionResult> {
    run_observed(config, None)
}

pub fn run_observed(
    config: &SessionConfig,
    observer: Option<&mut dyn FnMut(&SlotRecord)>,
) -> Result<SessionResult> {
    config.validate()?;
    match &config.channel {
        ChannelSpec::Synthetic(p) => {
            let mut p = p.clone();
            p.seed = config.seed;
            let ch = SyntheticChannel::new(&p, config.users, config.slot_duration_s)?;
            run_with_channel(config, ch, observer)
        }
        ChannelSpec::Constant { rate_bps } => {
            let slots = config.max_slots()? as usize;
            let trace =
                ChannelTrace::constant(config.users, slots, *rate_bps, config.slot_duration_s)?;
            run_with_channel(config, &trace, observer)
        }
        ChannelSpec::Trace { path } => {
            let trace = crate::channel::load_trace(path)?;
            run_with_channel(config, &trace, observer)
        }
    }
}

/// Runs one session against an explicit channel source. The session stops
/// when every user has played the whole video, at the slot cap, or when the
/// channel runs out of slots.
pub fn run_with_channel<C: ChannelSource>(
    config: &SessionConfig,
    mut channel: C,
    mut observer: Option<&mut dyn FnMut(&SlotRecord)>,
) -> Result<SessionResult> {
    config.validate()?;
    if channel.num_users() < config.users {
        return Err(Error::Dimension {
            expected: config.users,
            got: channel.num_users(),
        });
    }
    if (channel.slot_duration_s() - config.slot_duration_s).abs() > 1e-12 {
        return Err(Error::Channel(format!(
            "trace slot duration {} s differs from configured {} s",
            channel.slot_duration_s(),
            config.slot_duration_s
        )));
    }
    let mut world = World::new(config)?;
    let mut cap = config.max_slots()?;
    if let Some(k) = channel.num_slots() {
        cap = cap.min(k as u64);
    }
    let mut rho = vec![0.0; channel.num_users()];
    let mut slot = 0;
    while slot < cap && !world.all_finished() {
        channel.fill_slot(slot as usize, &mut rho);
        world.step(slot, &rho[..config.users]);
        if let Some(obs) = observer.as_deref_mut() {
            obs(&SlotRecord {
                slot,
                rho: &rho[..config.users],
                alloc: &world.alloc,
                clients: &world.clients,
                queues: &world.queues,
            });
        }
        slot += 1;
    }
    world.finish(slot)
}

struct World<'a> {
    config: &'a SessionConfig,
    timing: Timing,
    ladder: Ladder,
    clients: Vec<ClientState>,
    bs: BaseStationState,
    sched: Scheduler,
    queues: QueueState,
    alloc: AllocationVector,
    served: AllocationVector,
    vbuf_base: Vec<f64>,
    vbuf_enh: Vec<f64>,
    drained_bits: Vec<f64>,
    report: ConstraintReport,
}

impl<'a> World<'a> {
    fn new(config: &'a SessionConfig) -> Result<Self> {
        let n = config.users;
        let ladder = config.video.ladder();
        Ok(World {
            config,
            timing: config.timing()?,
            clients: (0..n)
                .map(|i| ClientState::new(i, &config.video, &ladder))
                .collect(),
            ladder,
            bs: BaseStationState::new(n),
            sched: Scheduler::new(
                config.scheduler,
                config.granularity,
                config.zero_key,
                n,
                config.slot_duration_s,
            ),
            queues: QueueState::zeros(n),
            alloc: AllocationVector::zeros(n),
            served: AllocationVector::zeros(n),
            vbuf_base: vec![0.0; n],
            vbuf_enh: vec![0.0; n],
            drained_bits: vec![0.0; n],
            report: ConstraintReport::default(),
        })
    }

    fn all_finished(&self) -> bool {
        self.clients.iter().all(|c| c.is_finished(&self.timing))
    }

    fn step(&mut self, slot: u64, rho: &[f64]) {
        let timing = self.timing;
        for c in &mut self.clients {
            c.advance_playback(slot, &timing);
        }
        self.discard_late_bundles();

        self.bs.backlogs_into(&mut self.queues);
        for (i, c) in self.clients.iter().enumerate() {
            self.vbuf_base[i] = c.vbuf_base;
            self.vbuf_enh[i] = c.vbuf_enh;
        }
        self.sched.allocate(
            &self.vbuf_base,
            &self.vbuf_enh,
            rho,
            &self.queues,
            timing.tau_slot,
            &mut self.alloc,
        );
        self.report.slots_checked += 1;
        if !self.alloc.is_feasible(rho) {
            self.report.capacity += 1;
        }
        debug_assert!(
            self.alloc.is_feasible(rho),
            "allocation outside the capacity region"
        );

        let completed = self.drain(slot);
        for req in completed {
            self.complete(slot, req);
        }
        for i in 0..self.clients.len() {
            self.issue_requests(slot, i);
        }
        self.sched.observe(&self.served);

        let eps = self.config.params.epsilon;
        let lim_slots = self.config.params.buffer_limit_s / timing.tau_slot;
        let limited = self.config.model != ServiceModel::Downloading;
        for c in &mut self.clients {
            c.tick_virtual_buffers(eps, timing.tau_slot);
            if c.vbuf_base < 0.0 || c.vbuf_enh < 0.0 {
                self.report.negative_vbuf += 1;
            }
            if limited
                && c.buffered_slots(&timing) as f64 > lim_slots + timing.seg_slots as f64 + 1e-6
            {
                self.report.buffer_limit += 1;
            }
        }
    }

    /// Cancels enhancement bundles whose segment has started playing.
    fn discard_late_bundles(&mut self) {
        let timing = self.timing;
        let mode = self.config.params.mean_update;
        for (i, c) in self.clients.iter_mut().enumerate() {
            let q = &mut self.bs.enh[i];
            while let Some(front) = q.front() {
                if !c.has_started(front.req.segment, &timing) {
                    break;
                }
                let item = q.pop_front().expect("non-empty");
                c.segment_losses += 1;
                c.wasted_bits += item.req.served_bits();
                c.enh_in_flight = None;
                c.finalize_segment(item.req.segment, QualityLevel::BASE, &self.ladder, mode);
            }
        }
    }

    /// Serves this slot's allocation to head-of-line requests; returns the
    /// requests that finished.
    fn drain(&mut self, _slot: u64) -> Vec<Request> {
        let tau = self.timing.tau_slot;
        self.served.clear();
        let mut done = Vec::new();
        for i in 0..self.clients.len() {
            if self.config.scheduler == SchedulerKind::Pf2 {
                let mut budget = self.alloc.base[i] * tau;
                while budget > 0.0 {
                    let take_base = match (self.bs.base[i].front(), self.bs.enh[i].front()) {
                        (Some(b), Some(e)) => b.seq < e.seq,
                        (Some(_), None) => true,
                        (None, Some(_)) => false,
                        (None, None) => break,
                    };
                    let queue = if take_base {
                        &mut self.bs.base[i]
                    } else {
                        &mut self.bs.enh[i]
                    };
                    let used = serve_head(queue, budget, &mut done);
                    if take_base {
                        self.served.base[i] += used / tau;
                    } else {
                        self.served.enh[i] += used / tau;
                    }
                    self.drained_bits[i] += used;
                    budget -= used;
                    if used <= 0.0 {
                        break;
                    }
                }
            } else {
                let b = serve_head(&mut self.bs.base[i], self.alloc.base[i] * tau, &mut done);
                let e = serve_head(&mut self.bs.enh[i], self.alloc.enh[i] * tau, &mut done);
                self.served.base[i] = b / tau;
                self.served.enh[i] = e / tau;
                self.drained_bits[i] += b + e;
            }
        }
        done
    }

    fn complete(&mut self, slot: u64, req: Request) {
        let params = &self.config.params;
        let timing = self.timing;
        let c = &mut self.clients[req.user];
        c.delivered_bits += req.bits_total;
        c.record_throughput(
            req.bits_total,
            slot - req.issued_slot,
            timing.tau_slot,
            params.rm_ewma_weight,
        );
        c.on_complete(req.kind, params.epsilon, timing.tau_seg);
        match req.kind {
            RequestKind::Base => {
                c.base_in_flight = false;
                if c.started_at.is_none() {
                    c.started_at = Some(slot + 1);
                }
                if !self.config.model.is_layered() {
                    c.finalize_segment(req.segment, req.level, &self.ladder, params.mean_update);
                }
            }
            RequestKind::Enhancement => {
                c.enh_in_flight = None;
                if c.has_started(req.segment, &timing) {
                    self.report.causality += 1;
                }
                c.finalize_segment(req.segment, req.level, &self.ladder, params.mean_update);
            }
        }
    }

    fn issue_requests(&mut self, slot: u64, user: usize) {
        let ctx = RequestContext {
            video: &self.config.video,
            ladder: &self.ladder,
            params: &self.config.params,
            timing: &self.timing,
            model: self.config.model,
            selector: self.config.selector,
            slot,
        };
        let c = &mut self.clients[user];
        if c.is_finished(&self.timing) {
            return;
        }
        // At most one base and one enhancement request are outstanding.
        let first = c.next_request(&ctx);
        let second = first.as_ref().and_then(|_| c.next_request(&ctx));
        for req in first.into_iter().chain(second) {
            self.check_request(user, &req);
            self.bs.enqueue(req);
        }
    }

    fn check_request(&mut self, user: usize, req: &Request) {
        let c = &self.clients[user];
        let t = &self.timing;
        let seg_start = req.segment as u64 * t.seg_slots;
        match req.kind {
            RequestKind::Base => {
                if self.config.model != ServiceModel::Downloading {
                    let ahead = (seg_start + t.seg_slots) as f64 - c.playhead_slots as f64;
                    let lim = (self.config.params.buffer_limit_s + t.tau_seg) / t.tau_slot;
                    if ahead > lim + 1e-6 {
                        self.report.buffer_limit += 1;
                    }
                    debug_assert!(ahead <= lim + 1e-6, "base request beyond the buffer limit");
                }
            }
            RequestKind::Enhancement => {
                if c.has_started(req.segment, t) {
                    self.report.causality += 1;
                }
                debug_assert!(
                    !c.has_started(req.segment, t),
                    "enhancement for a played segment"
                );
                if let Some(limit) = self.config.params.enh_prefetch_limit_s {
                    let ahead = t.slots_to_s(seg_start) - t.slots_to_s(c.playhead_slots);
                    if ahead > limit + 1e-6 {
                        self.report.prefetch_limit += 1;
                    }
                }
            }
        }
    }

    fn finish(mut self, slots_run: u64) -> Result<SessionResult> {
        let t = self.timing;
        let mut users = Vec::with_capacity(self.clients.len());
        for (i, c) in self.clients.iter().enumerate() {
            let in_queue: f64 = self.bs.base[i]
                .iter()
                .chain(&self.bs.enh[i])
                .map(|q| q.req.served_bits())
                .sum();
            let accounted = c.delivered_bits + c.wasted_bits + in_queue;
            if (accounted - self.drained_bits[i]).abs() > 1e-6 * self.drained_bits[i].max(1.0) {
                self.report.conservation += 1;
            }
            let unwatched = t.video_slots() - c.playhead_slots.min(t.video_slots());
            let log: Vec<QualityLevel> = c
                .quality_log
                .iter()
                .map(|q| q.unwrap_or(QualityLevel::BASE))
                .collect();
            let mut m = SessionMetrics::from_log(
                i,
                log,
                &self.ladder.quality,
                self.config.params.eta,
                c.rebuffer_slots + unwatched,
                c.startup_slots,
                t.video_slots(),
                t.tau_slot,
                self.config.include_startup_in_rebuffer,
            )?;
            m.segment_losses = c.segment_losses;
            m.skipped_segments = c.skipped_segments;
            m.overtaken_segments = c.overtaken_segments;
            m.wasted_bits = c.wasted_bits;
            m.delivered_bits = c.delivered_bits;
            m.completed = unwatched == 0;
            users.push(m);
        }
        Ok(SessionResult {
            fleet: aggregate(&users),
            users,
            constraints: self.report,
            slots_run,
        })
    }
}

/// Serves up to `budget` bits to the head of `queue`; returns the bits used.
fn serve_head(queue: &mut VecDeque<Queued>, budget: f64, done: &mut Vec<Request>) -> f64 {
    let Some(head) = queue.front_mut() else {
        return 0.0;
    };
    if budget <= 0.0 {
        return 0.0;
    }
    let r = &mut head.req;
    let used = budget.min(r.bits_remaining);
    r.bits_remaining -= used;
    // Allocations are capped at the backlog, so anything left here is rounding.
    if r.bits_remaining <= 1e-9 * r.bits_total + 1e-6 {
        let used = used + r.bits_remaining;
        r.bits_remaining = 0.0;
        done.push(queue.pop_front().expect("non-empty").req);
        return used;
    }
    used
}
