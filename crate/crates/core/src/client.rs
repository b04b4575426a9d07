//! Per-user playback and request state: virtual buffers, playback and
//! stall accounting, and the quality selectors (QUEL, NOVA, rate matching).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{Ladder, QualityLevel, VideoSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceModel {
    /// Single-layer segments, buffered video capped at the buffer limit.
    Streaming,
    /// Single-layer segments, no buffer limit.
    Downloading,
    /// Base layer capped at the buffer limit, enhancement layers prefetched.
    Streamloading,
}

impl ServiceModel {
    pub fn name(self) -> &'static str {
        match self {
            ServiceModel::Streaming => "streaming",
            ServiceModel::Downloading => "downloading",
            ServiceModel::Streamloading => "streamloading",
        }
    }

    pub fn is_layered(self) -> bool {
        self == ServiceModel::Streamloading
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Quel,
    Nova,
    Rm,
}

impl SelectorKind {
    pub fn name(self) -> &'static str {
        match self {
            SelectorKind::Quel => "quel",
            SelectorKind::Nova => "nova",
            SelectorKind::Rm => "rm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanUpdate {
    /// Exact running mean over finalized segments.
    Running,
    /// `m <- m + weight (q - m)`.
    Ewma { weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorParams {
    /// Weight of quality variability.
    pub eta: f64,
    /// Virtual-buffer update rate.
    pub epsilon: f64,
    pub beta_sl: f64,
    pub beta_nova: f64,
    /// Buffer limit on viewable (base) video, seconds.
    pub buffer_limit_s: f64,
    /// Cap on how far ahead of the playhead enhancement bundles may be
    /// requested, seconds. `None` means unlimited.
    pub enh_prefetch_limit_s: Option<f64>,
    /// Rate unit used by the selectors' rate penalty (1e6 = Mbps).
    pub rate_unit_bps: f64,
    pub mean_update: MeanUpdate,
    /// EWMA weight of the rate-matching throughput estimate, per download.
    pub rm_ewma_weight: f64,
}

impl Default for SelectorParams {
    fn default() -> Self {
        SelectorParams {
            eta: 0.1,
            epsilon: 0.05,
            beta_sl: 0.0,
            beta_nova: -0.2,
            buffer_limit_s: 50.0,
            enh_prefetch_limit_s: None,
            rate_unit_bps: 1e6,
            mean_update: MeanUpdate::Running,
            rm_ewma_weight: 0.1,
        }
    }
}

impl SelectorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Params(m.to_string()));
        if !(self.eta >= 0.0) {
            return bad("eta must be >= 0");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.beta_sl > -1.0) {
            return bad("beta_sl must be > -1");
        }
        if !(self.beta_nova > -1.0) {
            return bad("beta_nova must be > -1");
        }
        if !(self.buffer_limit_s > 0.0) {
            return bad("buffer_limit_s must be > 0");
        }
        if let Some(l) = self.enh_prefetch_limit_s {
            if !(l >= 0.0) {
                return bad("enh_prefetch_limit_s must be >= 0");
            }
        }
        if !(self.rate_unit_bps > 0.0) {
            return bad("rate_unit_bps must be > 0");
        }
        if let MeanUpdate::Ewma { weight } = self.mean_update {
            if !(weight > 0.0 && weight <= 1.0) {
                return bad("mean_update weight must be in (0, 1]");
            }
        }
        if !(self.rm_ewma_weight > 0.0 && self.rm_ewma_weight <= 1.0) {
            return bad("rm_ewma_weight must be in (0, 1]");
        }
        Ok(())
    }
}

/// Slot/segment time base. Segment duration must be a whole number of slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub tau_slot: f64,
    pub tau_seg: f64,
    pub seg_slots: u64,
    pub num_segments: usize,
}

impl Timing {
    pub fn new(tau_slot: f64, tau_seg: f64, num_segments: usize) -> Result<Self> {
        if !(tau_slot > 0.0 && tau_seg > 0.0) {
            return Err(Error::Params(
                "slot and segment durations must be positive".into(),
            ));
        }
        let ratio = tau_seg / tau_slot;
        let seg_slots = ratio.round();
        if seg_slots < 1.0 || (ratio - seg_slots).abs() > 1e-6 * ratio.max(1.0) {
            return Err(Error::Params(format!(
                "segment duration {tau_seg} s is not a whole number of {tau_slot} s slots"
            )));
        }
        Ok(Timing {
            tau_slot,
            tau_seg,
            seg_slots: seg_slots as u64,
            num_segments,
        })
    }

    pub fn video_slots(&self) -> u64 {
        self.seg_slots * self.num_segments as u64
    }

    pub fn slots_to_s(&self, slots: u64) -> f64 {
        slots as f64 * self.tau_slot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    /// Base layer (streamloading) or a whole single-layer segment.
    Base,
    /// Bundle of enhancement layers `1..=level` for one segment.
    Enhancement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub user: usize,
    pub segment: usize,
    pub kind: RequestKind,
    pub level: QualityLevel,
    pub bits_total: f64,
    pub bits_remaining: f64,
    pub issued_slot: u64,
}

impl Request {
    pub fn served_bits(&self) -> f64 {
        self.bits_total - self.bits_remaining
    }
}

/// Everything a client needs to decide its next request.
#[derive(Debug, Clone, Copy)]
pub struct RequestContext<'a> {
    pub video: &'a VideoSpec,
    pub ladder: &'a Ladder,
    pub params: &'a SelectorParams,
    pub timing: &'a Timing,
    pub model: ServiceModel,
    pub selector: SelectorKind,
    /// Slot in which the request is issued.
    pub slot: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub user: usize,
    pub playhead_slots: u64,
    /// First slot in which playback may advance.
    pub started_at: Option<u64>,
    /// Next base (or single-layer) segment to request.
    pub base_frontier: usize,
    /// Next segment eligible for an enhancement request.
    pub enh_frontier: usize,
    pub vbuf_base: f64,
    pub vbuf_enh: f64,
    pub mean_quality: f64,
    pub finalized_segments: usize,
    pub quality_log: Vec<Option<QualityLevel>>,
    pub rebuffer_slots: u64,
    pub startup_slots: u64,
    pub delivered_base: usize,
    pub delivered_enh_segments: usize,
    pub base_in_flight: bool,
    pub enh_in_flight: Option<usize>,
    pub segment_losses: usize,
    /// Segments given zero enhancement layers by the selector.
    pub skipped_segments: usize,
    /// Segments that started playing before the enhancement frontier reached them.
    pub overtaken_segments: usize,
    pub wasted_bits: f64,
    pub delivered_bits: f64,
    /// Rate-matching throughput estimate.
    pub throughput_est_bps: f64,
}

impl ClientState {
    pub fn new(user: usize, video: &VideoSpec, ladder: &Ladder) -> Self {
        ClientState {
            user,
            playhead_slots: 0,
            started_at: None,
            base_frontier: 0,
            enh_frontier: 0,
            vbuf_base: 0.0,
            vbuf_enh: 0.0,
            mean_quality: ladder.quality[0],
            finalized_segments: 0,
            quality_log: vec![None; video.num_segments],
            rebuffer_slots: 0,
            startup_slots: 0,
            delivered_base: 0,
            delivered_enh_segments: 0,
            base_in_flight: false,
            enh_in_flight: None,
            segment_losses: 0,
            skipped_segments: 0,
            overtaken_segments: 0,
            wasted_bits: 0.0,
            delivered_bits: 0.0,
            throughput_est_bps: video.base_rate_bps,
        }
    }

    pub fn tick_virtual_buffers(&mut self, epsilon: f64, tau_slot: f64) {
        self.vbuf_base += epsilon * tau_slot;
        self.vbuf_enh += epsilon * tau_slot;
    }

    /// Bookkeeping for a fully delivered request of `kind`.
    pub fn on_complete(&mut self, kind: RequestKind, epsilon: f64, tau_seg: f64) {
        match kind {
            RequestKind::Base => {
                self.vbuf_base = (self.vbuf_base - epsilon * tau_seg).max(0.0);
                self.delivered_base += 1;
            }
            RequestKind::Enhancement => {
                self.vbuf_enh = (self.vbuf_enh - epsilon * tau_seg).max(0.0);
                self.delivered_enh_segments += 1;
            }
        }
    }

    pub fn update_mean_quality(&mut self, q: f64, mode: MeanUpdate) {
        self.finalized_segments += 1;
        match mode {
            MeanUpdate::Running => {
                self.mean_quality += (q - self.mean_quality) / self.finalized_segments as f64;
            }
            MeanUpdate::Ewma { weight } => {
                if self.finalized_segments == 1 {
                    self.mean_quality = q;
                } else {
                    self.mean_quality += weight * (q - self.mean_quality);
                }
            }
        }
    }

    /// Records the final level of `segment` and folds it into the running mean.
    pub fn finalize_segment(
        &mut self,
        segment: usize,
        level: QualityLevel,
        ladder: &Ladder,
        mode: MeanUpdate,
    ) {
        debug_assert!(
            self.quality_log[segment].is_none(),
            "segment finalized twice"
        );
        self.quality_log[segment] = Some(level);
        self.update_mean_quality(ladder.quality[level.0], mode);
    }

    pub fn is_finished(&self, timing: &Timing) -> bool {
        self.playhead_slots >= timing.video_slots()
    }

    /// Base-layer (or single-layer) video buffered ahead of the playhead, in slots.
    pub fn buffered_slots(&self, timing: &Timing) -> i64 {
        (self.delivered_base as u64 * timing.seg_slots) as i64 - self.playhead_slots as i64
    }

    /// Index of the segment under the playhead (`S` once playback is over).
    pub fn segment_at_playhead(&self, timing: &Timing) -> usize {
        (self.playhead_slots / timing.seg_slots) as usize
    }

    /// Whether segment `s` has started playing.
    pub fn has_started(&self, segment: usize, timing: &Timing) -> bool {
        self.playhead_slots > segment as u64 * timing.seg_slots
    }

    /// Stall slots in the sense of the per-slot re-buffer counter that
    /// starts counting at slot 1 (startup included).
    pub fn stall_slots_including_startup(&self) -> u64 {
        self.rebuffer_slots + self.startup_slots
    }

    /// One slot of playback: advances the playhead when the next slot of
    /// video is covered by delivered base data, otherwise counts a stall.
    pub fn advance_playback(&mut self, slot: u64, timing: &Timing) {
        if self.is_finished(timing) {
            return;
        }
        match self.started_at {
            Some(start) if slot >= start => {
                let covered = self.delivered_base as u64 * timing.seg_slots;
                if covered > self.playhead_slots {
                    self.playhead_slots += 1;
                } else {
                    self.rebuffer_slots += 1;
                }
            }
            _ => self.startup_slots += 1,
        }
    }

    pub fn record_throughput(&mut self, bits: f64, slots: u64, tau_slot: f64, weight: f64) {
        let sample = bits / (slots.max(1) as f64 * tau_slot);
        self.throughput_est_bps += weight * (sample - self.throughput_est_bps);
    }

    fn base_buffer_full(&self, ctx: &RequestContext) -> bool {
        self.delivered_base >= ctx.timing.num_segments
            || self.buffered_slots(ctx.timing) as f64 * ctx.timing.tau_slot
                >= ctx.params.buffer_limit_s - 1e-9
    }

    /// Next request, base before enhancement. Returns `None` when blocked or
    /// when both request slots are occupied.
    pub fn next_request(&mut self, ctx: &RequestContext) -> Option<Request> {
        if !self.base_in_flight && self.base_frontier < ctx.timing.num_segments {
            let allowed = match ctx.model {
                ServiceModel::Downloading => true,
                ServiceModel::Streaming | ServiceModel::Streamloading => {
                    (self.buffered_slots(ctx.timing) as f64) * ctx.timing.tau_slot
                        < ctx.params.buffer_limit_s - 1e-9
                }
            };
            if allowed {
                return Some(self.base_request(ctx));
            }
        }
        if ctx.model.is_layered()
            && self.enh_in_flight.is_none()
            && ctx.ladder.max_level().0 > 0
            && self.base_buffer_full(ctx)
        {
            return self.enhancement_request(ctx);
        }
        None
    }

    fn base_request(&mut self, ctx: &RequestContext) -> Request {
        let segment = self.base_frontier;
        let scale = ctx.video.segment_scale(segment);
        let (level, bits) = if ctx.model.is_layered() {
            (QualityLevel::BASE, ctx.ladder.layer_bits[0] * scale)
        } else {
            let level = match ctx.selector {
                SelectorKind::Rm => rm_select(self.throughput_est_bps, &ctx.ladder.dash_rate),
                _ => nova_select(self, ctx.ladder, ctx.params, scale),
            };
            (
                level,
                ctx.ladder.dash_rate[level.0] * ctx.timing.tau_seg * scale,
            )
        };
        self.base_frontier += 1;
        self.base_in_flight = true;
        Request {
            user: self.user,
            segment,
            kind: RequestKind::Base,
            level,
            bits_total: bits,
            bits_remaining: bits,
            issued_slot: ctx.slot,
        }
    }

    /// Moves the enhancement frontier past segments that are already playing;
    /// those segments keep base quality.
    fn catch_up_enh_frontier(&mut self, ctx: &RequestContext) {
        let min_eligible = self.segment_at_playhead(ctx.timing) + 1;
        while self.enh_frontier < min_eligible.min(ctx.timing.num_segments) {
            let s = self.enh_frontier;
            if self.quality_log[s].is_none() {
                self.finalize_segment(s, QualityLevel::BASE, ctx.ladder, ctx.params.mean_update);
                self.overtaken_segments += 1;
            }
            self.enh_frontier += 1;
        }
    }

    fn enh_frontier_eligible(&self, ctx: &RequestContext) -> bool {
        if self.enh_frontier >= ctx.timing.num_segments {
            return false;
        }
        match ctx.params.enh_prefetch_limit_s {
            Some(limit) => {
                let ahead = self.enh_frontier as f64 * ctx.timing.tau_seg
                    - ctx.timing.slots_to_s(self.playhead_slots);
                ahead <= limit + 1e-9
            }
            None => true,
        }
    }

    fn select_enh_level(&self, ctx: &RequestContext) -> QualityLevel {
        let scale = ctx.video.segment_scale(self.enh_frontier);
        match ctx.selector {
            SelectorKind::Rm => rm_select(self.throughput_est_bps, &ctx.ladder.svc_rate),
            _ => quel_select(self, ctx.ladder, ctx.params, scale),
        }
    }

    fn enhancement_request(&mut self, ctx: &RequestContext) -> Option<Request> {
        self.catch_up_enh_frontier(ctx);
        if !self.enh_frontier_eligible(ctx) {
            return None;
        }
        let level = self.select_enh_level(ctx);
        if level.0 > 0 {
            return Some(self.make_enh_request(level, ctx));
        }
        match ctx.selector {
            // Rate matching waits for a better estimate instead of skipping.
            SelectorKind::Rm => None,
            _ => self.skip_zero_layers(ctx),
        }
    }

    /// Zero-layer loop: while QUEL picks no enhancement layers, treat the
    /// frontier segment as a completed zero-layer download and move on.
    pub fn skip_zero_layers(&mut self, ctx: &RequestContext) -> Option<Request> {
        loop {
            let s = self.enh_frontier;
            self.finalize_segment(s, QualityLevel::BASE, ctx.ladder, ctx.params.mean_update);
            self.skipped_segments += 1;
            self.vbuf_enh = (self.vbuf_enh - ctx.params.epsilon * ctx.timing.tau_seg).max(0.0);
            self.enh_frontier += 1;
            if !self.enh_frontier_eligible(ctx) {
                return None;
            }
            let level = self.select_enh_level(ctx);
            if level.0 > 0 {
                return Some(self.make_enh_request(level, ctx));
            }
        }
    }

    fn make_enh_request(&mut self, level: QualityLevel, ctx: &RequestContext) -> Request {
        let segment = self.enh_frontier;
        let bits = ctx.ladder.enhancement_bits(level) * ctx.video.segment_scale(segment);
        self.enh_frontier += 1;
        self.enh_in_flight = Some(segment);
        Request {
            user: self.user,
            segment,
            kind: RequestKind::Enhancement,
            level,
            bits_total: bits,
            bits_remaining: bits,
            issued_slot: ctx.slot,
        }
    }
}

/// Index of the maximum, ties toward the smaller index.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// QUEL: `argmax_l q_l - eta (q_l - m)^2 - b_e / (1 + beta_sl) (f_l - f_0)`,
/// with `f` the cumulative SVC rate in `rate_unit_bps` units.
pub fn quel_select(
    state: &ClientState,
    ladder: &Ladder,
    params: &SelectorParams,
    segment_scale: f64,
) -> QualityLevel {
    let coeff = state.vbuf_enh / (1.0 + params.beta_sl);
    let f0 = ladder.svc_rate[0];
    let m = state.mean_quality;
    QualityLevel(argmax(ladder.quality.iter().zip(&ladder.svc_rate).map(
        |(&q, &f)| {
            let extra = segment_scale * (f - f0) / params.rate_unit_bps;
            q - params.eta * (q - m).powi(2) - coeff * extra
        },
    )))
}

/// NOVA quality selection over single-layer representations:
/// `argmax_l q_l - eta (q_l - m)^2 - b / (1 + beta_nova) f_l`.
pub fn nova_select(
    state: &ClientState,
    ladder: &Ladder,
    params: &SelectorParams,
    segment_scale: f64,
) -> QualityLevel {
    let coeff = state.vbuf_base / (1.0 + params.beta_nova);
    let m = state.mean_quality;
    QualityLevel(argmax(ladder.quality.iter().zip(&ladder.dash_rate).map(
        |(&q, &f)| {
            q - params.eta * (q - m).powi(2) - coeff * segment_scale * f / params.rate_unit_bps
        },
    )))
}

/// Level whose rate is closest to `avg_rate_bps`; ties toward the lower level.
pub fn rm_select(avg_rate_bps: f64, rates: &[f64]) -> QualityLevel {
    QualityLevel(argmax(rates.iter().map(|r| -(r - avg_rate_bps).abs())))
}
