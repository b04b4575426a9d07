//! Oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use streamload::channel::ChannelTrace;
use streamload::client::ServiceModel;
use streamload::engine::{
    run_observed, run_with_channel, ChannelSpec, SessionConfig, SessionResult, SlotRecord,
};
use streamload::oracle::{self, DeadlineMode, TinyInstance};
use streamload::video::{QualityLevel, VideoSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const TAU: f64 = 0.01;
pub const SEG: f64 = 0.1;

pub fn video(segments: usize, layers: usize, rng: &mut ChaCha8Rng) -> VideoSpec {
    VideoSpec {
        segment_duration_s: SEG,
        num_segments: segments,
        base_rate_bps: 100_000.0,
        enh_rates_bps: (0..layers).map(|_| rng.random_range(5e4..4e5)).collect(),
        ..VideoSpec::default()
    }
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> TinyInstance {
    let users = rng.random_range(1..=2);
    let segments = rng.random_range(1..=if users == 1 { 6 } else { 4 });
    let layers = rng.random_range(1..=2);
    let slots = rng.random_range(segments * 10 + 10..=200);
    let peak_rates_bps = (0..users)
        .map(|_| {
            let mean = rng.random_range(8e4..1.5e6);
            (0..slots)
                .map(|_| mean * rng.random_range(0.3..1.7))
                .collect()
        })
        .collect();
    TinyInstance {
        video: video(segments, layers, rng),
        slot_duration_s: TAU,
        peak_rates_bps,
        buffer_limit_s: [0.1, 0.2, 0.3, 5.0][rng.random_range(0..4)],
        beta_bar: [0.0, 0.0, 0.1, 0.5, 2.0][rng.random_range(0..5)],
        eta: 0.1,
        mode: DeadlineMode::Aggregate,
    }
}

pub fn random_quality(inst: &TinyInstance, rng: &mut ChaCha8Rng) -> Vec<Vec<QualityLevel>> {
    let l = inst.video.num_layers();
    (0..inst.users())
        .map(|_| {
            (0..inst.video.num_segments)
                .map(|_| QualityLevel(rng.random_range(0..=l)))
                .collect()
        })
        .collect()
}

/// Weights (some zero), peak rates and backlogs (some empty, some below one
/// slot's worth) for an `n`-user fill.
pub fn lp_instance(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let w = (0..n)
        .map(|_| {
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.0..5.0)
            }
        })
        .collect();
    let rho = (0..n).map(|_| rng.random_range(1e5..2e7)).collect();
    let backlog = (0..n)
        .map(|_| match rng.random_range(0..4) {
            0 => 0.0,
            1 => rng.random_range(1.0..2e4),
            _ => rng.random_range(1e3..1e7),
        })
        .collect();
    (w, rho, backlog)
}

/// Optimum over every vertex of the feasible polytope. A vertex has at most
/// one coordinate strictly between its bounds; that one takes whatever
/// capacity the others leave.
pub fn vertex_optimum(w: &[f64], rho: &[f64], cap: &[f64], c: f64) -> f64 {
    let n = w.len();
    let mut best = 0.0f64;
    for code in 0..3usize.pow(n as u32) {
        let mut state = vec![0u8; n];
        let mut x = code;
        for s in state.iter_mut() {
            *s = (x % 3) as u8;
            x /= 3;
        }
        if state.iter().filter(|&&s| s == 2).count() > 1 {
            continue;
        }
        let mut r = vec![0.0; n];
        let mut used = 0.0;
        for i in 0..n {
            if state[i] == 1 {
                r[i] = cap[i];
                used += cap[i] / rho[i];
            }
        }
        if used > c * (1.0 + 1e-12) {
            continue;
        }
        if let Some(f) = state.iter().position(|&s| s == 2) {
            r[f] = ((c - used) * rho[f]).clamp(0.0, cap[f]);
        }
        best = best.max(w.iter().zip(&r).map(|(a, b)| a * b).sum());
    }
    best
}

/// Independent per-slot checks on what the engine exposes: capacity,
/// non-negative virtual buffers, the base buffer bound and the enhancement
/// prefetch bound. Returns the number of violations.
pub fn recheck(cfg: &SessionConfig) -> (SessionResult, u64) {
    let timing = cfg.timing().unwrap();
    let seg = timing.seg_slots as i64;
    let limit = ((cfg.params.buffer_limit_s + cfg.video.segment_duration_s) / cfg.slot_duration_s)
        .round() as i64;
    let mut bad = 0;
    let mut obs = |r: &SlotRecord| {
        if r.alloc.usage(r.rho) > 1.0 + 1e-9
            || r.alloc.base.iter().chain(&r.alloc.enh).any(|&x| x < 0.0)
        {
            bad += 1;
        }
        for c in r.clients {
            if c.vbuf_base < 0.0 || c.vbuf_enh < 0.0 {
                bad += 1;
            }
            let buffered = c.delivered_base as i64 * seg - c.playhead_slots as i64;
            if cfg.model != ServiceModel::Downloading && buffered > limit {
                bad += 1;
            }
            if let (true, Some(l)) = (cfg.model.is_layered(), cfg.params.enh_prefetch_limit_s) {
                let ahead = c.enh_frontier as f64 * cfg.video.segment_duration_s
                    - c.playhead_slots as f64 * cfg.slot_duration_s;
                if ahead > l + cfg.video.segment_duration_s + 1e-9 {
                    bad += 1;
                }
            }
            if c.playhead_slots > c.delivered_base as u64 * timing.seg_slots {
                bad += 1;
            }
        }
    };
    let res = run_observed(cfg, Some(&mut obs)).unwrap();
    (res, bad)
}

/// Oracle objective against RAQUEL on the same trace, with the stall budget
/// set to what RAQUEL actually used. Returns `None` when RAQUEL did not
/// finish inside the trace.
pub fn dominance_gap(inst: &TinyInstance) -> Option<f64> {
    let trace = ChannelTrace::new(inst.peak_rates_bps.clone(), TAU).unwrap();
    let mut cfg = SessionConfig {
        users: inst.users(),
        video: inst.video.clone(),
        channel: ChannelSpec::Constant { rate_bps: 1.0 },
        slot_duration_s: TAU,
        max_stall_factor: 100.0,
        ..SessionConfig::default()
    };
    cfg.params.buffer_limit_s = inst.buffer_limit_s;
    cfg.params.eta = inst.eta;
    let res = run_with_channel(&cfg, &trace, None).unwrap();
    if res.users.iter().any(|m| !m.completed) {
        return None;
    }
    let online: f64 = res.users.iter().map(|m| m.objective).sum();
    let budget = res
        .users
        .iter()
        .map(|m| m.startup_delay_s + m.rebuffer_seconds - SEG)
        .fold(0.0, f64::max);
    let s = inst.video.num_segments as f64;
    let relaxed = TinyInstance {
        beta_bar: budget / (s * SEG) + 1e-9,
        ..inst.clone()
    };
    let sol = oracle::solve(&relaxed)
        .unwrap()
        .expect("RAQUEL's own schedule is feasible");
    Some(sol.objective - online)
}
