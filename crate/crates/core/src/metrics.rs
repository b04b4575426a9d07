//! Quality-of-experience measures: mean quality, quality variation, the
//! per-user objective and realized re-buffering.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::video::QualityLevel;

pub fn mean_quality(q: &[f64]) -> Result<f64> {
    if q.is_empty() {
        return Err(Error::EmptyQuality);
    }
    Ok(q.iter().sum::<f64>() / q.len() as f64)
}

/// Population standard deviation (divides by `S`).
pub fn quality_variation(q: &[f64]) -> Result<f64> {
    let m = mean_quality(q)?;
    let var = q.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / q.len() as f64;
    Ok(var.sqrt())
}

/// `mean - eta * std`.
pub fn objective(q: &[f64], eta: f64) -> Result<f64> {
    Ok(mean_quality(q)? - eta * quality_variation(q)?)
}

/// Stall time over nominal video duration.
pub fn rebuffer_fraction(rebuffer_slots: u64, playback_slots: u64, tau_slot: f64) -> Result<f64> {
    if playback_slots == 0 || !(tau_slot > 0.0) {
        return Err(Error::ZeroPlayback);
    }
    Ok(rebuffer_slots as f64 / playback_slots as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionMetrics {
    pub user: usize,
    pub quality_log: Vec<QualityLevel>,
    pub mean_quality: f64,
    pub quality_std: f64,
    pub objective: f64,
    pub rebuffer_fraction: f64,
    pub rebuffer_seconds: f64,
    pub startup_delay_s: f64,
    pub segment_losses: usize,
    pub skipped_segments: usize,
    pub overtaken_segments: usize,
    pub wasted_bits: f64,
    pub delivered_bits: f64,
    /// Whether the whole video played out before the slot cap.
    pub completed: bool,
}

impl SessionMetrics {
    /// Builds the metrics of one user from its per-segment levels and
    /// playback counters. `include_startup` folds the startup delay into the
    /// re-buffer figures.
    #[allow(clippy::too_many_arguments)]
    pub fn from_log(
        user: usize,
        quality_log: Vec<QualityLevel>,
        quality_of: &[f64],
        eta: f64,
        rebuffer_slots: u64,
        startup_slots: u64,
        video_slots: u64,
        tau_slot: f64,
        include_startup: bool,
    ) -> Result<Self> {
        let q: Vec<f64> = quality_log.iter().map(|l| quality_of[l.0]).collect();
        let mean = mean_quality(&q)?;
        let std = quality_variation(&q)?;
        let stall = if include_startup {
            rebuffer_slots + startup_slots
        } else {
            rebuffer_slots
        };
        Ok(SessionMetrics {
            user,
            quality_log,
            mean_quality: mean,
            quality_std: std,
            objective: mean - eta * std,
            rebuffer_fraction: rebuffer_fraction(stall, video_slots, tau_slot)?,
            rebuffer_seconds: stall as f64 * tau_slot,
            startup_delay_s: startup_slots as f64 * tau_slot,
            segment_losses: 0,
            skipped_segments: 0,
            overtaken_segments: 0,
            wasted_bits: 0.0,
            delivered_bits: 0.0,
            completed: true,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FleetSummary {
    pub users: usize,
    pub objective_sum: f64,
    pub objective_mean: f64,
    pub mean_quality: f64,
    pub quality_std: f64,
    pub rebuffer_seconds_mean: f64,
    pub rebuffer_fraction_mean: f64,
    pub startup_s_mean: f64,
    pub losses_mean: f64,
    pub skipped_mean: f64,
    pub overtaken_mean: f64,
    pub wasted_bits_mean: f64,
}

pub fn aggregate(metrics: &[SessionMetrics]) -> FleetSummary {
    let n = metrics.len().max(1) as f64;
    let mean_of = |f: fn(&SessionMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    let objective_sum: f64 = metrics.iter().map(|m| m.objective).sum();
    FleetSummary {
        users: metrics.len(),
        objective_sum,
        objective_mean: objective_sum / n,
        mean_quality: mean_of(|m| m.mean_quality),
        quality_std: mean_of(|m| m.quality_std),
        rebuffer_seconds_mean: mean_of(|m| m.rebuffer_seconds),
        rebuffer_fraction_mean: mean_of(|m| m.rebuffer_fraction),
        startup_s_mean: mean_of(|m| m.startup_delay_s),
        losses_mean: mean_of(|m| m.segment_losses as f64),
        skipped_mean: mean_of(|m| m.skipped_segments as f64),
        overtaken_mean: mean_of(|m| m.overtaken_segments as f64),
        wasted_bits_mean: mean_of(|m| m.wasted_bits),
    }
}
