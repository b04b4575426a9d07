//! Layered video model: per-layer rates, SVC overhead and the concave
//! quality-rate mapping shared by every quality selector.
//!
//! Level `l` means "base layer plus the first `l` enhancement layers". The
//! same level index also names the equivalent single-layer (DASH)
//! representation, which carries no SVC overhead but yields the same quality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of enhancement layers delivered on top of the base layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QualityLevel(pub usize);

impl QualityLevel {
    pub const BASE: QualityLevel = QualityLevel(0);

    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for QualityLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Mapping from cumulative (SVC) rate to a quality score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualityMap {
    /// `q(r) = a * ln(1 + r / r0)`.
    Log { a: f64, r0_bps: f64 },
    /// Explicit quality per level, `L + 1` entries.
    Table { values: Vec<f64> },
}

impl Default for QualityMap {
    fn default() -> Self {
        QualityMap::Log {
            a: 8.2,
            r0_bps: 50_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoSpec {
    pub segment_duration_s: f64,
    pub num_segments: usize,
    pub base_rate_bps: f64,
    pub enh_rates_bps: Vec<f64>,
    pub svc_overhead_frac: f64,
    pub quality: QualityMap,
    /// Optional per-segment multiplier on every layer's rate (length `S`).
    /// Quality per level is unaffected.
    pub segment_scale: Option<Vec<f64>>,
}

impl Default for VideoSpec {
    fn default() -> Self {
        VideoSpec {
            segment_duration_s: 1.0,
            num_segments: 1200,
            base_rate_bps: 100_000.0,
            enh_rates_bps: vec![100_000.0, 100_000.0, 300_000.0, 300_000.0, 600_000.0],
            svc_overhead_frac: 0.10,
            quality: QualityMap::default(),
            segment_scale: None,
        }
    }
}

impl VideoSpec {
    /// Number of enhancement layers `L`.
    pub fn num_layers(&self) -> usize {
        self.enh_rates_bps.len()
    }

    pub fn max_level(&self) -> QualityLevel {
        QualityLevel(self.num_layers())
    }

    pub fn levels(&self) -> impl Iterator<Item = QualityLevel> {
        (0..=self.num_layers()).map(QualityLevel)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Video(m.to_string()));
        if !(self.segment_duration_s > 0.0 && self.segment_duration_s.is_finite()) {
            return bad("segment_duration_s must be positive");
        }
        if self.num_segments == 0 {
            return bad("num_segments must be at least 1");
        }
        if !(self.base_rate_bps > 0.0 && self.base_rate_bps.is_finite()) {
            return bad("base_rate_bps must be positive");
        }
        if self
            .enh_rates_bps
            .iter()
            .any(|&r| !(r > 0.0 && r.is_finite()))
        {
            return bad("enhancement rates must be positive");
        }
        if !(self.svc_overhead_frac >= 0.0 && self.svc_overhead_frac.is_finite()) {
            return bad("svc_overhead_frac must be non-negative");
        }
        if let Some(scale) = &self.segment_scale {
            if scale.len() != self.num_segments {
                return Err(Error::Dimension {
                    expected: self.num_segments,
                    got: scale.len(),
                });
            }
            if scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return bad("segment_scale entries must be positive");
            }
        }
        match &self.quality {
            QualityMap::Log { a, r0_bps } => {
                if !(*a > 0.0 && *r0_bps > 0.0) {
                    return bad("log quality map needs a > 0 and r0_bps > 0");
                }
            }
            QualityMap::Table { values } => {
                if values.len() != self.num_layers() + 1 {
                    return Err(Error::Dimension {
                        expected: self.num_layers() + 1,
                        got: values.len(),
                    });
                }
            }
        }
        // Monotone and discretely concave in cumulative rate.
        let ladder = self.ladder();
        let mut prev_slope = f64::INFINITY;
        for l in 1..ladder.quality.len() {
            let dq = ladder.quality[l] - ladder.quality[l - 1];
            if !(dq > 0.0) {
                return bad("quality must be strictly increasing in level");
            }
            let slope = dq / (ladder.svc_rate[l] - ladder.svc_rate[l - 1]);
            if slope > prev_slope * (1.0 + 1e-12) {
                return bad("quality must be concave in cumulative rate");
            }
            prev_slope = slope;
        }
        Ok(())
    }

    fn check_level(&self, level: QualityLevel) -> Result<()> {
        if level.0 > self.num_layers() {
            Err(Error::LevelOutOfRange {
                level: level.0,
                max: self.num_layers(),
            })
        } else {
            Ok(())
        }
    }

    /// Rate of a single layer, including SVC overhead for enhancement layers.
    fn layer_rate(&self, layer: usize) -> f64 {
        if layer == 0 {
            self.base_rate_bps
        } else {
            self.enh_rates_bps[layer - 1] * (1.0 + self.svc_overhead_frac)
        }
    }

    /// SVC rate of base plus `level` enhancement layers, in bits/second.
    pub fn cumulative_rate(&self, level: QualityLevel) -> Result<f64> {
        self.check_level(level)?;
        Ok((0..=level.0).map(|j| self.layer_rate(j)).sum())
    }

    /// Rate of the equivalent single-layer representation (no SVC overhead).
    pub fn representation_rate(&self, level: QualityLevel) -> Result<f64> {
        self.check_level(level)?;
        Ok(self.base_rate_bps + self.enh_rates_bps[..level.0].iter().sum::<f64>())
    }

    /// Bits needed to deliver one layer of one (unscaled) segment.
    pub fn layer_bits(&self, layer_index: usize) -> Result<f64> {
        self.check_level(QualityLevel(layer_index))?;
        Ok(self.layer_rate(layer_index) * self.segment_duration_s)
    }

    pub fn quality(&self, level: QualityLevel) -> Result<f64> {
        self.check_level(level)?;
        Ok(match &self.quality {
            QualityMap::Log { a, r0_bps } => a * (1.0 + self.cumulative_rate(level)? / r0_bps).ln(),
            QualityMap::Table { values } => values[level.0],
        })
    }

    pub fn segment_scale(&self, segment: usize) -> f64 {
        self.segment_scale
            .as_ref()
            .map_or(1.0, |s| s.get(segment).copied().unwrap_or(1.0))
    }

    /// Precomputed per-level tables. Panics on an out-of-range table map, so
    /// call [`VideoSpec::validate`] first for untrusted input.
    pub fn ladder(&self) -> Ladder {
        let levels = self.num_layers() + 1;
        let mut layer_bits = Vec::with_capacity(levels);
        let mut svc_rate = Vec::with_capacity(levels);
        let mut dash_rate = Vec::with_capacity(levels);
        let mut quality = Vec::with_capacity(levels);
        let mut svc = 0.0;
        let mut dash = 0.0;
        for l in 0..levels {
            svc += self.layer_rate(l);
            dash += if l == 0 {
                self.base_rate_bps
            } else {
                self.enh_rates_bps[l - 1]
            };
            layer_bits.push(self.layer_rate(l) * self.segment_duration_s);
            svc_rate.push(svc);
            dash_rate.push(dash);
            quality.push(match &self.quality {
                QualityMap::Log { a, r0_bps } => a * (1.0 + svc / r0_bps).ln(),
                QualityMap::Table { values } => values[l],
            });
        }
        Ladder {
            layer_bits,
            svc_rate,
            dash_rate,
            quality,
        }
    }
}

/// Per-level lookup tables derived from a [`VideoSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Ladder {
    pub layer_bits: Vec<f64>,
    /// Cumulative SVC rate per level.
    pub svc_rate: Vec<f64>,
    /// Single-layer representation rate per level.
    pub dash_rate: Vec<f64>,
    pub quality: Vec<f64>,
}

impl Ladder {
    pub fn max_level(&self) -> QualityLevel {
        QualityLevel(self.quality.len() - 1)
    }

    /// Bits of the enhancement bundle carrying layers `1..=level`.
    pub fn enhancement_bits(&self, level: QualityLevel) -> f64 {
        self.layer_bits[1..=level.0].iter().sum()
    }
}
