//! Per-slot peak achievable rates and the linear capacity region
//! `sum_i r_i / rho_i <= 1`.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack allowed on the capacity constraint.
pub const CAPACITY_EPS: f64 = 1e-9;

/// Peak achievable rate for every user and slot, in bits/second.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    peak_rates: Vec<Vec<f64>>,
    slot_duration_s: f64,
}

impl ChannelTrace {
    pub fn new(peak_rates: Vec<Vec<f64>>, slot_duration_s: f64) -> Result<Self> {
        if !(slot_duration_s > 0.0 && slot_duration_s.is_finite()) {
            return Err(Error::Channel("slot duration must be positive".into()));
        }
        let k = peak_rates.first().map_or(0, Vec::len);
        for row in &peak_rates {
            if row.len() != k {
                return Err(Error::Dimension {
                    expected: k,
                    got: row.len(),
                });
            }
            if let Some(bad) = row.iter().find(|&&r| !(r > 0.0 && r.is_finite())) {
                return Err(Error::Channel(format!("non-positive peak rate {bad}")));
            }
        }
        Ok(ChannelTrace {
            peak_rates,
            slot_duration_s,
        })
    }

    /// Constant rate `rate_bps` for every user and slot.
    pub fn constant(
        users: usize,
        slots: usize,
        rate_bps: f64,
        slot_duration_s: f64,
    ) -> Result<Self> {
        Self::new(vec![vec![rate_bps; slots]; users], slot_duration_s)
    }

    pub fn num_users(&self) -> usize {
        self.peak_rates.len()
    }

    pub fn num_slots(&self) -> usize {
        self.peak_rates.first().map_or(0, Vec::len)
    }

    pub fn slot_duration_s(&self) -> f64 {
        self.slot_duration_s
    }

    pub fn rho(&self, user: usize, slot: usize) -> f64 {
        self.peak_rates[user][slot]
    }

    pub fn user(&self, user: usize) -> &[f64] {
        &self.peak_rates[user]
    }

    /// Copies slot `k`'s peak rates into `out`.
    pub fn slot_into(&self, slot: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.peak_rates.iter().map(|row| row[slot]));
    }

    /// Keeps the first `users` users and `slots` slots.
    pub fn truncated(&self, users: usize, slots: usize) -> Result<Self> {
        if users > self.num_users() || slots > self.num_slots() {
            return Err(Error::Dimension {
                expected: self.num_users().max(users),
                got: users,
            });
        }
        Ok(ChannelTrace {
            peak_rates: self.peak_rates[..users]
                .iter()
                .map(|r| r[..slots].to_vec())
                .collect(),
            slot_duration_s: self.slot_duration_s,
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# slots={} slot_s={}",
            self.num_slots(),
            self.slot_duration_s
        );
        for row in &self.peak_rates {
            let line: Vec<String> = row.iter().map(|r| format!("{r}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// Parameters of the synthetic log-AR(1) rate process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceGenParams {
    pub mean_rate_bps: f64,
    /// Per-user means; overrides `mean_rate_bps` when present.
    pub user_mean_rate_bps: Option<Vec<f64>>,
    /// Lag-1 correlation of the log-rate, in `[0, 1)`.
    pub correlation: f64,
    /// Coefficient of variation of the stationary rate distribution.
    pub cv: f64,
    /// Lag-1 correlation of a cell-wide log-AR(1) factor (mean 1) that
    /// multiplies every user's rate.
    pub common_correlation: f64,
    /// Coefficient of variation of the cell-wide factor; 0 disables it.
    pub common_cv: f64,
    pub seed: u64,
}

impl Default for TraceGenParams {
    fn default() -> Self {
        TraceGenParams {
            mean_rate_bps: 2.0e6,
            user_mean_rate_bps: None,
            correlation: 0.98,
            cv: 0.5,
            common_correlation: 0.0,
            common_cv: 0.0,
            seed: 0,
        }
    }
}

impl TraceGenParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.correlation) {
            return Err(Error::Channel("correlation must lie in [0, 1)".into()));
        }
        if !(self.cv >= 0.0 && self.cv.is_finite()) {
            return Err(Error::Channel("cv must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.common_correlation) {
            return Err(Error::Channel(
                "common_correlation must lie in [0, 1)".into(),
            ));
        }
        if !(self.common_cv >= 0.0 && self.common_cv.is_finite()) {
            return Err(Error::Channel("common_cv must be non-negative".into()));
        }
        let means = self
            .user_mean_rate_bps
            .as_deref()
            .unwrap_or(std::slice::from_ref(&self.mean_rate_bps));
        if means.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Channel("mean rate must be positive".into()));
        }
        Ok(())
    }

    fn mean_for(&self, user: usize) -> f64 {
        match &self.user_mean_rate_bps {
            Some(m) => m[user % m.len()],
            None => self.mean_rate_bps,
        }
    }
}

/// Independent per-user log-AR(1) processes:
/// `ln rho_k = mu + phi (ln rho_{k-1} - mu) + sigma eps_k`, with stationary
/// log-normal marginals of the requested mean and coefficient of variation,
/// optionally multiplied by a shared cell-wide factor of the same form, and
/// truncated below at 1% of the user's mean.
pub fn generate_trace(
    params: &TraceGenParams,
    users: usize,
    slots: usize,
    slot_duration_s: f64,
) -> Result<ChannelTrace> {
    let mut gen = SyntheticChannel::new(params, users, slot_duration_s)?;
    let mut rows = vec![Vec::with_capacity(slots); users];
    let mut buf = vec![0.0; users];
    for k in 0..slots {
        gen.fill_slot(k, &mut buf);
        for (row, &r) in rows.iter_mut().zip(&buf) {
            row.push(r);
        }
    }
    ChannelTrace::new(rows, slot_duration_s)
}

/// Source of per-slot peak rates consumed by the simulator, one slot at a
/// time and in increasing slot order.
pub trait ChannelSource {
    fn num_users(&self) -> usize;
    fn slot_duration_s(&self) -> f64;
    /// Number of slots available; `None` for an unbounded source.
    fn num_slots(&self) -> Option<usize>;
    fn fill_slot(&mut self, slot: usize, out: &mut [f64]);
}

impl ChannelSource for &ChannelTrace {
    fn num_users(&self) -> usize {
        ChannelTrace::num_users(self)
    }

    fn slot_duration_s(&self) -> f64 {
        self.slot_duration_s
    }

    fn num_slots(&self) -> Option<usize> {
        Some(ChannelTrace::num_slots(self))
    }

    fn fill_slot(&mut self, slot: usize, out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.peak_rates) {
            *o = row[slot];
        }
    }
}

/// One stationary log-normal AR(1) process.
struct LogAr1 {
    rng: ChaCha8Rng,
    x: f64,
    mu: f64,
    phi: f64,
    innov_sd: f64,
}

impl LogAr1 {
    fn new(mean: f64, cv: f64, phi: f64, seed: u64, stream: u64) -> Self {
        let log_var = (1.0 + cv * cv).ln();
        let log_sd = log_var.sqrt();
        let mu = mean.ln() - 0.5 * log_var;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let x = mu + log_sd * sample_normal(&mut rng);
        LogAr1 {
            rng,
            x,
            mu,
            phi,
            innov_sd: log_sd * (1.0 - phi * phi).sqrt(),
        }
    }

    fn advance(&mut self) {
        self.x =
            self.mu + self.phi * (self.x - self.mu) + self.innov_sd * sample_normal(&mut self.rng);
    }

    fn value(&self) -> f64 {
        self.x.exp()
    }
}

/// Streaming form of [`generate_trace`]; yields the same rates without
/// materialising the whole trace.
pub struct SyntheticChannel {
    users: Vec<(LogAr1, f64)>,
    common: Option<LogAr1>,
    slot_duration_s: f64,
    next_slot: usize,
}

impl SyntheticChannel {
    pub fn new(params: &TraceGenParams, users: usize, slot_duration_s: f64) -> Result<Self> {
        params.validate()?;
        if !(slot_duration_s > 0.0 && slot_duration_s.is_finite()) {
            return Err(Error::Channel("slot duration must be positive".into()));
        }
        let users = (0..users)
            .map(|user| {
                let mean = params.mean_for(user);
                let p = LogAr1::new(
                    mean,
                    params.cv,
                    params.correlation,
                    params.seed,
                    user as u64,
                );
                (p, 0.01 * mean)
            })
            .collect();
        let common = (params.common_cv > 0.0).then(|| {
            LogAr1::new(
                1.0,
                params.common_cv,
                params.common_correlation,
                params.seed,
                u64::MAX,
            )
        });
        Ok(SyntheticChannel {
            users,
            common,
            slot_duration_s,
            next_slot: 0,
        })
    }
}

impl ChannelSource for SyntheticChannel {
    fn num_users(&self) -> usize {
        self.users.len()
    }

    fn slot_duration_s(&self) -> f64 {
        self.slot_duration_s
    }

    fn num_slots(&self) -> Option<usize> {
        None
    }

    fn fill_slot(&mut self, slot: usize, out: &mut [f64]) {
        assert_eq!(
            slot, self.next_slot,
            "synthetic channel must be read in slot order"
        );
        let mut factor = 1.0;
        if let Some(c) = &mut self.common {
            if slot > 0 {
                c.advance();
            }
            factor = c.value();
        }
        for ((p, floor), o) in self.users.iter_mut().zip(out.iter_mut()) {
            if slot > 0 {
                p.advance();
            }
            *o = (p.value() * factor).max(*floor);
        }
        self.next_slot += 1;
    }
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Reads a trace file: a `# slots=<K> slot_s=<tau>` header followed by one
/// comma-separated row of rates (bits/second) per user.
pub fn load_trace(path: impl AsRef<Path>) -> Result<ChannelTrace> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_trace(&text, path)
}

fn parse_trace(text: &str, path: &Path) -> Result<ChannelTrace> {
    let err = |line: usize, msg: String| Error::TraceParse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut slots: Option<usize> = None;
    let mut slot_s: Option<f64> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            for tok in header.split_whitespace() {
                if let Some(v) = tok.strip_prefix("slots=") {
                    slots = Some(v.parse().map_err(|e| err(lineno, format!("slots: {e}")))?);
                } else if let Some(v) = tok.strip_prefix("slot_s=") {
                    slot_s = Some(v.parse().map_err(|e| err(lineno, format!("slot_s: {e}")))?);
                }
            }
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| err(lineno, format!("{t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(bad) = row.iter().find(|&&r| !(r > 0.0 && r.is_finite())) {
            return Err(err(lineno, format!("non-positive rate {bad}")));
        }
        let expected = slots.unwrap_or_else(|| rows.first().map_or(row.len(), Vec::len));
        if row.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: row.len(),
            });
        }
        rows.push(row);
    }
    let slot_s = slot_s.ok_or_else(|| err(1, "missing `slot_s=` header".into()))?;
    if rows.is_empty() {
        return Err(err(1, "no user rows".into()));
    }
    ChannelTrace::new(rows, slot_s)
}

/// Whether per-user rates lie in the slot's capacity region.
pub fn feasible(rates: &[f64], rho: &[f64]) -> Result<bool> {
    Ok(capacity_usage(rates, rho)? <= 1.0 + CAPACITY_EPS)
}

/// `sum_i r_i / rho_i`.
pub fn capacity_usage(rates: &[f64], rho: &[f64]) -> Result<f64> {
    if rates.len() != rho.len() {
        return Err(Error::Dimension {
            expected: rho.len(),
            got: rates.len(),
        });
    }
    Ok(rates.iter().zip(rho).map(|(r, p)| r / p).sum())
}
