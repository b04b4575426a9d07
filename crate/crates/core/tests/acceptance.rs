//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Runs the shipped figure configs, so it takes a
//! few minutes on a single core.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use streamload::client::{SelectorKind, ServiceModel};
use streamload::config::ExperimentConfig;
use streamload::engine::{combination_allowed, run, ChannelSpec, SessionConfig};
use streamload::experiment::{self, AggregateRow, ExperimentOutput};
use streamload::scheduler::{water_fill, FillScratch, SchedulerKind, SlotGranularity, ZeroKeyRule};
use streamload::video::{QualityLevel, VideoSpec};

use common::{dominance_gap, lp_instance, random_instance, recheck, vertex_optimum, TAU};

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn line(&mut self, n: usize, name: &str, ok: bool, detail: String) {
        println!(
            "[{}] {n:>2} {name}: {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            self.failed.push(n);
        }
    }
}

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn timed(name: &str, cfg: &ExperimentConfig) -> ExperimentOutput {
    let t = Instant::now();
    let out = experiment::run(cfg).unwrap();
    println!(
        "[INFO]    {name}: {} sessions in {:.1}s",
        cfg.jobs().unwrap().len(),
        t.elapsed().as_secs_f64()
    );
    out
}

fn agg<'a>(out: &'a ExperimentOutput, variant: &str) -> &'a [AggregateRow] {
    &out.variants
        .iter()
        .find(|v| v.name == variant)
        .unwrap_or_else(|| panic!("no variant {variant}"))
        .aggregate
}

fn series(rows: &[AggregateRow], f: impl Fn(&AggregateRow) -> f64) -> Vec<f64> {
    rows.iter().map(f).collect()
}

fn fmt(xs: &[f64]) -> String {
    let v: Vec<String> = xs.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", v.join(" "))
}

fn loads(rows: &[AggregateRow]) -> Vec<f64> {
    rows.iter()
        .map(|r| r.sweep_value.parse().unwrap())
        .collect()
}

/// Mean re-buffer seconds per (load, replication).
fn per_seed_rebuffer(out: &ExperimentOutput, variant: &str) -> BTreeMap<(String, usize), f64> {
    let raw = &out.variants.iter().find(|v| v.name == variant).unwrap().raw;
    let mut acc: BTreeMap<(String, usize), (f64, usize)> = BTreeMap::new();
    for r in raw {
        let e = acc
            .entry((r.sweep_value.clone(), r.replication))
            .or_default();
        e.0 += r.rebuf_s;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

/// Index of the peak, and whether the curve is non-decreasing up to it and
/// non-increasing after it (within `rel` of the peak) with the peak inside.
fn unimodal(v: &[f64], rel: f64) -> (bool, usize) {
    let p = (0..v.len())
        .max_by(|&a, &b| v[a].total_cmp(&v[b]).then(b.cmp(&a)))
        .unwrap();
    let tol = rel * v[p].abs();
    let rises = (0..p).all(|i| v[i + 1] >= v[i] - tol);
    let falls = (p..v.len() - 1).all(|i| v[i + 1] <= v[i] + tol);
    (rises && falls && p > 0 && p + 1 < v.len(), p)
}

fn constraint_matrix() -> (usize, u64) {
    let mut sessions = 0;
    let mut bad = 0;
    for m in [
        ServiceModel::Streamloading,
        ServiceModel::Streaming,
        ServiceModel::Downloading,
    ] {
        for s in [
            SchedulerKind::Raquel,
            SchedulerKind::Nova,
            SchedulerKind::Pf1,
            SchedulerKind::Pf2,
        ] {
            for q in [SelectorKind::Quel, SelectorKind::Nova, SelectorKind::Rm] {
                if !combination_allowed(m, s, q) {
                    continue;
                }
                for g in [SlotGranularity::Sub, SlotGranularity::Strict] {
                    for (n, mean) in [(1, 0.8e6), (4, 4e6), (12, 1e7)] {
                        let mut cfg = SessionConfig {
                            model: m,
                            scheduler: s,
                            selector: q,
                            granularity: g,
                            users: n,
                            seed: n as u64,
                            ..SessionConfig::default()
                        };
                        cfg.video.num_segments = 120;
                        if let ChannelSpec::Synthetic(p) = &mut cfg.channel {
                            p.mean_rate_bps = mean;
                        }
                        cfg.params.buffer_limit_s = 10.0;
                        cfg.params.enh_prefetch_limit_s = Some(30.0);
                        let (res, b) = recheck(&cfg);
                        bad += b + res.constraints.total_violations();
                        sessions += 1;
                    }
                }
            }
        }
    }
    (sessions, bad)
}

fn water_fill_check() -> (usize, f64) {
    let mut rng = common::rng(1000);
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for case in 0..1000 {
        let n = 1 + case % 3;
        let (w, rho, backlog) = lp_instance(&mut rng, n);
        let c = rng.random_range(0.0..=1.0);
        let keys: Vec<f64> = w.iter().zip(&rho).map(|(a, b)| a * b).collect();
        let cap: Vec<f64> = backlog.iter().map(|b| b / TAU).collect();
        let opt = vertex_optimum(&w, &rho, &cap, c);
        for rule in [ZeroKeyRule::EqualShare, ZeroKeyRule::MaxRate] {
            let mut out = vec![0.0; n];
            water_fill(
                &keys,
                &rho,
                &backlog,
                TAU,
                c,
                &mut FillScratch::new(rule),
                &mut out,
            );
            let got: f64 = w.iter().zip(&out).map(|(a, b)| a * b).sum();
            let rel = (got - opt).abs() / opt.abs().max(got.abs()).max(1.0);
            worst = worst.max(rel);
            if rel > 1e-6 {
                mismatches += 1;
            }
        }
    }
    (mismatches, worst)
}

fn single(model: ServiceModel, segments: usize, rate_bps: f64, eta: f64) -> SessionConfig {
    let (scheduler, selector) = match model {
        ServiceModel::Streamloading => (SchedulerKind::Raquel, SelectorKind::Quel),
        _ => (SchedulerKind::Nova, SelectorKind::Nova),
    };
    let mut cfg = SessionConfig {
        model,
        scheduler,
        selector,
        video: VideoSpec {
            num_segments: segments,
            ..VideoSpec::default()
        },
        channel: ChannelSpec::Constant { rate_bps },
        max_stall_factor: 3.0,
        ..SessionConfig::default()
    };
    cfg.params.eta = eta;
    cfg
}

/// Returns the failed checks.
fn closed_forms() -> Vec<String> {
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };
    // Channel at half the base rate: segment s lands at 2(s+1) s, playback
    // starts one slot later and each later segment stalls 1 s.
    for (s, beta) in [(10usize, 0.9), (100, 0.99)] {
        let m = &run(&single(ServiceModel::Streamloading, s, 50e3, 0.1))
            .unwrap()
            .users[0];
        check(
            &format!("half-rate beta S={s}"),
            (m.rebuffer_fraction - beta).abs() < 1e-9,
        );
        check(
            &format!("half-rate startup S={s}"),
            (m.startup_delay_s - 2.01).abs() < 1e-9,
        );
    }
    let m = &run(&single(ServiceModel::Streamloading, 100, 50e3, 0.1))
        .unwrap()
        .users[0];
    check(
        "half-rate beta ~ 1",
        (m.rebuffer_fraction - 1.0).abs() <= 0.05,
    );

    // Ample channel: segment 0 plays base-only, the rest at the top level.
    let q = |svc: f64| 8.2 * (1.0 + svc / 50e3).ln();
    let (q0, q5) = (q(100e3), q(100e3 + 1.1 * 1.4e6));
    let m = &run(&single(ServiceModel::Streamloading, 100, 10e6, 0.0))
        .unwrap()
        .users[0];
    let mean = (q0 + 99.0 * q5) / 100.0;
    let std = (0.01f64 * 0.99).sqrt() * (q5 - q0);
    check(
        "ample streamloading levels",
        m.quality_log[0] == QualityLevel(0)
            && m.quality_log[1..].iter().all(|&l| l == QualityLevel(5)),
    );
    check(
        "ample streamloading quality",
        (m.mean_quality - mean).abs() < 1e-9
            && (m.quality_std - std).abs() < 1e-9
            && m.rebuffer_seconds == 0.0,
    );
    // Downloading on a channel above the top representation: every segment
    // at the top level, no stalls.
    let m = &run(&single(ServiceModel::Downloading, 60, 10e6, 0.0))
        .unwrap()
        .users[0];
    check(
        "ample downloading",
        m.quality_log.iter().all(|&l| l == QualityLevel(5))
            && (m.mean_quality - q5).abs() < 1e-9
            && m.rebuffer_fraction == 0.0,
    );
    failed
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                PathBuf::from(p.file_name().unwrap()),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn main() {
    let mut report = Report { failed: Vec::new() };

    let fig4 = config("fig4_quality.cfg");
    let fig6 = config("fig6_prefetch_limit.cfg");
    let fig7 = config("fig7_beta_sl.cfg");
    let fig8 = config("fig8_quality.cfg");

    let mut one = fig4.session.clone();
    one.users = 40;
    one.seed = fig4.base_seed;
    let t = Instant::now();
    run(&one).unwrap();
    let full = t.elapsed().as_secs_f64();
    one.video.num_segments = 120;
    let t = Instant::now();
    run(&one).unwrap();
    let smoke = t.elapsed().as_secs_f64();
    println!("[INFO]    40-user fleet, 20 min video: {full:.2}s (budget 60s); 2 min video: {smoke:.3}s (budget 2s)");

    let out4 = timed("fig4", &fig4);
    let out6 = timed("fig6", &fig6);
    let out7 = timed("fig7", &fig7);
    let out8 = timed("fig8", &fig8);

    // 1
    let (sessions, matrix_bad) = constraint_matrix();
    let exp_bad: u64 = [&out4, &out6, &out7, &out8]
        .iter()
        .map(|o| o.violations)
        .sum();
    let failures: usize = [&out4, &out6, &out7, &out8]
        .iter()
        .map(|o| o.failures.len())
        .sum();
    report.line(
        1,
        "constraint suite",
        matrix_bad == 0 && exp_bad == 0,
        format!(
            "{matrix_bad} violations over {sessions} rechecked sessions, {exp_bad} over the figure runs ({failures} failed sessions)"
        ),
    );

    // 2
    let (mismatches, worst) = water_fill_check();
    report.line(
        2,
        "scheduler LP optimality",
        mismatches == 0,
        format!("{mismatches} of 2000 fills off by >1e-6, worst relative gap {worst:.1e}"),
    );

    // 3
    let mut rng = common::rng(2000);
    let (mut evaluated, mut attempts, mut min_gap) = (0, 0, f64::INFINITY);
    while evaluated < 200 && attempts < 4000 {
        attempts += 1;
        if let Some(gap) = dominance_gap(&random_instance(&mut rng)) {
            min_gap = min_gap.min(gap);
            evaluated += 1;
        }
    }
    report.line(
        3,
        "oracle dominance",
        evaluated == 200 && min_gap >= -1e-9,
        format!("{evaluated} instances, smallest oracle-minus-online gap {min_gap:.3e}"),
    );

    // 4
    let sl = agg(&out4, "streamloading");
    let st = agg(&out4, "streaming");
    let dl = agg(&out4, "downloading");
    let users = loads(sl);
    let (o_sl, o_st, o_dl) = (
        series(sl, |r| r.objective_mean),
        series(st, |r| r.objective_mean),
        series(dl, |r| r.objective_mean),
    );
    let first_below = |o: &[f64]| {
        o.iter()
            .position(|&x| x < 25.0)
            .map_or(f64::INFINITY, |i| users[i])
    };
    let (c_sl, c_st) = (first_below(&o_sl), first_below(&o_st));
    let above = o_sl.iter().zip(&o_st).all(|(a, b)| a >= b);
    let light = o_sl[0] >= 0.95 * o_dl[0];
    let capacity = c_sl >= 1.5 * c_st;
    report.line(
        4,
        "quality vs load",
        above && light && capacity,
        format!(
            "users {users:?}: streamloading {} streaming {} downloading {}; below 25 at {c_sl} vs {c_st} users",
            fmt(&o_sl),
            fmt(&o_st),
            fmt(&o_dl)
        ),
    );

    // 5
    let r_sl = per_seed_rebuffer(&out4, "streamloading");
    let r_st = per_seed_rebuffer(&out4, "streaming");
    let r_dl = per_seed_rebuffer(&out4, "downloading");
    let worse = r_sl
        .iter()
        .filter(|(k, &v)| v > r_st[*k] + 1e-9 || v > r_dl[*k] + 1e-9)
        .count();
    report.line(
        5,
        "re-buffering vs load",
        worse == 0,
        format!(
            "{worse} of {} (load, seed) pairs worse; mean seconds streamloading {} streaming {} downloading {}",
            r_sl.len(),
            fmt(&series(sl, |r| r.rebuf_s_mean)),
            fmt(&series(st, |r| r.rebuf_s_mean)),
            fmt(&series(dl, |r| r.rebuf_s_mean))
        ),
    );

    // 6
    let unl = series(agg(&out6, "unlimited"), |r| r.objective_mean);
    let l150 = series(agg(&out6, "limit_150"), |r| r.objective_mean);
    let l100 = series(agg(&out6, "limit_100"), |r| r.objective_mean);
    let st6 = series(agg(&out6, "streaming"), |r| r.objective_mean);
    let within = unl
        .iter()
        .zip(&l150)
        .all(|(u, l)| (u - l).abs() <= 0.03 * u.abs());
    let over = l100.iter().zip(&st6).all(|(a, b)| a > b);
    report.line(
        6,
        "enhancement prefetch limit",
        within && over,
        format!(
            "users {:?}: unlimited {} limit 150 {} limit 100 {} streaming {}",
            loads(agg(&out6, "unlimited")),
            fmt(&unl),
            fmt(&l150),
            fmt(&l100),
            fmt(&st6)
        ),
    );

    // 7
    let grid = fig7.points();
    let mut peaks = Vec::new();
    let mut shapes = Vec::new();
    for v in &out7.variants {
        let o = series(&v.aggregate, |r| r.objective_mean);
        let (ok, p) = unimodal(&o, 1e-4);
        peaks.push((ok, p));
        shapes.push(format!(
            "{} peak {} {}",
            v.name,
            grid[p].unwrap(),
            if ok { "unimodal" } else { "not unimodal" }
        ));
    }
    let unimodal_loads = peaks.iter().filter(|p| p.0).count();
    let spread =
        peaks.iter().map(|p| p.1).max().unwrap() - peaks.iter().map(|p| p.1).min().unwrap();
    report.line(
        7,
        "beta_sl sensitivity",
        unimodal_loads >= 3 && spread <= 1,
        format!("{}; argmax spread {spread} grid steps", shapes.join(", ")),
    );

    // 8
    let ra = agg(&out8, "ra_quel");
    let pf1q = agg(&out8, "pf1_quel");
    let pf1r = agg(&out8, "pf1_rm");
    let pf2 = agg(&out8, "pf2_quel");
    let q_ra = series(ra, |r| r.mean_q_mean);
    let q_pf2 = series(pf2, |r| r.mean_q_mean);
    let b_ra = series(ra, |r| r.rebuf_frac_mean);
    let b_pf2 = series(pf2, |r| r.rebuf_frac_mean);
    let o_ra = series(ra, |r| r.objective_mean);
    let o_pf1q = series(pf1q, |r| r.objective_mean);
    let o_pf1r = series(pf1r, |r| r.objective_mean);
    let idx = 0..ra.len();
    let quality = idx.clone().all(|i| q_pf2[i] >= q_ra[i]);
    let stalls = idx
        .clone()
        .all(|i| b_pf2[i] > 0.15 && b_ra[i] < 0.25 * b_pf2[i]);
    let order = idx
        .clone()
        .all(|i| o_ra[i] >= o_pf1q[i] && o_pf1q[i] >= o_pf1r[i]);
    report.line(
        8,
        "PF baselines",
        quality && stalls && order,
        format!(
            "users {:?}: quality RA {} PF2 {}; re-buffer fraction RA {} PF2 {}; objective RA {} PF1-QUEL {} PF1-RM {}",
            loads(ra),
            fmt(&q_ra),
            fmt(&q_pf2),
            fmt(&b_ra),
            fmt(&b_pf2),
            fmt(&o_ra),
            fmt(&o_pf1q),
            fmt(&o_pf1r)
        ),
    );

    // 9
    let failed = closed_forms();
    report.line(
        9,
        "closed forms",
        failed.is_empty(),
        if failed.is_empty() {
            "half-rate stall fraction, ample-channel levels and quality exact".into()
        } else {
            format!("mismatch: {}", failed.join(", "))
        },
    );

    // 10
    let mut short = fig4.clone();
    short.session.video.num_segments = 120;
    let runs: Vec<_> = [Some(1), Some(8), Some(1)]
        .into_iter()
        .map(|jobs| {
            let dir = tempfile::tempdir().unwrap();
            let out = experiment::run_with_jobs(&short, jobs).unwrap();
            experiment::write(&out, dir.path()).unwrap();
            dir_bytes(dir.path())
        })
        .collect();
    report.line(
        10,
        "determinism",
        runs[0] == runs[1] && runs[0] == runs[2] && !runs[0].is_empty(),
        format!(
            "{} CSV files identical across --jobs 1, --jobs 8 and a rerun: {}",
            runs[0].len(),
            runs[0] == runs[1] && runs[0] == runs[2]
        ),
    );

    if report.failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: failed {:?}", report.failed);
        std::process::exit(1);
    }
}
