use std::path::Path;

use streamload::config::ExperimentConfig;
use streamload::experiment::{self, read_aggregate, read_raw, RawRow};

fn small(extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "session": {{
                "video": {{ "num_segments": 20 }},
                "channel": {{ "kind": "synthetic", "mean_rate_bps": 3e6 }}
            }},
            "base_seed": 5
            {extra}
        }}"#
    ))
    .unwrap()
}

fn bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn counting_contract() {
    let cfg = small(r#", "sweep": { "axis": "users", "values": [4, 8, 12] }, "replications": 3"#);
    let out = experiment::run(&cfg).unwrap();
    assert_eq!(out.variants.len(), 1);
    assert_eq!(out.variants[0].raw.len(), 3 * (4 + 8 + 12));
    assert_eq!(out.variants[0].aggregate.len(), 3);
    assert!(out.failures.is_empty());
    assert_eq!(out.violations, 0);
    // Canonical order: sweep value, replication, user.
    let keys: Vec<(usize, usize, usize)> = out.variants[0]
        .raw
        .iter()
        .map(|r| (r.n, r.replication, r.user))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert!(out.variants[0]
        .raw
        .iter()
        .all(|r| r.seed == 5 + r.replication as u64));
}

#[test]
fn rerun_and_thread_count_do_not_change_bytes() {
    let mut cfg =
        small(r#", "sweep": { "axis": "beta_sl", "values": [-0.5, 0, 0.5] }, "replications": 2"#);
    cfg.session.users = 3;
    let runs: Vec<_> = [Some(1), Some(8), Some(1)]
        .into_iter()
        .map(|jobs| {
            let dir = tempfile::tempdir().unwrap();
            let out = experiment::run_with_jobs(&cfg, jobs).unwrap();
            experiment::write(&out, dir.path()).unwrap();
            bytes(dir.path())
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt(),
    )
}

#[test]
fn aggregate_equals_recomputation_from_raw() {
    let cfg = small(
        r#", "variants": [
              { "name": "sl" },
              { "name": "st", "set": { "model": "streaming", "scheduler": "nova", "selector": "nova" } }
            ],
            "sweep": { "axis": "users", "values": [2, 5] }, "replications": 3"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let out = experiment::run(&cfg).unwrap();
    let paths = experiment::write(&out, dir.path()).unwrap();
    assert_eq!(paths.len(), 4);
    for name in ["sl", "st"] {
        let raw = read_raw(&dir.path().join(format!("{name}.raw.csv"))).unwrap();
        let agg = read_aggregate(&dir.path().join(format!("{name}.agg.csv"))).unwrap();
        assert_eq!(agg.len(), 2);
        for a in &agg {
            let rows: Vec<&RawRow> = raw
                .iter()
                .filter(|r| r.sweep_value == a.sweep_value)
                .collect();
            assert_eq!(a.rows, rows.len());
            assert_eq!(a.sessions, 3);
            let col =
                |f: fn(&RawRow) -> f64| mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            let checks = [
                (col(|r| r.objective), (a.objective_mean, a.objective_std)),
                (col(|r| r.mean_q), (a.mean_q_mean, a.mean_q_std)),
                (col(|r| r.rebuf_s), (a.rebuf_s_mean, a.rebuf_s_std)),
                (col(|r| r.rebuf_frac), (a.rebuf_frac_mean, a.rebuf_frac_std)),
                (col(|r| r.losses as f64), (a.losses_mean, a.losses_std)),
            ];
            for (want, got) in checks {
                assert!((want.0 - got.0).abs() <= 1e-12 * want.0.abs().max(1.0));
                assert!((want.1 - got.1).abs() <= 1e-9 * want.1.abs().max(1.0));
            }
        }
        assert!(raw.iter().all(|r| r.model
            == if name == "sl" {
                "streamloading"
            } else {
                "streaming"
            }));
    }
}

#[test]
fn figure_four_bundle_has_three_models() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/fig4_quality.cfg");
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    cfg.session.video.num_segments = 10;
    cfg.replications = 1;
    cfg.sweep.as_mut().unwrap().values = vec![Some(2.0), Some(3.0)];
    let out = experiment::run(&cfg).unwrap();
    let models: Vec<&str> = out
        .variants
        .iter()
        .map(|v| v.raw[0].model.as_str())
        .collect();
    assert_eq!(models, ["streamloading", "streaming", "downloading"]);
    assert!(out.variants.iter().all(|v| v.aggregate.len() == 2));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "cfg") {
            ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert_eq!(n, 6);
}

#[test]
fn failed_sessions_keep_other_rows() {
    let cfg = small(
        r#", "variants": [
              { "name": "ok" },
              { "name": "missing", "set": { "channel": { "kind": "trace", "path": "/nonexistent/trace.csv" } } }
            ]"#,
    );
    let out = experiment::run(&cfg).unwrap();
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.variants[0].raw.len(), 1);
    assert!(out.variants[1].raw.is_empty());
    let dir = tempfile::tempdir().unwrap();
    experiment::write(&out, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("missing.raw.csv")).unwrap();
    assert!(text.starts_with("sweep_value,replication,user,config_hash"));
}
