use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use streamload::config::ExperimentConfig;
use streamload::oracle::{self, TinyInstance};
use streamload::scheduler::SlotGranularity;
use streamload::{experiment, Error};

#[derive(Parser, Debug)]
#[command(
    name = "streamload",
    version,
    about = "Multi-user layered video streamloading simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Overrides {
    /// Base seed; replication r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    slot_granularity: Option<Granularity>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Granularity {
    Sub,
    Strict,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment and write raw and aggregate CSVs.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the fully resolved configuration without running it.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Solve a tiny instance offline and print the optimum as JSON.
    #[command(hide = true)]
    Oracle { instance: PathBuf },
}

fn load(path: &PathBuf, o: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = o.seed {
        cfg.base_seed = seed;
    }
    if let Some(out) = &o.out {
        cfg.output = out.clone();
    }
    if let Some(g) = o.slot_granularity {
        cfg.session.granularity = match g {
            Granularity::Sub => SlotGranularity::Sub,
            Granularity::Strict => SlotGranularity::Strict,
        };
    }
    if o.jobs == Some(0) {
        return Err(Error::Config("--jobs must be >= 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<ExitCode, Error> {
    let out = experiment::run_with_jobs(cfg, jobs)?;
    let paths = experiment::write(&out, &cfg.output)?;
    for p in &paths {
        println!("{}", p.display());
    }
    for (variant, value, rep, err) in &out.failures {
        eprintln!("session failed: variant={variant} sweep={value} replication={rep}: {err}");
    }
    if out.violations > 0 {
        eprintln!("constraint violations: {}", out.violations);
    }
    Ok(if out.failures.is_empty() && out.violations == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn solve(path: &PathBuf) -> Result<ExitCode, Error> {
    let inst = TinyInstance::load(path)?;
    let json = match oracle::solve(&inst)? {
        Some(sol) => serde_json::json!({
            "feasible": true,
            "objective": sol.objective,
            "quality": sol.quality,
            "base_rate_bps": (0..inst.users())
                .map(|u| (0..inst.slots()).map(|k| sol.schedule.base_rate(u, k)).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
            "enh_rate_bps": (0..inst.users())
                .map(|u| (0..inst.slots()).map(|k| sol.schedule.enh_rate(u, k)).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        }),
        None => serde_json::json!({ "feasible": false }),
    };
    println!("{}", serde_json::to_string_pretty(&json)?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run { config, overrides } => {
            load(config, overrides).and_then(|cfg| run(&cfg, overrides.jobs))
        }
        Command::Validate { config, overrides } => load(config, overrides).and_then(|cfg| {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(ExitCode::SUCCESS)
        }),
        Command::Oracle { instance } => solve(instance),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
