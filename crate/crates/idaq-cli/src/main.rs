use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use idaq_lab::harness::{prepare, run_experiment, verify_all, ExperimentConfig, Scale};
use idaq_lab::seed::derive_seed;

#[derive(Parser)]
#[command(name = "idaq", version, about = "Offline meta-RL adaptation experiments on small exact MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect the offline dataset for one seed and write dataset.csv.
    Collect(RunArgs),
    /// Collect and train; writes dataset.csv, meta.txt and ensemble.txt.
    Train(RunArgs),
    /// Run every configured seed and comparator; writes runs.csv and summary.json.
    Adapt(RunArgs),
    /// Run the bound checks; writes bounds.json and fails on deterministic violations.
    Verify {
        #[arg(long, default_value = "small")]
        scale: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print summary.json and bounds.json found in a directory.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Restrict to this one seed (default: every seed in the config; the
    /// first one for collect and train).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `output`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("reading config {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        Ok(cfg)
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn collect_or_train(args: &RunArgs, train: bool) -> Result<()> {
    let cfg = args.load()?;
    let seed = cfg.seeds[0];
    let p = prepare(&cfg, derive_seed(cfg.master_seed, seed))?;
    write(&cfg.output, "dataset.csv", &p.dataset.to_csv_string()?)?;
    if train {
        write(&cfg.output, "meta.txt", &p.meta.to_text())?;
        write(&cfg.output, "ensemble.txt", &p.ensemble.to_text())?;
    }
    println!(
        "{}: {} tasks x {} trajectories (seed {seed})",
        cfg.env,
        p.dataset.num_tasks(),
        p.dataset.trajectories_per_task
    );
    Ok(())
}

fn adapt(args: &RunArgs) -> Result<()> {
    let cfg = args.load()?;
    let summary = run_experiment(&cfg)?;
    println!("{} on {} ({} seeds)", summary.experiment, summary.env, summary.seeds);
    println!("{:<22} {:>8} {:>20} {:>8} {:>20}", "comparator", "return", "95% CI", "success", "95% CI");
    for c in &summary.comparators {
        println!(
            "{:<22} {:>8.3} {:>20} {:>8.3} {:>20}",
            c.comparator.name(),
            c.mean_return,
            format!("[{:.3}, {:.3}]", c.return_ci[0], c.return_ci[1]),
            c.success_rate,
            format!("[{:.3}, {:.3}]", c.success_ci[0], c.success_ci[1]),
        );
    }
    println!("outputs in {}", cfg.output.display());
    Ok(())
}

fn verify(scale: &str, seed: u64, out: &Path) -> Result<ExitCode> {
    let bundle = verify_all(Scale::parse(scale)?, seed)?;
    for c in &bundle.checks {
        let kind = if c.deterministic { "exact" } else { "stat" };
        println!("[{}] {kind:<5} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.check, c.detail);
    }
    write(out, "bounds.json", &bundle.to_json()?)?;
    let failures = bundle.deterministic_failures();
    if failures > 0 {
        eprintln!("{failures} deterministic check(s) failed");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn report(dir: &Path) -> Result<()> {
    let mut found = false;
    for name in ["summary.json", "bounds.json"] {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        found = true;
        let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
        println!("== {}", path.display());
        if let Some(comps) = value.get("comparators").and_then(|c| c.as_array()) {
            for c in comps {
                println!(
                    "{:<22} return {:.3} {}  success {:.3} {}",
                    c["comparator"].as_str().unwrap_or("?"),
                    c["mean_return"].as_f64().unwrap_or(f64::NAN),
                    c["return_ci"],
                    c["success_rate"].as_f64().unwrap_or(f64::NAN),
                    c["success_ci"],
                );
            }
        }
        if let Some(checks) = value.get("checks").and_then(|c| c.as_array()) {
            for c in checks {
                let pass = c["passed"].as_bool().unwrap_or(false);
                println!("[{}] {}: {}", if pass { "PASS" } else { "FAIL" }, c["check"].as_str().unwrap_or("?"), c["detail"].as_str().unwrap_or(""));
            }
        }
    }
    if !found {
        bail!("no summary.json or bounds.json in {}", dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Collect(args) => collect_or_train(args, false).map(|_| ExitCode::SUCCESS),
        Command::Train(args) => collect_or_train(args, true).map(|_| ExitCode::SUCCESS),
        Command::Adapt(args) => adapt(args).map(|_| ExitCode::SUCCESS),
        Command::Verify { scale, seed, out } => verify(scale, *seed, out),
        Command::Report { out } => report(out).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
