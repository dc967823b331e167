//! `rcsim`: run single points, sweeps, scaling checks and replays.
//!
//! Exits 3 when any run violated safety, 1 on errors, 0 otherwise.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use reducecatch::harness::{
    read_results, replay, run_matrix, scaling_check, write_results, ExperimentConfig, OutputFormat,
    ResultsFile, ScalingReport,
};

#[derive(Parser)]
#[command(name = "rcsim", version, about = "Slotted wireless BFT consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of a config with exactly one sweep point.
    Run(Common),
    /// Run the full protocol x mechanism x alpha x trial sweep.
    Matrix(Common),
    /// Measure pattern cost against the complexity orders.
    Scaling(Common),
    /// Re-run one row of a results file and compare.
    Replay {
        results: PathBuf,
        row: usize,
    },
}

#[derive(Args)]
struct Common {
    /// JSON or TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

impl Common {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summary(results: &ResultsFile) {
    println!(
        "{:<14} {:<13} {:>5} {:>6} {:>12} {:>10} {:>8} {:>6}",
        "protocol", "mechanism", "alpha", "trials", "latency", "tpm", "vc", "capped"
    );
    for s in results.summaries() {
        println!(
            "{:<14} {:<13} {:>5.2} {:>6} {:>7.1}±{:<4.1} {:>10.3} {:>8.2} {:>6}",
            s.protocol.label(),
            s.mechanism.label(),
            s.alpha,
            s.trials,
            s.latency_mean,
            s.latency_stderr,
            s.tpm_mean,
            s.view_changes_mean,
            s.budget_exceeded
        );
    }
}

fn finish(results: &ResultsFile, common: &Common) -> anyhow::Result<ExitCode> {
    let path = write_results(results, &common.out, common.format)?;
    print_summary(results);
    println!("wrote {}", path.display());
    let violations = results.safety_violations();
    if violations > 0 {
        eprintln!("safety violated {violations} times");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ScalingRow<'a> {
    mechanism: &'a str,
    pattern: &'a str,
    alpha: f64,
    nodes: u32,
    ntx: u32,
    mean_frames: f64,
    mean_slots: f64,
    frame_constant: f64,
    slot_constant: f64,
    failures: u32,
    constancy_ratio: f64,
}

fn write_scaling(reports: &[ScalingReport], dir: &Path, format: OutputFormat) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    match format {
        OutputFormat::Json => {
            let path = dir.join("scaling.json");
            std::fs::write(&path, serde_json::to_string_pretty(reports)? + "\n")?;
            Ok(path)
        }
        OutputFormat::Csv => {
            let path = dir.join("scaling.csv");
            let mut w = csv::Writer::from_path(&path)?;
            for r in reports {
                for p in &r.points {
                    w.serialize(ScalingRow {
                        mechanism: r.mechanism.label(),
                        pattern: r.pattern.label(),
                        alpha: r.alpha,
                        nodes: p.nodes,
                        ntx: p.ntx,
                        mean_frames: p.mean_frames,
                        mean_slots: p.mean_slots,
                        frame_constant: p.frame_constant,
                        slot_constant: p.slot_constant,
                        failures: p.failures,
                        constancy_ratio: r.constancy_ratio,
                    })?;
                }
            }
            w.flush()?;
            Ok(path)
        }
    }
}

fn scaling(common: &Common) -> anyhow::Result<ExitCode> {
    let cfg = common.config()?;
    let spec = &cfg.scaling;
    let mut reports = Vec::new();
    for &m in &spec.mechanisms {
        for &p in &spec.patterns {
            reports.push(scaling_check(m, p, &spec.nodes, spec.alpha, spec.trials, cfg.master_seed));
        }
    }
    for r in &reports {
        println!(
            "{:<13} {:<7} order {:<14} ratio {:>6.3}",
            r.mechanism.label(),
            r.pattern.label(),
            r.message_order,
            r.constancy_ratio
        );
    }
    let path = write_scaling(&reports, &common.out, common.format)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.config()?;
            if cfg.points().len() != 1 {
                bail!(
                    "`run` takes a config with one protocol, mechanism and alpha; this one has {} points, use `matrix`",
                    cfg.points().len()
                );
            }
            let results = run_matrix(&cfg, common.workers)?;
            finish(&results, &common)
        }
        Command::Matrix(common) => {
            let results = run_matrix(&common.config()?, common.workers)?;
            finish(&results, &common)
        }
        Command::Scaling(common) => scaling(&common),
        Command::Replay { results, row } => {
            let file = read_results(&results)?;
            let out = replay(&results, row)?;
            println!("{}", serde_json::to_string(&out.regenerated)?);
            if !out.identical {
                bail!("row {row} did not replay identically:\n  was {}\n  now {}",
                    serde_json::to_string(&out.original)?,
                    serde_json::to_string(&out.regenerated)?);
            }
            println!("row {row} of {} replays identically (config {})", results.display(), file.config_hash);
            if out.regenerated.safety_violations + out.regenerated.invalid_global_entries > 0 {
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
