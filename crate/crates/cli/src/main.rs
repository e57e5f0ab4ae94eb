//! mobagent: stage-by-stage runner for agentic next-location prediction.
//!
//! Every stage reads its inputs from the run directory, so stages can be re-run
//! individually. `--config` is needed only the first time a directory is used;
//! afterwards the snapshot in `<run-dir>/config.toml` is reused.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mobagent_core::experiment::{run_ablation, ExperimentConfig, Pipeline, Sweep};
use mobagent_core::transfer::{export_artifact, TransferArtifact, TransferRun};
use mobagent_core::{canonical, rundir, toy};

#[derive(Parser)]
#[command(name = "mobagent", version, about = "Agentic next-location prediction experiments")]
struct Cli {
    /// More log output (repeatable). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run directory.
    #[arg(long)]
    run_dir: PathBuf,
    /// Experiment config (TOML). Defaults to the run directory's snapshot.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set optimize.iterations=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransferMode {
    /// Apply the artifact's weights and feature set to another city.
    City,
    /// Predict with a different model using the artifact's plan; no optimization calls.
    Model,
    /// Swap artifact users for held-out users and optimize only the newcomers.
    Users,
}

#[derive(Subcommand)]
enum Command {
    /// Parse check-ins, sessionize, filter and split.
    Ingest(RunArgs),
    /// Build the standard feature pool.
    Features(RunArgs),
    /// Grouping and iterative feature optimization.
    Optimize(RunArgs),
    /// Predict the test samples.
    Predict(RunArgs),
    /// Score predictions.
    Eval(RunArgs),
    /// Render the metrics table with published reference rows.
    Report(RunArgs),
    /// All stages in order.
    Run(RunArgs),
    /// Write the transfer artifact of a finished run.
    Export {
        #[arg(long)]
        run_dir: PathBuf,
        /// Where to write the artifact (default `<run-dir>/artifact.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a transfer artifact on a target city or model.
    Transfer {
        #[arg(long)]
        artifact: PathBuf,
        /// Config of the target city.
        #[arg(long)]
        target_city: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value = "city")]
        mode: TransferMode,
        /// Student model id (model mode). Defaults to `transfer.student_model`.
        #[arg(long)]
        student: Option<String>,
        /// Users to replace (users mode). Defaults to `transfer.replace_users`.
        #[arg(long)]
        replace_n: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
        overrides: Vec<(String, String)>,
    },
    /// Run one config per ablation setting and tabulate the results.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sweep: Sweep,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
        overrides: Vec<(String, String)>,
    },
    /// Regenerate the synthetic toy corpus, configs and mock rules.
    ToyData {
        #[arg(long)]
        out: PathBuf,
        /// Also run the four toy pipelines and write the pinned metrics file.
        #[arg(long)]
        pin: bool,
    },
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(format!("expected KEY=VALUE, got `{s}`")),
    }
}

fn pipeline(args: &RunArgs) -> anyhow::Result<Pipeline> {
    Ok(match &args.config {
        Some(path) => Pipeline::open(ExperimentConfig::load(path, &args.overrides)?, &args.run_dir)?,
        None => Pipeline::reopen(&args.run_dir, &args.overrides)?,
    })
}

fn print_metrics(dir: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(dir.join(rundir::METRICS)).context("reading metrics")?;
    print!("{text}");
    Ok(())
}

fn print_transfer(run: &TransferRun) {
    let m = &run.metrics;
    println!(
        "{:?} transfer {} -> {}: Acc@1={:.3} Acc@5={:.3} NDCG@5={:.3} (n={})",
        run.metadata.kind,
        run.metadata.source_cities.join("+"),
        run.metadata.target_city,
        m.acc1,
        m.acc5,
        m.ndcg5,
        m.n_samples
    );
    if !run.unavailable_features.is_empty() {
        println!("unavailable in target: {}", run.unavailable_features.join(", "));
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => {
            let r = pipeline(&a)?.ingest()?;
            println!("{}", canonical::to_canonical_pretty(&r)?.trim_end());
        }
        Command::Features(a) => {
            let n = pipeline(&a)?.features()?;
            println!("computed features for {n} samples");
        }
        Command::Optimize(a) => {
            let s = pipeline(&a)?.optimize()?;
            println!(
                "best J {:.6} at iteration {}; {} group(s); selected: {}",
                s.city_best_j,
                s.city_best_iteration,
                s.groups,
                s.selected.join(", ")
            );
        }
        Command::Predict(a) => {
            let n = pipeline(&a)?.predict()?;
            println!("predicted {n} samples");
        }
        Command::Eval(a) => {
            pipeline(&a)?.eval()?;
            print_metrics(&a.run_dir)?;
        }
        Command::Report(a) => print!("{}", pipeline(&a)?.report()?.table),
        Command::Run(a) => {
            let p = pipeline(&a)?;
            p.run()?;
            print!("{}", std::fs::read_to_string(p.dir.path(rundir::REPORT_TXT))?);
        }
        Command::Export { run_dir, out } => {
            let artifact = export_artifact(&rundir::RunDir::new(&run_dir))?;
            if let Some(out) = out {
                artifact.save(&out)?;
                println!("wrote {}", out.display());
            } else {
                println!("wrote {}", run_dir.join(rundir::ARTIFACT).display());
            }
        }
        Command::Transfer {
            artifact,
            target_city,
            run_dir,
            mode,
            student,
            replace_n,
            overrides,
        } => {
            let art = TransferArtifact::load(&artifact)?;
            let cfg = ExperimentConfig::load(&target_city, &overrides)?;
            let p = Pipeline::open(cfg, &run_dir)?;
            let run = match mode {
                TransferMode::City => p.transfer_city(&art)?,
                TransferMode::Model => {
                    let Some(student) = student.or_else(|| p.cfg.transfer.student_model.clone()) else {
                        bail!("model transfer needs --student or transfer.student_model");
                    };
                    p.transfer_model(&art, &student)?
                }
                TransferMode::Users => {
                    let n = replace_n.unwrap_or(p.cfg.transfer.replace_users);
                    p.transfer_users(&art, n)?
                }
            };
            print_transfer(&run);
        }
        Command::Ablate {
            config,
            sweep,
            out,
            overrides,
        } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            run_ablation(&cfg, sweep, &out, None)?;
            print!("{}", std::fs::read_to_string(out.join("ablation.txt"))?);
        }
        Command::ToyData { out, pin } => {
            toy::write_toy_data(&out)?;
            println!("wrote toy corpus to {}", out.display());
            if pin {
                let work = tempfile::tempdir()?;
                let metrics = toy::run_toy_pipelines(&out, work.path(), None)?;
                canonical::write_atomic(&out.join(toy::EXPECTED_METRICS), &metrics)?;
                println!("pinned {}", out.join(toy::EXPECTED_METRICS).display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
