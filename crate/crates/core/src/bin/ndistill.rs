//! `ndistill` command line: run, validate, or run a given experiment kind.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ndistill::exp::{parse_config, run, ExperimentConfig, ExperimentKind};
use ndistill::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(
    name = "ndistill",
    version,
    about = "Neighbourhood distillation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by the config.
    Run(Common),
    /// Check a config and print it with defaults filled in.
    Validate(Common),
    /// Train the teacher on the configured dataset.
    TrainTeacher(Common),
    /// Cache teacher activations at every neighbourhood boundary.
    Cache(Common),
    /// Distill student neighbourhoods against the cache.
    Distill(Common),
    /// Distill, then compose the students into one network.
    Compose(Common),
    /// Compose, fine-tune, and train the scratch and KD baselines.
    Finetune(Common),
    /// Sweep activation noise at neighbourhood outputs.
    PerturbSweep(Common),
    /// Calibrate per-layer weight noise and measure accumulated drops.
    WeightAccumulation(Common),
    /// Search per-neighbourhood students under parameter budgets.
    Search(Common),
    /// Distill magnitude-pruned layers and compose them.
    Sparsify(Common),
    /// Distill from Gaussian inputs, with an end-to-end KD baseline.
    Datafree(Common),
    /// Write figure data and timing reports for finished runs.
    Report(Common),
}

/// Reads the config and applies the command-line overrides before parsing,
/// so overridden values are validated like any other.
fn load(common: &Common, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, Vec<String>> {
    let text = match &common.config {
        Some(p) => read(p)?,
        None => String::new(),
    };
    let mut doc: toml::Table =
        toml::from_str(&text).map_err(|e| vec![format!("syntax: {}", e.message())])?;
    if let Some(k) = kind {
        doc.insert("kind".into(), k.name().into());
    }
    if let Some(s) = common.seed {
        let s = i64::try_from(s).map_err(|_| vec![format!("seed: {s} is out of range")])?;
        doc.insert("seed".into(), s.into());
    }
    if let Some(w) = common.workers {
        doc.insert("workers".into(), (w as i64).into());
    }
    if let Some(o) = &common.out {
        doc.insert("out".into(), o.display().to_string().into());
    }
    if !doc.contains_key("kind") {
        return Err(vec![
            "kind: required (in the config or as the command)".into()
        ]);
    }
    parse_config(&toml::to_string(&doc).expect("table serializes"))
}

fn read(p: &Path) -> Result<String, Vec<String>> {
    std::fs::read_to_string(p)
        .map_err(|e| vec![format!("config: cannot read {}: {e}", p.display())])
}

fn report_errors(errors: &[String]) -> ExitCode {
    eprintln!("configuration invalid:");
    for e in errors {
        eprintln!("  {e}");
    }
    ExitCode::from(EXIT_VALIDATION)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (common, kind, validate_only) = match cli.command {
        Command::Run(c) => (c, None, false),
        Command::Validate(c) => (c, None, true),
        Command::TrainTeacher(c) => (c, Some(ExperimentKind::TrainTeacher), false),
        Command::Cache(c) => (c, Some(ExperimentKind::Cache), false),
        Command::Distill(c) => (c, Some(ExperimentKind::Distill), false),
        Command::Compose(c) => (c, Some(ExperimentKind::Compose), false),
        Command::Finetune(c) => (c, Some(ExperimentKind::Finetune), false),
        Command::PerturbSweep(c) => (c, Some(ExperimentKind::PerturbSweep), false),
        Command::WeightAccumulation(c) => (c, Some(ExperimentKind::WeightAccumulation), false),
        Command::Search(c) => (c, Some(ExperimentKind::Search), false),
        Command::Sparsify(c) => (c, Some(ExperimentKind::Sparsify), false),
        Command::Datafree(c) => (c, Some(ExperimentKind::Datafree), false),
        Command::Report(c) => (c, Some(ExperimentKind::Report), false),
    };
    let cfg = match load(&common, kind) {
        Ok(c) => c,
        Err(errors) => return report_errors(&errors),
    };
    if validate_only {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    match run(cfg) {
        Ok(out) => {
            println!("{}", out.display());
            ExitCode::SUCCESS
        }
        Err(Error::Config(errors)) => report_errors(&errors),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
