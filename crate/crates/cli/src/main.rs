use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use memqa::pipeline::{Ablation, RunConfig, Step, Workspace};
use memqa::resolvers::Method;

#[derive(Parser)]
#[command(name = "memqa", version, about = "Synthetic memory QA benchmark pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Run config (JSON). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated method names, overriding the config.
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate cohorts.
    Generate(CommonArgs),
    /// Compute ground-truth labels.
    Label(CommonArgs),
    /// Read out (or replay) atom bundles.
    Readout(CommonArgs),
    /// Render memory documents.
    Render(CommonArgs),
    /// Fit resolvers on the train split.
    Fit(CommonArgs),
    /// Calibrate skip policies on the calibration split.
    Calibrate(CommonArgs),
    /// Predict the test split and score it.
    Evaluate(CommonArgs),
    /// Run an ablation: noise, dgp-grid, train-curve, transfer or all.
    Ablate {
        kind: String,
        #[command(flatten)]
        common: Common,
    },
    /// Assemble report.json and report.md.
    Report(CommonArgs),
    /// Run the whole pipeline, or a single step with --only.
    Run {
        #[arg(long)]
        only: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct CommonArgs {
    #[command(flatten)]
    common: Common,
}

fn workspace(c: &Common) -> anyhow::Result<Workspace> {
    if c.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(c.jobs)
            .build_global()
            .context("configuring worker pool")?;
    }
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = &c.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(ms) = &c.methods {
        cfg.methods = ms.iter().map(|m| Method::parse(m.trim())).collect::<Result<_, _>>()?;
    }
    Ok(Workspace::open(&c.out, cfg)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (common, step) = match &cli.cmd {
        Cmd::Generate(a) => (&a.common, Some(Step::Generate)),
        Cmd::Label(a) => (&a.common, Some(Step::Label)),
        Cmd::Readout(a) => (&a.common, Some(Step::Readout)),
        Cmd::Render(a) => (&a.common, Some(Step::Render)),
        Cmd::Fit(a) => (&a.common, Some(Step::Fit)),
        Cmd::Calibrate(a) => (&a.common, Some(Step::Calibrate)),
        Cmd::Evaluate(a) => (&a.common, Some(Step::Evaluate)),
        Cmd::Report(a) => (&a.common, Some(Step::Report)),
        Cmd::Ablate { common, .. } => (common, None),
        Cmd::Run { common, only } => (common, only.as_deref().map(Step::parse).transpose()?),
    };
    let ws = workspace(common)?;
    match &cli.cmd {
        Cmd::Ablate { kind, .. } => {
            let which = if kind == "all" {
                Ablation::ALL.to_vec()
            } else {
                vec![Ablation::parse(kind)?]
            };
            ws.ablate(&which)?;
        }
        Cmd::Run { .. } => ws.run(step)?,
        _ => ws.run(step)?,
    }
    println!("{}", ws.results_dir().display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .downcast_ref::<memqa::Error>()
                .is_some_and(|e| e.is_validation());
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}
