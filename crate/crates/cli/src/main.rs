use std::path::PathBuf;
use std::process::ExitCode;

use advdiff::commands::{cmd_generate, cmd_probe, cmd_sweep, cmd_train, ExperimentConfig};
use advdiff::experiment::ModelKind;
use advdiff::synthetic::ShiftKind;
use advdiff::Error;
use clap::{Args, Parser, Subcommand};

/// Advective-diffusion graph Transformer experiments on synthetic
/// topological-shift suites.
#[derive(Parser, Debug)]
#[command(name = "advdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate shift suites (manifest, graphs, features, labels).
    Generate(Common),
    /// Train one model on a suite; writes fit.json and checkpoint.json.
    Train(Common),
    /// Train every model on every shift kind; writes sweep.csv and SVG charts.
    Sweep(Common),
    /// Measure representation change under random edge flips; writes probe.csv.
    Probe(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suite generation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Node count per graph.
    #[arg(long)]
    nodes: Option<usize>,
    /// Independent model initializations per sweep cell.
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated model names for sweep and probe.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Model trained by `train`.
    #[arg(long)]
    model: Option<String>,
    /// Shift kind, or `all`.
    #[arg(long)]
    shift: Option<String>,
    /// Read suites from a `generate` output directory instead of generating.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Accept theta <= beta for the linear-system variant.
    #[arg(long)]
    allow_unstable_theta: bool,
}

fn resolve(common: &Common, is_train_or_probe: bool) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.suite.seed = seed;
    }
    if let Some(n) = common.nodes {
        cfg.suite.n = Some(n);
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    if let Some(epochs) = common.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(dir) = &common.suite {
        cfg.suite.dir = Some(dir.clone());
    }
    if let Some(shift) = &common.shift {
        if shift == "all" {
            if is_train_or_probe {
                return Err(Error::Config("train and probe take a single shift kind".into()));
            }
            cfg.shifts = ShiftKind::ALL.to_vec();
        } else {
            let kind: ShiftKind = shift.parse()?;
            cfg.suite.kind = kind;
            cfg.shifts = vec![kind];
        }
    }
    if let Some(names) = &common.models {
        let kinds = names
            .iter()
            .map(|n| n.trim().parse::<ModelKind>())
            .collect::<Result<Vec<_>, _>>()?;
        cfg.select_models(&kinds);
    }
    if let Some(name) = &common.model {
        let kind: ModelKind = name.parse()?;
        if cfg.model.kind != kind {
            cfg.model = cfg
                .models
                .iter()
                .find(|m| m.kind == kind)
                .cloned()
                .unwrap_or_else(|| advdiff::experiment::ModelSpec::new(kind));
        }
    }
    if common.allow_unstable_theta {
        cfg.set_allow_unstable_theta();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// 1 for input and configuration problems, 2 for failures during compute or IO.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::Format(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::Graph(_)
        | Error::Alignment { .. } => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = resolve(&common, false)?;
            for s in cmd_generate(&cfg)? {
                println!("{}: {}", s.kind, s.dir.display());
            }
        }
        Command::Train(common) => {
            let cfg = resolve(&common, true)?;
            let report = cmd_train(&cfg)?;
            let fit = &report.fit;
            println!(
                "{} on {}: best epoch {}, valid rmse {:.6}",
                fit.model.kind, fit.suite.kind, fit.best_epoch, fit.best_valid
            );
            for m in &fit.test_metrics {
                println!("graph {:2}  gap {:.4}  rmse {:.6}", m.graph, m.adjacency_gap, m.rmse);
            }
            println!("wrote {}", cfg.out_dir.join("fit.json").display());
        }
        Command::Sweep(common) => {
            let cfg = resolve(&common, false)?;
            let out = cmd_sweep(&cfg)?;
            let failures = out.rows.iter().filter(|r| r.rmse.is_none()).count();
            println!("{} rows ({} failed) -> {}", out.rows.len(), failures, out.csv.display());
            for chart in &out.charts {
                println!("chart: {}", chart.display());
            }
        }
        Command::Probe(common) => {
            let cfg = resolve(&common, true)?;
            let (rows, path) = cmd_probe(&cfg)?;
            println!("{} rows -> {}", rows.len(), path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
