//! The `generate`, `train`, `sweep` and `probe` commands behind the CLI.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::experiment::{
    fit, fit_prepared, represent, suite_gaps, FitResult, GraphContext, ModelKind, ModelSpec, PreparedSuite,
};
use crate::graph::{adjacency_gap, perturb_edges, spectral_norm, NormMode, SPECTRAL_MAX_ITER, SPECTRAL_TOL};
use crate::io::{self, format_json, write_text, Checkpoint, SweepRow};
use crate::model::ModelParams;
use crate::report::{aggregate, render_svg};
use crate::synthetic::{derive_seed, make_suite, ShiftKind, ShiftSuite, DEFAULT_NODES};
use crate::training::TrainConfig;

pub const CONFIG_FORMAT: &str = "advdiff-config/1";
pub const PROBE_FORMAT: &str = "advdiff-probe/1";
pub const SWEEP_FORMAT: &str = "advdiff-sweep/1";
/// Node count used by `sweep` when none is configured.
pub const DEFAULT_SWEEP_NODES: usize = 300;
pub const THREADS_ENV: &str = "ADVDIFF_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub kind: ShiftKind,
    pub seed: u64,
    /// Falls back to the per-command default when unset.
    pub n: Option<usize>,
    /// Directory produced by `generate`, holding one subdirectory per kind.
    pub dir: Option<PathBuf>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            kind: ShiftKind::Homophily,
            seed: 0,
            n: None,
            dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub flip_counts: Vec<usize>,
    pub seeds: usize,
    /// Seed of the shared random parameters.
    pub param_seed: u64,
    /// Optional trained parameters, used for the matching model only.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        let mut flip_counts = vec![0];
        flip_counts.extend((0..=8).map(|k| 1usize << k));
        ProbeConfig {
            flip_counts,
            seeds: 5,
            param_seed: 0,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub format: String,
    pub suite: SuiteConfig,
    /// Shift kinds covered by `generate` and `sweep`.
    pub shifts: Vec<ShiftKind>,
    /// Model used by `train`.
    pub model: ModelSpec,
    /// Models compared by `sweep` and `probe`.
    pub models: Vec<ModelSpec>,
    pub train: TrainConfig,
    pub trials: usize,
    pub probe: ProbeConfig,
    pub out_dir: PathBuf,
}

/// Sweep and probe hyperparameters for every model kind.
pub fn default_models() -> Vec<ModelSpec> {
    ModelKind::ALL.into_iter().map(ModelSpec::new).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            format: CONFIG_FORMAT.to_string(),
            suite: SuiteConfig::default(),
            shifts: ShiftKind::ALL.to_vec(),
            model: ModelSpec::new(ModelKind::AdvdifformerS),
            models: default_models(),
            train: TrainConfig::default(),
            trials: 5,
            probe: ProbeConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        if cfg.format != CONFIG_FORMAT {
            return Err(Error::Format(format!("unsupported config format {:?}", cfg.format)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&io::read_text(path)?)
    }

    pub fn nodes_or(&self, fallback: usize) -> usize {
        self.suite.n.unwrap_or(fallback)
    }

    /// Checks every numeric range used by any command.
    pub fn validate(&self) -> Result<()> {
        if self.suite.n == Some(0) {
            return Err(Error::config("node count must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.shifts.is_empty() {
            return Err(Error::config("at least one shift kind is required"));
        }
        if self.models.is_empty() {
            return Err(Error::config("at least one model is required"));
        }
        self.train.validate()?;
        self.model.validate()?;
        for m in &self.models {
            m.validate()?;
        }
        if self.probe.seeds == 0 {
            return Err(Error::config("probe needs at least one perturbation seed"));
        }
        Ok(())
    }

    /// Keeps only the named models, adding defaults for kinds not configured.
    pub fn select_models(&mut self, kinds: &[ModelKind]) {
        let mut chosen = Vec::with_capacity(kinds.len());
        for &k in kinds {
            let spec = self
                .models
                .iter()
                .find(|m| m.kind == k)
                .cloned()
                .unwrap_or_else(|| ModelSpec::new(k));
            chosen.push(spec);
        }
        self.models = chosen;
    }

    pub fn set_allow_unstable_theta(&mut self) {
        self.model.allow_unstable_theta = true;
        for m in &mut self.models {
            m.allow_unstable_theta = true;
        }
    }
}

/// Thread pool capped by `ADVDIFF_THREADS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let threads: usize = value
            .trim()
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| Error::config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
        builder = builder.num_threads(threads);
    }
    builder
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))
}

/// Loads the suite of `kind` from the configured directory or generates it.
pub fn load_suite(cfg: &ExperimentConfig, kind: ShiftKind, default_nodes: usize) -> Result<ShiftSuite> {
    match &cfg.suite.dir {
        Some(dir) => {
            let suite = io::read_suite(&dir.join(kind.name()))?;
            if suite.kind != kind {
                return Err(Error::Format(format!(
                    "suite in {} is a {} suite",
                    dir.display(),
                    suite.kind
                )));
            }
            Ok(suite)
        }
        None => make_suite(kind, cfg.nodes_or(default_nodes), cfg.suite.seed),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GenerateSummary {
    pub kind: ShiftKind,
    pub dir: PathBuf,
    pub manifest: io::Manifest,
}

/// Writes one suite per configured shift kind under `out_dir/<kind>/`.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<GenerateSummary>> {
    cfg.validate()?;
    let n = cfg.nodes_or(DEFAULT_NODES);
    cfg.shifts
        .iter()
        .map(|&kind| {
            let suite = make_suite(kind, n, cfg.suite.seed)?;
            let dir = cfg.out_dir.join(kind.name());
            let manifest = io::write_suite(&dir, &suite)?;
            log::info!("wrote {kind} suite ({n} nodes) to {}", dir.display());
            Ok(GenerateSummary { kind, dir, manifest })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: ExperimentConfig,
    pub fit: FitResult,
}

/// Fits `cfg.model` on the `cfg.suite.kind` suite; writes `fit.json` and
/// `checkpoint.json` into `out_dir`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let suite = load_suite(cfg, cfg.suite.kind, DEFAULT_NODES)?;
    let result = fit(&cfg.model, &suite, &cfg.train)?;
    let report = TrainReport {
        config: cfg.clone(),
        fit: result,
    };
    write_text(&cfg.out_dir.join("fit.json"), &format_json(&report)?)?;
    let checkpoint = Checkpoint::new(&cfg.model, &report.fit.params);
    write_text(&cfg.out_dir.join("checkpoint.json"), &format_json(&checkpoint)?)?;
    Ok(report)
}

/// Seed of trial `t` for model initialization.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    base + trial as u64
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepMeta {
    pub format: String,
    pub config: ExperimentConfig,
    pub nodes: usize,
    pub rows: usize,
    pub failures: usize,
}

pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub csv: PathBuf,
    pub charts: Vec<PathBuf>,
}

fn sweep_rows_for(
    spec: &ModelSpec,
    prepared: &Result<PreparedSuite>,
    suite: &ShiftSuite,
    gaps: &[f64],
    tc: &TrainConfig,
) -> Vec<SweepRow> {
    let outcome = match prepared {
        Ok(p) => fit_prepared(p, suite, gaps, tc),
        Err(e) => Err(Error::config(e.to_string())),
    };
    let row = |graph: usize, rmse: Option<f64>, status: String| SweepRow {
        model: spec.kind.name().to_string(),
        shift: suite.kind,
        seed: tc.seed,
        graph,
        adjacency_gap: gaps[graph - 1],
        rmse,
        status,
    };
    match outcome {
        Ok(fit) => fit
            .test_metrics
            .iter()
            .map(|m| row(m.graph, Some(m.rmse), "ok".to_string()))
            .collect(),
        Err(e) => {
            log::warn!("{} on {} (seed {}) failed: {e}", spec.kind, suite.kind, tc.seed);
            suite.test_indices().map(|i| row(i, None, e.to_string())).collect()
        }
    }
}

/// Runs every (model, shift, trial) cell; failures become rows with a status.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let pool = worker_pool()?;
    let mut rows = Vec::new();
    for &kind in &cfg.shifts {
        let suite = load_suite(cfg, kind, DEFAULT_SWEEP_NODES)?;
        let gaps = suite_gaps(&suite)?;
        let prepared: Vec<Result<PreparedSuite>> = pool.install(|| {
            cfg.models
                .par_iter()
                .map(|spec| PreparedSuite::new(spec, &suite))
                .collect()
        });
        let jobs: Vec<(usize, usize)> = (0..cfg.models.len())
            .flat_map(|m| (0..cfg.trials).map(move |t| (m, t)))
            .collect();
        let cells: Vec<Vec<SweepRow>> = pool.install(|| {
            jobs.par_iter()
                .map(|&(m, t)| {
                    let tc = TrainConfig {
                        seed: trial_seed(cfg.train.seed, t),
                        ..cfg.train.clone()
                    };
                    sweep_rows_for(&cfg.models[m], &prepared[m], &suite, &gaps, &tc)
                })
                .collect()
        });
        rows.extend(cells.into_iter().flatten());
        log::info!("finished {kind} sweep");
    }
    Ok(rows)
}

/// Sweep plus `sweep.csv`, `sweep_meta.json` and one SVG per shift kind.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    let rows = run_sweep(cfg)?;
    let csv = cfg.out_dir.join("sweep.csv");
    write_text(&csv, &io::format_sweep_csv(&rows)?)?;
    let meta = SweepMeta {
        format: SWEEP_FORMAT.to_string(),
        config: cfg.clone(),
        nodes: cfg.nodes_or(DEFAULT_SWEEP_NODES),
        rows: rows.len(),
        failures: rows.iter().filter(|r| r.rmse.is_none()).count(),
    };
    write_text(&cfg.out_dir.join("sweep_meta.json"), &format_json(&meta)?)?;
    let mut charts = Vec::new();
    for &kind in &cfg.shifts {
        let path = cfg.out_dir.join(format!("sweep_{}.svg", kind.name()));
        let title = format!("{kind} shift: test RMSE vs adjacency gap");
        write_text(&path, &render_svg(&title, &aggregate(&rows, kind)))?;
        charts.push(path);
    }
    Ok(SweepOutput { rows, csv, charts })
}

/// One probe measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub model: String,
    pub flips: usize,
    pub seed: u64,
    pub adjacency_gap: f64,
    /// `‖Z(Ã′) − Z(Ã)‖₂`.
    pub change: f64,
}

/// Rescales every head output map to spectral norm `1/H` so that all
/// models share an operator-norm budget on the propagated signal.
pub fn normalize_output_maps(params: &mut ModelParams) -> Result<()> {
    let heads = params.w_out.len();
    for w in &mut params.w_out {
        let norm = spectral_norm(w, SPECTRAL_TOL, SPECTRAL_MAX_ITER)?.value;
        if norm > 0.0 {
            *w = w.scale(1.0 / (norm * heads as f64));
        }
    }
    Ok(())
}

fn representation(spec: &ModelSpec, params: &ModelParams, ctx: &GraphContext) -> Result<crate::matrix::Matrix> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let z = represent(&tape, spec, &bound, ctx)?;
    Ok(tape.value(&z))
}

/// Representation change on graph #1 under random edge flips.
pub fn run_probe(cfg: &ExperimentConfig) -> Result<Vec<ProbeRow>> {
    cfg.validate()?;
    let suite = load_suite(cfg, cfg.suite.kind, DEFAULT_NODES)?;
    let base = suite.graph(1);
    let trained = match &cfg.probe.checkpoint {
        Some(path) => Some(io::parse_checkpoint(&io::read_text(path)?)?),
        None => None,
    };
    let pool = worker_pool()?;
    let mut perturbed = Vec::new();
    for &flips in &cfg.probe.flip_counts {
        for s in 0..cfg.probe.seeds as u64 {
            let seed = derive_seed(cfg.probe.param_seed ^ flips as u64, s);
            let g = perturb_edges(base, flips, seed)?;
            let gap = adjacency_gap(base, &g, NormMode::Symmetric)?;
            perturbed.push((flips, s, g, gap));
        }
    }
    let mut rows = Vec::new();
    for spec in &cfg.models {
        let params = match &trained {
            Some((tspec, p)) if tspec.kind == spec.kind => p.clone(),
            _ => {
                let mut p = spec.init_params(suite.features.cols(), suite.label(1).cols(), cfg.probe.param_seed);
                normalize_output_maps(&mut p)?;
                p
            }
        };
        let reference = representation(spec, &params, &GraphContext::prepare(spec, base, &suite.features)?)?;
        let measured: Vec<Result<ProbeRow>> = pool.install(|| {
            perturbed
                .par_iter()
                .map(|(flips, s, g, gap)| {
                    let z = representation(spec, &params, &GraphContext::prepare(spec, g, &suite.features)?)?;
                    let change = spectral_norm(&z.sub(&reference)?, SPECTRAL_TOL, SPECTRAL_MAX_ITER)?.value;
                    Ok(ProbeRow {
                        model: spec.kind.name().to_string(),
                        flips: *flips,
                        seed: *s,
                        adjacency_gap: *gap,
                        change,
                    })
                })
                .collect()
        });
        for r in measured {
            rows.push(r?);
        }
    }
    Ok(rows)
}

pub fn format_probe_csv(rows: &[ProbeRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["model", "flips", "seed", "adjacency_gap", "change"])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_probe_csv(text: &str) -> Result<Vec<ProbeRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    Ok(reader
        .deserialize()
        .collect::<std::result::Result<Vec<ProbeRow>, csv::Error>>()?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeMeta {
    pub format: String,
    pub config: ExperimentConfig,
    pub rows: usize,
}

/// Probe plus `probe.csv` and `probe_meta.json`.
pub fn cmd_probe(cfg: &ExperimentConfig) -> Result<(Vec<ProbeRow>, PathBuf)> {
    let rows = run_probe(cfg)?;
    let path = cfg.out_dir.join("probe.csv");
    write_text(&path, &format_probe_csv(&rows)?)?;
    let meta = ProbeMeta {
        format: PROBE_FORMAT.to_string(),
        config: cfg.clone(),
        rows: rows.len(),
    };
    write_text(&cfg.out_dir.join("probe_meta.json"), &format_json(&meta)?)?;
    Ok((rows, path))
}
