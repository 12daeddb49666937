use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::LayerKind;
use crate::error::{Error, Result};
use crate::graph::NeighborGraph;
use crate::model::{
    build_model, doc_classify_preset, grid_classify_preset, sim_task_preset, ts_forecast_preset, with_suffix, GraphStack, Model,
    ModelSpec,
};
use crate::tensor::{Precision, Real};
use crate::train::{train_loop, ForecastProblem, TaskData, TrainConfig, TrainReport};

use super::dataset::{DatasetFile, Payload};
use super::report::{summarize, Summary};

pub const PRECISION_ENV: &str = "ENGINE_PRECISION";
pub const DEFAULT_EMBED_DIM: usize = 4;
pub const DEFAULT_WINDOW: usize = 6;

/// Process exit code for an error: 3 for divergence, 2 for configuration and input problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => 3,
        Error::Config { .. } | Error::Json(_) | Error::Io { .. } | Error::Parameter(_) => 2,
        _ => 1,
    }
}

/// Precision from `ENGINE_PRECISION` when set, else `fallback`.
pub fn effective_precision(fallback: Precision) -> Result<Precision> {
    match std::env::var(PRECISION_ENV) {
        Ok(v) if !v.trim().is_empty() => v.parse(),
        _ => Ok(fallback),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Sim,
    Forecast,
    Grid,
    Docs,
}

/// One model of an experiment: a preset (with its operator) or an explicit spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<LayerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
    /// Node embedding width for the forecast preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
    /// Channel width for the grid preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    /// Neighborhood size per level for the grid preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<Vec<usize>>,
    /// Cluster ratio between levels for the grid preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_factor: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastSettings {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_true")]
    pub mask: bool,
}

impl Default for ForecastSettings {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            mask: true,
        }
    }
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

fn default_true() -> bool {
    true
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Experiment description read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Worker threads for independent runs; 0 or 1 runs sequentially.
    #[serde(default)]
    pub parallel: usize,
    pub train: TrainConfig,
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub forecast: ForecastSettings,
    /// Seed of the k-means coarsening used to build pooled graph stacks.
    #[serde(default)]
    pub coarsen_seed: u64,
    /// Write model manifests and parameter blobs next to the reports.
    #[serde(default = "default_true")]
    pub save_models: bool,
}

impl RunConfig {
    /// Parse and validate; parse errors carry the line and column of the offending token.
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&s)?;
        if let Some(dir) = path.parent() {
            if cfg.dataset.is_relative() {
                cfg.dataset = dir.join(&cfg.dataset);
            }
            if cfg.output_dir.is_relative() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("'seeds' must list at least one seed"));
        }
        if self.models.is_empty() {
            return Err(Error::config("'models' must list at least one model"));
        }
        let mut labels = HashSet::new();
        for (i, m) in self.models.iter().enumerate() {
            if !labels.insert(m.label.as_str()) {
                return Err(Error::config(format!("models[{i}]: duplicate label '{}'", m.label)));
            }
            if m.label.is_empty() || m.label.contains(['/', '\\']) {
                return Err(Error::config(format!("models[{i}]: label must be a plain file name")));
            }
            match (&m.preset, &m.spec) {
                (Some(_), Some(_)) => {
                    return Err(Error::config(format!("models[{i}]: give either 'preset' or 'spec', not both")))
                }
                (None, None) => return Err(Error::config(format!("models[{i}]: needs 'preset' or 'spec'"))),
                (Some(_), None) if m.operator.is_none() => {
                    return Err(Error::config(format!("models[{i}]: a preset needs an 'operator'")))
                }
                _ => {}
            }
            if let Some(spec) = &m.spec {
                spec.validate()?;
            }
        }
        if self.forecast.window == 0 {
            return Err(Error::config("forecast window must be at least 1"));
        }
        Ok(())
    }
}

/// Resolve a model entry against its dataset.
pub fn resolve_spec(entry: &ModelEntry, data: &DatasetFile, forecast: &ForecastSettings) -> Result<ModelSpec> {
    if let Some(spec) = &entry.spec {
        return Ok(spec.clone());
    }
    let op = entry
        .operator
        .ok_or_else(|| Error::config(format!("model '{}' has no operator", entry.label)))?;
    let classes = match &data.payload {
        Payload::Class { classes, .. } => Some(*classes),
        _ => None,
    };
    let need_classes = || classes.ok_or_else(|| Error::config(format!("model '{}' needs a classification dataset", entry.label)));
    match entry.preset.expect("validated") {
        Preset::Sim => {
            let [h, w] = data
                .meta
                .grid
                .ok_or_else(|| Error::config("the sim preset needs a dataset with grid dimensions"))?;
            Ok(sim_task_preset(op, h, w))
        }
        Preset::Forecast => Ok(ts_forecast_preset(
            op,
            forecast.window,
            entry.embed_dim.unwrap_or(DEFAULT_EMBED_DIM),
            forecast.mask,
        )),
        Preset::Grid => Ok(grid_classify_preset(
            op,
            1,
            entry.width.unwrap_or(16),
            entry.ks.as_deref().unwrap_or(&[data.graph.k]),
            entry.pool_factor.unwrap_or(4),
            need_classes()?,
        )),
        Preset::Docs => Ok(doc_classify_preset(op, need_classes()?)),
    }
}

/// Everything a run writes besides the per-run reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub reports: Vec<TrainReport>,
    pub summary: Vec<Summary>,
    /// Test RMSE of predicting the last observed value, for forecast datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persistence_rmse: Option<f64>,
}

enum Prepared {
    Samples(TaskData),
    Forecast(ForecastProblem, TaskData),
}

impl Prepared {
    fn data(&self) -> &TaskData {
        match self {
            Prepared::Samples(d) | Prepared::Forecast(_, d) => d,
        }
    }
}

fn prepare(data: &DatasetFile, forecast: &ForecastSettings) -> Result<Prepared> {
    match &data.payload {
        Payload::Series { series } => {
            let problem = ForecastProblem::new(series.clone(), forecast.window, forecast.mask)?;
            let td = problem.task_data()?;
            Ok(Prepared::Forecast(problem, td))
        }
        _ => Ok(Prepared::Samples(data.task_data()?)),
    }
}

struct Job<'a> {
    entry: &'a ModelEntry,
    spec: ModelSpec,
    seed: u64,
}

fn run_job<T: Real>(
    job: &Job<'_>,
    graph: &NeighborGraph,
    prepared: &Prepared,
    cfg: &RunConfig,
    precision: Precision,
) -> Result<(TrainReport, Model<T>)> {
    let stack = GraphStack::<T>::for_spec(&job.spec, graph.clone(), cfg.coarsen_seed)?;
    let mut model = build_model(&job.spec, &stack, job.seed)?;
    let mut tc = cfg.train.clone();
    tc.seed = job.seed;
    tc.precision = precision;
    let label = format!("{}-s{}", job.entry.label, job.seed);
    let report = train_loop(&mut model, &stack, prepared.data(), &tc, &job.entry.label)?;
    log::info!(
        "{label}: final train loss {:.6}, test metric {:?}, {} params, {:.1}s",
        report.final_train_loss(),
        report.test_metric,
        report.param_count,
        report.wall_seconds
    );
    Ok((report, model))
}

/// Stem (without extension) of a run's output files.
pub fn run_stem(dir: &Path, label: &str, seed: u64) -> PathBuf {
    dir.join(format!("{label}-s{seed}"))
}

fn run_typed<T: Real>(cfg: &RunConfig, data: &DatasetFile, precision: Precision) -> Result<ExperimentOutcome> {
    let graph = data.neighbor_graph()?;
    let prepared = prepare(data, &cfg.forecast)?;
    let mut jobs = Vec::new();
    for entry in &cfg.models {
        let spec = resolve_spec(entry, data, &cfg.forecast)?;
        for &seed in &cfg.seeds {
            jobs.push(Job {
                entry,
                spec: spec.clone(),
                seed,
            });
        }
    }
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let one = |job: &Job<'_>| -> Result<TrainReport> {
        let (report, model) = run_job::<T>(job, &graph, &prepared, cfg, precision)?;
        let stem = run_stem(&cfg.output_dir, &job.entry.label, job.seed);
        report.write(&with_suffix(&stem, "report.json"), &with_suffix(&stem, "curve.csv"))?;
        if cfg.save_models {
            model.save(&with_suffix(&stem, "model"))?;
        }
        Ok(report)
    };
    let reports: Vec<TrainReport> = if cfg.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallel)
            .build()
            .map_err(|e| Error::config(format!("cannot start {} workers: {e}", cfg.parallel)))?;
        pool.install(|| jobs.par_iter().map(one).collect::<Result<Vec<_>>>())?
    } else {
        jobs.iter().map(one).collect::<Result<Vec<_>>>()?
    };
    let persistence_rmse = match &prepared {
        Prepared::Forecast(p, _) => Some(p.persistence_rmse(p.split.test.clone())?),
        Prepared::Samples(_) => None,
    };
    let outcome = ExperimentOutcome {
        summary: summarize(&reports),
        reports,
        persistence_rmse,
    };
    let path = cfg.output_dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&outcome.summary_doc())?).map_err(|e| Error::io(&path, e))?;
    Ok(outcome)
}

impl ExperimentOutcome {
    fn summary_doc(&self) -> BTreeMap<&'static str, serde_json::Value> {
        let mut m = BTreeMap::new();
        m.insert("version", serde_json::Value::from(crate::train::REPORT_VERSION));
        m.insert("models", serde_json::to_value(&self.summary).unwrap_or_default());
        if let Some(p) = self.persistence_rmse {
            m.insert("persistence_rmse", serde_json::Value::from(p));
        }
        m
    }

    pub fn summary_for(&self, label: &str) -> Option<&Summary> {
        self.summary.iter().find(|s| s.label == label)
    }
}

/// Train every (model, seed) pair of `cfg`, writing reports, curves, models and a summary.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let data = DatasetFile::read(&cfg.dataset)?;
    let precision = effective_precision(cfg.train.precision)?;
    match precision {
        Precision::F32 => run_typed::<f32>(cfg, &data, precision),
        Precision::F64 => run_typed::<f64>(cfg, &data, precision),
    }
}

/// Evaluate a saved model on one split of a dataset, returning its metric.
pub fn eval_saved<T: Real>(
    stem: &Path,
    data: &DatasetFile,
    split: &str,
    forecast: &ForecastSettings,
    coarsen_seed: u64,
) -> Result<f64> {
    let path = with_suffix(stem, "json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = crate::model::ModelManifest::from_json(&text)?;
    let stack = GraphStack::<T>::for_spec(&manifest.spec, data.neighbor_graph()?, coarsen_seed)?;
    let model = Model::<T>::load(stem, &stack)?;
    let prepared = prepare(data, forecast)?;
    let d = prepared.data();
    let set = match split {
        "train" => &d.train,
        "val" => &d.val,
        "test" => &d.test,
        other => return Err(Error::Parameter(format!("unknown split '{other}'"))),
    };
    set.metric(&model, &stack)
}
