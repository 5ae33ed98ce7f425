//! Multi-seed runs of every method on one dataset, and their aggregation.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{satisfaction_ratio, ConstraintSet, LinearConstraint};
use crate::dataset::Split;
use crate::error::{config, Result};
use crate::model::{init_mlp, MlpModel};
use crate::optim::{train, Method, Selection, TrainConfig, TrainOutcome};

use super::data::{load_and_split, split_dataset, Dataset, DatasetSpec, RawSplits};
use super::normalize::{prepare, Prepared};
use super::synthetic::synthetic_dataset;

/// Fraction of the target range added on each side of the default bounds.
pub const BOUND_MARGIN: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv(DatasetSpec),
    Synthetic {
        rows: usize,
        seed: u64,
        split_sizes: [usize; 3],
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        Self::Synthetic {
            rows: 700,
            seed: 0,
            split_sizes: [200, 250, 250],
        }
    }
}

impl DatasetSource {
    pub fn describe(&self) -> String {
        match self {
            Self::Csv(spec) => spec.csv_path.display().to_string(),
            Self::Synthetic { rows, seed, .. } => format!("synthetic(rows={rows}, seed={seed})"),
        }
    }
}

/// Everything an experiment needs; loadable from JSON or TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub hidden_layers: Vec<usize>,
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            hidden_layers: vec![32, 32],
            train: TrainConfig::default(),
            methods: Method::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3],
        }
    }
}

impl ExperimentConfig {
    /// Parses by file extension (`.toml`, otherwise JSON) and resolves
    /// relative dataset paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)?,
            _ => serde_json::from_str(&text)?,
        };
        if let DatasetSource::Csv(spec) = &mut cfg.dataset {
            spec.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(config("at least one method is required"));
        }
        if self.seeds.is_empty() {
            return Err(config("at least one seed is required"));
        }
        self.train.validate()
    }
}

/// Bounds `min − 5% range ≤ ŷ_k ≤ max + 5% range` from the training targets.
pub fn default_bounds(train: &Dataset) -> Vec<LinearConstraint> {
    let k = train.targets.cols();
    let mut out = Vec::with_capacity(2 * k);
    for j in 0..k {
        let col = train.targets.row_iter().map(|r| r[j]);
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(v), h.max(v))
        });
        let margin = BOUND_MARGIN * (hi - lo);
        let name = &train.target_columns[j];
        let mut lower = LinearConstraint::lower_bound(k, j, lo - margin);
        lower.label = format!("{name} >= {}", lo - margin);
        let mut upper = LinearConstraint::upper_bound(k, j, hi + margin);
        upper.label = format!("{name} <= {}", hi + margin);
        out.push(lower);
        out.push(upper);
    }
    out
}

/// Loads or generates the splits and the constraint set they are trained under.
pub fn materialize(source: &DatasetSource) -> Result<(RawSplits, ConstraintSet)> {
    let (raw, cs) = match source {
        DatasetSource::Csv(spec) => {
            let raw = load_and_split(spec)?;
            let mut constraints = match &spec.constraint_file {
                Some(p) => ConstraintSet::load(p)?.iter().cloned().collect(),
                None => Vec::new(),
            };
            if spec.default_bounds {
                constraints.extend(default_bounds(&raw.train));
            }
            (raw, ConstraintSet::new(constraints)?)
        }
        DatasetSource::Synthetic {
            rows,
            seed,
            split_sizes,
        } => {
            let (data, cs) = synthetic_dataset(*rows, *seed)?;
            (split_dataset(&data, *split_sizes, *seed, None)?, cs)
        }
    };
    cs.check_dims(raw.train.inputs.cols(), raw.train.targets.cols())?;
    Ok((raw, cs))
}

/// Metrics of one `(method, seed)` run. Metrics are absent for diverged runs
/// and satisfaction ratios are absent without constraints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub diverged: bool,
    pub failure: Option<String>,
    pub selected_epoch: usize,
    pub test_mse: Option<f64>,
    pub test_sr: Option<f64>,
    pub train_sr: Option<f64>,
    /// Training satisfaction ratio of the final-epoch parameters.
    pub final_train_sr: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation (0 for a single run).
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub runs: usize,
    pub diverged: usize,
    /// Every run diverged.
    pub failed: bool,
    pub test_mse: Option<Stat>,
    pub test_sr: Option<Stat>,
    pub train_sr: Option<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub layer_sizes: Vec<usize>,
    pub selection: Selection,
    pub train: TrainConfig,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl RunReport {
    pub fn aggregate(&self, method: Method) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }
}

pub struct ExperimentRun {
    pub report: RunReport,
    /// One outcome per entry of `report.runs`, in the same order.
    pub outcomes: Vec<TrainOutcome>,
    pub constraints: ConstraintSet,
}

fn split_metrics(
    model: &MlpModel,
    split: &Split,
    cs: &ConstraintSet,
    prepared: &Prepared,
) -> Result<(f64, Option<f64>)> {
    let pred = model.predict(&split.inputs)?;
    let n = pred.len() as f64;
    let mse = pred
        .data()
        .iter()
        .zip(split.targets.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    let sr = if cs.is_empty() {
        None
    } else {
        let raw = prepared.data.output_scale.to_raw(&pred)?;
        Some(satisfaction_ratio(cs, &split.raw_inputs, &raw)?)
    };
    Ok((mse, sr))
}

fn record(
    outcome: &TrainOutcome,
    seed: u64,
    cs: &ConstraintSet,
    prepared: &Prepared,
) -> Result<RunRecord> {
    let mut rec = RunRecord {
        method: outcome.method,
        seed,
        diverged: outcome.diverged,
        failure: outcome.failure.clone(),
        selected_epoch: outcome.selected_epoch,
        test_mse: None,
        test_sr: None,
        train_sr: None,
        final_train_sr: None,
    };
    if outcome.diverged {
        return Ok(rec);
    }
    let model = &outcome.selected_model;
    if !prepared.test.is_empty() {
        let (mse, sr) = split_metrics(model, &prepared.test, cs, prepared)?;
        rec.test_mse = Some(mse);
        rec.test_sr = sr;
    }
    rec.train_sr = split_metrics(model, &prepared.data.train, cs, prepared)?.1;
    rec.final_train_sr = split_metrics(&outcome.final_model, &prepared.data.train, cs, prepared)?.1;
    Ok(rec)
}

fn aggregate(method: Method, runs: &[RunRecord]) -> Aggregate {
    let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.method == method).collect();
    let ok: Vec<&RunRecord> = mine.iter().copied().filter(|r| !r.diverged).collect();
    let collect = |f: fn(&RunRecord) -> Option<f64>| {
        let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
        Stat::of(&v)
    };
    Aggregate {
        method,
        runs: mine.len(),
        diverged: mine.len() - ok.len(),
        failed: ok.is_empty(),
        test_mse: collect(|r| r.test_mse),
        test_sr: collect(|r| r.test_sr),
        train_sr: collect(|r| r.train_sr),
    }
}

/// Trains every `(method, seed)` pair on already prepared data.
///
/// Runs execute in parallel; records are ordered by method (in the given
/// order) then seed, so the report does not depend on scheduling.
pub fn run_prepared(
    prepared: &Prepared,
    cs: &ConstraintSet,
    hidden_layers: &[usize],
    methods: &[Method],
    seeds: &[u64],
    cfg: &TrainConfig,
    dataset: &str,
) -> Result<ExperimentRun> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(config("at least one method and one seed are required"));
    }
    cfg.validate()?;
    let mut layer_sizes = vec![prepared.data.input_dim()];
    layer_sizes.extend_from_slice(hidden_layers);
    layer_sizes.push(prepared.data.output_dim());

    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(method, seed)| {
            let model = init_mlp(&layer_sizes, seed)?;
            let outcome = train(model, &prepared.data, cs, method, cfg, seed)?;
            let rec = record(&outcome, seed, cs, prepared)?;
            Ok((rec, outcome))
        })
        .collect::<Result<Vec<_>>>()?;
    let (runs, outcomes): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    let mut distinct: Vec<Method> = Vec::new();
    for &m in methods {
        if !distinct.contains(&m) {
            distinct.push(m);
        }
    }
    let aggregates = distinct.iter().map(|&m| aggregate(m, &runs)).collect();
    Ok(ExperimentRun {
        report: RunReport {
            dataset: dataset.to_string(),
            layer_sizes,
            selection: cfg.selection,
            train: cfg.clone(),
            runs,
            aggregates,
        },
        outcomes,
        constraints: cs.clone(),
    })
}

/// Loads the configured dataset and runs the full protocol.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let (raw, cs) = materialize(&cfg.dataset)?;
    let prepared = prepare(&raw)?;
    run_prepared(
        &prepared,
        &cs,
        &cfg.hidden_layers,
        &cfg.methods,
        &cfg.seeds,
        &cfg.train,
        &cfg.dataset.describe(),
    )
}

impl ExperimentRun {
    /// Writes per-run history CSVs and checkpoints, the resolved constraint
    /// file, and the report as JSON and CSV.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (rec, outcome) in self.report.runs.iter().zip(&self.outcomes) {
            let stem = format!("{}_seed{}", rec.method, rec.seed);
            outcome
                .history
                .write_csv(fs::File::create(dir.join(format!("{stem}_history.csv")))?)?;
            outcome.final_model.save(&dir.join(format!("{stem}_final.json")))?;
            outcome.selected_model.save(&dir.join(format!("{stem}_selected.json")))?;
        }
        self.constraints.save(&dir.join("constraints.json"))?;
        let fmt = super::report::ReportFormat::Json;
        fs::write(dir.join("report.json"), super::report::emit_report(&self.report, fmt)?)?;
        let fmt = super::report::ReportFormat::Csv;
        fs::write(dir.join("report.csv"), super::report::emit_report(&self.report, fmt)?)?;
        Ok(())
    }
}
