//! The constraint guided update step, its step-size rules, and the trainer
//! that runs it alongside the unconstrained and hinge-penalty baselines.
//!
//! The update for the full parameter vector `w` is
//!
//! ```text
//! w ← w − η (∇L + ρ · dir · max{ε, ‖∇L‖})
//! ```
//!
//! where `dir` is the unit constraint direction (zero when every constraint
//! holds) and `‖∇L‖` is the global L2 norm over all parameters. Because
//! `ρ > 1`, a violated constraint always outweighs the loss gradient.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientVector, NodeId, Tensor};
use crate::constraints::{
    satisfaction_ratio, weight_direction_from, ConstraintSet, OutputScale,
};
use crate::dataset::{Split, TrainingData};
use crate::error::{config, contract, Error, Result};
use crate::model::{Forward, MlpModel};

/// Runs are aborted once the training loss exceeds this.
pub const DIVERGENCE_LOSS: f64 = 1e12;

/// Step-size rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Fixed { eta: f64 },
    /// `η_e = η₀ · γ^e`
    ExponentialDecay { eta0: f64, gamma: f64 },
    /// Shrinks `η` with [`lemma1_next_eta`] whenever the next step could
    /// overshoot the feasible region. Needs a distance-to-feasible-region
    /// oracle, so it is only usable where one exists (the scalar problems).
    Lemma1 {
        eta0: f64,
        lipschitz: f64,
        epsilon: f64,
    },
}

impl StepSchedule {
    pub fn initial_eta(&self) -> f64 {
        match *self {
            Self::Fixed { eta } => eta,
            Self::ExponentialDecay { eta0, .. } | Self::Lemma1 { eta0, .. } => eta0,
        }
    }

    /// Step size for an epoch of network training.
    pub fn eta_at(&self, epoch: usize) -> Result<f64> {
        match *self {
            Self::Fixed { eta } => Ok(eta),
            Self::ExponentialDecay { eta0, gamma } => Ok(eta0 * gamma.powi(epoch as i32)),
            Self::Lemma1 { .. } => Err(config(
                "the adaptive step-size schedule needs a distance-to-feasible-region oracle, \
                 which network training does not have",
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Fixed { eta } => eta > 0.0 && eta.is_finite(),
            Self::ExponentialDecay { eta0, gamma } => {
                eta0 > 0.0 && eta0.is_finite() && gamma > 0.0 && gamma <= 1.0
            }
            Self::Lemma1 {
                eta0,
                lipschitz,
                epsilon,
            } => {
                eta0 > 0.0
                    && eta0.is_finite()
                    && lipschitz > 0.0
                    && lipschitz.is_finite()
                    && epsilon > 0.0
                    && epsilon < 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(config(format!("invalid step schedule {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchMode {
    #[default]
    FullBatch,
    MiniBatch { size: usize },
}

/// Settings of the update step; also carries the loop settings shared by all methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CggdConfig {
    pub rescale_factor: f64,
    pub epsilon: f64,
    pub schedule: StepSchedule,
    pub max_epochs: usize,
    pub batch_mode: BatchMode,
}

impl Default for CggdConfig {
    fn default() -> Self {
        Self {
            rescale_factor: 1.5,
            epsilon: 0.01,
            schedule: StepSchedule::Fixed { eta: 1e-3 },
            max_epochs: 2000,
            batch_mode: BatchMode::FullBatch,
        }
    }
}

impl CggdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rescale_factor > 1.0 && self.rescale_factor.is_finite()) {
            return Err(config(format!(
                "rescale factor must exceed 1, got {}",
                self.rescale_factor
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(config(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if let BatchMode::MiniBatch { size: 0 } = self.batch_mode {
            return Err(config("mini-batch size must be positive"));
        }
        self.schedule.validate()
    }
}

/// Weight of the hinge penalty in the fuzzy baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuzzyConfig {
    pub lambda: f64,
}

impl Default for FuzzyConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

impl FuzzyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda >= 0.0 && self.lambda.is_finite() {
            Ok(())
        } else {
            Err(config(format!("lambda must be non-negative, got {}", self.lambda)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Fuzzy,
    Cggd,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Baseline, Method::Fuzzy, Method::Cggd];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Fuzzy => "fuzzy",
            Self::Cggd => "cggd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Self::Baseline),
            "fuzzy" => Ok(Self::Fuzzy),
            "cggd" => Ok(Self::Cggd),
            other => Err(config(format!("unknown method `{other}`"))),
        }
    }
}

/// Which epoch's parameters a run reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Lowest validation MSE; for CGGD, restricted to epochs where every
    /// training constraint holds whenever such an epoch exists.
    #[default]
    BestValidation,
    FinalEpoch,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: CggdConfig,
    pub fuzzy: FuzzyConfig,
    pub selection: Selection,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.fuzzy.validate()
    }
}

fn check_step_inputs(params: &[Tensor], grad: &GradientVector, eta: f64) -> Result<()> {
    if !grad.matches_shapes(params) {
        return Err(contract("gradient blocks do not mirror the parameter shapes"));
    }
    if !grad.is_finite() || !eta.is_finite() || params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("non-finite parameters, gradient or step size".into()));
    }
    Ok(())
}

/// Plain gradient descent, `w ← w − η ∇L`.
pub fn gradient_step(params: &mut [Tensor], grad: &GradientVector, eta: f64) -> Result<()> {
    check_step_inputs(params, grad, eta)?;
    for (p, g) in params.iter_mut().zip(grad.blocks()) {
        for (w, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= eta * gv;
        }
    }
    Ok(())
}

/// One constraint guided update of every parameter in place.
///
/// `dir` must have global norm 0 or 1. With `dir = 0` this is exactly
/// [`gradient_step`].
pub fn cggd_step(
    params: &mut [Tensor],
    grad: &GradientVector,
    dir: &GradientVector,
    eta: f64,
    cfg: &CggdConfig,
) -> Result<()> {
    check_step_inputs(params, grad, eta)?;
    if !dir.matches_shapes(params) || !dir.is_finite() {
        return Err(contract("direction blocks do not mirror the parameter shapes"));
    }
    if dir.is_zero() {
        return gradient_step(params, grad, eta);
    }
    let dn = dir.global_norm();
    if (dn - 1.0).abs() > 1e-9 {
        return Err(contract(format!("constraint direction must be a unit vector, norm is {dn}")));
    }
    let weight = cfg.rescale_factor * cfg.epsilon.max(grad.global_norm());
    for ((p, g), d) in params.iter_mut().zip(grad.blocks()).zip(dir.blocks()) {
        for ((w, gv), dv) in p.data_mut().iter_mut().zip(g.data()).zip(d.data()) {
            *w -= eta * (gv + weight * dv);
        }
    }
    Ok(())
}

/// Next step size from the decreasing-update-step recurrence:
///
/// * `‖∇L(w_{j+1})‖ ≥ ε`: `min{2η_jε / (25η_jM + 10), η_j/5}`
/// * otherwise: `η_j · max{ε, ‖∇L(w_j)‖} / (5ε)`
pub fn lemma1_next_eta(
    eta: f64,
    lipschitz: f64,
    epsilon: f64,
    grad_norm_next: f64,
    grad_norm_curr: f64,
) -> Result<f64> {
    if !(eta > 0.0) || !(lipschitz > 0.0) {
        return Err(config(format!(
            "step size and Lipschitz constant must be positive, got {eta} and {lipschitz}"
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(config(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(if grad_norm_next >= epsilon {
        (2.0 * eta * epsilon / (25.0 * eta * lipschitz + 10.0)).min(eta / 5.0)
    } else {
        eta * epsilon.max(grad_norm_curr) / (5.0 * epsilon)
    })
}

/// Adds `λ · Σ max(C_i(x, ŷ), 0)` over every example and constraint to
/// `base_loss`, with `ŷ` mapped to raw units by `scale`.
pub fn fuzzy_loss(
    fwd: &mut Forward,
    base_loss: NodeId,
    cs: &ConstraintSet,
    raw_inputs: &Tensor,
    scale: &OutputScale,
    cfg: &FuzzyConfig,
) -> Result<NodeId> {
    if cs.is_empty() {
        return Ok(base_loss);
    }
    let out = fwd.outputs();
    let (n, k) = (out.rows(), out.cols());
    cs.check_dims(raw_inputs.cols(), k)?;
    if raw_inputs.rows() != n || scale.dim() != k {
        return Err(contract("raw inputs or output scale do not match the predictions"));
    }
    let m = cs.len();
    let mut coeffs = Vec::with_capacity(m * k);
    for c in cs.iter() {
        coeffs.extend(c.a.iter().zip(&scale.scale).map(|(a, s)| a * s));
    }
    let mut offsets = Vec::with_capacity(n * m);
    for i in 0..n {
        let x = raw_inputs.row(i);
        for c in cs.iter() {
            // value of the constraint at a zero normalized prediction
            offsets.push(c.evaluate(x, &scale.shift)?);
        }
    }
    let values = fwd.tape.affine(
        fwd.output,
        Tensor::new(vec![m, k], coeffs)?,
        Tensor::new(vec![n, m], offsets)?,
    )?;
    let hinge = fwd.tape.relu(values)?;
    let total = fwd.tape.sum(hinge)?;
    let weighted = fwd.tape.scale(total, cfg.lambda)?;
    fwd.tape.add(base_loss, weighted)
}

/// One history line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub mse: f64,
    pub satisfaction_ratio: Option<f64>,
    /// Global norm of the method's loss gradient on the training split.
    pub grad_norm: f64,
    pub eta: f64,
    /// Some training constraint was violated at this epoch.
    pub violated: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn train(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(|r| r.split == "train")
    }

    pub fn validation(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(|r| r.split == "val")
    }

    pub fn last_train(&self) -> Option<&EpochRecord> {
        self.train().last()
    }

    /// CSV with header `epoch,split,mse,satisfaction_ratio,grad_norm,eta,violated_flag`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "epoch",
            "split",
            "mse",
            "satisfaction_ratio",
            "grad_norm",
            "eta",
            "violated_flag",
        ])?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.split.clone(),
                r.mse.to_string(),
                r.satisfaction_ratio.map(|v| v.to_string()).unwrap_or_default(),
                r.grad_norm.to_string(),
                r.eta.to_string(),
                u8::from(r.violated).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub method: Method,
    /// Parameters after the last completed epoch.
    pub final_model: MlpModel,
    /// Parameters picked by the configured [`Selection`] rule.
    pub selected_model: MlpModel,
    pub selected_epoch: usize,
    pub history: History,
    pub diverged: bool,
    pub failure: Option<String>,
}

struct Candidate {
    val_mse: f64,
    epoch: usize,
    model: MlpModel,
}

fn keep_better(slot: &mut Option<Candidate>, val_mse: f64, epoch: usize, model: &MlpModel) {
    if slot.as_ref().is_none_or(|c| val_mse < c.val_mse) {
        *slot = Some(Candidate {
            val_mse,
            epoch,
            model: model.clone(),
        });
    }
}

struct Evaluation {
    mse: f64,
    sr: Option<f64>,
}

fn evaluate_split(
    model: &MlpModel,
    split: &Split,
    cs: &ConstraintSet,
    scale: &OutputScale,
) -> Result<Evaluation> {
    let mut fwd = model.forward(&split.inputs)?;
    let loss = fwd.mse(&split.targets)?;
    let mse = fwd.tape.value(loss).item()?;
    let sr = split_sr(&fwd, split, cs, scale)?;
    Ok(Evaluation { mse, sr })
}

fn split_sr(
    fwd: &Forward,
    split: &Split,
    cs: &ConstraintSet,
    scale: &OutputScale,
) -> Result<Option<f64>> {
    if cs.is_empty() {
        return Ok(None);
    }
    let raw = scale.to_raw(fwd.outputs())?;
    satisfaction_ratio(cs, &split.raw_inputs, &raw).map(Some)
}

/// Loss gradient (and constraint direction for CGGD) on one batch.
struct StepInputs {
    loss: f64,
    mse: f64,
    grad: GradientVector,
    dir: Option<GradientVector>,
    sr: Option<f64>,
}

fn step_inputs(
    model: &MlpModel,
    batch: &Split,
    cs: &ConstraintSet,
    method: Method,
    data: &TrainingData,
    cfg: &TrainConfig,
) -> Result<StepInputs> {
    let scale = &data.output_scale;
    let mut fwd = model.forward(&batch.inputs)?;
    let mse_node = fwd.mse(&batch.targets)?;
    let mse = fwd.tape.value(mse_node).item()?;
    let sr = split_sr(&fwd, batch, cs, scale)?;
    let loss_node = match method {
        Method::Fuzzy => fuzzy_loss(&mut fwd, mse_node, cs, &batch.raw_inputs, scale, &cfg.fuzzy)?,
        Method::Baseline | Method::Cggd => mse_node,
    };
    let loss = fwd.tape.value(loss_node).item()?;
    let grad = fwd.tape.grad(loss_node, &fwd.params)?;
    let dir = match method {
        Method::Cggd => Some(weight_direction_from(cs, &fwd, &batch.raw_inputs, scale)?),
        _ => None,
    };
    Ok(StepInputs {
        loss,
        mse,
        grad,
        dir,
        sr,
    })
}

fn apply(
    model: &mut MlpModel,
    inputs: &StepInputs,
    method: Method,
    eta: f64,
    cfg: &CggdConfig,
) -> Result<()> {
    match (&inputs.dir, method) {
        (Some(dir), Method::Cggd) => cggd_step(model.params_mut(), &inputs.grad, dir, eta, cfg),
        _ => gradient_step(model.params_mut(), &inputs.grad, eta),
    }
}

/// Trains `model` with `method`. See [`train_observed`].
pub fn train(
    model: MlpModel,
    data: &TrainingData,
    cs: &ConstraintSet,
    method: Method,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    train_observed(model, data, cs, method, cfg, seed, |_, _| {})
}

/// Runs `max_epochs` updates, calling `observe(epoch, model)` on the
/// parameters at the start of every epoch and once more after the last one.
///
/// History row `e` describes the parameters after `e` updates; its
/// `grad_norm`, `eta` and `violated` refer to the update taken from there.
/// A non-finite or exploding loss ends the run early with `diverged` set;
/// only invalid configuration is reported as an error. `seed` drives the
/// mini-batch order.
pub fn train_observed(
    mut model: MlpModel,
    data: &TrainingData,
    cs: &ConstraintSet,
    method: Method,
    cfg: &TrainConfig,
    seed: u64,
    mut observe: impl FnMut(usize, &MlpModel),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(contract("training split is empty"));
    }
    if data.input_dim() != model.input_dim() || data.output_dim() != model.output_dim() {
        return Err(contract(format!(
            "model maps {} -> {}, data has {} inputs and {} targets",
            model.input_dim(),
            model.output_dim(),
            data.input_dim(),
            data.output_dim()
        )));
    }
    cs.check_dims(data.train.raw_inputs.cols(), data.output_dim())?;

    let opt = &cfg.optimizer;
    let mut history = History::default();
    let mut best_any: Option<Candidate> = None;
    let mut best_feasible: Option<Candidate> = None;
    let mut diverged = false;
    let mut failure = None;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 0..=opt.max_epochs {
        observe(epoch, &model);
        let eta = opt.schedule.eta_at(epoch)?;
        let full = step_inputs(&model, &data.train, cs, method, data, cfg)?;
        let violated = match &full.dir {
            Some(d) => !d.is_zero(),
            None => full.sr.is_some_and(|sr| sr < 1.0),
        };
        history.records.push(EpochRecord {
            epoch,
            split: "train".into(),
            mse: full.mse,
            satisfaction_ratio: full.sr,
            grad_norm: full.grad.global_norm(),
            eta,
            violated,
        });

        if !full.loss.is_finite() || full.loss > DIVERGENCE_LOSS || !full.grad.is_finite() {
            diverged = true;
            failure = Some(format!("loss {} at epoch {epoch}", full.loss));
            break;
        }

        let selection_mse = if data.val.is_empty() {
            full.mse
        } else {
            let val = evaluate_split(&model, &data.val, cs, &data.output_scale)?;
            history.records.push(EpochRecord {
                epoch,
                split: "val".into(),
                mse: val.mse,
                satisfaction_ratio: val.sr,
                grad_norm: full.grad.global_norm(),
                eta,
                violated,
            });
            val.mse
        };
        if selection_mse.is_finite() {
            keep_better(&mut best_any, selection_mse, epoch, &model);
            if full.sr.is_none_or(|sr| sr == 1.0) {
                keep_better(&mut best_feasible, selection_mse, epoch, &model);
            }
        }

        if epoch == opt.max_epochs {
            break;
        }

        let step = match opt.batch_mode {
            BatchMode::FullBatch => apply(&mut model, &full, method, eta, opt),
            BatchMode::MiniBatch { size } => {
                order.shuffle(&mut rng);
                let mut res = Ok(());
                for chunk in order.chunks(size) {
                    let batch = data.train.select(chunk);
                    let inputs = step_inputs(&model, &batch, cs, method, data, cfg)?;
                    res = apply(&mut model, &inputs, method, eta, opt);
                    if res.is_err() {
                        break;
                    }
                }
                res
            }
        };
        match step {
            Ok(()) => {}
            Err(Error::Numeric(msg)) => {
                diverged = true;
                failure = Some(format!("{msg} at epoch {epoch}"));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if !diverged {
        observe(opt.max_epochs + 1, &model);
    }

    let chosen = match cfg.selection {
        Selection::FinalEpoch => None,
        Selection::BestValidation => match method {
            Method::Cggd => best_feasible.or(best_any),
            _ => best_any,
        },
    };
    let (selected_model, selected_epoch) = match chosen {
        Some(c) => (c.model, c.epoch),
        None => (
            model.clone(),
            history.last_train().map_or(0, |r| r.epoch),
        ),
    };
    Ok(TrainOutcome {
        method,
        final_model: model,
        selected_model,
        selected_epoch,
        history,
        diverged,
        failure,
    })
}
