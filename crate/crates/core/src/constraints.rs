//! Conjunctions of affine inequality constraints on network outputs.
//!
//! A constraint `a·ŷ + b·x + c ≤ 0` is evaluated in raw target units. Models
//! predict normalized targets, so [`OutputScale`] maps predictions back to
//! raw units before evaluation and its scale is folded into the cotangent
//! when an output-space direction is pulled back to weight space.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientVector, Tensor};
use crate::error::{contract, Error, Result};
use crate::model::{Forward, MlpModel};

/// Below this global norm a pulled-back direction is treated as vanished.
pub const VANISHING_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub label: String,
    /// Coefficients over output dimensions.
    pub a: Vec<f64>,
    /// Coefficients over input dimensions.
    #[serde(default)]
    pub b: Vec<f64>,
    pub c: f64,
}

impl LinearConstraint {
    pub fn new(label: impl Into<String>, a: Vec<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        let lc = Self {
            label: label.into(),
            a,
            b,
            c,
        };
        lc.validate()?;
        Ok(lc)
    }

    /// `ŷ_k ≤ bound`
    pub fn upper_bound(output_dim: usize, k: usize, bound: f64) -> Self {
        let mut a = vec![0.0; output_dim];
        a[k] = 1.0;
        Self {
            label: format!("y{k} <= {bound}"),
            a,
            b: Vec::new(),
            c: -bound,
        }
    }

    /// `ŷ_k ≥ bound`
    pub fn lower_bound(output_dim: usize, k: usize, bound: f64) -> Self {
        let mut a = vec![0.0; output_dim];
        a[k] = -1.0;
        Self {
            label: format!("y{k} >= {bound}"),
            a,
            b: Vec::new(),
            c: bound,
        }
    }

    /// `ŷ_lo ≤ ŷ_hi`
    pub fn ordering(output_dim: usize, lo: usize, hi: usize) -> Self {
        let mut a = vec![0.0; output_dim];
        a[lo] = 1.0;
        a[hi] = -1.0;
        Self {
            label: format!("y{lo} <= y{hi}"),
            a,
            b: Vec::new(),
            c: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.a.iter().all(|&v| v == 0.0) {
            return Err(contract(format!(
                "constraint `{}` has no output coefficients",
                self.label
            )));
        }
        if !self.c.is_finite() || self.a.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(contract(format!(
                "constraint `{}` has non-finite coefficients",
                self.label
            )));
        }
        Ok(())
    }

    /// Input coefficients padded to `input_dim` (an empty `b` means zeros).
    fn input_term(&self, x: &[f64]) -> Result<f64> {
        if self.b.is_empty() {
            return Ok(0.0);
        }
        if self.b.len() != x.len() {
            return Err(contract(format!(
                "constraint `{}` has {} input coefficients for {} inputs",
                self.label,
                self.b.len(),
                x.len()
            )));
        }
        Ok(dot(&self.b, x))
    }

    /// `a·ŷ + b·x + c`; a value `≤ 0` means satisfied.
    pub fn evaluate(&self, x: &[f64], yhat: &[f64]) -> Result<f64> {
        if self.a.len() != yhat.len() {
            return Err(contract(format!(
                "constraint `{}` has {} output coefficients for {} outputs",
                self.label,
                self.a.len(),
                yhat.len()
            )));
        }
        Ok(dot(&self.a, yhat) + self.input_term(x)? + self.c)
    }

    /// Unit normal `a/‖a‖` of the violated half-space, zero when satisfied.
    pub fn output_direction(&self, x: &[f64], yhat: &[f64]) -> Result<Vec<f64>> {
        let v = self.evaluate(x, yhat)?;
        if v <= 0.0 {
            return Ok(vec![0.0; self.a.len()]);
        }
        let norm = dot(&self.a, &self.a).sqrt();
        Ok(self.a.iter().map(|a| a / norm).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Free-function forms mirroring the methods.
pub fn evaluate(c: &LinearConstraint, x: &[f64], yhat: &[f64]) -> Result<f64> {
    c.evaluate(x, yhat)
}

pub fn output_direction(c: &LinearConstraint, x: &[f64], yhat: &[f64]) -> Result<Vec<f64>> {
    c.output_direction(x, yhat)
}

/// Conjunction of constraints. Empty means unconstrained.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConstraintSet {
    pub constraints: Vec<LinearConstraint>,
}

impl ConstraintSet {
    pub fn new(constraints: Vec<LinearConstraint>) -> Result<Self> {
        for c in &constraints {
            c.validate()?;
        }
        Ok(Self { constraints })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LinearConstraint> {
        self.constraints.iter()
    }

    /// Checks every constraint against the given input and output widths.
    pub fn check_dims(&self, input_dim: usize, output_dim: usize) -> Result<()> {
        for c in &self.constraints {
            if c.a.len() != output_dim || !(c.b.is_empty() || c.b.len() == input_dim) {
                return Err(contract(format!(
                    "constraint `{}` expects {} outputs and {} inputs, data has {output_dim} and {input_dim}",
                    c.label,
                    c.a.len(),
                    c.b.len()
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cs: Self = serde_json::from_str(text)?;
        Self::new(cs.constraints)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Outcome of checking one constraint on one example.
#[derive(Clone, Debug, PartialEq)]
pub struct Assessment {
    pub satisfied: bool,
    /// Violation magnitude used to rank constraints; `0` when satisfied.
    pub violation: f64,
    /// Output-space direction, present only when violated. Never zero.
    pub direction: Option<Vec<f64>>,
}

/// Anything that can say, per constraint, whether `(x, ŷ)` is feasible and
/// which way to move `ŷ` when it is not. Constraints need not be
/// differentiable.
pub trait DirectionOracle {
    fn num_constraints(&self) -> usize;

    fn assess(&self, x: &[f64], yhat: &[f64]) -> Result<Vec<Assessment>>;
}

impl DirectionOracle for ConstraintSet {
    fn num_constraints(&self) -> usize {
        self.len()
    }

    fn assess(&self, x: &[f64], yhat: &[f64]) -> Result<Vec<Assessment>> {
        self.constraints
            .iter()
            .map(|c| {
                let v = c.evaluate(x, yhat)?;
                Ok(if v <= 0.0 {
                    Assessment {
                        satisfied: true,
                        violation: 0.0,
                        direction: None,
                    }
                } else {
                    Assessment {
                        satisfied: false,
                        violation: v,
                        direction: Some(c.output_direction(x, yhat)?),
                    }
                })
            })
            .collect()
    }
}

/// Affine map from normalized predictions to raw target units:
/// `raw = normalized · scale + shift`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputScale {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl OutputScale {
    pub fn identity(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn to_raw(&self, normalized: &Tensor) -> Result<Tensor> {
        if normalized.cols() != self.dim() {
            return Err(contract(format!(
                "output scale covers {} columns, predictions have {}",
                self.dim(),
                normalized.cols()
            )));
        }
        let mut out = normalized.clone();
        for row in out.data_mut().chunks_exact_mut(self.dim()) {
            for ((v, s), t) in row.iter_mut().zip(&self.scale).zip(&self.shift) {
                *v = *v * s + t;
            }
        }
        Ok(out)
    }
}

/// Fraction of `(example, constraint)` pairs that are satisfied.
pub fn satisfaction_ratio<O: DirectionOracle + ?Sized>(
    cs: &O,
    xs: &Tensor,
    yhats: &Tensor,
) -> Result<f64> {
    let (satisfied, total) = satisfaction_counts(cs, xs, yhats)?;
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "satisfaction ratio needs at least one example and one constraint".into(),
        ));
    }
    Ok(satisfied as f64 / total as f64)
}

/// `(satisfied pairs, total pairs)`.
pub fn satisfaction_counts<O: DirectionOracle + ?Sized>(
    cs: &O,
    xs: &Tensor,
    yhats: &Tensor,
) -> Result<(usize, usize)> {
    if xs.rows() != yhats.rows() {
        return Err(contract(format!(
            "{} input rows but {} prediction rows",
            xs.rows(),
            yhats.rows()
        )));
    }
    let n = if yhats.is_empty() { 0 } else { yhats.rows() };
    let mut satisfied = 0;
    for i in 0..n {
        satisfied += cs
            .assess(xs.row(i), yhats.row(i))?
            .iter()
            .filter(|a| a.satisfied)
            .count();
    }
    Ok((satisfied, n * cs.num_constraints()))
}

/// Weight-space constraint direction for a recorded forward pass.
///
/// Every violated `(example, constraint)` pair contributes its output-space
/// direction as that example's cotangent; the summed cotangent is pulled back
/// through the network in one vector-Jacobian product and normalized to unit
/// length. If opposing directions cancel, the single most violated pair is
/// used instead. The result has norm 1, or is exactly zero when nothing is
/// violated or the pull-back vanishes.
///
/// `raw_inputs` are the inputs in the units the constraints are written in;
/// `scale` maps the forward pass's outputs to raw target units.
pub fn weight_direction_from<O: DirectionOracle + ?Sized>(
    cs: &O,
    fwd: &Forward,
    raw_inputs: &Tensor,
    scale: &OutputScale,
) -> Result<GradientVector> {
    let outputs = fwd.outputs();
    let zero = || {
        let shapes: Vec<Tensor> = fwd
            .params
            .iter()
            .map(|&p| fwd.tape.value(p).clone())
            .collect();
        GradientVector::zeros_like(&shapes)
    };
    if cs.num_constraints() == 0 {
        return Ok(zero());
    }
    if raw_inputs.rows() != outputs.rows() {
        return Err(contract(format!(
            "{} raw input rows for {} predictions",
            raw_inputs.rows(),
            outputs.rows()
        )));
    }
    let raw = scale.to_raw(outputs)?;
    let k = outputs.cols();
    let mut cot = vec![0.0; outputs.len()];
    let mut worst: Option<(f64, usize, Vec<f64>)> = None;
    for i in 0..outputs.rows() {
        for a in cs.assess(raw_inputs.row(i), raw.row(i))? {
            let Some(dir) = a.direction else { continue };
            if dir.len() != k {
                return Err(contract("direction width differs from output width"));
            }
            // d raw / d normalized = scale
            for ((c, d), s) in cot[i * k..(i + 1) * k].iter_mut().zip(&dir).zip(&scale.scale) {
                *c += d * s;
            }
            if worst.as_ref().is_none_or(|(v, _, _)| a.violation > *v) {
                worst = Some((a.violation, i, dir));
            }
        }
    }
    let Some((_, worst_row, worst_dir)) = worst else {
        return Ok(zero());
    };
    let cot = Tensor::new(outputs.shape().to_vec(), cot)?;
    let mut pulled = fwd.tape.vjp(fwd.output, &cot, &fwd.params)?;
    if pulled.global_norm() < VANISHING_NORM {
        let mut single = vec![0.0; outputs.len()];
        for ((c, d), s) in single[worst_row * k..(worst_row + 1) * k]
            .iter_mut()
            .zip(&worst_dir)
            .zip(&scale.scale)
        {
            *c = d * s;
        }
        let single = Tensor::new(outputs.shape().to_vec(), single)?;
        pulled = fwd.tape.vjp(fwd.output, &single, &fwd.params)?;
        if pulled.global_norm() < VANISHING_NORM {
            return Ok(zero());
        }
    }
    let norm = pulled.global_norm();
    Ok(pulled.scaled(1.0 / norm))
}

/// [`weight_direction_from`] for a model whose outputs and inputs are
/// already in constraint units.
pub fn weight_direction<O: DirectionOracle + ?Sized>(
    cs: &O,
    model: &MlpModel,
    xs: &Tensor,
) -> Result<GradientVector> {
    let fwd = model.forward(xs)?;
    weight_direction_from(cs, &fwd, xs, &OutputScale::identity(model.output_dim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_mlp;

    #[test]
    fn evaluate_examples() {
        // y_min - y_max <= 0
        let order = LinearConstraint::ordering(2, 0, 1);
        assert_eq!(order.evaluate(&[], &[25.0, 20.0]).unwrap(), 5.0);

        let upper = LinearConstraint::upper_bound(1, 0, 1.0);
        assert_eq!(upper.evaluate(&[], &[0.5]).unwrap(), -0.5);

        // sum of expenses <= income
        let budget = LinearConstraint::new("budget", vec![1.0; 3], vec![-1.0], 0.0).unwrap();
        assert_eq!(budget.evaluate(&[10.0], &[1.0, 2.0, 3.0]).unwrap(), -4.0);
    }

    #[test]
    fn evaluate_dimension_mismatch() {
        let c = LinearConstraint::new("c", vec![1.0, 1.0], vec![1.0], 0.0).unwrap();
        assert!(c.evaluate(&[1.0], &[1.0]).is_err());
        assert!(c.evaluate(&[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn zero_output_coefficients_rejected() {
        assert!(LinearConstraint::new("bad", vec![0.0, 0.0], vec![1.0], 0.0).is_err());
        assert!(ConstraintSet::from_json(r#"[{"label":"z","a":[0.0],"b":[],"c":1.0}]"#).is_err());
    }

    #[test]
    fn direction_examples() {
        let upper = LinearConstraint::upper_bound(3, 0, 1.0);
        assert_eq!(upper.output_direction(&[], &[2.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(upper.output_direction(&[], &[0.0, 5.0, 0.0]).unwrap(), vec![0.0; 3]);

        let order = LinearConstraint::ordering(2, 0, 1);
        let y = [1.0, 0.2];
        let d = order.output_direction(&[], &y).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d[0] - h).abs() < 1e-15 && (d[1] + h).abs() < 1e-15);
        let before = order.evaluate(&[], &y).unwrap();
        for t in [1e-3, 0.1, 0.5] {
            let moved = [y[0] - t * d[0], y[1] - t * d[1]];
            assert!(order.evaluate(&[], &moved).unwrap() < before);
        }
    }

    #[test]
    fn satisfaction_ratio_examples() {
        let cs = ConstraintSet::new(vec![
            LinearConstraint::upper_bound(1, 0, 1.0),
            LinearConstraint::lower_bound(1, 0, 0.0),
            LinearConstraint::upper_bound(1, 0, 0.5),
        ])
        .unwrap();
        let xs = Tensor::zeros(vec![4, 0]);
        // satisfied per row: 0.3 -> 3, 0.7 -> 2, 0.2 -> 3, 0.9 -> 2
        let yh = Tensor::new(vec![4, 1], vec![0.3, 0.7, 0.2, 0.9]).unwrap();
        assert!((satisfaction_ratio(&cs, &xs, &yh).unwrap() - 10.0 / 12.0).abs() < 1e-15);

        let all_ok = Tensor::new(vec![4, 1], vec![0.1; 4]).unwrap();
        assert_eq!(satisfaction_ratio(&cs, &xs, &all_ok).unwrap(), 1.0);

        let empty = Tensor::zeros(vec![0, 1]);
        assert!(matches!(
            satisfaction_ratio(&cs, &Tensor::zeros(vec![0, 0]), &empty),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            satisfaction_ratio(&ConstraintSet::empty(), &xs, &all_ok),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn json_format() {
        let text = r#"[
            {"label": "tmin <= tmax", "a": [1.0, -1.0], "b": [], "c": 0.0},
            {"label": "budget", "a": [1.0, 1.0], "b": [0.0, -1.0], "c": 0.5}
        ]"#;
        let cs = ConstraintSet::from_json(text).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs.constraints[1].b, vec![0.0, -1.0]);
        assert!(cs.check_dims(2, 2).is_ok());
        assert!(cs.check_dims(3, 2).is_err());
        assert_eq!(ConstraintSet::from_json(&cs.to_json().unwrap()).unwrap(), cs);
    }

    fn identity_model(dim: usize) -> MlpModel {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        MlpModel::from_params(
            &[dim, dim],
            vec![Tensor::new(vec![dim, dim], w).unwrap(), Tensor::zeros(vec![dim])],
            0,
        )
        .unwrap()
    }

    #[test]
    fn weight_direction_zero_when_satisfied() {
        let cs = ConstraintSet::new(vec![LinearConstraint::upper_bound(2, 0, 10.0)]).unwrap();
        let m = init_mlp(&[2, 4, 2], 3).unwrap();
        let xs = Tensor::from_rows(&[[0.1, 0.2], [0.3, -0.4]]).unwrap();
        let d = weight_direction(&cs, &m, &xs).unwrap();
        assert!(d.is_zero());
    }

    #[test]
    fn single_violation_matches_normalized_vjp() {
        let cs = ConstraintSet::new(vec![LinearConstraint::upper_bound(2, 1, -5.0)]).unwrap();
        let m = init_mlp(&[3, 5, 2], 9).unwrap();
        let xs = Tensor::from_rows(&[[0.4, -0.2, 0.9]]).unwrap();
        let d = weight_direction(&cs, &m, &xs).unwrap();
        let fwd = m.forward(&xs).unwrap();
        let e = Tensor::from_rows(&[[0.0, 1.0]]).unwrap();
        let v = fwd.tape.vjp(fwd.output, &e, &fwd.params).unwrap();
        let expected = v.scaled(1.0 / v.global_norm());
        for (a, b) in d.flatten().iter().zip(expected.flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((d.global_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_network_step_reduces_violation() {
        let c = LinearConstraint::upper_bound(2, 0, 1.0);
        let cs = ConstraintSet::new(vec![c.clone()]).unwrap();
        let mut m = identity_model(2);
        let xs = Tensor::from_rows(&[[2.0, 0.5]]).unwrap();
        let before = c.evaluate(&[], m.predict(&xs).unwrap().row(0)).unwrap();
        let d = weight_direction(&cs, &m, &xs).unwrap();
        for (p, g) in m.params_mut().iter_mut().zip(d.blocks()) {
            for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= 1e-2 * gv;
            }
        }
        let after = c.evaluate(&[], m.predict(&xs).unwrap().row(0)).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn cancelling_directions_fall_back_to_worst_pair() {
        // Two examples with identical inputs pull the same output in opposite directions.
        let cs = ConstraintSet::new(vec![
            LinearConstraint::new("up", vec![1.0], vec![-1.0], 0.0).unwrap(),
            LinearConstraint::new("down", vec![-1.0], vec![1.0], 0.0).unwrap(),
        ])
        .unwrap();
        let w = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        let m = MlpModel::from_params(&[1, 1], vec![w, Tensor::vector(vec![0.5])], 0).unwrap();
        // inputs (network) equal so the Jacobians coincide; raw inputs differ
        let net_in = Tensor::from_rows(&[[1.0], [1.0]]).unwrap();
        let raw_in = Tensor::from_rows(&[[0.25], [0.75]]).unwrap();
        let fwd = m.forward(&net_in).unwrap();
        // y = 0.5: "up" violated on row 0 (0.25), "down" violated on row 1 (0.25)
        let d = weight_direction_from(&cs, &fwd, &raw_in, &OutputScale::identity(1)).unwrap();
        assert!((d.global_norm() - 1.0).abs() < 1e-12);
    }
}
