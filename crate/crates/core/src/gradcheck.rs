//! Finite-difference audit of tape gradients.
//!
//! The reference losses here are computed with plain arithmetic on model
//! predictions, so the audit does not share any code with the reverse sweep
//! it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::constraints::{ConstraintSet, LinearConstraint, OutputScale};
use crate::error::Result;
use crate::model::{init_mlp, MlpModel};
use crate::optim::{fuzzy_loss, FuzzyConfig};

/// Pre-activations and constraint values closer than this to a kink are resampled.
pub const KINK_GUARD: f64 = 1e-4;

/// Denominator floor of [`relative_error`].
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// `|a − b| / max(|a|, |b|, RELATIVE_FLOOR)`.
///
/// The floor keeps entries that are zero up to rounding from reporting
/// meaningless ratios; it sits well above the `~1e-10` rounding noise of a
/// central difference with `h = 1e-6`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheckCase {
    pub model: MlpModel,
    pub inputs: Tensor,
    pub targets: Tensor,
    pub constraints: ConstraintSet,
    pub fuzzy: FuzzyConfig,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub layer_sizes: Vec<usize>,
    pub entries: usize,
    pub max_rel_error_mse: f64,
    pub max_rel_error_fuzzy: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.max_rel_error_mse.max(self.max_rel_error_fuzzy)
    }
}

fn mse(pred: &Tensor, targets: &Tensor) -> f64 {
    let n = pred.len() as f64;
    pred.data()
        .iter()
        .zip(targets.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

fn hinge_total(pred: &Tensor, inputs: &Tensor, cs: &ConstraintSet) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.rows() {
        for c in cs.iter() {
            let v: f64 = c.a.iter().zip(pred.row(i)).map(|(a, y)| a * y).sum::<f64>()
                + c.b.iter().zip(inputs.row(i)).map(|(b, x)| b * x).sum::<f64>()
                + c.c;
            total += v.max(0.0);
        }
    }
    total
}

/// Smallest distance of any hidden pre-activation or constraint value to its kink.
fn kink_margin(case: &GradCheckCase) -> f64 {
    let m = &case.model;
    let layers = m.layer_sizes().len() - 1;
    let mut margin = f64::INFINITY;
    let mut h = case.inputs.clone();
    for k in 0..layers {
        let w = m.weight(k);
        let b = m.bias(k);
        let mut next = Vec::with_capacity(h.rows() * w.rows());
        for row in h.row_iter() {
            for j in 0..w.rows() {
                let z: f64 = w.row(j).iter().zip(row).map(|(a, x)| a * x).sum::<f64>() + b.data()[j];
                next.push(z);
            }
        }
        if k + 1 < layers {
            margin = next.iter().fold(margin, |acc, z| acc.min(z.abs()));
            next.iter_mut().for_each(|z| *z = z.max(0.0));
        } else {
            let out = Tensor::new(vec![h.rows(), w.rows()], next.clone()).expect("shape");
            for i in 0..out.rows() {
                for c in case.constraints.iter() {
                    let v = c.evaluate(case.inputs.row(i), out.row(i)).expect("dims");
                    margin = margin.min(v.abs());
                }
            }
        }
        h = Tensor::new(vec![h.rows(), w.rows()], next).expect("shape");
    }
    margin
}

/// Random network (1 to 3 hidden layers of at most 64 units), batch and
/// constraint set, resampled until no ReLU or hinge sits within
/// [`KINK_GUARD`] of its kink.
pub fn random_case(seed: u64) -> Result<GradCheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = rng.random_range(1..=6);
    let output_dim = rng.random_range(1..=3);
    let hidden = rng.random_range(1..=3);
    let mut sizes = vec![input_dim];
    sizes.extend((0..hidden).map(|_| rng.random_range(2..=64)));
    sizes.push(output_dim);
    let mut model = init_mlp(&sizes, rng.random())?;
    // non-zero biases so every parameter block is exercised
    for k in 0..sizes.len() - 1 {
        for b in model.params_mut()[2 * k + 1].data_mut() {
            *b = rng.random_range(-0.2..0.2);
        }
    }
    let rows = rng.random_range(2..=5);
    let num_constraints = rng.random_range(1..=4);
    loop {
        let inputs = Tensor::new(
            vec![rows, input_dim],
            (0..rows * input_dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
        )?;
        let targets = Tensor::new(
            vec![rows, output_dim],
            (0..rows * output_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )?;
        let constraints = ConstraintSet::new(
            (0..num_constraints)
                .map(|i| {
                    LinearConstraint::new(
                        format!("c{i}"),
                        (0..output_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        (0..input_dim).map(|_| rng.random_range(-0.5..0.5)).collect(),
                        rng.random_range(-0.3..0.3),
                    )
                })
                .collect::<Result<Vec<_>>>()?,
        )?;
        let case = GradCheckCase {
            model: model.clone(),
            inputs,
            targets,
            constraints,
            fuzzy: FuzzyConfig {
                lambda: rng.random_range(0.5..2.0),
            },
        };
        if kink_margin(&case) >= KINK_GUARD {
            return Ok(case);
        }
    }
}

/// Compares every tape gradient entry of the MSE and of the fuzzy loss with
/// central differences of step `h`.
pub fn check_case(case: &GradCheckCase, h: f64) -> Result<GradCheckReport> {
    let scale = OutputScale::identity(case.model.output_dim());

    let mut fwd = case.model.forward(&case.inputs)?;
    let base = fwd.mse(&case.targets)?;
    let mse_grad = fwd.tape.grad(base, &fwd.params)?;
    let total = fuzzy_loss(&mut fwd, base, &case.constraints, &case.inputs, &scale, &case.fuzzy)?;
    let fuzzy_grad = fwd.tape.grad(total, &fwd.params)?;

    let losses = |m: &MlpModel| -> Result<(f64, f64)> {
        let pred = m.predict(&case.inputs)?;
        let l = mse(&pred, &case.targets);
        Ok((l, l + case.fuzzy.lambda * hinge_total(&pred, &case.inputs, &case.constraints)))
    };

    let mut probe = case.model.clone();
    let mut worst_mse: f64 = 0.0;
    let mut worst_fuzzy: f64 = 0.0;
    let mut entries = 0;
    for (b, (gm, gf)) in mse_grad.blocks().iter().zip(fuzzy_grad.blocks()).enumerate() {
        for i in 0..gm.len() {
            let orig = probe.params()[b].data()[i];
            probe.params_mut()[b].data_mut()[i] = orig + h;
            let (pm, pf) = losses(&probe)?;
            probe.params_mut()[b].data_mut()[i] = orig - h;
            let (mm, mf) = losses(&probe)?;
            probe.params_mut()[b].data_mut()[i] = orig;
            worst_mse = worst_mse.max(relative_error(gm.data()[i], (pm - mm) / (2.0 * h)));
            worst_fuzzy = worst_fuzzy.max(relative_error(gf.data()[i], (pf - mf) / (2.0 * h)));
            entries += 1;
        }
    }
    Ok(GradCheckReport {
        layer_sizes: case.model.layer_sizes().to_vec(),
        entries,
        max_rel_error_mse: worst_mse,
        max_rel_error_fuzzy: worst_fuzzy,
    })
}

/// Audits `count` random cases seeded `seed, seed + 1, …`.
pub fn audit(count: usize, seed: u64, h: f64) -> Result<Vec<GradCheckReport>> {
    (0..count as u64)
        .map(|i| check_case(&random_case(seed + i)?, h))
        .collect()
}
