//! A small constrained regression problem that needs no download.
//!
//! Four inputs drawn uniformly from `[−1, 1]`; two targets `(t_min, t_max)`
//! placed around a smooth centre with an input-dependent half-gap. The noise
//! is smaller than the narrowest gap and the largest target stays just under
//! the bound, so every row satisfies `−1 ≤ t ≤ 1` and `t_min ≤ t_max` with a
//! margin of a few hundredths: small enough that an unconstrained fit crosses
//! the constraints near the extremes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::constraints::{ConstraintSet, LinearConstraint};
use crate::error::{config, Result};

use super::data::Dataset;

pub const SYNTHETIC_INPUTS: usize = 4;
pub const SYNTHETIC_BOUND: f64 = 1.0;
const NOISE: f64 = 0.04;
const AMPLITUDE: f64 = 0.8;
/// Half-gap between the targets ranges over `[MIN_HALF_GAP, MIN_HALF_GAP + HALF_GAP_SWING]`.
const MIN_HALF_GAP: f64 = 0.05;
const HALF_GAP_SWING: f64 = 0.1;

pub fn synthetic_constraints() -> ConstraintSet {
    let mut cs = Vec::new();
    for k in 0..2 {
        cs.push(LinearConstraint::lower_bound(2, k, -SYNTHETIC_BOUND));
        cs.push(LinearConstraint::upper_bound(2, k, SYNTHETIC_BOUND));
    }
    cs.push(LinearConstraint::ordering(2, 0, 1));
    ConstraintSet::new(cs).expect("static constraints are valid")
}

/// `n` rows drawn with `seed`, and the constraint set they satisfy.
pub fn synthetic_dataset(n: usize, seed: u64) -> Result<(Dataset, ConstraintSet)> {
    if n < 10 {
        return Err(config(format!("synthetic dataset needs at least 10 rows, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n * SYNTHETIC_INPUTS);
    let mut ys = Vec::with_capacity(n * 2);
    for _ in 0..n {
        let x: [f64; SYNTHETIC_INPUTS] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        let centre = AMPLITUDE * (1.5 * (x[0] + 0.5 * x[1] * x[2])).tanh();
        let half_gap = MIN_HALF_GAP + HALF_GAP_SWING * 0.5 * (1.0 + (2.0 * x[3]).sin());
        // 2 · NOISE < 2 · MIN_HALF_GAP keeps the order; AMPLITUDE + max half-gap
        // + NOISE < 1 keeps the bounds
        xs.extend_from_slice(&x);
        ys.push(centre - half_gap + rng.random_range(-NOISE..=NOISE));
        ys.push(centre + half_gap + rng.random_range(-NOISE..=NOISE));
    }
    let data = Dataset::new(
        (0..SYNTHETIC_INPUTS).map(|i| format!("x{i}")).collect(),
        vec!["t_min".into(), "t_max".into()],
        Tensor::new(vec![n, SYNTHETIC_INPUTS], xs)?,
        Tensor::new(vec![n, 2], ys)?,
    )?;
    Ok((data, synthetic_constraints()))
}
