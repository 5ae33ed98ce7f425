//! In-memory training data shared by the trainer and the experiment harness.

use crate::autodiff::Tensor;
use crate::constraints::OutputScale;
use crate::error::{contract, Result};

/// One split with network-ready and raw-unit views of the same rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    /// Normalized inputs fed to the network, `(n, input_dim)`.
    pub inputs: Tensor,
    /// Inputs in the units the constraints are written in.
    pub raw_inputs: Tensor,
    /// Normalized regression targets, `(n, output_dim)`.
    pub targets: Tensor,
}

impl Split {
    pub fn new(inputs: Tensor, raw_inputs: Tensor, targets: Tensor) -> Result<Self> {
        let n = inputs.rows();
        if raw_inputs.rows() != n || targets.rows() != n {
            return Err(contract(format!(
                "split row counts differ: {n} inputs, {} raw inputs, {} targets",
                raw_inputs.rows(),
                targets.rows()
            )));
        }
        Ok(Self {
            inputs,
            raw_inputs,
            targets,
        })
    }

    /// A split whose inputs need no normalization.
    pub fn unnormalized(inputs: Tensor, targets: Tensor) -> Result<Self> {
        Self::new(inputs.clone(), inputs, targets)
    }

    pub fn len(&self) -> usize {
        if self.inputs.is_empty() && self.targets.is_empty() {
            0
        } else {
            self.inputs.rows()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(rows),
            raw_inputs: self.raw_inputs.select_rows(rows),
            targets: self.targets.select_rows(rows),
        }
    }
}

/// Train/validation splits plus the map from normalized predictions to raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingData {
    pub train: Split,
    pub val: Split,
    pub output_scale: OutputScale,
}

impl TrainingData {
    pub fn input_dim(&self) -> usize {
        self.train.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.train.targets.cols()
    }
}
