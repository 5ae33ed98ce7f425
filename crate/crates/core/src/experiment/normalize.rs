//! Per-feature affine normalization fitted on the training split.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::constraints::OutputScale;
use crate::dataset::{Split, TrainingData};
use crate::error::{contract, Result};

use super::data::RawSplits;

/// `v ↦ (v − shift) / scale` per column, with every `scale > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Constant columns get unit scale instead of a division by zero.
fn positive(scale: f64) -> f64 {
    if scale > 0.0 && scale.is_finite() {
        scale
    } else {
        1.0
    }
}

impl Normalizer {
    /// Mean and population standard deviation per column.
    pub fn fit_zscore(data: &Tensor) -> Result<Self> {
        let n = nonempty_rows(data)?;
        let cols = data.cols();
        let mut shift = vec![0.0; cols];
        for row in data.row_iter() {
            for (m, v) in shift.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; cols];
        for row in data.row_iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&shift) {
                *s += (v - m) * (v - m) / n;
            }
        }
        Ok(Self {
            shift,
            scale: var.into_iter().map(|v| positive(v.sqrt())).collect(),
        })
    }

    /// Column minimum and range, mapping the training values onto `[0, 1]`.
    pub fn fit_minmax(data: &Tensor) -> Result<Self> {
        nonempty_rows(data)?;
        let cols = data.cols();
        let mut lo = vec![f64::INFINITY; cols];
        let mut hi = vec![f64::NEG_INFINITY; cols];
        for row in data.row_iter() {
            for ((l, h), v) in lo.iter_mut().zip(hi.iter_mut()).zip(row) {
                *l = l.min(*v);
                *h = h.max(*v);
            }
        }
        Ok(Self {
            scale: lo.iter().zip(&hi).map(|(l, h)| positive(h - l)).collect(),
            shift: lo,
        })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn transform(&self, data: &Tensor) -> Result<Tensor> {
        self.map(data, |v, shift, scale| (v - shift) / scale)
    }

    pub fn inverse(&self, data: &Tensor) -> Result<Tensor> {
        self.map(data, |v, shift, scale| v * scale + shift)
    }

    /// The inverse transform in the form the constraint code consumes.
    pub fn output_scale(&self) -> OutputScale {
        OutputScale {
            scale: self.scale.clone(),
            shift: self.shift.clone(),
        }
    }

    fn map(&self, data: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
        if data.cols() != self.dim() {
            return Err(contract(format!(
                "normalizer has {} columns, data has {}",
                self.dim(),
                data.cols()
            )));
        }
        let mut out = data.clone();
        if self.dim() > 0 {
            for row in out.data_mut().chunks_exact_mut(self.dim()) {
                for ((v, t), s) in row.iter_mut().zip(&self.shift).zip(&self.scale) {
                    *v = f(*v, *t, *s);
                }
            }
        }
        Ok(out)
    }
}

fn nonempty_rows(data: &Tensor) -> Result<f64> {
    if data.shape().len() != 2 || data.rows() == 0 {
        return Err(contract("cannot fit a normalizer on an empty table"));
    }
    Ok(data.rows() as f64)
}

/// Splits ready for training, plus the fitted transforms.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub data: TrainingData,
    pub test: Split,
    pub inputs: Normalizer,
    pub targets: Normalizer,
}

/// Z-scores inputs and min-max scales targets using training statistics only.
pub fn prepare(raw: &RawSplits) -> Result<Prepared> {
    let inputs = Normalizer::fit_zscore(&raw.train.inputs)?;
    let targets = Normalizer::fit_minmax(&raw.train.targets)?;
    let split = |d: &super::data::Dataset| -> Result<Split> {
        Split::new(
            inputs.transform(&d.inputs)?,
            d.inputs.clone(),
            targets.transform(&d.targets)?,
        )
    };
    Ok(Prepared {
        data: TrainingData {
            train: split(&raw.train)?,
            val: split(&raw.val)?,
            output_scale: targets.output_scale(),
        },
        test: split(&raw.test)?,
        inputs,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zscore_values() {
        let t = Tensor::from_rows(&[[1.0, 5.0], [3.0, 5.0]]).unwrap();
        let n = Normalizer::fit_zscore(&t).unwrap();
        assert_eq!(n.shift, vec![2.0, 5.0]);
        assert_eq!(n.scale, vec![1.0, 1.0]);
        let z = n.transform(&t).unwrap();
        assert_eq!(z.data(), &[-1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn minmax_maps_train_to_unit_interval() {
        let t = Tensor::from_rows(&[[10.0], [30.0], [20.0]]).unwrap();
        let n = Normalizer::fit_minmax(&t).unwrap();
        assert_eq!(n.transform(&t).unwrap().data(), &[0.0, 1.0, 0.5]);
        assert_eq!(n.inverse(&n.transform(&t).unwrap()).unwrap(), t);
    }

    #[test]
    fn empty_table_rejected() {
        let t = Tensor::new(vec![0, 2], vec![]).unwrap();
        assert!(Normalizer::fit_zscore(&t).is_err());
    }
}
