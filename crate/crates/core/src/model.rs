//! Dense ReLU networks with a linear output layer.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{config, contract, Result};

/// Feed-forward network. Parameters are stored as `[W0, b0, W1, b1, ...]`
/// where `Wk` has shape `(layer_sizes[k+1], layer_sizes[k])`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    params: Vec<Tensor>,
    seed: u64,
}

/// A recorded forward pass.
#[derive(Debug)]
pub struct Forward {
    pub tape: Tape,
    pub input: NodeId,
    pub output: NodeId,
    /// Parameter leaves in the same order as [`MlpModel::params`].
    pub params: Vec<NodeId>,
}

impl Forward {
    pub fn outputs(&self) -> &Tensor {
        self.tape.value(self.output)
    }

    /// Records the mean squared error against `targets` and returns the loss node.
    pub fn mse(&mut self, targets: &Tensor) -> Result<NodeId> {
        if targets.shape() != self.outputs().shape() {
            return Err(contract(format!(
                "targets have shape {:?}, predictions {:?}",
                targets.shape(),
                self.outputs().shape()
            )));
        }
        let t = self.tape.leaf(targets.clone());
        let diff = self.tape.sub(self.output, t)?;
        let sq = self.tape.square(diff)?;
        self.tape.mean(sq)
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(config(format!(
            "a network needs at least an input and an output size, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(config(format!("layer sizes must be positive, got {layer_sizes:?}")));
    }
    Ok(())
}

/// Glorot-uniform weights from a ChaCha8 stream seeded with `seed`; zero biases.
pub fn init_mlp(layer_sizes: &[usize], seed: u64) -> Result<MlpModel> {
    validate_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(2 * (layer_sizes.len() - 1));
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        params.push(Tensor::new(vec![fan_out, fan_in], weights)?);
        params.push(Tensor::zeros(vec![fan_out]));
    }
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        params,
        seed,
    })
}

impl MlpModel {
    /// Builds a model from explicit parameters, checking every shape.
    pub fn from_params(layer_sizes: &[usize], params: Vec<Tensor>, seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let expected = expected_shapes(layer_sizes);
        if params.len() != expected.len() {
            return Err(contract(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (i, (p, shape)) in params.iter().zip(&expected).enumerate() {
            if p.shape() != shape.as_slice() {
                return Err(contract(format!(
                    "parameter {i} has shape {:?}, expected {shape:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            params,
            seed,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated at construction")
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.params[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.params[2 * layer + 1]
    }

    /// Runs `batch` of shape `(n, input_dim)` through the network, recording a tape.
    pub fn forward(&self, batch: &Tensor) -> Result<Forward> {
        if batch.shape().len() != 2 || batch.shape()[1] != self.input_dim() {
            return Err(contract(format!(
                "batch shape {:?} does not match input dimension {}",
                batch.shape(),
                self.input_dim()
            )));
        }
        let mut tape = Tape::new();
        let input = tape.leaf(batch.clone());
        let params: Vec<NodeId> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let layers = self.layer_sizes.len() - 1;
        let mut h = input;
        for k in 0..layers {
            let z = tape.matmul_t(h, params[2 * k])?;
            h = tape.add_bias(z, params[2 * k + 1])?;
            if k + 1 < layers {
                h = tape.relu(h)?;
            }
        }
        Ok(Forward {
            tape,
            input,
            output: h,
            params,
        })
    }

    /// Outputs only; the tape is dropped.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let fwd = self.forward(batch)?;
        Ok(fwd.outputs().clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            layer_sizes: self.layer_sizes.clone(),
            seed: self.seed,
            params: self.params.iter().map(|p| p.data().to_vec()).collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        validate_sizes(&ck.layer_sizes)?;
        let shapes = expected_shapes(&ck.layer_sizes);
        if ck.params.len() != shapes.len() {
            return Err(contract(format!(
                "checkpoint holds {} parameter arrays, layer sizes need {}",
                ck.params.len(),
                shapes.len()
            )));
        }
        let params = ck
            .params
            .into_iter()
            .zip(shapes)
            .map(|(data, shape)| Tensor::new(shape, data))
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(&ck.layer_sizes, params, ck.seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

/// JSON checkpoint layout. Floats are written in shortest round-trip form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_sizes: Vec<usize>,
    pub seed: u64,
    pub params: Vec<Vec<f64>>,
}

fn expected_shapes(layer_sizes: &[usize]) -> Vec<Vec<usize>> {
    layer_sizes
        .windows(2)
        .flat_map(|p| [vec![p[1], p[0]], vec![p[1]]])
        .collect()
}

/// `Σ_k (n_k · n_{k+1} + n_{k+1})`
pub fn param_count_for(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
}
