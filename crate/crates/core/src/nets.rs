//! Shared building blocks for the learned models: an ordered parameter
//! store (one flat list drives Adam, checkpoints, and gradient extraction)
//! and plain MLP stacks on top of the tape primitives.

use crate::error::Result;
use crate::numerics::{Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

/// Ordered, named parameter tensors. Order is fixed at construction and is
/// the contract between forward passes, Adam state, and checkpoints.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    /// Replace all tensors from named blocks (e.g. a checkpoint), matching
    /// by name and shape.
    pub fn load_named(&mut self, blocks: &[(String, Tensor)]) -> Result<()> {
        use crate::error::Error;
        if blocks.len() != self.tensors.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{} parameter blocks, model has {}",
                blocks.len(),
                self.tensors.len()
            )));
        }
        for ((name, t), (have, slot)) in
            blocks.iter().zip(self.names.iter().zip(self.tensors.iter_mut()))
        {
            if name != have {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter {name:?}, model expects {have:?}"
                )));
            }
            if t.shape() != slot.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter {name}: shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone().with_grad();
        }
        Ok(())
    }

    /// Record every parameter as a requires-grad leaf, in order.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t)).collect()
    }
}

/// Handle to an MLP's weights inside a [`ParamSet`]: layer i uses
/// parameters `first + 2i` (weight) and `first + 2i + 1` (bias).
#[derive(Clone, Copy, Debug)]
pub struct MlpHandle {
    first: usize,
    layers: usize,
}

/// He-normal weight init: N(0, 2/fan_in).
fn init_weight<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let scale = (2.0 / rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    Tensor::from_parts(vec![rows, cols], data)
}

/// Append an MLP with the given layer sizes to the set.
///
/// The output layer is initialized near zero (He weights scaled by 0.05):
/// heads start as small perturbations, which keeps latents on the prior
/// scale at step 0 and leaves residual/identity paths dominant early.
pub fn add_mlp<R: Rng>(
    set: &mut ParamSet,
    name: &str,
    dims: &[usize],
    rng: &mut R,
) -> MlpHandle {
    const OUT_SCALE: f64 = 0.05;
    assert!(dims.len() >= 2, "mlp needs at least one layer");
    let first = set.len();
    for l in 0..dims.len() - 1 {
        let mut w = init_weight(dims[l], dims[l + 1], rng);
        if l == dims.len() - 2 {
            for v in w.data_mut() {
                *v *= OUT_SCALE;
            }
        }
        set.add(format!("{name}.w{l}"), w);
        set.add(format!("{name}.b{l}"), Tensor::zeros(vec![1, dims[l + 1]]));
    }
    MlpHandle { first, layers: dims.len() - 1 }
}

/// Run an MLP over row-major inputs with ReLU between layers.
/// `activate_last` also applies ReLU to the output layer.
pub fn mlp_forward(
    tape: &mut Tape,
    vars: &[Var],
    h: MlpHandle,
    x: Var,
    activate_last: bool,
) -> Result<Var> {
    let mut y = x;
    for l in 0..h.layers {
        let w = vars[h.first + 2 * l];
        let b = vars[h.first + 2 * l + 1];
        y = tape.linear(y, w, b)?;
        if l + 1 < h.layers || activate_last {
            y = tape.relu(y)?;
        }
    }
    Ok(y)
}

/// Split a [n, 2d] tensor into two [n, d] halves (each row is [a | b]).
pub fn split_cols_half(tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
    let shape = tape.shape(x).to_vec();
    let (n, two_d) = (shape[0], shape[1]);
    let d = two_d / 2;
    let stacked = tape.reshape(x, vec![2 * n, d])?;
    let first: Vec<usize> = (0..n).map(|i| 2 * i).collect();
    let second: Vec<usize> = (0..n).map(|i| 2 * i + 1).collect();
    let a = tape.gather_rows(stacked, first)?;
    let b = tape.gather_rows(stacked, second)?;
    Ok((a, b))
}

/// First `k` columns of a [n, d] tensor.
pub fn take_cols(tape: &mut Tape, x: Var, k: usize) -> Result<Var> {
    let t = tape.transpose(x)?;
    let rows: Vec<usize> = (0..k).collect();
    let g = tape.gather_rows(t, rows)?;
    tape.transpose(g)
}
