//! Convolution, max-pooling, GRU and dense layers.
//!
//! Layer structs hold parameter tensors and are used for initialization and
//! export into a [`ParameterSet`]. The differentiable forward passes are free
//! functions over tape variables, so the same code serves training (params
//! bound from a set) and gradient checking.
//!
//! Batched activations are time-major and channel-last: `[batch, time, channels]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::{BoundParams, ReduceKind, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

/// Glorot-uniform sample of the given shape.
fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

fn positive(dims: &[(&str, usize)]) -> Result<()> {
    match dims.iter().find(|(_, d)| *d == 0) {
        Some((name, _)) => Err(Error::InvalidConfig(format!("{name} must be positive"))),
        None => Ok(()),
    }
}

fn expect_shape(params: &ParameterSet, name: &str, shape: &[usize]) -> Result<Tensor> {
    let t = params.get(name)?;
    if t.shape() != shape {
        return Err(Error::ShapeMismatch {
            op: "load parameter",
            lhs: shape.to_vec(),
            rhs: t.shape().to_vec(),
        });
    }
    Ok(t.clone())
}

// ---- convolution -------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Conv1dLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    /// `[out, in, kernel]`
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Conv1dLayer {
    pub fn init(in_channels: usize, out_channels: usize, kernel_size: usize, rng: &mut impl Rng) -> Result<Self> {
        positive(&[
            ("in_channels", in_channels),
            ("out_channels", out_channels),
            ("kernel_size", kernel_size),
        ])?;
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            weights: glorot(
                &[out_channels, in_channels, kernel_size],
                in_channels * kernel_size,
                out_channels * kernel_size,
                rng,
            ),
            bias: Tensor::zeros(&[out_channels]),
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn export(&self, prefix: &str) -> ParameterSet {
        [
            (format!("{prefix}.weight"), self.weights.clone()),
            (format!("{prefix}.bias"), self.bias.clone()),
        ]
        .into_iter()
        .collect()
    }

    pub fn from_params(params: &ParameterSet, prefix: &str) -> Result<Self> {
        let w = params.get(&format!("{prefix}.weight"))?;
        let &[out_channels, in_channels, kernel_size] = w.shape() else {
            return Err(Error::ShapeMismatch {
                op: "conv1d weight",
                lhs: vec![0, 0, 0],
                rhs: w.shape().to_vec(),
            });
        };
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            weights: w.clone(),
            bias: expect_shape(params, &format!("{prefix}.bias"), &[out_channels])?,
        })
    }
}

/// Valid (unpadded) 1-D correlation along time.
///
/// `x: [batch, time, in]`, `weight: [out, in, k]`, `bias: [out]` gives
/// `[batch, time - k + 1, out]`.
pub fn conv1d_time_major(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let &[batch, time, channels] = tape.shape(x)? else {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            lhs: vec![0, 0, 0],
            rhs: tape.shape(x)?.to_vec(),
        });
    };
    let wshape = tape.shape(weight)?.to_vec();
    let &[out, in_ch, k] = wshape.as_slice() else {
        return Err(Error::ShapeMismatch {
            op: "conv1d weight",
            lhs: vec![0, 0, 0],
            rhs: wshape,
        });
    };
    if in_ch != channels {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            lhs: wshape,
            rhs: vec![batch, time, channels],
        });
    }
    if time < k {
        return Err(Error::SequenceTooShort {
            what: "conv1d",
            needed: k,
            got: time,
        });
    }
    let steps = time - k + 1;
    // im2col: row (b, t), column (c, j) reads x[b, t + j, c].
    let mut index = Vec::with_capacity(batch * steps * channels * k);
    for b in 0..batch {
        for t in 0..steps {
            for c in 0..channels {
                for j in 0..k {
                    index.push((b * time + t + j) * channels + c);
                }
            }
        }
    }
    let cols = tape.gather(x, index, &[batch * steps, channels * k])?;
    let w2 = tape.reshape(weight, &[out, channels * k])?;
    let wt = tape.transpose(w2)?;
    let y = tape.matmul(cols, wt)?;
    let y = tape.add(y, bias)?;
    tape.reshape(y, &[batch, steps, out])
}

/// Unbatched convolution: `x: [in, time]` gives `[out, time - k + 1]`.
pub fn conv1d_forward(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let shape = tape.shape(x)?.to_vec();
    let &[channels, time] = shape.as_slice() else {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            lhs: vec![0, 0],
            rhs: shape,
        });
    };
    let xt = tape.transpose(x)?;
    let xb = tape.reshape(xt, &[1, time, channels])?;
    let y = conv1d_time_major(tape, xb, weight, bias)?;
    let &[_, steps, out] = tape.shape(y)? else {
        unreachable!()
    };
    let y = tape.reshape(y, &[steps, out])?;
    tape.transpose(y)
}

// ---- pooling -----------------------------------------------------------------

fn pool_along(tape: &mut Tape, x: Var, axis: usize, pool: usize) -> Result<Var> {
    let shape = tape.shape(x)?.to_vec();
    if pool == 0 {
        return Err(Error::InvalidConfig("pool size must be positive".into()));
    }
    let time = shape[axis];
    if time < pool {
        return Err(Error::SequenceTooShort {
            what: "maxpool1d",
            needed: pool,
            got: time,
        });
    }
    let windows = time / pool;
    let trimmed = tape.slice(x, axis, 0, windows * pool)?;
    let mut split = shape[..axis].to_vec();
    split.extend([windows, pool]);
    split.extend_from_slice(&shape[axis + 1..]);
    let grouped = tape.reshape(trimmed, &split)?;
    tape.reduce(ReduceKind::Max, grouped, Some(axis + 1))
}

/// Non-overlapping max-pool over time for `[batch, time, channels]`;
/// a trailing remainder shorter than `pool` is dropped.
pub fn maxpool_time_major(tape: &mut Tape, x: Var, pool: usize) -> Result<Var> {
    if tape.shape(x)?.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "maxpool",
            lhs: vec![0, 0, 0],
            rhs: tape.shape(x)?.to_vec(),
        });
    }
    pool_along(tape, x, 1, pool)
}

/// Unbatched max-pool: `[channels, time]` gives `[channels, time / pool]`.
pub fn maxpool1d(tape: &mut Tape, x: Var, pool: usize) -> Result<Var> {
    if tape.shape(x)?.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "maxpool",
            lhs: vec![0, 0],
            rhs: tape.shape(x)?.to_vec(),
        });
    }
    pool_along(tape, x, 1, pool)
}

// ---- GRU ---------------------------------------------------------------------

pub const GRU_PARAMS: [&str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];

#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    pub input_size: usize,
    pub hidden_size: usize,
    /// Input weights `[hidden, input]` for the update, reset and candidate paths.
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    /// Recurrent weights `[hidden, hidden]`.
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

impl GruLayer {
    pub fn init(input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Result<Self> {
        positive(&[("input_size", input_size), ("hidden_size", hidden_size)])?;
        let (i, h) = (input_size, hidden_size);
        Ok(Self {
            input_size,
            hidden_size,
            w_z: glorot(&[h, i], i, h, rng),
            w_r: glorot(&[h, i], i, h, rng),
            w_h: glorot(&[h, i], i, h, rng),
            u_z: glorot(&[h, h], h, h, rng),
            u_r: glorot(&[h, h], h, h, rng),
            u_h: glorot(&[h, h], h, h, rng),
            b_z: Tensor::zeros(&[h]),
            b_r: Tensor::zeros(&[h]),
            b_h: Tensor::zeros(&[h]),
        })
    }

    fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r, &self.b_h,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn export(&self, prefix: &str) -> ParameterSet {
        GRU_PARAMS
            .iter()
            .zip(self.tensors())
            .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
            .collect()
    }

    pub fn from_params(params: &ParameterSet, prefix: &str) -> Result<Self> {
        let w_z = params.get(&format!("{prefix}.w_z"))?;
        let &[h, i] = w_z.shape() else {
            return Err(Error::ShapeMismatch {
                op: "gru weight",
                lhs: vec![0, 0],
                rhs: w_z.shape().to_vec(),
            });
        };
        let get = |n: &str, shape: &[usize]| expect_shape(params, &format!("{prefix}.{n}"), shape);
        Ok(Self {
            input_size: i,
            hidden_size: h,
            w_z: w_z.clone(),
            w_r: get("w_r", &[h, i])?,
            w_h: get("w_h", &[h, i])?,
            u_z: get("u_z", &[h, h])?,
            u_r: get("u_r", &[h, h])?,
            u_h: get("u_h", &[h, h])?,
            b_z: get("b_z", &[h])?,
            b_r: get("b_r", &[h])?,
            b_h: get("b_h", &[h])?,
        })
    }
}

/// GRU weights on a tape, with weight matrices pre-transposed for
/// row-vector inputs.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    wt_z: Var,
    wt_r: Var,
    wt_h: Var,
    ut_z: Var,
    ut_r: Var,
    ut_h: Var,
    b_z: Var,
    b_r: Var,
    b_h: Var,
    input_size: usize,
    hidden_size: usize,
}

impl GruVars {
    pub fn bind(tape: &mut Tape, params: &BoundParams, prefix: &str) -> Result<Self> {
        let get = |n: &str| params.get(&format!("{prefix}.{n}"));
        let w_z = get("w_z")?;
        let &[hidden_size, input_size] = tape.shape(w_z)? else {
            return Err(Error::ShapeMismatch {
                op: "gru weight",
                lhs: vec![0, 0],
                rhs: tape.shape(w_z)?.to_vec(),
            });
        };
        let check = |tape: &Tape, v: Var, shape: &[usize]| -> Result<Var> {
            if tape.shape(v)? != shape {
                return Err(Error::ShapeMismatch {
                    op: "gru parameter",
                    lhs: shape.to_vec(),
                    rhs: tape.shape(v)?.to_vec(),
                });
            }
            Ok(v)
        };
        let (h, i) = (hidden_size, input_size);
        let w_r = check(tape, get("w_r")?, &[h, i])?;
        let w_h = check(tape, get("w_h")?, &[h, i])?;
        let u_z = check(tape, get("u_z")?, &[h, h])?;
        let u_r = check(tape, get("u_r")?, &[h, h])?;
        let u_h = check(tape, get("u_h")?, &[h, h])?;
        Ok(Self {
            wt_z: tape.transpose(w_z)?,
            wt_r: tape.transpose(w_r)?,
            wt_h: tape.transpose(w_h)?,
            ut_z: tape.transpose(u_z)?,
            ut_r: tape.transpose(u_r)?,
            ut_h: tape.transpose(u_h)?,
            b_z: check(tape, get("b_z")?, &[h])?,
            b_r: check(tape, get("b_r")?, &[h])?,
            b_h: check(tape, get("b_h")?, &[h])?,
            input_size,
            hidden_size,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }
}

fn as_rows(tape: &mut Tape, v: Var, width: usize, what: &'static str) -> Result<(Var, bool)> {
    let shape = tape.shape(v)?.to_vec();
    match shape.as_slice() {
        [n] if *n == width => Ok((tape.reshape(v, &[1, width])?, true)),
        [_, n] if *n == width => Ok((v, false)),
        _ => Err(Error::ShapeMismatch {
            op: what,
            lhs: vec![width],
            rhs: shape,
        }),
    }
}

/// One GRU update. `x` is `[input]` or `[batch, input]`, `h_prev` matches
/// with the hidden size.
///
/// z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
/// h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h), h' = z ⊙ h + (1 − z) ⊙ h̃.
pub fn gru_step(tape: &mut Tape, g: &GruVars, x: Var, h_prev: Var) -> Result<Var> {
    let (x, unbatched) = as_rows(tape, x, g.input_size, "gru_step input")?;
    let (h, h_unbatched) = as_rows(tape, h_prev, g.hidden_size, "gru_step state")?;
    if unbatched != h_unbatched || tape.shape(x)?[0] != tape.shape(h)?[0] {
        return Err(Error::ShapeMismatch {
            op: "gru_step",
            lhs: tape.shape(x)?.to_vec(),
            rhs: tape.shape(h)?.to_vec(),
        });
    }
    let gate = |tape: &mut Tape, wt: Var, ut: Var, b: Var| -> Result<Var> {
        let a = tape.matmul(x, wt)?;
        let c = tape.matmul(h, ut)?;
        let s = tape.add(a, c)?;
        let s = tape.add(s, b)?;
        tape.sigmoid(s)
    };
    let z = gate(tape, g.wt_z, g.ut_z, g.b_z)?;
    let r = gate(tape, g.wt_r, g.ut_r, g.b_r)?;
    let xh = tape.matmul(x, g.wt_h)?;
    let rh = tape.mul(r, h)?;
    let rhu = tape.matmul(rh, g.ut_h)?;
    let cand = tape.add(xh, rhu)?;
    let cand = tape.add(cand, g.b_h)?;
    let cand = tape.tanh(cand)?;
    let keep = tape.mul(z, h)?;
    let one_minus_z = tape.rsub_scalar(1.0, z)?;
    let update = tape.mul(one_minus_z, cand)?;
    let out = tape.add(keep, update)?;
    if unbatched {
        tape.reshape(out, &[g.hidden_size])
    } else {
        Ok(out)
    }
}

/// Runs the GRU from a zero state and returns the final hidden state.
///
/// `xs` is `[batch, time, input]` (result `[batch, hidden]`) or the
/// unbatched `[input, time]` (result `[hidden]`).
pub fn gru_forward(tape: &mut Tape, g: &GruVars, xs: Var) -> Result<Var> {
    let shape = tape.shape(xs)?.to_vec();
    let (seq, batch, unbatched) = match *shape.as_slice() {
        [b, _, i] if i == g.input_size => (xs, b, false),
        [i, t] if i == g.input_size => {
            let xt = tape.transpose(xs)?;
            (tape.reshape(xt, &[1, t, i])?, 1, true)
        }
        _ => {
            return Err(Error::ShapeMismatch {
                op: "gru_forward",
                lhs: vec![g.input_size],
                rhs: shape,
            })
        }
    };
    let time = tape.shape(seq)?[1];
    if time == 0 {
        return Err(Error::SequenceTooShort {
            what: "gru_forward",
            needed: 1,
            got: 0,
        });
    }
    let mut h = tape.constant(Tensor::zeros(&[batch, g.hidden_size]));
    for t in 0..time {
        let step = tape.slice(seq, 1, t, 1)?;
        let x_t = tape.reshape(step, &[batch, g.input_size])?;
        h = gru_step(tape, g, x_t, h)?;
    }
    if unbatched {
        tape.reshape(h, &[g.hidden_size])
    } else {
        Ok(h)
    }
}

// ---- dense -------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `[out, in]`
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        positive(&[("inputs", inputs), ("outputs", outputs)])?;
        Ok(Self {
            weights: glorot(&[outputs, inputs], inputs, outputs, rng),
            bias: Tensor::zeros(&[outputs]),
            activation,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn export(&self, prefix: &str) -> ParameterSet {
        [
            (format!("{prefix}.weight"), self.weights.clone()),
            (format!("{prefix}.bias"), self.bias.clone()),
        ]
        .into_iter()
        .collect()
    }

    pub fn from_params(params: &ParameterSet, prefix: &str, activation: Activation) -> Result<Self> {
        let w = params.get(&format!("{prefix}.weight"))?;
        let &[out, _] = w.shape() else {
            return Err(Error::ShapeMismatch {
                op: "dense weight",
                lhs: vec![0, 0],
                rhs: w.shape().to_vec(),
            });
        };
        Ok(Self {
            weights: w.clone(),
            bias: expect_shape(params, &format!("{prefix}.bias"), &[out])?,
            activation,
        })
    }
}

/// `activation(W x + b)` for `x: [in]` or `[batch, in]`.
pub fn dense_forward(tape: &mut Tape, weight: Var, bias: Var, activation: Activation, x: Var) -> Result<Var> {
    let wshape = tape.shape(weight)?.to_vec();
    let &[out, inputs] = wshape.as_slice() else {
        return Err(Error::ShapeMismatch {
            op: "dense weight",
            lhs: vec![0, 0],
            rhs: wshape,
        });
    };
    if tape.shape(bias)? != [out] {
        return Err(Error::ShapeMismatch {
            op: "dense bias",
            lhs: vec![out],
            rhs: tape.shape(bias)?.to_vec(),
        });
    }
    let (rows, unbatched) = as_rows(tape, x, inputs, "dense input")?;
    let wt = tape.transpose(weight)?;
    let y = tape.matmul(rows, wt)?;
    let y = tape.add(y, bias)?;
    let y = match activation {
        Activation::Tanh => tape.tanh(y)?,
        Activation::Identity => y,
    };
    if unbatched {
        tape.reshape(y, &[out])
    } else {
        Ok(y)
    }
}

// ---- seeded initialization ---------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
    },
    Gru {
        input_size: usize,
        hidden_size: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Layer {
    Conv1d(Conv1dLayer),
    Gru(GruLayer),
    Dense(DenseLayer),
}

impl Layer {
    pub fn num_parameters(&self) -> usize {
        match self {
            Layer::Conv1d(l) => l.num_parameters(),
            Layer::Gru(l) => l.num_parameters(),
            Layer::Dense(l) => l.num_parameters(),
        }
    }

    pub fn export(&self, prefix: &str) -> ParameterSet {
        match self {
            Layer::Conv1d(l) => l.export(prefix),
            Layer::Gru(l) => l.export(prefix),
            Layer::Dense(l) => l.export(prefix),
        }
    }
}

impl LayerSpec {
    pub fn init(&self, rng: &mut impl Rng) -> Result<Layer> {
        Ok(match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
            } => Layer::Conv1d(Conv1dLayer::init(in_channels, out_channels, kernel_size, rng)?),
            LayerSpec::Gru {
                input_size,
                hidden_size,
            } => Layer::Gru(GruLayer::init(input_size, hidden_size, rng)?),
            LayerSpec::Dense {
                inputs,
                outputs,
                activation,
            } => Layer::Dense(DenseLayer::init(inputs, outputs, activation, rng)?),
        })
    }
}

/// Glorot-uniform weights and zero biases, fully determined by `seed`.
pub fn init_parameters(spec: &LayerSpec, seed: u64) -> Result<Layer> {
    spec.init(&mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradient_check;

    fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv1d_difference_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(tensor(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.constant(tensor(&[1, 1, 3], &[1.0, 0.0, -1.0]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = conv1d_forward(&mut tape, x, w, b).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[-2.0, -2.0]);
    }

    #[test]
    fn conv1d_identity_kernel_crops() {
        let mut tape = Tape::new();
        let xs = [0.5, -1.0, 2.0, 7.0, 3.0];
        let x = tape.constant(tensor(&[1, 5], &xs));
        let w = tape.constant(tensor(&[1, 1, 3], &[0.0, 1.0, 0.0]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = conv1d_forward(&mut tape, x, w, b).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &xs[1..4]);
    }

    #[test]
    fn conv1d_default_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Conv1dLayer::init(63, 25, 3, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[63, 20]));
        let w = tape.constant(layer.weights.clone());
        let b = tape.constant(layer.bias.clone());
        let y = conv1d_forward(&mut tape, x, w, b).unwrap();
        assert_eq!(tape.shape(y).unwrap(), &[25, 18]);
    }

    #[test]
    fn conv1d_rejects_short_input() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 2]));
        let w = tape.constant(Tensor::ones(&[1, 1, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(matches!(
            conv1d_forward(&mut tape, x, w, b),
            Err(Error::SequenceTooShort { .. })
        ));
    }

    #[test]
    fn maxpool_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(tensor(&[1, 4], &[1.0, 3.0, 2.0, 5.0]));
        let y = maxpool1d(&mut tape, x, 2).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[3.0, 5.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().unwrap().data(), &[0.0, 1.0, 0.0, 1.0]);

        let x5 = tape.constant(tensor(&[1, 5], &[1.0, 3.0, 2.0, 5.0, 9.0]));
        let y5 = maxpool1d(&mut tape, x5, 2).unwrap();
        assert_eq!(tape.value(y5).unwrap().data(), &[3.0, 5.0]);

        let short = tape.constant(tensor(&[1, 1], &[1.0]));
        assert!(maxpool1d(&mut tape, short, 2).is_err());
    }

    #[test]
    fn batched_pool_matches_unbatched() {
        let data: Vec<f64> = (0..2 * 7 * 3).map(|i| ((i * 37) % 11) as f64).collect();
        let mut tape = Tape::new();
        let xb = tape.constant(tensor(&[2, 7, 3], &data));
        let yb = maxpool_time_major(&mut tape, xb, 2).unwrap();
        assert_eq!(tape.shape(yb).unwrap(), &[2, 3, 3]);
        for b in 0..2 {
            // [time, channels] -> [channels, time]
            let mut ct = vec![0.0; 21];
            for t in 0..7 {
                for c in 0..3 {
                    ct[c * 7 + t] = data[(b * 7 + t) * 3 + c];
                }
            }
            let x = tape.constant(tensor(&[3, 7], &ct));
            let y = maxpool1d(&mut tape, x, 2).unwrap();
            let y = tape.value(y).unwrap().clone();
            let yb_val = tape.value(yb).unwrap();
            for t in 0..3 {
                for c in 0..3 {
                    assert_eq!(yb_val.at(&[b, t, c]), y.at(&[c, t]));
                }
            }
        }
    }

    fn gru_params(layer: &GruLayer) -> ParameterSet {
        layer.export("gru")
    }

    #[test]
    fn gru_zero_layer_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = GruLayer::init(3, 4, &mut rng).unwrap();
        for t in [
            &mut layer.w_z,
            &mut layer.w_r,
            &mut layer.w_h,
            &mut layer.u_z,
            &mut layer.u_r,
            &mut layer.u_h,
        ] {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let bound = tape.bind(&gru_params(&layer));
        let g = GruVars::bind(&mut tape, &bound, "gru").unwrap();
        let x = tape.constant(tensor(&[3], &[0.3, -2.0, 1.0]));
        let h0 = tape.constant(Tensor::zeros(&[4]));
        let h1 = gru_step(&mut tape, &g, x, h0).unwrap();
        assert!(tape.value(h1).unwrap().data().iter().all(|&v| v == 0.0));

        let xs = tape.constant(tensor(&[3, 5], &[0.7; 15]));
        let hn = gru_forward(&mut tape, &g, xs).unwrap();
        assert!(tape.value(hn).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_saturated_update_gate_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = GruLayer::init(3, 4, &mut rng).unwrap();
        layer.b_z = Tensor::full(&[4], 50.0);
        let mut tape = Tape::new();
        let bound = tape.bind(&gru_params(&layer));
        let g = GruVars::bind(&mut tape, &bound, "gru").unwrap();
        let prev = [0.3, -0.8, 0.1, 0.95];
        let x = tape.constant(tensor(&[3], &[1.5, -0.4, 0.2]));
        let h0 = tape.constant(tensor(&[4], &prev));
        let h1 = gru_step(&mut tape, &g, x, h0).unwrap();
        for (a, b) in tape.value(h1).unwrap().data().iter().zip(prev) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn gru_single_step_sequence_equals_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = GruLayer::init(3, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&gru_params(&layer));
        let g = GruVars::bind(&mut tape, &bound, "gru").unwrap();
        let xv = [0.2, -0.1, 0.9];
        let xs = tape.constant(tensor(&[3, 1], &xv));
        let a = gru_forward(&mut tape, &g, xs).unwrap();
        let x = tape.constant(tensor(&[3], &xv));
        let h0 = tape.constant(Tensor::zeros(&[2]));
        let b = gru_step(&mut tape, &g, x, h0).unwrap();
        assert_eq!(tape.value(a).unwrap(), tape.value(b).unwrap());

        let empty = tape.constant(Tensor::zeros(&[3, 0]));
        assert!(gru_forward(&mut tape, &g, empty).is_err());
    }

    #[test]
    fn gru_step_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = GruLayer::init(3, 3, &mut rng).unwrap();
        let mut p = gru_params(&layer);
        // Non-zero biases so their gradients are exercised away from symmetry.
        for (i, n) in ["b_z", "b_r", "b_h"].iter().enumerate() {
            p.insert(format!("gru.{n}"), Tensor::from_vec(vec![0.1 * i as f64, -0.2, 0.3]));
        }
        p.insert("x", Tensor::from_vec(vec![0.5, -1.2, 0.8]));
        p.insert("h", Tensor::from_vec(vec![0.1, 0.4, -0.6]));
        let r = gradient_check(
            |tape, b| {
                let g = GruVars::bind(tape, b, "gru")?;
                let h = gru_step(tape, &g, b.get("x")?, b.get("h")?)?;
                let w = tape.constant(Tensor::from_vec(vec![1.0, -0.7, 0.4]));
                let hw = tape.mul(h, w)?;
                tape.sum(hw)
            },
            &p,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn dense_examples() {
        let mut tape = Tape::new();
        let w = tape.constant(tensor(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let x = tape.constant(tensor(&[2], &[0.3, -4.0]));
        let y = dense_forward(&mut tape, w, b, Activation::Identity, x).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[0.3, -4.0]);

        let w = tape.constant(tensor(&[1, 2], &[1.0, 1.0]));
        let b = tape.constant(tensor(&[1], &[0.5]));
        let x = tape.constant(tensor(&[2], &[1.0, 2.0]));
        let y = dense_forward(&mut tape, w, b, Activation::Identity, x).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[3.5]);

        let bad = tape.constant(tensor(&[3], &[1.0, 2.0, 3.0]));
        assert!(dense_forward(&mut tape, w, b, Activation::Identity, bad).is_err());
    }

    #[test]
    fn dense_tanh_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = DenseLayer::init(5, 2, Activation::Tanh, &mut rng).unwrap();
        let mut p = layer.export("fc");
        p.insert(
            "x",
            Tensor::new(vec![3, 5], (0..15).map(|i| (i as f64).sin()).collect()).unwrap(),
        );
        let r = gradient_check(
            |tape, b| {
                let y = dense_forward(
                    tape,
                    b.get("fc.weight")?,
                    b.get("fc.bias")?,
                    Activation::Tanh,
                    b.get("x")?,
                )?;
                let w = tape.constant(Tensor::from_vec(vec![0.9, -1.3]));
                let yw = tape.mul(y, w)?;
                tape.sum(yw)
            },
            &p,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn init_is_deterministic_and_sized() {
        let spec = LayerSpec::Dense {
            inputs: 5,
            outputs: 2,
            activation: Activation::Tanh,
        };
        let a = init_parameters(&spec, 9).unwrap();
        let b = init_parameters(&spec, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_parameters(), 12);
        let c = init_parameters(&spec, 10).unwrap();
        assert_ne!(a, c);
        assert!(init_parameters(
            &LayerSpec::Gru {
                input_size: 0,
                hidden_size: 1
            },
            0
        )
        .is_err());
    }

    #[test]
    fn glorot_sample_mean_within_three_sigma() {
        let (fan_in, fan_out) = (60, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = glorot(&[100, 100], fan_in, fan_out, &mut rng);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        // Uniform(-L, L) has variance L²/3.
        let sigma_of_mean = (limit * limit / 3.0 / n).sqrt();
        assert!(mean.abs() < 3.0 * sigma_of_mean, "mean {mean}");
        assert!(t.data().iter().all(|v| v.abs() <= limit));
    }
}
