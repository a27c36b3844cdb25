//! The CER network: a shared convolution + max-pool trunk feeding one
//! GRU → dense(tanh) → linear branch per task.
//!
//! Parameter names are `trunk.conv.{weight,bias}` and
//! `task.<act|val|dom>.{gru.*,fc.*,head.*}`.

mod checkpoint;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    conv1d_time_major, dense_forward, gru_forward, maxpool_time_major, Activation, Conv1dLayer, DenseLayer, GruLayer,
    GruVars,
};
use crate::params::ParameterSet;
use crate::task::Task;
use crate::tensor::{BoundParams, Tape, Tensor, Var};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_VERSION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mtl,
    Stl,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mtl => "mtl",
            Mode::Stl => "stl",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mtl" => Ok(Mode::Mtl),
            "stl" => Ok(Mode::Stl),
            _ => Err(Error::InvalidConfig(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature rows `P` of the input image.
    pub input_dim: usize,
    /// Columns `N` of the input image.
    pub window: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub pool_size: usize,
    pub gru_hidden: usize,
    pub fc_width: usize,
    pub tasks: Vec<Task>,
    pub mode: Mode,
}

impl ModelConfig {
    /// Multi-task network over all three tasks with the published sizes.
    pub fn mtl(input_dim: usize, window: usize) -> Self {
        Self {
            input_dim,
            window,
            conv_filters: 25,
            conv_kernel: 3,
            pool_size: 2,
            gru_hidden: 5,
            fc_width: 2,
            tasks: Task::ALL.to_vec(),
            mode: Mode::Mtl,
        }
    }

    pub fn stl(input_dim: usize, window: usize, task: Task) -> Self {
        Self {
            tasks: vec![task],
            mode: Mode::Stl,
            ..Self::mtl(input_dim, window)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("window", self.window),
            ("conv_filters", self.conv_filters),
            ("conv_kernel", self.conv_kernel),
            ("pool_size", self.pool_size),
            ("gru_hidden", self.gru_hidden),
            ("fc_width", self.fc_width),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.pooled_len() == 0 {
            return Err(Error::InvalidConfig(format!(
                "window {} leaves no time steps after conv kernel {} and pool {}",
                self.window, self.conv_kernel, self.pool_size
            )));
        }
        if self.tasks.is_empty() {
            return Err(Error::InvalidConfig("at least one task is required".into()));
        }
        let mut seen = self.tasks.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.tasks.len() {
            return Err(Error::InvalidConfig("tasks must be distinct".into()));
        }
        if self.mode == Mode::Stl && self.tasks.len() != 1 {
            return Err(Error::InvalidConfig("single-task mode needs exactly one task".into()));
        }
        Ok(())
    }

    /// Time steps after the convolution.
    pub fn conv_len(&self) -> usize {
        (self.window + 1).saturating_sub(self.conv_kernel)
    }

    /// Time steps seen by each GRU.
    pub fn pooled_len(&self) -> usize {
        self.conv_len() / self.pool_size
    }
}

pub const TRUNK_CONV: &str = "trunk.conv";

pub fn branch_prefix(task: Task) -> String {
    format!("task.{}", task.short())
}

/// Glorot-uniform weights and zero biases; trunk first, then each branch in
/// task order.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<ParameterSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params =
        Conv1dLayer::init(config.input_dim, config.conv_filters, config.conv_kernel, &mut rng)?.export(TRUNK_CONV);
    for &task in &config.tasks {
        let p = branch_prefix(task);
        params.extend(GruLayer::init(config.conv_filters, config.gru_hidden, &mut rng)?.export(&format!("{p}.gru")))?;
        params.extend(
            DenseLayer::init(config.gru_hidden, config.fc_width, Activation::Tanh, &mut rng)?
                .export(&format!("{p}.fc")),
        )?;
        params.extend(
            DenseLayer::init(config.fc_width, 1, Activation::Identity, &mut rng)?.export(&format!("{p}.head")),
        )?;
    }
    Ok(params)
}

/// Checks that `params` has exactly the tensors `config` implies.
pub fn check_parameters(config: &ModelConfig, params: &ParameterSet) -> Result<()> {
    let expected = build_model(config, 0)?;
    for (name, t) in expected.iter() {
        let got = params.get(name)?;
        if got.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                op: "model parameter",
                lhs: t.shape().to_vec(),
                rhs: got.shape().to_vec(),
            });
        }
    }
    if let Some(extra) = params.names().find(|n| !expected.contains(n)) {
        return Err(Error::ConfigMismatch(format!("unexpected parameter `{extra}`")));
    }
    Ok(())
}

/// Differentiable forward pass over a batch `x: [batch, N, P]` (columns
/// time-major, features last). Returns one `[batch]` prediction per task, in
/// `config.tasks` order.
pub fn forward(tape: &mut Tape, config: &ModelConfig, params: &BoundParams, x: Var) -> Result<Vec<Var>> {
    let shape = tape.shape(x)?.to_vec();
    let batch = match shape.as_slice() {
        &[b, n, p] if n == config.window && p == config.input_dim => b,
        _ => {
            return Err(Error::ShapeMismatch {
                op: "model input",
                lhs: vec![0, config.window, config.input_dim],
                rhs: shape,
            })
        }
    };
    let conv = conv1d_time_major(
        tape,
        x,
        params.get(&format!("{TRUNK_CONV}.weight"))?,
        params.get(&format!("{TRUNK_CONV}.bias"))?,
    )?;
    let pooled = maxpool_time_major(tape, conv, config.pool_size)?;
    config
        .tasks
        .iter()
        .map(|&task| {
            let p = branch_prefix(task);
            let gru = GruVars::bind(tape, params, &format!("{p}.gru"))?;
            let h = gru_forward(tape, &gru, pooled)?;
            let fc = dense_forward(
                tape,
                params.get(&format!("{p}.fc.weight"))?,
                params.get(&format!("{p}.fc.bias"))?,
                Activation::Tanh,
                h,
            )?;
            let y = dense_forward(
                tape,
                params.get(&format!("{p}.head.weight"))?,
                params.get(&format!("{p}.head.bias"))?,
                Activation::Identity,
                fc,
            )?;
            tape.reshape(y, &[batch])
        })
        .collect()
}

/// Inference on a `[batch, N, P]` tensor; one prediction vector per task.
pub fn predict(config: &ModelConfig, params: &ParameterSet, x: &Tensor) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let bound = tape.bind_frozen(params);
    let input = tape.constant(x.clone());
    let outs = forward(&mut tape, config, &bound, input)?;
    outs.into_iter().map(|v| Ok(tape.value(v)?.data().to_vec())).collect()
}

/// Inference on a single `P×N` feature image.
pub fn predict_image(config: &ModelConfig, params: &ParameterSet, image: &Tensor) -> Result<Vec<f64>> {
    let t = image.transpose()?;
    let shape = [1, t.shape()[0], t.shape()[1]];
    let x = t.reshape(&shape)?;
    Ok(predict(config, params, &x)?.into_iter().map(|v| v[0]).collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub total: usize,
    /// Scalars per layer (parameter name without its last component).
    pub per_layer: BTreeMap<String, usize>,
    pub per_tensor: BTreeMap<String, usize>,
}

pub fn count_parameters(params: &ParameterSet) -> ParameterCount {
    let mut per_layer = BTreeMap::new();
    let mut per_tensor = BTreeMap::new();
    for (name, t) in params.iter() {
        let layer = name.rsplit_once('.').map_or(name, |(l, _)| l);
        *per_layer.entry(layer.to_string()).or_insert(0) += t.len();
        per_tensor.insert(name.to_string(), t.len());
    }
    ParameterCount {
        total: params.num_scalars(),
        per_layer,
        per_tensor,
    }
}
