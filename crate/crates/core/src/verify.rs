//! Finite-difference verification of every layer and loss at random points.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{conv1d_time_major, dense_forward, gru_step, maxpool_time_major, Activation, GruLayer, GruVars};
use crate::losses::{mtl_objective, LossKind};
use crate::model::{build_model, forward, ModelConfig};
use crate::params::ParameterSet;
use crate::task::Task;
use crate::tensor::{gradient_check_with, BoundParams, Tape, Tensor, Var};

pub const GRADCHECK_COMPONENTS: [&str; 8] = [
    "conv1d",
    "maxpool",
    "gru_step",
    "dense",
    "mse",
    "pcc",
    "ccc",
    "mtl_objective",
];
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;

/// Problem sizes for the layer checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradCheckSizes {
    pub batch: usize,
    pub time: usize,
    pub channels: usize,
    pub hidden: usize,
}

impl Default for GradCheckSizes {
    fn default() -> Self {
        Self {
            batch: 3,
            time: 8,
            channels: 4,
            hidden: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub seed: u64,
    /// Random points per component.
    pub points: usize,
    pub sizes: GradCheckSizes,
    /// Perturbs the analytic gradient of this component, to confirm the
    /// harness notices a broken backward rule.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            points: 5,
            sizes: GradCheckSizes::default(),
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentCheck {
    pub component: String,
    pub points: usize,
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSuite {
    pub seed: u64,
    pub tolerance: f64,
    pub components: Vec<ComponentCheck>,
}

impl GradCheckSuite {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.components
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.component.as_str())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let width = self.components.iter().map(|c| c.component.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.components {
            out.push_str(&format!(
                "{:<width$}  max_rel_error {:.3e}  points {}  {}\n",
                c.component,
                c.max_rel_error,
                c.points,
                if c.passed { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .expect("shape and data agree")
}

/// Entries at least 0.05 apart, so no pooling window is within a
/// finite-difference step of a tie.
fn tie_free(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 + rng.random_range(0.0..0.05)).collect();
    v.shuffle(rng);
    let shift = n as f64 * 0.05;
    Tensor::new(shape.to_vec(), v.into_iter().map(|x| x - shift).collect()).expect("shape and data agree")
}

/// `Σ y ⊙ w` for a fixed random `w`, so every output gets a distinct weight.
fn project(tape: &mut Tape, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let shape = tape.shape(y)?.to_vec();
    let w = tape.constant(uniform(rng, &shape, 1.0));
    let yw = tape.mul(y, w)?;
    tape.sum(yw)
}

type Objective = Box<dyn Fn(&mut Tape, &BoundParams) -> Result<Var>>;

/// Parameters at one random point and the scalar function to check.
fn problem(component: &str, sizes: GradCheckSizes, rng: &mut ChaCha8Rng) -> Result<(ParameterSet, Objective)> {
    let GradCheckSizes {
        batch,
        time,
        channels,
        hidden,
    } = sizes;
    let mut p = ParameterSet::new();
    let proj_seed: u64 = rng.random();
    let proj = move || ChaCha8Rng::seed_from_u64(proj_seed);
    let f: Objective = match component {
        "conv1d" => {
            let k = 3.min(time);
            p.insert("x", uniform(rng, &[batch, time, channels], 1.0));
            p.insert("weight", uniform(rng, &[hidden, channels, k], 0.8));
            p.insert("bias", uniform(rng, &[hidden], 0.5));
            Box::new(move |tape, b| {
                let y = conv1d_time_major(tape, b.get("x")?, b.get("weight")?, b.get("bias")?)?;
                project(tape, y, &mut proj())
            })
        }
        "maxpool" => {
            p.insert("x", tie_free(rng, &[batch, time, channels]));
            Box::new(move |tape, b| {
                let y = maxpool_time_major(tape, b.get("x")?, 2)?;
                project(tape, y, &mut proj())
            })
        }
        "gru_step" => {
            let mut layer = GruLayer::init(channels, hidden, rng)?;
            for t in [&mut layer.b_z, &mut layer.b_r, &mut layer.b_h] {
                *t = uniform(rng, &[hidden], 0.5);
            }
            p = layer.export("gru");
            p.insert("x", uniform(rng, &[batch, channels], 1.0));
            p.insert("h", uniform(rng, &[batch, hidden], 0.9));
            Box::new(move |tape, b| {
                let g = GruVars::bind(tape, b, "gru")?;
                let h = gru_step(tape, &g, b.get("x")?, b.get("h")?)?;
                project(tape, h, &mut proj())
            })
        }
        "dense" => {
            p.insert("weight", uniform(rng, &[hidden, channels], 0.8));
            p.insert("bias", uniform(rng, &[hidden], 0.5));
            p.insert("x", uniform(rng, &[batch, channels], 1.0));
            Box::new(move |tape, b| {
                let y = dense_forward(tape, b.get("weight")?, b.get("bias")?, Activation::Tanh, b.get("x")?)?;
                project(tape, y, &mut proj())
            })
        }
        "mse" | "pcc" | "ccc" => {
            let kind: LossKind = component.parse()?;
            let n = (batch * time).max(4);
            p.insert("pred", uniform(rng, &[n], 1.0));
            let shift = rng.random_range(-0.5..0.5);
            let reference: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) + shift).collect();
            Box::new(move |tape, b| kind.apply(tape, b.get("pred")?, &reference))
        }
        "mtl_objective" => {
            let config = ModelConfig {
                conv_filters: hidden,
                gru_hidden: hidden,
                ..ModelConfig::mtl(channels, time.max(6))
            };
            p = build_model(&config, rng.random())?;
            // Biases start at zero; move them off it.
            for (name, t) in p.iter_mut() {
                if name.ends_with("bias") || name.contains(".b_") {
                    *t = uniform(rng, t.shape(), 0.3);
                }
            }
            let x = uniform(rng, &[batch.max(4), config.window, channels], 1.0);
            let targets: Vec<Vec<f64>> = (0..Task::ALL.len())
                .map(|_| (0..batch.max(4)).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let weights: Vec<f64> = (0..Task::ALL.len()).map(|_| rng.random_range(0.2..1.0)).collect();
            Box::new(move |tape, b| {
                let xv = tape.constant(x.clone());
                let outs = forward(tape, &config, b, xv)?;
                let losses = outs
                    .iter()
                    .zip(&targets)
                    .map(|(&o, t)| LossKind::Ccc.apply(tape, o, t))
                    .collect::<Result<Vec<_>>>()?;
                mtl_objective(tape, &losses, &weights)
            })
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown gradcheck component `{other}` (expected one of {})",
                GRADCHECK_COMPONENTS.join(", ")
            )))
        }
    };
    Ok((p, f))
}

/// Checks one component at `points` random points.
pub fn check_component(component: &str, options: &GradCheckOptions) -> Result<ComponentCheck> {
    let index = GRADCHECK_COMPONENTS
        .iter()
        .position(|&c| c == component)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown gradcheck component `{component}`")))?;
    let corrupt = options.corrupt.as_deref() == Some(component);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ ((index as u64 + 1) << 32));
    let mut result = ComponentCheck {
        component: component.to_string(),
        points: options.points,
        max_rel_error: 0.0,
        worst: None,
        passed: true,
    };
    for _ in 0..options.points {
        let (point, f) = problem(component, options.sizes, &mut rng)?;
        let report = gradient_check_with(&f, &point, EPS, |g| {
            if corrupt {
                if let Some((_, t)) = g.iter_mut().find(|(_, t)| t.data().iter().any(|&v| v != 0.0)) {
                    let i = t.data().iter().position(|&v| v != 0.0).unwrap_or(0);
                    t.data_mut()[i] *= 1.01;
                }
            }
        })?;
        if report.max_rel_error > result.max_rel_error {
            result.max_rel_error = report.max_rel_error;
            result.worst = report.worst;
        }
    }
    result.passed = result.max_rel_error < GRADCHECK_TOLERANCE;
    Ok(result)
}

/// Every component in [`GRADCHECK_COMPONENTS`].
pub fn run_gradcheck_suite(options: &GradCheckOptions) -> Result<GradCheckSuite> {
    if options.points == 0 {
        return Err(Error::InvalidConfig("gradcheck needs at least one point".into()));
    }
    if let Some(c) = &options.corrupt {
        if !GRADCHECK_COMPONENTS.contains(&c.as_str()) {
            return Err(Error::InvalidConfig(format!("unknown gradcheck component `{c}`")));
        }
    }
    let s = options.sizes;
    if s.batch == 0 || s.time < 3 || s.channels == 0 || s.hidden == 0 {
        return Err(Error::InvalidConfig(
            "gradcheck sizes need batch, channels, hidden ≥ 1 and time ≥ 3".into(),
        ));
    }
    let components = GRADCHECK_COMPONENTS
        .iter()
        .map(|c| check_component(c, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCheckSuite {
        seed: options.seed,
        tolerance: GRADCHECK_TOLERANCE,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes_and_is_reproducible() {
        let opts = GradCheckOptions::default();
        let a = run_gradcheck_suite(&opts).unwrap();
        assert!(a.passed(), "{}", a.to_text());
        assert_eq!(a.components.len(), GRADCHECK_COMPONENTS.len());
        assert_eq!(a, run_gradcheck_suite(&opts).unwrap());
    }

    #[test]
    fn corruption_is_caught_for_every_component() {
        for c in GRADCHECK_COMPONENTS {
            let opts = GradCheckOptions {
                points: 1,
                corrupt: Some(c.to_string()),
                ..GradCheckOptions::default()
            };
            let r = check_component(c, &opts).unwrap();
            assert!(!r.passed, "{c}: {r:?}");
        }
    }

    #[test]
    fn rejects_unknown_component_and_bad_sizes() {
        let bad = GradCheckOptions {
            corrupt: Some("attention".into()),
            ..GradCheckOptions::default()
        };
        assert!(run_gradcheck_suite(&bad).is_err());
        let tiny = GradCheckOptions {
            sizes: GradCheckSizes {
                time: 2,
                ..GradCheckSizes::default()
            },
            ..GradCheckOptions::default()
        };
        assert!(run_gradcheck_suite(&tiny).is_err());
    }
}
