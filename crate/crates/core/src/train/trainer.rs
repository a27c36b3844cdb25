use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::dataset::FramedData;
use crate::data::Preprocessing;
use crate::error::{Error, Result};
use crate::losses::{loss_value, mse_loss, mtl_objective, LossKind};
use crate::metrics::{ccc, pcc};
use crate::model::{forward, predict, Checkpoint, ModelConfig, RngState};
use crate::params::ParameterSet;
use crate::task::Task;
use crate::tensor::{Tape, Var};

/// Keeps the shuffle stream apart from the initialization stream.
const SHUFFLE_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss: LossKind,
    /// Task weights `α`, in model task order; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mtl_weights: Option<Vec<f64>>,
    /// Centers drawn (without replacement) per epoch; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 256,
            max_epochs: 100,
            patience: 20,
            loss: LossKind::Ccc,
            mtl_weights: None,
            samples_per_epoch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self, tasks: usize) -> Result<Vec<f64>> {
        let w = match &self.mtl_weights {
            Some(w) if w.len() == tasks => w.clone(),
            Some(w) => {
                return Err(Error::LengthMismatch {
                    what: "mtl weights",
                    expected: tasks,
                    got: w.len(),
                })
            }
            None => vec![1.0 / tasks as f64; tasks],
        };
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("mtl weights must be finite".into()));
        }
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch size must be at least 2".into()));
        }
        if self.samples_per_epoch == Some(0) {
            return Err(Error::InvalidConfig("samples_per_epoch must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Tracks the best validation value and epochs since it last improved.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records an epoch; returns whether it is the new best. Non-finite
    /// values never improve.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        let improved = value.is_finite() && self.best.is_none_or(|(_, b)| value < b);
        if improved {
            self.best = Some((epoch, value));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.best.is_some() && self.stale >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_objective: f64,
    pub val_objective: f64,
    pub val_ccc: Vec<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub final_params: ParameterSet,
}

/// Pooled predictions and scores over a whole [`FramedData`].
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub tasks: Vec<Task>,
    pub predictions: Vec<Vec<f64>>,
    pub references: Vec<Vec<f64>>,
    pub ccc: Vec<f64>,
    /// `None` where the prediction is constant.
    pub pcc: Vec<Option<f64>>,
    pub losses: Vec<f64>,
    pub objective: f64,
}

impl Evaluation {
    pub fn ccc_of(&self, task: Task) -> Option<f64> {
        self.tasks.iter().position(|&t| t == task).map(|i| self.ccc[i])
    }
}

/// Degenerate batches fall back to squared error for that task.
fn task_loss(tape: &mut Tape, kind: LossKind, pred: Var, reference: &[f64], task: Task) -> Result<Var> {
    match kind.apply(tape, pred, reference) {
        Err(Error::UndefinedCorrelation) => {
            log::warn!("{kind} undefined on a degenerate {task} batch; using mse");
            mse_loss(tape, pred, reference)
        }
        other => other,
    }
}

fn plain_loss(kind: LossKind, pred: &[f64], reference: &[f64]) -> Result<f64> {
    match loss_value(kind, pred, reference) {
        Err(Error::UndefinedCorrelation) => loss_value(LossKind::Mse, pred, reference),
        other => other,
    }
}

/// Objective value and gradients for one minibatch.
pub fn batch_gradient(
    model: &ModelConfig,
    params: &ParameterSet,
    data: &FramedData,
    samples: &[usize],
    loss: LossKind,
    weights: &[f64],
) -> Result<(f64, ParameterSet)> {
    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let x = tape.constant(data.batch(samples));
    let outputs = forward(&mut tape, model, &bound, x)?;
    let mut losses = Vec::with_capacity(outputs.len());
    for (&task, &out) in model.tasks.iter().zip(&outputs) {
        let reference = data.targets(samples, task)?;
        losses.push(task_loss(&mut tape, loss, out, &reference, task)?);
    }
    let j = mtl_objective(&mut tape, &losses, weights)?;
    let value = tape.value(j)?.item()?;
    tape.backward(j)?;
    Ok((value, bound.gradients(&tape)?))
}

pub fn evaluate(
    model: &ModelConfig,
    params: &ParameterSet,
    data: &FramedData,
    loss: LossKind,
    weights: &[f64],
) -> Result<Evaluation> {
    let mut predictions = vec![Vec::with_capacity(data.len()); model.tasks.len()];
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        for (out, p) in predictions.iter_mut().zip(predict(model, params, &data.batch(chunk))?) {
            out.extend(p);
        }
    }
    let references = model
        .tasks
        .iter()
        .map(|&t| data.targets(&all, t))
        .collect::<Result<Vec<_>>>()?;
    let mut eval = Evaluation {
        tasks: model.tasks.clone(),
        ccc: Vec::new(),
        pcc: Vec::new(),
        losses: Vec::new(),
        objective: 0.0,
        predictions,
        references,
    };
    for ((p, r), w) in eval.predictions.iter().zip(&eval.references).zip(weights) {
        eval.ccc.push(ccc(p, r)?);
        eval.pcc.push(pcc(p, r).ok());
        let l = plain_loss(loss, p, r)?;
        eval.objective += w * l;
        eval.losses.push(l);
    }
    Ok(eval)
}

/// Minibatch Adam with early stopping on the validation objective. Returns
/// the checkpoint of the best validation epoch.
pub fn train(
    model: &ModelConfig,
    init: ParameterSet,
    train_data: &FramedData,
    val_data: &FramedData,
    config: &TrainConfig,
    preprocessing: Option<&Preprocessing>,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    let weights = config.weights(model.tasks.len())?;
    let shuffle_seed = config.seed ^ SHUFFLE_SALT;
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut params = init;
    let mut adam = AdamState::new(&params);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let take = config.samples_per_epoch.unwrap_or(order.len()).min(order.len());
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order[..take].chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (j, grads) = batch_gradient(model, &params, train_data, chunk, config.loss, &weights)?;
            if !j.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            adam_step(&mut adam, &mut params, &grads, config.learning_rate)?;
            total += j;
            batches += 1;
        }
        let eval = evaluate(model, &params, val_data, config.loss, &weights)?;
        let record = EpochRecord {
            epoch,
            train_objective: total / batches.max(1) as f64,
            val_objective: eval.objective,
            val_ccc: eval.ccc,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train J {:.5} val J {:.5} val CCC {:?}",
            record.train_objective,
            record.val_objective,
            record.val_ccc
        );
        if stopper.observe(epoch, record.val_objective) {
            best = Some(Checkpoint {
                config: model.clone(),
                params: params.clone(),
                epoch,
                val_loss: record.val_objective,
                rng: RngState::capture(shuffle_seed, &rng),
                preprocessing: preprocessing.cloned(),
            });
        }
        log.push(record);
        if stopper.should_stop() {
            log::info!("early stop after epoch {epoch}");
            break;
        }
    }
    let best = best.ok_or_else(|| Error::InvalidConfig("validation objective was never finite".into()))?;
    Ok(TrainOutcome {
        best,
        log,
        final_params: params,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// `epoch,train_j,val_j,val_ccc_<task>…`. Wall time is kept out so the log
/// is reproducible byte for byte; see [`write_epoch_timing`].
pub fn epoch_log_csv(tasks: &[Task], log: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_j,val_j");
    for t in tasks {
        s.push_str(&format!(",val_ccc_{}", t.name()));
    }
    s.push('\n');
    for r in log {
        s.push_str(&format!("{},{},{}", r.epoch, r.train_objective, r.val_objective));
        for c in &r.val_ccc {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
    }
    s
}

pub fn write_epoch_log(path: &Path, tasks: &[Task], log: &[EpochRecord]) -> Result<()> {
    write_file(path, &epoch_log_csv(tasks, log))
}

pub fn write_epoch_timing(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut s = String::from("epoch,wall_time_s\n");
    for r in log {
        s.push_str(&format!("{},{:.6}\n", r.epoch, r.wall_time_s));
    }
    write_file(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_after_patience_and_keeps_epoch_one() {
        let mut s = EarlyStopping::new(20);
        let mut last = 0;
        for epoch in 1..=100 {
            s.observe(epoch, epoch as f64);
            last = epoch;
            if s.should_stop() {
                break;
            }
        }
        assert_eq!(last, 21);
        assert_eq!(s.best(), Some((1, 1.0)));
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = EarlyStopping::new(2);
        assert!(s.observe(1, 1.0));
        assert!(!s.observe(2, 1.0));
        assert!(s.observe(3, 0.5));
        assert!(!s.observe(4, f64::NAN));
        assert!(!s.should_stop());
        assert!(!s.observe(5, 0.7));
        assert!(s.should_stop());
    }

    #[test]
    fn default_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.learning_rate, c.batch_size, c.max_epochs, c.patience),
            (5e-5, 256, 100, 20)
        );
        assert_eq!(c.weights(3).unwrap(), vec![1.0 / 3.0; 3]);
        assert!(c.weights(3).unwrap().iter().all(|&w| w == 1.0 / 3.0));
        let bad = TrainConfig {
            mtl_weights: Some(vec![1.0]),
            ..c
        };
        assert!(bad.weights(3).is_err());
    }
}
