use serde::{Deserialize, Serialize};

use super::dataset::FramedData;
use super::trainer::{evaluate, train, Evaluation, TrainConfig, TrainOutcome};
use crate::data::{split_sessions, Modality, Preprocessing, Recording, RecordingInfo, SessionSplit};
use crate::error::{Error, Result};
use crate::model::{build_model, Mode, ModelConfig};
use crate::task::Task;

/// Everything needed to train and score one configuration on a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Columns `N` per feature image.
    pub window: usize,
    /// Frames `t` between image columns.
    pub stride: usize,
    pub modalities: Vec<Modality>,
    pub mode: Mode,
    pub tasks: Vec<Task>,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub pool_size: usize,
    pub gru_hidden: usize,
    pub fc_width: usize,
    /// Every `sample_hop`-th frame is a validation/test sample. Training
    /// draws `frames / sample_hop` fresh centers from all frames each epoch
    /// unless `train.samples_per_epoch` says otherwise.
    pub sample_hop: usize,
    pub folds: usize,
    pub test_fold: usize,
    pub val_fold: usize,
    pub split_seed: u64,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = ModelConfig::mtl(0, 20);
        Self {
            window: m.window,
            stride: 10,
            modalities: vec![Modality::Speech, Modality::Body],
            mode: Mode::Mtl,
            tasks: Task::ALL.to_vec(),
            conv_filters: m.conv_filters,
            conv_kernel: m.conv_kernel,
            pool_size: m.pool_size,
            gru_hidden: m.gru_hidden,
            fc_width: m.fc_width,
            sample_hop: 1,
            folds: 5,
            test_fold: 0,
            val_fold: 1,
            split_seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Network for `tasks` over inputs of `input_dim` rows.
    pub fn model_config(&self, input_dim: usize, tasks: Vec<Task>, mode: Mode) -> ModelConfig {
        ModelConfig {
            input_dim,
            window: self.window,
            conv_filters: self.conv_filters,
            conv_kernel: self.conv_kernel,
            pool_size: self.pool_size,
            gru_hidden: self.gru_hidden,
            fc_width: self.fc_width,
            tasks,
            mode,
        }
    }

    /// One model for MTL; one single-task model per task for STL.
    pub fn model_configs(&self, input_dim: usize) -> Vec<ModelConfig> {
        match self.mode {
            Mode::Mtl => vec![self.model_config(input_dim, self.tasks.clone(), Mode::Mtl)],
            Mode::Stl => self
                .tasks
                .iter()
                .map(|&t| self.model_config(input_dim, vec![t], Mode::Stl))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 3 {
            return Err(Error::InvalidConfig(
                "need at least 3 folds (train, validation, test)".into(),
            ));
        }
        if self.test_fold >= self.folds || self.val_fold >= self.folds || self.test_fold == self.val_fold {
            return Err(Error::InvalidConfig(format!(
                "test fold {} and validation fold {} must differ and be below {}",
                self.test_fold, self.val_fold, self.folds
            )));
        }
        if self.sample_hop == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig("sample_hop and stride must be positive".into()));
        }
        self.train.validate()?;
        for m in self.model_configs(1) {
            m.validate()?;
        }
        Ok(())
    }
}

/// Recording indices of each role, plus the split they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub split: SessionSplit,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Partition {
    pub fn select<'a>(recordings: &'a [Recording], ids: &[String]) -> Vec<&'a Recording> {
        recordings.iter().filter(|r| ids.contains(&r.id)).collect()
    }
}

pub fn partition(recordings: &[Recording], config: &ExperimentConfig) -> Result<Partition> {
    config.validate()?;
    let infos: Vec<RecordingInfo> = recordings
        .iter()
        .map(|r| RecordingInfo {
            id: r.id.clone(),
            speakers: r.speakers.clone(),
            frames: r.len(),
        })
        .collect();
    let split = split_sessions(&infos, config.folds, config.split_seed)?;
    let test = split.folds[config.test_fold].clone();
    let val = split.folds[config.val_fold].clone();
    let train = recordings
        .iter()
        .map(|r| r.id.clone())
        .filter(|id| !test.contains(id) && !val.contains(id))
        .collect();
    Ok(Partition {
        split,
        train,
        val,
        test,
    })
}

/// One trained network and its held-out scores.
#[derive(Clone, Debug)]
pub struct ModelRun {
    pub outcome: TrainOutcome,
    pub test: Evaluation,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub partition: Partition,
    pub preprocessing: Preprocessing,
    pub runs: Vec<ModelRun>,
}

impl ExperimentResult {
    /// Held-out CCC of `task` from whichever run predicts it.
    pub fn test_ccc(&self, task: Task) -> Option<f64> {
        self.runs.iter().find_map(|r| r.test.ccc_of(task))
    }
}

/// Splits, normalizes on the training fold, trains, and scores on the test
/// fold. Model initialization uses `config.train.seed`.
pub fn run_experiment(recordings: &[Recording], config: &ExperimentConfig) -> Result<ExperimentResult> {
    let partition = partition(recordings, config)?;
    let train_recs = Partition::select(recordings, &partition.train);
    let preprocessing = Preprocessing::fit(train_recs.iter().copied(), &config.modalities, config.stride)?;
    let framed = |ids: &[String], hop: usize| {
        FramedData::new(Partition::select(recordings, ids), &preprocessing, config.window, hop)
    };
    let train_data = framed(&partition.train, 1)?;
    let val_data = framed(&partition.val, config.sample_hop)?;
    let test_data = framed(&partition.test, config.sample_hop)?;
    let per_epoch = config
        .train
        .samples_per_epoch
        .unwrap_or_else(|| train_data.len().div_ceil(config.sample_hop));
    let mut runs = Vec::new();
    for model in config.model_configs(preprocessing.input_dim()) {
        let init = build_model(&model, config.train.seed)?;
        let train_config = match model.mode {
            Mode::Mtl => config.train.clone(),
            Mode::Stl => TrainConfig {
                mtl_weights: None,
                ..config.train.clone()
            },
        };
        let train_config = TrainConfig {
            samples_per_epoch: Some(per_epoch),
            ..train_config
        };
        let outcome = train(
            &model,
            init,
            &train_data,
            &val_data,
            &train_config,
            Some(&preprocessing),
        )?;
        let weights = train_config.weights(model.tasks.len())?;
        let test = evaluate(&model, &outcome.best.params, &test_data, config.train.loss, &weights)?;
        runs.push(ModelRun { outcome, test });
    }
    Ok(ExperimentResult {
        partition,
        preprocessing,
        runs,
    })
}
