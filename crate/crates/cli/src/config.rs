use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use cer_core::data::{load_manifest, synthetic_corpus, Difficulty, Recording};
use cer_core::model::Mode;
use cer_core::train::{parse_modality_set, ExperimentConfig};
use cer_core::{LossKind, Task};
use clap::Args;
use serde::{Deserialize, Serialize};

/// Where recordings come from: a manifest file, or an in-memory synthetic
/// corpus written as `synth:seed=0,count=40,frames=6000,difficulty=hard`.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Manifest(PathBuf),
    Synthetic {
        seed: u64,
        count: usize,
        frames: usize,
        difficulty: Difficulty,
    },
}

impl FromStr for DataSource {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some(spec) = s.strip_prefix("synth:") else {
            return Ok(DataSource::Manifest(PathBuf::from(s)));
        };
        let (mut seed, mut count, mut frames, mut difficulty) = (0, 40, 6000, Difficulty::Hard);
        for kv in spec.split(',').filter(|kv| !kv.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("synthetic data option `{kv}` is not key=value"))?;
            let bad = || format!("bad value `{v}` for synthetic `{k}`");
            match k {
                "seed" => seed = v.parse().with_context(bad)?,
                "count" => count = v.parse().with_context(bad)?,
                "frames" => frames = v.parse().with_context(bad)?,
                "difficulty" => difficulty = v.parse()?,
                _ => bail!("unknown synthetic data option `{k}`"),
            }
        }
        Ok(DataSource::Synthetic {
            seed,
            count,
            frames,
            difficulty,
        })
    }
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataSource::Manifest(p) => write!(f, "{}", p.display()),
            DataSource::Synthetic {
                seed,
                count,
                frames,
                difficulty,
            } => write!(
                f,
                "synth:seed={seed},count={count},frames={frames},difficulty={difficulty}"
            ),
        }
    }
}

impl DataSource {
    pub fn load(&self) -> Result<Vec<Recording>> {
        let recs = match self {
            DataSource::Manifest(p) => load_manifest(p)?,
            DataSource::Synthetic {
                seed,
                count,
                frames,
                difficulty,
            } => synthetic_corpus(*seed, *count, *frames, *difficulty)?,
        };
        if recs.is_empty() {
            bail!("no recordings in `{self}`");
        }
        Ok(recs)
    }
}

/// Everything a `train` or `sweep` run needs. Written to the output
/// directory before training so the run can be replayed from it alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Manifest path or `synth:` spec.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn data_source(&self) -> Result<DataSource> {
        let data = self
            .data
            .as_deref()
            .context("no data given (use --data or `data` in the config)")?;
        data.parse()
    }
}

/// Flags that override the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Manifest JSON, or `synth:seed=S,count=C,frames=F,difficulty=D`.
    #[arg(long)]
    pub data: Option<String>,
    /// Seed for initialization, shuffling and the fold split.
    #[arg(long, env = "CER_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Task to train; repeat or comma-separate for several.
    #[arg(long = "task", value_delimiter = ',')]
    pub tasks: Vec<String>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// `speech`, `body`, or `multimodal`.
    #[arg(long)]
    pub modalities: Option<String>,
    /// Feature-image columns N.
    #[arg(long)]
    pub window: Option<usize>,
    /// Frames between image columns.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Task weights, comma-separated in task order.
    #[arg(long, value_delimiter = ',')]
    pub mtl_weights: Option<Vec<f64>>,
    #[arg(long)]
    pub sample_hop: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub test_fold: Option<usize>,
    #[arg(long)]
    pub val_fold: Option<usize>,
}

impl Overrides {
    /// Config file (or defaults) with every given flag applied, validated.
    pub fn resolve(&self, out_dir: Option<&Path>) -> Result<RunConfig> {
        let mut rc = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig {
                data: None,
                out_dir: None,
                experiment: ExperimentConfig::default(),
            },
        };
        if let Some(d) = &self.data {
            rc.data = Some(d.clone());
        }
        if let Some(o) = out_dir {
            rc.out_dir = Some(o.to_path_buf());
        }
        let e = &mut rc.experiment;
        if let Some(s) = self.seed {
            e.train.seed = s;
            e.split_seed = s;
        }
        if let Some(m) = self.mode {
            e.mode = m;
        }
        if !self.tasks.is_empty() {
            e.tasks = self
                .tasks
                .iter()
                .map(|t| t.parse::<Task>())
                .collect::<cer_core::Result<_>>()?;
        }
        if let Some(l) = self.loss {
            e.train.loss = l;
        }
        if let Some(m) = &self.modalities {
            e.modalities = parse_modality_set(m)?;
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { e.$($field).+ = v; })*
            };
        }
        set!(
            window => window,
            stride => stride,
            learning_rate => train.learning_rate,
            batch_size => train.batch_size,
            max_epochs => train.max_epochs,
            patience => train.patience,
            sample_hop => sample_hop,
            folds => folds,
            test_fold => test_fold,
            val_fold => val_fold,
        );
        if let Some(w) = &self.mtl_weights {
            e.train.mtl_weights = Some(w.clone());
        }
        e.validate()?;
        if e.mode == Mode::Mtl {
            e.train.weights(e.tasks.len())?;
        }
        Ok(rc)
    }
}
