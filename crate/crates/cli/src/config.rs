//! Experiment configuration: profiles, TOML overlay and the sweep grid.
//!
//! A config file only needs the fields that differ from the chosen
//! profile. The resolved config, with every default filled in, is written
//! next to each command's outputs as `config.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ivpp::augment::{default_policy, AugmentPolicy};
use ivpp::datamodel::{SyntheticConfig, Task};
use ivpp::mmode::DEFAULT_SEGMENT_SECONDS;
use ivpp::objectives::{Method, ObjectiveConfig};
use ivpp::sampler::{IvppConfig, PairMode};
use ivpp::train::{ModelSpec, ProbeConfig, TrainConfig, Unfreeze};

use crate::error::{CliError, Result};

/// File name of the resolved-config snapshot.
pub const SNAPSHOT_NAME: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Tiny encoder on synthetic data; minutes on one CPU core.
    Desk,
    /// Full-scale settings: ResNet18, batch 384, 500 epochs.
    Protocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Manifest of a real dataset. When absent, synthetic data is generated
    /// from `synthetic`.
    pub manifest: Option<PathBuf>,
    /// Pleural ROI CSV (`video_id,x_lo,x_hi`), needed for M-mode tasks on a
    /// real manifest.
    pub rois: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    /// Patient fractions for (train, validation, test).
    pub split_fractions: (f64, f64, f64),
}

/// The pair-sampling grid of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvppGrid {
    /// `bmode`: deltas are seconds (δ_t). `mmode`: deltas are pixels (δ_x).
    pub mode: PairMode,
    pub deltas: Vec<f64>,
    pub sample_weights: Vec<bool>,
    pub shared_segment: bool,
    pub segment_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Linear,
    Finetune,
    Kfold,
    LabelEfficiency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub probe: ProbeConfig,
    /// Encoder blocks trained in `finetune` and `label_efficiency` modes.
    pub unfreeze: Unfreeze,
    pub k_folds: usize,
    pub n_subsets: usize,
    /// Metric analysed by `stats`.
    pub metric: String,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// Master seed, copied into the model, training, probe, split and
    /// synthetic-data seeds. Every sweep condition reuses it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub task: Task,
    pub methods: Vec<Method>,
    pub data: DataConfig,
    pub ivpp: IvppGrid,
    pub objective: ObjectiveConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub augment: AugmentPolicy,
    pub eval: EvalConfig,
}

/// One pretraining condition of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunCondition {
    pub method: Method,
    pub delta: f64,
    pub sw: bool,
}

impl RunCondition {
    /// Directory name under `runs/`.
    pub fn slug(&self) -> String {
        format!("{}_delta{}_sw{}", self.method, self.delta, u8::from(self.sw))
    }
}

/// The conditions to train, plus the (δ = 0, weights on) cells that are
/// answered by their (δ = 0, weights off) twin instead of being trained.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub runs: Vec<RunCondition>,
    pub aliases: Vec<(RunCondition, RunCondition)>,
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let task = Task::Ab;
        match profile {
            Profile::Desk => Self {
                profile,
                seed: 0,
                out_dir: PathBuf::from("ivpp-out"),
                task,
                methods: Method::ALL.to_vec(),
                data: DataConfig {
                    manifest: None,
                    rois: None,
                    synthetic: SyntheticConfig::default(),
                    split_fractions: (0.6, 0.2, 0.2),
                },
                ivpp: IvppGrid {
                    mode: PairMode::Bmode,
                    deltas: vec![0.0, 0.5, 1.0, 1.5],
                    sample_weights: vec![false, true],
                    shared_segment: true,
                    segment_seconds: DEFAULT_SEGMENT_SECONDS,
                },
                objective: ObjectiveConfig::default(),
                model: ModelSpec::desk(),
                train: TrainConfig::desk(),
                augment: default_policy(task),
                eval: EvalConfig {
                    mode: EvalMode::Linear,
                    probe: ProbeConfig {
                        frame_stride: 4,
                        ..ProbeConfig::default()
                    },
                    unfreeze: Unfreeze::All,
                    k_folds: 5,
                    n_subsets: 4,
                    metric: "auc".into(),
                    alpha: 0.05,
                },
            },
            Profile::Protocol => Self {
                profile,
                model: ModelSpec::resnet18(),
                train: TrainConfig::protocol(),
                eval: EvalConfig {
                    mode: EvalMode::LabelEfficiency,
                    probe: ProbeConfig::default(),
                    n_subsets: 20,
                    ..Self::profile(Profile::Desk).eval
                },
                ..Self::profile(Profile::Desk)
            },
        }
    }

    /// Profile defaults overlaid with the fields present in `text`.
    ///
    /// The profile is taken from `profile` if given, else from the file's
    /// own `profile` key, else desk. Fields that depend on the task (the
    /// augmentation policy and the pair mode) follow the overlaid task
    /// unless the file sets them.
    pub fn from_toml(text: &str, profile: Option<Profile>) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(format!("parsing config: {e}")))?;
        let profile = match profile {
            Some(p) => p,
            None => match user.get("profile") {
                Some(v) => v
                    .clone()
                    .try_into()
                    .map_err(|e| CliError::Config(format!("profile: {e}")))?,
                None => Profile::Desk,
            },
        };
        let mut base = Self::profile(profile);
        if let Some(task) = user.get("task") {
            let task: Task = task.clone().try_into().map_err(|e| CliError::Config(format!("task: {e}")))?;
            base.task = task;
            base.augment = default_policy(task);
            if task.is_mmode() {
                base.ivpp.mode = PairMode::Mmode;
                base.ivpp.deltas = vec![0.0, 5.0, 10.0, 15.0];
            }
        }
        let mut merged = toml::Table::try_from(&base).map_err(|e| CliError::Config(e.to_string()))?;
        merge(&mut merged, user);
        merged.insert("profile".into(), toml::Value::try_from(profile).map_err(|e| CliError::Config(e.to_string()))?);
        let cfg: Self = merged.try_into().map_err(|e| CliError::Config(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile: Option<Profile>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, profile)
    }

    /// Applies the master seed and makes implicit defaults explicit.
    pub fn resolve(mut self) -> Self {
        let seed = self.seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.eval.probe.seed = seed;
        self.data.synthetic.seed = seed;
        self.train.base_lr = Some(self.train.lr());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.ivpp.deltas.is_empty() || self.ivpp.sample_weights.is_empty() {
            return bad("ivpp.deltas and ivpp.sample_weights must not be empty".into());
        }
        if let Some(d) = self.ivpp.deltas.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return bad(format!("ivpp.deltas must be nonnegative, got {d}"));
        }
        match (self.ivpp.mode, self.task.is_mmode()) {
            (PairMode::Bmode, true) => {
                return bad(format!(
                    "grid/task mismatch: a temporal (bmode) δ grid cannot pretrain for the M-mode task {}",
                    self.task.name()
                ))
            }
            (PairMode::Mmode, false) => {
                return bad(format!(
                    "grid/task mismatch: a column (mmode) δ grid cannot pretrain for the B-mode task {}",
                    self.task.name()
                ))
            }
            (PairMode::Mmode, true) => {
                if let Some(d) = self.ivpp.deltas.iter().find(|d| d.fract() != 0.0) {
                    return bad(format!("mmode deltas are pixel counts, got {d}"));
                }
            }
            _ => {}
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return bad(format!("eval.alpha must lie in (0, 1), got {}", self.eval.alpha));
        }
        self.data.synthetic.validate()?;
        self.objective.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        self.eval.probe.validate()?;
        Ok(())
    }

    /// Sampler settings for one condition.
    pub fn ivpp_for(&self, delta: f64, sw: bool) -> IvppConfig {
        let cfg = match self.ivpp.mode {
            PairMode::Bmode => IvppConfig::bmode(delta, sw),
            PairMode::Mmode => IvppConfig::mmode(delta as usize, sw),
        };
        IvppConfig {
            shared_segment: self.ivpp.shared_segment,
            segment_seconds: self.ivpp.segment_seconds,
            ..cfg
        }
    }

    /// Methods × deltas × weight flags, in config order. A (δ = 0, weights
    /// on) cell is aliased to (δ = 0, weights off) when the grid has both,
    /// since all weights are 1 at δ = 0.
    pub fn sweep_plan(&self) -> SweepPlan {
        let mut runs = Vec::new();
        let mut aliases = Vec::new();
        let has_unweighted = self.ivpp.sample_weights.contains(&false);
        for &method in &self.methods {
            for &delta in &self.ivpp.deltas {
                for &sw in &self.ivpp.sample_weights {
                    let c = RunCondition { method, delta, sw };
                    if delta == 0.0 && sw && has_unweighted {
                        aliases.push((c, RunCondition { sw: false, ..c }));
                    } else {
                        runs.push(c);
                    }
                }
            }
        }
        SweepPlan { runs, aliases }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Writes the resolved config into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(SNAPSHOT_NAME);
        fs::write(&path, self.to_toml()?).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// Recursively overwrites `base` with `over`; tables merge, anything else
/// replaces.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
