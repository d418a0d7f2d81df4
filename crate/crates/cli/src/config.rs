//! TOML run configuration shared by every subcommand.
//!
//! All sections are optional and fall back to defaults, except `seed`,
//! which must come from the file or from `--seed`. Unknown keys are
//! rejected everywhere.

use std::path::{Path, PathBuf};

use hemnet_core::datagen::ToySegDatasetSpec;
use hemnet_core::model::{Loss, ModelConfig, TrainConfig};
use hemnet_core::stack::HemConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Load this dataset file instead of generating one.
    pub path: Option<PathBuf>,
    pub num_images: usize,
    pub height: usize,
    pub width: usize,
    pub num_shapes: usize,
    pub num_classes: usize,
    pub pixel_noise_std: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            num_images: 32,
            height: 16,
            width: 16,
            num_shapes: 4,
            num_classes: 4,
            pixel_noise_std: 0.4,
        }
    }
}

impl DataSection {
    pub fn spec(&self) -> ToySegDatasetSpec {
        ToySegDatasetSpec {
            num_images: self.num_images,
            height: self.height,
            width: self.width,
            num_shapes: self.num_shapes,
            num_classes: self.num_classes,
            pixel_noise_std: self.pixel_noise_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: Loss,
    pub probe_size: usize,
    pub log_interval: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 20,
            batch_size: 1,
            loss: Loss::CrossEntropy,
            probe_size: 100,
            log_interval: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub step_sizes: Vec<f64>,
    pub t_train: Vec<usize>,
    pub t_eval: Vec<usize>,
    /// Run cells on worker threads instead of one after another.
    pub parallel: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            step_sizes: vec![0.25, 0.5, 0.75, 1.0],
            t_train: vec![1, 2, 3, 4],
            t_eval: vec![1, 2, 3, 4, 6, 8],
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig3Section {
    pub step_sizes: Vec<f64>,
    /// Unrolled depth used for the curves and profiles.
    pub layers: usize,
    /// Trained checkpoint to analyse; required unless `train_inline`.
    pub checkpoint: Option<PathBuf>,
    /// Train a model with the `[train]`/`[hem]` settings first.
    pub train_inline: bool,
}

impl Default for Fig3Section {
    fn default() -> Self {
        Self {
            step_sizes: vec![0.2, 0.5, 1.0],
            layers: 6,
            checkpoint: None,
            train_inline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    /// Random HEM instances for the finite-difference oracle.
    pub instances: usize,
    /// Random full-model instances for the finite-difference oracle.
    pub model_instances: usize,
    pub skip_instances: usize,
    pub reduction_instances: usize,
    pub elbo_instances: usize,
    pub tolerance: f64,
    /// Flip the sign of the skip gradient to confirm the checks can fail.
    pub inject_fault: bool,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            instances: 200,
            model_instances: 20,
            skip_instances: 100,
            reduction_instances: 50,
            elbo_instances: 500,
            tolerance: 1e-6,
            inject_fault: false,
        }
    }
}

/// Recorded outcome of tuning the toy task; read by the acceptance suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub seeds: Vec<u64>,
    /// Minimum accuracy gain of the HEM model over the no-HEM baseline.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub hem: HemConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub fig3: Fig3Section,
    #[serde(default)]
    pub gradcheck: GradcheckSection,
    pub calibration: Option<CalibrationSection>,
}

/// Which sections a command needs validated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gen,
    Train,
    Gradcheck,
    Sweep,
    Fig3,
}

fn check_step_sizes(name: &str, etas: &[f64]) -> CliResult<()> {
    if etas.is_empty() {
        return Err(CliError::Config(format!("`{name}` must not be empty")));
    }
    if let Some(bad) = etas.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
        return Err(CliError::Config(format!("`{name}` entries must lie in (0, 1], got {bad}")));
    }
    Ok(())
}

fn check_depths(name: &str, ts: &[usize]) -> CliResult<()> {
    if ts.is_empty() {
        return Err(CliError::Config(format!("`{name}` must not be empty")));
    }
    if ts.contains(&0) {
        return Err(CliError::Config(format!("`{name}` entries must be >= 1")));
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    /// Reads `path`, or returns defaults when no file is given.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn with_seed_override(mut self, seed: Option<u64>) -> Self {
        if seed.is_some() {
            self.seed = seed;
        }
        self
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::Config("missing required field `seed` (set it in the config or pass --seed)".into()))
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        Ok(TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.seed()?,
            hem: self.hem.clone(),
            model: self.model.clone(),
            loss: self.train.loss,
            probe_size: self.train.probe_size,
            log_interval: self.train.log_interval,
        })
    }

    /// Full validation of everything `cmd` will touch; runs before any output is written.
    pub fn validate(&self, cmd: Command) -> CliResult<()> {
        self.seed()?;
        if cmd != Command::Gradcheck && self.data.path.is_none() {
            self.data.spec().validate()?;
        }
        if cmd == Command::Gen && self.data.path.is_some() {
            return Err(CliError::Config("`data.path` makes no sense for `gen`; remove it".into()));
        }
        if matches!(cmd, Command::Train | Command::Sweep | Command::Fig3) {
            self.train_config()?.validate()?;
        }
        match cmd {
            Command::Sweep => {
                check_step_sizes("sweep.step_sizes", &self.sweep.step_sizes)?;
                check_depths("sweep.t_train", &self.sweep.t_train)?;
                check_depths("sweep.t_eval", &self.sweep.t_eval)?;
            }
            Command::Fig3 => {
                check_step_sizes("fig3.step_sizes", &self.fig3.step_sizes)?;
                check_depths("fig3.layers", &[self.fig3.layers])?;
                if !self.fig3.train_inline && self.fig3.checkpoint.is_none() {
                    return Err(CliError::Config(
                        "`fig3.checkpoint` is required when `fig3.train_inline` is false".into(),
                    ));
                }
            }
            Command::Gradcheck => {
                let g = &self.gradcheck;
                if !(g.tolerance > 0.0 && g.tolerance.is_finite()) {
                    return Err(CliError::Config(format!(
                        "`gradcheck.tolerance` must be > 0, got {}",
                        g.tolerance
                    )));
                }
            }
            Command::Gen | Command::Train => {}
        }
        if let Some(c) = &self.calibration {
            if c.seeds.is_empty() || !c.margin.is_finite() {
                return Err(CliError::Config("`calibration` needs non-empty seeds and a finite margin".into()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Internal(format!("cannot serialize config: {e}")))
    }
}
