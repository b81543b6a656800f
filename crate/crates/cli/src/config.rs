use std::path::{Path, PathBuf};

use clap::ValueEnum;
use rirecon_core::model::ModelConfig;
use rirecon_core::rng::derive_seed;
use rirecon_core::roomsim::AbsorptionModel;
use rirecon_core::scenario::Experiment;
use rirecon_core::training::{Precision, TrainConfig};
use serde::{Deserialize, Serialize};

/// Everything one experiment run needs. Every field has a default, so an
/// empty file is a valid configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/train.rird`.
    pub train_data: Option<PathBuf>,
    /// Defaults to `<out_dir>/eval.rird`.
    pub eval_data: Option<PathBuf>,
    pub n_train: usize,
    pub n_eval: usize,
    pub absorption: AbsorptionModel,
    pub eval_mr: Vec<f64>,
    /// Seed of the evaluation masks. Defaults to a sub-stream of `seed`;
    /// pin it to compare runs trained from different seeds on equal masks.
    pub eval_seed: Option<u64>,
    /// Run per-segment finetuning straight after training.
    pub finetune: bool,
    /// Forward passes averaged for the inference timing.
    pub timing_passes: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    #[default]
    Exp1,
    Exp2,
}

impl From<ExperimentId> for Experiment {
    fn from(e: ExperimentId) -> Self {
        match e {
            ExperimentId::Exp1 => Experiment::Exp1,
            ExperimentId::Exp2 => Experiment::Exp2,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentId::Exp1,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            train_data: None,
            eval_data: None,
            n_train: 200,
            n_eval: 10,
            absorption: AbsorptionModel::default(),
            eval_mr: (1..=9).map(|i| i as f64 / 10.0).collect(),
            eval_seed: None,
            finetune: true,
            timing_passes: 100,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    None,
    NoSinusoidal,
    NoSegments,
    NoRefiner,
}

impl Ablation {
    pub fn apply(self, m: &mut ModelConfig) {
        match self {
            Ablation::None => {}
            Ablation::NoSinusoidal => m.use_sinusoidal = false,
            Ablation::NoSegments => m.use_segments = false,
            Ablation::NoRefiner => m.use_refiner = false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn train_path(&self) -> PathBuf {
        self.train_data.clone().unwrap_or_else(|| self.out_dir.join("train.rird"))
    }

    pub fn eval_path(&self) -> PathBuf {
        self.eval_data.clone().unwrap_or_else(|| self.out_dir.join("eval.rird"))
    }

    pub fn mask_seed(&self) -> u64 {
        self.eval_seed.unwrap_or_else(|| derive_seed(self.seed, "eval", &[]))
    }

    pub fn validate(&self) -> Result<(), String> {
        self.train.validate().map_err(|e| e.to_string())?;
        if let Some(m) = self.eval_mr.iter().find(|m| !(**m > 0.0 && **m < 1.0)) {
            return Err(format!("eval_mr entry {m} outside (0, 1)"));
        }
        if self.eval_mr.is_empty() {
            return Err("eval_mr is empty".into());
        }
        Ok(())
    }
}

/// Parses `0.1,0.5,0.9`.
pub fn parse_mr_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad missing rate {t:?}: {e}"))).collect()
}
