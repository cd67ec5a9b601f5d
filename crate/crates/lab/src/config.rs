//! TOML experiment configuration: `[data]`, `[train]` and `[postproc]` tables.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crst_core::evalkit::DEFAULT_COLLAR;
use crst_core::model::{ModelConfig, DEFAULT_LR_CAP};
use crst_core::reliability::RampSchedule;
use crst_core::seqdata::DatasetConfig;
use crst_core::trainer::{BatchComposition, Perturbation, PseudoView, TrainConfig, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub variant: Variant,
    pub epochs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_per_epoch: Option<usize>,
    pub learning_rate: f64,
    pub lr_cap: f64,
    pub ema_decay: f64,
    pub seed: u64,
    pub consistency_peak: f64,
    pub reliability_peak: f64,
    pub collar: f64,
    pub pseudo_view: PseudoView,
    /// Output channels of each conv block.
    pub channels: Vec<usize>,
    pub hidden: usize,
    pub recurrent_layers: usize,
    pub dropout: f64,
    pub batch: BatchComposition,
    pub perturbation: Perturbation,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            variant: Variant::Crst,
            epochs: 30,
            steps_per_epoch: None,
            learning_rate: DEFAULT_LR_CAP,
            lr_cap: DEFAULT_LR_CAP,
            ema_decay: 0.999,
            seed: 0,
            consistency_peak: 2.0,
            reliability_peak: RampSchedule::DEFAULT_PEAK,
            collar: DEFAULT_COLLAR,
            pseudo_view: PseudoView::Own,
            channels: vec![16, 32, 64],
            hidden: 32,
            recurrent_layers: 1,
            dropout: 0.5,
            batch: BatchComposition::default(),
            perturbation: Perturbation::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostprocMode {
    #[default]
    Global,
    Classwise,
    Sweep,
}

impl FromStr for PostprocMode {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(PostprocMode::Global),
            "classwise" => Ok(PostprocMode::Classwise),
            "sweep" => Ok(PostprocMode::Sweep),
            _ => Err(LabError::Config(format!("unknown post-processing mode '{s}' (global, classwise, sweep)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocSection {
    pub mode: PostprocMode,
    /// Target exceedance fraction of the EVT threshold.
    pub alpha: f64,
    /// Filter length as a percentage of the mean detected run.
    pub beta: f64,
    pub collar: f64,
}

impl Default for PostprocSection {
    fn default() -> Self {
        PostprocSection { mode: PostprocMode::Global, alpha: 0.01, beta: 50.0, collar: DEFAULT_COLLAR }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DatasetConfig,
    pub train: TrainSection,
    pub postproc: PostprocSection,
}

impl Config {
    /// Parses TOML; keys left out keep their default values at any depth.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let located = |e: toml::de::Error| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0);
            LabError::Config(format!("{}:{line}: {}", origin.display(), e.message()))
        };
        // Strict pass for unknown keys and type errors with their positions.
        toml::from_str::<Config>(text).map_err(located)?;
        let user: toml::Table = text.parse().map_err(located)?;
        let mut merged = toml::Table::try_from(Config::default()).expect("default config serializes");
        merge(&mut merged, user);
        let cfg = Config::deserialize(merged).map_err(|e| LabError::Config(format!("{}: {}", origin.display(), e.message())))?;
        cfg.data.validate().map_err(|e| LabError::Config(format!("[data] {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Canonical TOML; parsing it yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the canonical TOML, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn model(&self, n_mel_in: usize, n_classes: usize) -> ModelConfig {
        let t = &self.train;
        let mut m = ModelConfig::with_channels(n_mel_in, n_classes, &t.channels, t.hidden);
        m.recurrent_layers = t.recurrent_layers;
        m.dropout_rate = t.dropout;
        m
    }

    /// Trainer settings for a dataset with the given feature and class counts.
    pub fn train_config(&self, n_mel_in: usize, n_classes: usize) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            variant: t.variant,
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            batch: t.batch,
            learning_rate: t.learning_rate,
            lr_cap: t.lr_cap,
            ema_decay: t.ema_decay,
            seed: t.seed,
            perturbation: t.perturbation,
            pseudo_view: t.pseudo_view,
            consistency_peak: t.consistency_peak,
            reliability_peak: t.reliability_peak,
            collar: t.collar,
            model: self.model(n_mel_in, n_classes),
        };
        cfg.validate().map_err(|e| LabError::Config(format!("[train] {e}")))?;
        Ok(cfg)
    }
}

/// Overlays `over` onto `base`; tables merge key by key, except tagged
/// tables (with a `kind` key), which replace the default outright.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("kind") => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::parse("", Path::new("x.toml")).unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn canonical_toml_round_trips() {
        let mut c = Config::default();
        c.train.variant = Variant::SrstAug;
        c.train.steps_per_epoch = Some(7);
        c.train.perturbation = Perturbation::FrameShift { sigma: 12.5 };
        c.postproc.mode = PostprocMode::Sweep;
        c.data.real.prototype_shift = 0.1 + 0.2;
        let text = c.to_toml();
        let back = Config::parse(&text, Path::new("x.toml")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_tables_fill_defaults() {
        let text = "[train]\nvariant = \"mt\"\nepochs = 3\n[train.perturbation]\nkind = \"mixup\"\nmin_lambda = 0.9\n[data]\nstrong = 4\n";
        let c = Config::parse(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.train.variant, Variant::MeanTeacher);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.perturbation, Perturbation::Mixup { min_lambda: 0.9 });
        assert_eq!(c.train.batch, BatchComposition::default());
        assert_eq!(c.data.strong, 4);
        assert_eq!(c.data.weak, DatasetConfig::default().weak);
    }

    #[test]
    fn nested_tables_keep_their_own_defaults() {
        let c = Config::parse("[data.synthetic]\nclip_len = 8.0\n[data.real]\nclip_len = 8.0\n", Path::new("x.toml")).unwrap();
        let desk = DatasetConfig::default().real;
        assert_eq!(c.data.real.clip_len, 8.0);
        assert_eq!(c.data.real.noise_std, desk.noise_std);
        assert_eq!(c.data.real.spectral_tilt, desk.spectral_tilt);
        assert_ne!(desk.noise_std, DatasetConfig::default().synthetic.noise_std);
    }

    #[test]
    fn bad_input_is_a_config_error_with_line() {
        let err = Config::parse("[train]\nepochs = 2\nbogus = 1\n", Path::new("c.toml")).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::exit::CONFIG);
        assert!(err.to_string().contains("c.toml:3"), "{err}");
        let err = Config::parse("[train]\nvariant = \"nope\"\n", Path::new("c.toml")).unwrap_err();
        assert!(matches!(err, LabError::Config(_)));
    }

    #[test]
    fn train_config_validates() {
        let mut c = Config::default();
        c.train.learning_rate = 0.01;
        assert!(matches!(c.train_config(16, 3), Err(LabError::Config(_))));
        c.train.learning_rate = 0.0005;
        let t = c.train_config(16, 3).unwrap();
        assert_eq!(t.model.n_classes, 3);
        assert_eq!(t.model.conv_blocks.len(), 3);
    }
}
