//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is optional
//! and falls back to its default; unknown or repeated keys are errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tsr_core::degradation::DegradationParams;
use tsr_core::network::NetworkConfig;
use tsr_core::training::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given more than once")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    Value { line: usize, key: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Every key with a one-line description, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("scale", "upscaling factor, 2 or 4"),
    ("misr_channels", "MISR feature width"),
    ("misr_blocks", "MISR residual blocks"),
    ("residual_channels", "residual component width"),
    ("residual_blocks", "residual component blocks"),
    ("sisr_feat0", "SISR initial feature width"),
    ("sisr_feat", "SISR projection width"),
    ("sisr_stages", "SISR up/down projection pairs"),
    ("fusion_channels", "width of the MISR/SISR fusion"),
    ("epochs", "training epochs"),
    ("base_lr", "initial learning rate"),
    ("lr_decay_factor", "learning-rate multiplier per decay"),
    ("lr_decay_period", "epochs between decays"),
    ("weight_decay", "coupled L2 weight decay"),
    ("beta1", "ADAM first-moment decay"),
    ("beta2", "ADAM second-moment decay"),
    ("epsilon", "ADAM denominator offset"),
    ("batch_size", "sequences per optimizer step"),
    ("min_seq_len", "shortest training sequence"),
    ("max_seq_len", "longest training sequence"),
    ("crop_size", "HR crop side for training samples"),
    ("seed", "seed for every random choice"),
    ("blur_sigma", "degradation blur sigma in HR pixels"),
    ("noise_sigma", "degradation noise sigma, fraction of range"),
    ("data_dir", "corpus root holding index.txt (empty: unset)"),
    ("out_dir", "output directory"),
    ("checkpoint", "checkpoint to load (empty: unset)"),
    ("train_ratio", "fraction of sequences used for training"),
    ("checkpoint_every", "epochs between periodic checkpoints"),
    ("bit_depth", "PGM bit depth of written frames, 8 or 16"),
    ("synth_sequences", "sequences generated by make-synthetic"),
    ("synth_frames", "frames per generated sequence"),
    ("synth_size", "side of generated frames"),
    ("complexity_height", "LR input height for complexity reports"),
    ("complexity_width", "LR input width for complexity reports"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub train_ratio: f64,
    pub checkpoint_every: usize,
    pub bit_depth: u32,
    pub synth_sequences: usize,
    pub synth_frames: usize,
    pub synth_size: usize,
    pub complexity_height: usize,
    pub complexity_width: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DegradationParams::default();
        RunConfig {
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            blur_sigma: d.blur_sigma,
            noise_sigma: d.noise_sigma,
            data_dir: None,
            out_dir: PathBuf::from("runs"),
            checkpoint: None,
            train_ratio: 0.83,
            checkpoint_every: 25,
            bit_depth: 16,
            synth_sequences: 36,
            synth_frames: 10,
            synth_size: 96,
            complexity_height: 80,
            complexity_width: 80,
        }
    }
}

fn path_value(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn degradation(&self) -> DegradationParams {
        DegradationParams {
            scale: self.network.scale,
            blur_sigma: self.blur_sigma,
            noise_sigma: self.noise_sigma,
            seed: self.train.seed,
        }
    }

    pub fn maxval(&self) -> u16 {
        if self.bit_depth == 8 {
            255
        } else {
            65535
        }
    }

    /// Current value of every key, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let n = &self.network;
        let t = &self.train;
        vec![
            ("scale", n.scale.to_string()),
            ("misr_channels", n.misr_channels.to_string()),
            ("misr_blocks", n.misr_blocks.to_string()),
            ("residual_channels", n.residual_channels.to_string()),
            ("residual_blocks", n.residual_blocks.to_string()),
            ("sisr_feat0", n.sisr_feat0.to_string()),
            ("sisr_feat", n.sisr_feat.to_string()),
            ("sisr_stages", n.sisr_stages.to_string()),
            ("fusion_channels", n.fusion_channels.to_string()),
            ("epochs", t.epochs.to_string()),
            ("base_lr", t.base_lr.to_string()),
            ("lr_decay_factor", t.lr_decay_factor.to_string()),
            ("lr_decay_period", t.lr_decay_period.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("epsilon", t.epsilon.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("min_seq_len", t.min_seq_len.to_string()),
            ("max_seq_len", t.max_seq_len.to_string()),
            ("crop_size", t.crop_size.to_string()),
            ("seed", t.seed.to_string()),
            ("blur_sigma", self.blur_sigma.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("data_dir", path_value(&self.data_dir)),
            ("out_dir", self.out_dir.display().to_string()),
            ("checkpoint", path_value(&self.checkpoint)),
            ("train_ratio", self.train_ratio.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("bit_depth", self.bit_depth.to_string()),
            ("synth_sequences", self.synth_sequences.to_string()),
            ("synth_frames", self.synth_frames.to_string()),
            ("synth_size", self.synth_size.to_string()),
            ("complexity_height", self.complexity_height.to_string()),
            ("complexity_width", self.complexity_width.to_string()),
        ]
    }

    /// Sets one key from its textual value. `line` is only used in errors.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        fn parse<V: FromStr>(key: &str, value: &str, line: usize) -> Result<V, ConfigError> {
            value.parse().map_err(|_| ConfigError::Value {
                line,
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        let n = &mut self.network;
        let t = &mut self.train;
        match key {
            "scale" => n.scale = parse(key, value, line)?,
            "misr_channels" => n.misr_channels = parse(key, value, line)?,
            "misr_blocks" => n.misr_blocks = parse(key, value, line)?,
            "residual_channels" => n.residual_channels = parse(key, value, line)?,
            "residual_blocks" => n.residual_blocks = parse(key, value, line)?,
            "sisr_feat0" => n.sisr_feat0 = parse(key, value, line)?,
            "sisr_feat" => n.sisr_feat = parse(key, value, line)?,
            "sisr_stages" => n.sisr_stages = parse(key, value, line)?,
            "fusion_channels" => n.fusion_channels = parse(key, value, line)?,
            "epochs" => t.epochs = parse(key, value, line)?,
            "base_lr" => t.base_lr = parse(key, value, line)?,
            "lr_decay_factor" => t.lr_decay_factor = parse(key, value, line)?,
            "lr_decay_period" => t.lr_decay_period = parse(key, value, line)?,
            "weight_decay" => t.weight_decay = parse(key, value, line)?,
            "beta1" => t.beta1 = parse(key, value, line)?,
            "beta2" => t.beta2 = parse(key, value, line)?,
            "epsilon" => t.epsilon = parse(key, value, line)?,
            "batch_size" => t.batch_size = parse(key, value, line)?,
            "min_seq_len" => t.min_seq_len = parse(key, value, line)?,
            "max_seq_len" => t.max_seq_len = parse(key, value, line)?,
            "crop_size" => t.crop_size = parse(key, value, line)?,
            "seed" => t.seed = parse(key, value, line)?,
            "blur_sigma" => self.blur_sigma = parse(key, value, line)?,
            "noise_sigma" => self.noise_sigma = parse(key, value, line)?,
            "data_dir" => self.data_dir = opt_path(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "checkpoint" => self.checkpoint = opt_path(value),
            "train_ratio" => self.train_ratio = parse(key, value, line)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value, line)?,
            "bit_depth" => self.bit_depth = parse(key, value, line)?,
            "synth_sequences" => self.synth_sequences = parse(key, value, line)?,
            "synth_frames" => self.synth_frames = parse(key, value, line)?,
            "synth_size" => self.synth_size = parse(key, value, line)?,
            "complexity_height" => self.complexity_height = parse(key, value, line)?,
            "complexity_width" => self.complexity_width = parse(key, value, line)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            config.set(key, value, line)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.entries() {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let core = |e: tsr_core::Error| ConfigError::Invalid(e.to_string());
        self.network.validate().map_err(core)?;
        self.train.validate().map_err(core)?;
        self.degradation().validate().map_err(core)?;
        if !(self.train_ratio > 0.0 && self.train_ratio <= 1.0) {
            return Err(ConfigError::Invalid(format!("train_ratio must be in (0, 1], got {}", self.train_ratio)));
        }
        if self.bit_depth != 8 && self.bit_depth != 16 {
            return Err(ConfigError::Invalid(format!("bit_depth must be 8 or 16, got {}", self.bit_depth)));
        }
        for (name, v) in [
            ("checkpoint_every", self.checkpoint_every),
            ("synth_sequences", self.synth_sequences),
            ("synth_frames", self.synth_frames),
            ("synth_size", self.synth_size),
            ("complexity_height", self.complexity_height),
            ("complexity_width", self.complexity_width),
        ] {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        fs::write(path, self.to_text()).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
