//! Line-oriented `key = value` configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Later keys override
//! earlier ones, and command-line overrides are applied after the file.

use std::fs;
use std::path::{Path, PathBuf};

use super::TrainConfig;
use crate::error::{Error, Result};

/// Every recognized key with a short description.
pub const KEYS: &[(&str, &str)] = &[
    ("variant", "unet, dilated2, dilated3, bnet or tscnet"),
    ("depth", "number of downsampling levels"),
    ("base", "width of the first level; doubles per level"),
    ("widths", "explicit comma-separated widths, bottleneck last"),
    ("ote", "append coordinate channels (true/false)"),
    ("epochs", "training epochs"),
    ("runs", "runs per condition"),
    ("batch_size", "samples per step"),
    ("lr", "learning rate"),
    ("optimizer", "adam or sgd"),
    ("momentum", "sgd momentum"),
    ("seed", "seed for initialization and shuffling"),
    ("data", "dataset directory with train/ and val/ subdirectories"),
    ("height", "generated image height"),
    ("width", "generated image width"),
    ("train_samples", "generated training samples"),
    ("val_samples", "generated validation samples"),
    ("rect_min", "smallest rectangle side, fraction of the image side"),
    ("rect_max", "largest rectangle side, fraction of the image side"),
    ("noise", "standard deviation of the pixel noise"),
    ("data_seed", "seed of the generated dataset"),
    ("out", "output directory"),
];

/// Parses `key = value` lines. Errors carry the 1-based line number.
pub fn parse_key_values(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected `key = value`, got `{line}`", i + 1));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("`{key}`: cannot parse `{value}`"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("`{key}`: expected true or false, got `{value}`")),
    }
}

impl TrainConfig {
    /// Sets one key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let d = &mut self.dataset;
        match key {
            "variant" => self.arch.variant = value.parse().map_err(|e: Error| e.to_string())?,
            "depth" => self.arch.depth = parse(key, value)?,
            "base" => {
                self.arch.base_channels = parse(key, value)?;
                self.arch.widths = None;
            }
            "widths" => {
                let w: std::result::Result<Vec<usize>, String> =
                    value.split(',').map(|s| parse(key, s.trim())).collect();
                self.arch.widths = Some(w?);
            }
            "ote" => self.arch.ote = parse_bool(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "runs" => self.runs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.learning_rate = parse(key, value)?,
            "optimizer" => {
                let momentum = match self.optimizer {
                    super::OptimizerKind::Sgd { momentum } => Some(momentum),
                    _ => None,
                };
                self.optimizer = value.parse().map_err(|e: Error| e.to_string())?;
                if let (Some(m), super::OptimizerKind::Sgd { momentum }) = (momentum, &mut self.optimizer) {
                    *momentum = m;
                }
            }
            "momentum" => {
                let m = parse(key, value)?;
                match &mut self.optimizer {
                    super::OptimizerKind::Sgd { momentum } => *momentum = m,
                    _ => self.optimizer = super::OptimizerKind::Sgd { momentum: m },
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "data" => self.data_dir = Some(PathBuf::from(value)),
            "height" => d.height = parse(key, value)?,
            "width" => d.width = parse(key, value)?,
            "train_samples" => d.train_samples = parse(key, value)?,
            "val_samples" => d.val_samples = parse(key, value)?,
            "rect_min" => d.rect_min = parse(key, value)?,
            "rect_max" => d.rect_max = parse(key, value)?,
            "noise" => d.noise = parse(key, value)?,
            "data_seed" => d.seed = parse(key, value)?,
            "out" => self.out_dir = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies pairs in order; `origin` names their source in errors.
    pub fn apply<'a>(
        &mut self,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
        origin: &str,
    ) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v).map_err(|msg| Error::Config { path: origin.to_string(), msg })?;
        }
        Ok(())
    }

    /// Defaults overridden by the file at `path`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let origin = path.display().to_string();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config { path: origin.clone(), msg: format!("cannot read: {e}") })?;
        let pairs = parse_key_values(&text).map_err(|msg| Error::Config { path: origin.clone(), msg })?;
        let mut cfg = TrainConfig::default();
        cfg.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())), &origin)?;
        Ok(cfg)
    }
}
