//! Training configuration resolution: flags over config file over defaults.

use std::path::Path;

use clap::Args;

use crate::error::{Error, Result};
use crate::numcore::nn::Activation;
use crate::train::{Ablation, TrainConfig};

/// Per-flag overrides; `None` leaves the lower layer in place.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// full, no_rec, no_dag or no_both.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub max_metapath_len: Option<usize>,
    /// relu or sigmoid.
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Run everything on the calling thread.
    #[arg(long)]
    pub sequential: bool,
}

impl TrainFlags {
    pub fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = &self.ablation {
            cfg.ablation = v.parse::<Ablation>()?;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = self.max_metapath_len {
            cfg.max_metapath_len = v;
        }
        if let Some(v) = &self.activation {
            cfg.activation = v.parse::<Activation>()?;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if self.sequential {
            cfg.parallel = false;
        }
        Ok(())
    }
}

/// Parses `key = value` lines (TOML syntax) over the defaults. Unknown keys
/// are rejected.
pub fn parse_config(text: &str, origin: &str) -> Result<TrainConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
    let known = toml::Table::try_from(TrainConfig::default())
        .map_err(|e| Error::Config(format!("cannot describe defaults: {e}")))?;
    if let Some(bad) = table.keys().find(|k| !known.contains_key(*k)) {
        return Err(Error::Config(format!("{origin}: unknown key {bad:?}")));
    }
    table
        .try_into()
        .map_err(|e| Error::Config(format!("{origin}: {e}")))
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

/// Accepts `N` or an inclusive range `A..B`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let num = |t: &str| {
        t.trim()
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("bad seed {t:?}")))
    };
    match s.split_once("..") {
        None => Ok(vec![num(s)?]),
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if a > b {
                return Err(Error::Config(format!("empty seed range {s:?}")));
            }
            Ok((a..=b).collect())
        }
    }
}
