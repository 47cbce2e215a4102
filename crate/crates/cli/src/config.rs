//! Experiment configuration: a TOML file plus per-flag overrides. The
//! effective configuration is echoed into every output artifact.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub master_seed: u64,
    pub trees_per_root: usize,
    pub tree_depth: usize,
    pub embedding_dim: usize,
    pub window: usize,
    pub min_article_tokens: usize,
    pub kernel_family: String,
    pub baseline_repeats: usize,
    pub max_distance: usize,
    pub pairs_per_distance: usize,
    pub train_fraction: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            master_seed: 0,
            trees_per_root: 5000,
            tree_depth: 3,
            embedding_dim: 2048,
            window: 16,
            min_article_tokens: 500,
            kernel_family: "exponential".to_string(),
            baseline_repeats: 1000,
            max_distance: 6,
            pairs_per_distance: 5000,
            train_fraction: 0.7,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain fields serialize")
    }

    /// One-line JSON used as a `#` comment header on CSV outputs and printed
    /// alongside binary outputs.
    pub fn echo_line(&self) -> String {
        serde_json::to_string(&self.json()).expect("plain fields serialize")
    }
}

macro_rules! override_field {
    ($cfg:expr, $($field:ident : $value:expr),* $(,)?) => {
        $(if let Some(v) = $value { $cfg.$field = v; })*
    };
}
pub(crate) use override_field;
