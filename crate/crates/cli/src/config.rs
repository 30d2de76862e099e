use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use aev_core::schemes::SchemeConfig;

/// Evaluation settings read from a TOML file; command-line flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateFile {
    pub dataset: Option<String>,
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub presets: Vec<String>,
    #[serde(default)]
    pub explainers: Vec<String>,
    pub seed: Option<u64>,
    pub repetitions: Option<usize>,
    pub ratios: Option<Vec<f64>>,
    pub replacement: Option<String>,
    pub k: Option<usize>,
    pub sigma: Option<f64>,
    pub explainer_seed: Option<u64>,
    /// Fully specified schemes, run in addition to the presets.
    #[serde(default)]
    pub schemes: Vec<SchemeConfig>,
}

impl EvaluateFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| aev_core::Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text)
            .map_err(|e| aev_core::Error::InvalidConfig(e.to_string()))
            .with_context(|| format!("parsing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_presets_and_custom_schemes() {
        let text = r#"
            dataset = "synthetic:planted"
            presets = ["KAFT-C", "RAFT-C-abs"]
            explainers = ["ig", "random"]
            repetitions = 2

            [[schemes]]
            name = "custom"
            order = { kind = "lowest_first" }
            update = "finetune_head"
            ratios = [0.5]
            repetitions = 1
            train_fraction = 0.1
            finetune_cfg = { epochs = 2, optimizer = { kind = "sgd", lr = 0.01, momentum = 0.9 }, schedule = { kind = "constant" }, batch_size = 32, seed = 0, scope = "head_only" }
        "#;
        let f: EvaluateFile = toml::from_str(text).unwrap();
        assert_eq!(f.presets.len(), 2);
        assert_eq!(f.schemes[0].name, "custom");
        f.schemes[0].validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<EvaluateFile>("bogus = 1").is_err());
    }
}
