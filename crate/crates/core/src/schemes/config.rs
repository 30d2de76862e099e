use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manipulate::{OcclusionOrder, Replacement};
use crate::nn::{Optimizer, Schedule, TrainConfig, TrainScope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateProtocol {
    /// Fresh initialization, full training.
    RetrainFull,
    /// Start from the explained model, update every parameter.
    FinetuneFull,
    /// Start from the explained model, update the classification head only.
    FinetuneHead,
}

/// Class an explanation is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    /// The explained model's prediction on the clean input.
    #[default]
    Predicted,
    Label,
}

/// Splits that are explained and manipulated; an unflagged split is used clean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFlags {
    pub train: bool,
    pub test: bool,
}

impl Default for SplitFlags {
    fn default() -> Self {
        SplitFlags {
            train: true,
            test: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub name: String,
    pub order: OcclusionOrder,
    pub update: UpdateProtocol,
    pub ratios: Vec<f64>,
    pub repetitions: usize,
    pub train_fraction: f64,
    /// Training settings for the update step (the full schedule for retraining).
    pub finetune_cfg: TrainConfig,
    #[serde(default)]
    pub explain_splits: SplitFlags,
    /// Fill values for occluded features; the explainer's constant baseline,
    /// else the per-feature training mean, when absent.
    #[serde(default)]
    pub replacement: Option<Replacement>,
    #[serde(default)]
    pub target: TargetRule,
    #[serde(default)]
    pub seed: u64,
}

/// 0.1, 0.2, ..., 0.9.
pub fn default_ratios() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// The base training schedule: 30 epochs of SGD at learning rate 0.01.
pub fn base_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        optimizer: Optimizer::Sgd {
            lr: 0.01,
            momentum: 0.9,
        },
        schedule: Schedule::Constant,
        batch_size: 64,
        seed: 0,
        scope: TrainScope::Full,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "ROAR")]
    Roar,
    #[serde(rename = "KeAR")]
    Kear,
    #[serde(rename = "KAFT")]
    Kaft,
    #[serde(rename = "KAFT-C")]
    KaftC,
    #[serde(rename = "RAFT-C-abs")]
    RaftCAbs,
    #[serde(rename = "KAFT-C-abs")]
    KaftCAbs,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Roar,
        Preset::Kear,
        Preset::Kaft,
        Preset::KaftC,
        Preset::RaftCAbs,
        Preset::KaftCAbs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Roar => "ROAR",
            Preset::Kear => "KeAR",
            Preset::Kaft => "KAFT",
            Preset::KaftC => "KAFT-C",
            Preset::RaftCAbs => "RAFT-C-abs",
            Preset::KaftCAbs => "KAFT-C-abs",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace("|·|", "-abs");
        Preset::ALL
            .into_iter()
            .find(|p| p.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Unknown {
                kind: "scheme preset",
                name: s.to_string(),
            })
    }
}

pub fn preset(p: Preset) -> SchemeConfig {
    let base = base_train_config();
    let finetune = TrainConfig {
        schedule: Schedule::Cosine { warmup_epochs: 1 },
        ..base.clone()
    };
    let head = TrainConfig {
        epochs: 10,
        scope: TrainScope::HeadOnly,
        ..finetune.clone()
    };
    let (order, update, train_fraction, cfg) = match p {
        Preset::Roar => (
            OcclusionOrder::HighestFirst,
            UpdateProtocol::RetrainFull,
            1.0,
            base,
        ),
        Preset::Kear => (
            OcclusionOrder::LowestFirst,
            UpdateProtocol::RetrainFull,
            1.0,
            base,
        ),
        Preset::Kaft => (
            OcclusionOrder::LowestFirst,
            UpdateProtocol::FinetuneFull,
            0.2,
            finetune,
        ),
        Preset::KaftC => (
            OcclusionOrder::LowestFirst,
            UpdateProtocol::FinetuneHead,
            0.1,
            head,
        ),
        Preset::RaftCAbs => (
            OcclusionOrder::RelevantFirst,
            UpdateProtocol::FinetuneHead,
            0.1,
            head,
        ),
        Preset::KaftCAbs => (
            OcclusionOrder::IrrelevantFirst,
            UpdateProtocol::FinetuneHead,
            0.1,
            head,
        ),
    };
    SchemeConfig {
        name: p.name().to_string(),
        order,
        update,
        ratios: default_ratios(),
        repetitions: 5,
        train_fraction,
        finetune_cfg: cfg,
        explain_splits: SplitFlags::default(),
        replacement: None,
        target: TargetRule::Predicted,
        seed: 0,
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(Error::config("ratio grid is empty"));
        }
        if self.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::config(format!(
                "ratios must lie in [0, 1]: {:?}",
                self.ratios
            )));
        }
        if self.ratios.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "ratios must be strictly ascending: {:?}",
                self.ratios
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::config("repetitions must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::config(format!(
                "train fraction must be in (0, 1], got {}",
                self.train_fraction
            )));
        }
        if self.finetune_cfg.epochs > 0 {
            self.finetune_cfg.validate()?;
        }
        let scope_ok = match self.update {
            UpdateProtocol::FinetuneHead => self.finetune_cfg.scope == TrainScope::HeadOnly,
            _ => self.finetune_cfg.scope == TrainScope::Full,
        };
        if !scope_ok {
            return Err(Error::config(format!(
                "update {:?} is inconsistent with training scope {:?}",
                self.update, self.finetune_cfg.scope
            )));
        }
        Ok(())
    }

    /// Keep-type schemes occlude the least important features.
    pub fn is_keep(&self) -> bool {
        matches!(
            self.order,
            OcclusionOrder::LowestFirst | OcclusionOrder::IrrelevantFirst
        )
    }

    pub fn is_remove(&self) -> bool {
        matches!(
            self.order,
            OcclusionOrder::HighestFirst | OcclusionOrder::RelevantFirst
        )
    }
}
