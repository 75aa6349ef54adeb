use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::losses::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageMode {
    /// Siamese, label and domain terms optimised jointly.
    #[serde(rename = "one")]
    OneStage,
    /// Siamese alignment first, then the domain-adversarial objective with
    /// the gene branch removed.
    #[serde(rename = "two")]
    TwoStage,
}

impl FromStr for StageMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" | "one-stage" => Ok(StageMode::OneStage),
            "two" | "two-stage" => Ok(StageMode::TwoStage),
            _ => Err(Error::contract(format!("unknown stage mode `{s}` (expected one|two)"))),
        }
    }
}

impl fmt::Display for StageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageMode::OneStage => "one",
            StageMode::TwoStage => "two",
        })
    }
}

/// Which components of the full model are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub prompts: bool,
    pub siamese: bool,
    pub dann: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "+siamese")]
    Siamese,
    #[serde(rename = "+dann")]
    Dann,
    #[serde(rename = "+siamese+dann")]
    SiameseDann,
    #[serde(rename = "+prompts")]
    Prompts,
    #[serde(rename = "full")]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Baseline,
        Variant::Siamese,
        Variant::Dann,
        Variant::SiameseDann,
        Variant::Prompts,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Siamese => "+siamese",
            Variant::Dann => "+dann",
            Variant::SiameseDann => "+siamese+dann",
            Variant::Prompts => "+prompts",
            Variant::Full => "full",
        }
    }

    pub fn components(self) -> Components {
        let (prompts, siamese, dann) = match self {
            Variant::Baseline => (false, false, false),
            Variant::Siamese => (false, true, false),
            Variant::Dann => (false, false, true),
            Variant::SiameseDann => (false, true, true),
            Variant::Prompts => (true, false, false),
            Variant::Full => (true, true, true),
        };
        Components { prompts, siamese, dann }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = match s {
            "baseline-abmil" | "abmil" => "baseline",
            other => other,
        };
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown variant `{s}`")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub coupled_weight_decay: bool,
    pub max_epochs: usize,
    /// Epochs without improvement of the validation metric before stopping.
    pub patience: usize,
    pub batch_size: usize,
    /// Steepness of the adversarial warm-up schedule.
    pub gamma: f64,
    pub stage: StageMode,
    pub variant: Variant,
    /// Learning rate and epoch budget of gene-branch pretraining.
    pub gene_lr: f64,
    pub gene_max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            weight_decay: 1e-5,
            coupled_weight_decay: false,
            max_epochs: 100,
            patience: 10,
            batch_size: 16,
            gamma: 10.0,
            stage: StageMode::OneStage,
            variant: Variant::Full,
            gene_lr: 5e-5,
            gene_max_epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if !(self.gene_lr > 0.0) {
            return Err(Error::contract("gene_lr must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::contract("patience must be at least 1"));
        }
        if self.max_epochs == 0 || self.gene_max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("max_epochs, gene_max_epochs and batch_size must be positive"));
        }
        if self.stage == StageMode::TwoStage && self.max_epochs < 2 {
            return Err(Error::contract("two-stage training needs max_epochs >= 2"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::contract("gamma must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            coupled_weight_decay: self.coupled_weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn gene_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.gene_lr,
            ..self.adam()
        }
    }

    pub fn schedule(&self, max_epochs: usize) -> Schedule {
        Schedule {
            gamma: self.gamma,
            max_epochs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert_eq!("baseline-abmil".parse::<Variant>().unwrap(), Variant::Baseline);
        assert!(matches!("+magic".parse::<Variant>(), Err(Error::Contract(_))));
    }

    #[test]
    fn config_json_roundtrip_with_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"lr": 0.001, "stage": "two"}"#).unwrap();
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.stage, StageMode::TwoStage);
        assert_eq!(c.batch_size, 16);
        assert!(TrainConfig { patience: 0, ..c }.validate().is_err());
    }
}
