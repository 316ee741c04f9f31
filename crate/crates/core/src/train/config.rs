use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ArchName;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_MAX_EPOCHS: usize = 100;
pub const DEFAULT_PATIENCE: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::InvalidConfig(format!("unknown optimizer `{other}` (adam|sgd)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Heavy-ball momentum for SGD; ignored by Adam.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }

    pub fn sgd() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate: 1e-2,
            momentum: 0.9,
            ..Self::adam()
        }
    }

    fn for_kind(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Adam => Self::adam(),
            OptimizerKind::Sgd => Self::sgd(),
        }
    }
}

/// SGD for the Bondi and Marra baselines, Adam for everything else.
pub fn select_optimizer(arch_name: &str) -> Result<OptimizerConfig> {
    Ok(match arch_name.parse::<ArchName>()? {
        ArchName::Bondi | ArchName::Marra => OptimizerConfig::sgd(),
        _ => OptimizerConfig::adam(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub optimizer: OptimizerConfig,
    /// Epochs without a validation-loss improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Stop as soon as an epoch reaches this training accuracy.
    pub target_train_accuracy: Option<f64>,
}

impl TrainConfig {
    pub fn for_arch(arch_name: &str) -> Result<Self> {
        Ok(Self {
            batch_size: DEFAULT_BATCH_SIZE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            optimizer: select_optimizer(arch_name)?,
            early_stop_patience: DEFAULT_PATIENCE,
            seed: 0,
            target_train_accuracy: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !o.learning_rate.is_finite() || o.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!("learning_rate {} must be finite and >= 0", o.learning_rate)));
        }
        if !(0.0..1.0).contains(&o.momentum) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::InvalidConfig("momentum and betas must lie in [0, 1)".into()));
        }
        if !(o.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if let Some(t) = self.target_train_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidConfig("target_train_accuracy must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Applies every key present in `o`. Choosing a different optimizer
    /// resets its hyper-parameters to that optimizer's defaults first.
    pub fn apply(&mut self, o: &TrainOverrides) {
        if let Some(k) = o.optimizer {
            if k != self.optimizer.kind {
                self.optimizer = OptimizerConfig::for_kind(k);
            }
        }
        let opt = &mut self.optimizer;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(self.batch_size, o.batch_size);
        set!(self.max_epochs, o.max_epochs);
        set!(self.early_stop_patience, o.early_stop_patience);
        set!(self.seed, o.seed);
        set!(opt.learning_rate, o.learning_rate);
        set!(opt.momentum, o.momentum);
        set!(opt.beta1, o.beta1);
        set!(opt.beta2, o.beta2);
        set!(opt.epsilon, o.epsilon);
        if o.target_train_accuracy.is_some() {
            self.target_train_accuracy = o.target_train_accuracy;
        }
    }

    /// Full configuration as a flat `key = value` file.
    pub fn to_toml(&self) -> String {
        let o = &self.optimizer;
        let flat = TrainOverrides {
            schema_version: Some(CONFIG_SCHEMA_VERSION),
            batch_size: Some(self.batch_size),
            max_epochs: Some(self.max_epochs),
            early_stop_patience: Some(self.early_stop_patience),
            seed: Some(self.seed),
            optimizer: Some(o.kind),
            learning_rate: Some(o.learning_rate),
            momentum: Some(o.momentum),
            beta1: Some(o.beta1),
            beta2: Some(o.beta2),
            epsilon: Some(o.epsilon),
            target_train_accuracy: self.target_train_accuracy,
        };
        toml::to_string(&flat).expect("config serializes")
    }
}

/// Partial configuration as read from a config file or command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub schema_version: Option<u32>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub seed: Option<u64>,
    pub optimizer: Option<OptimizerKind>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub target_train_accuracy: Option<f64>,
}

impl TrainOverrides {
    pub fn from_toml(text: &str) -> Result<Self> {
        let o: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if let Some(v) = o.schema_version {
            if v != CONFIG_SCHEMA_VERSION {
                return Err(Error::InvalidConfig(format!("unsupported config schema {v}")));
            }
        }
        Ok(o)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}
