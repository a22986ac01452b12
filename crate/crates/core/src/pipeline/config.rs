use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetKind, SplitSpec};
use crate::models::StudentId;
pub use crate::nn::Loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Offline,
    Colearn,
    ColearnOutlier,
    ColearnNoise,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Offline, Regime::Colearn, Regime::ColearnOutlier, Regime::ColearnNoise];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Offline => "offline",
            Regime::Colearn => "colearn",
            Regime::ColearnOutlier => "colearn_outlier",
            Regime::ColearnNoise => "colearn_noise",
        }
    }

    pub fn is_colearn(self) -> bool {
        self != Regime::Offline
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s.trim())
            .ok_or_else(|| format!("unknown regime `{}` (expected offline, colearn, colearn_outlier or colearn_noise)", s.trim()))
    }
}

/// Space in which teacher and student score distributions are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSpace {
    Log,
    Raw,
}

macro_rules! simple_enum_parse {
    ($t:ty, $($name:literal => $v:expr),+) => {
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($name => Ok($v),)+
                    other => Err(format!("unknown value `{other}` (expected {})", [$($name),+].join(" or "))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $v { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

simple_enum_parse!(ScoreSpace, "log" => ScoreSpace::Log, "raw" => ScoreSpace::Raw);
simple_enum_parse!(Loss, "mae" => Loss::Mae, "mse" => Loss::Mse);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub inlier_class: u8,
    pub regime: Regime,
    pub student_id: StudentId,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Noise factor of the noise-exposure regime.
    pub epsilon: f64,
    /// Outlier draws per inlier in the outlier-exposure regime.
    pub rho: f64,
    /// Weight of the student term in the joint loss.
    pub lambda: f64,
    /// Offset inside `ln(raw + delta)`.
    pub delta: f64,
    pub train_count: usize,
    pub test_inlier_count: usize,
    pub test_anomaly_count: usize,
    /// Let the student loss back-propagate into the teacher.
    pub coupled: bool,
    #[serde(default = "default_teacher_loss")]
    pub teacher_loss: Loss,
    pub student_loss: Loss,
    pub emd_space: ScoreSpace,
}

fn default_teacher_loss() -> Loss {
    Loss::Mse
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist,
            inlier_class: 0,
            regime: Regime::Offline,
            student_id: StudentId::S1,
            seed: 0,
            epochs: 300,
            batch_size: 100,
            lr: 1e-3,
            epsilon: 0.1,
            rho: 0.5,
            lambda: 1.0,
            delta: 1e-12,
            train_count: 6000,
            test_inlier_count: 1000,
            test_anomaly_count: 1000,
            coupled: false,
            teacher_loss: Loss::Mse,
            student_loss: Loss::Mae,
            emd_space: ScoreSpace::Log,
        }
    }
}

impl ExperimentConfig {
    /// Reduced schedule that fits on a laptop.
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            train_count: 2000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(ConfigError::new(field, "must be a positive integer"))
            } else {
                Ok(())
            }
        };
        positive("epochs", self.epochs)?;
        positive("batch_size", self.batch_size)?;
        positive("train_count", self.train_count)?;
        positive("test_inlier_count", self.test_inlier_count)?;
        positive("test_anomaly_count", self.test_anomaly_count)?;
        if self.inlier_class > 9 {
            return Err(ConfigError::new("inlier_class", "must lie in 0..=9"));
        }
        for (field, v) in [("lr", self.lr), ("delta", self.delta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::new(field, "must be a finite number > 0"));
            }
        }
        for (field, v) in [("epsilon", self.epsilon), ("lambda", self.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::new(field, "must be a finite number >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(ConfigError::new("rho", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            inlier_class: self.inlier_class,
            train_count: self.train_count,
            test_inlier_count: self.test_inlier_count,
            test_anomaly_count: self.test_anomaly_count,
            seed: self.seed,
        }
    }

    /// Short stable digest of every field.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Whether `other` trains an identical teacher (same data, seed and
    /// teacher hyperparameters) when targets are detached.
    pub fn shares_teacher(&self, other: &Self) -> bool {
        let key = |c: &Self| {
            let mut c = c.clone();
            c.regime = Regime::Offline;
            c.student_id = StudentId::S1;
            c
        };
        !self.coupled && !other.coupled && key(self) == key(other)
    }
}
