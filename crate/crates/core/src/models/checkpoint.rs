//! Versioned JSON checkpoints.
//!
//! Parameters are stored as 64-bit floats; values written from an `f32`
//! model therefore load back bit-identically.

use serde::{Deserialize, Serialize};

use super::arch::{teacher_layers, StudentId, StudentModel, TeacherModel, IMAGE_SHAPE};
use super::network::{Layer, Network};
use crate::nn::{Loss, NnError, Tensor};

pub const FORMAT: &str = "kdad-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint: {0}")]
    Format(String),
    #[error("inconsistent checkpoint: {0}")]
    Shape(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// `teacher` or a student id `S1`..`S7`.
    pub arch: String,
    pub seed: u64,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub params: Vec<Vec<f64>>,
    /// Teacher reconstruction loss; absent for students and read as mse.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<Loss>,
}

impl Checkpoint {
    fn from_network(arch: String, seed: u64, net: &Network<f32>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            arch,
            seed,
            input_shape: net.input_shape().to_vec(),
            layers: net.layers().to_vec(),
            params: net
                .params()
                .iter()
                .map(|p| p.values().iter().map(|&v| f64::from(v)).collect())
                .collect(),
            loss: None,
        }
    }

    pub fn from_teacher(t: &TeacherModel) -> Self {
        Self {
            loss: Some(t.loss),
            ..Self::from_network("teacher".into(), t.seed, &t.network)
        }
    }

    pub fn from_student(s: &StudentModel) -> Self {
        Self::from_network(s.id.to_string(), s.seed, &s.network)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    /// Parses and validates the header, architecture and parameter shapes.
    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(CheckpointError::Format(format!("format `{}`", ck.format)));
        }
        if ck.version != VERSION {
            return Err(CheckpointError::Format(format!("version {}", ck.version)));
        }
        if ck.input_shape != IMAGE_SHAPE {
            return Err(CheckpointError::Format(format!("input shape {:?}", ck.input_shape)));
        }
        let canonical = match ck.arch.as_str() {
            "teacher" => teacher_layers().0,
            other => other
                .parse::<StudentId>()
                .map_err(|e| CheckpointError::Format(e.to_string()))?
                .layers(),
        };
        if ck.layers != canonical {
            return Err(CheckpointError::Format(format!("layers do not match architecture {}", ck.arch)));
        }
        // shape check happens against the canonical layer list
        ck.network()?;
        Ok(ck)
    }

    fn network(&self) -> Result<Network<f32>, NnError> {
        let shapes: Vec<Vec<usize>> = self.layers.iter().flat_map(Layer::param_shapes).collect();
        if shapes.len() != self.params.len() {
            return Err(NnError::InvalidArgument(format!(
                "expected {} parameter arrays, found {}",
                shapes.len(),
                self.params.len()
            )));
        }
        let params = shapes
            .iter()
            .zip(&self.params)
            .map(|(shape, values)| Tensor::new(shape, values.iter().map(|&v| v as f32).collect()))
            .collect::<Result<Vec<_>, _>>()?;
        Network::from_parts(&self.input_shape, self.layers.clone(), params)
    }

    pub fn into_teacher(self) -> Result<TeacherModel, CheckpointError> {
        if self.arch != "teacher" {
            return Err(CheckpointError::Format(format!("expected a teacher, found {}", self.arch)));
        }
        Ok(TeacherModel::from_network(self.network()?, self.seed, self.loss.unwrap_or(Loss::Mse))?)
    }

    pub fn into_student(self) -> Result<StudentModel, CheckpointError> {
        let id: StudentId = self.arch.parse().map_err(|e: super::arch::UnknownStudent| CheckpointError::Format(e.to_string()))?;
        Ok(StudentModel::from_network(id, self.network()?, self.seed)?)
    }
}
