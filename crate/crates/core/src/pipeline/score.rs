use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::data::ImageSet;
use crate::models::{Network, StudentModel, TeacherModel};
use crate::nn::{Graph, Loss, NnError, Tensor};

/// Images scored per forward pass.
pub const SCORE_CHUNK: usize = 100;

/// `ln(raw + delta)`.
pub fn log_transform(raw: f64, delta: f64) -> f64 {
    (raw + delta).ln()
}

/// Per-sample reconstruction error of a `[N, 1, 28, 28]` batch.
pub fn teacher_score(teacher: &TeacherModel, x: &Tensor<f32>) -> Result<Vec<f32>, NnError> {
    sample_errors(&teacher.network, x, teacher.loss)
}

pub(crate) fn sample_errors(net: &Network<f32>, x: &Tensor<f32>, kind: Loss) -> Result<Vec<f32>, NnError> {
    net.check_batch(x.shape())?;
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let xi = g.input(x.clone());
    let recon = net.forward(&mut g, &bound, xi)?;
    let per = g.sample_loss(kind, recon, xi)?;
    Ok(g.value(per).values().to_vec())
}

fn chunks(set: &ImageSet) -> impl Iterator<Item = Vec<usize>> + '_ {
    (0..set.len()).step_by(SCORE_CHUNK).map(|s| (s..(s + SCORE_CHUNK).min(set.len())).collect())
}

/// Raw teacher scores of every image, in set order.
pub fn teacher_scores(teacher: &TeacherModel, set: &ImageSet) -> Result<Vec<f64>, PipelineError> {
    let mut out = Vec::with_capacity(set.len());
    for idx in chunks(set) {
        out.extend(teacher_score(teacher, &set.batch(&idx))?.into_iter().map(f64::from));
    }
    Ok(out)
}

/// Student outputs (log-space scores) of every image, in set order.
pub fn student_scores(student: &StudentModel, set: &ImageSet) -> Result<Vec<f64>, PipelineError> {
    let mut out = Vec::with_capacity(set.len());
    for idx in chunks(set) {
        out.extend(student.predict(set.batch(&idx))?.into_iter().map(f64::from));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreOrigin {
    Teacher,
    Student,
}

/// Scores of one model over a labelled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub origin: ScoreOrigin,
    /// Reconstruction errors; only present for the teacher.
    pub raw: Option<Vec<f64>>,
    pub log: Vec<f64>,
    /// True where the sample is an anomaly.
    pub outlier: Vec<bool>,
}

impl ScoreSet {
    pub fn teacher(raw: Vec<f64>, labels: &[u8], delta: f64) -> Self {
        Self {
            origin: ScoreOrigin::Teacher,
            log: raw.iter().map(|&r| log_transform(r, delta)).collect(),
            raw: Some(raw),
            outlier: labels.iter().map(|&l| l != 0).collect(),
        }
    }

    pub fn student(log: Vec<f64>, labels: &[u8]) -> Self {
        Self {
            origin: ScoreOrigin::Student,
            raw: None,
            log,
            outlier: labels.iter().map(|&l| l != 0).collect(),
        }
    }

    pub fn labels(&self) -> Vec<u8> {
        self.outlier.iter().map(|&o| u8::from(o)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Layer;

    #[test]
    fn log_examples() {
        assert!((log_transform(0.0, 1e-12) - (-27.631_021_115_928_55)).abs() < 1e-9);
        assert!(log_transform(1.0 - 1e-3, 1e-3).abs() < 1e-15);
        assert!(log_transform(0.1, 1e-12) < log_transform(0.2, 1e-12));
    }

    /// A zero-weight network whose output is the constant sigmoid(0) = 0.5.
    fn half_net() -> Network<f32> {
        let layers = vec![
            Layer::Flatten,
            Layer::Dense { inputs: 4, outputs: 4 },
            Layer::Unflatten {
                channels: 1,
                height: 2,
                width: 2,
            },
            Layer::Sigmoid,
        ];
        let params = vec![Tensor::zeros(&[4, 4]), Tensor::zeros(&[4])];
        Network::from_parts(&[1, 2, 2], layers, params).unwrap()
    }

    #[test]
    fn score_examples() {
        let net = half_net();
        assert_eq!(sample_errors(&net, &Tensor::zeros(&[1, 1, 2, 2]), Loss::Mse).unwrap(), vec![0.25]);
        assert_eq!(sample_errors(&net, &Tensor::filled(&[1, 1, 2, 2], 0.5), Loss::Mse).unwrap(), vec![0.0]);
        assert_eq!(sample_errors(&net, &Tensor::zeros(&[1, 1, 2, 2]), Loss::Mae).unwrap(), vec![0.5]);
        assert!(sample_errors(&net, &Tensor::zeros(&[1, 2, 2]), Loss::Mse).is_err());
    }

    #[test]
    fn batch_equals_loop() {
        let teacher = TeacherModel::build(5);
        let x: Vec<f32> = (0..3 * 784).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        let batch = Tensor::new(&[3, 1, 28, 28], x).unwrap();
        let all = teacher_score(&teacher, &batch).unwrap();
        for (i, &a) in all.iter().enumerate() {
            let one = teacher_score(&teacher, &batch.slice_outer(i, 1)).unwrap();
            assert!((one[0] - a).abs() <= 1e-6 * a.abs(), "{} vs {a}", one[0]);
            assert!(a >= 0.0);
        }
    }

    #[test]
    fn score_set_logs() {
        let s = ScoreSet::teacher(vec![0.0, 1.0], &[0, 1], 1e-12);
        assert_eq!(s.log[1], (1.0f64 + 1e-12).ln());
        assert_eq!(s.outlier, vec![false, true]);
        assert_eq!(s.labels(), vec![0, 1]);
    }
}
