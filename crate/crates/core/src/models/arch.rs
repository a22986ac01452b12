//! The frozen teacher and student architectures.
//!
//! Channel widths are not published with the reference size table, so they
//! were chosen to land each parameter count within ±25% of its target:
//!
//! | model   | target | actual |
//! |---------|-------:|-------:|
//! | teacher | 19,360 | 20,557 |
//! | S1      |  7,180 |  7,509 |
//! | S2      |  2,190 |  2,321 |
//! | S3      |  1,060 |  1,153 |
//! | S4      |    409 |    385 |
//! | S5      |    225 |    213 |
//! | S6      |    133 |    127 |
//! | S7      |     77 |     89 |
//!
//! Every convolution is 3×3 / stride 1 / padding 1 and is followed by a
//! relu. The teacher decoder mirrors the encoder's pooling with
//! nearest-neighbour upsampling and ends in a sigmoid. Student heads are a
//! single linear unit because log-scores are unbounded.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::network::{Layer, Network, SizeReport};
use crate::nn::{Graph, Loss, NnError, Tensor};
use crate::seed;

pub const IMAGE_SHAPE: [usize; 3] = [1, 28, 28];
pub const REPRESENTATION_SIZE: usize = 20;

/// Parameter counts from the reference size table, teacher first.
pub const REFERENCE_PARAMS: [usize; 8] = [19_360, 7_180, 2_190, 1_060, 409, 225, 133, 77];
/// FLOP counts from the reference size table; order-of-magnitude targets only.
pub const REFERENCE_FLOPS: [u64; 8] = [18_910_000, 6_370_000, 2_250_000, 432_000, 131_000, 114_000, 58_000, 53_000];

const POOL: Layer = Layer::AvgPool { window: 2 };
const UP: Layer = Layer::Upsample { factor: 2 };

fn conv_relu(stack: &mut Vec<Layer>, cin: usize, cout: usize) {
    stack.push(Layer::conv3(cin, cout));
    stack.push(Layer::Relu);
}

/// Teacher layers and the index one past the representation layer.
pub fn teacher_layers() -> (Vec<Layer>, usize) {
    let mut l = Vec::new();
    conv_relu(&mut l, 1, 16);
    conv_relu(&mut l, 16, 16);
    l.push(POOL);
    conv_relu(&mut l, 16, 16);
    l.push(POOL);
    conv_relu(&mut l, 16, 8);
    conv_relu(&mut l, 8, 4);
    l.push(Layer::Flatten);
    l.push(Layer::Dense {
        inputs: 4 * 7 * 7,
        outputs: REPRESENTATION_SIZE,
    });
    l.push(Layer::Relu);
    let representation_end = l.len();
    l.push(Layer::Dense {
        inputs: REPRESENTATION_SIZE,
        outputs: 4 * 7 * 7,
    });
    l.push(Layer::Relu);
    l.push(Layer::Unflatten {
        channels: 4,
        height: 7,
        width: 7,
    });
    conv_relu(&mut l, 4, 8);
    conv_relu(&mut l, 8, 16);
    l.push(UP);
    conv_relu(&mut l, 16, 16);
    l.push(UP);
    conv_relu(&mut l, 16, 16);
    l.push(Layer::conv3(16, 1));
    l.push(Layer::Sigmoid);
    (l, representation_end)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StudentId {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    S7,
}

impl StudentId {
    pub const ALL: [StudentId; 7] = [
        StudentId::S1,
        StudentId::S2,
        StudentId::S3,
        StudentId::S4,
        StudentId::S5,
        StudentId::S6,
        StudentId::S7,
    ];

    /// 1-based position in the size ladder (S1 is the largest).
    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn target_params(self) -> usize {
        REFERENCE_PARAMS[self.number()]
    }

    pub fn layers(self) -> Vec<Layer> {
        // (channels after each conv, pool after conv index)
        let (widths, pools): (&[usize], &[usize]) = match self {
            StudentId::S1 => (&[16, 16, 16, 16, 2], &[1, 2]),
            StudentId::S2 => (&[8, 8, 8, 8, 4], &[1, 2]),
            StudentId::S3 => (&[8, 8, 4], &[0, 1]),
            StudentId::S4 => (&[4, 4], &[0, 1]),
            StudentId::S5 => (&[4, 2], &[0, 1]),
            StudentId::S6 => (&[4, 1], &[0, 1]),
            StudentId::S7 => (&[2, 1], &[0, 1]),
        };
        let mut l = Vec::new();
        let mut cin = 1;
        for (i, &w) in widths.iter().enumerate() {
            conv_relu(&mut l, cin, w);
            if pools.contains(&i) {
                l.push(POOL);
            }
            cin = w;
        }
        l.push(Layer::Flatten);
        l.push(Layer::Dense {
            inputs: cin * 7 * 7,
            outputs: 1,
        });
        l
    }
}

impl fmt::Display for StudentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.number())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown student id `{0}` (expected S1..S7)")]
pub struct UnknownStudent(pub String);

impl FromStr for StudentId {
    type Err = UnknownStudent;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let n: Option<usize> = t.strip_prefix(['S', 's']).and_then(|d| d.parse().ok());
        match n {
            Some(n @ 1..=7) => Ok(StudentId::ALL[n - 1]),
            _ => Err(UnknownStudent(t.to_string())),
        }
    }
}

/// Convolutional autoencoder whose reconstruction error is the anomaly score.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    pub network: Network<f32>,
    representation_end: usize,
    pub seed: u64,
    /// Reconstruction loss, used both for training and as the score.
    pub loss: Loss,
}

impl TeacherModel {
    pub fn build(seed: u64) -> Self {
        let (layers, representation_end) = teacher_layers();
        let network = Network::new(&IMAGE_SHAPE, layers, &mut seed::rng(seed, "teacher-init", &[]))
            .expect("teacher architecture is consistent");
        Self {
            network,
            representation_end,
            seed,
            loss: Loss::Mse,
        }
    }

    /// Sets the output bias so a blank decoder input reconstructs every
    /// pixel as `mean`. Starting from the data's average brightness keeps the
    /// early updates from driving the sigmoid into saturation, where an
    /// all-black reconstruction gets stuck for good.
    pub fn set_output_level(&mut self, mean: f64) {
        let m = mean.clamp(1e-3, 1.0 - 1e-3);
        let logit = (m / (1.0 - m)).ln() as f32;
        let bias = self.network.params_mut().last_mut().expect("teacher has parameters");
        bias.values_mut().iter_mut().for_each(|b| *b = logit);
    }

    pub fn with_loss(mut self, loss: Loss) -> Self {
        self.loss = loss;
        self
    }

    pub(crate) fn from_network(network: Network<f32>, seed: u64, loss: Loss) -> Result<Self, NnError> {
        let (layers, representation_end) = teacher_layers();
        if network.layers() != layers.as_slice() {
            return Err(NnError::InvalidArgument("layers do not match the teacher architecture".into()));
        }
        Ok(Self {
            network,
            representation_end,
            seed,
            loss,
        })
    }

    /// Bottleneck activations `[N, 20]` for a `[N, 1, 28, 28]` batch.
    pub fn encode(&self, batch: Tensor<f32>) -> Result<Tensor<f32>, NnError> {
        self.network.check_batch(batch.shape())?;
        let mut g = Graph::new();
        let bound = self.network.bind(&mut g);
        let x = g.input(batch);
        let z = self.network.forward_layers(&mut g, &bound, x, 0..self.representation_end)?;
        Ok(g.value(z).clone())
    }

    pub fn reconstruct(&self, batch: Tensor<f32>) -> Result<Tensor<f32>, NnError> {
        self.network.predict(batch)
    }

    pub fn size_report(&self) -> SizeReport {
        self.network.size_report()
    }
}

/// Small convolutional regressor trained to reproduce the teacher's score.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    pub id: StudentId,
    pub network: Network<f32>,
    pub seed: u64,
}

impl StudentModel {
    pub fn build(id: StudentId, seed: u64) -> Self {
        let network = Network::new(&IMAGE_SHAPE, id.layers(), &mut seed::rng(seed, "student-init", &[id.number() as u64]))
            .expect("student architecture is consistent");
        Self { id, network, seed }
    }

    pub(crate) fn from_network(id: StudentId, network: Network<f32>, seed: u64) -> Result<Self, NnError> {
        if network.layers() != id.layers().as_slice() {
            return Err(NnError::InvalidArgument(format!("layers do not match the {id} architecture")));
        }
        Ok(Self { id, network, seed })
    }

    /// One score per image of a `[N, 1, 28, 28]` batch.
    pub fn predict(&self, batch: Tensor<f32>) -> Result<Vec<f32>, NnError> {
        Ok(self.network.predict(batch)?.into_values())
    }

    pub fn size_report(&self) -> SizeReport {
        self.network.size_report()
    }
}
