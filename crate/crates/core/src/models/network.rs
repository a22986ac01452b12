use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{glorot_uniform, Gradients, Graph, NnError, NodeId, Real, Tensor};

/// One stage of a feed-forward network. Shapes are per sample, `[C, H, W]`
/// for spatial stages and `[n]` after `Flatten`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        window: usize,
    },
    Upsample {
        factor: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Flatten,
    Unflatten {
        channels: usize,
        height: usize,
        width: usize,
    },
    Relu,
    Sigmoid,
}

impl Layer {
    /// 3×3, stride 1, "same" padding.
    pub const fn conv3(in_channels: usize, out_channels: usize) -> Self {
        Layer::Conv2d {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![vec![out_channels, in_channels, kernel, kernel], vec![out_channels]],
            Layer::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Per-sample output shape, or an error if `input` is not accepted.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let bad = |expected: &'static str| NnError::RankMismatch {
            op: "layer",
            expected,
            found: input.to_vec(),
        };
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = *input else { return Err(bad("3")) };
                if c != in_channels || stride == 0 || kernel == 0 || kernel > h + 2 * padding || kernel > w + 2 * padding {
                    return Err(NnError::ShapeMismatch {
                        op: "conv2d",
                        expected: vec![in_channels, h, w],
                        found: input.to_vec(),
                    });
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            Layer::AvgPool { window } => {
                let [c, h, w] = *input else { return Err(bad("3")) };
                crate::nn::ops::check_pool(window, h, w)?;
                Ok(vec![c, h / window, w / window])
            }
            Layer::Upsample { factor } => {
                let [c, h, w] = *input else { return Err(bad("3")) };
                if factor == 0 {
                    return Err(NnError::InvalidArgument("upsample factor must be >= 1".into()));
                }
                Ok(vec![c, h * factor, w * factor])
            }
            Layer::Dense { inputs, outputs } => match *input {
                [n] if n == inputs => Ok(vec![outputs]),
                _ => Err(NnError::ShapeMismatch {
                    op: "dense",
                    expected: vec![inputs],
                    found: input.to_vec(),
                }),
            },
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Unflatten {
                channels,
                height,
                width,
            } => {
                if input != [channels * height * width] {
                    return Err(NnError::ShapeMismatch {
                        op: "unflatten",
                        expected: vec![channels * height * width],
                        found: input.to_vec(),
                    });
                }
                Ok(vec![channels, height, width])
            }
            Layer::Relu | Layer::Sigmoid => Ok(input.to_vec()),
        }
    }

    /// Floating point operations for one sample: a multiply-accumulate
    /// counts as 2, pooling/upsampling/activations one per output element.
    pub fn flops(&self, input: &[usize]) -> Result<u64, NnError> {
        let out = self.output_shape(input)?;
        let out_elems: usize = out.iter().product();
        Ok(match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (2 * kernel * kernel * in_channels * out_channels * out[1] * out[2]) as u64,
            Layer::Dense { inputs, outputs } => (2 * inputs * outputs) as u64,
            Layer::AvgPool { .. } | Layer::Upsample { .. } | Layer::Relu | Layer::Sigmoid => out_elems as u64,
            Layer::Flatten | Layer::Unflatten { .. } => 0,
        })
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
            Layer::Dense { inputs, outputs } => (inputs, outputs),
            _ => (0, 0),
        }
    }
}

/// Parameter and FLOP totals of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeReport {
    pub params: usize,
    pub flops: u64,
}

/// A feed-forward stack of [`Layer`]s with its parameters in layer order
/// (weights then bias for every parametrised layer).
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    params: Vec<Tensor<T>>,
}

impl<T: Real> Network<T> {
    /// Builds with zero biases and Glorot-uniform weights.
    pub fn new<R: Rng + ?Sized>(input_shape: &[usize], layers: Vec<Layer>, rng: &mut R) -> Result<Self, NnError> {
        Self::validate(input_shape, &layers)?;
        let mut params = Vec::new();
        for layer in &layers {
            let shapes = layer.param_shapes();
            if shapes.is_empty() {
                continue;
            }
            let (fan_in, fan_out) = layer.fans();
            let weights = glorot_uniform(&shapes[0], fan_in, fan_out, rng);
            params.push(weights);
            params.push(Tensor::zeros(&shapes[1]));
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            params,
        })
    }

    /// Rebuilds from explicit parameter tensors (checkpoint loading).
    pub fn from_parts(input_shape: &[usize], layers: Vec<Layer>, params: Vec<Tensor<T>>) -> Result<Self, NnError> {
        Self::validate(input_shape, &layers)?;
        let expected: Vec<Vec<usize>> = layers.iter().flat_map(Layer::param_shapes).collect();
        if expected.len() != params.len() {
            return Err(NnError::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (shape, p) in expected.iter().zip(&params) {
            if shape.as_slice() != p.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "parameter",
                    expected: shape.clone(),
                    found: p.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            params,
        })
    }

    fn validate(input_shape: &[usize], layers: &[Layer]) -> Result<Vec<usize>, NnError> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(NnError::InvalidShape(input_shape.to_vec()));
        }
        layers.iter().try_fold(input_shape.to_vec(), |shape, l| l.output_shape(&shape))
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        Self::validate(&self.input_shape, &self.layers).expect("validated at construction")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// Length of the flattened parameter vector.
    pub fn param_len(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn count_params(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn count_flops(&self, input_shape: &[usize]) -> Result<u64, NnError> {
        let mut shape = input_shape.to_vec();
        let mut total = 0;
        for layer in &self.layers {
            total += layer.flops(&shape)?;
            shape = layer.output_shape(&shape)?;
        }
        Ok(total)
    }

    pub fn size_report(&self) -> SizeReport {
        SizeReport {
            params: self.count_params(),
            flops: self.count_flops(&self.input_shape).expect("validated at construction"),
        }
    }

    /// Places every parameter on the tape and returns their node ids.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<NodeId> {
        self.params.iter().map(|p| g.param(p)).collect()
    }

    /// Records the forward pass of layers `range` for a `[N, ...]` batch node.
    pub fn forward_layers(
        &self,
        g: &mut Graph<T>,
        bound: &[NodeId],
        input: NodeId,
        range: std::ops::Range<usize>,
    ) -> Result<NodeId, NnError> {
        let mut param_idx: usize = self.layers[..range.start].iter().map(|l| l.param_shapes().len()).sum();
        let mut x = input;
        for layer in &self.layers[range] {
            let batch = g.value(x).shape()[0];
            x = match *layer {
                Layer::Conv2d { stride, padding, .. } => {
                    let y = g.conv2d(x, bound[param_idx], bound[param_idx + 1], stride, padding)?;
                    param_idx += 2;
                    y
                }
                Layer::Dense { .. } => {
                    let y = g.dense(x, bound[param_idx], bound[param_idx + 1])?;
                    param_idx += 2;
                    y
                }
                Layer::AvgPool { window } => g.avgpool2d(x, window)?,
                Layer::Upsample { factor } => g.upsample2d(x, factor)?,
                Layer::Flatten => {
                    let n = g.value(x).len() / batch;
                    g.reshape(x, &[batch, n])?
                }
                Layer::Unflatten {
                    channels,
                    height,
                    width,
                } => g.reshape(x, &[batch, channels, height, width])?,
                Layer::Relu => g.relu(x),
                Layer::Sigmoid => g.sigmoid(x),
            };
        }
        Ok(x)
    }

    pub fn forward(&self, g: &mut Graph<T>, bound: &[NodeId], input: NodeId) -> Result<NodeId, NnError> {
        self.forward_layers(g, bound, input, 0..self.layers.len())
    }

    /// Inference on a `[N, ...]` batch without keeping the tape.
    pub fn predict(&self, batch: Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.check_batch(batch.shape())?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let x = g.input(batch);
        let y = self.forward(&mut g, &bound, x)?;
        Ok(g.value(y).clone())
    }

    pub fn check_batch(&self, shape: &[usize]) -> Result<(), NnError> {
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            let mut expected = vec![shape.first().copied().unwrap_or(1)];
            expected.extend_from_slice(&self.input_shape);
            return Err(NnError::ShapeMismatch {
                op: "network input",
                expected,
                found: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Replaces every gradient slot with the gradients found for `bound`.
    pub fn set_grads(&mut self, bound: &[NodeId], grads: &Gradients<T>) {
        for (p, &id) in self.params.iter_mut().zip(bound) {
            p.zero_grad();
            if let Some(g) = grads.get(id) {
                p.accumulate_grad(g).expect("gradient shape matches parameter");
            }
        }
    }

    /// Drops every gradient slot.
    pub fn clear_grads(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn flat_params(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.values().iter().copied()).collect()
    }

    /// Scales every gradient slot in place.
    pub fn scale_grads(&mut self, factor: T) {
        for p in &mut self.params {
            if let Some(g) = p.grad().map(<[T]>::to_vec) {
                p.zero_grad();
                let scaled: Vec<T> = g.into_iter().map(|v| v * factor).collect();
                p.accumulate_grad(&scaled).expect("same length");
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }
}
