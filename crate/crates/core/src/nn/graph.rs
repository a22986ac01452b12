//! Tape-based reverse-mode differentiation over the ops in [`super::ops`].
//!
//! A [`Graph`] records every forward op in execution order; `backward`
//! walks the tape in reverse and returns the gradient of a scalar loss with
//! respect to every node that requires one. Leaves created with
//! [`Graph::param`] require gradients, leaves created with [`Graph::input`]
//! do not (they act as detached constants).

use super::ops::{self, ConvGeometry};
use super::real::Real;
use super::tensor::Tensor;
use super::{Loss, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        geom: ConvGeometry,
    },
    AvgPool {
        input: NodeId,
        window: usize,
    },
    Upsample {
        input: NodeId,
        factor: usize,
    },
    Dense {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
        batch: usize,
        n: usize,
        m: usize,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Reshape(NodeId),
    MseLoss {
        pred: NodeId,
        target: NodeId,
    },
    MaeLoss {
        pred: NodeId,
        target: NodeId,
    },
    SampleMse {
        pred: NodeId,
        target: NodeId,
    },
    SampleMae {
        pred: NodeId,
        target: NodeId,
    },
    LogOffset {
        input: NodeId,
        delta: T,
    },
    Scale {
        input: NodeId,
        factor: T,
    },
    Add(NodeId, NodeId),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. `id`, or `None` if the node does not
    /// require one or the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Trainable leaf; the value is copied onto the tape.
    pub fn param(&mut self, value: &Tensor<T>) -> NodeId {
        let mut v = value.clone();
        v.zero_grad();
        self.push(v, Op::Leaf, true)
    }

    /// Constant leaf; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, NnError> {
        let (x, k, b) = (self.value(input), self.value(kernels), self.value(bias));
        let geom = ConvGeometry::new(x.shape(), k.shape(), b.shape(), stride, padding)?;
        let out = ops::conv2d_forward(x.values(), k.values(), b.values(), &geom);
        let value = Tensor::new(&geom.output_shape(), out)?;
        let rg = self.requires(&[input, kernels, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn avgpool2d(&mut self, input: NodeId, window: usize) -> Result<NodeId, NnError> {
        let value = ops::avgpool2d(self.value(input), window)?;
        let rg = self.requires(&[input]);
        Ok(self.push(value, Op::AvgPool { input, window }, rg))
    }

    pub fn upsample2d(&mut self, input: NodeId, factor: usize) -> Result<NodeId, NnError> {
        let value = ops::upsample2d(self.value(input), factor)?;
        let rg = self.requires(&[input]);
        Ok(self.push(value, Op::Upsample { input, factor }, rg))
    }

    pub fn dense(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId, NnError> {
        let (x, w, b) = (self.value(input), self.value(weights), self.value(bias));
        let (batch, n, m, batched) = ops::dense_dims(x.shape(), w.shape(), b.shape())?;
        let out = ops::dense_forward(x.values(), w.values(), b.values(), batch, n, m);
        let shape = if batched { vec![batch, m] } else { vec![m] };
        let value = Tensor::new(&shape, out)?;
        let rg = self.requires(&[input, weights, bias]);
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weights,
                bias,
                batch,
                n,
                m,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = ops::relu(self.value(input));
        let rg = self.requires(&[input]);
        self.push(value, Op::Relu(input), rg)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let value = ops::sigmoid(self.value(input));
        let rg = self.requires(&[input]);
        self.push(value, Op::Sigmoid(input), rg)
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId, NnError> {
        let value = self.value(input).clone().reshape(shape)?;
        let rg = self.requires(&[input]);
        Ok(self.push(value, Op::Reshape(input), rg))
    }

    fn check_pair(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), NnError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NnError::ShapeMismatch {
                op,
                expected: sa.to_vec(),
                found: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, NnError> {
        let v = ops::mse_loss(self.value(pred), self.value(target))?;
        let rg = self.requires(&[pred, target]);
        Ok(self.push(Tensor::scalar(v), Op::MseLoss { pred, target }, rg))
    }

    pub fn mae_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, NnError> {
        let v = ops::mae_loss(self.value(pred), self.value(target))?;
        let rg = self.requires(&[pred, target]);
        Ok(self.push(Tensor::scalar(v), Op::MaeLoss { pred, target }, rg))
    }

    /// Per-sample MSE over all but the leading axis; output shape `[N]`.
    pub fn sample_mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, NnError> {
        self.check_pair("sample_mse", pred, target)?;
        let v = ops::sample_mse(self.value(pred), self.value(target))?;
        let rg = self.requires(&[pred, target]);
        Ok(self.push(Tensor::from_vec(v), Op::SampleMse { pred, target }, rg))
    }

    pub fn loss(&mut self, kind: Loss, pred: NodeId, target: NodeId) -> Result<NodeId, NnError> {
        match kind {
            Loss::Mae => self.mae_loss(pred, target),
            Loss::Mse => self.mse_loss(pred, target),
        }
    }

    /// Per-sample `kind` loss; output shape `[N]`.
    pub fn sample_loss(&mut self, kind: Loss, pred: NodeId, target: NodeId) -> Result<NodeId, NnError> {
        match kind {
            Loss::Mae => self.sample_mae(pred, target),
            Loss::Mse => self.sample_mse(pred, target),
        }
    }

    /// Per-sample mean absolute error; output shape `[N]`.
    pub fn sample_mae(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, NnError> {
        self.check_pair("sample_mae", pred, target)?;
        let v = ops::sample_mae(self.value(pred), self.value(target))?;
        let rg = self.requires(&[pred, target]);
        Ok(self.push(Tensor::from_vec(v), Op::SampleMae { pred, target }, rg))
    }

    /// Elementwise `ln(x + delta)`.
    pub fn log_offset(&mut self, input: NodeId, delta: T) -> NodeId {
        let value = self.value(input).map(|v| (v + delta).ln());
        let rg = self.requires(&[input]);
        self.push(value, Op::LogOffset { input, delta }, rg)
    }

    pub fn scale(&mut self, input: NodeId, factor: T) -> NodeId {
        let value = self.value(input).map(|v| v * factor);
        let rg = self.requires(&[input]);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.check_pair("add", a, b)?;
        let values = self.value(a).values().iter().zip(self.value(b).values()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.value(a).shape(), values)?;
        let rg = self.requires(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Signs of every value sitting at a non-differentiable point of the
    /// recorded computation: relu inputs and absolute-error residuals.
    ///
    /// Two evaluations with equal sign patterns lie on the same smooth
    /// piece, which is what finite-difference checks rely on.
    pub fn kink_signs(&self) -> Vec<i8> {
        let sign = |v: T| -> i8 {
            if v > T::zero() {
                1
            } else if v < T::zero() {
                -1
            } else {
                0
            }
        };
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) => out.extend(self.value(x).values().iter().map(|&v| sign(v))),
                Op::MaeLoss { pred, target } | Op::SampleMae { pred, target } => out.extend(
                    self.value(pred)
                        .values()
                        .iter()
                        .zip(self.value(target).values())
                        .map(|(&p, &t)| sign(p - t)),
                ),
                _ => {}
            }
        }
        out
    }

    /// Reverse-mode sweep from a single-element `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, NnError> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(NnError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.propagate(node, &dy, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], id: NodeId, delta: Vec<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(g, &d)| *g += d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        match node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernels,
                bias,
                ref geom,
            } => {
                let (dx, dk, db) = ops::conv2d_backward(
                    self.value(input).values(),
                    self.value(kernels).values(),
                    dy,
                    geom,
                    self.wants(input),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, input, dx);
                }
                self.accumulate(grads, kernels, dk);
                self.accumulate(grads, bias, db);
            }
            Op::AvgPool { input, window } => {
                let dx = ops::avgpool2d_backward(dy, self.value(input).shape(), window);
                self.accumulate(grads, input, dx);
            }
            Op::Upsample { input, factor } => {
                let dx = ops::upsample2d_backward(dy, self.value(input).shape(), factor);
                self.accumulate(grads, input, dx);
            }
            Op::Dense {
                input,
                weights,
                bias,
                batch,
                n,
                m,
            } => {
                let (dx, dw, db) = ops::dense_backward(
                    self.value(input).values(),
                    self.value(weights).values(),
                    dy,
                    batch,
                    n,
                    m,
                    self.wants(input),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, input, dx);
                }
                self.accumulate(grads, weights, dw);
                self.accumulate(grads, bias, db);
            }
            Op::Relu(input) => {
                let x = self.value(input).values();
                let dx = x.iter().zip(dy).map(|(&x, &g)| if x > T::zero() { g } else { T::zero() }).collect();
                self.accumulate(grads, input, dx);
            }
            Op::Sigmoid(input) => {
                let y = node.value.values();
                let dx = y.iter().zip(dy).map(|(&y, &g)| g * y * (T::one() - y)).collect();
                self.accumulate(grads, input, dx);
            }
            Op::Reshape(input) => self.accumulate(grads, input, dy.to_vec()),
            Op::MseLoss { pred, target } => {
                let p = self.value(pred).values();
                let t = self.value(target).values();
                let c = dy[0] * T::from_f64(2.0 / p.len() as f64);
                let dp: Vec<T> = p.iter().zip(t).map(|(&p, &t)| c * (p - t)).collect();
                if self.wants(target) {
                    self.accumulate(grads, target, dp.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, pred, dp);
            }
            Op::MaeLoss { pred, target } => {
                let p = self.value(pred).values();
                let t = self.value(target).values();
                let c = dy[0] / T::from_f64(p.len() as f64);
                // subgradient 0 at a zero residual
                let dp: Vec<T> = p
                    .iter()
                    .zip(t)
                    .map(|(&p, &t)| {
                        if p > t {
                            c
                        } else if p < t {
                            -c
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.wants(target) {
                    self.accumulate(grads, target, dp.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, pred, dp);
            }
            Op::SampleMse { pred, target } => {
                let p = self.value(pred).values();
                let t = self.value(target).values();
                let per = p.len() / dy.len();
                let two_over = T::from_f64(2.0 / per as f64);
                let dp: Vec<T> = p
                    .iter()
                    .zip(t)
                    .enumerate()
                    .map(|(i, (&p, &t))| dy[i / per] * two_over * (p - t))
                    .collect();
                if self.wants(target) {
                    self.accumulate(grads, target, dp.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, pred, dp);
            }
            Op::SampleMae { pred, target } => {
                let p = self.value(pred).values();
                let t = self.value(target).values();
                let per = p.len() / dy.len();
                let inv = T::one() / T::from_f64(per as f64);
                let dp: Vec<T> = p
                    .iter()
                    .zip(t)
                    .enumerate()
                    .map(|(i, (&p, &t))| {
                        let g = dy[i / per] * inv;
                        if p > t {
                            g
                        } else if p < t {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.wants(target) {
                    self.accumulate(grads, target, dp.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, pred, dp);
            }
            Op::LogOffset { input, delta } => {
                let x = self.value(input).values();
                let dx = x.iter().zip(dy).map(|(&x, &g)| g / (x + delta)).collect();
                self.accumulate(grads, input, dx);
            }
            Op::Scale { input, factor } => {
                self.accumulate(grads, input, dy.iter().map(|&g| g * factor).collect());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, dy.to_vec());
                self.accumulate(grads, b, dy.to_vec());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let p = g.param(&Tensor::scalar(3.0));
        let c = g.input(Tensor::scalar(2.0));
        let z = g.input(Tensor::scalar(0.0));
        let loss = g.mse_loss(c, z).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap_or(&[0.0]), &[0.0]);
    }

    #[test]
    fn square_has_derivative_two_p() {
        // mse of a single element against zero is p²
        let mut g = Graph::<f64>::new();
        let p = g.param(&Tensor::scalar(3.0));
        let z = g.input(Tensor::scalar(0.0));
        let loss = g.mse_loss(p, z).unwrap();
        assert_eq!(g.value(loss).item(), Some(9.0));
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap(), &[6.0]);
    }

    #[test]
    fn gradients_accumulate_over_reuse() {
        // loss = (p + p)² with p=1.5 -> d/dp = 8p = 12
        let mut g = Graph::<f64>::new();
        let p = g.param(&Tensor::scalar(1.5));
        let s = g.add(p, p).unwrap();
        let z = g.input(Tensor::scalar(0.0));
        let loss = g.mse_loss(s, z).unwrap();
        assert_eq!(g.backward(loss).unwrap().get(p).unwrap(), &[12.0]);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut g = Graph::<f64>::new();
        let p = g.param(&Tensor::from_vec(vec![1.0, 2.0]));
        let r = g.relu(p);
        assert!(matches!(g.backward(r), Err(NnError::NonScalarLoss(_))));
    }

    #[test]
    fn mae_zero_residual_has_zero_subgradient() {
        let mut g = Graph::<f64>::new();
        let p = g.param(&Tensor::from_vec(vec![1.0, 2.0]));
        let t = g.input(Tensor::from_vec(vec![1.0, 0.0]));
        let loss = g.mae_loss(p, t).unwrap();
        assert_eq!(g.backward(loss).unwrap().get(p).unwrap(), &[0.0, 0.5]);
    }

    #[test]
    fn sample_mae_gradient() {
        let mut g = Graph::<f64>::new();
        let p = g.param(&Tensor::new(&[2, 2], vec![1.0, 3.0, 0.0, -2.0]).unwrap());
        let t = g.input(Tensor::zeros(&[2, 2]));
        let per = g.sample_mae(p, t).unwrap();
        assert_eq!(g.value(per).values(), &[2.0, 1.0]);
        let z = g.input(Tensor::zeros(&[2]));
        let loss = g.mse_loss(per, z).unwrap();
        assert_eq!(g.backward(loss).unwrap().get(p).unwrap(), &[1.0, 1.0, 0.0, -0.5]);
    }

    #[test]
    fn inputs_are_detached() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(vec![1.0, 2.0]));
        let p = g.param(&Tensor::from_vec(vec![0.0, 0.0]));
        let loss = g.mse_loss(p, x).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
        assert!(grads.get(p).is_some());
    }
}
