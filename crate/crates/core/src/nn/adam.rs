use super::real::Real;
use super::tensor::Tensor;
use super::NnError;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Per-parameter Adam moments plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self::with_hyper(params, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS)
    }

    pub fn with_hyper(params: &[Tensor<T>], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected Adam update using each parameter's
    /// gradient slot; a parameter without a gradient is treated as having a
    /// zero gradient.
    pub fn step(&mut self, params: &mut [Tensor<T>], lr: f64) -> Result<(), NnError> {
        if params.len() != self.m.len() {
            return Err(NnError::InvalidArgument(format!(
                "adam: state tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            let grad_len = p.grad().map_or(p.len(), <[T]>::len);
            if p.len() != self.m[i].len() || grad_len != p.len() {
                return Err(NnError::ShapeMismatch {
                    op: "adam_step",
                    expected: vec![self.m[i].len()],
                    found: vec![p.len()],
                });
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let c1 = T::from_f64(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::from_f64(lr), T::from_f64(self.eps));
        let one = T::one();
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = p.grad().map(<[T]>::to_vec) else {
                // zero gradient: moments decay, update stays m̂/(√v̂+eps)
                for ((w, m), v) in p.values_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m *= b1;
                    *v *= b2;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
                continue;
            };
            for (((w, m), v), g) in p.values_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut params = vec![Tensor::from_vec(vec![0.3f64, -1.2]), Tensor::scalar(2.0)];
        let before = params.clone();
        let mut adam = AdamState::new(&params);
        params[0].accumulate_grad(&[0.0, 0.0]).unwrap();
        for _ in 0..5 {
            adam.step(&mut params, 1e-3).unwrap();
        }
        assert_eq!(adam.steps(), 5);
        for (a, b) in params.iter().zip(&before) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = vec![Tensor::scalar(0.0f64)];
        params[0].accumulate_grad(&[1.0]).unwrap();
        let mut adam = AdamState::new(&params);
        adam.step(&mut params, 1e-3).unwrap();
        // m̂ = 1, v̂ = 1 -> p = -lr / (1 + eps)
        let p = params[0].values()[0];
        assert!((p + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15, "{p}");
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut params = vec![Tensor::from_vec(vec![0.5f32, -0.25, 1.0])];
            let mut adam = AdamState::new(&params);
            for step in 0..50 {
                params[0].zero_grad();
                let g: Vec<f32> = params[0].values().iter().map(|&w| 2.0 * w + step as f32 * 0.01).collect();
                params[0].accumulate_grad(&g).unwrap();
                adam.step(&mut params, 1e-2).unwrap();
            }
            params[0].values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let params = vec![Tensor::from_vec(vec![0.0f64, 1.0])];
        let mut adam = AdamState::new(&params);
        let mut other = vec![Tensor::from_vec(vec![0.0f64; 3])];
        assert!(adam.step(&mut other, 1e-3).is_err());
        assert!(adam.step(&mut [], 1e-3).is_err());
    }
}
