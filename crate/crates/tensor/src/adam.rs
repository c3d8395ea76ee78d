use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Moment accumulators for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            t: 0,
        }
    }

    /// One bias-corrected Adam update over every parameter.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(TensorError::Invalid(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            p.same_shape(g)?;
            p.same_shape(m)?;
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / (norm + 1e-12);
        for g in grads.iter_mut() {
            g.scale_assign(k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::row(vec![1.0, -2.0, 3.5])];
        let before = params.clone();
        let mut state = AdamState::new(AdamConfig::with_lr(0.1), &params);
        state
            .step(&mut params, &[Tensor::zeros(&[1, 3])])
            .unwrap();
        assert_eq!(params, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = vec![Tensor::row(vec![0.0, 0.0, 0.0])];
        let grads = vec![Tensor::row(vec![0.3, -5.0, 1e-3])];
        let mut state = AdamState::new(AdamConfig::with_lr(0.01), &params);
        state.step(&mut params, &grads).unwrap();
        for (w, g) in params[0].data().iter().zip(grads[0].data()) {
            let expected = 0.01 * g.abs() / (g.abs() + 1e-8);
            assert!((w.abs() - expected).abs() < 1e-15);
            assert!((w.abs() - 0.01).abs() < 1e-7);
            assert_eq!(w.signum(), -g.signum());
        }
    }

    /// Hand-rolled scalar Adam, written independently of `AdamState`.
    fn scalar_adam_trace(x0: f64, a: f64, c: f64, lr: f64, steps: usize) -> Vec<f64> {
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = a * (x - c);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32));
            let vh = v / (1.0 - 0.999f64.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + 1e-8);
            out.push(x);
        }
        out
    }

    #[test]
    fn quadratic_trace_matches_scalar_oracle() {
        // f(x) = 1.5 (x - 1)^2, lr 0.1
        let starts = [0.5, -2.0];
        // 40-digit references
        let frozen = [
            [0.599_999_999_333_333_34, 0.698_812_579_031_325_07, 0.795_128_748_499_418_28],
            [-1.900_000_000_111_111_1, -1.800_102_707_302_867_3, -1.700_381_523_281_720_9],
        ];
        let mut params = vec![Tensor::row(starts.to_vec())];
        let mut state = AdamState::new(AdamConfig::with_lr(0.1), &params);
        let oracle: Vec<Vec<f64>> = starts
            .iter()
            .map(|&x| scalar_adam_trace(x, 3.0, 1.0, 0.1, 3))
            .collect();
        for step in 0..3 {
            let g: Vec<f64> = params[0].data().iter().map(|x| 3.0 * (x - 1.0)).collect();
            state.step(&mut params, &[Tensor::row(g)]).unwrap();
            for k in 0..2 {
                let got = params[0].data()[k];
                assert!((got - oracle[k][step]).abs() < 1e-14);
                assert!((got - frozen[k][step]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_bitwise() {
        let run = || {
            let mut params = vec![Tensor::row(vec![0.1, 0.2]), Tensor::zeros(&[2, 2])];
            let mut state = AdamState::new(AdamConfig::default(), &params);
            for k in 0..5 {
                let g = vec![
                    Tensor::row(vec![0.3 * k as f64, -0.7]),
                    Tensor::full(&[2, 2], 0.01 * k as f64),
                ];
                state.step(&mut params, &g).unwrap();
            }
            params
        };
        let (a, b) = (run(), run());
        for (x, y) in a.iter().zip(&b) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x), bits(y));
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Tensor::row(vec![0.0, 0.0])];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        assert!(state.step(&mut params, &[Tensor::row(vec![1.0])]).is_err());
        assert!(state.step(&mut params, &[]).is_err());
        assert_eq!(state.t, 0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Tensor::row(vec![3.0, 4.0])];
        let norm = clip_grad_norm(&mut g, 1.0);
        assert_eq!(norm, 5.0);
        assert!((g[0].sum_squares().sqrt() - 1.0).abs() < 1e-9);
        let mut small = vec![Tensor::row(vec![0.3, 0.4])];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.3, 0.4]);
    }
}
