//! Value-level loss and sampling primitives.
//!
//! The graph ops in [`crate::graph`] call into these for their forward pass.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Clamp applied to probabilities before any logarithm in the adversarial losses.
pub const PROB_EPS: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if let Some(index) = logits.iter().position(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { index });
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// `log(sum(exp(x)))` computed around the max.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `softmax((logits + noise) / temperature)`.
pub fn gumbel_softmax(logits: &[f64], temperature: f64, noise: &[f64]) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(TensorError::Temperature(temperature));
    }
    if logits.len() != noise.len() {
        return Err(TensorError::ShapeMismatch {
            left: vec![logits.len()],
            right: vec![noise.len()],
        });
    }
    let perturbed: Vec<f64> = logits
        .iter()
        .zip(noise)
        .map(|(l, g)| (l + g) / temperature)
        .collect();
    softmax(&perturbed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    /// Set when every step was masked out; `loss` is then 0.
    pub empty_mask: bool,
}

/// Mean negative log-likelihood of `targets` over the unmasked rows of `logits`.
pub fn cross_entropy_loss(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<CrossEntropy> {
    let steps = logits.rows();
    let vocab = logits.cols();
    if targets.len() != steps || mask.len() != steps {
        return Err(TensorError::ShapeMismatch {
            left: vec![steps],
            right: vec![targets.len(), mask.len()],
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, (&t, &keep)) in targets.iter().zip(mask).enumerate() {
        if !keep {
            continue;
        }
        if t >= vocab {
            return Err(TensorError::TargetOutOfRange { id: t, vocab });
        }
        let row = logits.row_slice(r);
        total += log_sum_exp(row) - row[t];
        count += 1;
    }
    if count == 0 {
        return Ok(CrossEntropy {
            loss: 0.0,
            empty_mask: true,
        });
    }
    Ok(CrossEntropy {
        loss: total / count as f64,
        empty_mask: false,
    })
}

/// `-label ln p - (1 - label) ln(1 - p)` with `p` clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn binary_cross_entropy(p: f64, label: bool) -> f64 {
    let p = clamp_prob(p);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Discriminator objective: `-ln(1 - p_fake) - ln(p_real)`.
pub fn discriminator_loss(p_fake: f64, p_real: f64) -> f64 {
    binary_cross_entropy(p_fake, false) + binary_cross_entropy(p_real, true)
}

/// Adversarial generator objective: `-ln(p_fake)`.
pub fn adversarial_generator_loss(p_fake: f64) -> f64 {
    binary_cross_entropy(p_fake, true)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| close(*v, 1.0 / 3.0, 1e-15)));
        let p = softmax(&[0.0, LN_2]).unwrap();
        assert!(close(p[0], 1.0 / 3.0, 1e-15) && close(p[1], 2.0 / 3.0, 1e-15));
        // 40-digit evaluation of exp(x_i) / sum exp(x)
        let p = softmax(&[0.1, 0.9, -0.3]).unwrap();
        let expected = [
            0.256_682_670_798_109_47,
            0.571_257_789_495_950_95,
            0.172_059_539_705_939_59,
        ];
        for (a, b) in p.iter().zip(expected) {
            assert!(close(*a, b, 1e-15), "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert_eq!(
            softmax(&[0.0, f64::NAN]),
            Err(TensorError::NonFinite { index: 1 })
        );
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn gumbel_softmax_examples() {
        let p = gumbel_softmax(&[0.3; 5], 0.7, &[1.1; 5]).unwrap();
        assert!(p.iter().all(|v| close(*v, 0.2, 1e-15)));
        let p = gumbel_softmax(&[0.0, 5.0], 0.01, &[0.0, 0.0]).unwrap();
        assert!(p[1] > 1.0 - 1e-6);
        assert_eq!(
            gumbel_softmax(&[0.0], 0.0, &[0.0]),
            Err(TensorError::Temperature(0.0))
        );
        assert!(gumbel_softmax(&[0.0], -1.0, &[0.0]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = Tensor::zeros(&[3, 4]);
        let ce = cross_entropy_loss(&uniform, &[0, 3, 2], &[true; 3]).unwrap();
        assert!(close(ce.loss, 4f64.ln(), 1e-15));

        let mut data = vec![0.0; 12];
        for (r, t) in [1usize, 0, 3].iter().enumerate() {
            data[r * 4 + t] = 20.0;
        }
        let logits = Tensor::matrix(3, 4, data).unwrap();
        assert!(cross_entropy_loss(&logits, &[1, 0, 3], &[true; 3]).unwrap().loss < 1e-6);

        // 40-digit reference for the 2-step, vocab-3 case
        let logits = Tensor::matrix(2, 3, vec![1.0, 2.0, 0.5, 0.2, -1.0, 0.3]).unwrap();
        let ce = cross_entropy_loss(&logits, &[1, 2], &[true, true]).unwrap();
        assert!(close(ce.loss, 0.621_243_074_123_012_31, 1e-14));
    }

    #[test]
    fn cross_entropy_masking_and_errors() {
        let logits = Tensor::matrix(2, 3, vec![1.0, 2.0, 0.5, 0.2, -1.0, 0.3]).unwrap();
        let ce = cross_entropy_loss(&logits, &[1, 2], &[false, false]).unwrap();
        assert!(ce.empty_mask);
        assert_eq!(ce.loss, 0.0);
        // masked rows may carry any target id
        assert!(cross_entropy_loss(&logits, &[1, 99], &[true, false]).is_ok());
        assert_eq!(
            cross_entropy_loss(&logits, &[1, 3], &[true, true]),
            Err(TensorError::TargetOutOfRange { id: 3, vocab: 3 })
        );
    }

    #[test]
    fn bce_examples() {
        assert!(close(binary_cross_entropy(0.5, true), LN_2, 1e-15));
        assert!(close(binary_cross_entropy(0.5, false), LN_2, 1e-15));
        assert!(close(binary_cross_entropy(0.9, false), -(0.1f64).ln(), 1e-12));
        let bound = -(1.0 - PROB_EPS).ln();
        assert!(binary_cross_entropy(1.0, true) <= bound + 1e-18);
        assert!(binary_cross_entropy(0.0, false) <= bound + 1e-18);
        assert!(binary_cross_entropy(0.0, true).is_finite());
    }

    #[test]
    fn adversarial_loss_examples() {
        assert!(close(discriminator_loss(0.5, 0.5), 2.0 * LN_2, 1e-15));
        assert!(discriminator_loss(0.0, 1.0) < 1e-6);
        assert!(close(
            discriminator_loss(0.9, 0.2),
            -(0.1f64).ln() - (0.2f64).ln(),
            1e-12
        ));
        assert!(close(discriminator_loss(0.9, 0.2), 3.912_023, 1e-6));
        assert!(close(adversarial_generator_loss(0.5), LN_2, 1e-15));
        assert!(adversarial_generator_loss(1.0) < 1e-6);
    }
}
