//! Trace and classification objectives with their gradients.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Clip applied to probabilities before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Per-point weights that fall from two (near the tile center) to one (at the edge).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub omega: Vec<f64>,
}

impl WeightVector {
    pub fn new(n: usize) -> Self {
        let alpha = 8.0 / n as f64;
        let beta = -4.0;
        let omega = (1..=n)
            .map(|i| 1.0 + (1.0 - (alpha * i as f64 + beta).tanh()) / 2.0)
            .collect();
        WeightVector {
            n,
            alpha,
            beta,
            omega,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    WeightedMse,
    Focal { alpha: f64, gamma: f64 },
    Bce,
}

impl LossKind {
    pub const FOCAL_DEFAULT: LossKind = LossKind::Focal {
        alpha: 0.25,
        gamma: 2.0,
    };

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::WeightedMse => "weighted_mse",
            LossKind::Focal { .. } => "focal",
            LossKind::Bce => "bce",
        }
    }
}

fn shape_err(a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        expected: a.shape().to_vec(),
        actual: b.shape().to_vec(),
    }
}

/// Splits a `[.., 2, N]` trace tensor into (batch, N).
fn trace_dims(pred: &Tensor) -> Result<(usize, usize)> {
    let s = pred.shape();
    match s.len() {
        2 if s[0] == 2 => Ok((1, s[1])),
        3 if s[1] == 2 => Ok((s[0], s[2])),
        _ => Err(Error::invalid(format!(
            "trace tensor must be 2xN or Bx2xN, got {s:?}"
        ))),
    }
}

/// `(1/N) Σ ω_i ‖y_i − ŷ_i‖²`, averaged over the batch.
pub fn weighted_mse(pred: &Tensor, target: &Tensor, weights: &WeightVector) -> Result<f64> {
    Ok(weighted_mse_grad(pred, target, weights)?.0)
}

fn weighted_mse_grad(
    pred: &Tensor,
    target: &Tensor,
    weights: &WeightVector,
) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(shape_err(pred, target));
    }
    let (batch, n) = trace_dims(pred)?;
    if weights.n != n {
        return Err(Error::invalid(format!(
            "weight vector has N={}, trace has N={n}",
            weights.n
        )));
    }
    let p = pred.data();
    let t = target.data();
    let mut grad = Tensor::zeros(pred.shape());
    let g = grad.data_mut();
    let scale = 1.0 / (n * batch) as f64;
    let mut total = 0.0;
    for b in 0..batch {
        let base = b * 2 * n;
        for i in 0..n {
            let (r, c) = (base + i, base + n + i);
            let dr = p[r] - t[r];
            let dc = p[c] - t[c];
            total += weights.omega[i] * (dr * dr + dc * dc);
            g[r] = 2.0 * weights.omega[i] * dr * scale;
            g[c] = 2.0 * weights.omega[i] * dc * scale;
        }
    }
    Ok((total * scale, grad))
}

/// Pairs each target element with its probability; outputs with a leading
/// class axis contribute only their foreground (first) channel.
fn prob_view(output: &Tensor, target: &Tensor) -> Result<(usize, usize, usize)> {
    if output.shape() == target.shape() {
        return Ok((1, target.len(), 0));
    }
    let os = output.shape();
    let ts = target.shape();
    if os.len() < 2 || ts.is_empty() || os[0] != ts[0] {
        return Err(shape_err(output, target));
    }
    let batch = os[0];
    let per_out = output.len() / batch;
    let per_target = target.len() / batch;
    if per_target == 0 || !per_out.is_multiple_of(per_target) || per_out / per_target != os[1] {
        return Err(shape_err(output, target));
    }
    Ok((batch, per_target, per_out))
}

fn prob_loss(
    output: &Tensor,
    target: &Tensor,
    per_element: impl Fn(f64, f64) -> (f64, f64),
) -> Result<(f64, Tensor)> {
    let (batch, per_target, per_out) = prob_view(output, target)?;
    let mut grad = Tensor::zeros(output.shape());
    let count = target.len() as f64;
    let mut total = 0.0;
    let p = output.data();
    let y = target.data();
    let g = grad.data_mut();
    let index = |k: usize| -> usize {
        if per_out == 0 {
            k
        } else {
            (k / per_target) * per_out + k % per_target
        }
    };
    let _ = batch;
    for (k, &yk) in y.iter().enumerate() {
        let i = index(k);
        let (loss, dloss) = per_element(p[i], yk);
        total += loss;
        g[i] = dloss / count;
    }
    Ok((total / count, grad))
}

fn clip(p: f64) -> (f64, bool) {
    if p < PROB_EPS {
        (PROB_EPS, true)
    } else if p > 1.0 - PROB_EPS {
        (1.0 - PROB_EPS, true)
    } else {
        (p, false)
    }
}

fn focal_element(p: f64, y: f64, alpha: f64, gamma: f64) -> (f64, f64) {
    let (p, clipped) = clip(p);
    let (loss, d) = if y >= 0.5 {
        let q = 1.0 - p;
        let loss = -alpha * q.powf(gamma) * p.ln();
        let d_pow = if gamma == 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0) * p.ln()
        };
        (loss, alpha * (d_pow - q.powf(gamma) / p))
    } else {
        let loss = -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln();
        let d_pow = if gamma == 0.0 {
            0.0
        } else {
            gamma * p.powf(gamma - 1.0) * (1.0 - p).ln()
        };
        (loss, -(1.0 - alpha) * (d_pow - p.powf(gamma) / (1.0 - p)))
    };
    (loss, if clipped { 0.0 } else { d })
}

fn bce_element(p: f64, y: f64) -> (f64, f64) {
    let (p, clipped) = clip(p);
    let loss = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    let d = -y / p + (1.0 - y) / (1.0 - p);
    (loss, if clipped { 0.0 } else { d })
}

pub fn focal_loss(p: &Tensor, y: &Tensor, alpha: f64, gamma: f64) -> Result<f64> {
    Ok(prob_loss(p, y, |pk, yk| focal_element(pk, yk, alpha, gamma))?.0)
}

pub fn bce(p: &Tensor, y: &Tensor) -> Result<f64> {
    Ok(prob_loss(p, y, bce_element)?.0)
}

/// Loss value and its gradient with respect to `output`.
pub fn loss_and_grad(kind: LossKind, output: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    match kind {
        LossKind::WeightedMse => {
            let (_, n) = trace_dims(output)?;
            weighted_mse_grad(output, target, &WeightVector::new(n))
        }
        LossKind::Focal { alpha, gamma } => {
            prob_loss(output, target, |p, y| focal_element(p, y, alpha, gamma))
        }
        LossKind::Bce => prob_loss(output, target, bce_element),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn omega_endpoints() {
        let w = WeightVector::new(128);
        // 1 + (1 - tanh(8/128 - 4)) / 2
        assert!((w.omega[0] - 1.999_620).abs() < 1e-5);
        assert_eq!(w.omega[63], 1.5);
        assert!((w.omega[127] - 1.000_336).abs() < 1e-5);
    }

    #[test]
    fn omega_bounded_and_nonincreasing() {
        for n in [4, 16, 32, 128, 300] {
            let w = WeightVector::new(n);
            assert!(w.omega.iter().all(|&o| o > 1.0 && o <= 2.0));
            assert!(w.omega.windows(2).all(|p| p[1] <= p[0]));
        }
    }

    #[test]
    fn focal_and_bce_hand_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!(
            (focal_loss(&scalar(0.5), &scalar(1.0), 0.25, 2.0).unwrap() - 0.25 * 0.25 * ln2).abs()
                < 1e-12
        );
        assert!(
            (focal_loss(&scalar(0.5), &scalar(0.0), 0.25, 2.0).unwrap() - 0.75 * 0.25 * ln2).abs()
                < 1e-12
        );
        assert!((bce(&scalar(0.5), &scalar(1.0)).unwrap() - ln2).abs() < 1e-12);
        assert!(focal_loss(&scalar(1.0 - PROB_EPS), &scalar(1.0), 0.25, 2.0).unwrap() < 1e-12);
        assert!(bce(&scalar(1.0), &scalar(1.0)).unwrap() < 1e-6);
    }

    #[test]
    fn weighted_mse_zero_iff_equal() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = WeightVector::new(3);
        assert_eq!(weighted_mse(&a, &a, &w).unwrap(), 0.0);
        let mut b = a.clone();
        b.data_mut()[4] += 1e-3;
        assert!(weighted_mse(&a, &b, &w).unwrap() > 0.0);
        assert!(weighted_mse(&a, &b, &WeightVector::new(4)).is_err());
    }

    #[test]
    fn foreground_channel_view() {
        // Two-class output [1, 2, 1, 2]; target covers channel 0 only.
        let out = Tensor::new(vec![1, 2, 1, 2], vec![0.9, 0.2, 0.1, 0.8]).unwrap();
        let target = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 0.0]).unwrap();
        let (loss, grad) = loss_and_grad(LossKind::Bce, &out, &target).unwrap();
        let want = (-(0.9f64.ln()) - (0.8f64).ln()) / 2.0;
        assert!((loss - want).abs() < 1e-12);
        assert_eq!(grad.data()[2], 0.0);
        assert_eq!(grad.data()[3], 0.0);
    }

    proptest! {
        #[test]
        fn focal_gamma_zero_is_half_bce(p in 1e-6f64..(1.0 - 1e-6), y in 0u8..2) {
            let y = y as f64;
            let f = focal_loss(&scalar(p), &scalar(y), 0.5, 0.0).unwrap();
            let b = bce(&scalar(p), &scalar(y)).unwrap();
            prop_assert!((f - 0.5 * b).abs() < 1e-12);
        }

        #[test]
        fn weighted_mse_nonnegative(vals in proptest::collection::vec(-50.0f64..50.0, 16)) {
            let pred = Tensor::new(vec![2, 4], vals[..8].to_vec()).unwrap();
            let target = Tensor::new(vec![2, 4], vals[8..].to_vec()).unwrap();
            prop_assert!(weighted_mse(&pred, &target, &WeightVector::new(4)).unwrap() >= 0.0);
        }
    }
}
