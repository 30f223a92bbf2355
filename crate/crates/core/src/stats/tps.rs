//! Thin-plate spline smoothing for spatial field correction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Lambda {
    /// Generalized cross-validation over a log grid.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TpsFit {
    /// Residual plus grand mean.
    pub corrected: Vec<f64>,
    pub fitted: Vec<f64>,
    pub lambda: f64,
    /// Kernel coefficients.
    pub kernel: Vec<f64>,
    /// Affine coefficients `[intercept, row, position]`.
    pub affine: [f64; 3],
}

fn kernel(r2: f64) -> f64 {
    if r2 > 0.0 {
        0.5 * r2 * r2.ln()
    } else {
        0.0
    }
}

/// Fits `f = affine + Σ c_i φ(|x - x_i|)` minimizing
/// `Σ (v - f)² + n λ cᵀ K c` with `φ(r) = r² log r`.
///
/// With `T = [1, row, pos]` and `Q₂` an orthonormal basis of the complement
/// of its column space, the penalized system diagonalizes in the eigenbasis
/// of `Q₂ᵀ K Q₂`, which makes every λ on the GCV grid cheap.
pub fn tps_correct(values: &[f64], coords: &[(f64, f64)], lambda: Lambda) -> Result<TpsFit> {
    let n = values.len();
    if n != coords.len() {
        return Err(Error::invalid("values and coordinates differ in length"));
    }
    if n < 10 {
        return Err(Error::invalid(format!(
            "thin-plate spline needs at least 10 samples, got {n}"
        )));
    }
    if values
        .iter()
        .chain(coords.iter().flat_map(|c| [&c.0, &c.1]))
        .any(|v| !v.is_finite())
    {
        return Err(Error::invalid("non-finite value or coordinate"));
    }
    if let Lambda::Fixed(l) = lambda {
        if !(l >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda must be nonnegative, got {l}"
            )));
        }
    }
    let t = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => coords[i].0,
        _ => coords[i].1,
    });
    let svd = t.clone().svd(true, false);
    let s = &svd.singular_values;
    if s.min() <= 1e-9 * s.max() {
        return Err(Error::invalid("sample coordinates are collinear"));
    }
    // Full QR of T gives Q = [Q₁ Q₂].
    let qr = t.clone().qr();
    let mut q_full = DMatrix::<f64>::identity(n, n);
    qr.q_tr_mul(&mut q_full);
    let q_full = q_full.transpose();
    let q2 = q_full.columns(3, n - 3).into_owned();

    let k = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (coords[i], coords[j]);
        kernel((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2))
    });
    let b = q2.transpose() * &k * &q2;
    let eig = SymmetricEigen::new((&b + b.transpose()) * 0.5);
    let y = DVector::from_column_slice(values);
    let z = eig.eigenvectors.transpose() * (q2.transpose() * &y);
    let ev = &eig.eigenvalues;
    let nf = n as f64;

    let gcv = |lam: f64| {
        let (mut rss, mut trace) = (0.0, 0.0);
        for i in 0..n - 3 {
            let f = nf * lam / (ev[i] + nf * lam);
            rss += (f * z[i]).powi(2);
            trace += f;
        }
        // The affine part is never penalized.
        (rss / nf) / ((trace / nf).powi(2)).max(1e-300)
    };
    let lam = match lambda {
        Lambda::Fixed(l) => l,
        Lambda::Auto => {
            let scale = ev.iter().map(|v| v.abs()).sum::<f64>() / (n - 3) as f64 / nf;
            (0..=80)
                .map(|i| scale * 10f64.powf(-8.0 + 0.15 * i as f64))
                .map(|l| (gcv(l), l))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
                .expect("nonempty grid")
                .1
        }
    };
    let w = DVector::from_fn(n - 3, |i, _| {
        let d = ev[i] + nf * lam;
        if d.abs() > 1e-300 {
            z[i] / d
        } else {
            0.0
        }
    });
    let c = &q2 * (&eig.eigenvectors * w);
    let rhs = &y - &k * &c;
    let affine = svd_solve(&t, &rhs)?;
    let fitted = &k * &c + &t * &affine;
    let mean = values.iter().sum::<f64>() / nf;
    let corrected = (0..n).map(|i| values[i] - fitted[i] + mean).collect();
    Ok(TpsFit {
        corrected,
        fitted: fitted.iter().copied().collect(),
        lambda: lam,
        kernel: c.iter().copied().collect(),
        affine: [affine[0], affine[1], affine[2]],
    })
}

fn svd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .svd(true, true)
        .solve(b, 1e-12)
        .map_err(|e| Error::invalid(format!("least squares failed: {e}")))
}
