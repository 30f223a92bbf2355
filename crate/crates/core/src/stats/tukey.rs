//! Tukey–Kramer all-pairs comparisons with a compact letter display.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn integrate(rule: &[(f64, f64)], lo: f64, hi: f64, pieces: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (hi - lo) / pieces as f64;
    (0..pieces)
        .map(|p| {
            let (a, b) = (lo + p as f64 * h, lo + (p + 1) as f64 * h);
            let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
            rule.iter()
                .map(|&(x, w)| w * f(mid + half * x))
                .sum::<f64>()
                * half
        })
        .sum()
}

/// P(range of `k` standard normals < `w`).
fn normal_range_cdf(rule: &[(f64, f64)], w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let f = |z: f64| {
        let inner = (n.cdf(z) - n.cdf(z - w)).max(0.0);
        (-(z * z) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() * inner.powi(k as i32 - 1)
    };
    (k as f64 * integrate(rule, -8.5, 8.5 + w, 16, f)).min(1.0)
}

/// CDF of the studentized range for `k` means and `df` error degrees of
/// freedom, by numerical integration over the scaled chi distribution.
pub fn ptukey(q: f64, k: usize, df: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let rule = gauss_legendre(32);
    if df > 25_000.0 {
        return normal_range_cdf(&rule, q, k);
    }
    let chi = ChiSquared::new(df).expect("positive df");
    let s_lo = (chi.inverse_cdf(1e-12) / df).sqrt();
    let s_hi = (chi.inverse_cdf(1.0 - 1e-12) / df).sqrt();
    let log_norm = std::f64::consts::LN_2 + (df / 2.0) * (df / 2.0).ln() - ln_gamma(df / 2.0);
    let density = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        (log_norm + (df - 1.0) * s.ln() - df * s * s / 2.0).exp()
    };
    integrate(&rule, s_lo, s_hi, 24, |s| {
        density(s) * normal_range_cdf(&rule, q * s, k)
    })
    .clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairComparison {
    pub first: usize,
    pub second: usize,
    pub mean_difference: f64,
    pub q: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TukeyResult {
    pub means: Vec<f64>,
    pub mse: f64,
    pub df: f64,
    pub pairs: Vec<PairComparison>,
    /// Compact letter display: groups sharing a letter are not significantly
    /// different. `a` goes to the group with the highest mean.
    pub letters: Vec<String>,
}

/// Tukey–Kramer HSD at level `alpha`.
pub fn tukey_hsd(groups: &[Vec<f64>], alpha: f64) -> Result<TukeyResult> {
    if groups.len() < 2 {
        return Err(Error::invalid("Tukey HSD needs at least two groups"));
    }
    if groups
        .iter()
        .any(|g| g.len() < 2 || g.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::invalid(
            "every group needs at least two finite values",
        ));
    }
    let k = groups.len();
    let means: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    let n_total: usize = groups.iter().map(Vec::len).sum();
    let sse: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let df = (n_total - k) as f64;
    let mse = sse / df;
    if !(mse > 0.0) {
        return Err(Error::invalid("groups have zero within-group variance"));
    }
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let se =
                (mse / 2.0 * (1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64)).sqrt();
            let diff = means[i] - means[j];
            let q = diff.abs() / se;
            let p_value = (1.0 - ptukey(q, k, df)).clamp(0.0, 1.0);
            pairs.push(PairComparison {
                first: i,
                second: j,
                mean_difference: diff,
                q,
                p_value,
                significant: p_value < alpha,
            });
        }
    }
    let letters = letter_display(&means, &pairs);
    Ok(TukeyResult {
        means,
        mse,
        df,
        pairs,
        letters,
    })
}

/// Insert-and-absorb letter assignment.
fn letter_display(means: &[f64], pairs: &[PairComparison]) -> Vec<String> {
    let k = means.len();
    let mut columns: Vec<Vec<bool>> = vec![vec![true; k]];
    for p in pairs.iter().filter(|p| p.significant) {
        let mut next = Vec::new();
        for col in columns {
            if col[p.first] && col[p.second] {
                let mut a = col.clone();
                a[p.first] = false;
                let mut b = col;
                b[p.second] = false;
                next.push(a);
                next.push(b);
            } else {
                next.push(col);
            }
        }
        // Absorb columns contained in another column.
        let mut kept: Vec<Vec<bool>> = Vec::new();
        for (i, c) in next.iter().enumerate() {
            let subset_of = |d: &Vec<bool>| (0..k).all(|g| !c[g] || d[g]);
            let dominated = next
                .iter()
                .enumerate()
                .any(|(j, d)| j != i && subset_of(d) && (d != c || j < i));
            if !dominated && c.iter().any(|&b| b) {
                kept.push(c.clone());
            }
        }
        columns = kept;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    let rank = |col: &Vec<bool>| order.iter().position(|&g| col[g]).unwrap_or(k);
    columns.sort_by_key(|c| (rank(c), c.iter().map(|&b| !b).collect::<Vec<_>>()));
    let mut letters = vec![String::new(); k];
    for (li, col) in columns.iter().enumerate() {
        let letter = (b'a' + (li % 26) as u8) as char;
        for g in 0..k {
            if col[g] {
                letters[g].push(letter);
            }
        }
    }
    letters
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal as RNormal};
    use statrs::distribution::StudentsT;

    #[test]
    fn two_means_reduce_to_t() {
        for &(q, df) in &[(1.0, 5.0), (2.5, 12.0), (4.0, 40.0)] {
            let t = StudentsT::new(0.0, 1.0, df).unwrap();
            let expected = 2.0 * t.cdf(q / 2f64.sqrt()) - 1.0;
            assert!((ptukey(q, 2, df) - expected).abs() < 1e-7, "{q} {df}");
        }
    }

    #[test]
    fn matches_critical_value_tables() {
        // Upper 5% points of the studentized range.
        for &(q, k, df) in &[
            (3.877, 3, 10.0),
            (3.958, 4, 20.0),
            (4.824, 10, 30.0),
            (3.858, 5, 1e9),
        ] {
            let p = ptukey(q, k, df);
            assert!((p - 0.95).abs() < 1e-3, "q {q} k {k} df {df}: {p}");
        }
    }

    fn sample(rng: &mut rand_chacha::ChaCha8Rng, mean: f64, sd: f64, n: usize) -> Vec<f64> {
        let d = RNormal::new(mean, sd).unwrap();
        (0..n).map(|_| d.sample(rng)).collect()
    }

    #[test]
    fn identical_groups_share_a_letter() {
        let g = vec![1.0, 2.0, 3.0, 4.0];
        let r = tukey_hsd(&[g.clone(), g.clone(), g], 0.05).unwrap();
        assert_eq!(r.letters, vec!["a", "a", "a"]);
    }

    #[test]
    fn distant_groups_separate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = sample(&mut rng, 0.0, 1.0, 50);
        let b = sample(&mut rng, 20.0, 1.0, 50);
        let r = tukey_hsd(&[a, b], 0.05).unwrap();
        assert_eq!(r.letters, vec!["b", "a"]);
        assert!(r.pairs[0].p_value < 1e-6);
    }

    #[test]
    fn four_models_form_three_groups() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let groups = vec![
            sample(&mut rng, 120.0, 25.0, 40),
            sample(&mut rng, 125.0, 25.0, 40),
            sample(&mut rng, 300.0, 25.0, 40),
            sample(&mut rng, 450.0, 25.0, 40),
        ];
        let r = tukey_hsd(&groups, 0.05).unwrap();
        assert_eq!(r.letters, vec!["c", "c", "b", "a"]);
    }

    #[test]
    fn overlapping_letters() {
        // Middle group not separable from either neighbor.
        let mk = |m: f64| {
            (0..6)
                .map(|i| m + [-1.0, 1.0, -0.5, 0.5, -0.2, 0.2][i])
                .collect::<Vec<_>>()
        };
        let r = tukey_hsd(&[mk(0.0), mk(0.9), mk(1.8)], 0.05).unwrap();
        assert_eq!(r.letters, vec!["b", "ab", "a"]);
    }

    #[test]
    fn degenerate_groups_are_rejected() {
        assert!(tukey_hsd(&[vec![1.0, 2.0]], 0.05).is_err());
        assert!(tukey_hsd(&[vec![1.0], vec![2.0, 3.0]], 0.05).is_err());
        assert!(tukey_hsd(&[vec![1.0, 1.0], vec![2.0, 2.0]], 0.05).is_err());
    }
}
