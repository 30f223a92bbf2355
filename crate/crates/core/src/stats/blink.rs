//! Iterative two-model GWAS: single-marker scans conditioned on pseudo-QTN
//! covariates, with QTNs chosen by LD-pruned ranking and BIC.

use nalgebra::{DMatrix, DVector};
use statrs::function::beta::beta_reg;

use super::bh_fdr;
use super::genetics::{r2_between, GenotypeMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BlinkConfig {
    pub max_iter: usize,
    /// SNPs with a scan p-value below this are QTN candidates.
    pub candidate_p: f64,
    /// Candidates in LD at or above this r² with a better one are skipped.
    pub ld_r2: f64,
    /// Largest QTN set the BIC step considers.
    pub max_qtns: usize,
    /// QTNs are fitted only when the first scan has a p-value below this
    /// level divided by the number of markers.
    pub entry_alpha: f64,
}

impl Default for BlinkConfig {
    fn default() -> Self {
        BlinkConfig {
            max_iter: 10,
            candidate_p: 0.01,
            ld_r2: 0.7,
            max_qtns: 50,
            entry_alpha: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GwasHit {
    pub snp: usize,
    pub snp_id: String,
    pub chromosome: String,
    pub position: u64,
    pub maf: f64,
    pub p_value: f64,
    /// Marker effect from the conditioned scan.
    pub effect: f64,
    pub fdr_p: f64,
    pub is_qtn: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlinkState {
    /// QTN SNP indices in selection order.
    pub qtns: Vec<usize>,
    /// Effects of the QTNs fitted jointly with an intercept.
    pub effects: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// BIC of each candidate prefix size `0..=K` in the last iteration.
    pub bic_trace: Vec<f64>,
    pub selected_k: usize,
    /// Candidates dropped because they were collinear with earlier ones.
    pub dropped: Vec<usize>,
}

/// Gram–Schmidt basis used to residualize against covariates.
struct Basis {
    cols: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Basis {
    fn intercept(n: usize) -> Self {
        Basis {
            cols: vec![vec![1.0 / (n as f64).sqrt(); n]],
        }
    }

    fn residual(&self, v: &[f64]) -> Vec<f64> {
        let mut r = v.to_vec();
        // Two passes keep the projection accurate.
        for _ in 0..2 {
            for q in &self.cols {
                let c = dot(q, &r);
                for (ri, qi) in r.iter_mut().zip(q) {
                    *ri -= c * qi;
                }
            }
        }
        r
    }

    /// Adds `v` unless it is (numerically) in the current span.
    fn push(&mut self, v: &[f64]) -> bool {
        let r = self.residual(v);
        let norm = dot(&r, &r).sqrt();
        let scale = dot(v, v).sqrt();
        if norm <= 1e-8 * scale.max(1e-300) {
            return false;
        }
        self.cols.push(r.iter().map(|x| x / norm).collect());
        true
    }
}

/// Two-sided p-value of a t statistic.
fn t_test_p(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return f64::MIN_POSITIVE;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(f64::MIN_POSITIVE, 1.0)
}

struct Scan {
    p: Vec<f64>,
    effect: Vec<f64>,
}

/// Marker `j` tested against `y` given an intercept and the `covariates`.
fn test_marker(basis: &Basis, ry: &[f64], yy: f64, s: &[f64]) -> (f64, f64) {
    let n = ry.len();
    let rs = basis.residual(s);
    let ss = dot(&rs, &rs);
    let scale = dot(s, s);
    let df = n as f64 - basis.cols.len() as f64 - 1.0;
    if ss <= 1e-12 * scale.max(1e-300) || df < 1.0 {
        return (1.0, 0.0);
    }
    let d = dot(&rs, ry) / ss;
    let rss = (yy - d * d * ss).max(0.0);
    let se = (rss / df / ss).sqrt();
    let t = if se > 0.0 { d / se } else { f64::INFINITY };
    (t_test_p(t, df), d)
}

fn covariate_basis(g: &GenotypeMatrix, covariates: &[usize], dropped: &mut Vec<usize>) -> Basis {
    let mut basis = Basis::intercept(g.n_samples());
    for &q in covariates {
        if !basis.push(g.snp(q)) && !dropped.contains(&q) {
            dropped.push(q);
        }
    }
    basis
}

/// Scans every marker. Non-QTN markers are conditioned on all QTNs; each QTN
/// is conditioned on the others.
fn scan(g: &GenotypeMatrix, y: &[f64], qtns: &[usize], dropped: &mut Vec<usize>) -> Scan {
    let m = g.n_snps();
    let mut p = vec![1.0; m];
    let mut effect = vec![0.0; m];
    let centered = Basis::intercept(y.len()).residual(y);
    if dot(&centered, &centered) <= 1e-20 * dot(y, y) {
        // A constant phenotype carries no association signal.
        return Scan { p, effect };
    }
    let basis = covariate_basis(g, qtns, dropped);
    let ry = basis.residual(y);
    let yy = dot(&ry, &ry);
    for j in (0..m).filter(|j| !qtns.contains(j)) {
        (p[j], effect[j]) = test_marker(&basis, &ry, yy, g.snp(j));
    }
    for &q in qtns {
        let others: Vec<usize> = qtns.iter().copied().filter(|&o| o != q).collect();
        let b = covariate_basis(g, &others, &mut Vec::new());
        let r = b.residual(y);
        (p[q], effect[q]) = test_marker(&b, &r, dot(&r, &r), g.snp(q));
    }
    Scan { p, effect }
}

fn rss_of(basis: &Basis, y: &[f64]) -> f64 {
    let r = basis.residual(y);
    dot(&r, &r)
}

/// Runs the iteration on an imputed matrix. Every marker gets a hit row,
/// sorted by p-value.
pub fn blink_gwas(
    g: &GenotypeMatrix,
    y: &[f64],
    cfg: &BlinkConfig,
) -> Result<(Vec<GwasHit>, BlinkState)> {
    let (n, m) = (g.n_samples(), g.n_snps());
    if y.len() != n {
        return Err(Error::invalid(format!(
            "{} phenotypes for {n} samples",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite phenotype"));
    }
    if g.has_missing() {
        return Err(Error::invalid("genotypes must be imputed before GWAS"));
    }
    if m == 0 || n < 3 {
        return Err(Error::invalid(
            "GWAS needs at least three samples and one SNP",
        ));
    }
    let nf = n as f64;
    let mut qtns: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    let mut bic_trace = Vec::new();
    let mut selected_k = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        let s = scan(g, y, &qtns, &mut dropped);
        if iterations == 1 && s.p.iter().all(|&p| p >= cfg.entry_alpha / m as f64) {
            bic_trace = vec![nf * (rss_of(&Basis::intercept(n), y) / nf).ln() + nf.ln()];
            converged = true;
            break;
        }
        let mut candidates: Vec<usize> = (0..m).filter(|&j| s.p[j] < cfg.candidate_p).collect();
        candidates.sort_by(|&a, &b| s.p[a].total_cmp(&s.p[b]).then(a.cmp(&b)));
        let mut kept: Vec<usize> = Vec::new();
        for c in candidates {
            if kept.len() == cfg.max_qtns {
                break;
            }
            if kept
                .iter()
                .all(|&k| r2_between(g.snp(c), g.snp(k)) < cfg.ld_r2)
            {
                kept.push(c);
            }
        }
        let mut basis = Basis::intercept(n);
        let mut usable = Vec::new();
        bic_trace = vec![nf * (rss_of(&basis, y) / nf).ln() + nf.ln()];
        for &c in &kept {
            if !basis.push(g.snp(c)) {
                dropped.push(c);
                continue;
            }
            usable.push(c);
            let k = usable.len() as f64;
            bic_trace.push(nf * (rss_of(&basis, y) / nf).ln() + (k + 1.0) * nf.ln());
        }
        selected_k = (0..bic_trace.len())
            .min_by(|&a, &b| bic_trace[a].total_cmp(&bic_trace[b]).then(a.cmp(&b)))
            .expect("trace has the empty model");
        let next: Vec<usize> = usable[..selected_k].to_vec();
        let same = {
            let (mut a, mut b) = (next.clone(), qtns.clone());
            a.sort_unstable();
            b.sort_unstable();
            a == b
        };
        qtns = next;
        if same {
            converged = true;
            break;
        }
    }
    let s = scan(g, y, &qtns, &mut dropped);
    let fdr = bh_fdr(&s.p)?;
    let effects = joint_effects(g, y, &qtns)?;
    let mut hits: Vec<GwasHit> = (0..m)
        .map(|j| GwasHit {
            snp: j,
            snp_id: g.snps[j].id.clone(),
            chromosome: g.snps[j].chromosome.clone(),
            position: g.snps[j].position,
            maf: g.maf(j),
            p_value: s.p[j],
            effect: s.effect[j],
            fdr_p: fdr[j],
            is_qtn: qtns.contains(&j),
        })
        .collect();
    hits.sort_by(|a, b| a.p_value.total_cmp(&b.p_value).then(a.snp.cmp(&b.snp)));
    Ok((
        hits,
        BlinkState {
            qtns,
            effects,
            iterations,
            converged,
            bic_trace,
            selected_k,
            dropped,
        },
    ))
}

fn joint_effects(g: &GenotypeMatrix, y: &[f64], qtns: &[usize]) -> Result<Vec<f64>> {
    if qtns.is_empty() {
        return Ok(Vec::new());
    }
    let n = g.n_samples();
    let x = DMatrix::from_fn(n, qtns.len() + 1, |i, c| {
        if c == 0 {
            1.0
        } else {
            g.get(i, qtns[c - 1])
        }
    });
    let beta = x
        .svd(true, true)
        .solve(&DVector::from_column_slice(y), 1e-12)
        .map_err(|e| Error::invalid(format!("QTN fit failed: {e}")))?;
    Ok(beta.iter().skip(1).copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::SnpInfo;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn matrix(n: usize, m: usize, seed: u64) -> GenotypeMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..m)
            .flat_map(|_| {
                let f: f64 = rng.gen_range(0.1..0.5);
                (0..n)
                    .map(|_| f64::from(u8::from(rng.gen_bool(f)) + u8::from(rng.gen_bool(f))))
                    .collect::<Vec<_>>()
            })
            .collect();
        let snps = (0..m)
            .map(|j| SnpInfo {
                id: format!("snp{j}"),
                chromosome: "1".into(),
                position: j as u64 * 1000,
            })
            .collect();
        GenotypeMatrix::new((0..n).map(|i| format!("g{i}")).collect(), snps, data).unwrap()
    }

    #[test]
    fn single_marker_matches_closed_form() {
        let g = matrix(80, 1, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let x = g.snp(0).to_vec();
        let y: Vec<f64> = x
            .iter()
            .map(|v| {
                0.3 * v + {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    e
                }
            })
            .collect();
        let (hits, _) = blink_gwas(&g, &y, &BlinkConfig::default()).unwrap();
        let n = 80.0;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let r = sxy / (sxx * syy).sqrt();
        let t = r * ((n - 2.0) / (1.0 - r * r)).sqrt();
        let p = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, n - 2.0).unwrap().cdf(t.abs()));
        assert!(
            (hits[0].p_value - p).abs() < 1e-10,
            "{} vs {p}",
            hits[0].p_value
        );
        assert!((hits[0].effect - sxy / sxx).abs() < 1e-10);
    }

    #[test]
    fn finds_two_planted_markers() {
        let g = matrix(300, 400, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = (0..300)
            .map(|i| {
                0.8 * g.get(i, 50) - 0.6 * g.get(i, 300) + {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    e
                }
            })
            .collect();
        let (hits, state) = blink_gwas(&g, &y, &BlinkConfig::default()).unwrap();
        let top: Vec<usize> = hits.iter().take(2).map(|h| h.snp).collect();
        assert!(top.contains(&50) && top.contains(&300), "{top:?}");
        assert!(state.qtns.contains(&50) && state.qtns.contains(&300));
        let best = state
            .bic_trace
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(state.bic_trace[state.selected_k], best);
        for (a, &qa) in state.qtns.iter().enumerate() {
            for &qb in &state.qtns[a + 1..] {
                assert!(r2_between(g.snp(qa), g.snp(qb)) < 0.7);
            }
        }
        assert!(hits
            .iter()
            .all(|h| h.fdr_p >= h.p_value && h.p_value > 0.0 && h.p_value <= 1.0));
    }

    #[test]
    fn duplicate_markers_are_dropped_from_covariates() {
        let base = matrix(200, 3, 5);
        let mut data: Vec<f64> = (0..3).flat_map(|j| base.snp(j).to_vec()).collect();
        data.extend_from_slice(base.snp(0));
        let snps = (0..4)
            .map(|j| SnpInfo {
                id: format!("snp{j}"),
                chromosome: "1".into(),
                position: j as u64,
            })
            .collect();
        let g = GenotypeMatrix::new(base.samples.clone(), snps, data).unwrap();
        let y: Vec<f64> = (0..200)
            .map(|i| 2.0 * g.get(i, 0) + 0.01 * (i % 7) as f64)
            .collect();
        let (_, state) = blink_gwas(&g, &y, &BlinkConfig::default()).unwrap();
        assert_eq!(state.qtns.iter().filter(|&&q| q == 0 || q == 3).count(), 1);
    }

    #[test]
    fn rejects_mismatched_phenotypes() {
        let g = matrix(10, 2, 6);
        assert!(blink_gwas(&g, &[1.0; 9], &BlinkConfig::default()).is_err());
    }

    #[test]
    fn constant_phenotype_has_no_signal() {
        let g = matrix(50, 20, 7);
        let (hits, state) = blink_gwas(&g, &[0.0; 50], &BlinkConfig::default()).unwrap();
        assert!(hits.iter().all(|h| h.p_value == 1.0));
        assert!(state.qtns.is_empty());
    }

    #[test]
    fn noise_fits_no_qtns() {
        let g = matrix(200, 300, 8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let y: Vec<f64> = (0..200)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                e
            })
            .collect();
        let (hits, state) = blink_gwas(&g, &y, &BlinkConfig::default()).unwrap();
        assert!(hits[0].p_value >= 0.01 / 300.0);
        assert!(state.qtns.is_empty());
        assert_eq!(state.iterations, 1);
    }
}
