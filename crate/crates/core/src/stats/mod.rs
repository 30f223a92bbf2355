//! Segmentation metrics and the quantitative-genetics pipeline: outlier
//! filtering, spatial correction, BLUPs and heritability, SNP filtering, and
//! multi-locus GWAS.

mod blink;
mod genetics;
mod io;
mod pipeline;
mod tps;
mod tukey;

pub use blink::{blink_gwas, BlinkConfig, BlinkState, GwasHit};
pub use genetics::{
    blup_and_h2, ld_prune, r2_between, snp_filters, BlupResult, GenotypeMatrix, SnpInfo,
    VarianceComponents,
};
pub use io::{
    load_genotypes, load_genotypes_text, load_phenotypes, save_genotypes, save_genotypes_text,
    save_phenotypes, write_gwas_csv, write_manhattan_csv, PhenotypeRecord,
};
pub use pipeline::{
    run_gwas, simulate_genotypes, simulate_population, GwasConfig, GwasReport, SimulatedPopulation,
};
pub use tps::{tps_correct, Lambda, TpsFit};
pub use tukey::{ptukey, tukey_hsd, PairComparison, TukeyResult};

use crate::error::{Error, Result};
use crate::morphology::{connected_components, Connectivity, Mask};

fn same_dims(a: &Mask, b: &Mask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.height(), a.width()],
            actual: vec![b.height(), b.width()],
        });
    }
    Ok(())
}

/// Intersection over union; 1 when both masks are empty.
pub fn jaccard(a: &Mask, b: &Mask) -> Result<f64> {
    same_dims(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Fraction of ground-truth pixels that were predicted.
pub fn recall(pred: &Mask, truth: &Mask) -> Result<f64> {
    same_dims(pred, truth)?;
    let total = truth.count();
    if total == 0 {
        return Err(Error::invalid(
            "recall is undefined for an empty ground truth",
        ));
    }
    let hit = pred
        .bits()
        .iter()
        .zip(truth.bits())
        .filter(|&(&p, &t)| p && t)
        .count();
    Ok(hit as f64 / total as f64)
}

/// Number of 8-connected objects.
pub fn object_count(mask: &Mask) -> usize {
    connected_components(mask, Connectivity::Eight).count
}

/// Coefficient of determination of the least-squares line `y ~ x`.
pub fn r_squared(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::invalid("r² needs at least three paired values"));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(Error::invalid("r² is undefined for zero variance"));
    }
    Ok((sxy * sxy / (sxx * syy)).min(1.0))
}

/// Benjamini–Hochberg adjusted p-values, in input order.
pub fn bh_fdr(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Error::invalid(format!("p-value {bad} outside (0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(p[i] * m as f64 / (rank + 1) as f64);
        adjusted[i] = running.max(p[i]);
    }
    Ok(adjusted)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MadFilter {
    pub kept: Vec<bool>,
    /// The median absolute deviation was zero, so nothing was removed.
    pub mad_zero: bool,
}

/// Keeps values whose robust z-score `|x - median| / (1.4826 MAD)` is at most
/// `cutoff`.
pub fn mad_filter(values: &[f64], cutoff: f64) -> Result<MadFilter> {
    if values.len() < 3 || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "MAD filtering needs at least three finite values",
        ));
    }
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&dev);
    if mad == 0.0 {
        return Ok(MadFilter {
            kept: vec![true; values.len()],
            mad_zero: true,
        });
    }
    let scale = 1.4826 * mad;
    Ok(MadFilter {
        kept: dev.iter().map(|d| d / scale <= cutoff).collect(),
        mad_zero: false,
    })
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn square(r0: usize, c0: usize) -> Mask {
        Mask::from_fn(30, 30, |r, c| {
            (r0..r0 + 10).contains(&r) && (c0..c0 + 10).contains(&c)
        })
    }

    #[test]
    fn jaccard_cases() {
        let a = square(5, 5);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard(&a, &square(18, 18)).unwrap(), 0.0);
        assert!((jaccard(&a, &square(5, 10)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&Mask::new(3, 3), &Mask::new(3, 3)).unwrap(), 1.0);
        assert!(jaccard(&a, &Mask::new(3, 3)).is_err());
    }

    #[test]
    fn recall_cases() {
        let gt = square(5, 5);
        assert_eq!(recall(&gt, &gt).unwrap(), 1.0);
        assert_eq!(recall(&Mask::new(30, 30), &gt).unwrap(), 0.0);
        assert_eq!(recall(&gt.dilate(2), &gt).unwrap(), 1.0);
        assert!(recall(&gt, &Mask::new(30, 30)).is_err());
    }

    #[test]
    fn r_squared_cases() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
        assert!((r_squared(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(r_squared(&x, &y).unwrap() < 0.002);
        assert!(r_squared(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn bh_cases() {
        assert_eq!(bh_fdr(&[0.3]).unwrap(), vec![0.3]);
        let adj = bh_fdr(&[0.01, 0.02, 0.03, 0.04]).unwrap();
        assert!(adj.iter().all(|v| (v - 0.04).abs() < 1e-15), "{adj:?}");
        assert!(bh_fdr(&[0.0]).is_err());
        assert!(bh_fdr(&[1.5]).is_err());
    }

    #[test]
    fn mad_cases() {
        let mut v: Vec<f64> = (1..=9).map(f64::from).collect();
        v.push(1000.0);
        let f = mad_filter(&v, 6.0).unwrap();
        assert_eq!(f.kept.iter().filter(|&&k| !k).count(), 1);
        assert!(!f.kept[9]);
        let c = mad_filter(&[2.0; 5], 6.0).unwrap();
        assert!(c.mad_zero && c.kept.iter().all(|&k| k));
        assert!(mad_filter(&[1.0, 2.0], 6.0).is_err());

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let normal: Vec<f64> = (0..10_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let removed = mad_filter(&normal, 6.0)
            .unwrap()
            .kept
            .iter()
            .filter(|&&k| !k)
            .count();
        assert!(removed < 1, "{removed}");
    }

    proptest! {
        #[test]
        fn jaccard_symmetric_and_bounded(
            a in proptest::collection::vec(any::<bool>(), 64),
            b in proptest::collection::vec(any::<bool>(), 64),
        ) {
            let (ma, mb) = (Mask::from_bits(8, 8, a).unwrap(), Mask::from_bits(8, 8, b).unwrap());
            let j = jaccard(&ma, &mb).unwrap();
            prop_assert_eq!(j, jaccard(&mb, &ma).unwrap());
            if !ma.is_empty() && !mb.is_empty() {
                prop_assert!(j <= recall(&ma, &mb).unwrap().min(recall(&mb, &ma).unwrap()) + 1e-15);
            }
        }

        #[test]
        fn bh_is_monotone_and_dominates(p in proptest::collection::vec(1e-9f64..=1.0, 1..40)) {
            let adj = bh_fdr(&p).unwrap();
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
            for w in order.windows(2) {
                prop_assert!(adj[w[0]] <= adj[w[1]]);
            }
            for (a, r) in adj.iter().zip(&p) {
                prop_assert!(a >= r && *a <= 1.0);
            }
        }
    }
}
