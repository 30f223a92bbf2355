use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnpInfo {
    pub id: String,
    pub chromosome: String,
    pub position: u64,
}

/// Genotype dosages, SNP-major. Missing calls are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct GenotypeMatrix {
    pub samples: Vec<String>,
    pub snps: Vec<SnpInfo>,
    data: Vec<f64>,
}

impl GenotypeMatrix {
    /// `data[j * n_samples + i]` is sample `i` at SNP `j`. Values must lie in
    /// `[0, 2]` or be NaN, and positions must not decrease within a
    /// chromosome.
    pub fn new(samples: Vec<String>, snps: Vec<SnpInfo>, data: Vec<f64>) -> Result<Self> {
        if data.len() != samples.len() * snps.len() {
            return Err(Error::invalid(format!(
                "{} dosages for {} samples x {} SNPs",
                data.len(),
                samples.len(),
                snps.len()
            )));
        }
        if let Some(v) = data
            .iter()
            .find(|v| !v.is_nan() && !(0.0..=2.0).contains(*v))
        {
            return Err(Error::invalid(format!("genotype value {v} outside 0..=2")));
        }
        for w in snps.windows(2) {
            if w[0].chromosome == w[1].chromosome && w[1].position < w[0].position {
                return Err(Error::invalid(format!(
                    "SNP {} is out of position order",
                    w[1].id
                )));
            }
        }
        Ok(GenotypeMatrix {
            samples,
            snps,
            data,
        })
    }

    /// From sample-major calls with `None` for missing.
    pub fn from_calls(
        samples: Vec<String>,
        snps: Vec<SnpInfo>,
        calls: &[Vec<Option<u8>>],
    ) -> Result<Self> {
        let (n, m) = (samples.len(), snps.len());
        if calls.len() != n || calls.iter().any(|row| row.len() != m) {
            return Err(Error::invalid("call table does not match samples x SNPs"));
        }
        let data = (0..m)
            .flat_map(|j| {
                calls
                    .iter()
                    .map(move |row| row[j].map_or(f64::NAN, f64::from))
            })
            .collect();
        GenotypeMatrix::new(samples, snps, data)
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn n_snps(&self) -> usize {
        self.snps.len()
    }

    pub fn snp(&self, j: usize) -> &[f64] {
        let n = self.n_samples();
        &self.data[j * n..(j + 1) * n]
    }

    pub fn get(&self, sample: usize, snp: usize) -> f64 {
        self.data[snp * self.n_samples() + sample]
    }

    /// Minor allele frequency over non-missing calls.
    pub fn maf(&self, j: usize) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for v in self.snp(j).iter().filter(|v| !v.is_nan()) {
            sum += v;
            n += 1;
        }
        if n == 0 {
            return 0.0;
        }
        let total = 2.0 * n as f64;
        sum.min(total - sum) / total
    }

    pub fn subset(&self, samples: &[usize], snps: &[usize]) -> GenotypeMatrix {
        let data = snps
            .iter()
            .flat_map(|&j| {
                let col = self.snp(j);
                samples.iter().map(move |&i| col[i])
            })
            .collect();
        GenotypeMatrix {
            samples: samples.iter().map(|&i| self.samples[i].clone()).collect(),
            snps: snps.iter().map(|&j| self.snps[j].clone()).collect(),
            data,
        }
    }

    pub fn has_missing(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }
}

/// Drops samples with more than 10% missing calls, then SNPs with more than
/// 15% missing calls or MAF below 0.05, then fills remaining gaps with the
/// SNP mean.
pub fn snp_filters(g: &GenotypeMatrix) -> Result<GenotypeMatrix> {
    let (n, m) = (g.n_samples(), g.n_snps());
    let samples: Vec<usize> = (0..n)
        .filter(|&i| {
            let miss = (0..m).filter(|&j| g.get(i, j).is_nan()).count();
            miss as f64 <= 0.10 * m as f64
        })
        .collect();
    let kept_samples = g.subset(&samples, &(0..m).collect::<Vec<_>>());
    let ns = samples.len();
    let snps: Vec<usize> = (0..m)
        .filter(|&j| {
            let col = kept_samples.snp(j);
            let miss = col.iter().filter(|v| v.is_nan()).count();
            ns > 0 && miss as f64 <= 0.15 * ns as f64 && kept_samples.maf(j) >= 0.05
        })
        .collect();
    if samples.is_empty() || snps.is_empty() {
        return Err(Error::invalid("SNP filters removed every sample or SNP"));
    }
    let mut out = kept_samples.subset(&(0..ns).collect::<Vec<_>>(), &snps);
    for j in 0..out.n_snps() {
        let col = &mut out.data[j * ns..(j + 1) * ns];
        let present: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        for v in col.iter_mut().filter(|v| v.is_nan()) {
            *v = mean;
        }
    }
    Ok(out)
}

/// Squared Pearson correlation of two dosage columns (0 if either is
/// constant).
pub fn r2_between(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
        sab += x * y;
    }
    let cov = n * sab - sa * sb;
    let va = n * saa - sa * sa;
    let vb = n * sbb - sb * sb;
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    (cov * cov) / (va * vb)
}

/// Greedy LD pruning in matrix order: a SNP is dropped when its r² with any
/// of the last `window` kept SNPs on the same chromosome reaches `threshold`.
/// Returns the kept SNP indices.
pub fn ld_prune(g: &GenotypeMatrix, threshold: f64, window: usize) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..g.n_snps() {
        let chrom = &g.snps[j].chromosome;
        let recent = kept
            .iter()
            .rev()
            .take_while(|&&k| &g.snps[k].chromosome == chrom)
            .take(window);
        let linked = recent
            .into_iter()
            .any(|&k| r2_between(g.snp(j), g.snp(k)) >= threshold);
        if !linked {
            kept.push(j);
        }
    }
    kept
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceComponents {
    pub sigma2_g: f64,
    pub sigma2_e: f64,
    /// The moment estimate of the genotypic variance was negative and was set
    /// to zero.
    pub clamped: bool,
}

impl VarianceComponents {
    pub fn heritability(&self) -> f64 {
        let total = self.sigma2_g + self.sigma2_e;
        if total > 0.0 {
            self.sigma2_g / total
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlupResult {
    /// Genotype ids in sorted order.
    pub genotypes: Vec<String>,
    pub blups: Vec<f64>,
    pub grand_mean: f64,
    pub components: VarianceComponents,
    pub h2: f64,
}

/// One-way random-effects model `y = μ + g + e` fitted by ANOVA moments, with
/// the unbalanced-design replicate count `n₀`. BLUPs shrink each genotype's
/// mean deviation by `σ²G / (σ²G + σ²E / n_g)`.
pub fn blup_and_h2(values: &[f64], genotypes: &[String]) -> Result<BlupResult> {
    if values.len() != genotypes.len() {
        return Err(Error::invalid("values and genotype ids differ in length"));
    }
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (v, g) in values.iter().zip(genotypes) {
        if !v.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite phenotype for genotype {g}"
            )));
        }
        groups.entry(g.as_str()).or_default().push(*v);
    }
    let k = groups.len();
    let n = values.len();
    if k < 2 || n <= k {
        return Err(Error::invalid(
            "heritability needs at least two genotypes and some replication",
        ));
    }
    let grand = values.iter().sum::<f64>() / n as f64;
    let means: Vec<f64> = groups
        .values()
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    let ssb: f64 = groups
        .values()
        .zip(&means)
        .map(|(g, m)| g.len() as f64 * (m - grand).powi(2))
        .sum();
    let ssw: f64 = groups
        .values()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let msb = ssb / (k - 1) as f64;
    let msw = ssw / (n - k) as f64;
    let sum_sq: f64 = groups.values().map(|g| (g.len() as f64).powi(2)).sum();
    let n0 = (n as f64 - sum_sq / n as f64) / (k - 1) as f64;
    let raw_g = (msb - msw) / n0;
    let components = VarianceComponents {
        sigma2_g: raw_g.max(0.0),
        sigma2_e: msw,
        clamped: raw_g < 0.0,
    };
    let blups = groups
        .values()
        .zip(&means)
        .map(|(g, m)| {
            let denom = components.sigma2_g + components.sigma2_e / g.len() as f64;
            let shrink = if denom > 0.0 {
                components.sigma2_g / denom
            } else {
                0.0
            };
            shrink * (m - grand)
        })
        .collect();
    Ok(BlupResult {
        genotypes: groups.keys().map(|s| s.to_string()).collect(),
        blups,
        grand_mean: grand,
        components,
        h2: components.heritability(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn info(m: usize) -> Vec<SnpInfo> {
        (0..m)
            .map(|j| SnpInfo {
                id: format!("s{j}"),
                chromosome: "1".into(),
                position: j as u64 * 100,
            })
            .collect()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("g{i}")).collect()
    }

    #[test]
    fn maf_filter_edges() {
        // 100 samples: monomorphic, all heterozygous, exactly 10 minor alleles.
        let mut calls = vec![vec![Some(0u8), Some(1), Some(0)]; 100];
        for row in calls.iter_mut().take(10) {
            row[2] = Some(1);
        }
        let g = GenotypeMatrix::from_calls(ids(100), info(3), &calls).unwrap();
        assert_eq!(g.maf(2), 0.05);
        let f = snp_filters(&g).unwrap();
        let kept: Vec<&str> = f.snps.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(kept, vec!["s1", "s2"]);
    }

    #[test]
    fn missingness_filters_and_imputation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut calls: Vec<Vec<Option<u8>>> = (0..40)
            .map(|_| (0..20).map(|_| Some(rng.gen_range(0..3u8))).collect())
            .collect();
        // Sample 0 misses 3 of 20 calls (15% > 10%).
        for j in 0..3 {
            calls[0][j] = None;
        }
        // SNP 5 misses 7 of the remaining 39 (about 18% > 15%).
        for row in calls.iter_mut().skip(1).take(7) {
            row[5] = None;
        }
        // SNP 6 misses 2 calls and is kept, imputed with its mean.
        calls[3][6] = None;
        calls[4][6] = None;
        let g = GenotypeMatrix::from_calls(ids(40), info(20), &calls).unwrap();
        let f = snp_filters(&g).unwrap();
        assert_eq!(f.n_samples(), 39);
        assert!(!f.snps.iter().any(|s| s.id == "s5"));
        assert!(!f.has_missing());
        let j6 = f.snps.iter().position(|s| s.id == "s6").unwrap();
        let present: Vec<f64> = (0..39)
            .filter(|&i| i != 2 && i != 3)
            .map(|i| f.get(i, j6))
            .collect();
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        assert_eq!(f.get(2, j6), mean);
    }

    #[test]
    fn everything_filtered_is_an_error() {
        let calls = vec![vec![Some(0u8)]; 10];
        let g = GenotypeMatrix::from_calls(ids(10), info(1), &calls).unwrap();
        assert!(snp_filters(&g).is_err());
    }

    #[test]
    fn ld_prune_cases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let n = 400;
        let col = |rng: &mut rand_chacha::ChaCha8Rng| {
            (0..n)
                .map(|_| rng.gen_range(0..3) as f64)
                .collect::<Vec<f64>>()
        };
        let a = col(&mut rng);
        let dup = GenotypeMatrix::new(ids(n), info(2), [a.clone(), a].concat()).unwrap();
        assert_eq!(ld_prune(&dup, 0.7, 100), vec![0]);

        let m = 300;
        let data: Vec<f64> = (0..m).flat_map(|_| col(&mut rng)).collect();
        let ind = GenotypeMatrix::new(ids(n), info(m), data).unwrap();
        assert!(ld_prune(&ind, 0.7, 100).len() as f64 >= 0.99 * m as f64);
    }

    #[test]
    fn r2_boundary_drops_second() {
        // Integer sums give 10 · cov² = 7 · var(x) · var(y) exactly.
        let x = vec![2.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0];
        let y = vec![1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 2.0, 0.0, 2.0, 2.0];
        let r2 = r2_between(&x, &y);
        assert_eq!(r2, 0.7);
        let g = GenotypeMatrix::new(ids(12), info(2), [x, y].concat()).unwrap();
        assert_eq!(ld_prune(&g, 0.7, 100), vec![0]);
    }

    #[test]
    fn noiseless_clones_are_fully_heritable() {
        let genos: Vec<String> = (0..30).map(|i| format!("g{}", i / 3)).collect();
        let vals: Vec<f64> = (0..30).map(|i| (i / 3) as f64 * 1.5).collect();
        let r = blup_and_h2(&vals, &genos).unwrap();
        assert_eq!(r.h2, 1.0);
        let grand = vals.iter().sum::<f64>() / 30.0;
        for (g, b) in r.genotypes.iter().zip(&r.blups) {
            let idx: f64 = g[1..].parse().unwrap();
            assert!((b - (idx * 1.5 - grand)).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_variances_give_half() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let (mut vals, mut genos) = (Vec::new(), Vec::new());
        for g in 0..200 {
            let effect = unit.sample(&mut rng);
            for _ in 0..4 {
                vals.push(effect + unit.sample(&mut rng));
                genos.push(format!("g{g}"));
            }
        }
        let r = blup_and_h2(&vals, &genos).unwrap();
        assert!((r.h2 - 0.5).abs() < 0.05, "{}", r.h2);
    }

    #[test]
    fn unreplicated_is_an_error() {
        assert!(blup_and_h2(&[1.0, 2.0, 3.0], &ids(3)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn blups_shrink_and_h2_bounded(vals in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let genos: Vec<String> = (0..12).map(|i| format!("g{}", i % 4)).collect();
            let r = blup_and_h2(&vals, &genos).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.h2));
            for (gi, b) in r.blups.iter().enumerate() {
                let own: Vec<f64> = (0..12).filter(|i| i % 4 == gi).map(|i| vals[i]).collect();
                let dev = own.iter().sum::<f64>() / 3.0 - r.grand_mean;
                prop_assert!(b.abs() <= dev.abs() + 1e-12);
            }
        }

        #[test]
        fn h2_increases_with_genetic_variance(sg in 0.01f64..5.0, extra in 0.01f64..5.0) {
            let a = VarianceComponents { sigma2_g: sg, sigma2_e: 1.0, clamped: false };
            let b = VarianceComponents { sigma2_g: sg + extra, sigma2_e: 1.0, clamped: false };
            prop_assert!(b.heritability() > a.heritability());
        }

        #[test]
        fn filters_then_prune_are_idempotent(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let calls: Vec<Vec<Option<u8>>> = (0..30)
                .map(|_| (0..25).map(|_| if rng.gen_bool(0.05) { None } else { Some(rng.gen_range(0..3u8).min(rng.gen_range(0..3u8))) }).collect())
                .collect();
            let g = GenotypeMatrix::from_calls(ids(30), info(25), &calls).unwrap();
            let Ok(f) = snp_filters(&g) else { return Ok(()); };
            let kept = ld_prune(&f, 0.7, 100);
            let once = f.subset(&(0..f.n_samples()).collect::<Vec<_>>(), &kept);
            let again = snp_filters(&once).unwrap();
            let kept2 = ld_prune(&again, 0.7, 100);
            let twice = again.subset(&(0..again.n_samples()).collect::<Vec<_>>(), &kept2);
            prop_assert_eq!(once, twice);
        }
    }
}
