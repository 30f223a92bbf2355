//! Phenotype-to-GWAS pipeline and the synthetic field population used to
//! exercise it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::blink::{blink_gwas, BlinkConfig, BlinkState, GwasHit};
use super::genetics::{blup_and_h2, ld_prune, snp_filters, BlupResult, GenotypeMatrix, SnpInfo};
use super::io::PhenotypeRecord;
use super::mad_filter;
use super::tps::{tps_correct, Lambda};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GwasConfig {
    pub mad_cutoff: f64,
    /// Spatial correction; `None` skips it.
    pub spatial: Option<Lambda>,
    pub ld_r2: f64,
    pub ld_window: usize,
    pub blink: BlinkConfig,
}

impl Default for GwasConfig {
    fn default() -> Self {
        GwasConfig {
            mad_cutoff: 6.0,
            spatial: Some(Lambda::Auto),
            ld_r2: 0.7,
            ld_window: 100,
            blink: BlinkConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GwasReport {
    /// Sorted by p-value.
    pub hits: Vec<GwasHit>,
    pub state: BlinkState,
    pub blup: BlupResult,
    pub outliers_removed: usize,
    pub mad_zero: bool,
    pub tps_lambda: Option<f64>,
    pub samples_tested: usize,
    pub snps_tested: usize,
}

/// MAD outlier removal, spatial correction, genotype BLUPs and H², SNP
/// filtering and LD pruning, then BLINK on the BLUPs.
pub fn run_gwas(
    phenotypes: &[PhenotypeRecord],
    genotypes: &GenotypeMatrix,
    cfg: &GwasConfig,
) -> Result<GwasReport> {
    let values: Vec<f64> = phenotypes.iter().map(|p| p.value).collect();
    let mad = mad_filter(&values, cfg.mad_cutoff)?;
    let kept: Vec<&PhenotypeRecord> = phenotypes
        .iter()
        .zip(&mad.kept)
        .filter(|(_, &k)| k)
        .map(|(p, _)| p)
        .collect();
    let mut values: Vec<f64> = kept.iter().map(|p| p.value).collect();
    let mut tps_lambda = None;
    if let Some(lambda) = cfg.spatial {
        let coords: Vec<(f64, f64)> = kept.iter().map(|p| (p.row, p.position)).collect();
        let fit = tps_correct(&values, &coords, lambda)?;
        tps_lambda = Some(fit.lambda);
        values = fit.corrected;
    }
    let ids: Vec<String> = kept.iter().map(|p| p.genotype_id.clone()).collect();
    let blup = blup_and_h2(&values, &ids)?;

    let by_id: BTreeMap<&str, f64> = blup
        .genotypes
        .iter()
        .map(String::as_str)
        .zip(blup.blups.iter().copied())
        .collect();
    let matched: Vec<usize> = (0..genotypes.n_samples())
        .filter(|&i| by_id.contains_key(genotypes.samples[i].as_str()))
        .collect();
    if matched.len() < 3 {
        return Err(Error::invalid(format!(
            "only {} phenotyped genotypes appear in the genotype matrix",
            matched.len()
        )));
    }
    let g = snp_filters(&genotypes.subset(&matched, &(0..genotypes.n_snps()).collect::<Vec<_>>()))?;
    let pruned = ld_prune(&g, cfg.ld_r2, cfg.ld_window);
    let g = g.subset(&(0..g.n_samples()).collect::<Vec<_>>(), &pruned);
    let y: Vec<f64> = g.samples.iter().map(|s| by_id[s.as_str()]).collect();
    let (hits, state) = blink_gwas(&g, &y, &cfg.blink)?;
    Ok(GwasReport {
        hits,
        state,
        blup,
        outliers_removed: mad.kept.iter().filter(|&&k| !k).count(),
        mad_zero: mad.mad_zero,
        tps_lambda,
        samples_tested: g.n_samples(),
        snps_tested: g.n_snps(),
    })
}

/// Random diploid genotypes with short-range LD: along each chromosome every
/// haplotype copies its previous allele with probability 0.3, otherwise it
/// draws from the SNP's allele frequency. About 1% of calls are missing.
pub fn simulate_genotypes(
    n_samples: usize,
    n_snps: usize,
    n_chromosomes: usize,
    seed: u64,
) -> Result<GenotypeMatrix> {
    if n_samples == 0 || n_snps == 0 || n_chromosomes == 0 {
        return Err(Error::invalid(
            "simulation needs samples, SNPs and chromosomes",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_chrom = n_snps.div_ceil(n_chromosomes);
    let mut haps = vec![[false; 2]; n_samples];
    let mut snps = Vec::with_capacity(n_snps);
    let mut data = Vec::with_capacity(n_snps * n_samples);
    for j in 0..n_snps {
        let chrom = j / per_chrom;
        let first = j % per_chrom == 0;
        let freq: f64 = rng.gen_range(0.05..0.5);
        snps.push(SnpInfo {
            id: format!("S{:02}_{j:06}", chrom + 1),
            chromosome: (chrom + 1).to_string(),
            position: (j % per_chrom) as u64 * 2_000 + rng.gen_range(0..1_000),
        });
        for h in haps.iter_mut() {
            for allele in h.iter_mut() {
                if first || !rng.gen_bool(0.3) {
                    *allele = rng.gen_bool(freq);
                }
            }
            let dosage = f64::from(u8::from(h[0]) + u8::from(h[1]));
            data.push(if rng.gen_bool(0.01) { f64::NAN } else { dosage });
        }
    }
    let samples = (0..n_samples).map(|i| format!("G{:04}", i + 1)).collect();
    GenotypeMatrix::new(samples, snps, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedPopulation {
    /// One row per genotype, with missing calls.
    pub genotypes: GenotypeMatrix,
    /// One record per planted clone.
    pub phenotypes: Vec<PhenotypeRecord>,
    /// Causal SNP indices.
    pub qtns: Vec<usize>,
    pub true_h2: f64,
}

/// Clonal field trial: `n_genotypes × clones` trees placed at random on a
/// 40-tree-wide grid. Genetic values come from `n_qtns` equal-variance QTNs
/// scaled to variance `h2`; residuals have variance `1 - h2`; a smooth field
/// trend is added on top.
pub fn simulate_population(
    n_genotypes: usize,
    clones: usize,
    n_snps: usize,
    n_qtns: usize,
    h2: f64,
    seed: u64,
) -> Result<SimulatedPopulation> {
    if !(0.0..=1.0).contains(&h2) || clones < 2 || n_qtns == 0 || n_qtns > n_snps {
        return Err(Error::invalid("invalid population parameters"));
    }
    let genotypes = simulate_genotypes(n_genotypes, n_snps, 19.min(n_snps), seed)?;
    let usable: Vec<usize> = {
        let kept = snp_filters(&genotypes)?;
        let ids: std::collections::BTreeSet<&str> =
            kept.snps.iter().map(|s| s.id.as_str()).collect();
        (0..n_snps)
            .filter(|&j| ids.contains(genotypes.snps[j].id.as_str()))
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let mut qtns: Vec<usize> = Vec::new();
    while qtns.len() < n_qtns.min(usable.len()) {
        let j = usable[rng.gen_range(0..usable.len())];
        if !qtns.contains(&j) {
            qtns.push(j);
        }
    }
    let mut genetic = vec![0.0; n_genotypes];
    for &q in &qtns {
        let present: Vec<f64> = genotypes
            .snp(q)
            .iter()
            .copied()
            .filter(|v| !v.is_nan())
            .collect();
        let pm = present.iter().sum::<f64>() / present.len() as f64;
        let col: Vec<f64> = genotypes
            .snp(q)
            .iter()
            .map(|&v| if v.is_nan() { pm } else { v })
            .collect();
        let mean = col.iter().sum::<f64>() / n_genotypes as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_genotypes as f64).sqrt();
        for (gv, v) in genetic.iter_mut().zip(&col) {
            *gv += (v - mean) / sd.max(1e-12);
        }
    }
    let gm = genetic.iter().sum::<f64>() / n_genotypes as f64;
    let gsd = (genetic.iter().map(|v| (v - gm).powi(2)).sum::<f64>() / n_genotypes as f64).sqrt();
    for v in &mut genetic {
        *v = (*v - gm) / gsd.max(1e-12) * h2.sqrt();
    }
    let noise = Normal::new(0.0, (1.0 - h2).sqrt()).expect("valid sd");
    let mut slots: Vec<usize> = (0..n_genotypes * clones).collect();
    for i in (1..slots.len()).rev() {
        slots.swap(i, rng.gen_range(0..=i));
    }
    let mut phenotypes = Vec::with_capacity(slots.len());
    for (t, &slot) in slots.iter().enumerate() {
        let (gi, clone) = (t / clones, t % clones);
        let (row, position) = ((slot / 40) as f64 + 1.0, (slot % 40) as f64 + 1.0);
        let trend = 0.6 * (row / 6.0).sin() + 0.4 * (position / 9.0).cos();
        phenotypes.push(PhenotypeRecord {
            sample_id: format!("{}-{}", genotypes.samples[gi], clone + 1),
            genotype_id: genotypes.samples[gi].clone(),
            row,
            position,
            value: 10.0 + genetic[gi] + trend + noise.sample(&mut rng),
        });
    }
    Ok(SimulatedPopulation {
        genotypes,
        phenotypes,
        qtns,
        true_h2: h2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn genotype_simulation_is_deterministic() {
        let a = simulate_genotypes(30, 50, 3, 9).unwrap();
        let b = simulate_genotypes(30, 50, 3, 9).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.snps, b.snps);
        assert!(a.has_missing());
        assert_eq!(a.snps.iter().filter(|s| s.chromosome == "3").count(), 16);
    }

    #[test]
    fn pipeline_finds_the_planted_qtn() {
        let pop = simulate_population(200, 3, 600, 1, 0.7, 21).unwrap();
        let report = run_gwas(&pop.phenotypes, &pop.genotypes, &GwasConfig::default()).unwrap();
        let target = &pop.genotypes.snps[pop.qtns[0]].id;
        assert_eq!(&report.hits[0].snp_id, target);
        assert!(report.hits[0].fdr_p < 0.05);
        assert!(report.blup.h2 > 0.4, "{}", report.blup.h2);
        assert!(report.tps_lambda.is_some());
        assert_eq!(report.samples_tested, 200);
    }

    #[test]
    fn unmatched_genotypes_are_an_error() {
        let pop = simulate_population(20, 2, 40, 1, 0.5, 2).unwrap();
        let mut phen = pop.phenotypes.clone();
        for p in &mut phen {
            p.genotype_id = format!("x{}", p.genotype_id);
        }
        assert!(run_gwas(&phen, &pop.genotypes, &GwasConfig::default()).is_err());
    }
}
