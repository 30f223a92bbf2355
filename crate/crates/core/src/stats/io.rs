//! Genotype, phenotype and GWAS result files.
//!
//! Binary genotype layout (little-endian): magic `LTGT`, `u32` version,
//! `u32` samples, `u32` SNPs, length-prefixed sample ids, per SNP a
//! length-prefixed id, length-prefixed chromosome and `u64` position, then
//! SNP-major `u8` codes with 255 for a missing call.

use std::io::Write;
use std::path::Path;

use super::blink::GwasHit;
use super::genetics::{GenotypeMatrix, SnpInfo};
use crate::error::{Error, Result};

pub const GENOTYPE_MAGIC: &[u8; 4] = b"LTGT";
pub const GENOTYPE_VERSION: u32 = 1;
const MISSING: u8 = 255;

fn code_of(v: f64) -> Result<u8> {
    if v.is_nan() {
        Ok(MISSING)
    } else if v == 0.0 || v == 1.0 || v == 2.0 {
        Ok(v as u8)
    } else {
        Err(Error::invalid(format!("dosage {v} is not a 0/1/2 call")))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes unimputed calls; imputed (fractional) dosages are rejected.
pub fn save_genotypes(g: &GenotypeMatrix, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    let str = |out: &mut Vec<u8>, s: &str| {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    };
    out.extend_from_slice(GENOTYPE_MAGIC);
    u32le(&mut out, GENOTYPE_VERSION as usize);
    u32le(&mut out, g.n_samples());
    u32le(&mut out, g.n_snps());
    g.samples.iter().for_each(|s| str(&mut out, s));
    for s in &g.snps {
        str(&mut out, &s.id);
        str(&mut out, &s.chromosome);
        out.extend_from_slice(&s.position.to_le_bytes());
    }
    for j in 0..g.n_snps() {
        for &v in g.snp(j) {
            out.push(code_of(v)?);
        }
    }
    write_file(path, &out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.bytes.len() - self.pos {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format(self.path, "invalid utf-8"))
    }
}

pub fn load_genotypes(path: &Path) -> Result<GenotypeMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != GENOTYPE_MAGIC {
        return Err(Error::format(path, "not a genotype file"));
    }
    let version = r.u32()? as u32;
    if version != GENOTYPE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: GENOTYPE_VERSION,
        });
    }
    let (n, m) = (r.u32()?, r.u32()?);
    let samples = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let mut snps = Vec::with_capacity(m.min(1 << 20));
    for _ in 0..m {
        let id = r.str()?;
        let chromosome = r.str()?;
        let position = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        snps.push(SnpInfo {
            id,
            chromosome,
            position,
        });
    }
    let codes = r.take(n * m)?;
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes"));
    }
    let data = codes
        .iter()
        .map(|&c| match c {
            0..=2 => Ok(f64::from(c)),
            MISSING => Ok(f64::NAN),
            _ => Err(Error::format(path, format!("invalid genotype code {c}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    GenotypeMatrix::new(samples, snps, data).map_err(|e| Error::format(path, e.to_string()))
}

/// Text variant: header `snp_id,chromosome,position,<sample ids>`, one row
/// per SNP with `0`, `1`, `2` or `NA`.
pub fn save_genotypes_text(g: &GenotypeMatrix, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["snp_id".to_string(), "chromosome".into(), "position".into()];
    header.extend(g.samples.iter().cloned());
    w.write_record(&header)?;
    for (j, s) in g.snps.iter().enumerate() {
        let mut row = vec![s.id.clone(), s.chromosome.clone(), s.position.to_string()];
        for &v in g.snp(j) {
            row.push(match code_of(v)? {
                MISSING => "NA".to_string(),
                c => c.to_string(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_genotypes_text(path: &Path) -> Result<GenotypeMatrix> {
    let mut rd = csv::Reader::from_path(path)?;
    let header = rd.headers()?.clone();
    if header.len() < 3 || &header[0] != "snp_id" {
        return Err(Error::format(
            path,
            "expected snp_id,chromosome,position,<samples>",
        ));
    }
    let samples: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let (mut snps, mut data) = (Vec::new(), Vec::new());
    for row in rd.records() {
        let row = row?;
        let position = row[2]
            .parse()
            .map_err(|_| Error::format(path, format!("bad position {:?}", &row[2])))?;
        snps.push(SnpInfo {
            id: row[0].to_string(),
            chromosome: row[1].to_string(),
            position,
        });
        for field in row.iter().skip(3) {
            data.push(match field {
                "0" => 0.0,
                "1" => 1.0,
                "2" => 2.0,
                "NA" | "" => f64::NAN,
                other => return Err(Error::format(path, format!("invalid genotype {other:?}"))),
            });
        }
    }
    GenotypeMatrix::new(samples, snps, data).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhenotypeRecord {
    pub sample_id: String,
    pub genotype_id: String,
    /// Field row and position within the row.
    pub row: f64,
    pub position: f64,
    pub value: f64,
}

const PHENOTYPE_HEADER: [&str; 5] = ["sample_id", "genotype_id", "row", "position", "value"];

pub fn save_phenotypes(records: &[PhenotypeRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PHENOTYPE_HEADER)?;
    for r in records {
        w.write_record([
            r.sample_id.clone(),
            r.genotype_id.clone(),
            r.row.to_string(),
            r.position.to_string(),
            r.value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_phenotypes(path: &Path) -> Result<Vec<PhenotypeRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    if rd.headers()?.iter().ne(PHENOTYPE_HEADER) {
        return Err(Error::format(
            path,
            format!("expected header {}", PHENOTYPE_HEADER.join(",")),
        ));
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::format(path, format!("bad number {s:?}")))
    };
    rd.records()
        .map(|row| {
            let row = row?;
            Ok(PhenotypeRecord {
                sample_id: row[0].to_string(),
                genotype_id: row[1].to_string(),
                row: num(&row[2])?,
                position: num(&row[3])?,
                value: num(&row[4])?,
            })
        })
        .collect()
}

pub fn write_gwas_csv<W: Write>(hits: &[GwasHit], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "snp_id",
        "chromosome",
        "position",
        "maf",
        "p_value",
        "effect",
        "fdr_p",
        "qtn",
    ])?;
    for h in hits {
        w.write_record([
            h.snp_id.clone(),
            h.chromosome.clone(),
            h.position.to_string(),
            h.maf.to_string(),
            format!("{:e}", h.p_value),
            h.effect.to_string(),
            format!("{:e}", h.fdr_p),
            h.is_qtn.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<gwas csv>", e))
}

/// `chromosome,position,neg_log10_p` in input order.
pub fn write_manhattan_csv<W: Write>(hits: &[GwasHit], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["chromosome", "position", "neg_log10_p"])?;
    for h in hits {
        w.write_record([
            h.chromosome.clone(),
            h.position.to_string(),
            (-h.p_value.log10()).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<manhattan csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GenotypeMatrix {
        let snps = vec![
            SnpInfo {
                id: "Potri.017G1".into(),
                chromosome: "17".into(),
                position: 8_592_229,
            },
            SnpInfo {
                id: "s2".into(),
                chromosome: "17".into(),
                position: 8_600_000,
            },
        ];
        let calls = vec![
            vec![Some(0), Some(2)],
            vec![None, Some(1)],
            vec![Some(1), Some(1)],
        ];
        GenotypeMatrix::from_calls(vec!["a".into(), "b".into(), "c".into()], snps, &calls).unwrap()
    }

    fn same(a: &GenotypeMatrix, b: &GenotypeMatrix) {
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.snps, b.snps);
        for j in 0..a.n_snps() {
            for (x, y) in a.snp(j).iter().zip(b.snp(j)) {
                assert!(x == y || (x.is_nan() && y.is_nan()));
            }
        }
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ltgt");
        save_genotypes(&sample(), &path).unwrap();
        same(&sample(), &load_genotypes(&path).unwrap());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_genotypes(&path),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
        bytes.truncate(20);
        bytes[4] = 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_genotypes(&path).is_err());
    }

    #[test]
    fn text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        save_genotypes_text(&sample(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("snp_id,chromosome,position,a,b,c\n"));
        assert!(text.contains("Potri.017G1,17,8592229,0,NA,1\n"));
        same(&sample(), &load_genotypes_text(&path).unwrap());
    }

    #[test]
    fn imputed_dosages_are_not_saved() {
        let snps = vec![SnpInfo {
            id: "x".into(),
            chromosome: "1".into(),
            position: 1,
        }];
        let g = GenotypeMatrix::new(vec!["a".into()], snps, vec![0.5]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(save_genotypes(&g, &dir.path().join("g")).is_err());
    }

    #[test]
    fn phenotype_round_trip() {
        let recs = vec![PhenotypeRecord {
            sample_id: "t1".into(),
            genotype_id: "BESC-1".into(),
            row: 3.0,
            position: 17.0,
            value: 0.125,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        save_phenotypes(&recs, &path).unwrap();
        assert_eq!(load_phenotypes(&path).unwrap(), recs);
        std::fs::write(&path, "sample_id,genotype,row,position,value\n").unwrap();
        assert!(load_phenotypes(&path).is_err());
    }

    #[test]
    fn gwas_row_format() {
        let hit = GwasHit {
            snp: 0,
            snp_id: "Potri.017G1".into(),
            chromosome: "17".into(),
            position: 8_592_229,
            maf: 0.25,
            p_value: 3.24e-4,
            effect: -0.5,
            fdr_p: 0.15,
            is_qtn: true,
        };
        let mut out = Vec::new();
        write_gwas_csv(std::slice::from_ref(&hit), &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "snp_id,chromosome,position,maf,p_value,effect,fdr_p,qtn\n\
             Potri.017G1,17,8592229,0.25,3.24e-4,-0.5,1.5e-1,true\n"
        );
        let mut out = Vec::new();
        write_manhattan_csv(&[hit], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let v: f64 = text
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(2)
            .unwrap()
            .parse()
            .unwrap();
        assert!((v - 3.489454989793388).abs() < 1e-12);
    }
}
