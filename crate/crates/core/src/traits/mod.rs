//! Leaf, vein and petiole traits in physical units.
//!
//! Every extractor measures in pixels and converts once at the end, so a
//! record for the same masks at twice the dpi has exactly half the lengths
//! and a quarter of the areas.

mod shape;
mod vein;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::ImageRGB;
use crate::morphology::{largest_component, min_area_rect, Connectivity, Mask};

pub use shape::{boundary_length, mean_colors, ColorMeans};
pub use vein::{vein_traits, DiameterRange};

use shape::ShapeTraits;
use vein::SkeletonGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unit {
    Cm,
    Cm2,
    Mm,
    Mm2,
    Mm3,
    Unitless,
}

impl Unit {
    /// Suffix appended to CSV column names.
    pub fn suffix(self) -> &'static str {
        match self {
            Unit::Cm => "cm",
            Unit::Cm2 => "cm2",
            Unit::Mm => "mm",
            Unit::Mm2 => "mm2",
            Unit::Mm3 => "mm3",
            Unit::Unitless => "",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Cm => "cm",
            Unit::Cm2 => "cm²",
            Unit::Mm => "mm",
            Unit::Mm2 => "mm²",
            Unit::Mm3 => "mm³",
            Unit::Unitless => "-",
        }
    }

    /// Power of length carried by the unit.
    pub fn dimension(self) -> i32 {
        match self {
            Unit::Cm | Unit::Mm => 1,
            Unit::Cm2 | Unit::Mm2 => 2,
            Unit::Mm3 => 3,
            Unit::Unitless => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleFactors {
    pub mm_per_px: f64,
    pub cm_per_px: f64,
    pub mm2_per_px: f64,
    pub cm2_per_px: f64,
    pub mm3_per_px: f64,
}

impl ScaleFactors {
    /// Converts a pixel-unit measurement.
    pub fn convert(&self, px: f64, unit: Unit) -> f64 {
        match unit {
            Unit::Cm => px * self.cm_per_px,
            Unit::Cm2 => px * self.cm2_per_px,
            Unit::Mm => px * self.mm_per_px,
            Unit::Mm2 => px * self.mm2_per_px,
            Unit::Mm3 => px * self.mm3_per_px,
            Unit::Unitless => px,
        }
    }
}

pub fn px_to_units(dpi: f64) -> Result<ScaleFactors> {
    if !(dpi > 0.0) || !dpi.is_finite() {
        return Err(Error::invalid(format!("dpi must be positive, got {dpi}")));
    }
    let mm = 25.4 / dpi;
    let cm = mm / 10.0;
    Ok(ScaleFactors {
        mm_per_px: mm,
        cm_per_px: cm,
        mm2_per_px: mm * mm,
        cm2_per_px: cm * cm,
        mm3_per_px: mm * mm * mm,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraitValue {
    pub value: Option<f64>,
    pub unit: Unit,
    pub null_reason: Option<String>,
}

/// Named traits of one sample, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct TraitRecord {
    pub sample_id: String,
    pub dpi: f64,
    entries: Vec<(String, TraitValue)>,
}

impl TraitRecord {
    pub fn new(sample_id: impl Into<String>, dpi: f64) -> Self {
        TraitRecord {
            sample_id: sample_id.into(),
            dpi,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, unit: Unit, value: f64) {
        let value = TraitValue {
            value: Some(value),
            unit,
            null_reason: None,
        };
        self.entries.push((name.into(), value));
    }

    pub fn push_null(&mut self, name: impl Into<String>, unit: Unit, reason: &str) {
        let value = TraitValue {
            value: None,
            unit,
            null_reason: Some(reason.to_string()),
        };
        self.entries.push((name.into(), value));
    }

    /// Appends every entry of `other`, keeping this record's id and dpi.
    pub fn extend(&mut self, other: TraitRecord) {
        self.entries.extend(other.entries);
    }

    pub fn get(&self, name: &str) -> Option<&TraitValue> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    /// The value of `name`, or `None` if absent or null.
    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(|v| v.value)
    }

    pub fn entries(&self) -> &[(String, TraitValue)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// CSV column names, e.g. `leaf_area_cm2` or `vein_density`.
    pub fn columns(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|(name, v)| match v.unit.suffix() {
                "" => name.clone(),
                s => format!("{name}_{s}"),
            })
            .collect()
    }
}

/// One row per record: `sample_id`, `dpi`, the trait columns, and a
/// `null_reasons` column of `name:reason` pairs separated by `;`. Null values
/// are empty fields. All records must carry the same traits in the same order.
pub fn write_trait_csv<W: Write>(records: &[TraitRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let columns = records.first().map(|r| r.columns()).unwrap_or_default();
    let mut header = vec!["sample_id".to_string(), "dpi".to_string()];
    header.extend(columns.iter().cloned());
    header.push("null_reasons".to_string());
    w.write_record(&header)?;
    for rec in records {
        if rec.columns() != columns {
            return Err(Error::invalid(format!(
                "sample {} has a different trait set",
                rec.sample_id
            )));
        }
        let mut row = vec![rec.sample_id.clone(), rec.dpi.to_string()];
        row.extend(
            rec.entries
                .iter()
                .map(|(_, v)| v.value.map(|x| x.to_string()).unwrap_or_default()),
        );
        let reasons: Vec<String> = rec
            .entries
            .iter()
            .filter_map(|(n, v)| v.null_reason.as_ref().map(|r| format!("{n}:{r}")))
            .collect();
        row.push(reasons.join(";"));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<trait csv>", e))?;
    Ok(())
}

pub fn save_trait_csv(records: &[TraitRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trait_csv(records, std::io::BufWriter::new(file))
}

pub const NO_ABAXIAL_IMAGE: &str = "no abaxial image";
pub const NO_VEINS: &str = "no vein pixels in leaf";
pub const NO_PETIOLE: &str = "no petiole found";

const COLOR_NAMES: [&str; 6] = ["blue", "brightness", "green", "hue", "red", "saturation"];

fn push_colors(rec: &mut TraitRecord, prefix: &str, colors: Option<&ColorMeans>, reason: &str) {
    for (i, name) in COLOR_NAMES.iter().enumerate() {
        let key = format!("{prefix}_{name}");
        match colors {
            Some(c) => rec.push(key, Unit::Unitless, c.by_name_order()[i]),
            None => rec.push_null(key, Unit::Unitless, reason),
        }
    }
}

/// Leaf shape and color traits. `bottom` is the abaxial scan; without it the
/// bottom color traits are null.
pub fn leaf_traits(
    leaf: &Mask,
    top: &ImageRGB,
    bottom: Option<&ImageRGB>,
    dpi: f64,
) -> Result<TraitRecord> {
    let scale = px_to_units(dpi)?;
    if leaf.is_empty() {
        return Err(Error::NoForeground);
    }
    for img in std::iter::once(top).chain(bottom) {
        if img.dims() != leaf.dims() {
            return Err(Error::ShapeMismatch {
                expected: vec![leaf.height(), leaf.width()],
                actual: vec![img.height(), img.width()],
            });
        }
    }
    let s = ShapeTraits::measure(leaf)?;
    let bottom_colors = bottom.map(|b| mean_colors(b, leaf));
    let top_colors = mean_colors(top, leaf);

    let mut rec = TraitRecord::new("", dpi);
    let px = |rec: &mut TraitRecord, name: &str, unit: Unit, v: f64| {
        rec.push(format!("leaf_{name}"), unit, scale.convert(v, unit))
    };
    px(&mut rec, "area", Unit::Cm2, s.area);
    px(&mut rec, "aspect_ratio", Unit::Unitless, s.aspect_ratio());
    push_colors(
        &mut rec,
        "leaf_bottom",
        bottom_colors.as_ref(),
        NO_ABAXIAL_IMAGE,
    );
    px(&mut rec, "circularity", Unit::Unitless, s.circularity());
    px(&mut rec, "convex_area", Unit::Mm2, s.convex_area);
    px(&mut rec, "major_axis", Unit::Cm, s.major);
    px(&mut rec, "minor_axis", Unit::Cm, s.minor);
    px(&mut rec, "max_feret", Unit::Cm, s.max_feret);
    px(&mut rec, "min_feret", Unit::Cm, s.min_feret);
    px(&mut rec, "perimeter", Unit::Cm, s.perimeter);
    px(&mut rec, "roundness", Unit::Unitless, s.roundness());
    px(&mut rec, "solidity", Unit::Unitless, s.solidity());
    push_colors(&mut rec, "leaf_top", Some(&top_colors), "");
    Ok(rec)
}

const PETIOLE_TRAITS: [(&str, Unit); 19] = [
    ("area", Unit::Cm2),
    ("aspect_ratio", Unit::Unitless),
    ("bottom_blue", Unit::Unitless),
    ("bottom_brightness", Unit::Unitless),
    ("bottom_green", Unit::Unitless),
    ("bottom_hue", Unit::Unitless),
    ("bottom_red", Unit::Unitless),
    ("bottom_saturation", Unit::Unitless),
    ("circularity", Unit::Unitless),
    ("major_axis", Unit::Cm),
    ("minor_axis", Unit::Cm),
    ("max_feret", Unit::Cm),
    ("min_feret", Unit::Cm),
    ("perimeter", Unit::Cm),
    ("roundness", Unit::Unitless),
    ("solidity", Unit::Unitless),
    ("volume", Unit::Mm3),
    ("width", Unit::Cm),
    ("length", Unit::Cm),
];

/// The petiole: the largest 8-connected component of vein pixels outside the
/// leaf mask.
pub fn petiole_mask(veins: &Mask, leaf: &Mask) -> Result<Option<Mask>> {
    Ok(largest_component(
        &veins.and_not(leaf)?,
        Connectivity::Eight,
    ))
}

/// Petiole shape, color, length (long side of the minimum-area rectangle) and
/// width (mean skeletal diameter over the middle fifth of the medial path).
pub fn petiole_traits(
    veins: &Mask,
    leaf: &Mask,
    image: &ImageRGB,
    dpi: f64,
) -> Result<TraitRecord> {
    let scale = px_to_units(dpi)?;
    if image.dims() != veins.dims() {
        return Err(Error::ShapeMismatch {
            expected: vec![veins.height(), veins.width()],
            actual: vec![image.height(), image.width()],
        });
    }
    let mut rec = TraitRecord::new("", dpi);
    let Some(petiole) = petiole_mask(veins, leaf)? else {
        for (name, unit) in PETIOLE_TRAITS {
            rec.push_null(format!("petiole_{name}"), unit, NO_PETIOLE);
        }
        return Ok(rec);
    };
    let s = ShapeTraits::measure(&petiole)?;
    let colors = mean_colors(image, &petiole);
    let graph = SkeletonGraph::new(&petiole);
    let volume: f64 = (0..graph.len())
        .map(|i| graph.step_length[i] * std::f64::consts::PI * graph.radius[i].powi(2))
        .sum();
    let width = 2.0 * graph.mean_radius_mid_path(0.4, 0.6);
    let length = min_area_rect(&petiole)?.length;

    let c = colors.by_name_order();
    let values = [
        s.area,
        s.aspect_ratio(),
        c[0],
        c[1],
        c[2],
        c[3],
        c[4],
        c[5],
        s.circularity(),
        s.major,
        s.minor,
        s.max_feret,
        s.min_feret,
        s.perimeter,
        s.roundness(),
        s.solidity(),
        volume,
        width,
        length,
    ];
    for ((name, unit), v) in PETIOLE_TRAITS.iter().zip(values) {
        rec.push(format!("petiole_{name}"), *unit, scale.convert(v, *unit));
    }
    Ok(rec)
}

/// Leaf, vein and petiole traits of one sample. Vein traits use only vein
/// pixels inside the leaf.
pub fn extract_all(
    sample_id: &str,
    image: &ImageRGB,
    bottom: Option<&ImageRGB>,
    leaf: &Mask,
    veins: &Mask,
    dpi: f64,
) -> Result<TraitRecord> {
    let mut rec = leaf_traits(leaf, image, bottom, dpi)?;
    rec.sample_id = sample_id.to_string();
    rec.extend(vein_traits(&veins.and(leaf)?, leaf, dpi)?);
    rec.extend(petiole_traits(veins, leaf, image, dpi)?);
    Ok(rec)
}
