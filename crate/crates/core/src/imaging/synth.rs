//! Randomized leaf scans with exact ground truth: a serrated ovate lamina, a
//! tapered vein tree darker than the lamina, and a straight petiole.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{save_mask_png, ImageRGB};
use crate::error::{Error, Result};
use crate::morphology::Mask;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub size: usize,
    pub dpi: f64,
    pub with_petiole: bool,
    /// Half-range of uniform per-pixel noise, in 8-bit levels.
    pub noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            size: 512,
            dpi: 300.0,
            with_petiole: true,
            noise: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PetioleRecord {
    /// Extent below the lamina, in pixels.
    pub length_px: f64,
    pub width_px: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticLeaf {
    pub image: ImageRGB,
    /// Lamina only; the petiole lies outside it.
    pub leaf_mask: Mask,
    /// Veins inside the lamina plus the petiole.
    pub vein_mask: Mask,
    pub petiole: Option<PetioleRecord>,
    /// Topmost (then leftmost) lamina pixel.
    pub apex: (usize, usize),
}

/// Leaf-aligned frame: `u` runs from base to apex, `v` across the blade.
struct Frame {
    cy: f64,
    cx: f64,
    up: (f64, f64),
    right: (f64, f64),
}

impl Frame {
    fn to_image(&self, u: f64, v: f64) -> (f64, f64) {
        (
            self.cy + u * self.up.0 + v * self.right.0,
            self.cx + u * self.up.1 + v * self.right.1,
        )
    }

    fn to_leaf(&self, r: f64, c: f64) -> (f64, f64) {
        let (dr, dc) = (r - self.cy, c - self.cx);
        (
            dr * self.up.0 + dc * self.up.1,
            dr * self.right.0 + dc * self.right.1,
        )
    }
}

struct Lamina {
    a: f64,
    b: f64,
    teeth: f64,
    amp: f64,
    phase: f64,
}

impl Lamina {
    fn contains(&self, u: f64, v: f64) -> bool {
        let y = u / self.a;
        // Ovate: wider toward the base.
        let b = self.b * (1.0 - 0.18 * y.clamp(-1.0, 1.0));
        let x = v / b;
        let rho = (x * x + y * y).sqrt();
        let phi = y.atan2(x);
        let t = self.teeth * (phi + PI) / (2.0 * PI) + self.phase;
        rho <= 1.0 - self.amp * (t - t.floor())
    }
}

/// A polyline in image coordinates with a width per vertex.
struct Stroke {
    points: Vec<(f64, f64)>,
    widths: Vec<f64>,
}

fn stamp(mask: &mut Mask, stroke: &Stroke) {
    let (h, w) = mask.dims();
    for k in 0..stroke.points.len().saturating_sub(1) {
        let (a, b) = (stroke.points[k], stroke.points[k + 1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let steps = (len / 0.5).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let (pr, pc) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
            let width = stroke.widths[k] + t * (stroke.widths[k + 1] - stroke.widths[k]);
            let rad = (width / 2.0).max(0.71);
            let reach = rad.ceil() as i64;
            let (ir, ic) = (pr.round() as i64, pc.round() as i64);
            for rr in ir - reach..=ir + reach {
                for cc in ic - reach..=ic + reach {
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        continue;
                    }
                    if (rr as f64 - pr).powi(2) + (cc as f64 - pc).powi(2) <= rad * rad {
                        mask.set(rr as usize, cc as usize, true);
                    }
                }
            }
        }
    }
}

/// Walks from `(u, v)` in leaf coordinates with a slowly turning heading until
/// the lamina margin is within `margin` pixels ahead or `max_len` is reached.
#[allow(clippy::too_many_arguments)]
fn grow_branch(
    lamina: &Lamina,
    start: (f64, f64),
    heading: f64,
    turn: f64,
    margin: f64,
    max_len: f64,
    w0: f64,
    w1: f64,
    frame: &Frame,
) -> Option<Stroke> {
    let step = 2.0;
    let mut pts = vec![start];
    let mut dir = heading;
    let (mut u, mut v) = start;
    let mut len = 0.0;
    while len < max_len {
        let (nu, nv) = (u + step * dir.cos(), v + step * dir.sin());
        let (au, av) = (nu + margin * dir.cos(), nv + margin * dir.sin());
        if !lamina.contains(au, av) {
            break;
        }
        u = nu;
        v = nv;
        pts.push((u, v));
        len += step;
        dir += turn;
    }
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() - 1;
    Some(Stroke {
        widths: (0..=n)
            .map(|i| w0 + (w1 - w0) * i as f64 / n as f64)
            .collect(),
        points: pts.into_iter().map(|(u, v)| frame.to_image(u, v)).collect(),
    })
}

pub fn generate_synthetic_leaf<R: Rng>(rng: &mut R, params: &SynthParams) -> Result<SyntheticLeaf> {
    if params.size < 256 {
        return Err(Error::invalid(format!(
            "canvas {} is smaller than 256",
            params.size
        )));
    }
    let s = params.size as f64;
    let tilt = rng.gen_range(-10.0f64..10.0).to_radians();
    let frame = Frame {
        cy: s * rng.gen_range(0.40..0.44),
        cx: s * rng.gen_range(0.46..0.54),
        up: (-tilt.cos(), tilt.sin()),
        right: (tilt.sin(), tilt.cos()),
    };
    let a = s * rng.gen_range(0.26..0.31);
    let lamina = Lamina {
        a,
        b: a * rng.gen_range(0.55..0.75),
        teeth: rng.gen_range(28..=44) as f64,
        amp: rng.gen_range(0.015..0.03),
        phase: rng.gen_range(0.0..1.0),
    };
    let (h, w) = (params.size, params.size);
    let leaf_mask = Mask::from_fn(h, w, |r, c| {
        let (u, v) = frame.to_leaf(r as f64, c as f64);
        lamina.contains(u, v)
    });
    if leaf_mask.count() < 1000 {
        return Err(Error::invalid("synthetic lamina is degenerate"));
    }

    let edge = |dir: f64| {
        let mut u = 0.0;
        while lamina.contains(u + dir, 0.0) {
            u += dir;
        }
        u
    };
    let (u_base, u_top) = (edge(-0.5), edge(0.5));
    let u_end = u_top * 0.93;

    let mut veins = Mask::new(h, w);
    let mut thick = Mask::new(h, w);

    // Midrib with a gentle wobble.
    let wob_amp = rng.gen_range(0.0..2.5);
    let wob_freq = rng.gen_range(0.01..0.03);
    let mid_w0 = rng.gen_range(4.5..6.5);
    let n_mid = ((u_end - u_base) / 2.0).ceil() as usize;
    let mid_uv: Vec<(f64, f64)> = (0..=n_mid)
        .map(|i| {
            let u = u_base + 1.0 + (u_end - u_base - 1.0) * i as f64 / n_mid as f64;
            (u, wob_amp * (wob_freq * u).sin())
        })
        .collect();
    let midrib = Stroke {
        points: mid_uv.iter().map(|&(u, v)| frame.to_image(u, v)).collect(),
        widths: (0..=n_mid)
            .map(|i| mid_w0 + (1.8 - mid_w0) * i as f64 / n_mid as f64)
            .collect(),
    };
    stamp(&mut veins, &midrib);
    stamp(&mut thick, &midrib);

    // Laterals alternate slightly between sides, each with a few tertiaries.
    let per_side = rng.gen_range(5..=8);
    for side in [-1.0f64, 1.0] {
        for i in 0..per_side {
            let t = 0.10 + 0.75 * (i as f64 + 0.5 + rng.gen_range(-0.25..0.25)) / per_side as f64;
            let k = ((t * n_mid as f64) as usize).min(n_mid);
            let start = mid_uv[k];
            let alpha = rng.gen_range(35.0f64..55.0).to_radians();
            let heading = side * (PI / 2.0 - alpha);
            let turn = -side * rng.gen_range(0.002..0.008);
            let w0 = rng.gen_range(2.6..3.4);
            let Some(lateral) = grow_branch(&lamina, start, heading, turn, 6.0, s, w0, 1.4, &frame)
            else {
                continue;
            };
            stamp(&mut veins, &lateral);
            if w0 >= 3.0 {
                stamp(&mut thick, &lateral);
            }
            let n = lateral.points.len();
            let n_tert = rng.gen_range(2..=4);
            for j in 0..n_tert {
                let pos = 0.25 + 0.55 * (j as f64 + rng.gen_range(0.0..1.0)) / n_tert as f64;
                let idx = ((pos * (n - 1) as f64) as usize).min(n - 2);
                let (r0, c0) = lateral.points[idx];
                let (r1, c1) = lateral.points[idx + 1];
                let (u0, v0) = frame.to_leaf(r0, c0);
                let (u1, v1) = frame.to_leaf(r1, c1);
                let base_dir = (v1 - v0).atan2(u1 - u0);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                let dir = base_dir + sign * rng.gen_range(45.0f64..75.0).to_radians();
                let len = rng.gen_range(12.0..30.0);
                let w0 = rng.gen_range(1.4..1.8);
                if let Some(tert) =
                    grow_branch(&lamina, (u0, v0), dir, 0.0, 5.0, len, w0, 1.1, &frame)
                {
                    stamp(&mut veins, &tert);
                }
            }
        }
    }
    let mut vein_mask = veins.and(&leaf_mask)?;
    let thick = thick.and(&leaf_mask)?;

    // Straight vertical petiole from the base, pixel-aligned for an exact width.
    let mut petiole_band = Mask::new(h, w);
    let petiole = if params.with_petiole {
        let width = rng.gen_range(4..=7usize);
        let (br, bc) = frame.to_image(u_base, 0.0);
        let x0 = if width % 2 == 0 {
            bc.floor() + 0.5
        } else {
            bc.round()
        };
        let top = (br.round() as usize).saturating_sub(12);
        let mut bottom = br.round() as usize + rng.gen_range(45..=75);
        bottom = bottom.min(h - 4);
        for r in top..=bottom {
            for c in 0..w {
                if (c as f64 - x0).abs() < width as f64 / 2.0 {
                    petiole_band.set(r, c, true);
                }
            }
        }
        let outside = petiole_band.and_not(&leaf_mask)?;
        let (r0, _, r1, _) = outside
            .bounding_box()
            .ok_or_else(|| Error::invalid("petiole hidden by lamina"))?;
        vein_mask = vein_mask.or(&petiole_band)?;
        Some(PetioleRecord {
            length_px: (r1 - r0 + 1) as f64,
            width_px: width as f64,
        })
    } else {
        None
    };

    // Colors.
    let g = rng.gen_range(105.0..145.0);
    let lamina_rgb = [
        g * rng.gen_range(0.45..0.6),
        g,
        g * rng.gen_range(0.3..0.45),
    ];
    let thick_factor = rng.gen_range(0.55..0.65);
    let thin_factor = rng.gen_range(0.68..0.78);
    let petiole_rgb = [
        lamina_rgb[0] * 0.8,
        lamina_rgb[1] * 0.6,
        lamina_rgb[2] * 0.6,
    ];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.01..0.05),
                rng.gen_range(0.01..0.05),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(1.0..3.0),
            )
        })
        .collect();
    let mut image = ImageRGB::new(h, w, [255, 255, 255]).with_dpi(params.dpi);
    let noise = params.noise;
    for r in 0..h {
        for c in 0..w {
            let mut n = || {
                if noise > 0.0 {
                    rng.gen_range(-noise..=noise)
                } else {
                    0.0
                }
            };
            let rgb = if petiole_band.get(r, c) && !leaf_mask.get(r, c) {
                petiole_rgb.map(|v| v + n())
            } else if leaf_mask.get(r, c) {
                let tex: f64 = waves
                    .iter()
                    .map(|&(fr, fc, ph, amp)| amp * (fr * r as f64 + fc * c as f64 + ph).sin())
                    .sum();
                let factor = if thick.get(r, c) || petiole_band.get(r, c) {
                    thick_factor
                } else if vein_mask.get(r, c) {
                    thin_factor
                } else {
                    1.0
                };
                lamina_rgb.map(|v| (v + tex) * factor + n())
            } else {
                [252.0 + n() * 0.6, 252.0 + n() * 0.6, 250.0 + n() * 0.6]
            };
            image.set(r, c, rgb.map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    let apex = leaf_mask.pixels().next().expect("nonempty lamina");
    Ok(SyntheticLeaf {
        image,
        leaf_mask,
        vein_mask,
        petiole,
        apex,
    })
}

/// Seed of the `index`-th leaf in a fixture set.
pub fn fixture_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64 + 1)
}

/// One manifest row of a fixture set.
#[derive(Clone, Debug, PartialEq)]
pub struct FixtureRecord {
    pub id: String,
    pub seed: u64,
    pub image: PathBuf,
    pub leaf_mask: PathBuf,
    pub vein_mask: PathBuf,
    pub petiole_length_px: Option<f64>,
    pub petiole_width_px: Option<f64>,
    pub apex: (usize, usize),
}

/// Generates `n` leaves into `dir` (images, masks, and `manifest.csv`).
pub fn write_fixtures(
    dir: &Path,
    n: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<Vec<FixtureRecord>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let leaf_seed = fixture_seed(seed, i);
        let leaf = generate_synthetic_leaf(&mut ChaCha8Rng::seed_from_u64(leaf_seed), params)?;
        let id = format!("leaf_{i:03}");
        let rec = FixtureRecord {
            image: PathBuf::from(format!("{id}.png")),
            leaf_mask: PathBuf::from(format!("{id}_leaf.png")),
            vein_mask: PathBuf::from(format!("{id}_vein.png")),
            id,
            seed: leaf_seed,
            petiole_length_px: leaf.petiole.map(|p| p.length_px),
            petiole_width_px: leaf.petiole.map(|p| p.width_px),
            apex: leaf.apex,
        };
        leaf.image.save_png(&dir.join(&rec.image))?;
        save_mask_png(&leaf.leaf_mask, &dir.join(&rec.leaf_mask))?;
        save_mask_png(&leaf.vein_mask, &dir.join(&rec.vein_mask))?;
        records.push(rec);
    }
    let path = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "id",
        "seed",
        "image",
        "leaf_mask",
        "vein_mask",
        "petiole_length_px",
        "petiole_width_px",
        "apex_row",
        "apex_col",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &records {
        w.write_record([
            r.id.clone(),
            r.seed.to_string(),
            r.image.display().to_string(),
            r.leaf_mask.display().to_string(),
            r.vein_mask.display().to_string(),
            opt(r.petiole_length_px),
            opt(r.petiole_width_px),
            r.apex.0.to_string(),
            r.apex.1.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(records)
}
