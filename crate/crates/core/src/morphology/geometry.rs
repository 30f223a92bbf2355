//! Shape fits over pixel centers. Extents follow the one-pixel convention: a
//! lone pixel is 1 px long and wide, so caliper widths get +1 px.

use super::Mask;
use crate::error::{Error, Result};

type Pt = (f64, f64);

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull of the foreground pixel centers (`(row, col)` vertices,
/// counter-clockwise in (row, col) axes, no collinear vertices).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexHull {
    pub vertices: Vec<(f64, f64)>,
    /// Shoelace area of the hull polygon.
    pub polygon_area: f64,
    /// Number of pixel centers inside or on the hull.
    pub pixel_area: usize,
}

impl ConvexHull {
    /// Euclidean length of the polygon boundary.
    pub fn perimeter(&self) -> f64 {
        let n = self.vertices.len();
        if n < 2 {
            return 0.0;
        }
        (0..n)
            .map(|i| dist(self.vertices[i], self.vertices[(i + 1) % n]))
            .sum()
    }
}

fn dist(a: Pt, b: Pt) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn require_nonempty(mask: &Mask) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::invalid("shape fit on an empty mask"));
    }
    Ok(())
}

/// Row extremes are the only hull candidates.
fn extreme_points(mask: &Mask) -> Vec<Pt> {
    let mut pts = Vec::new();
    for r in 0..mask.height() {
        let row = &mask.bits()[r * mask.width()..(r + 1) * mask.width()];
        if let Some(first) = row.iter().position(|&b| b) {
            let last = row.iter().rposition(|&b| b).expect("row has a pixel");
            pts.push((r as f64, first as f64));
            if last != first {
                pts.push((r as f64, last as f64));
            }
        }
    }
    pts
}

fn monotone_chain(mut pts: Vec<Pt>) -> Vec<Pt> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Pt> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Pt> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Lattice points inside or on a convex polygon (also valid for a segment or point).
fn lattice_count(v: &[Pt]) -> usize {
    let rmin = v.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let rmax = v.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let eps = 1e-9;
    let mut total = 0usize;
    let mut r = rmin.ceil();
    while r <= rmax + eps {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let n = v.len();
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            if (a.0 - r).abs() < eps {
                lo = lo.min(a.1);
                hi = hi.max(a.1);
            }
            if (a.0 - r) * (b.0 - r) < 0.0 {
                let t = (r - a.0) / (b.0 - a.0);
                let c = a.1 + t * (b.1 - a.1);
                lo = lo.min(c);
                hi = hi.max(c);
            }
        }
        if lo <= hi {
            let count = (hi + eps).floor() - (lo - eps).ceil() + 1.0;
            total += count.max(0.0) as usize;
        }
        r += 1.0;
    }
    total
}

pub fn convex_hull(mask: &Mask) -> Result<ConvexHull> {
    require_nonempty(mask)?;
    let vertices = monotone_chain(extreme_points(mask));
    let n = vertices.len();
    let polygon_area = if n < 3 {
        0.0
    } else {
        (0..n)
            .map(|i| {
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                a.0 * b.1 - b.0 * a.1
            })
            .sum::<f64>()
            .abs()
            / 2.0
    };
    let pixel_area = lattice_count(&vertices);
    Ok(ConvexHull {
        vertices,
        polygon_area,
        pixel_area,
    })
}

/// Ellipse with the same second moments as the mask, scaled to its area.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub major: f64,
    pub minor: f64,
    /// Angle of the major axis from the column axis toward decreasing row
    /// (counter-clockwise on screen), in `(-π/2, π/2]`.
    pub orientation: f64,
}

pub fn fit_ellipse_moments(mask: &Mask) -> Result<Ellipse> {
    require_nonempty(mask)?;
    let n = mask.count() as f64;
    if n == 1.0 {
        return Ok(Ellipse {
            major: 1.0,
            minor: 1.0,
            orientation: 0.0,
        });
    }
    let (mut sr, mut sc) = (0.0, 0.0);
    for (r, c) in mask.pixels() {
        sr += r as f64;
        sc += c as f64;
    }
    let (mr, mc) = (sr / n, sc / n);
    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
    for (r, c) in mask.pixels() {
        let x = c as f64 - mc;
        let y = mr - r as f64;
        xx += x * x;
        yy += y * y;
        xy += x * y;
    }
    // Each pixel is a unit square, contributing 1/12 per axis.
    let (xx, yy, xy) = (xx / n + 1.0 / 12.0, yy / n + 1.0 / 12.0, xy / n);
    let common = ((xx - yy).powi(2) / 4.0 + xy * xy).sqrt();
    let l1 = (xx + yy) / 2.0 + common;
    let l2 = ((xx + yy) / 2.0 - common).max(1e-12);
    let ratio = (l1 / l2).sqrt();
    let major = (4.0 * n / std::f64::consts::PI * ratio).sqrt();
    let minor = major / ratio;
    let mut orientation = 0.5 * (2.0 * xy).atan2(xx - yy);
    if orientation <= -std::f64::consts::FRAC_PI_2 {
        orientation += std::f64::consts::PI;
    }
    Ok(Ellipse {
        major,
        minor,
        orientation,
    })
}

/// Extent of `pts` along unit direction `d`.
fn extent(pts: &[Pt], d: Pt) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        let t = p.0 * d.0 + p.1 * d.1;
        lo = lo.min(t);
        hi = hi.max(t);
    }
    hi - lo
}

/// Unit directions of every hull edge.
fn edge_directions(v: &[Pt]) -> Vec<Pt> {
    let n = v.len();
    (0..n)
        .filter_map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            let len = dist(a, b);
            (len > 0.0).then(|| ((b.0 - a.0) / len, (b.1 - a.1) / len))
        })
        .collect()
}

/// `(max, min)` caliper diameters of the mask, each including the 1-px extent.
pub fn feret_diameters(mask: &Mask) -> Result<(f64, f64)> {
    let hull = convex_hull(mask)?;
    let v = &hull.vertices;
    let n = v.len();
    if n < 2 {
        return Ok((1.0, 1.0));
    }
    let mut max_d: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            max_d = max_d.max(dist(v[i], v[j]));
        }
    }
    // Minimal width is attained perpendicular to some hull edge; walk the
    // antipodal vertex around with the edge (rotating calipers).
    let min_w = if n == 2 {
        0.0
    } else {
        let height = |i: usize, j: usize| {
            cross(v[i], v[(i + 1) % n], v[j]).abs() / dist(v[i], v[(i + 1) % n])
        };
        let mut j = 1;
        let mut best = f64::INFINITY;
        for i in 0..n {
            while height(i, (j + 1) % n) >= height(i, j) && (j + 1) % n != i {
                j = (j + 1) % n;
            }
            best = best.min(height(i, j));
        }
        best
    };
    Ok((max_d + 1.0, min_w + 1.0))
}

/// Minimum-area enclosing rectangle aligned with some hull edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotatedRect {
    pub length: f64,
    pub width: f64,
    /// Direction of the long side from the column axis, in `[0, π)`.
    pub angle: f64,
}

pub fn min_area_rect(mask: &Mask) -> Result<RotatedRect> {
    let hull = convex_hull(mask)?;
    let v = &hull.vertices;
    let mut dirs = edge_directions(v);
    if dirs.is_empty() {
        dirs.push((0.0, 1.0));
    }
    let mut best: Option<(f64, f64, f64, Pt)> = None;
    for d in dirs {
        let normal = (-d.1, d.0);
        let a = extent(v, d) + 1.0;
        let b = extent(v, normal) + 1.0;
        if best.is_none_or(|(area, ..)| a * b < area - 1e-9) {
            best = Some((a * b, a, b, d));
        }
    }
    let (_, a, b, d) = best.expect("at least one direction");
    let long_dir = if a >= b { d } else { (-d.1, d.0) };
    // Direction in (x = col, y = -row) axes.
    let mut angle = (-long_dir.0).atan2(long_dir.1);
    if angle < 0.0 {
        angle += std::f64::consts::PI;
    }
    if angle >= std::f64::consts::PI {
        angle -= std::f64::consts::PI;
    }
    Ok(RotatedRect {
        length: a.max(b),
        width: a.min(b),
        angle,
    })
}
