use std::collections::VecDeque;
use std::f64::consts::{PI, SQRT_2};

use super::{px_to_units, ShapeTraits, TraitRecord, Unit, NO_VEINS};
use crate::error::Result;
use crate::morphology::{convex_hull, skeletonize, Mask};

/// Vein diameter classes: below 0.25 mm, 0.25 to 0.80 mm, above 0.80 mm. A
/// diameter exactly on a boundary belongs to the lower class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiameterRange {
    Fine,
    Medium,
    Coarse,
}

impl DiameterRange {
    pub fn of(diameter_mm: f64) -> Self {
        if diameter_mm <= 0.25 {
            DiameterRange::Fine
        } else if diameter_mm <= 0.80 {
            DiameterRange::Medium
        } else {
            DiameterRange::Coarse
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Near a blunt vein end the distance transform measures the distance to the
/// tip rather than the vein width, growing by about a pixel per step. Walking
/// in from each endpoint while the radius grows at least half a pixel per step,
/// the pixels passed take the radius where the growth stops.
fn cap_ends(radius: &mut [f64], edges: &[Vec<(usize, f64)>]) {
    let original = radius.to_vec();
    for start in 0..edges.len() {
        if edges[start].len() != 1 {
            continue;
        }
        let mut run = vec![start];
        let (mut prev, mut cur) = (usize::MAX, start);
        loop {
            let next: Vec<usize> = edges[cur]
                .iter()
                .map(|&(j, _)| j)
                .filter(|&j| j != prev)
                .collect();
            if next.len() != 1 || original[next[0]] < original[cur] + 0.5 {
                break;
            }
            prev = cur;
            cur = next[0];
            run.push(cur);
        }
        let r = original[cur];
        for &i in &run {
            radius[i] = radius[i].max(r);
        }
    }
}

/// Skeletal pixels with their radius and their share of skeleton length.
pub(crate) struct SkeletonGraph {
    pub pixels: Vec<(usize, usize)>,
    /// Distance transform minus half a pixel, so a strip `2k + 1` pixels wide
    /// has radius `k + 0.5`, with end caps corrected.
    pub radius: Vec<f64>,
    /// Half the length of every step touching the pixel.
    pub step_length: Vec<f64>,
    edges: Vec<Vec<(usize, f64)>>,
}

impl SkeletonGraph {
    /// Steps join 8-adjacent skeletal pixels; a diagonal step is skipped when
    /// both pixels already share a skeletal 4-neighbor.
    pub fn new(mask: &Mask) -> Self {
        let (h, w) = mask.dims();
        let sk = skeletonize(mask);
        let mut id = vec![usize::MAX; h * w];
        let mut pixels = Vec::new();
        let mut radius = Vec::new();
        for (r, c) in sk.mask.pixels() {
            id[r * w + c] = pixels.len();
            pixels.push((r, c));
            radius.push(sk.radius[r * w + c] - 0.5);
        }
        let on = |r: i64, c: i64| sk.mask.get_signed(r, c);
        let mut edges = vec![Vec::new(); pixels.len()];
        let mut step_length = vec![0.0; pixels.len()];
        for (i, &(r, c)) in pixels.iter().enumerate() {
            let (ri, ci) = (r as i64, c as i64);
            for (dr, dc) in [(0i64, 1i64), (1, -1), (1, 0), (1, 1)] {
                let (nr, nc) = (ri + dr, ci + dc);
                if !on(nr, nc) {
                    continue;
                }
                let len = if dr != 0 && dc != 0 {
                    if on(ri, nc) || on(nr, ci) {
                        continue;
                    }
                    SQRT_2
                } else {
                    1.0
                };
                let j = id[nr as usize * w + nc as usize];
                edges[i].push((j, len));
                edges[j].push((i, len));
                step_length[i] += len / 2.0;
                step_length[j] += len / 2.0;
            }
        }
        cap_ends(&mut radius, &edges);
        SkeletonGraph {
            pixels,
            radius,
            step_length,
            edges,
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    /// Breadth-first hop distances from `start` and the parent of each pixel.
    fn bfs(&self, start: usize) -> (Vec<usize>, Vec<usize>) {
        let mut dist = vec![usize::MAX; self.len()];
        let mut parent = vec![usize::MAX; self.len()];
        let mut queue = VecDeque::from([start]);
        dist[start] = 0;
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &self.edges[i] {
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    parent[j] = i;
                    queue.push_back(j);
                }
            }
        }
        (dist, parent)
    }

    /// The longest shortest path (by hops) from the first skeletal pixel's
    /// component, found by two sweeps.
    fn medial_path(&self) -> Vec<usize> {
        if self.pixels.is_empty() {
            return Vec::new();
        }
        let farthest = |d: &[usize]| {
            (0..d.len())
                .filter(|&i| d[i] != usize::MAX)
                .max_by_key(|&i| (d[i], std::cmp::Reverse(i)))
                .expect("start is reachable")
        };
        let (d0, _) = self.bfs(0);
        let a = farthest(&d0);
        let (d1, parent) = self.bfs(a);
        let mut path = vec![farthest(&d1)];
        while let Some(&p) = path.last().map(|&i| &parent[i]) {
            if p == usize::MAX {
                break;
            }
            path.push(p);
        }
        path
    }

    /// Mean radius over medial-path pixels whose arc position, as a fraction
    /// of the path length, lies in `[lo, hi]`.
    pub fn mean_radius_mid_path(&self, lo: f64, hi: f64) -> f64 {
        let path = self.medial_path();
        if path.is_empty() {
            return 0.0;
        }
        let mut arc = vec![0.0];
        for k in 1..path.len() {
            let (a, b) = (self.pixels[path[k - 1]], self.pixels[path[k]]);
            let step = if a.0 != b.0 && a.1 != b.1 {
                SQRT_2
            } else {
                1.0
            };
            arc.push(arc[k - 1] + step);
        }
        let total = arc[path.len() - 1];
        let picked: Vec<f64> = (0..path.len())
            .filter(|&k| total == 0.0 || (lo..=hi).contains(&(arc[k] / total)))
            .map(|k| self.radius[path[k]])
            .collect();
        if picked.is_empty() {
            self.radius[path[path.len() / 2]]
        } else {
            picked.iter().sum::<f64>() / picked.len() as f64
        }
    }
}

const VEIN_TRAITS: [(&str, Unit); 27] = [
    ("area", Unit::Mm2),
    ("area_dr1", Unit::Mm2),
    ("area_dr2", Unit::Mm2),
    ("area_dr3", Unit::Mm2),
    ("avg_diameter", Unit::Mm),
    ("convex_area", Unit::Mm2),
    ("density", Unit::Unitless),
    ("length_to_area", Unit::Unitless),
    ("max_depth", Unit::Mm),
    ("max_diameter", Unit::Mm),
    ("max_width", Unit::Mm),
    ("network_solidity", Unit::Unitless),
    ("perimeter", Unit::Mm),
    ("surface_area", Unit::Mm2),
    ("surface_area_dr1", Unit::Mm2),
    ("surface_area_dr2", Unit::Mm2),
    ("surface_area_dr3", Unit::Mm2),
    ("third_order_fraction", Unit::Unitless),
    ("total_length", Unit::Mm),
    ("total_length_dr1", Unit::Mm),
    ("total_length_dr2", Unit::Mm),
    ("total_length_dr3", Unit::Mm),
    ("volume", Unit::Mm3),
    ("volume_dr1", Unit::Mm3),
    ("volume_dr2", Unit::Mm3),
    ("volume_dr3", Unit::Mm3),
    ("width_to_depth", Unit::Unitless),
];

/// Vein architecture traits. `veins` should already be restricted to the
/// leaf. Vein pixels take the diameter class of the nearest skeletal pixel
/// (8-connected breadth-first, earliest skeletal pixel on ties).
/// `length_to_area` is skeleton length per leaf pixel, so it does not depend
/// on dpi.
pub fn vein_traits(veins: &Mask, leaf: &Mask, dpi: f64) -> Result<TraitRecord> {
    let scale = px_to_units(dpi)?;
    let mut rec = TraitRecord::new("", dpi);
    if veins.is_empty() {
        for (name, unit) in VEIN_TRAITS {
            rec.push_null(format!("vein_{name}"), unit, NO_VEINS);
        }
        return Ok(rec);
    }
    let (h, w) = veins.dims();
    let graph = SkeletonGraph::new(veins);
    let class: Vec<usize> = graph
        .radius
        .iter()
        .map(|&r| DiameterRange::of(2.0 * r * scale.mm_per_px).index())
        .collect();

    let mut length = [0.0; 3];
    let mut surface = [0.0; 3];
    let mut volume = [0.0; 3];
    let (mut surface_total, mut volume_total) = (0.0, 0.0);
    for i in 0..graph.len() {
        let (l, d) = (graph.step_length[i], 2.0 * graph.radius[i]);
        length[class[i]] += l;
        surface[class[i]] += l * PI * d;
        volume[class[i]] += l * PI * d * d / 4.0;
        surface_total += l * PI * d;
        volume_total += l * PI * d * d / 4.0;
    }
    let mut area = [0.0; 3];
    let mut owner = vec![usize::MAX; h * w];
    let mut queue = VecDeque::new();
    for (i, &(r, c)) in graph.pixels.iter().enumerate() {
        owner[r * w + c] = class[i];
        queue.push_back((r, c));
    }
    while let Some((r, c)) = queue.pop_front() {
        let k = owner[r * w + c];
        area[k] += 1.0;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if veins.get_signed(nr, nc) && owner[nr as usize * w + nc as usize] == usize::MAX {
                    owner[nr as usize * w + nc as usize] = k;
                    queue.push_back((nr as usize, nc as usize));
                }
            }
        }
    }

    let total_length: f64 = graph.step_length.iter().sum();
    let diameters = graph.radius.iter().map(|r| 2.0 * r);
    let avg_diameter = diameters.clone().sum::<f64>() / graph.len().max(1) as f64;
    let max_diameter = diameters.fold(0.0, f64::max);
    let shape = ShapeTraits {
        area: veins.count() as f64,
        perimeter: super::boundary_length(veins)?,
        convex_area: convex_hull(veins)?.pixel_area as f64,
        major: 0.0,
        minor: 0.0,
        max_feret: 0.0,
        min_feret: 0.0,
    };
    let (r0, c0, r1, c1) = veins.bounding_box().expect("nonempty");
    let (depth, width) = ((r1 - r0 + 1) as f64, (c1 - c0 + 1) as f64);
    let values = [
        shape.area,
        area[0],
        area[1],
        area[2],
        avg_diameter,
        shape.convex_area,
        shape.area / leaf.count().max(1) as f64,
        total_length / leaf.count().max(1) as f64,
        depth,
        max_diameter,
        width,
        shape.solidity(),
        shape.perimeter,
        surface_total,
        surface[0],
        surface[1],
        surface[2],
        if total_length > 0.0 {
            length[2] / total_length
        } else {
            0.0
        },
        0.0,
        length[0],
        length[1],
        length[2],
        volume_total,
        volume[0],
        volume[1],
        volume[2],
        width / depth,
    ];
    let mut converted: Vec<f64> = VEIN_TRAITS
        .iter()
        .zip(values)
        .map(|((_, u), v)| scale.convert(v, *u))
        .collect();
    // The total is the sum of its converted parts so the partition is exact.
    converted[18] = converted[19] + converted[20] + converted[21];
    for ((name, unit), v) in VEIN_TRAITS.iter().zip(converted) {
        rec.push(format!("vein_{name}"), *unit, v);
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px_mm() -> f64 {
        px_to_units(300.0).unwrap().mm_per_px
    }

    #[test]
    fn buckets_have_lower_inclusive_bounds() {
        assert_eq!(DiameterRange::of(0.25), DiameterRange::Fine);
        assert_eq!(DiameterRange::of(0.2500001), DiameterRange::Medium);
        assert_eq!(DiameterRange::of(0.8), DiameterRange::Medium);
        assert_eq!(DiameterRange::of(0.81), DiameterRange::Coarse);
    }

    #[test]
    fn density_of_full_leaf_is_one() {
        let leaf = Mask::from_fn(40, 40, |r, c| (5..35).contains(&r) && (5..35).contains(&c));
        let rec = vein_traits(&leaf, &leaf, 300.0).unwrap();
        assert_eq!(rec.value("vein_density"), Some(1.0));
        assert_eq!(rec.len(), 27);
    }

    #[test]
    fn plus_sign_length() {
        let leaf = Mask::from_fn(140, 140, |_, _| true);
        let veins = Mask::from_fn(140, 140, |r, c| {
            let arm = |a: usize, b: usize| (69..72).contains(&a) && (20..120).contains(&b);
            arm(r, c) || arm(c, r)
        });
        let rec = vein_traits(&veins, &leaf, 300.0).unwrap();
        let total = rec.value("vein_total_length").unwrap() / px_mm();
        assert!((total - 200.0).abs() / 200.0 < 0.06, "{total}");
        // A 3 px strip measures 3 px = 0.254 mm, just over the fine-class bound.
        let medium = rec.value("vein_total_length_dr2").unwrap() / px_mm();
        assert!(medium / total > 0.9, "{medium} of {total}");
    }

    #[test]
    fn thin_plus_sign_is_fine() {
        let leaf = Mask::from_fn(140, 140, |_, _| true);
        let veins = Mask::from_fn(140, 140, |r, c| {
            (r == 70 && (20..120).contains(&c)) || (c == 70 && (20..120).contains(&r))
        });
        let rec = vein_traits(&veins, &leaf, 300.0).unwrap();
        let total = rec.value("vein_total_length").unwrap();
        assert_eq!(rec.value("vein_total_length_dr1"), Some(total));
        assert!((total / px_mm() - 198.0).abs() < 2.0);
    }

    #[test]
    fn wide_strip_is_coarse() {
        let leaf = Mask::from_fn(60, 200, |_, _| true);
        let veins = Mask::from_fn(60, 200, |r, c| {
            (24..36).contains(&r) && (20..180).contains(&c)
        });
        let rec = vein_traits(&veins, &leaf, 300.0).unwrap();
        assert_eq!(rec.value("vein_third_order_fraction"), Some(1.0));
        assert_eq!(
            rec.value("vein_total_length_dr3"),
            rec.value("vein_total_length")
        );
    }

    #[test]
    fn lengths_partition_exactly() {
        let leaf = Mask::from_fn(100, 100, |_, _| true);
        let veins = Mask::from_fn(100, 100, |r, c| {
            (48..60).contains(&r) || (c as i64 - r as i64).abs() <= 1 || (30..33).contains(&c)
        });
        let rec = vein_traits(&veins, &leaf, 300.0).unwrap();
        let parts = [
            "vein_total_length_dr1",
            "vein_total_length_dr2",
            "vein_total_length_dr3",
        ]
        .map(|n| rec.value(n).unwrap());
        assert_eq!(
            parts.iter().sum::<f64>(),
            rec.value("vein_total_length").unwrap()
        );
        assert!(parts.iter().all(|&p| p > 0.0), "{parts:?}");
        let areas =
            ["vein_area_dr1", "vein_area_dr2", "vein_area_dr3"].map(|n| rec.value(n).unwrap());
        assert!((areas.iter().sum::<f64>() - rec.value("vein_area").unwrap()).abs() < 1e-12);
    }

    #[test]
    fn empty_veins_are_null() {
        let leaf = Mask::from_fn(10, 10, |_, _| true);
        let rec = vein_traits(&Mask::new(10, 10), &leaf, 300.0).unwrap();
        assert_eq!(rec.len(), 27);
        assert!(rec.entries().iter().all(|(_, v)| v.value.is_none()));
    }
}
