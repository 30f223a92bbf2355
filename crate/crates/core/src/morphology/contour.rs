use std::collections::VecDeque;

use super::{connected_components, Connectivity, Mask};
use crate::error::{Error, Result};

/// Clockwise on screen (rows grow downward): E, SE, S, SW, W, NW, N, NE.
const RING: [(i64, i64); 8] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];

fn ring_index(dr: i64, dc: i64) -> usize {
    RING.iter()
        .position(|&d| d == (dr, dc))
        .expect("adjacent offset")
}

/// Ordered `(row, col)` boundary pixels; consecutive points are 8-adjacent.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Contour {
    pub points: Vec<(usize, usize)>,
}

impl Contour {
    pub fn new(points: Vec<(usize, usize)>) -> Self {
        Contour { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Whether every step, including last→first, moves at most one pixel.
    pub fn is_closed(&self) -> bool {
        let n = self.points.len();
        n > 0 && (0..n).all(|i| chebyshev(self.points[i], self.points[(i + 1) % n]) <= 1)
    }

    /// Sum of Euclidean step lengths around the closed loop.
    pub fn euclidean_length(&self) -> f64 {
        let n = self.points.len();
        if n < 2 {
            return 0.0;
        }
        (0..n)
            .map(|i| {
                let (a, b) = (self.points[i], self.points[(i + 1) % n]);
                let dr = a.0 as f64 - b.0 as f64;
                let dc = a.1 as f64 - b.1 as f64;
                (dr * dr + dc * dc).sqrt()
            })
            .sum()
    }

    /// Counts of axis-aligned and diagonal steps around the closed loop.
    pub fn step_counts(&self) -> (usize, usize) {
        let n = self.points.len();
        if n < 2 {
            return (0, 0);
        }
        (0..n).fold((0, 0), |(even, odd), i| {
            let (a, b) = (self.points[i], self.points[(i + 1) % n]);
            match (a.0 != b.0, a.1 != b.1) {
                (true, true) => (even, odd + 1),
                (false, false) => (even, odd),
                _ => (even + 1, odd),
            }
        })
    }
}

fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// Moore-neighbor tracing of the outer boundary, clockwise from the topmost
/// (then leftmost) pixel.
pub fn trace_outer_contour(mask: &Mask) -> Result<Contour> {
    let cc = connected_components(mask, Connectivity::Eight);
    if cc.count != 1 {
        return Err(Error::invalid(format!(
            "outer contour needs exactly one component, found {}",
            cc.count
        )));
    }
    let start = mask.pixels().next().expect("one component");
    let start_i = (start.0 as i64, start.1 as i64);

    // Returns (next pixel, backtrack direction as seen from it).
    let step = |p: (i64, i64), back: usize| -> Option<((i64, i64), usize)> {
        for i in 1..8 {
            let d = (back + i) % 8;
            let q = (p.0 + RING[d].0, p.1 + RING[d].1);
            if mask.get_signed(q.0, q.1) {
                let prev = (back + i - 1) % 8;
                let b = (p.0 + RING[prev].0, p.1 + RING[prev].1);
                return Some((q, ring_index(b.0 - q.0, b.1 - q.1)));
            }
        }
        None
    };

    let west = ring_index(0, -1);
    let Some(first) = step(start_i, west) else {
        return Ok(Contour::new(vec![start]));
    };
    let mut points = vec![start];
    let (mut p, mut back) = first;
    loop {
        let (next, next_back) = step(p, back).expect("connected pixel has a neighbor");
        if p == start_i && next == first.0 {
            break;
        }
        points.push((p.0 as usize, p.1 as usize));
        p = next;
        back = next_back;
    }
    Ok(Contour::new(points))
}

/// Integer points of the segment from `a` to `b`, both endpoints included.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut r, mut c) = a;
    let dr = (b.0 - a.0).abs();
    let dc = -(b.1 - a.1).abs();
    let sr = if a.0 < b.0 { 1 } else { -1 };
    let sc = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dr + dc;
    let mut out = Vec::with_capacity((dr - dc + 1) as usize);
    loop {
        out.push((r, c));
        if (r, c) == b {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dc {
            err += dc;
            r += sr;
        }
        if e2 <= dr {
            err += dr;
            c += sc;
        }
    }
}

/// Fills a closed contour: every pixel not 4-reachable from outside the image
/// without crossing the contour is foreground. For self-intersecting contours
/// this fills every enclosed lobe, which coincides with the even-odd rule.
pub fn fill_interior(contour: &Contour, height: usize, width: usize) -> Result<Mask> {
    if contour.is_empty() {
        return Err(Error::invalid("cannot fill an empty contour"));
    }
    if let Some(&(r, c)) = contour
        .points
        .iter()
        .find(|&&(r, c)| r >= height || c >= width)
    {
        return Err(Error::OutOfBounds {
            row: r as i64,
            col: c as i64,
            height,
            width,
        });
    }
    if !contour.is_closed() {
        return Err(Error::invalid("contour is not closed"));
    }
    // Work on a frame padded by one pixel so the outside is a single region.
    let (ph, pw) = (height + 2, width + 2);
    let mut wall = vec![false; ph * pw];
    for &(r, c) in &contour.points {
        wall[(r + 1) * pw + c + 1] = true;
    }
    let mut outside = vec![false; ph * pw];
    let mut queue = VecDeque::from([0usize]);
    outside[0] = true;
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / pw, i % pw);
        let neighbors = [
            (r > 0).then(|| i - pw),
            (r + 1 < ph).then(|| i + pw),
            (c > 0).then(|| i - 1),
            (c + 1 < pw).then(|| i + 1),
        ];
        for j in neighbors.into_iter().flatten() {
            if !outside[j] && !wall[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        }
    }
    Ok(Mask::from_fn(height, width, |r, c| {
        !outside[(r + 1) * pw + c + 1]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(size: usize, cr: f64, cc: f64, radius: f64) -> Mask {
        Mask::from_fn(size, size, |r, c| {
            let (dr, dc) = (r as f64 - cr, c as f64 - cc);
            dr * dr + dc * dc <= radius * radius
        })
    }

    #[test]
    fn square_contour_has_eight_points() {
        let m = Mask::from_fn(5, 5, |r, c| (1..4).contains(&r) && (1..4).contains(&c));
        let contour = trace_outer_contour(&m).unwrap();
        assert_eq!(
            contour.points,
            vec![
                (1, 1),
                (1, 2),
                (1, 3),
                (2, 3),
                (3, 3),
                (3, 2),
                (3, 1),
                (2, 1)
            ]
        );
        assert!(contour.is_closed());
    }

    #[test]
    fn single_pixel_contour() {
        let mut m = Mask::new(3, 3);
        m.set(1, 1, true);
        assert_eq!(trace_outer_contour(&m).unwrap().points, vec![(1, 1)]);
    }

    #[test]
    fn rejects_zero_or_many_components() {
        assert!(trace_outer_contour(&Mask::new(3, 3)).is_err());
        let m = Mask::from_fn(3, 5, |r, c| r == 1 && (c == 0 || c == 4));
        assert!(trace_outer_contour(&m).is_err());
    }

    #[test]
    fn disk_contour_length() {
        let r = 50.0;
        let contour = trace_outer_contour(&disk(121, 60.0, 60.0, r)).unwrap();
        let len = contour.euclidean_length();
        let circ = 2.0 * std::f64::consts::PI * r;
        assert!(len >= 0.9 * circ && len <= 1.1 * 1.11 * circ, "{len}");
        assert!(contour.is_closed());
    }

    #[test]
    fn contour_contains_every_boundary_pixel() {
        let m = Mask::from_fn(20, 20, |r, c| {
            let d = (r as i64 - 10).abs() + (c as i64 - 9).abs();
            d <= 7 && !(r == 10 && c > 12)
        });
        let contour = trace_outer_contour(&m).unwrap();
        for (r, c) in m.pixels() {
            let boundary = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
                .iter()
                .any(|&(dr, dc)| !m.get_signed(r as i64 + dr, c as i64 + dc));
            if boundary {
                assert!(contour.points.contains(&(r, c)), "missing {r},{c}");
            }
        }
    }

    #[test]
    fn bresenham_endpoints_and_length() {
        let line = bresenham((0, 0), (0, 9));
        assert_eq!(line.len(), 10);
        let diag = bresenham((5, 5), (2, 8));
        assert_eq!(diag, vec![(5, 5), (4, 6), (3, 7), (2, 8)]);
        assert_eq!(bresenham((3, 3), (3, 3)), vec![(3, 3)]);
    }

    #[test]
    fn fill_square_and_round_trip() {
        let s = 6;
        let m = Mask::from_fn(10, 10, |r, c| {
            (2..2 + s).contains(&r) && (3..3 + s).contains(&c)
        });
        let contour = trace_outer_contour(&m).unwrap();
        let filled = fill_interior(&contour, 10, 10).unwrap();
        assert_eq!(filled.count(), s * s);
        assert_eq!(filled, m);

        let d = disk(64, 30.0, 31.0, 20.5);
        assert_eq!(
            fill_interior(&trace_outer_contour(&d).unwrap(), 64, 64).unwrap(),
            d
        );
    }

    #[test]
    fn figure_eight_fills_both_lobes() {
        // Two diamonds touching at (5, 5).
        let mut pts = Vec::new();
        let path = [
            (5, 5),
            (2, 8),
            (5, 11),
            (8, 8),
            (5, 5),
            (8, 2),
            (5, 1),
            (2, 2),
            (5, 5),
        ];
        for w in path.windows(2) {
            let seg = bresenham(w[0], w[1]);
            pts.extend(
                seg[..seg.len() - 1]
                    .iter()
                    .map(|&(r, c)| (r as usize, c as usize)),
            );
        }
        let filled = fill_interior(&Contour::new(pts), 12, 13).unwrap();
        assert!(filled.get(5, 8) && filled.get(5, 2));
        assert!(!filled.get(1, 5));
        assert_eq!(connected_components(&filled, Connectivity::Eight).count, 1);
        assert_eq!(
            connected_components(&filled.not(), Connectivity::Four).count,
            1
        );
    }

    #[test]
    fn fill_rejects_open_contour() {
        let c = Contour::new(vec![(1, 1), (1, 2), (1, 3), (1, 6)]);
        assert!(fill_interior(&c, 8, 8).is_err());
    }
}
