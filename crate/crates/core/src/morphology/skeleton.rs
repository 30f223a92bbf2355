use super::{distance_transform, Mask};

/// One-pixel-wide medial pixels with the distance-transform value at each.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub mask: Mask,
    /// Distance to the nearest background pixel, sampled at skeletal pixels
    /// (zero elsewhere).
    pub radius: Vec<f64>,
}

/// Neighbors P2..P9 clockwise from north.
fn neighbors(m: &Mask, r: usize, c: usize) -> [bool; 8] {
    let (r, c) = (r as i64, c as i64);
    [
        m.get_signed(r - 1, c),
        m.get_signed(r - 1, c + 1),
        m.get_signed(r, c + 1),
        m.get_signed(r + 1, c + 1),
        m.get_signed(r + 1, c),
        m.get_signed(r + 1, c - 1),
        m.get_signed(r, c - 1),
        m.get_signed(r - 1, c - 1),
    ]
}

fn transitions(p: &[bool; 8]) -> usize {
    (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count()
}

/// Yokoi 8-connectivity number; 1 means removing the pixel keeps topology.
fn yokoi8(p: &[bool; 8]) -> i32 {
    let x = |i: usize| i32::from(!p[i % 8]);
    [0, 2, 4, 6]
        .iter()
        .map(|&k| x(k) - x(k) * x(k + 1) * x(k + 2))
        .sum()
}

fn deletable(p: &[bool; 8]) -> bool {
    let b = p.iter().filter(|&&v| v).count();
    let border = !p[0] || !p[2] || !p[4] || !p[6];
    (2..=6).contains(&b) && border && yokoi8(p) == 1
}

/// Zhang–Suen thinning. Each subiteration marks candidates in parallel, then
/// deletes them one at a time only while they remain simple, so endpoints and
/// 8-connectivity survive even on two-pixel-thick structures.
pub fn skeletonize(mask: &Mask) -> Skeleton {
    let (h, w) = mask.dims();
    let mut m = mask.clone();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut candidates = Vec::new();
            for (r, c) in m.pixels() {
                let p = neighbors(&m, r, c);
                let b = p.iter().filter(|&&v| v).count();
                if !(2..=6).contains(&b) || transitions(&p) != 1 {
                    continue;
                }
                let (n, e, s, wst) = (p[0], p[2], p[4], p[6]);
                let ok = if pass == 0 {
                    !(n && e && s) && !(e && s && wst)
                } else {
                    !(n && e && wst) && !(n && s && wst)
                };
                if ok {
                    candidates.push((r, c));
                }
            }
            for (r, c) in candidates {
                if deletable(&neighbors(&m, r, c)) {
                    m.set(r, c, false);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let dt = distance_transform(mask);
    let radius = (0..h * w)
        .map(|i| if m.bits()[i] { dt[i] } else { 0.0 })
        .collect();
    Skeleton { mask: m, radius }
}
