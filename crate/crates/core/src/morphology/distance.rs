use super::Mask;

/// One-dimensional squared distance transform of a sampled function
/// (lower envelope of parabolas). `f[0]` must be finite.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        let intersect = |p: usize| {
            ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
        };
        let mut s = intersect(v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Exact Euclidean distance from each foreground pixel to the nearest
/// background pixel center; pixels outside the image count as background.
pub fn distance_transform(mask: &Mask) -> Vec<f64> {
    let (h, w) = mask.dims();
    if h == 0 || w == 0 {
        return Vec::new();
    }
    let (ph, pw) = (h + 2, w + 2);
    let mut grid = vec![0.0; ph * pw];
    for (r, c) in mask.pixels() {
        grid[(r + 1) * pw + c + 1] = f64::INFINITY;
    }
    let n = ph.max(pw);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for c in 0..pw {
        for r in 0..ph {
            f[r] = grid[r * pw + c];
        }
        edt_1d(&f[..ph], &mut out[..ph], &mut v, &mut z);
        for r in 0..ph {
            grid[r * pw + c] = out[r];
        }
    }
    for r in 0..ph {
        f[..pw].copy_from_slice(&grid[r * pw..(r + 1) * pw]);
        edt_1d(&f[..pw], &mut out[..pw], &mut v, &mut z);
        grid[r * pw..(r + 1) * pw].copy_from_slice(&out[..pw]);
    }
    let mut result = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            result.push(grid[(r + 1) * pw + c + 1].sqrt());
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(mask: &Mask) -> Vec<f64> {
        let (h, w) = mask.dims();
        let mut out = Vec::new();
        for r in 0..h as i64 {
            for c in 0..w as i64 {
                if !mask.get(r as usize, c as usize) {
                    out.push(0.0);
                    continue;
                }
                let mut best = f64::INFINITY;
                for rr in -1..=h as i64 {
                    for cc in -1..=w as i64 {
                        if !mask.get_signed(rr, cc) {
                            let d = (((rr - r) * (rr - r) + (cc - c) * (cc - c)) as f64).sqrt();
                            best = best.min(d);
                        }
                    }
                }
                out.push(best);
            }
        }
        out
    }

    #[test]
    fn lone_pixel_is_one() {
        let mut m = Mask::new(5, 5);
        m.set(2, 2, true);
        assert_eq!(distance_transform(&m)[12], 1.0);
    }

    #[test]
    fn strip_center() {
        let m = Mask::from_fn(40, 9, |_, c| (2..7).contains(&c));
        let d = distance_transform(&m);
        assert_eq!(d[20 * 9 + 4], 3.0);
    }

    #[test]
    fn empty_is_zero() {
        assert!(distance_transform(&Mask::new(4, 6))
            .iter()
            .all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn matches_brute_force(bits in proptest::collection::vec(proptest::bool::weighted(0.7), 12 * 10)) {
            let m = Mask::from_bits(12, 10, bits).unwrap();
            let fast = distance_transform(&m);
            let slow = brute(&m);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            // 1-Lipschitz between 4-adjacent pixels.
            for r in 0..12 {
                for c in 0..9 {
                    prop_assert!((fast[r * 10 + c] - fast[r * 10 + c + 1]).abs() <= 1.0 + 1e-12);
                }
            }
        }
    }
}
