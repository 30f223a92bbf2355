use rand::Rng;

use super::Tile;

/// Training-time perturbations. Each geometric flag or nonzero range enables
/// that transform; the all-default config is the identity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentConfig {
    /// Rotation drawn uniformly from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    pub hflip: bool,
    pub vflip: bool,
    /// Integer center shift drawn per axis from `[-jitter_px, jitter_px]`.
    pub jitter_px: usize,
    /// Hue shift as a fraction of the full circle.
    pub hue_delta: f64,
    /// Relative saturation change.
    pub saturation_delta: f64,
    /// Additive brightness change on `[0, 1]` values.
    pub brightness_delta: f64,
    /// Relative contrast change about the tile mean.
    pub contrast_delta: f64,
    /// Gaussian blur σ drawn from this range when the upper bound is positive.
    pub blur_sigma: (f64, f64),
}

impl AugmentConfig {
    pub fn tracer_default() -> Self {
        AugmentConfig {
            rotation_deg: 180.0,
            hflip: true,
            vflip: true,
            jitter_px: 4,
            hue_delta: 0.03,
            saturation_delta: 0.15,
            brightness_delta: 0.08,
            contrast_delta: 0.15,
            blur_sigma: (0.0, 0.0),
        }
    }

    pub fn grower_default() -> Self {
        AugmentConfig {
            rotation_deg: 180.0,
            hflip: true,
            vflip: true,
            jitter_px: 0,
            hue_delta: 0.03,
            saturation_delta: 0.15,
            brightness_delta: 0.08,
            contrast_delta: 0.15,
            blur_sigma: (0.0, 0.6),
        }
    }

    fn has_color(&self) -> bool {
        self.hue_delta > 0.0
            || self.saturation_delta > 0.0
            || self.brightness_delta > 0.0
            || self.contrast_delta > 0.0
    }
}

/// Geometry-carrying targets transformed alongside the tile.
#[derive(Debug)]
pub enum AugmentTargets<'a> {
    None,
    /// `(row, col)` offsets from the tile center.
    Offsets(&'a mut [(f64, f64)]),
    /// Row-major 3×3 neighborhood labels around the center. Rotations snap to
    /// quarter turns and jitter is skipped so labels stay on the pixel grid.
    Labels(&'a mut [f64; 9]),
}

/// 2×2 map on `(row, col)` offsets.
#[derive(Clone, Copy, Debug)]
struct Linear([[f64; 2]; 2]);

impl Linear {
    fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let m = self.0;
        (m[0][0] * p.0 + m[0][1] * p.1, m[1][0] * p.0 + m[1][1] * p.1)
    }

    fn then(&self, next: &Linear) -> Linear {
        let (a, b) = (next.0, self.0);
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Linear(out)
    }

    /// Inverse of an orthogonal map is its transpose.
    fn transpose(&self) -> Linear {
        let m = self.0;
        Linear([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }
}

/// Counter-clockwise rotation on screen (rows grow downward).
fn rotation(theta: f64) -> Linear {
    let (s, c) = theta.sin_cos();
    Linear([[c, -s], [s, c]])
}

pub fn augment_tile<R: Rng>(
    tile: &Tile,
    targets: AugmentTargets<'_>,
    rng: &mut R,
    config: &AugmentConfig,
) -> Tile {
    let labels = matches!(targets, AugmentTargets::Labels(_));
    let mut theta = if config.rotation_deg > 0.0 {
        rng.gen_range(-config.rotation_deg..=config.rotation_deg)
            .to_radians()
    } else {
        0.0
    };
    if labels {
        theta = (theta / std::f64::consts::FRAC_PI_2).round() * std::f64::consts::FRAC_PI_2;
    }
    let hflip = config.hflip && rng.gen_bool(0.5);
    let vflip = config.vflip && rng.gen_bool(0.5);
    let j = config.jitter_px as i64;
    let jitter = if j > 0 && !labels {
        (rng.gen_range(-j..=j) as f64, rng.gen_range(-j..=j) as f64)
    } else {
        (0.0, 0.0)
    };

    let mut m = Linear([[1.0, 0.0], [0.0, 1.0]]);
    if hflip {
        m = m.then(&Linear([[1.0, 0.0], [0.0, -1.0]]));
    }
    if vflip {
        m = m.then(&Linear([[-1.0, 0.0], [0.0, 1.0]]));
    }
    if theta != 0.0 {
        m = m.then(&rotation(theta));
    }
    // Snap quarter-turn products to exact integers.
    if labels || theta == 0.0 {
        for row in m.0.iter_mut() {
            for v in row.iter_mut() {
                *v = v.round();
            }
        }
    }
    let identity_geom = theta == 0.0 && !hflip && !vflip && jitter == (0.0, 0.0);

    let mut out = if identity_geom {
        tile.clone()
    } else {
        resample(tile, &m, jitter)
    };

    match targets {
        AugmentTargets::None => {}
        AugmentTargets::Offsets(points) => {
            if !identity_geom {
                for p in points.iter_mut() {
                    *p = m.apply((p.0 - jitter.0, p.1 - jitter.1));
                }
            }
        }
        AugmentTargets::Labels(grid) => {
            if !identity_geom {
                let inv = m.transpose();
                let src = *grid;
                for r in 0..3 {
                    for c in 0..3 {
                        let (sr, sc) = inv.apply((r as f64 - 1.0, c as f64 - 1.0));
                        let (sr, sc) = ((sr.round() + 1.0) as usize, (sc.round() + 1.0) as usize);
                        grid[r * 3 + c] = src[sr * 3 + sc];
                    }
                }
            }
        }
    }

    if config.has_color() {
        color_jitter(&mut out, rng, config);
    }
    if config.blur_sigma.1 > 0.0 {
        let sigma = rng.gen_range(config.blur_sigma.0..=config.blur_sigma.1);
        if sigma > 0.0 {
            gaussian_blur_rgb(&mut out, sigma);
        }
    }
    out
}

/// Inverse-maps every output pixel; RGB bilinear (white outside), overlay nearest.
fn resample(tile: &Tile, m: &Linear, jitter: (f64, f64)) -> Tile {
    let s = tile.size;
    let half = tile.half() as f64;
    let inv = m.transpose();
    let mut out = tile.clone();
    let rgb_at = |ch: usize, r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= s as i64 || c >= s as i64 {
            1.0
        } else {
            tile.at(ch, r as usize, c as usize)
        }
    };
    for r in 0..s {
        for c in 0..s {
            let (dr, dc) = inv.apply((r as f64 - half, c as f64 - half));
            let (sr, sc) = (dr + jitter.0 + half, dc + jitter.1 + half);
            let (r0, c0) = (sr.floor(), sc.floor());
            let (fr, fc) = (sr - r0, sc - c0);
            let (r0, c0) = (r0 as i64, c0 as i64);
            for ch in 0..3.min(tile.channels) {
                let v = if fr.abs() < 1e-9 && fc.abs() < 1e-9 {
                    rgb_at(ch, r0, c0)
                } else {
                    (1.0 - fr) * ((1.0 - fc) * rgb_at(ch, r0, c0) + fc * rgb_at(ch, r0, c0 + 1))
                        + fr * ((1.0 - fc) * rgb_at(ch, r0 + 1, c0)
                            + fc * rgb_at(ch, r0 + 1, c0 + 1))
                };
                *out.at_mut(ch, r, c) = v;
            }
            for ch in 3..tile.channels {
                let (nr, nc) = (sr.round() as i64, sc.round() as i64);
                let v = if nr < 0 || nc < 0 || nr >= s as i64 || nc >= s as i64 {
                    0.0
                } else {
                    tile.at(ch, nr as usize, nc as usize)
                };
                *out.at_mut(ch, r, c) = v;
            }
        }
    }
    out
}

/// Hexcone RGB→HSV on `[0, 1]` values; hue in `[0, 1)`.
pub(crate) fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, v)
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

fn color_jitter<R: Rng>(tile: &mut Tile, rng: &mut R, config: &AugmentConfig) {
    let sym = |rng: &mut R, d: f64| if d > 0.0 { rng.gen_range(-d..=d) } else { 0.0 };
    let hue = sym(rng, config.hue_delta);
    let sat = 1.0 + sym(rng, config.saturation_delta);
    let bright = sym(rng, config.brightness_delta);
    let contrast = 1.0 + sym(rng, config.contrast_delta);
    let plane = tile.size * tile.size;
    for i in 0..plane {
        let (r, g, b) = (tile.data[i], tile.data[plane + i], tile.data[2 * plane + i]);
        let (h, s, v) = rgb_to_hsv(r, g, b);
        let (r, g, b) = hsv_to_rgb(h + hue, (s * sat).clamp(0.0, 1.0), v);
        tile.data[i] = r;
        tile.data[plane + i] = g;
        tile.data[2 * plane + i] = b;
    }
    let mean = tile.data[..3 * plane].iter().sum::<f64>() / (3 * plane) as f64;
    for v in tile.data[..3 * plane].iter_mut() {
        *v = ((*v - mean) * contrast + mean + bright).clamp(0.0, 1.0);
    }
}

fn gaussian_blur_rgb(tile: &mut Tile, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let s = tile.size as i64;
    let clamp = |v: i64| v.clamp(0, s - 1) as usize;
    for ch in 0..3 {
        let src: Vec<f64> = (0..tile.size * tile.size)
            .map(|i| tile.data[ch * tile.size * tile.size + i])
            .collect();
        let mut tmp = vec![0.0; src.len()];
        for r in 0..s {
            for c in 0..s {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * src[r as usize * tile.size + clamp(c + k as i64 - radius)];
                }
                tmp[r as usize * tile.size + c as usize] = acc / norm;
            }
        }
        for r in 0..s {
            for c in 0..s {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * tmp[clamp(r + k as i64 - radius) * tile.size + c as usize];
                }
                *tile.at_mut(ch, r as usize, c as usize) = acc / norm;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tile() -> Tile {
        let size = 9;
        let mut data = Vec::new();
        for ch in 0..4 {
            for r in 0..size {
                for c in 0..size {
                    data.push(if ch == 3 {
                        f64::from(r == c)
                    } else {
                        (ch * 100 + r * 10 + c) as f64 / 400.0
                    });
                }
            }
        }
        Tile {
            size,
            channels: 4,
            data,
            center: (20, 20),
        }
    }

    #[test]
    fn identity_config_changes_nothing() {
        let t = tile();
        let mut pts = vec![(1.0, 2.0), (-3.0, 0.5)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment_tile(
            &t,
            AugmentTargets::Offsets(&mut pts),
            &mut rng,
            &AugmentConfig::default(),
        );
        assert_eq!(out, t);
        assert_eq!(pts, vec![(1.0, 2.0), (-3.0, 0.5)]);
    }

    fn hflip_only() -> AugmentConfig {
        AugmentConfig {
            hflip: true,
            ..Default::default()
        }
    }

    #[test]
    fn horizontal_flip_mirrors_columns_and_offsets() {
        let t = tile();
        // Find a seed whose first coin flip fires.
        let mut seed = 0;
        let (out, pts) = loop {
            let mut pts = vec![(0.0, 3.0), (-2.0, -1.0), (4.0, 0.0)];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = augment_tile(
                &t,
                AugmentTargets::Offsets(&mut pts),
                &mut rng,
                &hflip_only(),
            );
            if out != t {
                break (out, pts);
            }
            seed += 1;
        };
        assert_eq!(pts, vec![(0.0, -3.0), (-2.0, 1.0), (4.0, 0.0)]);
        for r in 0..9 {
            for c in 1..9 {
                assert_eq!(out.at(0, r, c), t.at(0, r, 8 - c));
            }
        }
    }

    #[test]
    fn quarter_turn_permutes_labels() {
        let cfg = AugmentConfig {
            rotation_deg: 90.0,
            ..Default::default()
        };
        let t = tile();
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..40 {
            let mut grid = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            augment_tile(&t, AugmentTargets::Labels(&mut grid), &mut rng, &cfg);
            seen.insert(grid.map(|v| v as u8));
        }
        // Counter-clockwise quarter turn: the right column moves to the top row.
        let ccw = [2u8, 5, 8, 1, 4, 7, 0, 3, 6];
        let cw = [6u8, 3, 0, 7, 4, 1, 8, 5, 2];
        let id = [0u8, 1, 2, 3, 4, 5, 6, 7, 8];
        assert!(seen.contains(&ccw) && seen.contains(&cw) && seen.contains(&id));
        assert!(seen.iter().all(|g| *g == ccw || *g == cw || *g == id));
    }

    #[test]
    fn color_never_touches_overlay() {
        let cfg = AugmentConfig {
            hue_delta: 0.2,
            saturation_delta: 0.5,
            brightness_delta: 0.3,
            contrast_delta: 0.5,
            blur_sigma: (0.5, 1.0),
            ..Default::default()
        };
        let t = tile();
        let mut grid = [1.0; 9];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = augment_tile(&t, AugmentTargets::Labels(&mut grid), &mut rng, &cfg);
        assert_eq!(&out.data[3 * 81..], &t.data[3 * 81..]);
        assert_eq!(grid, [1.0; 9]);
        assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[
            (0.2, 0.5, 0.1),
            (1.0, 0.0, 0.0),
            (0.3, 0.3, 0.3),
            (0.1, 0.2, 0.9),
        ] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rotation_preserves_offset_norms(deg in -180.0f64..180.0, seed in 0u64..1000) {
            let cfg = AugmentConfig { rotation_deg: deg.abs().max(1e-3), hflip: true, vflip: true, ..Default::default() };
            let mut pts: Vec<(f64, f64)> = vec![(3.0, 4.0), (-7.5, 2.0), (0.0, -11.0)];
            let before: Vec<f64> = pts.iter().map(|p| (p.0 * p.0 + p.1 * p.1).sqrt()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            augment_tile(&tile(), AugmentTargets::Offsets(&mut pts), &mut rng, &cfg);
            for (p, n) in pts.iter().zip(before) {
                prop_assert!(((p.0 * p.0 + p.1 * p.1).sqrt() - n).abs() < 1e-9);
            }
        }

        #[test]
        fn color_only_keeps_coordinates(seed in 0u64..1000) {
            let cfg = AugmentConfig { hue_delta: 0.1, brightness_delta: 0.2, blur_sigma: (0.3, 1.0), ..Default::default() };
            let mut pts = vec![(3.0, 4.0), (-7.5, 2.0)];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            augment_tile(&tile(), AugmentTargets::Offsets(&mut pts), &mut rng, &cfg);
            prop_assert_eq!(pts, vec![(3.0, 4.0), (-7.5, 2.0)]);
        }
    }
}
