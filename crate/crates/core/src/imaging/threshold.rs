use super::ImageRGB;
use crate::error::{Error, Result};
use crate::morphology::{largest_component, Connectivity, Mask};

/// Otsu's threshold over a histogram; returns the bin index `t` such that
/// bins `0..=t` form the lower class. `None` when fewer than two bins are used.
pub fn otsu_threshold(hist: &[u64]) -> Option<usize> {
    let total: u64 = hist.iter().sum();
    if hist.iter().filter(|&&h| h > 0).count() < 2 {
        return None;
    }
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &h)| i as f64 * h as f64)
        .sum();
    let (mut w0, mut sum0) = (0u64, 0.0);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (t, &h) in hist.iter().enumerate() {
        w0 += h;
        sum0 += t as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, t);
        }
    }
    Some(best.1)
}

/// Rough leaf segmentation: Otsu on luminance, dark side is foreground, largest
/// 8-connected component kept.
pub fn auto_threshold(image: &ImageRGB) -> Result<Mask> {
    // Histogram of r+g+b, i.e. luminance in thirds of a level, so no rounding.
    let mut hist = vec![0u64; 766];
    let raw = image.raw();
    for px in raw.chunks_exact(3) {
        hist[px[0] as usize + px[1] as usize + px[2] as usize] += 1;
    }
    let t = otsu_threshold(&hist).ok_or(Error::NoForeground)?;
    let mask = Mask::from_bits(
        image.height(),
        image.width(),
        raw.chunks_exact(3)
            .map(|px| px[0] as usize + px[1] as usize + px[2] as usize <= t)
            .collect(),
    )?;
    largest_component(&mask, Connectivity::Eight).ok_or(Error::NoForeground)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_level_image() {
        let mut img = ImageRGB::new(20, 30, [230, 230, 230]);
        for r in 5..12 {
            for c in 4..20 {
                img.set(r, c, [40, 40, 40]);
            }
        }
        let m = auto_threshold(&img).unwrap();
        assert_eq!(m.count(), 7 * 16);
        assert!(m.get(5, 4) && !m.get(4, 4));
    }

    #[test]
    fn blank_scan_has_no_foreground() {
        let img = ImageRGB::new(10, 10, [255, 255, 255]);
        assert!(matches!(auto_threshold(&img), Err(Error::NoForeground)));
    }

    #[test]
    fn keeps_largest_component() {
        let mut img = ImageRGB::new(20, 20, [250, 250, 250]);
        for r in 2..10 {
            for c in 2..10 {
                img.set(r, c, [30, 60, 20]);
            }
        }
        img.set(15, 15, [30, 60, 20]);
        let m = auto_threshold(&img).unwrap();
        assert_eq!(m.count(), 64);
    }

    #[test]
    fn white_border_invariance() {
        let mut img = ImageRGB::new(24, 24, [245, 250, 248]);
        for r in 3..20 {
            for c in 6..18 {
                let v = ((r * 7 + c * 3) % 40) as u8;
                img.set(r, c, [40 + v, 90 + v, 30]);
            }
        }
        let m = auto_threshold(&img).unwrap();
        let padded = auto_threshold(&img.padded(10, [255, 255, 255])).unwrap();
        let unpadded = Mask::from_fn(24, 24, |r, c| padded.get(r + 10, c + 10));
        assert_eq!(unpadded, m);
        assert_eq!(padded.count(), m.count());
    }
}
