use std::f64::consts::PI;

use crate::error::Result;
use crate::imaging::ImageRGB;
use crate::morphology::{
    connected_components, convex_hull, feret_diameters, fit_ellipse_moments, trace_outer_contour,
    Connectivity, Mask,
};

/// Kulpa's correction for the bias of 8-connected chain lengths on digitized
/// curves.
const KULPA: f64 = 0.948;

fn crop_labels(
    labels: &[u32],
    width: usize,
    label: u32,
    bbox: (usize, usize, usize, usize),
) -> Mask {
    let (r0, c0, r1, c1) = bbox;
    // One pixel of padding keeps the tracer off the crop edge.
    Mask::from_fn(r1 - r0 + 3, c1 - c0 + 3, |r, c| {
        if r == 0 || c == 0 || r > r1 - r0 + 1 || c > c1 - c0 + 1 {
            return false;
        }
        labels[(r0 + r - 1) * width + c0 + c - 1] == label
    })
}

fn traced_length(mask: &Mask, connectivity: Connectivity, skip_border: bool) -> Result<f64> {
    let (h, w) = mask.dims();
    let cc = connected_components(mask, connectivity);
    let mut boxes = vec![(usize::MAX, usize::MAX, 0usize, 0usize); cc.count];
    for r in 0..h {
        for c in 0..w {
            let l = cc.labels[r * w + c];
            if l > 0 {
                let b = &mut boxes[l as usize - 1];
                *b = (b.0.min(r), b.1.min(c), b.2.max(r), b.3.max(c));
            }
        }
    }
    let mut total = 0.0;
    for (i, &b) in boxes.iter().enumerate() {
        if skip_border && (b.0 == 0 || b.1 == 0 || b.2 == h - 1 || b.3 == w - 1) {
            continue;
        }
        let contour = trace_outer_contour(&crop_labels(&cc.labels, w, i as u32 + 1, b))?;
        let (even, odd) = contour.step_counts();
        total += KULPA * (even as f64 + std::f64::consts::SQRT_2 * odd as f64);
    }
    Ok(total)
}

/// Boundary length in pixels: corrected chain length of every outer contour
/// plus every enclosed hole.
pub fn boundary_length(mask: &Mask) -> Result<f64> {
    Ok(traced_length(mask, Connectivity::Eight, false)?
        + traced_length(&mask.not(), Connectivity::Four, true)?)
}

/// Channel means over a mask; hue, saturation and brightness use the hexcone
/// model scaled to 0..255 like the RGB channels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorMeans {
    pub red: f64,
    pub green: f64,
    pub blue: f64,
    pub hue: f64,
    pub saturation: f64,
    pub brightness: f64,
}

impl ColorMeans {
    /// Blue, brightness, green, hue, red, saturation.
    pub(crate) fn by_name_order(&self) -> [f64; 6] {
        [
            self.blue,
            self.brightness,
            self.green,
            self.hue,
            self.red,
            self.saturation,
        ]
    }
}

/// Hexcone HSV of an 8-bit color, each component in 0..255.
pub(crate) fn hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(f64::from);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (h / 6.0 * 255.0, s * 255.0, max)
}

pub fn mean_colors(image: &ImageRGB, mask: &Mask) -> ColorMeans {
    let mut sums = [0.0f64; 6];
    let mut n = 0usize;
    for (r, c) in mask.pixels() {
        let px = image.get(r, c);
        let (h, s, v) = hsv(px);
        for (acc, x) in sums
            .iter_mut()
            .zip([px[0] as f64, px[1] as f64, px[2] as f64, h, s, v])
        {
            *acc += x;
        }
        n += 1;
    }
    let m = sums.map(|s| if n > 0 { s / n as f64 } else { 0.0 });
    ColorMeans {
        red: m[0],
        green: m[1],
        blue: m[2],
        hue: m[3],
        saturation: m[4],
        brightness: m[5],
    }
}

/// Shape measurements of a mask in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ShapeTraits {
    pub area: f64,
    pub perimeter: f64,
    pub convex_area: f64,
    pub major: f64,
    pub minor: f64,
    pub max_feret: f64,
    pub min_feret: f64,
}

impl ShapeTraits {
    pub fn measure(mask: &Mask) -> Result<Self> {
        let ellipse = fit_ellipse_moments(mask)?;
        let (max_feret, min_feret) = feret_diameters(mask)?;
        Ok(ShapeTraits {
            area: mask.count() as f64,
            perimeter: boundary_length(mask)?,
            convex_area: convex_hull(mask)?.pixel_area as f64,
            major: ellipse.major,
            minor: ellipse.minor,
            max_feret,
            min_feret,
        })
    }

    pub fn circularity(&self) -> f64 {
        if self.perimeter > 0.0 {
            4.0 * PI * self.area / (self.perimeter * self.perimeter)
        } else {
            1.0
        }
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.major / self.minor
    }

    pub fn roundness(&self) -> f64 {
        4.0 * self.area / (PI * self.major * self.major)
    }

    pub fn solidity(&self) -> f64 {
        self.area / self.convex_area
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv([255, 0, 0]), (0.0, 255.0, 255.0));
        assert_eq!(hsv([0, 255, 0]), (85.0, 255.0, 255.0));
        assert_eq!(hsv([0, 0, 255]), (170.0, 255.0, 255.0));
        assert_eq!(hsv([128, 128, 128]), (0.0, 0.0, 128.0));
        assert_eq!(hsv([0, 0, 0]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn square_perimeter() {
        let m = Mask::from_fn(30, 30, |r, c| (5..25).contains(&r) && (5..25).contains(&c));
        // 76 axis-aligned steps around the pixel centers.
        assert!((boundary_length(&m).unwrap() - KULPA * 76.0).abs() < 1e-9);
    }

    #[test]
    fn hole_adds_to_perimeter() {
        let ring = Mask::from_fn(30, 30, |r, c| {
            (5..25).contains(&r)
                && (5..25).contains(&c)
                && !((12..18).contains(&r) && (12..18).contains(&c))
        });
        let solid = Mask::from_fn(30, 30, |r, c| (5..25).contains(&r) && (5..25).contains(&c));
        let extra = boundary_length(&ring).unwrap() - boundary_length(&solid).unwrap();
        assert!((extra - KULPA * 20.0).abs() < 1e-9, "{extra}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn solidity_and_aspect_bounds(bits in proptest::collection::vec(proptest::bool::weighted(0.7), 12 * 12)) {
            let m = Mask::from_bits(12, 12, bits).unwrap();
            prop_assume!(!m.is_empty());
            let s = ShapeTraits::measure(&m).unwrap();
            prop_assert!(s.solidity() > 0.0 && s.solidity() <= 1.0 + 1e-12);
            prop_assert!(s.aspect_ratio() >= 1.0 - 1e-12);
            prop_assert!(s.perimeter >= 0.0);
        }
    }
}
