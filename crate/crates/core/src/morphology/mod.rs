//! Binary-image primitives: masks, connected components, contours, fills,
//! distance transform, thinning, and shape fits.

mod components;
mod contour;
mod distance;
mod geometry;
mod skeleton;

pub use components::{connected_components, largest_component, Components, Connectivity};
pub use contour::{bresenham, fill_interior, trace_outer_contour, Contour};
pub use distance::distance_transform;
pub use geometry::{
    convex_hull, feret_diameters, fit_ellipse_moments, min_area_rect, ConvexHull, Ellipse,
    RotatedRect,
};
pub use skeleton::{skeletonize, Skeleton};

use crate::error::{Error, Result};

/// Row-major binary image.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Mask({}x{}, {} set)",
            self.height,
            self.width,
            self.count()
        )
    }
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Mask {
            height,
            width,
            bits,
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::invalid(format!(
                "{} bits for a {height}x{width} mask",
                bits.len()
            )));
        }
        Ok(Mask {
            height,
            width,
            bits,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    /// Out-of-bounds coordinates read as background.
    #[inline]
    pub fn get_signed(&self, row: i64, col: i64) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.bits[row as usize * self.width + col as usize]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground coordinates in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    fn check_dims(&self, other: &Mask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.height, self.width],
                actual: vec![other.height, other.width],
            });
        }
        Ok(())
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.check_dims(other)?;
        Ok(self.zip(other, |a, b| a && b))
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.check_dims(other)?;
        Ok(self.zip(other, |a, b| a || b))
    }

    pub fn and_not(&self, other: &Mask) -> Result<Mask> {
        self.check_dims(other)?;
        Ok(self.zip(other, |a, b| a && !b))
    }

    pub fn not(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    fn zip(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Dilation by a (2r+1)×(2r+1) square.
    pub fn dilate(&self, radius: usize) -> Mask {
        let r = radius as i64;
        let mut rows = Mask::new(self.height, self.width);
        for row in 0..self.height {
            for col in 0..self.width {
                let lo = (col as i64 - r).max(0) as usize;
                let hi = ((col as i64 + r) as usize).min(self.width - 1);
                if (lo..=hi).any(|c| self.get(row, c)) {
                    rows.set(row, col, true);
                }
            }
        }
        Mask::from_fn(self.height, self.width, |row, col| {
            let lo = (row as i64 - r).max(0) as usize;
            let hi = ((row as i64 + r) as usize).min(self.height - 1);
            (lo..=hi).any(|rr| rows.get(rr, col))
        })
    }

    /// Bounding box `(min_row, min_col, max_row, max_col)`, inclusive.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for (r, c) in self.pixels() {
            bb = Some(match bb {
                None => (r, c, r, c),
                Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
            });
        }
        bb
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilate_square() {
        let mut m = Mask::new(7, 7);
        m.set(3, 3, true);
        let d = m.dilate(1);
        assert_eq!(d.count(), 9);
        assert!(d.get(2, 2) && d.get(4, 4) && !d.get(1, 3));
    }

    #[test]
    fn bounding_box_and_pixels() {
        let m = Mask::from_fn(5, 6, |r, c| (1..3).contains(&r) && (2..5).contains(&c));
        assert_eq!(m.bounding_box(), Some((1, 2, 2, 4)));
        assert_eq!(m.pixels().next(), Some((1, 2)));
        assert_eq!(Mask::new(3, 3).bounding_box(), None);
    }
}
