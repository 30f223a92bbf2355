//! RGB scans, tiles, augmentation, rough thresholding, and the synthetic leaf
//! generator.

mod augment;
mod synth;
mod threshold;
mod tile;

use std::path::Path;

pub use augment::{augment_tile, AugmentConfig, AugmentTargets};
pub use synth::{
    fixture_seed, generate_synthetic_leaf, write_fixtures, FixtureRecord, PetioleRecord,
    SynthParams, SyntheticLeaf,
};
pub use threshold::{auto_threshold, otsu_threshold};
pub use tile::{extract_tile, Tile};

use crate::error::{Error, Result};
use crate::morphology::Mask;

pub const DEFAULT_DPI: f64 = 300.0;

/// 8-bit RGB raster, row-major, channels interleaved.
#[derive(Clone, PartialEq)]
pub struct ImageRGB {
    height: usize,
    width: usize,
    data: Vec<u8>,
    pub dpi: f64,
}

impl std::fmt::Debug for ImageRGB {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "ImageRGB({}x{} @ {} dpi)",
            self.height, self.width, self.dpi
        )
    }
}

impl ImageRGB {
    pub fn new(height: usize, width: usize, fill: [u8; 3]) -> Self {
        let data = fill
            .iter()
            .copied()
            .cycle()
            .take(height * width * 3)
            .collect();
        ImageRGB {
            height,
            width,
            data,
            dpi: DEFAULT_DPI,
        }
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "{} bytes for a {height}x{width} RGB image",
                data.len()
            )));
        }
        Ok(ImageRGB {
            height,
            width,
            data,
            dpi: DEFAULT_DPI,
        })
    }

    pub fn with_dpi(mut self, dpi: f64) -> Self {
        self.dpi = dpi;
        self
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

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Mean of the three channels.
    #[inline]
    pub fn luminance(&self, row: usize, col: usize) -> f64 {
        let [r, g, b] = self.get(row, col);
        (r as f64 + g as f64 + b as f64) / 3.0
    }

    /// Copy with a border of `pad` pixels in `fill` on every side.
    pub fn padded(&self, pad: usize, fill: [u8; 3]) -> ImageRGB {
        let mut out =
            ImageRGB::new(self.height + 2 * pad, self.width + 2 * pad, fill).with_dpi(self.dpi);
        for r in 0..self.height {
            for c in 0..self.width {
                out.set(r + pad, c + pad, self.get(r, c));
            }
        }
        out
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::from(std::io::ErrorKind::NotFound),
            ));
        }
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        ImageRGB::from_raw(h as usize, w as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf =
            image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer matches dims");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Writes a mask as an 8-bit grayscale PNG with values {0, 255}.
pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    let data = mask
        .bits()
        .iter()
        .map(|&b| if b { 255u8 } else { 0 })
        .collect();
    let buf = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data)
        .expect("buffer matches dims");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Reads a grayscale (or color) PNG; any nonzero luminance is foreground.
pub fn load_mask_png(path: &Path) -> Result<Mask> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::from(std::io::ErrorKind::NotFound),
        ));
    }
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Mask::from_bits(
        h as usize,
        w as usize,
        img.into_raw().into_iter().map(|v| v >= 128).collect(),
    )
}

/// Writes values in `[0, 1]` as a 16-bit grayscale PNG.
pub fn save_prob_png(values: &[f64], height: usize, width: usize, path: &Path) -> Result<()> {
    let data: Vec<u16> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        width as u32,
        height as u32,
        data,
    )
    .ok_or_else(|| Error::invalid("probability map does not match dims"))?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
