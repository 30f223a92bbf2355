use super::ImageRGB;
use crate::error::{Error, Result};
use crate::morphology::bresenham;

/// Square network input centered on an image pixel. Data is channel-major
/// (`C × S × S`); tile pixel `(S/2, S/2)` is the center.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub size: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub center: (usize, usize),
}

impl Tile {
    #[inline]
    pub fn at(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.size + row) * self.size + col]
    }

    #[inline]
    pub fn at_mut(&mut self, channel: usize, row: usize, col: usize) -> &mut f64 {
        &mut self.data[(channel * self.size + row) * self.size + col]
    }

    pub fn half(&self) -> usize {
        self.size / 2
    }

    /// Central `size × size` crop, keeping the same center pixel.
    pub fn center_crop(&self, size: usize) -> Result<Tile> {
        if size > self.size {
            return Err(Error::invalid(format!(
                "cannot crop {} to {size}",
                self.size
            )));
        }
        let off = self.half() - size / 2;
        let mut data = Vec::with_capacity(self.channels * size * size);
        for ch in 0..self.channels {
            for r in 0..size {
                for c in 0..size {
                    data.push(self.at(ch, r + off, c + off));
                }
            }
        }
        Ok(Tile {
            size,
            channels: self.channels,
            data,
            center: self.center,
        })
    }
}

/// Extracts a tile with white padding outside the image. With `overlay`, a
/// fourth channel marks the Bresenham rasterization of the point path.
pub fn extract_tile(
    image: &ImageRGB,
    center: (usize, usize),
    size: usize,
    overlay: Option<&[(i64, i64)]>,
) -> Result<Tile> {
    let (h, w) = image.dims();
    if center.0 >= h || center.1 >= w {
        return Err(Error::OutOfBounds {
            row: center.0 as i64,
            col: center.1 as i64,
            height: h,
            width: w,
        });
    }
    if size == 0 {
        return Err(Error::invalid("tile size must be positive"));
    }
    let channels = if overlay.is_some() { 4 } else { 3 };
    let plane = size * size;
    let mut data = vec![1.0; channels * plane];
    let r0 = center.0 as i64 - (size / 2) as i64;
    let c0 = center.1 as i64 - (size / 2) as i64;
    for tr in 0..size {
        let r = r0 + tr as i64;
        if r < 0 || r >= h as i64 {
            continue;
        }
        for tc in 0..size {
            let c = c0 + tc as i64;
            if c < 0 || c >= w as i64 {
                continue;
            }
            let rgb = image.get(r as usize, c as usize);
            for ch in 0..3 {
                data[ch * plane + tr * size + tc] = rgb[ch] as f64 / 255.0;
            }
        }
    }
    if let Some(points) = overlay {
        let ov = &mut data[3 * plane..];
        ov.iter_mut().for_each(|v| *v = 0.0);
        let mut mark = |(r, c): (i64, i64)| {
            let (tr, tc) = (r - r0, c - c0);
            if tr >= 0 && tc >= 0 && (tr as usize) < size && (tc as usize) < size {
                ov[tr as usize * size + tc as usize] = 1.0;
            }
        };
        match points {
            [] => {}
            [p] => mark(*p),
            _ => {
                for pair in points.windows(2) {
                    bresenham(pair[0], pair[1]).into_iter().for_each(&mut mark);
                }
            }
        }
    }
    Ok(Tile {
        size,
        channels,
        data,
        center,
    })
}
