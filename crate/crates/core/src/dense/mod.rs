//! Encoder-decoder baseline: per-pixel probabilities from overlapping windows,
//! averaged where windows overlap.

use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::grower::{default_grid, select_threshold_map, threshold_map};
use crate::imaging::{augment_tile, extract_tile, AugmentConfig, AugmentTargets, ImageRGB, Tile};
use crate::morphology::Mask;
use crate::nn::{
    dense_network, predict, Dataset, EncoderConfig, History, LossKind, ModelFile, ModelParams,
    Network, Sample, Tensor, TrainConfig, TrainRng,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenseTask {
    Leaf,
    Vein,
}

impl DenseTask {
    pub fn name(self) -> &'static str {
        match self {
            DenseTask::Leaf => "leaf",
            DenseTask::Vein => "vein",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "leaf" => Ok(DenseTask::Leaf),
            "vein" => Ok(DenseTask::Vein),
            other => Err(Error::invalid(format!("unknown dense task `{other}`"))),
        }
    }
}

/// Maps square windows of an image to per-pixel probabilities.
pub trait WindowModel {
    fn window(&self) -> usize;

    /// One row-major `window × window` map per top-left origin.
    fn predict_windows(
        &self,
        image: &ImageRGB,
        origins: &[(usize, usize)],
    ) -> Result<Vec<Vec<f64>>>;
}

/// Emits the ground-truth mask.
pub struct OracleDense<'a> {
    pub truth: &'a Mask,
    pub window: usize,
}

impl WindowModel for OracleDense<'_> {
    fn window(&self) -> usize {
        self.window
    }

    fn predict_windows(
        &self,
        _image: &ImageRGB,
        origins: &[(usize, usize)],
    ) -> Result<Vec<Vec<f64>>> {
        let s = self.window;
        Ok(origins
            .iter()
            .map(|&(r0, c0)| {
                (0..s * s)
                    .map(|k| {
                        if self.truth.get(r0 + k / s, c0 + k % s) {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect())
    }
}

/// Averaged probabilities and how many windows covered each pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub coverage: Vec<u32>,
}

/// Window origins along one axis: every `stride`, plus a final window flush
/// with the far edge.
pub fn window_starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    let last = len - window;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if *starts.last().expect("nonempty") != last {
        starts.push(last);
    }
    starts
}

pub fn predict_tiled(model: &dyn WindowModel, image: &ImageRGB, stride: usize) -> Result<ProbMap> {
    let (h, w) = image.dims();
    let s = model.window();
    if s == 0 || s > h || s > w {
        return Err(Error::invalid(format!(
            "window {s} does not fit a {h}x{w} image"
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let origins: Vec<(usize, usize)> = window_starts(h, s, stride)
        .into_iter()
        .flat_map(|r| window_starts(w, s, stride).into_iter().map(move |c| (r, c)))
        .collect();
    let mut sum = vec![0.0; h * w];
    let mut coverage = vec![0u32; h * w];
    for chunk in origins.chunks(32) {
        let maps = model.predict_windows(image, chunk)?;
        for (&(r0, c0), map) in chunk.iter().zip(&maps) {
            for r in 0..s {
                for c in 0..s {
                    let i = (r0 + r) * w + c0 + c;
                    sum[i] += map[r * s + c];
                    coverage[i] += 1;
                }
            }
        }
    }
    let values = sum
        .iter()
        .zip(&coverage)
        .map(|(&v, &n)| v / n as f64)
        .collect();
    Ok(ProbMap {
        height: h,
        width: w,
        values,
        coverage,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseSegmentation {
    pub mask: Mask,
    pub threshold: f64,
    pub probs: ProbMap,
}

/// Leaf: threshold 0.5. Vein: the grid threshold minimizing components.
pub fn segment_dense(
    model: &dyn WindowModel,
    image: &ImageRGB,
    task: DenseTask,
) -> Result<DenseSegmentation> {
    let probs = predict_tiled(model, image, (model.window() / 2).max(1))?;
    let threshold = match task {
        DenseTask::Leaf => 0.5,
        DenseTask::Vein => {
            select_threshold_map(&probs.values, probs.height, probs.width, &default_grid())?
        }
    };
    Ok(DenseSegmentation {
        mask: threshold_map(&probs.values, probs.height, probs.width, threshold),
        threshold,
        probs,
    })
}

#[derive(Clone, Debug)]
pub struct DenseModel {
    pub network: Network,
    pub params: ModelParams,
    pub task: DenseTask,
}

impl DenseModel {
    pub fn new(network: Network, params: ModelParams, task: DenseTask) -> Result<Self> {
        let i = network.input_shape();
        let o = network.output_shape();
        if i.len() != 3 || i[0] != 3 || i[1] != i[2] || o != [1, i[1], i[2]] {
            return Err(Error::invalid(format!(
                "network maps {i:?} to {o:?}, dense model needs [3, S, S] to [1, S, S]"
            )));
        }
        Ok(DenseModel {
            network,
            params,
            task,
        })
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile::new(self.network.clone(), self.params.clone())
            .with_meta("task", "dense")
            .with_meta("dense_task", self.task.name())
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.meta("task") != Some("dense") {
            return Err(Error::invalid("model file is not a dense model"));
        }
        let task = DenseTask::parse(file.meta("dense_task").unwrap_or(""))?;
        DenseModel::new(file.network, file.params, task)
    }
}

impl WindowModel for DenseModel {
    fn window(&self) -> usize {
        self.network.input_shape()[1]
    }

    fn predict_windows(
        &self,
        image: &ImageRGB,
        origins: &[(usize, usize)],
    ) -> Result<Vec<Vec<f64>>> {
        let s = self.window();
        let mut data = Vec::with_capacity(origins.len() * 3 * s * s);
        for &(r0, c0) in origins {
            data.extend_from_slice(&extract_tile(image, (r0 + s / 2, c0 + s / 2), s, None)?.data);
        }
        let x = Tensor::new(vec![origins.len(), 3, s, s], data)?;
        let out = predict(&self.params, &self.network, &x)?;
        Ok(out
            .data()
            .chunks_exact(s * s)
            .map(<[f64]>::to_vec)
            .collect())
    }
}

/// Random training windows. Each index maps to a fixed window: its center is a
/// uniform pixel of the leaf's sampling region, redrawn until at least
/// `min_fraction` of the window is foreground (up to 100 tries).
pub struct DenseDataset {
    leaves: Vec<(ImageRGB, Mask, Vec<(usize, usize)>)>,
    window: usize,
    len: usize,
    min_fraction: f64,
    seed: u64,
    augment: Option<AugmentConfig>,
}

impl DenseDataset {
    /// Leaves are `(image, target mask, sampling region)`.
    pub fn new(
        leaves: Vec<(ImageRGB, Mask, Mask)>,
        window: usize,
        len: usize,
        min_fraction: f64,
        seed: u64,
        augment: Option<AugmentConfig>,
    ) -> Result<Self> {
        let mut stored = Vec::with_capacity(leaves.len());
        for (image, target, region) in leaves {
            if target.dims() != image.dims() || region.dims() != image.dims() {
                return Err(Error::ShapeMismatch {
                    expected: vec![image.height(), image.width()],
                    actual: vec![target.height(), target.width()],
                });
            }
            if image.height() < window || image.width() < window {
                return Err(Error::invalid(format!("window {window} larger than image")));
            }
            let pixels: Vec<(usize, usize)> = region.pixels().collect();
            if pixels.is_empty() {
                return Err(Error::NoForeground);
            }
            stored.push((image, target, pixels));
        }
        if stored.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(DenseDataset {
            leaves: stored,
            window,
            len,
            min_fraction,
            seed,
            augment,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Top-left origin of window `idx` and its leaf.
    fn origin(&self, idx: usize) -> (usize, (usize, usize)) {
        let mut rng =
            TrainRng::seed_from_u64(self.seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let li = idx % self.leaves.len();
        let (image, target, pixels) = &self.leaves[li];
        let s = self.window;
        let (h, w) = image.dims();
        let mut best = (0.0, (0, 0));
        for _ in 0..100 {
            let (r, c) = pixels[rng.gen_range(0..pixels.len())];
            let r0 = r.saturating_sub(s / 2).min(h - s);
            let c0 = c.saturating_sub(s / 2).min(w - s);
            let fg = (r0..r0 + s)
                .flat_map(|rr| (c0..c0 + s).map(move |cc| (rr, cc)))
                .filter(|&(rr, cc)| target.get(rr, cc))
                .count() as f64
                / (s * s) as f64;
            if fg >= self.min_fraction {
                return (li, (r0, c0));
            }
            if fg > best.0 {
                best = (fg, (r0, c0));
            }
        }
        (li, best.1)
    }
}

impl Dataset for DenseDataset {
    fn len(&self) -> usize {
        self.len
    }

    fn sample(&self, idx: usize, rng: Option<&mut TrainRng>) -> Result<Sample> {
        let (li, (r0, c0)) = self.origin(idx);
        let (image, target, _) = &self.leaves[li];
        let s = self.window;
        let center = (r0 + s / 2, c0 + s / 2);
        // The target rides along as the fourth (nearest-resampled) channel.
        let with_target = |size: usize| -> Result<Tile> {
            let mut t = extract_tile(image, center, size, Some(&[]))?;
            let off_r = center.0 as i64 - (size / 2) as i64;
            let off_c = center.1 as i64 - (size / 2) as i64;
            for r in 0..size {
                for c in 0..size {
                    *t.at_mut(3, r, c) = if target.get_signed(off_r + r as i64, off_c + c as i64) {
                        1.0
                    } else {
                        0.0
                    };
                }
            }
            Ok(t)
        };
        let tile = match (rng, &self.augment) {
            (Some(rng), Some(aug)) => {
                let wide = with_target((s * 3 / 2 + 2) & !1)?;
                augment_tile(&wide, AugmentTargets::None, rng, aug).center_crop(s)?
            }
            _ => with_target(s)?,
        };
        let plane = s * s;
        Ok(Sample {
            input: tile.data[..3 * plane].to_vec(),
            target: tile.data[3 * plane..].to_vec(),
        })
    }
}

pub fn train_dense(
    train: &DenseDataset,
    val: &DenseDataset,
    task: DenseTask,
    widths: &[usize],
    train_cfg: &TrainConfig,
) -> Result<(DenseModel, History)> {
    let enc = EncoderConfig {
        in_channels: 3,
        tile: train.window(),
        widths: widths.to_vec(),
    };
    let network = dense_network(&enc)?;
    let train_cfg = match train_cfg.loss_kind {
        LossKind::WeightedMse => TrainConfig {
            loss_kind: LossKind::Bce,
            ..train_cfg.clone()
        },
        _ => train_cfg.clone(),
    };
    let (params, history) = crate::nn::train_model(&network, train, val, &train_cfg)?;
    Ok((DenseModel::new(network, params, task)?, history))
}

/// Trainable parameters in the first `cfg.layer_count()` layers.
pub fn encoder_param_count(params: &ModelParams, cfg: &EncoderConfig) -> usize {
    params.layers[..cfg.layer_count()]
        .iter()
        .flat_map(|l| &l.params)
        .map(Tensor::len)
        .sum()
}
