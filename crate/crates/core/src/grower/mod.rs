//! Seeded vein region growing: classify the 3×3 neighborhood of every frontier
//! pixel, average the vein probabilities each pixel receives, and pick the
//! threshold that leaves the fewest connected components.

use std::collections::VecDeque;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::imaging::{augment_tile, extract_tile, AugmentConfig, AugmentTargets, ImageRGB, Tile};
use crate::morphology::{connected_components, Connectivity, Mask};
use crate::nn::{
    grower_network, predict, Dataset, EncoderConfig, History, LossKind, ModelFile, ModelParams,
    Network, Sample, Tensor, TrainConfig, TrainRng,
};

/// Row-major 3×3 offsets, center at index 4.
pub const NEIGHBORHOOD: [(i64, i64); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Default threshold sweep, 0.05 to 0.95 in steps of 0.05.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrowConfig {
    pub n_seeds: usize,
    pub seed: u64,
    pub grid: Vec<f64>,
    /// Vein probability above which a neighbor joins the next frontier.
    pub cutoff: f64,
    /// Frontier pixels classified per model call.
    pub batch: usize,
}

impl Default for GrowConfig {
    fn default() -> Self {
        GrowConfig {
            n_seeds: 10_000,
            seed: 0,
            grid: default_grid(),
            cutoff: 0.5,
            batch: 256,
        }
    }
}

/// Per-pixel sums and counts of vein probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbAccumulator {
    pub height: usize,
    pub width: usize,
    pub sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl ProbAccumulator {
    pub fn new(height: usize, width: usize) -> Self {
        ProbAccumulator {
            height,
            width,
            sum: vec![0.0; height * width],
            count: vec![0; height * width],
        }
    }

    /// Mean probability per pixel; zero where nothing was counted.
    pub fn average(&self) -> Vec<f64> {
        self.sum
            .iter()
            .zip(&self.count)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }

    pub fn counted(&self) -> usize {
        self.count.iter().filter(|&&c| c > 0).count()
    }

    pub fn mask_above(&self, threshold: f64) -> Mask {
        threshold_map(&self.average(), self.height, self.width, threshold)
    }
}

pub fn threshold_map(values: &[f64], height: usize, width: usize, threshold: f64) -> Mask {
    Mask::from_bits(
        height,
        width,
        values.iter().map(|&v| v > threshold).collect(),
    )
    .expect("dims match")
}

/// Classifies 3×3 neighborhoods; returns the vein probability of each cell in
/// row-major order.
pub trait NeighborhoodModel {
    fn classify(&self, image: &ImageRGB, centers: &[(usize, usize)]) -> Result<Vec<[f64; 9]>>;
}

/// Answers with the ground-truth labels.
pub struct OracleGrower<'a> {
    pub veins: &'a Mask,
}

impl NeighborhoodModel for OracleGrower<'_> {
    fn classify(&self, _image: &ImageRGB, centers: &[(usize, usize)]) -> Result<Vec<[f64; 9]>> {
        Ok(centers.iter().map(|&p| labels_at(self.veins, p)).collect())
    }
}

fn labels_at(mask: &Mask, p: (usize, usize)) -> [f64; 9] {
    NEIGHBORHOOD.map(|(dr, dc)| {
        if mask.get_signed(p.0 as i64 + dr, p.1 as i64 + dc) {
            1.0
        } else {
            0.0
        }
    })
}

/// Frontier expansion from `seeds`. Each frontier is processed in raster order
/// so results do not depend on the order seeds are given in.
pub fn grow(
    model: &dyn NeighborhoodModel,
    image: &ImageRGB,
    seeds: &[(usize, usize)],
    config: &GrowConfig,
) -> Result<ProbAccumulator> {
    let (h, w) = image.dims();
    if seeds.is_empty() {
        return Err(Error::invalid("region growing needs at least one seed"));
    }
    let mut acc = ProbAccumulator::new(h, w);
    let mut visited = vec![false; h * w];
    let mut frontier = Vec::with_capacity(seeds.len());
    for &(r, c) in seeds {
        if r >= h || c >= w {
            return Err(Error::OutOfBounds {
                row: r as i64,
                col: c as i64,
                height: h,
                width: w,
            });
        }
        if !visited[r * w + c] {
            visited[r * w + c] = true;
            frontier.push((r, c));
        }
    }
    while !frontier.is_empty() {
        frontier.sort_unstable();
        let mut next = Vec::new();
        for chunk in frontier.chunks(config.batch.max(1)) {
            let probs = model.classify(image, chunk)?;
            for (&(r, c), pr) in chunk.iter().zip(&probs) {
                for (k, &(dr, dc)) in NEIGHBORHOOD.iter().enumerate() {
                    let (qr, qc) = (r as i64 + dr, c as i64 + dc);
                    if qr < 0 || qc < 0 || qr >= h as i64 || qc >= w as i64 {
                        continue;
                    }
                    let q = qr as usize * w + qc as usize;
                    acc.sum[q] += pr[k];
                    acc.count[q] += 1;
                    if pr[k] > config.cutoff && !visited[q] {
                        visited[q] = true;
                        next.push((qr as usize, qc as usize));
                    }
                }
            }
        }
        frontier = next;
    }
    Ok(acc)
}

/// Component count (8-connected) of `{v > t}` for each grid value.
pub fn threshold_sweep(
    values: &[f64],
    height: usize,
    width: usize,
    grid: &[f64],
) -> Vec<(f64, usize, usize)> {
    grid.iter()
        .map(|&t| {
            let m = threshold_map(values, height, width, t);
            (
                t,
                m.count(),
                connected_components(&m, Connectivity::Eight).count,
            )
        })
        .collect()
}

/// The grid value whose nonempty mask has the fewest components; ties go to the
/// smaller threshold.
pub fn select_threshold_map(
    values: &[f64],
    height: usize,
    width: usize,
    grid: &[f64],
) -> Result<f64> {
    threshold_sweep(values, height, width, grid)
        .into_iter()
        .filter(|&(_, pixels, _)| pixels > 0)
        .min_by(|a, b| a.2.cmp(&b.2).then(a.0.total_cmp(&b.0)))
        .map(|(t, _, _)| t)
        .ok_or_else(|| Error::invalid("every threshold in the grid gives an empty mask"))
}

pub fn select_threshold(acc: &ProbAccumulator, grid: &[f64]) -> Result<f64> {
    if acc.counted() == 0 {
        return Err(Error::invalid("probability accumulator is empty"));
    }
    select_threshold_map(&acc.average(), acc.height, acc.width, grid)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VeinSegmentation {
    pub mask: Mask,
    pub threshold: f64,
    pub accumulator: ProbAccumulator,
    /// `(threshold, pixels, components)` per grid value.
    pub sweep: Vec<(f64, usize, usize)>,
}

/// Up to `n` distinct body pixels drawn uniformly, in raster order.
pub fn sample_seeds(body: &Mask, n: usize, seed: u64) -> Vec<(usize, usize)> {
    let pixels: Vec<(usize, usize)> = body.pixels().collect();
    if n >= pixels.len() {
        return pixels;
    }
    let mut rng = TrainRng::seed_from_u64(seed);
    let mut idx = sample_indices(&mut rng, pixels.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pixels[i]).collect()
}

pub fn segment_veins(
    model: &dyn NeighborhoodModel,
    image: &ImageRGB,
    body: &Mask,
    config: &GrowConfig,
) -> Result<VeinSegmentation> {
    if body.dims() != image.dims() {
        return Err(Error::ShapeMismatch {
            expected: vec![image.height(), image.width()],
            actual: vec![body.height(), body.width()],
        });
    }
    if body.is_empty() {
        return Err(Error::NoForeground);
    }
    let seeds = sample_seeds(body, config.n_seeds, config.seed);
    let accumulator = grow(model, image, &seeds, config)?;
    let threshold = select_threshold(&accumulator, &config.grid)?;
    let avg = accumulator.average();
    let sweep = threshold_sweep(&avg, accumulator.height, accumulator.width, &config.grid);
    Ok(VeinSegmentation {
        mask: threshold_map(&avg, accumulator.height, accumulator.width, threshold),
        threshold,
        accumulator,
        sweep,
    })
}

/// Pixels of `veins` 8-reachable from vein pixels in the 3×3 neighborhoods of
/// `seeds`: what growing with a perfect classifier must find.
pub fn reachable_veins(veins: &Mask, seeds: &[(usize, usize)]) -> Mask {
    let (h, w) = veins.dims();
    let mut out = Mask::new(h, w);
    let mut queue = VecDeque::new();
    let push = |r: i64, c: i64, out: &mut Mask, queue: &mut VecDeque<(usize, usize)>| {
        if veins.get_signed(r, c) && !out.get(r as usize, c as usize) {
            out.set(r as usize, c as usize, true);
            queue.push_back((r as usize, c as usize));
        }
    };
    for &(r, c) in seeds {
        for (dr, dc) in NEIGHBORHOOD {
            push(r as i64 + dr, c as i64 + dc, &mut out, &mut queue);
        }
    }
    while let Some((r, c)) = queue.pop_front() {
        for (dr, dc) in NEIGHBORHOOD {
            push(r as i64 + dr, c as i64 + dc, &mut out, &mut queue);
        }
    }
    out
}

/// One sample: tile centered at `p` and its 3×3 ground truth.
fn make_sample(
    image: &ImageRGB,
    veins: &Mask,
    p: (usize, usize),
    tile: usize,
) -> Result<(Tile, [f64; 9])> {
    Ok((extract_tile(image, p, tile, None)?, labels_at(veins, p)))
}

fn negative_pool(veins: &Mask, body: &Mask) -> Result<Vec<(usize, usize)>> {
    Ok(body.and_not(veins)?.pixels().collect())
}

fn check_masks(image: &ImageRGB, veins: &Mask, body: &Mask) -> Result<()> {
    for m in [veins, body] {
        if m.dims() != image.dims() {
            return Err(Error::ShapeMismatch {
                expected: vec![image.height(), image.width()],
                actual: vec![m.height(), m.width()],
            });
        }
    }
    if veins.is_empty() {
        return Err(Error::invalid("vein mask is empty"));
    }
    Ok(())
}

/// Every vein pixel as a positive sample plus up to `neg_ratio` times as many
/// non-vein body pixels drawn without replacement.
pub fn make_grower_training_set<R: Rng>(
    image: &ImageRGB,
    veins: &Mask,
    body: &Mask,
    neg_ratio: usize,
    tile: usize,
    rng: &mut R,
) -> Result<Vec<(Tile, [f64; 9])>> {
    check_masks(image, veins, body)?;
    let pos: Vec<(usize, usize)> = veins.pixels().collect();
    let pool = negative_pool(veins, body)?;
    let n_neg = (neg_ratio * pos.len()).min(pool.len());
    let mut neg_idx = sample_indices(rng, pool.len(), n_neg).into_vec();
    neg_idx.sort_unstable();
    pos.into_iter()
        .chain(neg_idx.into_iter().map(|i| pool[i]))
        .map(|p| make_sample(image, veins, p, tile))
        .collect()
}

/// Lazily built grower samples over several leaves.
pub struct GrowerDataset {
    leaves: Vec<(ImageRGB, Mask)>,
    index: Vec<(u32, u32, u32)>,
    tile: usize,
    augment: Option<AugmentConfig>,
}

impl GrowerDataset {
    /// Leaves are `(image, vein mask, body mask)`; negatives are drawn once,
    /// with `seed`, at up to `neg_ratio` per positive.
    pub fn new(
        leaves: Vec<(ImageRGB, Mask, Mask)>,
        tile: usize,
        neg_ratio: usize,
        seed: u64,
        augment: Option<AugmentConfig>,
    ) -> Result<Self> {
        let mut rng = TrainRng::seed_from_u64(seed);
        let mut index = Vec::new();
        let mut stored = Vec::with_capacity(leaves.len());
        for (li, (image, veins, body)) in leaves.into_iter().enumerate() {
            check_masks(&image, &veins, &body)?;
            let pos: Vec<(usize, usize)> = veins.pixels().collect();
            let pool = negative_pool(&veins, &body)?;
            let n_neg = (neg_ratio * pos.len()).min(pool.len());
            let mut neg_idx = sample_indices(&mut rng, pool.len(), n_neg).into_vec();
            neg_idx.sort_unstable();
            let li = li as u32;
            index.extend(pos.iter().map(|&(r, c)| (li, r as u32, c as u32)));
            index.extend(
                neg_idx
                    .iter()
                    .map(|&i| (li, pool[i].0 as u32, pool[i].1 as u32)),
            );
            stored.push((image, veins));
        }
        Ok(GrowerDataset {
            leaves: stored,
            index,
            tile,
            augment,
        })
    }

    pub fn tile(&self) -> usize {
        self.tile
    }
}

impl Dataset for GrowerDataset {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn sample(&self, idx: usize, rng: Option<&mut TrainRng>) -> Result<Sample> {
        let (li, r, c) = self.index[idx];
        let (image, veins) = &self.leaves[li as usize];
        let p = (r as usize, c as usize);
        let (tile, labels) = match (rng, &self.augment) {
            (Some(rng), Some(aug)) => {
                let big = (self.tile * 3 / 2 + 2) & !1;
                let wide = extract_tile(image, p, big, None)?;
                let mut labels = labels_at(veins, p);
                let out = augment_tile(&wide, AugmentTargets::Labels(&mut labels), rng, aug);
                (out.center_crop(self.tile)?, labels)
            }
            _ => make_sample(image, veins, p, self.tile)?,
        };
        Ok(Sample {
            input: tile.data,
            target: labels.to_vec(),
        })
    }
}

/// Trained neighborhood classifier.
#[derive(Clone, Debug)]
pub struct GrowerModel {
    pub network: Network,
    pub params: ModelParams,
    pub tile: usize,
}

impl GrowerModel {
    pub fn new(network: Network, params: ModelParams) -> Result<Self> {
        let input = network.input_shape();
        if input.len() != 3
            || input[0] != 3
            || input[1] != input[2]
            || network.output_shape() != [2, 3, 3]
        {
            return Err(Error::invalid(format!(
                "network maps {:?} to {:?}, grower needs [3, S, S] to [2, 3, 3]",
                input,
                network.output_shape()
            )));
        }
        let tile = input[1];
        Ok(GrowerModel {
            network,
            params,
            tile,
        })
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile::new(self.network.clone(), self.params.clone())
            .with_meta("task", "grower")
            .with_meta("tile", self.tile)
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.meta("task") != Some("grower") {
            return Err(Error::invalid("model file is not a vein grower"));
        }
        GrowerModel::new(file.network, file.params)
    }
}

impl NeighborhoodModel for GrowerModel {
    fn classify(&self, image: &ImageRGB, centers: &[(usize, usize)]) -> Result<Vec<[f64; 9]>> {
        let s = self.tile;
        let mut data = Vec::with_capacity(centers.len() * 3 * s * s);
        for &p in centers {
            data.extend_from_slice(&extract_tile(image, p, s, None)?.data);
        }
        let x = Tensor::new(vec![centers.len(), 3, s, s], data)?;
        let out = predict(&self.params, &self.network, &x)?;
        // Channel 0 of each [2, 3, 3] output is the vein class.
        Ok(out
            .data()
            .chunks_exact(18)
            .map(|o| std::array::from_fn(|k| o[k]))
            .collect())
    }
}

pub fn train_grower(
    train: &GrowerDataset,
    val: &GrowerDataset,
    widths: &[usize],
    train_cfg: &TrainConfig,
) -> Result<(GrowerModel, History)> {
    let enc = EncoderConfig {
        in_channels: 3,
        tile: train.tile(),
        widths: widths.to_vec(),
    };
    let network = grower_network(&enc)?;
    let train_cfg = match train_cfg.loss_kind {
        LossKind::WeightedMse => TrainConfig {
            loss_kind: LossKind::FOCAL_DEFAULT,
            ..train_cfg.clone()
        },
        _ => train_cfg.clone(),
    };
    let (params, history) = crate::nn::train_model(&network, train, val, &train_cfg)?;
    Ok((GrowerModel::new(network, params)?, history))
}
