//! Iterative leaf-boundary tracing: a displacement model repeatedly predicts
//! the contour ahead of the current point, the trace advances a fixed number of
//! points, and the loop closes when it returns to its own earlier path.

use std::cell::Cell;

use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::imaging::{
    augment_tile, auto_threshold, extract_tile, AugmentConfig, AugmentTargets, ImageRGB, Tile,
};
use crate::morphology::{bresenham, fill_interior, trace_outer_contour, Contour, Mask};
use crate::nn::{
    predict, tracer_network, Dataset, EncoderConfig, History, LossKind, ModelFile, ModelParams,
    Network, Sample, Tensor, TrainConfig, TrainRng,
};

pub type Point = (i64, i64);

#[derive(Clone, Debug, PartialEq)]
pub struct TracerConfig {
    /// Tile side in pixels.
    pub tile: usize,
    /// Predicted points per tile.
    pub points: usize,
    /// Points appended per iteration.
    pub step: usize,
    pub burn_in: usize,
    pub closure_radius: f64,
    /// Most recent contour points ignored by the closure test.
    pub exclusion: usize,
    /// Trailing path length drawn into the overlay channel.
    pub trail: usize,
}

impl Default for TracerConfig {
    fn default() -> Self {
        TracerConfig {
            tile: 256,
            points: 128,
            step: 32,
            burn_in: 10,
            closure_radius: 10.0,
            exclusion: 64,
            trail: 512,
        }
    }
}

impl TracerConfig {
    /// Small tiles for CPU training on synthetic leaves.
    pub fn desk() -> Self {
        TracerConfig {
            tile: 32,
            points: 16,
            step: 8,
            burn_in: 10,
            closure_radius: 10.0,
            exclusion: 64,
            trail: 64,
        }
    }

    pub fn half(&self) -> usize {
        self.tile / 2
    }

    /// Four image perimeters worth of steps.
    pub fn iteration_cap(&self, height: usize, width: usize) -> usize {
        (8 * (height + width)).div_ceil(self.step)
    }

    fn validate(&self) -> Result<()> {
        if self.tile < 4 || !self.tile.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "tile size {} must be even and at least 4",
                self.tile
            )));
        }
        if self.points == 0 || self.step == 0 || self.step > self.points {
            return Err(Error::invalid(format!(
                "step {} must be in 1..={} (points)",
                self.step, self.points
            )));
        }
        Ok(())
    }
}

/// `(row, col)` offsets from a tile center, ordered along the contour.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementSet {
    pub offsets: Vec<(f64, f64)>,
}

impl DisplacementSet {
    /// Network target layout `[2, N]` (rows then columns), divided by `scale`.
    pub fn to_target(&self, scale: f64) -> Vec<f64> {
        let rows = self.offsets.iter().map(|p| p.0 / scale);
        let cols = self.offsets.iter().map(|p| p.1 / scale);
        rows.chain(cols).collect()
    }

    pub fn from_output(values: &[f64], scale: f64) -> Self {
        let n = values.len() / 2;
        DisplacementSet {
            offsets: (0..n)
                .map(|i| (values[i] * scale, values[n + i] * scale))
                .collect(),
        }
    }
}

fn contour_points(contour: &Contour) -> Vec<Point> {
    contour
        .points
        .iter()
        .map(|&(r, c)| (r as i64, c as i64))
        .collect()
}

/// `n` points evenly spaced by arc length along the cyclic `path`, starting at
/// `index` and running forward until the path leaves the tile around `origin`.
/// Offsets are relative to `origin`.
pub fn contour_targets(
    path: &[Point],
    index: usize,
    origin: Point,
    half: usize,
    n: usize,
) -> DisplacementSet {
    let len = path.len();
    let inside =
        |p: Point| (p.0 - origin.0).abs() < half as i64 && (p.1 - origin.1).abs() < half as i64;
    let mut walk = vec![path[index % len]];
    let mut arc = vec![0.0];
    for k in 1..len {
        let p = path[(index + k) % len];
        if !inside(p) {
            break;
        }
        let q = *walk.last().expect("nonempty");
        let d = (((p.0 - q.0).pow(2) + (p.1 - q.1).pow(2)) as f64).sqrt();
        arc.push(arc.last().expect("nonempty") + d);
        walk.push(p);
    }
    let total = *arc.last().expect("nonempty");
    let rel = |p: Point| ((p.0 - origin.0) as f64, (p.1 - origin.1) as f64);
    if total == 0.0 {
        return DisplacementSet {
            offsets: vec![rel(walk[0]); n],
        };
    }
    let mut seg = 0;
    let offsets = (1..=n)
        .map(|k| {
            let s = total * k as f64 / n as f64;
            while seg + 1 < walk.len() - 1 && arc[seg + 1] < s {
                seg += 1;
            }
            let (a, b) = (rel(walk[seg]), rel(walk[seg + 1]));
            let span = arc[seg + 1] - arc[seg];
            let t = if span > 0.0 {
                ((s - arc[seg]) / span).clamp(0.0, 1.0)
            } else {
                1.0
            };
            (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
        })
        .collect();
    DisplacementSet { offsets }
}

/// The `trail` points up to and including `path[index]`, oldest first.
fn trailing(path: &[Point], index: usize, trail: usize) -> Vec<Point> {
    let len = path.len();
    let k = trail.min(len);
    (0..k)
        .rev()
        .map(|j| path[(index + len - j) % len])
        .collect()
}

fn reversed(path: &[Point]) -> Vec<Point> {
    path.iter().rev().copied().collect()
}

/// Training sample for one contour pixel: tile with trailing overlay and
/// forward targets. `reverse` traces the contour counter-clockwise.
fn make_sample(
    image: &ImageRGB,
    path: &[Point],
    index: usize,
    cfg: &TracerConfig,
) -> Result<(Tile, DisplacementSet)> {
    let p = path[index];
    let trail = trailing(path, index, cfg.trail);
    let tile = extract_tile(image, (p.0 as usize, p.1 as usize), cfg.tile, Some(&trail))?;
    Ok((
        tile,
        contour_targets(path, index, p, cfg.half(), cfg.points),
    ))
}

/// One (tile, targets) pair per contour pixel, trace direction drawn at random
/// per sample.
pub fn make_tracer_training_set<R: Rng>(
    image: &ImageRGB,
    contour: &Contour,
    cfg: &TracerConfig,
    rng: &mut R,
) -> Result<Vec<(Tile, DisplacementSet)>> {
    cfg.validate()?;
    if contour.is_empty() || !contour.is_closed() {
        return Err(Error::invalid("training contour must be closed"));
    }
    let forward = contour_points(contour);
    let backward = reversed(&forward);
    let len = forward.len();
    (0..len)
        .map(|i| {
            if rng.gen_bool(0.5) {
                make_sample(image, &backward, len - 1 - i, cfg)
            } else {
                make_sample(image, &forward, i, cfg)
            }
        })
        .collect()
}

/// Lazily built tracer samples over several leaves, with optional augmentation
/// on training draws.
pub struct TracerDataset {
    leaves: Vec<(ImageRGB, Vec<Point>)>,
    index: Vec<(u32, u32)>,
    config: TracerConfig,
    augment: Option<AugmentConfig>,
}

impl TracerDataset {
    pub fn new(
        leaves: Vec<(ImageRGB, Contour)>,
        config: TracerConfig,
        augment: Option<AugmentConfig>,
    ) -> Result<Self> {
        config.validate()?;
        let mut index = Vec::new();
        let mut stored = Vec::with_capacity(leaves.len());
        for (li, (image, contour)) in leaves.into_iter().enumerate() {
            if contour.is_empty() || !contour.is_closed() {
                return Err(Error::invalid(format!(
                    "contour of leaf {li} is not closed"
                )));
            }
            index.extend((0..contour.len() as u32).map(|i| (li as u32, i)));
            stored.push((image, contour_points(&contour)));
        }
        Ok(TracerDataset {
            leaves: stored,
            index,
            config,
            augment,
        })
    }

    pub fn config(&self) -> &TracerConfig {
        &self.config
    }

    /// Repeats each contour pixel `factor` times in total when its tile holds
    /// at least `tile` pixels where the rough threshold mask and the filled
    /// contour disagree, which is where a leaf meets its petiole. Returns the
    /// number of emphasized pixels.
    pub fn emphasize_rough_disagreement(&mut self, factor: usize) -> Result<usize> {
        let half = self.config.half() as i64;
        let mut extra = Vec::new();
        for (li, (image, path)) in self.leaves.iter().enumerate() {
            let (h, w) = image.dims();
            let rough = auto_threshold(image)?;
            let contour = Contour::new(
                path.iter()
                    .map(|&(r, c)| (r as usize, c as usize))
                    .collect(),
            );
            let filled = fill_interior(&contour, h, w)?;
            let diff: Vec<Point> = rough
                .pixels()
                .filter(|&(r, c)| !filled.get(r, c))
                .chain(filled.pixels().filter(|&(r, c)| !rough.get(r, c)))
                .map(|(r, c)| (r as i64, c as i64))
                .collect();
            for (pi, p) in path.iter().enumerate() {
                let near = diff
                    .iter()
                    .filter(|q| (q.0 - p.0).abs() < half && (q.1 - p.1).abs() < half)
                    .count();
                if near >= self.config.tile {
                    extra.push((li as u32, pi as u32));
                }
            }
        }
        let n = extra.len();
        for _ in 1..factor {
            self.index.extend_from_slice(&extra);
        }
        Ok(n)
    }
}

impl Dataset for TracerDataset {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn sample(&self, idx: usize, rng: Option<&mut TrainRng>) -> Result<Sample> {
        let (li, pi) = self.index[idx];
        let (image, forward) = &self.leaves[li as usize];
        let cfg = &self.config;
        let len = forward.len();
        let half = cfg.half() as f64;
        let (reverse, aug) = match rng {
            Some(rng) => (rng.gen_bool(0.5), self.augment.as_ref().map(|a| (a, rng))),
            None => (idx % 2 == 1, None),
        };
        let path = if reverse {
            reversed(forward)
        } else {
            forward.clone()
        };
        let i = if reverse {
            len - 1 - pi as usize
        } else {
            pi as usize
        };
        let (tile, targets) = match aug {
            None => make_sample(image, &path, i, cfg)?,
            Some((aug, rng)) => {
                // Oversized tile so rotated corners stay inside real pixels.
                let big = (cfg.tile * 3 / 2 + 2 * aug.jitter_px + 2) & !1;
                let p = path[i];
                let trail = trailing(&path, i, cfg.trail);
                let wide = extract_tile(image, (p.0 as usize, p.1 as usize), big, Some(&trail))?;
                let mut targets = contour_targets(&path, i, p, cfg.half(), cfg.points);
                let out = augment_tile(
                    &wide,
                    AugmentTargets::Offsets(&mut targets.offsets),
                    rng,
                    aug,
                );
                (out.center_crop(cfg.tile)?, targets)
            }
        };
        Ok(Sample {
            input: tile.data,
            target: targets.to_target(half),
        })
    }
}

/// Anything that maps a 4-channel tile to contour displacements.
pub trait DisplacementModel {
    fn displacements(&self, tile: &Tile) -> Result<DisplacementSet>;
}

/// Answers with the true contour ahead of the nearest ground-truth pixel.
pub struct OracleTracer {
    path: Vec<Point>,
    half: usize,
    points: usize,
    last: Cell<Option<usize>>,
}

impl OracleTracer {
    /// `contour` must run clockwise, as `trace_outer_contour` returns it.
    pub fn new(contour: &Contour, cfg: &TracerConfig) -> Self {
        OracleTracer {
            path: contour_points(contour),
            half: cfg.half(),
            points: cfg.points,
            last: Cell::new(None),
        }
    }
}

impl DisplacementModel for OracleTracer {
    fn displacements(&self, tile: &Tile) -> Result<DisplacementSet> {
        let c = (tile.center.0 as i64, tile.center.1 as i64);
        let len = self.path.len();
        let dist = |p: Point| (p.0 - c.0).pow(2) + (p.1 - c.1).pow(2);
        let best = self
            .path
            .iter()
            .map(|&p| dist(p))
            .min()
            .ok_or(Error::EmptyDataset)?;
        // Pixels visited twice by the contour: prefer the visit just ahead of
        // the previous answer so the trace keeps moving forward.
        let from = self.last.get().unwrap_or(0);
        let index = (0..len)
            .map(|k| (from + k) % len)
            .find(|&i| dist(self.path[i]) == best)
            .expect("minimum is attained");
        self.last.set(Some(index));
        Ok(contour_targets(
            &self.path,
            index,
            c,
            self.half,
            self.points,
        ))
    }
}

/// Trained network with the tracing parameters it was trained for.
#[derive(Clone, Debug)]
pub struct TracerModel {
    pub network: Network,
    pub params: ModelParams,
    pub config: TracerConfig,
}

impl TracerModel {
    pub fn new(network: Network, params: ModelParams, config: TracerConfig) -> Result<Self> {
        config.validate()?;
        if network.input_shape() != [4, config.tile, config.tile]
            || network.output_shape() != [2, config.points]
        {
            return Err(Error::invalid(format!(
                "network maps {:?} to {:?}, tracer needs [4, {t}, {t}] to [2, {}]",
                network.input_shape(),
                network.output_shape(),
                config.points,
                t = config.tile
            )));
        }
        Ok(TracerModel {
            network,
            params,
            config,
        })
    }

    pub fn to_file(&self) -> ModelFile {
        let c = &self.config;
        ModelFile::new(self.network.clone(), self.params.clone())
            .with_meta("task", "tracer")
            .with_meta("tile", c.tile)
            .with_meta("points", c.points)
            .with_meta("step", c.step)
            .with_meta("burn_in", c.burn_in)
            .with_meta("closure_radius", c.closure_radius)
            .with_meta("exclusion", c.exclusion)
            .with_meta("trail", c.trail)
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.meta("task") != Some("tracer") {
            return Err(Error::invalid("model file is not a tracer"));
        }
        let config = TracerConfig {
            tile: file.meta_value("tile")?,
            points: file.meta_value("points")?,
            step: file.meta_value("step")?,
            burn_in: file.meta_value("burn_in")?,
            closure_radius: file.meta_value("closure_radius")?,
            exclusion: file.meta_value("exclusion")?,
            trail: file.meta_value("trail")?,
        };
        TracerModel::new(file.network, file.params, config)
    }
}

impl DisplacementModel for TracerModel {
    fn displacements(&self, tile: &Tile) -> Result<DisplacementSet> {
        let t = self.config.tile;
        let x = Tensor::new(vec![1, 4, t, t], tile.data.clone())?;
        let out = predict(&self.params, &self.network, &x)?;
        Ok(DisplacementSet::from_output(
            out.data(),
            self.config.half() as f64,
        ))
    }
}

/// Trains a tracer whose encoder has the given block widths.
pub fn train_tracer(
    train: &TracerDataset,
    val: &TracerDataset,
    widths: &[usize],
    train_cfg: &TrainConfig,
) -> Result<(TracerModel, History)> {
    let cfg = train.config().clone();
    let enc = EncoderConfig {
        in_channels: 4,
        tile: cfg.tile,
        widths: widths.to_vec(),
    };
    let network = tracer_network(&enc, cfg.points)?;
    let train_cfg = TrainConfig {
        loss_kind: LossKind::WeightedMse,
        ..train_cfg.clone()
    };
    let (params, history) = crate::nn::train_model(&network, train, val, &train_cfg)?;
    Ok((TracerModel::new(network, params, cfg)?, history))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceInit {
    pub start: (usize, usize),
    /// Rough boundary behind the start, oldest first, ending at the start.
    pub overlay: Vec<Point>,
    pub rough: Mask,
}

/// Starts at the topmost (then leftmost) pixel of the rough threshold mask,
/// with the clockwise boundary just behind it as the initial overlay.
pub fn init_trace(image: &ImageRGB, cfg: &TracerConfig) -> Result<TraceInit> {
    let rough = auto_threshold(image)?;
    let contour = trace_outer_contour(&rough)?;
    let path = contour_points(&contour);
    let overlay = trailing(&path, 0, cfg.half().min(path.len()));
    Ok(TraceInit {
        start: contour.points[0],
        overlay,
        rough,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceResult {
    pub contour: Contour,
    pub mask: Mask,
    pub iterations: usize,
    /// Index in `contour` of the point the trace closed onto before trimming.
    pub closure_index: usize,
}

fn round_half_away(v: f64) -> i64 {
    v.round() as i64
}

pub fn trace_leaf(
    model: &dyn DisplacementModel,
    image: &ImageRGB,
    cfg: &TracerConfig,
) -> Result<TraceResult> {
    cfg.validate()?;
    let init = init_trace(image, cfg)?;
    trace_from(model, image, cfg, init.start, init.overlay)
}

/// Runs the tracing loop from an explicit start and initial overlay.
pub fn trace_from(
    model: &dyn DisplacementModel,
    image: &ImageRGB,
    cfg: &TracerConfig,
    start: (usize, usize),
    overlay: Vec<Point>,
) -> Result<TraceResult> {
    let (h, w) = image.dims();
    let clamp = |p: Point| (p.0.clamp(0, h as i64 - 1), p.1.clamp(0, w as i64 - 1));
    let mut current: Point = (start.0 as i64, start.1 as i64);
    let mut trail = overlay;
    if trail.last() != Some(&current) {
        trail.push(current);
    }
    let mut stored: Vec<Point> = Vec::new();
    let cap = cfg.iteration_cap(h, w);
    let r2 = cfg.closure_radius * cfg.closure_radius;

    for iter in 0..cap {
        let lo = trail.len().saturating_sub(cfg.trail);
        let tile = extract_tile(
            image,
            (current.0 as usize, current.1 as usize),
            cfg.tile,
            Some(&trail[lo..]),
        )?;
        let pred = model.displacements(&tile)?;
        let mut dense = Vec::new();
        let mut prev = current;
        for &(dr, dc) in pred.offsets.iter().take(cfg.step) {
            if !(dr.is_finite() && dc.is_finite()) {
                return Err(Error::Numerical { layer: 0 });
            }
            let p = clamp((
                current.0 + round_half_away(dr),
                current.1 + round_half_away(dc),
            ));
            if p != prev {
                dense.extend(bresenham(prev, p).into_iter().skip(1));
                prev = p;
            }
        }
        if dense.is_empty() {
            continue;
        }
        if iter >= cfg.burn_in {
            for (k, &q) in dense.iter().enumerate() {
                let eligible = stored.len().saturating_sub(cfg.exclusion);
                let hit = stored[..eligible]
                    .iter()
                    .enumerate()
                    .map(|(j, s)| (((s.0 - q.0).pow(2) + (s.1 - q.1).pow(2)) as f64, j))
                    .filter(|&(d, _)| d <= r2)
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                if let Some((_, j)) = hit {
                    let mut points: Vec<Point> = stored[j..].to_vec();
                    if q == stored[j] {
                        points.extend_from_slice(&dense[..k]);
                    } else {
                        points.extend_from_slice(&dense[..=k]);
                        let join = bresenham(q, stored[j]);
                        points.extend_from_slice(&join[1..join.len() - 1]);
                    }
                    let contour = Contour::new(
                        points
                            .iter()
                            .map(|&(r, c)| (r as usize, c as usize))
                            .collect(),
                    );
                    let mask = fill_interior(&contour, h, w)?;
                    return Ok(TraceResult {
                        contour,
                        mask,
                        iterations: iter + 1,
                        closure_index: j,
                    });
                }
            }
            stored.extend_from_slice(&dense);
        }
        trail.extend_from_slice(&dense);
        current = prev;
    }
    Err(Error::NonConvergence { iterations: cap })
}

/// Symmetric Hausdorff distance between two point sets.
pub fn hausdorff(a: &[Point], b: &[Point]) -> f64 {
    let directed = |x: &[Point], y: &[Point]| -> i64 {
        x.iter()
            .map(|p| {
                y.iter()
                    .map(|q| (p.0 - q.0).pow(2) + (p.1 - q.1).pow(2))
                    .min()
                    .unwrap_or(i64::MAX)
            })
            .max()
            .unwrap_or(0)
    };
    (directed(a, b).max(directed(b, a)) as f64).sqrt()
}

pub fn contour_hausdorff(a: &Contour, b: &Contour) -> f64 {
    hausdorff(&contour_points(a), &contour_points(b))
}

/// Deterministic per-leaf RNG for sampling helpers.
pub fn leaf_rng(seed: u64) -> TrainRng {
    TrainRng::seed_from_u64(seed)
}
