//! Desk-scale training recipes: the small tiles, widths and epoch budgets used
//! to train every model on synthetic leaves on a CPU.

use crate::dense::{train_dense, DenseDataset, DenseModel, DenseTask};
use crate::error::{Error, Result};
use crate::grower::{train_grower, GrowerDataset, GrowerModel};
use crate::imaging::{AugmentConfig, ImageRGB};
use crate::morphology::{trace_outer_contour, Mask};
use crate::nn::{History, TrainConfig};
use crate::tracer::{train_tracer, TracerConfig, TracerDataset, TracerModel};

/// A training leaf: scan, lamina mask and vein mask.
#[derive(Clone, Debug)]
pub struct LabeledLeaf {
    pub image: ImageRGB,
    pub leaf: Mask,
    pub veins: Mask,
}

impl LabeledLeaf {
    /// Lamina plus veins, so the petiole counts as leaf body.
    pub fn body(&self) -> Result<Mask> {
        self.leaf.or(&self.veins)
    }
}

fn non_empty(train: &[LabeledLeaf], val: &[LabeledLeaf]) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

fn train_config(
    epochs: usize,
    batch: usize,
    per_epoch: usize,
    max_val: usize,
    seed: u64,
    verbose: bool,
) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: batch,
        early_stop_patience: 20,
        seed,
        samples_per_epoch: Some(per_epoch),
        max_val_samples: Some(max_val),
        verbose,
        ..Default::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TracerRecipe {
    pub config: TracerConfig,
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub samples_per_epoch: usize,
    /// Repeat factor for contour pixels near the petiole junction.
    pub emphasis: usize,
    pub seed: u64,
    pub verbose: bool,
}

impl Default for TracerRecipe {
    fn default() -> Self {
        TracerRecipe {
            config: TracerConfig::desk(),
            widths: vec![6, 12, 24],
            epochs: 60,
            batch_size: 32,
            samples_per_epoch: 2048,
            emphasis: 8,
            seed: 1,
            verbose: false,
        }
    }
}

impl TracerRecipe {
    pub fn train(
        &self,
        train: &[LabeledLeaf],
        val: &[LabeledLeaf],
    ) -> Result<(TracerModel, History)> {
        non_empty(train, val)?;
        let pairs = |ls: &[LabeledLeaf]| -> Result<Vec<(ImageRGB, _)>> {
            ls.iter()
                .map(|l| Ok((l.image.clone(), trace_outer_contour(&l.leaf)?)))
                .collect()
        };
        let mut tds = TracerDataset::new(
            pairs(train)?,
            self.config.clone(),
            Some(AugmentConfig::tracer_default()),
        )?;
        if self.emphasis > 1 {
            tds.emphasize_rough_disagreement(self.emphasis)?;
        }
        let vds = TracerDataset::new(pairs(val)?, self.config.clone(), None)?;
        let tc = train_config(
            self.epochs,
            self.batch_size,
            self.samples_per_epoch,
            512,
            self.seed,
            self.verbose,
        );
        train_tracer(&tds, &vds, &self.widths, &tc)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrowerRecipe {
    pub tile: usize,
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub samples_per_epoch: usize,
    /// Non-vein samples per vein sample.
    pub neg_ratio: usize,
    pub seed: u64,
    pub verbose: bool,
}

impl Default for GrowerRecipe {
    fn default() -> Self {
        GrowerRecipe {
            tile: 16,
            widths: vec![8, 16, 32],
            epochs: 60,
            batch_size: 64,
            samples_per_epoch: 2048,
            neg_ratio: 1,
            seed: 1,
            verbose: false,
        }
    }
}

impl GrowerRecipe {
    pub fn train(
        &self,
        train: &[LabeledLeaf],
        val: &[LabeledLeaf],
    ) -> Result<(GrowerModel, History)> {
        non_empty(train, val)?;
        let triples = |ls: &[LabeledLeaf]| -> Result<Vec<_>> {
            ls.iter()
                .map(|l| Ok((l.image.clone(), l.veins.clone(), l.body()?)))
                .collect()
        };
        let tds = GrowerDataset::new(
            triples(train)?,
            self.tile,
            self.neg_ratio,
            self.seed,
            Some(AugmentConfig::grower_default()),
        )?;
        let vds = GrowerDataset::new(
            triples(val)?,
            self.tile,
            self.neg_ratio,
            self.seed + 1,
            None,
        )?;
        let tc = train_config(
            self.epochs,
            self.batch_size,
            self.samples_per_epoch,
            1024,
            self.seed,
            self.verbose,
        );
        train_grower(&tds, &vds, &self.widths, &tc)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseRecipe {
    pub task: DenseTask,
    pub window: usize,
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub samples_per_epoch: usize,
    pub seed: u64,
    pub verbose: bool,
}

impl DenseRecipe {
    pub fn new(task: DenseTask) -> Self {
        DenseRecipe {
            task,
            window: 32,
            widths: vec![8, 16, 32],
            epochs: 30,
            batch_size: 16,
            samples_per_epoch: 512,
            seed: 1,
            verbose: false,
        }
    }

    pub fn train(
        &self,
        train: &[LabeledLeaf],
        val: &[LabeledLeaf],
    ) -> Result<(DenseModel, History)> {
        non_empty(train, val)?;
        // Leaf windows straddle the outline; vein windows stay on the leaf.
        let (min_fraction, margin) = match self.task {
            DenseTask::Leaf => (0.0, 24),
            DenseTask::Vein => (0.05, 0),
        };
        let items = |ls: &[LabeledLeaf]| -> Result<Vec<_>> {
            ls.iter()
                .map(|l| {
                    Ok(match self.task {
                        DenseTask::Leaf => (l.image.clone(), l.leaf.clone(), l.leaf.dilate(margin)),
                        DenseTask::Vein => (l.image.clone(), l.veins.clone(), l.body()?),
                    })
                })
                .collect()
        };
        let tds = DenseDataset::new(
            items(train)?,
            self.window,
            100_000,
            min_fraction,
            self.seed,
            Some(AugmentConfig::grower_default()),
        )?;
        let vds = DenseDataset::new(
            items(val)?,
            self.window,
            256,
            min_fraction,
            self.seed + 1,
            None,
        )?;
        let tc = train_config(
            self.epochs,
            self.batch_size,
            self.samples_per_epoch,
            256,
            self.seed,
            self.verbose,
        );
        train_dense(&tds, &vds, self.task, &self.widths, &tc)
    }
}
