use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use leafscan::dense::{segment_dense, DenseModel, DenseTask};
use leafscan::desk::{DenseRecipe, GrowerRecipe, LabeledLeaf, TracerRecipe};
use leafscan::grower::{segment_veins, GrowConfig, GrowerModel};
use leafscan::imaging::{
    fixture_seed, generate_synthetic_leaf, load_mask_png, save_mask_png, ImageRGB, SynthParams,
};
use leafscan::nn::{History, ModelFile};
use leafscan::stats::{
    jaccard, load_genotypes, load_genotypes_text, load_phenotypes, object_count, r_squared, recall,
    run_gwas, save_genotypes, save_phenotypes, simulate_population, write_gwas_csv,
    write_manhattan_csv, BlinkConfig, GwasConfig, Lambda,
};
use leafscan::tracer::{trace_leaf, TracerModel};
use leafscan::traits::{extract_all, save_trait_csv, TraitRecord};

use crate::error::CliError;

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// key=value file supplying defaults for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-image batches.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic leaves and a simulated field trial.
    Synth(SynthArgs),
    TrainTracer(TrainTracerArgs),
    TrainGrower(TrainGrowerArgs),
    TrainDense(TrainDenseArgs),
    /// Trace leaf outlines into lamina masks.
    SegmentLeaf(SegmentLeafArgs),
    /// Grow vein masks from seeds inside each leaf mask.
    SegmentVeins(SegmentVeinsArgs),
    /// Dense per-pixel segmentation with the baseline model.
    SegmentDense(SegmentDenseArgs),
    ExtractTraits(ExtractTraitsArgs),
    /// Compare predicted masks with ground truth.
    Evaluate(EvaluateArgs),
    Gwas(GwasArgs),
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Synth(a) => &a.common,
            Command::TrainTracer(a) => &a.common,
            Command::TrainGrower(a) => &a.common,
            Command::TrainDense(a) => &a.common,
            Command::SegmentLeaf(a) => &a.common,
            Command::SegmentVeins(a) => &a.common,
            Command::SegmentDense(a) => &a.common,
            Command::ExtractTraits(a) => &a.common,
            Command::Evaluate(a) => &a.common,
            Command::Gwas(a) => &a.common,
        }
    }

    pub fn run(&self) -> Result<()> {
        match self {
            Command::Synth(a) => synth(a),
            Command::TrainTracer(a) => train_tracer(a),
            Command::TrainGrower(a) => train_grower(a),
            Command::TrainDense(a) => train_dense(a),
            Command::SegmentLeaf(a) => segment_leaf(a),
            Command::SegmentVeins(a) => segment_vein_masks(a),
            Command::SegmentDense(a) => segment_dense_masks(a),
            Command::ExtractTraits(a) => extract_traits(a),
            Command::Evaluate(a) => evaluate(a),
            Command::Gwas(a) => gwas(a),
        }
    }
}

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(CliError::MissingInput(format!("{} does not exist", path.display())).into());
    }
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// PNG files in `dir` as `(stem, path)`, sorted by name.
fn list_pngs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    require(dir)?;
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            let stem = path
                .file_stem()
                .expect("file has a name")
                .to_string_lossy()
                .into_owned();
            out.push((stem, path));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::MissingInput(format!("no PNG images in {}", dir.display())).into());
    }
    Ok(out)
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| {
            w.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad width list {s:?}")).into())
        })
        .collect()
}

/// Runs `f` over every image on a pool of `jobs` threads, keeping input order.
fn batch<T: Send>(
    jobs: usize,
    items: &[(String, PathBuf)],
    f: impl Fn(&str, &Path) -> Result<T> + Sync,
) -> Result<Vec<(String, Result<T>)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    Ok(pool.install(|| {
        items
            .par_iter()
            .map(|(name, path)| (name.clone(), f(name, path)))
            .collect()
    }))
}

/// Logs and records per-image failures; returns the successes.
fn settle<T>(out: &Path, results: Vec<(String, Result<T>)>) -> Result<Vec<(String, T)>> {
    let total = results.len();
    let mut ok = Vec::new();
    let mut skipped = String::from("image,reason\n");
    let mut warnings = 0;
    for (name, r) in results {
        match r {
            Ok(v) => ok.push((name, v)),
            Err(e) => {
                warn!("{name}: {e:#}");
                warnings += 1;
                writeln!(skipped, "{name},\"{}\"", format!("{e:#}").replace('"', "'")).unwrap();
            }
        }
    }
    write(&out.join("skipped.csv"), skipped)?;
    println!(
        "processed {} of {total} images, {warnings} skipped",
        ok.len()
    );
    Ok(ok)
}

fn load_model(path: &Path) -> Result<ModelFile> {
    require(path)?;
    Ok(ModelFile::load(path)?)
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of leaves.
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Leaves written to `test/` instead of `train/`.
    #[arg(long, default_value_t = 8)]
    pub holdout: usize,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value_t = 300.0)]
    pub dpi: f64,
    /// Genotypes in the simulated field trial (0 skips it).
    #[arg(long, default_value_t = 200)]
    pub genotypes: usize,
    #[arg(long, default_value_t = 4)]
    pub clones: usize,
    #[arg(long, default_value_t = 2000)]
    pub snps: usize,
    #[arg(long, default_value_t = 1)]
    pub qtns: usize,
    #[arg(long, default_value_t = 0.65)]
    pub h2: f64,
}

fn synth(a: &SynthArgs) -> Result<()> {
    if a.holdout > a.n {
        bail!(CliError::Config(format!(
            "holdout {} exceeds n {}",
            a.holdout, a.n
        )));
    }
    let params = SynthParams {
        size: a.size,
        dpi: a.dpi,
        ..SynthParams::default()
    };
    let out = &a.common.out;
    for split in ["train", "test"] {
        for sub in ["images", "leaf_masks", "vein_masks"] {
            create_dir(&out.join(split).join(sub))?;
        }
    }
    let mut petioles = String::from("sample_id,split,length_px,width_px\n");
    let leaves: Vec<_> = (0..a.n)
        .into_par_iter()
        .map(|i| {
            generate_synthetic_leaf(
                &mut ChaCha8Rng::seed_from_u64(fixture_seed(a.common.seed, i)),
                &params,
            )
        })
        .collect();
    for (i, leaf) in leaves.into_iter().enumerate() {
        let leaf = leaf?;
        let split = if i < a.n - a.holdout { "train" } else { "test" };
        let name = format!("leaf_{i:03}");
        let dir = out.join(split);
        leaf.image
            .save_png(&dir.join("images").join(format!("{name}.png")))?;
        save_mask_png(
            &leaf.leaf_mask,
            &dir.join("leaf_masks").join(format!("{name}.png")),
        )?;
        save_mask_png(
            &leaf.vein_mask,
            &dir.join("vein_masks").join(format!("{name}.png")),
        )?;
        if let Some(p) = leaf.petiole {
            writeln!(petioles, "{name},{split},{},{}", p.length_px, p.width_px).unwrap();
        }
    }
    write(&out.join("petioles.csv"), petioles)?;
    if a.genotypes > 0 {
        let pop = simulate_population(a.genotypes, a.clones, a.snps, a.qtns, a.h2, a.common.seed)?;
        let field = out.join("field");
        create_dir(&field)?;
        save_genotypes(&pop.genotypes, &field.join("genotypes.ltgt"))?;
        save_phenotypes(&pop.phenotypes, &field.join("phenotypes.csv"))?;
        let mut truth = format!("h2={}\n", pop.true_h2);
        for &q in &pop.qtns {
            writeln!(truth, "qtn={}", pop.genotypes.snps[q].id).unwrap();
        }
        write(&field.join("truth.txt"), truth)?;
    }
    info!("wrote {} leaves to {}", a.n, out.display());
    Ok(())
}

/// Leaves from `images/`, `leaf_masks/` and `vein_masks/` under `dir`.
fn load_labeled(dir: &Path) -> Result<Vec<LabeledLeaf>> {
    let images = list_pngs(&dir.join("images"))?;
    images
        .iter()
        .map(|(name, path)| {
            let mask = |sub: &str| load_mask_png(&dir.join(sub).join(format!("{name}.png")));
            Ok(LabeledLeaf {
                image: ImageRGB::load_png(path)?,
                leaf: mask("leaf_masks")?,
                veins: mask("vein_masks")?,
            })
        })
        .collect()
}

/// The last `val_count` leaves validate; the rest train.
fn split_val(leaves: &[LabeledLeaf], val_count: usize) -> Result<(&[LabeledLeaf], &[LabeledLeaf])> {
    if val_count == 0 || val_count >= leaves.len() {
        bail!(CliError::Config(format!(
            "val-count must be between 1 and {}",
            leaves.len().saturating_sub(1)
        )));
    }
    Ok(leaves.split_at(leaves.len() - val_count))
}

fn save_trained(out: &Path, file: ModelFile, history: &History) -> Result<()> {
    create_dir(out)?;
    file.save(&out.join("model.ltnn"))?;
    write(&out.join("history.csv"), history.to_csv())?;
    info!(
        "best epoch {} of {}",
        history.best_epoch,
        history.records.len()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainTracerArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory with images/, leaf_masks/ and vein_masks/.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub val_count: usize,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2048)]
    pub samples_per_epoch: usize,
    #[arg(long, default_value = "6,12,24")]
    pub widths: String,
    #[arg(long, default_value_t = 8)]
    pub emphasis: usize,
}

fn train_tracer(a: &TrainTracerArgs) -> Result<()> {
    let leaves = load_labeled(&a.data)?;
    let (train, val) = split_val(&leaves, a.val_count)?;
    let recipe = TracerRecipe {
        widths: parse_widths(&a.widths)?,
        epochs: a.epochs,
        samples_per_epoch: a.samples_per_epoch,
        emphasis: a.emphasis,
        seed: a.common.seed,
        ..TracerRecipe::default()
    };
    let (model, history) = recipe.train(train, val)?;
    save_trained(&a.common.out, model.to_file(), &history)
}

#[derive(Args, Debug)]
pub struct TrainGrowerArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub val_count: usize,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2048)]
    pub samples_per_epoch: usize,
    #[arg(long, default_value = "8,16,32")]
    pub widths: String,
    #[arg(long, default_value_t = 16)]
    pub tile: usize,
    #[arg(long, default_value_t = 1)]
    pub neg_ratio: usize,
}

fn train_grower(a: &TrainGrowerArgs) -> Result<()> {
    let leaves = load_labeled(&a.data)?;
    let (train, val) = split_val(&leaves, a.val_count)?;
    let recipe = GrowerRecipe {
        tile: a.tile,
        widths: parse_widths(&a.widths)?,
        epochs: a.epochs,
        samples_per_epoch: a.samples_per_epoch,
        neg_ratio: a.neg_ratio,
        seed: a.common.seed,
        ..GrowerRecipe::default()
    };
    let (model, history) = recipe.train(train, val)?;
    save_trained(&a.common.out, model.to_file(), &history)
}

#[derive(Args, Debug)]
pub struct TrainDenseArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// `leaf` or `vein`.
    #[arg(long, default_value = "leaf")]
    pub task: String,
    #[arg(long, default_value_t = 4)]
    pub val_count: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 512)]
    pub samples_per_epoch: usize,
    #[arg(long, default_value = "8,16,32")]
    pub widths: String,
    #[arg(long, default_value_t = 32)]
    pub window: usize,
}

fn train_dense(a: &TrainDenseArgs) -> Result<()> {
    let task = DenseTask::parse(&a.task).map_err(|e| CliError::Config(e.to_string()))?;
    let leaves = load_labeled(&a.data)?;
    let (train, val) = split_val(&leaves, a.val_count)?;
    let recipe = DenseRecipe {
        window: a.window,
        widths: parse_widths(&a.widths)?,
        epochs: a.epochs,
        samples_per_epoch: a.samples_per_epoch,
        seed: a.common.seed,
        ..DenseRecipe::new(task)
    };
    let (model, history) = recipe.train(train, val)?;
    save_trained(&a.common.out, model.to_file(), &history)
}

#[derive(Args, Debug)]
pub struct SegmentLeafArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
}

fn segment_leaf(a: &SegmentLeafArgs) -> Result<()> {
    let model = TracerModel::from_file(load_model(&a.model)?)?;
    let images = list_pngs(&a.images)?;
    let out = a.common.out.join("leaf_masks");
    create_dir(&out)?;
    let results = batch(a.common.jobs, &images, |_, path| {
        let image = ImageRGB::load_png(path)?;
        Ok(trace_leaf(&model, &image, &model.config)?.mask)
    })?;
    for (name, mask) in settle(&a.common.out, results)? {
        save_mask_png(&mask, &out.join(format!("{name}.png")))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SegmentVeinsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub images: PathBuf,
    /// Leaf masks named like the images; seeds are drawn inside them.
    #[arg(long)]
    pub leaf_masks: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub seeds: usize,
}

fn segment_vein_masks(a: &SegmentVeinsArgs) -> Result<()> {
    let model = GrowerModel::from_file(load_model(&a.model)?)?;
    require(&a.leaf_masks)?;
    let images = list_pngs(&a.images)?;
    let out = a.common.out.join("vein_masks");
    create_dir(&out)?;
    let cfg = GrowConfig {
        n_seeds: a.seeds,
        seed: a.common.seed,
        ..GrowConfig::default()
    };
    let results = batch(a.common.jobs, &images, |name, path| {
        let image = ImageRGB::load_png(path)?;
        let body = load_mask_png(&a.leaf_masks.join(format!("{name}.png")))?;
        Ok(segment_veins(&model, &image, &body, &cfg)?)
    })?;
    let mut table = String::from("image,threshold,components\n");
    for (name, seg) in settle(&a.common.out, results)? {
        save_mask_png(&seg.mask, &out.join(format!("{name}.png")))?;
        writeln!(
            table,
            "{name},{},{}",
            seg.threshold,
            object_count(&seg.mask)
        )
        .unwrap();
    }
    write(&a.common.out.join("thresholds.csv"), table)
}

#[derive(Args, Debug)]
pub struct SegmentDenseArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
}

fn segment_dense_masks(a: &SegmentDenseArgs) -> Result<()> {
    let model = DenseModel::from_file(load_model(&a.model)?)?;
    let images = list_pngs(&a.images)?;
    let out = a.common.out.join(format!("{}_masks", model.task.name()));
    create_dir(&out)?;
    let results = batch(a.common.jobs, &images, |_, path| {
        let image = ImageRGB::load_png(path)?;
        Ok(segment_dense(&model, &image, model.task)?)
    })?;
    let mut table = String::from("image,threshold,components\n");
    for (name, seg) in settle(&a.common.out, results)? {
        save_mask_png(&seg.mask, &out.join(format!("{name}.png")))?;
        writeln!(
            table,
            "{name},{},{}",
            seg.threshold,
            object_count(&seg.mask)
        )
        .unwrap();
    }
    write(&a.common.out.join("thresholds.csv"), table)
}

#[derive(Args, Debug)]
pub struct ExtractTraitsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Adaxial scans.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub leaf_masks: PathBuf,
    #[arg(long)]
    pub vein_masks: PathBuf,
    /// Optional abaxial scans named like the images.
    #[arg(long)]
    pub bottom_images: Option<PathBuf>,
    #[arg(long, default_value_t = 300.0)]
    pub dpi: f64,
}

fn extract_traits(a: &ExtractTraitsArgs) -> Result<()> {
    require(&a.leaf_masks)?;
    require(&a.vein_masks)?;
    let images = list_pngs(&a.images)?;
    create_dir(&a.common.out)?;
    let results = batch(
        a.common.jobs,
        &images,
        |name, path| -> Result<TraitRecord> {
            let file = format!("{name}.png");
            let image = ImageRGB::load_png(path)?;
            let bottom = match &a.bottom_images {
                Some(dir) if dir.join(&file).exists() => {
                    Some(ImageRGB::load_png(&dir.join(&file))?)
                }
                _ => None,
            };
            let leaf = load_mask_png(&a.leaf_masks.join(&file))?;
            let veins = load_mask_png(&a.vein_masks.join(&file))?;
            Ok(extract_all(
                name,
                &image,
                bottom.as_ref(),
                &leaf,
                &veins,
                a.dpi,
            )?)
        },
    )?;
    let records: Vec<TraitRecord> = settle(&a.common.out, results)?
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    save_trait_csv(&records, &a.common.out.join("traits.csv"))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Predicted masks.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth masks with the same names.
    #[arg(long)]
    pub truth: PathBuf,
    /// Trait table to compare against `--petioles` measurements.
    #[arg(long)]
    pub traits: Option<PathBuf>,
    /// `sample_id,...,length_px,width_px` table of measured petioles.
    #[arg(long)]
    pub petioles: Option<PathBuf>,
    #[arg(long, default_value_t = 300.0)]
    pub dpi: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let truths = list_pngs(&a.truth)?;
    require(&a.pred)?;
    create_dir(&a.common.out)?;
    let results = batch(a.common.jobs, &truths, |name, path| {
        let truth = load_mask_png(path)?;
        let pred = load_mask_png(&a.pred.join(format!("{name}.png")))?;
        Ok((
            jaccard(&pred, &truth)?,
            recall(&pred, &truth)?,
            object_count(&pred),
            object_count(&truth),
        ))
    })?;
    let rows = settle(&a.common.out, results)?;
    let mut table = String::from("image,jaccard,recall,pred_components,truth_components\n");
    for (name, (j, r, pc, tc)) in &rows {
        writeln!(table, "{name},{j},{r},{pc},{tc}").unwrap();
    }
    write(&a.common.out.join("evaluation.csv"), table)?;
    let js: Vec<f64> = rows.iter().map(|(_, v)| v.0).collect();
    let rs: Vec<f64> = rows.iter().map(|(_, v)| v.1).collect();
    let cs: Vec<f64> = rows.iter().map(|(_, v)| v.2 as f64).collect();
    let mut summary = format!(
        "images={}\nmean_jaccard={}\nmean_recall={}\nmean_components={}\n",
        rows.len(),
        mean(&js),
        mean(&rs),
        mean(&cs)
    );
    if let (Some(traits), Some(petioles)) = (&a.traits, &a.petioles) {
        summary.push_str(&petiole_r2(traits, petioles, a.dpi)?);
    }
    print!("{summary}");
    write(&a.common.out.join("summary.txt"), summary)
}

/// R² of extracted petiole length and width against measurements in pixels.
fn petiole_r2(traits: &Path, petioles: &Path, dpi: f64) -> Result<String> {
    require(traits)?;
    require(petioles)?;
    let read = |path: &Path, cols: [&str; 2]| -> Result<Vec<(String, [f64; 2])>> {
        let mut rd = csv::Reader::from_path(path)?;
        let header = rd.headers()?.clone();
        let idx = |c: &str| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| CliError::Config(format!("{} has no column {c}", path.display())))
        };
        let (i0, i1) = (idx(cols[0])?, idx(cols[1])?);
        let mut out = Vec::new();
        for row in rd.records() {
            let row = row?;
            if let (Ok(x), Ok(y)) = (row[i0].parse(), row[i1].parse()) {
                out.push((row[0].to_string(), [x, y]));
            }
        }
        Ok(out)
    };
    let measured = read(petioles, ["length_px", "width_px"])?;
    let extracted: std::collections::BTreeMap<String, [f64; 2]> =
        read(traits, ["petiole_length_cm", "petiole_width_cm"])?
            .into_iter()
            .collect();
    let cm_per_px = 2.54 / dpi;
    let mut pairs = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for (id, m) in measured {
        if let Some(e) = extracted.get(&id) {
            for k in 0..2 {
                pairs[k].0.push(m[k] * cm_per_px);
                pairs[k].1.push(e[k]);
            }
        }
    }
    let mut out = String::new();
    for (name, (x, y)) in ["petiole_length", "petiole_width"].iter().zip(&pairs) {
        match r_squared(x, y) {
            Ok(r2) => writeln!(out, "{name}_r2={r2}").unwrap(),
            Err(e) => warn!("{name}: {e}"),
        }
    }
    Ok(out)
}

#[derive(Args, Debug)]
pub struct GwasArgs {
    #[command(flatten)]
    pub common: Common,
    /// CSV with sample_id,genotype_id,row,position,value.
    #[arg(long)]
    pub phenotypes: PathBuf,
    /// Binary genotype file, or a CSV text matrix when the name ends in .csv.
    #[arg(long)]
    pub genotypes: PathBuf,
    #[arg(long, default_value_t = 6.0)]
    pub mad_cutoff: f64,
    /// `auto`, `none`, or a fixed smoothing parameter.
    #[arg(long, default_value = "auto")]
    pub lambda: String,
    #[arg(long, default_value_t = 0.7)]
    pub ld_r2: f64,
    #[arg(long, default_value_t = 100)]
    pub ld_window: usize,
    #[arg(long, default_value_t = 10)]
    pub max_iter: usize,
    /// FDR level counted as significant in the summary.
    #[arg(long, default_value_t = 0.05)]
    pub fdr: f64,
}

fn gwas(a: &GwasArgs) -> Result<()> {
    require(&a.phenotypes)?;
    require(&a.genotypes)?;
    let spatial = match a.lambda.as_str() {
        "auto" => Some(Lambda::Auto),
        "none" => None,
        s => {
            Some(Lambda::Fixed(s.parse().map_err(|_| {
                CliError::Config(format!("bad lambda {s:?}"))
            })?))
        }
    };
    let phenotypes = load_phenotypes(&a.phenotypes)?;
    let genotypes = if a.genotypes.extension().is_some_and(|e| e == "csv") {
        load_genotypes_text(&a.genotypes)?
    } else {
        load_genotypes(&a.genotypes)?
    };
    let cfg = GwasConfig {
        mad_cutoff: a.mad_cutoff,
        spatial,
        ld_r2: a.ld_r2,
        ld_window: a.ld_window,
        blink: BlinkConfig {
            max_iter: a.max_iter,
            ld_r2: a.ld_r2,
            ..BlinkConfig::default()
        },
    };
    let report = run_gwas(&phenotypes, &genotypes, &cfg)?;
    let out = &a.common.out;
    create_dir(out)?;
    let mut buf = Vec::new();
    write_gwas_csv(&report.hits, &mut buf)?;
    write(&out.join("gwas.csv"), &buf)?;
    let mut by_position = report.hits.clone();
    by_position.sort_by_key(|h| h.snp);
    buf.clear();
    write_manhattan_csv(&by_position, &mut buf)?;
    write(&out.join("manhattan.csv"), &buf)?;
    let mut blups = String::from("genotype_id,blup\n");
    for (g, b) in report.blup.genotypes.iter().zip(&report.blup.blups) {
        writeln!(blups, "{g},{b}").unwrap();
    }
    write(&out.join("blups.csv"), blups)?;
    let vc = &report.blup.components;
    let significant = report.hits.iter().filter(|h| h.fdr_p < a.fdr).count();
    let qtn_ids: Vec<&str> = report
        .hits
        .iter()
        .filter(|h| h.is_qtn)
        .map(|h| h.snp_id.as_str())
        .collect();
    let summary = format!(
        "samples_tested={}\nsnps_tested={}\noutliers_removed={}\nmad_zero={}\ntps_lambda={}\n\
         sigma2_g={}\nsigma2_e={}\nsigma2_g_clamped={}\nh2={}\niterations={}\nconverged={}\n\
         qtns={}\nsignificant={}\n",
        report.samples_tested,
        report.snps_tested,
        report.outliers_removed,
        report.mad_zero,
        report
            .tps_lambda
            .map_or("none".to_string(), |l| l.to_string()),
        vc.sigma2_g,
        vc.sigma2_e,
        vc.clamped,
        report.blup.h2,
        report.state.iterations,
        report.state.converged,
        qtn_ids.join(";"),
        significant
    );
    print!("{summary}");
    write(&out.join("summary.txt"), summary)
}
