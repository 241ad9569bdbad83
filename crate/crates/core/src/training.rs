//! Alternating critic/generator optimization over a synthetic dataset.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tint_autograd::{Adam, Real, Tensor};

use crate::colorlab::LabColor;
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::{critic_objective, generator_objective, mssim_max_scales, CriticLosses, GeneratorLosses, LossWeights, TrainBatch};
use crate::networks::{init_params, save_checkpoint, ArchSpec, ModelParams};
use crate::synthdata::{mix_seed, RegionChoice};
use crate::weakcolor::{weak_labels, EyeRegionConfig};

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const WEAK_LABELS: &str = "weak_labels.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
/// Largest tolerated fraction of training samples without weak labels.
pub const MAX_WEAK_FAILURES: f64 = 0.05;

const TARGET_SALT: u64 = 0x7461_7267_6574_73;
const SHUFFLE_SALT: u64 = 0x7368_7566_666c_65;
const STEP_SALT: u64 = 0x7374_6570_73;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub manifest: PathBuf,
    pub region: RegionChoice,
    /// Network input side; crops of another size are center-cropped and resized.
    pub crop_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub critic_steps: usize,
    pub lr_d: f64,
    pub lr_g: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub out_dir: PathBuf,
    pub arch: ArchSpec,
    /// MS-SSIM scales of the cycle term; `None` uses all the crop size allows.
    pub cycle_scales: Option<usize>,
    pub eye_region: EyeRegionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("data/dataset.jsonl"),
            region: RegionChoice::Lips,
            crop_size: 64,
            epochs: 200,
            batch_size: 16,
            critic_steps: 1,
            lr_d: 1e-3,
            lr_g: 3e-3,
            beta1: 0.5,
            beta2: 0.9,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 10,
            out_dir: PathBuf::from("runs/default"),
            arch: ArchSpec::default(),
            cycle_scales: None,
            eye_region: EyeRegionConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.critic_steps == 0 {
            return bad("batch size and critic steps must be at least 1".into());
        }
        if ![self.lr_d, self.lr_g].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return bad(format!("learning rates must be finite and non-negative: {} {}", self.lr_d, self.lr_g));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("moment coefficients must lie in [0, 1): {} {}", self.beta1, self.beta2));
        }
        self.weights.validate()?;
        self.arch.validate()?;
        self.arch.check_side(self.crop_size)?;
        if self.scales() == 0 {
            return bad(format!("crop size {} is too small for MS-SSIM", self.crop_size));
        }
        Ok(())
    }

    pub fn scales(&self) -> usize {
        self.cycle_scales.unwrap_or_else(|| mssim_max_scales(self.crop_size))
    }

    fn step_hparams(&self) -> StepConfig {
        StepConfig {
            critic_steps: self.critic_steps,
            weights: self.weights,
            cycle_scales: self.scales(),
        }
    }
}

/// Per-sample targets for one epoch, drawn uniformly from `pool`.
pub fn sample_target_colors(pool: &[LabColor], n: usize, epoch: u64, seed: u64) -> Result<Vec<LabColor>> {
    if pool.is_empty() {
        return Err(Error::Config("target color pool is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ TARGET_SALT, epoch));
    Ok((0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect())
}

/// Visiting order of `n` samples in `epoch`.
pub fn epoch_order(n: usize, epoch: u64, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed ^ SHUFFLE_SALT, epoch)));
    order
}

/// Parameters and optimizer moments.
#[derive(Clone, Debug)]
pub struct TrainState<R: Real> {
    pub params: ModelParams<R>,
    pub opt_d: Adam<R>,
    pub opt_g: Adam<R>,
}

impl<R: Real> TrainState<R> {
    pub fn new(params: ModelParams<R>, cfg: &TrainConfig) -> Self {
        let (b1, b2) = (R::lit(cfg.beta1), R::lit(cfg.beta2));
        Self {
            opt_d: Adam::new(&params.critic, R::lit(cfg.lr_d), b1, b2),
            opt_g: Adam::new(&params.generator, R::lit(cfg.lr_g), b1, b2),
            params,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepConfig {
    pub critic_steps: usize,
    pub weights: LossWeights,
    pub cycle_scales: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    /// Critic losses of the last critic update in this step.
    pub d: CriticLosses,
    pub g: GeneratorLosses,
    pub millis: f64,
}

impl StepRecord {
    pub fn is_finite(&self) -> bool {
        let d = [self.d.adv, self.d.gp, self.d.color, self.d.bg, self.d.total];
        let g = [self.g.adv, self.g.color, self.g.bg, self.g.cycle, self.g.total];
        d.iter().chain(&g).all(|v| v.is_finite())
    }
}

/// `critic_steps` critic updates, then one generator update.
pub fn train_step<R: Real>(
    state: &mut TrainState<R>,
    batch: &TrainBatch<R>,
    hp: &StepConfig,
    rng: &mut impl Rng,
) -> Result<StepRecord> {
    let start = Instant::now();
    let mut d = CriticLosses::default();
    for _ in 0..hp.critic_steps {
        let (losses, grads) = critic_objective(&state.params, batch, &hp.weights, rng)?;
        d = losses;
        if !grads.iter().all(Tensor::is_finite) {
            d.total = f64::NAN;
            break;
        }
        state.opt_d.update(&mut state.params.critic, &grads);
    }
    let mut record = StepRecord {
        step: state.params.step,
        epoch: 0,
        d,
        g: GeneratorLosses::default(),
        millis: 0.0,
    };
    if record.d.total.is_finite() {
        let (g, grads) = generator_objective(&state.params, batch, &hp.weights, hp.cycle_scales)?;
        record.g = g;
        if grads.iter().all(Tensor::is_finite) {
            state.opt_g.update(&mut state.params.generator, &grads);
        } else {
            record.g.total = f64::NAN;
        }
    } else {
        record.g.total = f64::NAN;
    }
    record.millis = start.elapsed().as_secs_f64() * 1e3;
    if !record.is_finite() || !state.params.is_finite() {
        return Err(Error::Diverged {
            step: record.step,
            record: serde_json::to_string(&record).unwrap_or_default(),
        });
    }
    state.params.step += 1;
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub color_g: f64,
    pub color_d: f64,
    pub bg_g: f64,
    pub cycle: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Start {
        samples: usize,
        skipped: usize,
        config: Box<TrainConfig>,
    },
    Step(StepRecord),
    Epoch(EpochSummary),
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::manifest(path, e.to_string()))
        })
        .collect()
}

/// A training crop in network units with its weak labels.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: String,
    pub image: ImageTensor,
    pub makeup: LabColor,
    pub skin: LabColor,
}

#[derive(Serialize, Deserialize)]
struct WeakRow {
    id: String,
    makeup: [f64; 3],
    skin: [f64; 3],
}

/// Loads the training split, extracting weak labels from the original crops.
/// Returns the prepared samples and the number skipped.
pub fn prepare_training_set(ds: &Dataset, cfg: &TrainConfig) -> Result<(Vec<Prepared>, usize)> {
    let records: Vec<_> = ds.split(Split::Train).filter(|r| cfg.region.admits(r.region)).collect();
    if records.is_empty() {
        return Err(Error::DatasetQuality(format!("no {:?} training samples", cfg.region)));
    }
    let results: Vec<Result<Option<Prepared>>> = records
        .par_iter()
        .map(|rec| {
            let img = ds.load_image(rec)?;
            match weak_labels(&img, ds.landmarks(rec), rec.region, &cfg.eye_region) {
                Ok(w) => Ok(Some(Prepared {
                    id: rec.id.clone(),
                    image: img.center_crop_resize(cfg.crop_size).to_signed(),
                    makeup: w.makeup,
                    skin: w.skin,
                })),
                Err(e) => {
                    warn!("{}: weak labels unavailable: {e}", rec.id);
                    Ok(None)
                }
            }
        })
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        out.extend(r?);
    }
    let skipped = records.len() - out.len();
    if skipped as f64 > MAX_WEAK_FAILURES * records.len() as f64 {
        return Err(Error::DatasetQuality(format!(
            "weak labels failed on {skipped} of {} training samples",
            records.len()
        )));
    }
    Ok((out, skipped))
}

/// Fails if any sample that contributed a weak label belongs to the test split.
pub fn audit_weak_labels(ds: &Dataset, weak_label_file: &Path) -> Result<usize> {
    let text = fs::read_to_string(weak_label_file).map_err(|e| Error::io(weak_label_file, e))?;
    let mut n = 0;
    for line in text.lines().filter(|l| !l.is_empty()) {
        let row: WeakRow = serde_json::from_str(line).map_err(|e| Error::manifest(weak_label_file, e.to_string()))?;
        match ds.records().iter().find(|r| r.id == row.id) {
            Some(r) if r.split == Split::Train => n += 1,
            Some(_) => return Err(Error::DatasetQuality(format!("{} is a test sample", row.id))),
            None => return Err(Error::DatasetQuality(format!("{} is not in the dataset", row.id))),
        }
    }
    Ok(n)
}

pub fn make_batch<R: Real>(samples: &[&Prepared], targets: Vec<LabColor>) -> Result<TrainBatch<R>> {
    let images: Vec<&ImageTensor> = samples.iter().map(|s| &s.image).collect();
    Ok(TrainBatch {
        x: ImageTensor::batch_to_tensor(&images)?,
        weak_makeup: samples.iter().map(|s| s.makeup).collect(),
        weak_skin: samples.iter().map(|s| s.skin).collect(),
        targets,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub log: PathBuf,
    pub epochs: Vec<EpochSummary>,
    pub samples: usize,
    pub skipped: usize,
}

struct LogWriter(BufWriter<File>, PathBuf);

impl LogWriter {
    fn write(&mut self, entry: &LogEntry) -> Result<()> {
        let line = serde_json::to_string(entry).expect("log entries serialize");
        writeln!(self.0, "{line}").map_err(|e| Error::io(&self.1, e))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Runs the configured schedule and writes checkpoints, the log and the weak
/// label table under `cfg.out_dir`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ds = Dataset::load(&cfg.manifest)?;
    let (samples, skipped) = prepare_training_set(&ds, cfg)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    let weak_path = cfg.out_dir.join(WEAK_LABELS);
    let mut weak = create(&weak_path)?;
    for s in &samples {
        let row = WeakRow {
            id: s.id.clone(),
            makeup: s.makeup.to_array(),
            skin: s.skin.to_array(),
        };
        writeln!(weak, "{}", serde_json::to_string(&row).expect("rows serialize")).map_err(|e| Error::io(&weak_path, e))?;
    }
    weak.flush().map_err(|e| Error::io(&weak_path, e))?;

    let log_path = cfg.out_dir.join(TRAIN_LOG);
    let mut log = LogWriter(create(&log_path)?, log_path.clone());
    log.write(&LogEntry::Start {
        samples: samples.len(),
        skipped,
        config: Box::new(cfg.clone()),
    })?;

    let pool: Vec<LabColor> = samples.iter().map(|s| s.makeup).collect();
    let mut params = init_params::<f32>(&cfg.arch, cfg.seed)?;
    params.input_size = Some(cfg.crop_size);
    let mut state = TrainState::new(params, cfg);
    let hp = cfg.step_hparams();
    let mut step_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed ^ STEP_SALT, 0));
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let targets = sample_target_colors(&pool, samples.len(), epoch as u64, cfg.seed)?;
        let order = epoch_order(samples.len(), epoch as u64, cfg.seed);
        let mut sums = EpochSummary {
            epoch,
            steps: 0,
            loss_d: 0.0,
            loss_g: 0.0,
            color_g: 0.0,
            color_d: 0.0,
            bg_g: 0.0,
            cycle: 0.0,
            seconds: 0.0,
        };
        for chunk in order.chunks(cfg.batch_size) {
            let picked: Vec<&Prepared> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch = make_batch::<f32>(&picked, chunk.iter().map(|&i| targets[i]).collect())?;
            let mut record = match train_step(&mut state, &batch, &hp, &mut step_rng) {
                Ok(r) => r,
                Err(e) => {
                    log.0.flush().ok();
                    return Err(e);
                }
            };
            record.epoch = epoch;
            sums.steps += 1;
            sums.loss_d += record.d.total;
            sums.loss_g += record.g.total;
            sums.color_g += record.g.color;
            sums.color_d += record.d.color;
            sums.bg_g += record.g.bg;
            sums.cycle += record.g.cycle;
            log.write(&LogEntry::Step(record))?;
        }
        let k = sums.steps.max(1) as f64;
        for v in [
            &mut sums.loss_d,
            &mut sums.loss_g,
            &mut sums.color_g,
            &mut sums.color_d,
            &mut sums.bg_g,
            &mut sums.cycle,
        ] {
            *v /= k;
        }
        sums.seconds = started.elapsed().as_secs_f64();
        info!(
            "epoch {}/{}: L_D {:.3} L_G {:.3} color_G {:.1} cycle {:.4} ({:.1}s)",
            epoch + 1,
            cfg.epochs,
            sums.loss_d,
            sums.loss_g,
            sums.color_g,
            sums.cycle,
            sums.seconds
        );
        log.write(&LogEntry::Epoch(sums.clone()))?;
        epochs.push(sums);
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs {
            save_checkpoint(&state.params, &cfg.out_dir.join(format!("epoch{:04}.ckpt", epoch + 1)))?;
        }
    }
    log.0.flush().map_err(|e| Error::io(&log_path, e))?;
    let final_checkpoint = cfg.out_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&state.params, &final_checkpoint)?;
    Ok(TrainOutcome {
        final_checkpoint,
        log: log_path,
        epochs,
        samples: samples.len(),
        skipped,
    })
}
