//! Mini-batch SGD over the three-head model.
//!
//! The batch objective is the sum over yaw, pitch and roll of the per-angle
//! loss (combined, or regression alone). Parameters and optimizer state are
//! kept f32-representable after every update so that a checkpoint captures
//! the run exactly and resuming is bitwise identical to not stopping.

mod checkpoint;
mod sgd;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::write_atomic;
use crate::dataset::{filter_evaluable, prepare_input, shuffled_order, Sample};
use crate::error::{Error, Result};
use crate::geometry::{AngleBinning, HeadPose, Patch, PixelNorm, EVALUABLE_RANGE_DEG};
use crate::loss::{mse_loss, temperature_ce_loss, LossConfig};
use crate::net::{round_f32, HeadGrad, Model, ModelSpec};

pub use checkpoint::Checkpoint;
pub use sgd::Sgd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    #[default]
    Combined,
    RegressionOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub k: f64,
    pub loss: LossConfig,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub pixel_norm: PixelNorm,
    /// Write an intermediate checkpoint every this many epochs (0 = only at
    /// the end).
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-4,
            momentum: 0.9,
            k: 0.5,
            loss: LossConfig::default(),
            loss_mode: LossMode::Combined,
            seed: 0,
            pixel_norm: PixelNorm::IMAGENET,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must be in [0, 1)", self.momentum));
        }
        if !(self.k >= 0.0) || !self.k.is_finite() {
            return bad(format!("K {} must be >= 0", self.k));
        }
        self.pixel_norm.validate()?;
        self.loss.validate()
    }
}

/// Batch-mean loss components, indexed yaw, pitch, roll.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub classification: [f64; 3],
    pub regression: [f64; 3],
}

impl LossParts {
    /// The optimized objective.
    pub fn total(&self, mode: LossMode, alpha: f64) -> f64 {
        (0..3)
            .map(|a| match mode {
                LossMode::Combined => self.classification[a] + alpha * self.regression[a],
                LossMode::RegressionOnly => self.regression[a],
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based index of the optimizer update.
    pub step: u64,
    /// 0-based epoch the step belongs to.
    pub epoch: usize,
    pub batch_size: usize,
    pub total: f64,
    pub parts: LossParts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted means over the epoch's steps.
    pub total: f64,
    pub parts: LossParts,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Samples outside the +/-90 deg class range, excluded from training.
    pub dropped: usize,
    pub wall_time_secs: f64,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str =
        "step,epoch,total,L_S_yaw,L_S_pitch,L_S_roll,L_MSE_yaw,L_MSE_pitch,L_MSE_roll";

    /// Per-step log. Wall time is left out so the log is reproducible.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.steps {
            let p = &r.parts;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.step,
                r.epoch,
                r.total,
                p.classification[0],
                p.classification[1],
                p.classification[2],
                p.regression[0],
                p.regression[1],
                p.regression[2]
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
}

/// Samples are processed in fixed-size chunks whose partial gradients are
/// summed in chunk order, so results do not depend on the thread count.
const GRAD_CHUNK: usize = 4;

/// Patches above this total size are prepared per batch instead of once.
const PATCH_CACHE_BYTES: usize = 1 << 29;

/// Loss components and parameter gradient of the batch objective.
pub fn batch_gradient(
    model: &Model,
    inputs: &[&Patch],
    targets: &[HeadPose],
    classes: &[[usize; 3]],
    loss: &LossConfig,
    mode: LossMode,
) -> Result<(LossParts, Vec<f64>)> {
    let n = inputs.len();
    if n == 0 || targets.len() != n || classes.len() != n {
        return Err(Error::InvalidBatch(format!(
            "{n} inputs, {} targets, {} class rows",
            targets.len(),
            classes.len()
        )));
    }
    loss.validate()?;
    let inv_n = 1.0 / n as f64;
    let n_params = model.params().len();
    let idx: Vec<usize> = (0..n).collect();
    let chunks: Vec<Result<(Vec<[f64; 6]>, Vec<f64>)>> = idx
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = vec![0.0; n_params];
            let mut per_sample = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (pred, trace) = model.forward_traced(inputs[i])?;
                let truth = targets[i].angles();
                let mut values = [0.0; 6];
                let mut head_grads: [HeadGrad; 3] = std::array::from_fn(|_| HeadGrad::zero(model.n_bins()));
                for a in 0..3 {
                    let p = &pred.angles[a];
                    let reg = mse_loss(&[p.continuous_deg], &[truth[a]])?;
                    let cls = temperature_ce_loss(&p.logits, &[classes[i][a]], loss.temperature, loss.n_bins)?;
                    values[a] = cls.value;
                    values[3 + a] = reg.value;
                    let hg = &mut head_grads[a];
                    match mode {
                        LossMode::Combined => {
                            hg.continuous = loss.alpha * reg.grad[0] * inv_n;
                            for (d, g) in hg.logits.iter_mut().zip(&cls.grad) {
                                *d = g * inv_n;
                            }
                        }
                        LossMode::RegressionOnly => hg.continuous = reg.grad[0] * inv_n,
                    }
                }
                model.backward(&trace, &head_grads, &mut grads)?;
                per_sample.push(values);
            }
            Ok((per_sample, grads))
        })
        .collect();

    let mut parts = LossParts::default();
    let mut total_grad = vec![0.0; n_params];
    for chunk in chunks {
        let (per_sample, grads) = chunk?;
        for v in per_sample {
            for a in 0..3 {
                parts.classification[a] += v[a] * inv_n;
                parts.regression[a] += v[3 + a] * inv_n;
            }
        }
        for (t, g) in total_grad.iter_mut().zip(&grads) {
            *t += g;
        }
    }
    Ok((parts, total_grad))
}

/// Seed for the data order of one epoch.
pub fn epoch_shuffle_seed(seed: u64, epoch: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng.next_u64()
}

struct Prepared {
    patches: Option<Vec<Patch>>,
    classes: Vec<[usize; 3]>,
}

fn prepare_dataset(samples: &[Sample], cfg: &TrainConfig, input_side: usize, n_bins: usize) -> Result<Prepared> {
    let binning = AngleBinning {
        half_range_deg: (n_bins / 2) as u32,
    };
    let classes = samples
        .iter()
        .map(|s| {
            let a = s.pose.angles();
            let class = |v| binning.angle_to_class(v).map_err(|e| e.for_sample(&s.source_id));
            Ok([class(a[0])?, class(a[1])?, class(a[2])?])
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = samples.len() * 3 * input_side * input_side * std::mem::size_of::<f32>();
    let patches = if bytes <= PATCH_CACHE_BYTES {
        Some(
            samples
                .par_iter()
                .map(|s| prepare_input(s, cfg.k, input_side, &cfg.pixel_norm))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(Prepared { patches, classes })
}

fn round_all(v: &mut [f64]) {
    for x in v {
        *x = round_f32(*x);
    }
}

fn write_run_files(dir: &Path, spec: &ModelSpec, cfg: &TrainConfig, history: &TrainHistory) -> Result<()> {
    let snapshot = serde_json::json!({ "model": spec, "train": cfg });
    write_atomic(&dir.join("config.json"), |w| Ok(serde_json::to_writer_pretty(&mut *w, &snapshot)?))?;
    let csv = history.to_csv();
    write_atomic(&dir.join("history.csv"), |w| Ok(std::io::Write::write_all(w, csv.as_bytes())?))?;
    let timing = serde_json::json!({ "wall_time_secs": history.wall_time_secs, "dropped": history.dropped });
    write_atomic(&dir.join("timing.json"), |w| Ok(serde_json::to_writer_pretty(&mut *w, &timing)?))
}

pub fn checkpoint_path(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoint.hpa")
}

fn run(start: Checkpoint, samples: &[Sample], cfg: &TrainConfig, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let t0 = Instant::now();
    let Checkpoint {
        mut model,
        velocity,
        epoch: first_epoch,
        mut step,
        ..
    } = start;
    if cfg.loss.n_bins != model.n_bins() {
        return Err(Error::InvalidParameter(format!(
            "loss uses {} bins, model has {}",
            cfg.loss.n_bins,
            model.n_bins()
        )));
    }
    let (samples, dropped) = filter_evaluable(samples.to_vec(), EVALUABLE_RANGE_DEG);
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!("no trainable samples ({dropped} dropped)")));
    }
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::load(dir, e))?;
    }
    let input_side = model.spec().input_side;
    let prepared = prepare_dataset(&samples, cfg, input_side, model.n_bins())?;
    let mut opt = Sgd::with_velocity(cfg.learning_rate, cfg.momentum, velocity);
    let mut history = TrainHistory {
        dropped,
        ..Default::default()
    };

    for epoch in first_epoch..first_epoch + cfg.epochs {
        let order = shuffled_order(samples.len(), epoch_shuffle_seed(cfg.seed, epoch));
        let mut epoch_sum = (0.0, LossParts::default(), 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let owned: Vec<Patch>;
            let inputs: Vec<&Patch> = match &prepared.patches {
                Some(p) => idx.iter().map(|&i| &p[i]).collect(),
                None => {
                    owned = idx
                        .par_iter()
                        .map(|&i| prepare_input(&samples[i], cfg.k, input_side, &cfg.pixel_norm))
                        .collect::<Result<Vec<_>>>()?;
                    owned.iter().collect()
                }
            };
            let targets: Vec<HeadPose> = idx.iter().map(|&i| samples[i].pose).collect();
            let classes: Vec<[usize; 3]> = idx.iter().map(|&i| prepared.classes[i]).collect();
            let (parts, grads) = batch_gradient(&model, &inputs, &targets, &classes, &cfg.loss, cfg.loss_mode)?;
            step += 1;
            let total = parts.total(cfg.loss_mode, cfg.loss.alpha);
            if !total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::DivergedTraining { step });
            }
            opt.step(model.params_mut().values_mut(), &grads);
            round_all(model.params_mut().values_mut());
            round_all(opt.velocity_mut());

            let w = idx.len() as f64;
            epoch_sum.0 += total * w;
            for a in 0..3 {
                epoch_sum.1.classification[a] += parts.classification[a] * w;
                epoch_sum.1.regression[a] += parts.regression[a] * w;
            }
            epoch_sum.2 += idx.len();
            history.steps.push(StepRecord {
                step,
                epoch,
                batch_size: idx.len(),
                total,
                parts,
            });
        }
        let n = epoch_sum.2 as f64;
        let mut mean = epoch_sum.1;
        for a in 0..3 {
            mean.classification[a] /= n;
            mean.regression[a] /= n;
        }
        history.epochs.push(EpochRecord {
            epoch,
            total: epoch_sum.0 / n,
            parts: mean,
        });
        let done = epoch + 1;
        if let Some(dir) = run_dir {
            if cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && done < first_epoch + cfg.epochs {
                let ckpt = Checkpoint {
                    model: model.clone(),
                    velocity: opt.velocity().to_vec(),
                    epoch: done,
                    step,
                    config: cfg.clone(),
                };
                let ckdir = dir.join("checkpoints");
                std::fs::create_dir_all(&ckdir).map_err(|e| Error::load(&ckdir, e))?;
                ckpt.save(&ckdir.join(format!("epoch_{done:04}.hpa")))?;
            }
        }
    }

    history.wall_time_secs = t0.elapsed().as_secs_f64();
    let checkpoint = Checkpoint {
        model,
        velocity: opt.velocity().to_vec(),
        epoch: first_epoch + cfg.epochs,
        step,
        config: cfg.clone(),
    };
    if let Some(dir) = run_dir {
        checkpoint.save(&checkpoint_path(dir))?;
        write_run_files(dir, checkpoint.model.spec(), cfg, &history)?;
    }
    Ok(TrainOutcome { checkpoint, history })
}

/// Trains `model` from its current parameters for `cfg.epochs` epochs. With
/// a run directory, writes `config.json`, `history.csv`, `timing.json`,
/// the final `checkpoint.hpa` and any intermediate checkpoints.
pub fn train(model: Model, samples: &[Sample], cfg: &TrainConfig, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    let velocity = vec![0.0; model.params().len()];
    let start = Checkpoint {
        model,
        velocity,
        epoch: 0,
        step: 0,
        config: cfg.clone(),
    };
    run(start, samples, cfg, run_dir)
}

/// Continues a run for `cfg.epochs` further epochs from the stored epoch,
/// step and momentum state. `spec` is the architecture the caller expects.
pub fn resume(
    checkpoint: Checkpoint,
    spec: &ModelSpec,
    samples: &[Sample],
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if !checkpoint.model.spec().is_compatible(spec) {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint model {:?} does not match requested {:?}",
            checkpoint.model.spec(),
            spec
        )));
    }
    run(checkpoint, samples, cfg, run_dir)
}

#[cfg(test)]
mod tests;
