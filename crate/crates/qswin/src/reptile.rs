//! Reptile meta-optimization wrapped around an inner optimizer, plus the
//! plain mini-batch trainer used when the meta loop is toggled off.
//!
//! Each meta step snapshots the parameters, runs `k` inner optimizer steps
//! per sampled task (a disjoint shard of the meta-batch), and interpolates
//! the parameters toward the adapted result: `phi + eta * (phi' - phi)`,
//! averaging the per-task directions when there is more than one task.
//! With `k = 1`, `eta = 1`, and a single task per meta-batch the machinery
//! degenerates to the base optimizer, bit for bit.
//!
//! Every random choice is derived from `(seed, epoch, batch, task, step)`
//! rather than from one shared stream, which keeps the degenerate reptile
//! path and the plain trainer on identical pairing sequences and makes
//! per-task work order-independent.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::QSwinModel;
use crate::optim::{interpolate, OptKind, Optimizer};
use crate::params::Snapshot;
use crate::quadratic::RelinearSchedule;
use crate::siamese::{make_pairs, pair_batch_loss};
use crate::tensor::Tape;

/// Meta-update hyperparameters.
#[derive(Debug, Clone)]
pub struct ReptileConfig {
    /// Inner optimizer steps per task (`k`).
    pub inner_steps: usize,
    /// Task shard size; the meta-batch splits into shards of this size.
    pub inner_batch: usize,
    /// Fallback inner learning rate for uses outside a schedule.
    pub inner_lr: f32,
    /// Interpolation step `eta` in `[0, 1]`.
    pub meta_step: f32,
    /// Shards per meta-batch implied by the batch sizes (informational;
    /// the split itself is driven by `inner_batch`).
    pub tasks_per_meta_batch: usize,
    pub inner_optimizer: OptKind,
}

impl ReptileConfig {
    pub fn new(
        inner_steps: usize,
        inner_batch: usize,
        inner_lr: f32,
        meta_step: f32,
        meta_batch: usize,
        inner_optimizer: OptKind,
    ) -> Result<ReptileConfig> {
        let cfg = ReptileConfig {
            inner_steps,
            inner_batch,
            inner_lr,
            meta_step,
            tasks_per_meta_batch: meta_batch.div_ceil(inner_batch.max(1)),
            inner_optimizer,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 {
            return Err(Error::Config("inner_steps (k) must be at least 1".into()));
        }
        if self.inner_batch < 2 {
            return Err(Error::Config(
                "inner_batch must be at least 2 to form pairs".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.meta_step) {
            return Err(Error::Config(format!(
                "meta step {} outside [0, 1]",
                self.meta_step
            )));
        }
        Ok(())
    }
}

/// Epoch count, meta-batch size, and the two-track learning-rate schedule.
#[derive(Debug, Clone)]
pub struct TrainSchedule {
    pub total_epochs: usize,
    pub meta_batch_size: usize,
    pub relinear: RelinearSchedule,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(Error::Config("total_epochs must be positive".into()));
        }
        if self.meta_batch_size < 2 {
            return Err(Error::Config("meta batch must be at least 2".into()));
        }
        if self.relinear.unfreeze_epoch >= self.total_epochs {
            return Err(Error::Config(format!(
                "unfreeze epoch {} not before total epochs {}",
                self.relinear.unfreeze_epoch, self.total_epochs
            )));
        }
        self.relinear.validate()
    }
}

/// Loss/metric toggles shared by both trainer paths.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub alpha: f32,
    pub siamese: bool,
    pub reptile: bool,
    pub seed: u64,
}

/// One CSV row of the training report.
#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub split: String,
    pub prediction_loss: f64,
    pub siamese_loss: f64,
    pub total_loss: f64,
    pub mae: f64,
    pub mse: f64,
    pub pcc: Option<f64>,
    pub base_lr: f32,
    pub quad_lr: f32,
    pub wall_seconds: f64,
}

/// Append-only per-epoch training log.
#[derive(Debug, Default, Clone)]
pub struct TrainingReport {
    pub rows: Vec<EpochRow>,
}

impl TrainingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,split,prediction_loss,siamese_loss,total_loss,mae,mse,pcc,base_lr,quad_lr,wall_seconds\n",
        );
        for r in &self.rows {
            let pcc = r.pcc.map(|v| format!("{v}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.split,
                r.prediction_loss,
                r.siamese_loss,
                r.total_loss,
                r.mae,
                r.mse,
                pcc,
                r.base_lr,
                r.quad_lr,
                r.wall_seconds
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Final row for a split, if any.
    pub fn last_row(&self, split: &str) -> Option<&EpochRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }
}

// Purpose tags for seed derivation.
const PURPOSE_SHUFFLE: u64 = 1;
const PURPOSE_SPLIT: u64 = 2;
const PURPOSE_PAIR: u64 = 3;
const PURPOSE_VAL: u64 = 4;

fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x9e3779b97f4a7c15u64;
    for &p in parts {
        acc ^= p.wrapping_add(0x9e3779b97f4a7c15)
            .wrapping_add(acc << 6)
            .wrapping_add(acc >> 2);
        acc = acc.wrapping_mul(0xbf58476d1ce4e5b9);
        acc ^= acc >> 29;
    }
    acc
}

/// Disjoint random shards of `inner_batch` indexes each; a trailing
/// singleton is folded into the previous shard so that every task can form
/// at least one pair. A meta-batch that fits a single shard passes through
/// unshuffled, keeping the degenerate single-task path identical to the
/// plain trainer.
pub fn sample_tasks(indices: &[usize], inner_batch: usize, seed: u64) -> Vec<Vec<usize>> {
    if indices.len() <= inner_batch.max(1) {
        return vec![indices.to_vec()];
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tasks: Vec<Vec<usize>> = order
        .chunks(inner_batch.max(1))
        .map(|c| c.to_vec())
        .collect();
    if let Some(tail) = tasks.pop_if(|t| t.len() < 2) {
        tasks.last_mut().unwrap().extend(tail);
    }
    tasks
}

struct StepStats {
    prediction_loss: f64,
    siamese_loss: f64,
    total_loss: f64,
    predictions: Vec<(f32, f32)>,
}

/// One gradient step on a batch: pair, build the loss graph, backprop, and
/// step the optimizer. A non-finite loss aborts with the first offending
/// op named.
fn train_on_batch(
    model: &mut QSwinModel,
    images: &[LabeledImage],
    batch: &[usize],
    opt: &mut Optimizer,
    lrs: (f32, f32),
    pair_seed: u64,
    opts: &TrainOptions,
) -> Result<StepStats> {
    let labels: Vec<f32> = batch.iter().map(|&i| images[i].label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(pair_seed);
    let pairs = make_pairs(&labels, &mut rng)?;
    let refs: Vec<&LabeledImage> = batch.iter().map(|&i| &images[i]).collect();
    let tape = Tape::new();
    let out = pair_batch_loss(model, &tape, &refs, &pairs, opts.alpha, opts.siamese)?;
    if !out.bundle.total.is_finite() {
        // Re-run with per-op numeric checks to name the first offender.
        let check = Tape::checking();
        let err = pair_batch_loss(model, &check, &refs, &pairs, opts.alpha, opts.siamese)
            .err()
            .unwrap_or(Error::Numeric { op: "loss" });
        return Err(err);
    }
    tape.backward(&out.loss)?;
    opt.step(model.store_mut(), lrs.0, lrs.1);
    Ok(StepStats {
        prediction_loss: out.bundle.prediction_loss as f64,
        siamese_loss: out.bundle.siamese_loss as f64,
        total_loss: out.bundle.total as f64,
        predictions: out.predictions,
    })
}

/// Per-epoch callback handed the model after each epoch's updates.
pub type EpochObserver<'a> = &'a mut dyn FnMut(usize, &QSwinModel);

/// Run `k` inner optimizer steps on one task, starting from (and
/// restoring) the snapshot `phi`; returns the adapted parameters.
#[allow(clippy::too_many_arguments)]
pub fn inner_update(
    model: &mut QSwinModel,
    phi: &Snapshot,
    images: &[LabeledImage],
    task: &[usize],
    rcfg: &ReptileConfig,
    lrs: (f32, f32),
    task_seed: u64,
    opts: &TrainOptions,
) -> Result<(Snapshot, Vec<StepStatsPublic>)> {
    if task.is_empty() {
        return Err(Error::contract("inner_update", "task supplies no samples"));
    }
    model.store_mut().load_snapshot(phi);
    let mut opt = Optimizer::new(rcfg.inner_optimizer);
    let mut stats = Vec::with_capacity(rcfg.inner_steps);
    for step in 0..rcfg.inner_steps {
        let pair_seed = mix(&[task_seed, PURPOSE_PAIR, step as u64]);
        let s = train_on_batch(model, images, task, &mut opt, lrs, pair_seed, opts)?;
        stats.push(StepStatsPublic {
            prediction_loss: s.prediction_loss,
            siamese_loss: s.siamese_loss,
            total_loss: s.total_loss,
            predictions: s.predictions,
        });
    }
    let adapted = model.store().snapshot();
    model.store_mut().load_snapshot(phi);
    Ok((adapted, stats))
}

/// Per-step numbers surfaced by [`inner_update`].
#[derive(Debug, Clone)]
pub struct StepStatsPublic {
    pub prediction_loss: f64,
    pub siamese_loss: f64,
    pub total_loss: f64,
    pub predictions: Vec<(f32, f32)>,
}

/// `phi + eta * (phi' - phi)` per parameter; with several adapted sets the
/// directions are averaged before the step. The single-task path uses the
/// exact interpolation, so `eta = 1` hands back `phi'` bit-for-bit.
pub fn meta_update(phi: &Snapshot, adapted: &[Snapshot], eta: f32) -> Snapshot {
    assert!(!adapted.is_empty(), "meta_update needs at least one task");
    if adapted.len() == 1 {
        return phi
            .iter()
            .zip(&adapted[0])
            .map(|(a, b)| interpolate(a, b, eta))
            .collect();
    }
    let inv = 1.0 / adapted.len() as f64;
    phi.iter()
        .enumerate()
        .map(|(pi, base)| {
            base.iter()
                .enumerate()
                .map(|(ci, &v)| {
                    let mean_dir: f64 = adapted
                        .iter()
                        .map(|a| (a[pi][ci] - v) as f64)
                        .sum::<f64>()
                        * inv;
                    v + eta * mean_dir as f32
                })
                .collect()
        })
        .collect()
}

/// Train in place over `schedule.total_epochs`, emitting one train row (and
/// one val row when `val` is non-empty) per epoch. The observer runs after
/// each epoch's updates with the current model.
pub fn train(
    model: &mut QSwinModel,
    train_set: &[LabeledImage],
    val_set: &[LabeledImage],
    schedule: &TrainSchedule,
    rcfg: &ReptileConfig,
    opts: &TrainOptions,
    mut observer: Option<EpochObserver<'_>>,
) -> Result<TrainingReport> {
    schedule.validate()?;
    rcfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::contract(
            "train",
            format!("need at least 2 training samples, got {}", train_set.len()),
        ));
    }
    let mut report = TrainingReport::default();
    let mut plain_opt = Optimizer::new(rcfg.inner_optimizer);

    for epoch in 0..schedule.total_epochs {
        let started = Instant::now();
        let base_lr = schedule.relinear.base_lr_at(epoch);
        let quad_lr = schedule.relinear.quad_lr_at(epoch);
        model.set_quadratic_trainable(schedule.relinear.quadratic_trainable_at(epoch));

        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(&[
            opts.seed,
            PURPOSE_SHUFFLE,
            epoch as u64,
        ])));

        let chunk_size = if opts.reptile {
            schedule.meta_batch_size
        } else {
            rcfg.inner_batch
        };
        let mut sums = (0.0f64, 0.0f64, 0.0f64);
        let mut steps = 0usize;
        let mut train_preds: Vec<(f32, f32)> = Vec::new();

        for (batch_idx, batch) in order.chunks(chunk_size).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            if opts.reptile {
                let split_seed = mix(&[opts.seed, PURPOSE_SPLIT, epoch as u64, batch_idx as u64]);
                let tasks = sample_tasks(batch, rcfg.inner_batch, split_seed);
                let phi = model.store().snapshot();
                let mut adapted = Vec::with_capacity(tasks.len());
                for (task_idx, task) in tasks.iter().enumerate() {
                    let task_seed = mix(&[
                        opts.seed,
                        epoch as u64,
                        batch_idx as u64,
                        task_idx as u64,
                    ]);
                    let (phi_prime, stats) = inner_update(
                        model,
                        &phi,
                        train_set,
                        task,
                        rcfg,
                        (base_lr, quad_lr),
                        task_seed,
                        opts,
                    )?;
                    adapted.push(phi_prime);
                    for s in stats {
                        sums.0 += s.prediction_loss;
                        sums.1 += s.siamese_loss;
                        sums.2 += s.total_loss;
                        steps += 1;
                        train_preds.extend(s.predictions);
                    }
                }
                let updated = meta_update(&phi, &adapted, rcfg.meta_step);
                model.store_mut().load_snapshot(&updated);
            } else {
                // Mirror the reptile derivation for task 0, step 0, so the
                // degenerate meta loop walks the same pairing stream.
                let task_seed = mix(&[opts.seed, epoch as u64, batch_idx as u64, 0u64]);
                let pair_seed = mix(&[task_seed, PURPOSE_PAIR, 0u64]);
                let s = train_on_batch(
                    model,
                    train_set,
                    batch,
                    &mut plain_opt,
                    (base_lr, quad_lr),
                    pair_seed,
                    opts,
                )?;
                sums.0 += s.prediction_loss;
                sums.1 += s.siamese_loss;
                sums.2 += s.total_loss;
                steps += 1;
                train_preds.extend(s.predictions);
            }
        }

        let wall = started.elapsed().as_secs_f64();
        let denom = steps.max(1) as f64;
        report.rows.push(make_row(
            epoch,
            "train",
            sums.0 / denom,
            sums.1 / denom,
            sums.2 / denom,
            &train_preds,
            base_lr,
            quad_lr,
            wall,
        ));
        if val_set.len() >= 2 {
            let row = validate_epoch(model, val_set, epoch, opts, base_lr, quad_lr)?;
            report.rows.push(row);
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs(epoch, model);
        }
    }
    Ok(report)
}

fn validate_epoch(
    model: &QSwinModel,
    val_set: &[LabeledImage],
    epoch: usize,
    opts: &TrainOptions,
    base_lr: f32,
    quad_lr: f32,
) -> Result<EpochRow> {
    let labels: Vec<f32> = val_set.iter().map(|img| img.label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[opts.seed, PURPOSE_VAL, epoch as u64]));
    let pairs = make_pairs(&labels, &mut rng)?;
    let refs: Vec<&LabeledImage> = val_set.iter().collect();
    let tape = Tape::no_grad();
    let out = pair_batch_loss(model, &tape, &refs, &pairs, opts.alpha, opts.siamese)?;
    Ok(make_row(
        epoch,
        "val",
        out.bundle.prediction_loss as f64,
        out.bundle.siamese_loss as f64,
        out.bundle.total as f64,
        &out.predictions,
        base_lr,
        quad_lr,
        0.0,
    ))
}

#[allow(clippy::too_many_arguments)]
fn make_row(
    epoch: usize,
    split: &str,
    lp: f64,
    ls: f64,
    total: f64,
    preds: &[(f32, f32)],
    base_lr: f32,
    quad_lr: f32,
    wall: f64,
) -> EpochRow {
    let y: Vec<f64> = preds.iter().map(|(t, _)| *t as f64).collect();
    let yhat: Vec<f64> = preds.iter().map(|(_, p)| *p as f64).collect();
    let (mae, mse, pcc) = if y.is_empty() {
        (f64::NAN, f64::NAN, None)
    } else {
        (
            metrics::mae(&y, &yhat).unwrap_or(f64::NAN),
            metrics::mse(&y, &yhat).unwrap_or(f64::NAN),
            metrics::pcc(&y, &yhat).ok(),
        )
    };
    EpochRow {
        epoch,
        split: split.to_string(),
        prediction_loss: lp,
        siamese_loss: ls,
        total_loss: total,
        mae,
        mse,
        pcc,
        base_lr,
        quad_lr,
        wall_seconds: wall,
    }
}
