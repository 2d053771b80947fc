//! Pairing of samples and the pairwise training objective over a
//! weight-shared twin forward.
//!
//! Both branch forwards run through the single parameter store of one
//! model, so weight sharing is structural: there is nothing to copy and
//! nothing that can drift apart. Per pair, the prediction loss is
//! `(y0 - yhat0)^2 + (y1 - yhat1)^2` and the siamese loss is
//! `| ||f0 - f1||^2 - (y0 - y1)^2 |`, aligning feature distance with label
//! distance. Batch losses are means over pairs.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::model::QSwinModel;
use crate::tensor::{Tape, Tensor};

/// Indexes of a training pair within a batch, plus the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SiamesePair {
    pub i0: usize,
    pub i1: usize,
    pub y0: f32,
    pub y1: f32,
}

/// The (prediction, siamese, total) loss triple with its balance weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub prediction_loss: f32,
    pub siamese_loss: f32,
    pub total: f32,
    pub alpha: f32,
}

/// Uniform random pairing without self-pairs: the batch is shuffled and
/// split into disjoint pairs; an odd leftover is paired with a random
/// earlier sample, so every sample appears in at least one pair.
pub fn make_pairs(labels: &[f32], rng: &mut ChaCha8Rng) -> Result<Vec<SiamesePair>> {
    if labels.len() < 2 {
        return Err(Error::contract(
            "make_pairs",
            format!("need at least 2 samples, got {}", labels.len()),
        ));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let mut pairs = Vec::with_capacity(labels.len().div_ceil(2));
    let mut chunks = order.chunks_exact(2);
    for pair in &mut chunks {
        pairs.push(SiamesePair {
            i0: pair[0],
            i1: pair[1],
            y0: labels[pair[0]],
            y1: labels[pair[1]],
        });
    }
    if let [leftover] = chunks.remainder() {
        let mate = order[rng.random_range(0..labels.len() - 1)];
        pairs.push(SiamesePair {
            i0: *leftover,
            i1: mate,
            y0: labels[*leftover],
            y1: labels[mate],
        });
    }
    Ok(pairs)
}

/// `(y0 - yhat0)^2 + (y1 - yhat1)^2` for one pair of scalars.
pub fn prediction_loss(y0: f32, yhat0: f32, y1: f32, yhat1: f32) -> f32 {
    let e0 = y0 - yhat0;
    let e1 = y1 - yhat1;
    e0 * e0 + e1 * e1
}

/// `| ||f0 - f1||^2 - (y0 - y1)^2 |` for one pair of feature vectors.
pub fn siamese_loss(f0: &[f32], f1: &[f32], y0: f32, y1: f32) -> Result<f32> {
    if f0.len() != f1.len() {
        return Err(Error::Shape {
            op: "siamese_loss",
            lhs: vec![f0.len()],
            rhs: vec![f1.len()],
        });
    }
    let dist2: f32 = f0
        .iter()
        .zip(f1)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum();
    let yd = y0 - y1;
    Ok((dist2 - yd * yd).abs())
}

/// Combine the two losses with balance weight `alpha >= 0`.
pub fn total_loss(lp: f32, ls: f32, alpha: f32) -> Result<LossBundle> {
    if alpha < 0.0 {
        return Err(Error::contract(
            "total_loss",
            format!("alpha must be non-negative, got {alpha}"),
        ));
    }
    Ok(LossBundle {
        prediction_loss: lp,
        siamese_loss: ls,
        total: lp + alpha * ls,
        alpha,
    })
}

/// Run both pair branches through the same parameter store.
pub fn siamese_forward(
    model: &QSwinModel,
    tape: &Tape,
    x0: &Tensor,
    x1: &Tensor,
) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let (f0, yhat0) = model.forward(tape, x0)?;
    let (f1, yhat1) = model.forward(tape, x1)?;
    Ok((f0, yhat0, f1, yhat1))
}

/// Differentiable batch objective over pairs; also reports the realized
/// loss components and the per-branch predictions.
pub struct PairBatchLoss {
    pub loss: Tensor,
    pub bundle: LossBundle,
    /// (label, prediction) for every branch forward in the batch.
    pub predictions: Vec<(f32, f32)>,
}

/// Build the training graph for a batch of pairs: mean prediction loss,
/// plus `alpha` times the mean siamese loss when `use_siamese` is set (the
/// siamese branch is omitted entirely otherwise).
pub fn pair_batch_loss(
    model: &QSwinModel,
    tape: &Tape,
    images: &[&LabeledImage],
    pairs: &[SiamesePair],
    alpha: f32,
    use_siamese: bool,
) -> Result<PairBatchLoss> {
    if pairs.is_empty() {
        return Err(Error::contract("pair_batch_loss", "no pairs supplied"));
    }
    if alpha < 0.0 {
        return Err(Error::contract(
            "pair_batch_loss",
            format!("alpha must be non-negative, got {alpha}"),
        ));
    }
    let mut lp_sum: Option<Tensor> = None;
    let mut ls_sum: Option<Tensor> = None;
    let mut predictions = Vec::with_capacity(pairs.len() * 2);
    for pair in pairs {
        let x0 = images[pair.i0].to_tensor()?;
        let x1 = images[pair.i1].to_tensor()?;
        let (f0, yhat0, f1, yhat1) = siamese_forward(model, tape, &x0, &x1)?;
        predictions.push((pair.y0, yhat0.item()));
        predictions.push((pair.y1, yhat1.item()));

        let y0 = Tensor::new(vec![pair.y0], &[1])?;
        let y1 = Tensor::new(vec![pair.y1], &[1])?;
        let e0 = tape.sub(&y0, &yhat0)?;
        let e1 = tape.sub(&y1, &yhat1)?;
        let lp = tape.add(
            &tape.sum(&tape.hadamard(&e0, &e0)?)?,
            &tape.sum(&tape.hadamard(&e1, &e1)?)?,
        )?;
        lp_sum = Some(match lp_sum {
            Some(acc) => tape.add(&acc, &lp)?,
            None => lp,
        });

        if use_siamese {
            let fd = tape.sub(&f0, &f1)?;
            let dist2 = tape.sum(&tape.hadamard(&fd, &fd)?)?;
            let yd = pair.y0 - pair.y1;
            let label_dist2 = Tensor::scalar(yd * yd);
            let ls = tape.abs(&tape.sub(&dist2, &label_dist2)?)?;
            ls_sum = Some(match ls_sum {
                Some(acc) => tape.add(&acc, &ls)?,
                None => ls,
            });
        }
    }
    let inv = 1.0 / pairs.len() as f32;
    let lp_mean = tape.scale(&lp_sum.expect("at least one pair"), inv)?;
    let (loss, bundle) = match ls_sum {
        Some(ls) => {
            let ls_mean = tape.scale(&ls, inv)?;
            let total = tape.add(&lp_mean, &tape.scale(&ls_mean, alpha)?)?;
            let bundle = total_loss(lp_mean.item(), ls_mean.item(), alpha)?;
            (total, bundle)
        }
        None => {
            let bundle = total_loss(lp_mean.item(), 0.0, alpha)?;
            (lp_mean, bundle)
        }
    };
    Ok(PairBatchLoss {
        loss,
        bundle,
        predictions,
    })
}
