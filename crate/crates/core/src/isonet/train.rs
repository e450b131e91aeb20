use serde::{Deserialize, Serialize};

use super::pairs::{PairSet, PatchPair, Symmetry};
use crate::error::{Error, Result};
use crate::nn::{adam_step, psnr_loss, Mode, Network, Tensor4, TrainConfig};
use crate::rng::{derive_seed, Rng};

/// Per-epoch training statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    /// Mean loss per pair (−PSNR in dB) over each epoch.
    pub train_loss: Vec<f64>,
    /// Mean PSNR of the validation pairs after each epoch.
    pub val_psnr: Vec<f64>,
    pub train_pairs: usize,
    pub val_pairs: usize,
}

/// Fraction of slices held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.1;

/// Splits pair indices into (train, validation) by source slice.
pub fn split_by_slice(pairs: &PairSet, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut slices: Vec<usize> = pairs.pairs.iter().map(|p| p.slice).collect();
    slices.sort_unstable();
    slices.dedup();
    let n_val = if slices.len() >= 2 {
        ((slices.len() as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, slices.len() - 1)
    } else {
        0
    };
    Rng::new(seed).shuffle(&mut slices);
    let held: Vec<usize> = slices[..n_val].to_vec();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, p) in pairs.pairs.iter().enumerate() {
        if held.contains(&p.slice) {
            val.push(i)
        } else {
            train.push(i)
        }
    }
    (train, val)
}

fn batch_tensors(pairs: &[&PatchPair], syms: &[Symmetry]) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
    let first = &pairs[0].input;
    let (w, h) = (first.width(), first.height());
    let mut x = Vec::with_capacity(pairs.len() * w * h);
    let mut y = Vec::with_capacity(pairs.len() * w * h);
    for (p, &s) in pairs.iter().zip(syms) {
        let (i, t) = (s.apply(&p.input), s.apply(&p.target));
        if (i.width(), i.height()) != (w, h) {
            return Err(Error::Shape("training patches must share one size".into()));
        }
        x.extend_from_slice(i.data());
        y.extend_from_slice(t.data());
    }
    let (ow, oh) = {
        let s = syms[0].apply(first);
        (s.width(), s.height())
    };
    Ok((
        Tensor4::new([pairs.len(), 1, oh, ow], x)?,
        Tensor4::new([pairs.len(), 1, oh, ow], y)?,
    ))
}

/// Mean PSNR over `idx` with peak = max of each target.
pub fn evaluate(net: &Network<f32>, pairs: &PairSet, idx: &[usize], batch: usize) -> Result<f64> {
    if idx.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in idx.chunks(batch.max(1)) {
        let refs: Vec<&PatchPair> = chunk.iter().map(|&i| &pairs.pairs[i]).collect();
        let (x, y) = batch_tensors(&refs, &vec![Symmetry::Identity; refs.len()])?;
        let (loss, _) = psnr_loss(&net.predict(&x)?, &y)?;
        total -= loss;
    }
    Ok(total / idx.len() as f64)
}

/// Epoch loop: seeded shuffle, one random allowed symmetry per pair per
/// epoch, PSNR loss, backward, Adam. On a non-finite loss the network is
/// restored to the end of the last finite epoch and an error returned.
pub fn train(
    net: &mut Network<f32>,
    pairs: &PairSet,
    cfg: &TrainConfig,
    symmetries: &[Symmetry],
) -> Result<LossHistory> {
    cfg.validate()?;
    if pairs.pairs.is_empty() {
        return Err(Error::InvalidParameter(
            "training needs at least one pair".into(),
        ));
    }
    let symmetries = if symmetries.is_empty() {
        &[Symmetry::Identity][..]
    } else {
        symmetries
    };
    let (train_idx, val_idx) = split_by_slice(pairs, derive_seed(cfg.seed, "validation-split"));
    let mut history = LossHistory {
        train_pairs: train_idx.len(),
        val_pairs: val_idx.len(),
        ..LossHistory::default()
    };
    let mut order = train_idx.clone();
    let mut rng = Rng::new(derive_seed(cfg.seed, "train"));
    let mut last_good = net.clone();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&PatchPair> = chunk.iter().map(|&i| &pairs.pairs[i]).collect();
            let syms: Vec<Symmetry> = refs
                .iter()
                .map(|_| symmetries[rng.below(symmetries.len())])
                .collect();
            let (x, y) = batch_tensors(&refs, &syms)?;
            let mask_seed = derive_seed(cfg.seed, &format!("dropout/{epoch}/{b}"));
            let trace = net.forward(&x, Mode::Train { seed: mask_seed })?;
            let (loss, grad) = psnr_loss(trace.output(), &y)?;
            if !loss.is_finite() {
                *net = last_good;
                log::error!(
                    "non-finite loss in epoch {epoch}, batch {b}; keeping epoch {} weights",
                    epoch as i64 - 1
                );
                return Err(Error::NonFiniteLoss { epoch });
            }
            let grads = net.backward(&trace, &grad, false)?;
            adam_step(net, &grads, cfg)?;
            sum += loss;
        }
        let mean = sum / order.len() as f64;
        let val = evaluate(net, pairs, &val_idx, cfg.batch_size)?;
        log::info!(
            "epoch {}/{}: loss {mean:.4} val psnr {val:.3} dB",
            epoch + 1,
            cfg.epochs
        );
        if !mean.is_finite()
            || net
                .convs()
                .any(|c| c.weight.value.iter().any(|v| !v.is_finite()))
        {
            *net = last_good;
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.train_loss.push(mean);
        history.val_psnr.push(val);
        last_good = net.clone();
    }
    Ok(history)
}
