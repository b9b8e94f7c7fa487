//! Frozen-encoder autoencoder for anomaly detection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::{encode_latents, EpochRecord};
use crate::error::{LensError, Result};
use crate::nn::{
    cosine_lr, mirrored_widths, mlp_specs, AdamConfig, AdamState, DenseNetwork, Gradients,
    DEFAULT_LEAKY_ALPHA,
};
use crate::rng::{derived_rng, stream};
use crate::schema::{BlockLayout, EncodedEntry};
use crate::synthetic::LabelKind;

pub const DEFAULT_NU: f64 = 2.0 / 3.0;
pub const BCE_CLAMP: f64 = 1e-7;

/// Entries per parallel work unit during fine-tuning.
pub(crate) const ENTRY_CHUNK: usize = 16;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps raw decoder output to a reconstruction: sigmoid on the categorical
/// region, identity on the numeric region.
pub fn activate_output(raw: &[f64], layout: &BlockLayout) -> Vec<f64> {
    let split = layout.categorical_dim();
    raw.iter()
        .enumerate()
        .map(|(i, &v)| if i < split { sigmoid(v) } else { v })
        .collect()
}

fn check_recon_args(recon: &[f64], target: &[f64], layout: &BlockLayout, nu: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(LensError::Config(format!("nu must lie in [0, 1], got {nu}")));
    }
    for len in [recon.len(), target.len()] {
        if len != layout.dimension() {
            return Err(LensError::DimensionMismatch {
                expected: layout.dimension(),
                actual: len,
            });
        }
    }
    Ok(())
}

/// `nu * BCE(categorical) + (1 - nu) * MSE(numeric)`, each averaged over its
/// own coordinates. `recon` holds post-sigmoid values on the categorical region.
pub fn combined_recon_loss(recon: &[f64], target: &[f64], layout: &BlockLayout, nu: f64) -> Result<f64> {
    check_recon_args(recon, target, layout, nu)?;
    let split = layout.categorical_dim();
    let mut bce = 0.0;
    for (&p, &t) in recon[..split].iter().zip(&target[..split]) {
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        bce -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    let mut mse = 0.0;
    for (&r, &t) in recon[split..].iter().zip(&target[split..]) {
        mse += (r - t) * (r - t);
    }
    let mut loss = 0.0;
    if split > 0 {
        loss += nu * bce / split as f64;
    }
    if layout.numeric_dim() > 0 {
        loss += (1.0 - nu) * mse / layout.numeric_dim() as f64;
    }
    Ok(loss)
}

/// Combined loss of raw decoder output and its gradient with respect to that
/// output. On the categorical region the gradient is the logit form `p - t`,
/// also where the clamp is active.
pub fn combined_recon_loss_with_grad(
    raw: &[f64],
    target: &[f64],
    layout: &BlockLayout,
    nu: f64,
) -> Result<(f64, Vec<f64>)> {
    let recon = activate_output(raw, layout);
    let loss = combined_recon_loss(&recon, target, layout, nu)?;
    let split = layout.categorical_dim();
    let n_num = layout.numeric_dim();
    let grad = recon
        .iter()
        .zip(target)
        .enumerate()
        .map(|(i, (&r, &t))| {
            if i < split {
                nu * (r - t) / split as f64
            } else {
                (1.0 - nu) * 2.0 * (r - t) / n_num as f64
            }
        })
        .collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AenConfig {
    pub epochs: usize,
    pub nu: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub leaky_alpha: f64,
    /// During evaluation, also fine-tune on a randomly initialized frozen encoder.
    pub baseline: bool,
    pub seed: u64,
}

impl Default for AenConfig {
    fn default() -> Self {
        AenConfig {
            epochs: 100,
            nu: DEFAULT_NU,
            batch_size: 128,
            learning_rate: 1e-3,
            leaky_alpha: DEFAULT_LEAKY_ALPHA,
            baseline: true,
            seed: 0,
        }
    }
}

impl AenConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(LensError::Config(format!("aen: {m}")));
        if !(0.0..=1.0).contains(&self.nu) {
            return err("nu must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return err("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return err("learning_rate must be > 0");
        }
        Ok(())
    }
}

/// Frozen encoder plus trainable mirror-symmetric decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AenModel {
    pub encoder: DenseNetwork,
    pub decoder: DenseNetwork,
    pub layout: BlockLayout,
}

/// Decoder mirroring `encoder`, Glorot-initialized from the decoder stream of `seed`.
pub fn init_decoder(encoder: &DenseNetwork, leaky_alpha: f64, seed: u64) -> Result<DenseNetwork> {
    let widths: Vec<usize> = encoder.specs().iter().map(|s| s.output_dim).collect();
    let specs = mlp_specs(
        encoder.output_dim(),
        &mirrored_widths(encoder.input_dim(), &widths),
        leaky_alpha,
    );
    DenseNetwork::glorot(&specs, &mut derived_rng(seed, &[stream::DECODER_INIT]))
}

impl AenModel {
    pub fn new(encoder: DenseNetwork, decoder: DenseNetwork, layout: BlockLayout) -> Result<Self> {
        if decoder.input_dim() != encoder.output_dim() {
            return Err(LensError::DimensionMismatch {
                expected: encoder.output_dim(),
                actual: decoder.input_dim(),
            });
        }
        if decoder.output_dim() != layout.dimension() || encoder.input_dim() != layout.dimension() {
            return Err(LensError::DimensionMismatch {
                expected: layout.dimension(),
                actual: decoder.output_dim(),
            });
        }
        Ok(AenModel {
            encoder,
            decoder,
            layout,
        })
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.encoder.predict(x)?;
        Ok(activate_output(&self.decoder.predict(&z)?, &self.layout))
    }
}

/// Mean combined loss over aligned latents and targets, with its decoder gradient.
pub fn decoder_batch_gradient(
    decoder: &DenseNetwork,
    latents: &[&[f64]],
    targets: &[&[f64]],
    layout: &BlockLayout,
    nu: f64,
) -> Result<(f64, Gradients)> {
    let scale = 1.0 / latents.len() as f64;
    let parts = latents
        .par_chunks(ENTRY_CHUNK)
        .zip(targets.par_chunks(ENTRY_CHUNK))
        .map(|(zs, xs)| {
            let mut g = Gradients::zeros_like(decoder);
            let mut total = 0.0;
            let (raws, tapes) = decoder.forward_batch(zs)?;
            let mut ds = Vec::with_capacity(zs.len());
            for (raw, x) in raws.iter().zip(xs) {
                let (loss, mut d) = combined_recon_loss_with_grad(raw, x, layout, nu)?;
                total += loss;
                d.iter_mut().for_each(|v| *v *= scale);
                ds.push(d);
            }
            let ds: Vec<&[f64]> = ds.iter().map(|d| d.as_slice()).collect();
            decoder.backward_batch(&tapes, &ds, Some(&mut g), false)?;
            Ok((total, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = parts.into_iter();
    let (mut total, mut g) = iter.next().expect("non-empty batch");
    for (t, h) in iter {
        total += t;
        g.add_assign(&h);
    }
    Ok((total * scale, g))
}

#[derive(Debug, Clone)]
pub struct AenOutcome {
    pub model: AenModel,
    pub log: Vec<EpochRecord>,
}

/// Trains a fresh decoder on top of the frozen `encoder`.
pub fn finetune_aen(
    encoder: &DenseNetwork,
    corpus: &[EncodedEntry],
    layout: &BlockLayout,
    cfg: &AenConfig,
) -> Result<AenOutcome> {
    finetune_aen_with(encoder, corpus, layout, cfg, |_| {})
}

pub fn finetune_aen_with(
    encoder: &DenseNetwork,
    corpus: &[EncodedEntry],
    layout: &BlockLayout,
    cfg: &AenConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<AenOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(LensError::Config("fine-tuning corpus is empty".into()));
    }
    let mut decoder = init_decoder(encoder, cfg.leaky_alpha, cfg.seed)?;
    AenModel::new(encoder.clone(), decoder.clone(), layout.clone())?;
    // The encoder is frozen, so its outputs are computed once.
    let latents = encode_latents(encoder, corpus)?;
    let mut adam = AdamState::for_network(
        AdamConfig {
            base_lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &decoder,
    );
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.learning_rate);
        order.shuffle(&mut derived_rng(cfg.seed, &[stream::FINETUNE_SHUFFLE, epoch as u64]));
        let mut epoch_total = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let zs: Vec<&[f64]> = chunk.iter().map(|&i| latents[i].as_slice()).collect();
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| corpus[i].0.as_slice()).collect();
            let (loss, g) = decoder_batch_gradient(&decoder, &zs, &xs, layout, cfg.nu)?;
            if !loss.is_finite() {
                return Err(LensError::NonFiniteLoss { epoch, batch });
            }
            adam.step_network(&mut decoder, &g, lr)?;
            epoch_total += loss * chunk.len() as f64;
        }
        let record = EpochRecord {
            epoch,
            loss: epoch_total / corpus.len() as f64,
            lr,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.push(record);
    }
    Ok(AenOutcome {
        model: AenModel::new(encoder.clone(), decoder, layout.clone())?,
        log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub entry_id: u64,
    pub reconstruction_error: f64,
}

/// Per-entry combined reconstruction loss; higher is more anomalous.
pub fn score_entries(
    model: &AenModel,
    corpus: &[EncodedEntry],
    entry_ids: &[u64],
    nu: f64,
) -> Result<Vec<AnomalyScore>> {
    if corpus.len() != entry_ids.len() {
        return Err(LensError::Config("entry ids do not match the corpus".into()));
    }
    corpus
        .par_iter()
        .zip(entry_ids)
        .map(|(x, &entry_id)| {
            let recon = model.reconstruct(x)?;
            Ok(AnomalyScore {
                entry_id,
                reconstruction_error: combined_recon_loss(&recon, x, &model.layout, nu)?,
            })
        })
        .collect()
}

/// Step-wise average precision over descending score thresholds. Equal scores
/// form a single threshold step.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(LensError::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(LensError::Metric("NaN anomaly score".into()));
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 {
        return Err(LensError::Metric("average precision needs at least one positive label".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut group_tp = 0;
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                group_tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        tp += group_tp;
        if group_tp > 0 {
            ap += (group_tp as f64 / positives as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyMetrics {
    pub ap_all: f64,
    /// `None` when the corpus holds no anomaly of that class.
    pub ap_global: Option<f64>,
    pub ap_local: Option<f64>,
}

pub fn evaluate_scores(scores: &[f64], labels: &[LabelKind]) -> Result<AnomalyMetrics> {
    let of = |pred: fn(&LabelKind) -> bool| labels.iter().map(pred).collect::<Vec<bool>>();
    let all = of(|l| *l != LabelKind::Normal);
    let global = of(|l| *l == LabelKind::Global);
    let local = of(|l| *l == LabelKind::Local);
    let class_ap = |flags: &[bool]| -> Result<Option<f64>> {
        if flags.iter().any(|f| *f) {
            average_precision(scores, flags).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(AnomalyMetrics {
        ap_all: average_precision(scores, &all)?,
        ap_global: class_ap(&global)?,
        ap_local: class_ap(&local)?,
    })
}

pub fn evaluate_anomalies(
    model: &AenModel,
    corpus: &[EncodedEntry],
    entry_ids: &[u64],
    labels: &[LabelKind],
    nu: f64,
) -> Result<AnomalyMetrics> {
    if labels.len() != corpus.len() {
        return Err(LensError::Metric(format!(
            "{} labels for {} entries",
            labels.len(),
            corpus.len()
        )));
    }
    let scores: Vec<f64> = score_entries(model, corpus, entry_ids, nu)?
        .into_iter()
        .map(|s| s.reconstruction_error)
        .collect();
    evaluate_scores(&scores, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> BlockLayout {
        BlockLayout {
            blocks: vec![0..3],
            numeric: 3..4,
        }
    }

    #[test]
    fn perfect_reconstruction_is_near_zero() {
        let target = [0.0, 1.0, 0.0, 0.5];
        let recon = [BCE_CLAMP, 1.0 - BCE_CLAMP, BCE_CLAMP, 0.5];
        assert!(combined_recon_loss(&recon, &target, &layout(), DEFAULT_NU).unwrap() < 1e-5);
    }

    #[test]
    fn bce_of_half_is_log_two() {
        let loss = combined_recon_loss(&[0.5, 0.5, 0.5, 0.0], &[0.0, 1.0, 0.0, 0.9], &layout(), 1.0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        let moved = combined_recon_loss(&[0.5, 0.5, 0.5, 0.0], &[0.0, 1.0, 0.0, 0.1], &layout(), 1.0).unwrap();
        assert_eq!(loss, moved);
    }

    #[test]
    fn nu_out_of_range_is_rejected() {
        assert!(combined_recon_loss(&[0.5; 4], &[0.0; 4], &layout(), 1.5).is_err());
    }

    #[test]
    fn ap_worked_example() {
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap();
        assert!((ap - (0.5 + 2.0 / 3.0 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn ap_degenerate_cases() {
        assert_eq!(average_precision(&[0.9, 0.5, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.3, 0.3, 0.1], &[true, true, true]).unwrap(), 1.0);
        assert!(average_precision(&[0.3, 0.2], &[false, false]).is_err());
    }

    #[test]
    fn tied_scores_form_one_step() {
        // Both entries share a threshold: precision 1/2 at recall 1.
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
    }

    #[test]
    fn all_normal_labels_error() {
        let labels = [LabelKind::Normal; 3];
        assert!(evaluate_scores(&[0.1, 0.2, 0.3], &labels).is_err());
    }

    #[test]
    fn class_metrics() {
        let labels = [LabelKind::Global, LabelKind::Normal, LabelKind::Local, LabelKind::Normal];
        let m = evaluate_scores(&[0.9, 0.1, 0.8, 0.2], &labels).unwrap();
        assert_eq!(m.ap_all, 1.0);
        assert_eq!(m.ap_global, Some(1.0));
        assert_eq!(m.ap_local, Some(0.5));
    }
}
