//! Frozen-encoder VQ-VAE for representative audit sampling.

use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anomaly::{
    activate_output, combined_recon_loss, combined_recon_loss_with_grad, init_decoder, DEFAULT_NU,
    ENTRY_CHUNK,
};
use crate::contrastive::{encode_latents, EpochRecord};
use crate::error::{LensError, Result};
use crate::nn::{cosine_lr, AdamConfig, AdamState, DenseNetwork, Gradients, DEFAULT_LEAKY_ALPHA};
use crate::rng::{derived_rng, stream};
use crate::schema::{BlockLayout, EncodedEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub vectors: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(LensError::Config(format!(
                "codebook needs at least 2 vectors, got {}",
                vectors.len()
            )));
        }
        let dim = vectors[0].len();
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(LensError::Config("codebook vectors of unequal dimension".into()));
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LensError::Config("non-finite codebook vector".into()));
        }
        Ok(Codebook { vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the code nearest to `z`; ties go to the lowest index.
pub fn nearest_code(z: &[f64], codebook: &Codebook) -> Result<usize> {
    if codebook.is_empty() {
        return Err(LensError::Config("empty codebook".into()));
    }
    if z.len() != codebook.dim() {
        return Err(LensError::DimensionMismatch {
            expected: codebook.dim(),
            actual: z.len(),
        });
    }
    let mut best = (0, f64::INFINITY);
    for (j, c) in codebook.vectors.iter().enumerate() {
        let d = squared_distance(z, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizationAssignment {
    pub codes: Vec<usize>,
    pub counts: Vec<usize>,
}

pub fn assign_codes(latents: &[Vec<f64>], codebook: &Codebook) -> Result<QuantizationAssignment> {
    let codes = latents
        .par_iter()
        .map(|z| nearest_code(z, codebook))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0; codebook.len()];
    for &k in &codes {
        counts[k] += 1;
    }
    Ok(QuantizationAssignment { codes, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VqCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for VqCoefficients {
    fn default() -> Self {
        VqCoefficients {
            alpha: 1.0,
            beta: 0.25,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VqLossTerms {
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub latent_reconstruction: f64,
}

impl VqLossTerms {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.codebook + self.commitment + self.latent_reconstruction
    }
}

/// Loss terms of one entry with latent `z` quantized to `quantized`.
///
/// Coefficients are already applied to terms two to four.
pub fn vqvae_terms(
    x: &[f64],
    z: &[f64],
    quantized: &[f64],
    decoder: &DenseNetwork,
    layout: &BlockLayout,
    nu: f64,
    coeffs: VqCoefficients,
) -> Result<VqLossTerms> {
    let recon = |v: &[f64]| -> Result<f64> {
        let out = activate_output(&decoder.predict(v)?, layout);
        combined_recon_loss(&out, x, layout, nu)
    };
    let dist = squared_distance(z, quantized);
    Ok(VqLossTerms {
        reconstruction: recon(quantized)?,
        codebook: coeffs.alpha * dist,
        commitment: coeffs.beta * dist,
        latent_reconstruction: if coeffs.gamma == 0.0 { 0.0 } else { coeffs.gamma * recon(z)? },
    })
}

/// Loss terms of one entry under nearest-code quantization, with its code index.
pub fn vqvae_loss(
    x: &[f64],
    z: &[f64],
    decoder: &DenseNetwork,
    codebook: &Codebook,
    layout: &BlockLayout,
    nu: f64,
    coeffs: VqCoefficients,
) -> Result<(usize, VqLossTerms)> {
    let k = nearest_code(z, codebook)?;
    let terms = vqvae_terms(x, z, &codebook.vectors[k], decoder, layout, nu, coeffs)?;
    Ok((k, terms))
}

pub struct VqGradient {
    pub loss: f64,
    pub decoder: Gradients,
    pub codebook: Vec<Vec<f64>>,
}

/// Mean loss over a batch and its gradients. The decoder receives gradients
/// from both reconstruction terms; code vectors only from the codebook term.
pub fn vqvae_batch_gradient(
    decoder: &DenseNetwork,
    codebook: &Codebook,
    latents: &[&[f64]],
    targets: &[&[f64]],
    layout: &BlockLayout,
    nu: f64,
    coeffs: VqCoefficients,
) -> Result<VqGradient> {
    if latents.is_empty() || latents.len() != targets.len() {
        return Err(LensError::Config("empty or misaligned batch".into()));
    }
    let scale = 1.0 / latents.len() as f64;
    let dim = codebook.dim();
    let parts = latents
        .par_chunks(ENTRY_CHUNK)
        .zip(targets.par_chunks(ENTRY_CHUNK))
        .map(|(zs, xs)| {
            let mut gd = Gradients::zeros_like(decoder);
            let mut gc = vec![vec![0.0; dim]; codebook.len()];
            let mut total = 0.0;
            let mut inputs: Vec<&[f64]> = Vec::with_capacity(2 * zs.len());
            let mut targets: Vec<&[f64]> = Vec::with_capacity(2 * zs.len());
            let mut weights = Vec::with_capacity(2 * zs.len());
            for (z, x) in zs.iter().zip(xs) {
                let k = nearest_code(z, codebook)?;
                let zq = &codebook.vectors[k];
                inputs.push(zq);
                targets.push(x);
                weights.push(1.0);
                let dist = squared_distance(z, zq);
                for ((g, c), v) in gc[k].iter_mut().zip(zq).zip(z.iter()) {
                    *g += scale * 2.0 * coeffs.alpha * (c - v);
                }
                total += (coeffs.alpha + coeffs.beta) * dist;
            }
            if coeffs.gamma != 0.0 {
                for (z, x) in zs.iter().zip(xs) {
                    inputs.push(z);
                    targets.push(x);
                    weights.push(coeffs.gamma);
                }
            }
            let (raws, tapes) = decoder.forward_batch(&inputs)?;
            let mut ds = Vec::with_capacity(raws.len());
            for ((raw, x), w) in raws.iter().zip(&targets).zip(&weights) {
                let (l, mut d) = combined_recon_loss_with_grad(raw, x, layout, nu)?;
                total += w * l;
                d.iter_mut().for_each(|v| *v *= scale * w);
                ds.push(d);
            }
            let ds: Vec<&[f64]> = ds.iter().map(|d| d.as_slice()).collect();
            decoder.backward_batch(&tapes, &ds, Some(&mut gd), false)?;
            Ok((total, gd, gc))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = parts.into_iter();
    let (mut total, mut gd, mut gc) = iter.next().expect("non-empty batch");
    for (t, d, c) in iter {
        total += t;
        gd.add_assign(&d);
        for (a, b) in gc.iter_mut().flatten().zip(c.iter().flatten()) {
            *a += b;
        }
    }
    Ok(VqGradient {
        loss: total * scale,
        decoder: gd,
        codebook: gc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqvaeConfig {
    /// Codebook sizes swept by one run.
    pub codebook_sizes: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub nu: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub leaky_alpha: f64,
    /// Report the printed-formula perplexity alongside the standard one.
    pub perplexity_literal: bool,
    pub seed: u64,
}

impl Default for VqvaeConfig {
    fn default() -> Self {
        VqvaeConfig {
            codebook_sizes: vec![8, 64, 128],
            alpha: 1.0,
            beta: 0.25,
            gamma: 1.0,
            epochs: 100,
            nu: DEFAULT_NU,
            batch_size: 128,
            learning_rate: 1e-3,
            leaky_alpha: DEFAULT_LEAKY_ALPHA,
            perplexity_literal: false,
            seed: 0,
        }
    }
}

impl VqvaeConfig {
    pub fn coefficients(&self) -> VqCoefficients {
        VqCoefficients {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(LensError::Config(format!("vqvae: {m}")));
        if self.codebook_sizes.iter().any(|&k| k < 2) {
            return err("codebook sizes must be >= 2");
        }
        if [self.alpha, self.beta, self.gamma].iter().any(|c| !(*c >= 0.0)) {
            return err("alpha, beta and gamma must be >= 0");
        }
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

#[derive(Debug, Clone, PartialEq)]
pub struct VqvaeModel {
    pub encoder: DenseNetwork,
    pub decoder: DenseNetwork,
    pub codebook: Codebook,
    pub layout: BlockLayout,
}

#[derive(Debug, Clone)]
pub struct VqvaeOutcome {
    pub model: VqvaeModel,
    pub log: Vec<EpochRecord>,
    pub assignment: QuantizationAssignment,
    pub latents: Vec<Vec<f64>>,
}

/// Codebook seeded from `k` distinct latents of randomly drawn entries.
pub fn init_codebook(latents: &[Vec<f64>], k: usize, seed: u64) -> Result<Codebook> {
    if k > latents.len() {
        return Err(LensError::Config(format!(
            "codebook size {k} exceeds corpus size {}",
            latents.len()
        )));
    }
    let mut rng = derived_rng(seed, &[stream::CODEBOOK_INIT, k as u64]);
    let mut order: Vec<usize> = (0..latents.len()).collect();
    order.shuffle(&mut rng);
    let mut seen = HashSet::new();
    let mut vectors = Vec::with_capacity(k);
    for &i in &order {
        let bits: Vec<u64> = latents[i].iter().map(|v| v.to_bits()).collect();
        if seen.insert(bits) {
            vectors.push(latents[i].clone());
            if vectors.len() == k {
                break;
            }
        }
    }
    // Collapsed encoders may not offer k distinct outputs; pad with jittered copies.
    while vectors.len() < k {
        let base = &latents[order[vectors.len() % order.len()]];
        vectors.push(base.iter().map(|v| v + rng.gen_range(-1e-3..1e-3)).collect());
    }
    Codebook::new(vectors)
}

pub fn finetune_vqvae(
    encoder: &DenseNetwork,
    corpus: &[EncodedEntry],
    layout: &BlockLayout,
    codebook_size: usize,
    cfg: &VqvaeConfig,
) -> Result<VqvaeOutcome> {
    finetune_vqvae_with(encoder, corpus, layout, codebook_size, cfg, |_| {})
}

pub fn finetune_vqvae_with(
    encoder: &DenseNetwork,
    corpus: &[EncodedEntry],
    layout: &BlockLayout,
    codebook_size: usize,
    cfg: &VqvaeConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<VqvaeOutcome> {
    cfg.validate()?;
    if codebook_size < 2 {
        return Err(LensError::Config("codebook size must be >= 2".into()));
    }
    if corpus.is_empty() {
        return Err(LensError::Config("fine-tuning corpus is empty".into()));
    }
    let latents = encode_latents(encoder, corpus)?;
    let mut codebook = init_codebook(&latents, codebook_size, cfg.seed)?;
    let mut decoder = init_decoder(encoder, cfg.leaky_alpha, cfg.seed)?;
    if decoder.output_dim() != layout.dimension() {
        return Err(LensError::DimensionMismatch {
            expected: layout.dimension(),
            actual: decoder.output_dim(),
        });
    }
    let adam_cfg = AdamConfig {
        base_lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam_dec = AdamState::for_network(adam_cfg, &decoder);
    let mut adam_code = AdamState::new(adam_cfg, &vec![codebook.dim(); codebook.len()]);
    let coeffs = cfg.coefficients();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.learning_rate);
        order.shuffle(&mut derived_rng(
            cfg.seed,
            &[stream::FINETUNE_SHUFFLE, epoch as u64, codebook_size as u64],
        ));
        let mut epoch_total = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let zs: Vec<&[f64]> = chunk.iter().map(|&i| latents[i].as_slice()).collect();
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| corpus[i].0.as_slice()).collect();
            let g = vqvae_batch_gradient(&decoder, &codebook, &zs, &xs, layout, cfg.nu, coeffs)?;
            if !g.loss.is_finite() {
                return Err(LensError::NonFiniteLoss { epoch, batch });
            }
            adam_dec.step_network(&mut decoder, &g.decoder, lr)?;
            adam_code.step(
                codebook.vectors.iter_mut().map(Vec::as_mut_slice),
                g.codebook.iter().map(Vec::as_slice),
                lr,
            )?;
            epoch_total += g.loss * chunk.len() as f64;
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
    let assignment = assign_codes(&latents, &codebook)?;
    Ok(VqvaeOutcome {
        model: VqvaeModel {
            encoder: encoder.clone(),
            decoder,
            codebook,
            layout: layout.clone(),
        },
        log,
        assignment,
        latents,
    })
}

fn code_probabilities(counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(LensError::Metric("perplexity of an empty assignment".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// `2^H` of the code-usage distribution, the effective number of codes in use.
pub fn perplexity(counts: &[usize]) -> Result<f64> {
    let h: f64 = code_probabilities(counts)?
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.log2())
        .sum();
    Ok(h.exp2())
}

/// Printed-formula variant: the mean over codes of `2^(-p_j log2 p_j)`.
pub fn perplexity_literal(counts: &[usize]) -> Result<f64> {
    let p = code_probabilities(counts)?;
    let sum: f64 = p
        .iter()
        .map(|&p| if p > 0.0 { (-p * p.log2()).exp2() } else { 1.0 })
        .sum();
    Ok(sum / p.len() as f64)
}

/// Mean and size-weighted purity over non-empty codes. `keys[i]` is the
/// de-duplication key of entry `i`.
pub fn purity<K: Eq + Hash>(codes: &[usize], keys: &[K]) -> Result<(f64, f64)> {
    if codes.len() != keys.len() {
        return Err(LensError::DimensionMismatch {
            expected: codes.len(),
            actual: keys.len(),
        });
    }
    if codes.is_empty() {
        return Err(LensError::Metric("purity of an empty assignment".into()));
    }
    let mut members: BTreeMap<usize, (usize, HashSet<&K>)> = BTreeMap::new();
    for (&k, key) in codes.iter().zip(keys) {
        let slot = members.entry(k).or_default();
        slot.0 += 1;
        slot.1.insert(key);
    }
    let per_code: Vec<(usize, f64)> = members
        .into_values()
        .map(|(n, uniq)| (n, 1.0 - uniq.len() as f64 / n as f64))
        .collect();
    let total = codes.len() as f64;
    let mean = per_code.iter().map(|(_, p)| p).sum::<f64>() / per_code.len() as f64;
    let weighted = per_code
        .iter()
        .map(|(n, p)| *n as f64 / total * p)
        .sum();
    Ok((mean, weighted))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditPick {
    pub code: usize,
    pub entry_id: u64,
    pub distance: f64,
}

/// One entry per non-empty code: the member nearest to the code vector, ties
/// broken by lowest entry id.
pub fn draw_audit_sample(
    assignment: &QuantizationAssignment,
    codebook: &Codebook,
    latents: &[Vec<f64>],
    entry_ids: &[u64],
) -> Result<Vec<AuditPick>> {
    if latents.len() != assignment.codes.len() || entry_ids.len() != latents.len() {
        return Err(LensError::Config("assignment, latents and ids are misaligned".into()));
    }
    let mut best: Vec<Option<AuditPick>> = vec![None; codebook.len()];
    for ((&k, z), &entry_id) in assignment.codes.iter().zip(latents).zip(entry_ids) {
        let distance = squared_distance(z, &codebook.vectors[k]).sqrt();
        let better = match best[k] {
            None => true,
            Some(b) => distance < b.distance || (distance == b.distance && entry_id < b.entry_id),
        };
        if better {
            best[k] = Some(AuditPick {
                code: k,
                entry_id,
                distance,
            });
        }
    }
    Ok(best.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingMetrics {
    pub codebook_size: usize,
    pub perplexity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perplexity_literal: Option<f64>,
    pub purity: f64,
    pub weighted_purity: f64,
    pub codes_used: usize,
}

pub fn evaluate_sampling<K: Eq + Hash>(
    assignment: &QuantizationAssignment,
    keys: &[K],
    literal: bool,
) -> Result<SamplingMetrics> {
    let (purity, weighted_purity) = purity(&assignment.codes, keys)?;
    Ok(SamplingMetrics {
        codebook_size: assignment.counts.len(),
        perplexity: perplexity(&assignment.counts)?,
        perplexity_literal: if literal {
            Some(perplexity_literal(&assignment.counts)?)
        } else {
            None
        },
        purity,
        weighted_purity,
        codes_used: assignment.counts.iter().filter(|c| **c > 0).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book(v: &[[f64; 2]]) -> Codebook {
        Codebook::new(v.iter().map(|c| c.to_vec()).collect()).unwrap()
    }

    #[test]
    fn nearest_code_exact_and_ties() {
        let cb = book(&[[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [3.0, 3.0]]);
        assert_eq!(nearest_code(&[3.0, 3.0], &cb).unwrap(), 3);
        let cb = book(&[[1.0, 0.0], [5.0, 5.0], [-1.0, 0.0]]);
        assert_eq!(nearest_code(&[0.0, 0.0], &cb).unwrap(), 0);
        assert!(Codebook::new(vec![vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn perplexity_examples() {
        assert!((perplexity(&[5; 8]).unwrap() - 8.0).abs() < 1e-12);
        assert!((perplexity(&[0, 12, 0]).unwrap() - 1.0).abs() < 1e-12);
        let h = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert!((perplexity(&[3, 1, 0, 0]).unwrap() - h.exp2()).abs() < 1e-12);
        assert!(perplexity(&[0, 0]).is_err());
    }

    #[test]
    fn literal_perplexity_reading() {
        // One code holds everything: each summand is 2^0 = 1.
        assert!((perplexity_literal(&[4, 0, 0, 0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn purity_examples() {
        let (p, _) = purity(&[0; 10], &["a"; 10]).unwrap();
        assert!((p - 0.9).abs() < 1e-12);
        let (p, w) = purity(&[0, 0, 0], &["a", "b", "c"]).unwrap();
        assert_eq!((p, w), (0.0, 0.0));
        let codes = [0, 0, 0, 0, 0, 0, 0, 0, 1, 1];
        let keys = ["a", "a", "a", "a", "b", "b", "b", "b", "c", "d"];
        let (p, w) = purity(&codes, &keys).unwrap();
        assert!((p - 0.375).abs() < 1e-12);
        assert!((w - 0.6).abs() < 1e-12);
    }

    #[test]
    fn terms_vanish_on_code() {
        let layout = BlockLayout {
            blocks: vec![0..2],
            numeric: 2..2,
        };
        let dec = DenseNetwork::glorot(
            &crate::nn::mlp_specs(2, &[2], 0.4),
            &mut crate::rng::rng_from_seed(1),
        )
        .unwrap();
        let z = [0.3, -0.2];
        let t = vqvae_terms(&[1.0, 0.0], &z, &z, &dec, &layout, 1.0, VqCoefficients::default()).unwrap();
        assert_eq!(t.codebook, 0.0);
        assert_eq!(t.commitment, 0.0);
    }
}
