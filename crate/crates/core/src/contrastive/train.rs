use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{pooled_nce_with_grad, set_pairs};
use crate::augment::{AugmentationConfig, AugmentedQuery};
use crate::error::{LensError, Result};
use crate::nn::{
    cosine_lr, linear_specs, mlp_specs, AdamConfig, AdamState, DenseNetwork, Gradients, Tape,
    DEFAULT_LEAKY_ALPHA,
};
use crate::rng::{derived_rng, stream};
use crate::schema::{BlockLayout, EncodedEntry};

/// Queries per parallel work unit. Fixed so that gradient reduction order does
/// not depend on the thread count.
const QUERY_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub temperature: f64,
    /// Queries per mini-batch (`m`).
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_rel_improvement: f64,
    pub encoder_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub leaky_alpha: f64,
    pub learning_rate: f64,
    /// Use every embedding of the mini-batch (same positive kind) as keys
    /// instead of only the members of the query's own augmentation set.
    pub batch_negatives: bool,
    /// Drop labeled anomalies from the pretraining corpus.
    pub exclude_anomalies: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            temperature: 0.5,
            batch_size: 128,
            max_epochs: 1000,
            patience: 20,
            min_rel_improvement: 1e-4,
            encoder_widths: vec![4096, 2048, 1024, 512, 256, 128, 64, 32, 16, 8, 4, 2],
            head_widths: vec![2, 2],
            leaky_alpha: DEFAULT_LEAKY_ALPHA,
            learning_rate: 1e-3,
            batch_negatives: false,
            exclude_anomalies: false,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(LensError::Config(format!("pretrain: {m}")));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return err("temperature must be > 0");
        }
        if self.batch_size == 0 {
            return err("batch_size must be >= 1");
        }
        if self.patience == 0 {
            return err("patience must be >= 1");
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return err("encoder_widths must be non-empty and positive");
        }
        if self.head_widths.contains(&0) {
            return err("head_widths must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return err("learning_rate must be > 0");
        }
        if !(self.min_rel_improvement >= 0.0) {
            return err("min_rel_improvement must be >= 0");
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        *self.encoder_widths.last().expect("validated")
    }
}

/// Glorot-initialized encoder and projection head for `input_dim` features.
pub fn init_networks(input_dim: usize, cfg: &PretrainConfig) -> Result<(DenseNetwork, DenseNetwork)> {
    let encoder = DenseNetwork::glorot(
        &mlp_specs(input_dim, &cfg.encoder_widths, cfg.leaky_alpha),
        &mut derived_rng(cfg.seed, &[stream::ENCODER_INIT]),
    )?;
    let head = if cfg.head_widths.is_empty() {
        linear_specs(cfg.latent_dim(), &[cfg.latent_dim()])
    } else {
        linear_specs(cfg.latent_dim(), &cfg.head_widths)
    };
    let head = DenseNetwork::glorot(&head, &mut derived_rng(cfg.seed, &[stream::HEAD_INIT]))?;
    Ok((encoder, head))
}

/// Forward record of every augmented vector of one query.
struct QueryForward {
    encoder_tapes: Vec<Tape>,
    head_tapes: Vec<Tape>,
    embeddings: Vec<Vec<f64>>,
}

fn query_vectors(q: &AugmentedQuery) -> impl Iterator<Item = &Vec<f64>> {
    q.negatives
        .iter()
        .chain(q.positives.iter().flat_map(|(_, p)| p.iter()))
}

fn forward_query(encoder: &DenseNetwork, head: &DenseNetwork, q: &AugmentedQuery) -> Result<QueryForward> {
    let n = q.negatives.len() * (1 + q.positives.len());
    let mut fwd = QueryForward {
        encoder_tapes: Vec::with_capacity(n),
        head_tapes: Vec::with_capacity(n),
        embeddings: Vec::with_capacity(n),
    };
    let inputs: Vec<&[f64]> = query_vectors(q).map(|v| v.as_slice()).collect();
    let (zs, te) = encoder.forward_batch(&inputs)?;
    let zs: Vec<&[f64]> = zs.iter().map(|z| z.as_slice()).collect();
    let (es, th) = head.forward_batch(&zs)?;
    fwd.encoder_tapes = te;
    fwd.head_tapes = th;
    fwd.embeddings = es;
    Ok(fwd)
}

/// Indices of set `kind` inside a query's vector list: negatives then positives.
fn set_members(negatives: usize, kind: usize) -> impl Iterator<Item = usize> {
    (0..negatives).chain((0..negatives).map(move |l| negatives * (1 + kind) + l))
}

/// Per-set losses of one query; returns the summed loss and embedding gradients.
fn query_set_losses(fwd: &QueryForward, q: &AugmentedQuery, temperature: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let l = q.negatives.len();
    let dim = fwd.embeddings[0].len();
    let mut d_emb = vec![vec![0.0; dim]; fwd.embeddings.len()];
    let mut total = 0.0;
    for kind in 0..q.positives.len() {
        let members: Vec<usize> = set_members(l, kind).collect();
        let pool: Vec<Vec<f64>> = members.iter().map(|&i| fwd.embeddings[i].clone()).collect();
        let (loss, grads) = pooled_nce_with_grad(&pool, &set_pairs(l), temperature)?;
        total += loss;
        for (&i, g) in members.iter().zip(grads) {
            d_emb[i].iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    Ok((total, d_emb))
}

fn backprop_query(
    encoder: &DenseNetwork,
    head: &DenseNetwork,
    fwd: &QueryForward,
    d_emb: &[Vec<f64>],
    scale: f64,
    g_enc: &mut Gradients,
    g_head: &mut Gradients,
) -> Result<()> {
    let scaled: Vec<Vec<f64>> = d_emb.iter().map(|d| d.iter().map(|v| v * scale).collect()).collect();
    let scaled: Vec<&[f64]> = scaled.iter().map(|d| d.as_slice()).collect();
    let dz = head
        .backward_batch(&fwd.head_tapes, &scaled, Some(g_head), true)?
        .expect("input gradient requested");
    let dz: Vec<&[f64]> = dz.iter().map(|d| d.as_slice()).collect();
    encoder.backward_batch(&fwd.encoder_tapes, &dz, Some(g_enc), false)?;
    Ok(())
}

fn set_count(queries: &[AugmentedQuery]) -> usize {
    queries.iter().map(|q| q.positives.len()).sum()
}

/// Batch-wide pooling: for each positive kind, the keys of a query are all
/// embeddings of that kind's sets across the mini-batch.
fn batch_pooled_losses(
    forwards: &[QueryForward],
    queries: &[AugmentedQuery],
    temperature: f64,
) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
    let dim = forwards[0].embeddings[0].len();
    let mut d_emb: Vec<Vec<Vec<f64>>> = forwards
        .iter()
        .map(|f| vec![vec![0.0; dim]; f.embeddings.len()])
        .collect();
    let kinds = queries[0].positives.len();
    let mut total = 0.0;
    for kind in 0..kinds {
        let mut pool = Vec::new();
        let mut owners = Vec::new();
        let mut pairs = Vec::new();
        for (qi, (f, q)) in forwards.iter().zip(queries).enumerate() {
            let l = q.negatives.len();
            let offset = pool.len();
            for i in set_members(l, kind) {
                pool.push(f.embeddings[i].clone());
                owners.push((qi, i));
            }
            pairs.extend(set_pairs(l).into_iter().map(|(a, b)| (a + offset, b + offset)));
        }
        let (loss, grads) = pooled_nce_with_grad(&pool, &pairs, temperature)?;
        total += loss;
        for ((qi, i), g) in owners.into_iter().zip(grads) {
            d_emb[qi][i].iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    Ok((total, d_emb))
}

/// Mean PairNCE over all augmentation sets of a mini-batch.
pub fn contrastive_loss(
    encoder: &DenseNetwork,
    head: &DenseNetwork,
    queries: &[AugmentedQuery],
    temperature: f64,
    batch_negatives: bool,
) -> Result<f64> {
    let forwards = queries
        .par_iter()
        .map(|q| forward_query(encoder, head, q))
        .collect::<Result<Vec<_>>>()?;
    let sets = set_count(queries) as f64;
    if batch_negatives {
        return Ok(batch_pooled_losses(&forwards, queries, temperature)?.0 / sets);
    }
    let mut total = 0.0;
    for (f, q) in forwards.iter().zip(queries) {
        total += query_set_losses(f, q, temperature)?.0;
    }
    Ok(total / sets)
}

pub struct ContrastiveGradient {
    pub loss: f64,
    pub encoder: Gradients,
    pub head: Gradients,
}

/// Mean PairNCE of a mini-batch and its gradient with respect to both networks.
pub fn contrastive_gradient(
    encoder: &DenseNetwork,
    head: &DenseNetwork,
    queries: &[AugmentedQuery],
    temperature: f64,
    batch_negatives: bool,
) -> Result<ContrastiveGradient> {
    if queries.is_empty() {
        return Err(LensError::Config("empty mini-batch".into()));
    }
    let scale = 1.0 / set_count(queries) as f64;
    let partials: Vec<(f64, Gradients, Gradients)> = if batch_negatives {
        let forwards = queries
            .par_iter()
            .map(|q| forward_query(encoder, head, q))
            .collect::<Result<Vec<_>>>()?;
        let (total, d_emb) = batch_pooled_losses(&forwards, queries, temperature)?;
        let mut parts = forwards
            .par_chunks(QUERY_CHUNK)
            .zip(d_emb.par_chunks(QUERY_CHUNK))
            .map(|(fs, ds)| {
                let mut ge = Gradients::zeros_like(encoder);
                let mut gh = Gradients::zeros_like(head);
                for (f, d) in fs.iter().zip(ds) {
                    backprop_query(encoder, head, f, d, scale, &mut ge, &mut gh)?;
                }
                Ok((0.0, ge, gh))
            })
            .collect::<Result<Vec<_>>>()?;
        parts[0].0 = total;
        parts
    } else {
        queries
            .par_chunks(QUERY_CHUNK)
            .map(|chunk| {
                let mut ge = Gradients::zeros_like(encoder);
                let mut gh = Gradients::zeros_like(head);
                let mut total = 0.0;
                for q in chunk {
                    let f = forward_query(encoder, head, q)?;
                    let (loss, d_emb) = query_set_losses(&f, q, temperature)?;
                    total += loss;
                    backprop_query(encoder, head, &f, &d_emb, scale, &mut ge, &mut gh)?;
                }
                Ok((total, ge, gh))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let mut iter = partials.into_iter();
    let (mut total, mut ge, mut gh) = iter.next().expect("at least one chunk");
    for (t, e, h) in iter {
        total += t;
        ge.add_assign(&e);
        gh.add_assign(&h);
    }
    Ok(ContrastiveGradient {
        loss: total * scale,
        encoder: ge,
        head: gh,
    })
}

/// Patience-based stopping on relative loss improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_rel_improvement: f64,
    reference: Option<f64>,
    stale_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_rel_improvement: f64) -> Self {
        EarlyStopping {
            patience,
            min_rel_improvement,
            reference: None,
            stale_epochs: 0,
        }
    }

    /// Records an epoch loss; returns true when training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        match self.reference {
            Some(r) if loss >= r - self.min_rel_improvement * r.abs() => {
                self.stale_epochs += 1;
            }
            _ => {
                self.reference = Some(loss);
                self.stale_epochs = 0;
            }
        }
        self.stale_epochs >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Encoder parameters of the lowest-loss epoch; the projection head is discarded.
    pub encoder: DenseNetwork,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub fn pretrain(
    corpus: &[EncodedEntry],
    entry_ids: &[u64],
    layout: &BlockLayout,
    cfg: &PretrainConfig,
    aug: &AugmentationConfig,
) -> Result<PretrainOutcome> {
    pretrain_with(corpus, entry_ids, layout, cfg, aug, |_| {})
}

/// Contrastive pretraining; `on_epoch` observes each epoch record as it completes.
pub fn pretrain_with(
    corpus: &[EncodedEntry],
    entry_ids: &[u64],
    layout: &BlockLayout,
    cfg: &PretrainConfig,
    aug: &AugmentationConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    aug.validate()?;
    if corpus.is_empty() {
        return Err(LensError::Config("pretraining corpus is empty".into()));
    }
    if corpus.len() != entry_ids.len() {
        return Err(LensError::Config("entry ids do not match the corpus".into()));
    }
    let (mut encoder, mut head) = init_networks(layout.dimension(), cfg)?;
    if encoder.input_dim() != corpus[0].len() {
        return Err(LensError::DimensionMismatch {
            expected: encoder.input_dim(),
            actual: corpus[0].len(),
        });
    }
    let adam_cfg = AdamConfig {
        base_lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam_enc = AdamState::for_network(adam_cfg, &encoder);
    let mut adam_head = AdamState::for_network(adam_cfg, &head);
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_rel_improvement);

    let mut best = (f64::INFINITY, encoder.clone(), 0usize);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut stopped_early = false;
    let start = Instant::now();

    for epoch in 0..cfg.max_epochs {
        let lr = cosine_lr(epoch, cfg.max_epochs, cfg.learning_rate);
        order.shuffle(&mut derived_rng(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        let mut epoch_total = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let queries = chunk
                .par_iter()
                .map(|&i| {
                    let mut rng = derived_rng(
                        cfg.seed,
                        &[stream::AUGMENT, aug.seed, epoch as u64, entry_ids[i]],
                    );
                    AugmentedQuery::build(&corpus[i], layout, aug, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let g = contrastive_gradient(&encoder, &head, &queries, cfg.temperature, cfg.batch_negatives)?;
            if !g.loss.is_finite() {
                return Err(LensError::NonFiniteLoss { epoch, batch });
            }
            adam_enc.step_network(&mut encoder, &g.encoder, lr)?;
            adam_head.step_network(&mut head, &g.head, lr)?;
            epoch_total += g.loss * chunk.len() as f64;
        }
        let loss = epoch_total / corpus.len() as f64;
        let record = EpochRecord {
            epoch,
            loss,
            lr,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.push(record);
        if loss < best.0 {
            best = (loss, encoder.clone(), epoch);
        }
        if stopper.observe(loss) {
            stopped_early = epoch + 1 < cfg.max_epochs;
            break;
        }
    }
    Ok(PretrainOutcome {
        encoder: best.1,
        log,
        best_epoch: best.2,
        stopped_early,
    })
}

/// Latent codes of every entry under a (frozen) encoder.
pub fn encode_latents(encoder: &DenseNetwork, corpus: &[EncodedEntry]) -> Result<Vec<Vec<f64>>> {
    corpus.par_iter().map(|x| encoder.predict(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_after_constant_loss() {
        let mut s = EarlyStopping::new(1, 1e-4);
        assert!(!s.observe(1.0));
        assert!(s.observe(1.0));
    }

    #[test]
    fn early_stop_resets_on_improvement() {
        let mut s = EarlyStopping::new(2, 1e-4);
        assert!(!s.observe(1.0));
        assert!(!s.observe(1.0));
        assert!(!s.observe(0.5));
        assert!(!s.observe(0.49999));
        assert!(s.observe(0.49999));
    }

    #[test]
    fn config_validation() {
        assert!(PretrainConfig::default().validate().is_ok());
        let bad = PretrainConfig {
            temperature: 0.0,
            ..PretrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PretrainConfig {
            patience: 0,
            ..PretrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
