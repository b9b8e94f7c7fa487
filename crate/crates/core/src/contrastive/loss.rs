use crate::error::{LensError, Result};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Cosine of the angle between `u` and `v`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(LensError::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(LensError::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// InfoNCE of one query: `-log softmax` of the positive's similarity among `keys`.
///
/// `keys` must contain the positive and must not contain the query itself.
pub fn info_nce(query: &[f64], positive: &[f64], keys: &[&[f64]], temperature: f64) -> Result<f64> {
    if keys.is_empty() {
        return Err(LensError::Metric("InfoNCE needs at least one key".into()));
    }
    let pos = cosine_similarity(query, positive)? / temperature;
    let logits = keys
        .iter()
        .map(|k| cosine_similarity(query, k).map(|s| s / temperature))
        .collect::<Result<Vec<_>>>()?;
    Ok(log_sum_exp(&logits) - pos)
}

/// Unit directions and norms of a pool of embeddings.
struct Normalized {
    units: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl Normalized {
    fn new(pool: &[Vec<f64>]) -> Result<Self> {
        let norms: Vec<f64> = pool.iter().map(|v| norm(v)).collect();
        if norms.iter().any(|n| *n == 0.0 || !n.is_finite()) {
            return Err(LensError::ZeroNorm);
        }
        let units = pool
            .iter()
            .zip(&norms)
            .map(|(v, n)| v.iter().map(|x| x / n).collect())
            .collect();
        Ok(Normalized { units, norms })
    }

    fn sim(&self, a: usize, b: usize) -> f64 {
        dot(&self.units[a], &self.units[b])
    }

    /// Adds `scale * d sim(a, b) / d pool[a]` to `grad`.
    fn add_sim_grad(&self, a: usize, b: usize, scale: f64, grad: &mut [f64]) {
        let s = self.sim(a, b);
        let inv = scale / self.norms[a];
        for ((g, ub), ua) in grad.iter_mut().zip(&self.units[b]).zip(&self.units[a]) {
            *g += inv * (ub - s * ua);
        }
    }
}

/// Sum of InfoNCE terms over `pairs` of `(query, positive)` indices into `pool`.
///
/// For each query the keys are every other member of the pool. Returns the
/// summed loss and its gradient with respect to every pool member.
pub fn pooled_nce_with_grad(
    pool: &[Vec<f64>],
    pairs: &[(usize, usize)],
    temperature: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let dim = pool.first().map(Vec::len).unwrap_or(0);
    if pool.iter().any(|v| v.len() != dim) {
        return Err(LensError::Metric("embeddings of unequal dimension".into()));
    }
    if pool.len() < 2 {
        return Err(LensError::Metric("InfoNCE needs at least one key".into()));
    }
    let normed = Normalized::new(pool)?;
    let mut grads = vec![vec![0.0; dim]; pool.len()];
    let mut total = 0.0;
    let mut logits = vec![0.0; pool.len()];
    let mut weights = vec![0.0; pool.len()];
    for &(q, p) in pairs {
        if q == p || q >= pool.len() || p >= pool.len() {
            return Err(LensError::Metric(format!("invalid query/positive pair ({q}, {p})")));
        }
        let mut max = f64::NEG_INFINITY;
        for k in 0..pool.len() {
            if k != q {
                logits[k] = normed.sim(q, k) / temperature;
                max = max.max(logits[k]);
            }
        }
        let mut z = 0.0;
        for k in 0..pool.len() {
            if k != q {
                weights[k] = (logits[k] - max).exp();
                z += weights[k];
            }
        }
        total += max + z.ln() - logits[p];
        for k in 0..pool.len() {
            if k == q {
                continue;
            }
            let mut coeff = weights[k] / z;
            if k == p {
                coeff -= 1.0;
            }
            if coeff == 0.0 {
                continue;
            }
            let scale = coeff / temperature;
            let (gq, gk) = if q < k {
                let (lo, hi) = grads.split_at_mut(k);
                (&mut lo[q], &mut hi[0])
            } else {
                let (lo, hi) = grads.split_at_mut(q);
                (&mut hi[0], &mut lo[k])
            };
            normed.add_sim_grad(q, k, scale, gq);
            normed.add_sim_grad(k, q, scale, gk);
        }
    }
    Ok((total, grads))
}

/// Query/positive index pairs of one augmentation set laid out as
/// `[negatives..., positives...]`, each negative key acting as a query.
pub fn set_pairs(negatives: usize) -> Vec<(usize, usize)> {
    (0..negatives).map(|l| (l, negatives + l)).collect()
}

/// PairNCE of one augmentation set: the InfoNCE of every negative key against
/// its aligned positive, with the remaining `2 * negatives - 1` members as keys.
pub fn pair_nce(embeddings: &[Vec<f64>], negatives: usize, temperature: f64) -> Result<f64> {
    pair_nce_with_grad(embeddings, negatives, temperature).map(|(l, _)| l)
}

pub fn pair_nce_with_grad(
    embeddings: &[Vec<f64>],
    negatives: usize,
    temperature: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if embeddings.len() != 2 * negatives {
        return Err(LensError::Metric(format!(
            "augmentation set has {} embeddings, expected {} (missing aligned positive)",
            embeddings.len(),
            2 * negatives
        )));
    }
    pooled_nce_with_grad(embeddings, &set_pairs(negatives), temperature)
}
