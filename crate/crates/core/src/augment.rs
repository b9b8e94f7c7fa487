//! Inter-attribute (negative) and intra-attribute (positive) augmentations.
//!
//! The negative policy changes which value one categorical attribute takes.
//! The positive policies perturb an entry without changing any attribute value.
//! Positives are derived from the negative keys, so every augmentation set
//! holds `negatives` keys plus one aligned positive per key.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LensError, Result};
use crate::schema::BlockLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveKind {
    Noise,
    Cut,
    Blur,
}

impl fmt::Display for PositiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositiveKind::Noise => "noise",
            PositiveKind::Cut => "cut",
            PositiveKind::Blur => "blur",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Negative replicas per query.
    pub negatives: usize,
    /// One augmentation set is built per listed kind.
    pub positive_kinds: Vec<PositiveKind>,
    pub noise_mean: f64,
    pub noise_std: f64,
    /// Lower bound of the random-cut multiplier.
    pub cut_min: f64,
    pub blur_mean: f64,
    pub blur_std: f64,
    pub kernel_width: usize,
    /// Salt mixed into every per-query augmentation stream.
    pub seed: u64,
    /// Swap the high bit with any zero of the categorical region instead of
    /// one in the same attribute block. Breaks one-hot validity; experimental.
    pub cross_block_swap: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            negatives: 20,
            positive_kinds: vec![PositiveKind::Noise, PositiveKind::Cut, PositiveKind::Blur],
            noise_mean: 0.0,
            noise_std: 0.05,
            cut_min: 0.2,
            blur_mean: 0.0,
            blur_std: 0.8,
            kernel_width: 5,
            seed: 0,
            cross_block_swap: false,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(LensError::Config(format!("augmentation: {m}")));
        if self.negatives < 2 {
            return err("negatives must be >= 2");
        }
        if self.positive_kinds.is_empty() {
            return err("at least one positive kind is required");
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite() && self.noise_mean.is_finite()) {
            return err("noise_std must be > 0");
        }
        if !(self.cut_min > 0.0 && self.cut_min < 1.0) {
            return err("cut_min must lie in (0, 1)");
        }
        if !(self.blur_std > 0.0 && self.blur_std.is_finite() && self.blur_mean.is_finite()) {
            return err("blur_std must be > 0");
        }
        if self.kernel_width < 3 || self.kernel_width % 2 == 0 {
            return err("kernel_width must be odd and >= 3");
        }
        Ok(())
    }
}

fn hot_index(block: &[f64]) -> Option<usize> {
    let mut hot = None;
    for (i, v) in block.iter().enumerate() {
        if *v == 1.0 {
            if hot.is_some() {
                return None;
            }
            hot = Some(i);
        } else if *v != 0.0 {
            return None;
        }
    }
    hot
}

/// Replicates `query` `count` times; in each replica one uniformly drawn
/// categorical attribute gets its high bit swapped with a uniformly drawn zero
/// bit of the same block.
pub fn negative_policy<R: Rng + ?Sized>(
    query: &[f64],
    layout: &BlockLayout,
    count: usize,
    cross_block_swap: bool,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if query.len() != layout.dimension() {
        return Err(LensError::DimensionMismatch {
            expected: layout.dimension(),
            actual: query.len(),
        });
    }
    let hot: Vec<usize> = layout
        .blocks
        .iter()
        .map(|b| {
            hot_index(&query[b.clone()]).map(|k| b.start + k).ok_or_else(|| {
                LensError::Augmentation("query violates the one-hot block invariant".into())
            })
        })
        .collect::<Result<_>>()?;
    let eligible: Vec<usize> = (0..layout.blocks.len())
        .filter(|&j| layout.blocks[j].len() >= 2)
        .collect();
    if eligible.is_empty() {
        return Err(LensError::Augmentation(
            "every categorical attribute has a single value; nothing to swap".into(),
        ));
    }
    let cat_dim = layout.categorical_dim();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        // Drawing among blocks with a zero bit is a redraw-until-eligible draw.
        let j = *eligible.choose(rng).expect("non-empty");
        let block = &layout.blocks[j];
        let from = hot[j];
        let to = if cross_block_swap {
            loop {
                let k = rng.gen_range(0..cat_dim);
                if query[k] == 0.0 {
                    break k;
                }
            }
        } else {
            let k = rng.gen_range(0..block.len() - 1);
            let k = block.start + k;
            if k >= from {
                k + 1
            } else {
                k
            }
        };
        let mut replica = query.to_vec();
        replica.swap(from, to);
        out.push(replica);
    }
    Ok(out)
}

/// `x + rho`, `rho ~ N(mean, std)` i.i.d. per coordinate, unclamped.
pub fn random_noise<R: Rng + ?Sized>(x: &[f64], mean: f64, std: f64, rng: &mut R) -> Result<Vec<f64>> {
    let dist = Normal::new(mean, std)
        .map_err(|e| LensError::Augmentation(format!("invalid noise distribution: {e}")))?;
    Ok(x.iter().map(|v| v + dist.sample(rng)).collect())
}

/// Multiplies every coordinate equal to 1 by an independent `U(cut_min, 1)` draw.
pub fn random_cut<R: Rng + ?Sized>(x: &[f64], cut_min: f64, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            if v == 1.0 {
                if cut_min >= 1.0 {
                    1.0
                } else {
                    rng.gen_range(cut_min..=1.0)
                }
            } else {
                v
            }
        })
        .collect()
}

/// Truncated Gaussian kernel of odd `width`, centred at `mean` offset, summing to 1.
pub fn gaussian_kernel(mean: f64, std: f64, width: usize) -> Vec<f64> {
    let centre = (width / 2) as f64;
    let raw: Vec<f64> = (0..width)
        .map(|i| {
            let d = i as f64 - centre - mean;
            (-d * d / (2.0 * std * std)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// "Same"-size 1-D convolution with zero padding.
pub fn convolve_same(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let c = (kernel.len() / 2) as isize;
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .filter_map(|(k, w)| {
                    let src = i - (k as isize - c);
                    (0..n).contains(&src).then(|| w * x[src as usize])
                })
                .sum()
        })
        .collect()
}

pub fn gaussian_blur(x: &[f64], mean: f64, std: f64, width: usize) -> Vec<f64> {
    convolve_same(x, &gaussian_kernel(mean, std, width))
}

/// Applies one positive (semantics-preserving) augmentation.
pub fn positive_policy<R: Rng + ?Sized>(
    kind: PositiveKind,
    x: &[f64],
    cfg: &AugmentationConfig,
    kernel: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    match kind {
        PositiveKind::Noise => random_noise(x, cfg.noise_mean, cfg.noise_std, rng),
        PositiveKind::Cut => Ok(random_cut(x, cfg.cut_min, rng)),
        PositiveKind::Blur => Ok(convolve_same(x, kernel)),
    }
}

/// One augmentation set: negative keys with index-aligned positives.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSet {
    pub kind: PositiveKind,
    pub negatives: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
}

impl AugmentationSet {
    pub fn len(&self) -> usize {
        self.negatives.len() + self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.negatives.is_empty()
    }

    /// Negatives first, then positives.
    pub fn vectors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.negatives.iter().chain(&self.positives)
    }
}

/// Negatives of one query and, per positive kind, their augmentations.
///
/// The negatives are shared by every set, which lets training embed them once.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedQuery {
    pub negatives: Vec<Vec<f64>>,
    pub positives: Vec<(PositiveKind, Vec<Vec<f64>>)>,
}

impl AugmentedQuery {
    pub fn build<R: Rng + ?Sized>(
        query: &[f64],
        layout: &BlockLayout,
        cfg: &AugmentationConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let negatives = negative_policy(query, layout, cfg.negatives, cfg.cross_block_swap, rng)?;
        let kernel = gaussian_kernel(cfg.blur_mean, cfg.blur_std, cfg.kernel_width);
        let positives = cfg
            .positive_kinds
            .iter()
            .map(|&kind| {
                let aug = negatives
                    .iter()
                    .map(|n| positive_policy(kind, n, cfg, &kernel, rng))
                    .collect::<Result<Vec<_>>>()?;
                Ok((kind, aug))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AugmentedQuery {
            negatives,
            positives,
        })
    }

    pub fn sets(&self) -> Vec<AugmentationSet> {
        self.positives
            .iter()
            .map(|(kind, pos)| AugmentationSet {
                kind: *kind,
                negatives: self.negatives.clone(),
                positives: pos.clone(),
            })
            .collect()
    }
}

/// Builds one augmentation set per configured positive kind.
pub fn build_augmentation_sets<R: Rng + ?Sized>(
    query: &[f64],
    layout: &BlockLayout,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<Vec<AugmentationSet>> {
    Ok(AugmentedQuery::build(query, layout, cfg, rng)?.sets())
}
