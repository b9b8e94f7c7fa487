#![allow(dead_code)]

pub mod gradcheck;

use lens_core::nn::{DenseNetwork, Gradients};
use lens_core::schema::BlockLayout;

/// Categorical blocks of the given sizes followed by `numeric` scaled coordinates.
pub fn layout(sizes: &[usize], numeric: usize) -> BlockLayout {
    let mut blocks = Vec::new();
    let mut off = 0;
    for &s in sizes {
        blocks.push(off..off + s);
        off += s;
    }
    BlockLayout {
        blocks,
        numeric: off..off + numeric,
    }
}

/// One-hot entry with hot index `hot[j]` in block `j` and the given numeric values.
pub fn entry(layout: &BlockLayout, hot: &[usize], numeric: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; layout.dimension()];
    for (b, &h) in layout.blocks.iter().zip(hot) {
        x[b.start + h] = 1.0;
    }
    x[layout.numeric.clone()].copy_from_slice(numeric);
    x
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < 1e-9 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Largest relative error between `analytic` and central differences of `f`
/// over every parameter of `net`.
pub fn max_param_error(net: &DenseNetwork, analytic: &Gradients, h: f64, f: impl Fn(&DenseNetwork) -> f64) -> f64 {
    let flat: Vec<f64> = analytic.slices().flat_map(|s| s.to_vec()).collect();
    let mut worst = 0.0f64;
    for (k, &a) in flat.iter().enumerate() {
        let mut plus = net.clone();
        let mut minus = net.clone();
        nudge(&mut plus, k, h);
        nudge(&mut minus, k, -h);
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        worst = worst.max(relative_error(a, fd));
    }
    worst
}

pub fn nudge(net: &mut DenseNetwork, mut k: usize, delta: f64) {
    for s in net.parameter_slices_mut() {
        if k < s.len() {
            s[k] += delta;
            return;
        }
        k -= s.len();
    }
    panic!("parameter index out of range");
}

/// Average precision by enumerating every distinct score as a threshold and
/// summing recall increments times precision.
pub fn brute_force_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|l| **l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (s, l) in scores.iter().zip(labels) {
            if *s >= t {
                if *l {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / positives;
        let precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// `2^H` of the count distribution, written out term by term.
pub fn entropy_perplexity(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / n as f64;
            h -= p * p.log2();
        }
    }
    2f64.powf(h)
}

/// Purity from an explicit contingency table: per code, `(members, distinct keys)`.
pub fn contingency_purity(table: &[(usize, usize)]) -> (f64, f64) {
    let used: Vec<&(usize, usize)> = table.iter().filter(|(n, _)| *n > 0).collect();
    let n: usize = used.iter().map(|(m, _)| m).sum();
    let mean = used.iter().map(|(m, u)| 1.0 - *u as f64 / *m as f64).sum::<f64>() / used.len() as f64;
    let weighted = used
        .iter()
        .map(|(m, u)| (*m as f64 / n as f64) * (1.0 - *u as f64 / *m as f64))
        .sum();
    (mean, weighted)
}
