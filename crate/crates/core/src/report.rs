//! Multi-seed metrics report.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyMetrics;
use crate::config::RunConfig;
use crate::error::{LensError, Result};
use crate::sampling::SamplingMetrics;

pub const REPORT_FORMAT: &str = "lens-report-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanStd { mean, std, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub pretrain_best_loss: f64,
    pub aen: AnomalyMetrics,
    /// Same decoder budget on a randomly initialized frozen encoder.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<AnomalyMetrics>,
    pub sampling: Vec<SamplingMetrics>,
}

impl SeedResult {
    /// Flat `task.metric` view used for aggregation.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let mut anomaly = |prefix: &str, a: &AnomalyMetrics| {
            m.insert(format!("{prefix}.ap_all"), a.ap_all);
            if let Some(v) = a.ap_global {
                m.insert(format!("{prefix}.ap_global"), v);
            }
            if let Some(v) = a.ap_local {
                m.insert(format!("{prefix}.ap_local"), v);
            }
        };
        anomaly("aen", &self.aen);
        if let Some(b) = &self.baseline {
            anomaly("baseline", b);
        }
        for s in &self.sampling {
            let k = s.codebook_size;
            m.insert(format!("vqvae.k{k}.perplexity"), s.perplexity);
            if let Some(v) = s.perplexity_literal {
                m.insert(format!("vqvae.k{k}.perplexity_literal"), v);
            }
            m.insert(format!("vqvae.k{k}.purity"), s.purity);
            m.insert(format!("vqvae.k{k}.weighted_purity"), s.weighted_purity);
        }
        m
    }
}

/// Wall-clock seconds per seed and stage.
pub type Timings = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub config_digest: String,
    pub config: RunConfig,
    pub seeds: Vec<SeedResult>,
    pub aggregate: BTreeMap<String, MeanStd>,
    pub timings: Timings,
}

pub fn aggregate(seeds: &[SeedResult]) -> BTreeMap<String, MeanStd> {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in seeds {
        for (k, v) in s.metrics() {
            columns.entry(k).or_default().push(v);
        }
    }
    columns
        .into_iter()
        .filter_map(|(k, v)| mean_std(&v).map(|ms| (k, ms)))
        .collect()
}

impl RunReport {
    pub fn new(config: &RunConfig, seeds: Vec<SeedResult>, timings: Timings) -> Result<Self> {
        Ok(RunReport {
            format: REPORT_FORMAT.into(),
            config_digest: config.digest()?,
            config: config.clone(),
            aggregate: aggregate(&seeds),
            seeds,
            timings,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The report with the timing section emptied, for reproducibility checks.
    pub fn without_timings(&self) -> RunReport {
        RunReport {
            timings: Timings::new(),
            ..self.clone()
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| LensError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(LensError::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| LensError::io(path, e))?;
        let report: RunReport = serde_json::from_str(&text)?;
        if report.format != REPORT_FORMAT {
            return Err(LensError::Config(format!("unknown report format `{}`", report.format)));
        }
        Ok(report)
    }

    /// Table-style summary lines, one per aggregated metric.
    pub fn summary(&self) -> String {
        self.aggregate
            .iter()
            .map(|(k, v)| format!("{k:<32} {:.4} ± {:.4} (n={})\n", v.mean, v.std, v.n))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_standard_deviation() {
        let ms = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(ms.mean, 2.5);
        assert!((ms.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[2.0]).unwrap().std, 0.0);
        assert!(mean_std(&[]).is_none());
    }
}
