//! Two-dimensional latent export for external plotting.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contrastive::encode_latents;
use crate::error::{LensError, Result};
use crate::nn::DenseNetwork;
use crate::schema::{Corpus, EncodedEntry};
use crate::synthetic::LabelKind;

/// Extra column attached to each exported latent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Annotation {
    Attribute(String),
    AnomalyLabel,
    CodeIndex,
}

impl fmt::Display for Annotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Annotation::Attribute(name) => f.write_str(name),
            Annotation::AnomalyLabel => f.write_str("anomaly_label"),
            Annotation::CodeIndex => f.write_str("code_index"),
        }
    }
}

impl FromStr for Annotation {
    type Err = LensError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "" => Err(LensError::Config("empty annotation name".into())),
            "anomaly_label" => Ok(Annotation::AnomalyLabel),
            "code_index" => Ok(Annotation::CodeIndex),
            name => Ok(Annotation::Attribute(name.to_string())),
        }
    }
}

impl TryFrom<String> for Annotation {
    type Error = LensError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Annotation> for String {
    fn from(a: Annotation) -> String {
        a.to_string()
    }
}

/// Optional per-entry task outputs available for annotation.
#[derive(Debug, Clone, Copy, Default)]
pub struct TaskColumns<'a> {
    pub labels: Option<&'a [LabelKind]>,
    pub codes: Option<&'a [usize]>,
}

fn real(v: f64) -> String {
    format!("{v:.8e}")
}

/// Writes `entry_id,z1,z2,<annotations>` with one row per corpus entry.
pub fn export_latents<W: Write>(
    encoder: &DenseNetwork,
    corpus: &Corpus,
    encoded: &[EncodedEntry],
    annotations: &[Annotation],
    tasks: TaskColumns<'_>,
    out: W,
) -> Result<()> {
    if encoder.output_dim() != 2 {
        return Err(LensError::Config(format!(
            "latent export needs a 2-dimensional bottleneck, encoder has {}",
            encoder.output_dim()
        )));
    }
    let n = corpus.entries.len();
    if encoded.len() != n {
        return Err(LensError::DimensionMismatch {
            expected: n,
            actual: encoded.len(),
        });
    }
    let mut positions = Vec::with_capacity(annotations.len());
    for a in annotations {
        positions.push(match a {
            Annotation::Attribute(name) => Some(corpus.schema.position(name).ok_or_else(|| {
                LensError::Config(format!("unknown annotation attribute `{name}`"))
            })?),
            Annotation::AnomalyLabel => match tasks.labels {
                Some(l) if l.len() == n => None,
                _ => return Err(LensError::Config("anomaly_label requested but no aligned labels".into())),
            },
            Annotation::CodeIndex => match tasks.codes {
                Some(c) if c.len() == n => None,
                _ => return Err(LensError::Config("code_index requested but no aligned codes".into())),
            },
        });
    }
    let latents = encode_latents(encoder, encoded)?;
    if latents.iter().flatten().any(|v| !v.is_finite()) {
        return Err(LensError::Metric("non-finite latent coordinate".into()));
    }

    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["entry_id".to_string(), "z1".into(), "z2".into()];
    header.extend(annotations.iter().map(ToString::to_string));
    w.write_record(&header)?;
    for (i, (entry, z)) in corpus.entries.iter().zip(&latents).enumerate() {
        let mut row = vec![entry.entry_id.to_string(), real(z[0]), real(z[1])];
        for (a, pos) in annotations.iter().zip(&positions) {
            row.push(match a {
                Annotation::Attribute(_) => entry.values[pos.expect("resolved")].as_text(),
                Annotation::AnomalyLabel => tasks.labels.expect("checked")[i].to_string(),
                Annotation::CodeIndex => tasks.codes.expect("checked")[i].to_string(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| LensError::io("<latent export>", e))?;
    Ok(())
}

pub fn export_latents_to_path(
    encoder: &DenseNetwork,
    corpus: &Corpus,
    encoded: &[EncodedEntry],
    annotations: &[Annotation],
    tasks: TaskColumns<'_>,
    path: &Path,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| LensError::io(path, e))?;
    export_latents(encoder, corpus, encoded, annotations, tasks, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotation_names_round_trip() {
        for name in ["payment_type", "anomaly_label", "code_index"] {
            assert_eq!(name.parse::<Annotation>().unwrap().to_string(), name);
        }
        assert!("".parse::<Annotation>().is_err());
    }

    #[test]
    fn reals_carry_nine_significant_digits() {
        assert_eq!(real(1.0 / 3.0), "3.33333333e-1");
    }
}
