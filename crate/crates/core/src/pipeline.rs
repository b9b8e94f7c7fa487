//! Stage orchestration over an output directory of artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::anomaly::{self, AenOutcome, AnomalyMetrics};
use crate::config::RunConfig;
use crate::contrastive::{self, EpochRecord, PretrainOutcome};
use crate::error::{LensError, Result};
use crate::export::{export_latents_to_path, Annotation, TaskColumns};
use crate::nn::{checkpoint, mlp_specs, DenseNetwork};
use crate::report::{RunReport, SeedResult, Timings};
use crate::rng::{derived_rng, stream};
use crate::sampling::{self, draw_audit_sample, evaluate_sampling, Codebook, SamplingMetrics, VqvaeOutcome};
use crate::schema::{read_corpus_csv, write_corpus_csv, BlockLayout, Corpus, EncodedEntry, EncodingMap};
use crate::synthetic::{align_labels, generate_labeled, read_labels_csv, write_labels_csv, AnomalyLabel, LabelKind};

pub const CORPUS: &str = "corpus.csv";
pub const LABELS: &str = "labels.csv";
pub const ENCMAP: &str = "encmap.json";
pub const ENCODER: &str = "encoder.ckpt";
pub const PRETRAIN_LOG: &str = "pretrain_log.jsonl";
pub const AEN_DECODER: &str = "aen_decoder.ckpt";
pub const AEN_LOG: &str = "aen_log.jsonl";
pub const LATENTS: &str = "latents.csv";
pub const REPORT: &str = "report.json";
pub const CODEBOOK_FORMAT: &str = "lens-codebook-v1";

pub fn vqvae_artifact(k: usize, suffix: &str) -> String {
    format!("vqvae_k{k}_{suffix}")
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LensError::io(dir, e))
}

fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in log {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| LensError::io(path, e))
}

/// Corpus plus its encoding, as consumed by every training stage.
pub struct Dataset {
    pub corpus: Corpus,
    pub labels: Option<Vec<LabelKind>>,
    pub map: EncodingMap,
    pub encoded: Vec<EncodedEntry>,
    pub ids: Vec<u64>,
}

impl Dataset {
    pub fn new(corpus: Corpus, labels: Option<Vec<LabelKind>>, map: EncodingMap, cfg: &RunConfig) -> Result<Self> {
        let encoded = corpus
            .entries
            .iter()
            .map(|e| map.encode(e, &corpus.schema, cfg.data.oov))
            .collect::<Result<Vec<_>>>()?;
        let ids = corpus.entries.iter().map(|e| e.entry_id).collect();
        Ok(Dataset {
            corpus,
            labels,
            map,
            encoded,
            ids,
        })
    }

    pub fn layout(&self) -> BlockLayout {
        self.map.layout()
    }

    /// De-duplication keys over the categorical attributes.
    pub fn categorical_keys(&self) -> Vec<Vec<&str>> {
        self.corpus.entries.iter().map(|e| e.categorical_key()).collect()
    }
}

/// Generates the synthetic corpus and its labels into `out`.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<(Corpus, Vec<AnomalyLabel>)> {
    ensure_dir(out)?;
    let (corpus, labels) = generate_labeled(&cfg.synthetic)?;
    write_corpus_csv(&out.join(CORPUS), &corpus)?;
    write_labels_csv(&out.join(LABELS), &labels)?;
    Ok((corpus, labels))
}

/// Reads the configured external corpus, or the generated one in `out`.
pub fn load_corpus(cfg: &RunConfig, out: &Path) -> Result<(Corpus, Option<Vec<LabelKind>>)> {
    let (corpus_path, labels_path, mut hints) = match &cfg.data.corpus {
        Some(p) => (p.clone(), cfg.data.labels.clone(), BTreeMap::new()),
        None => {
            let hints = cfg
                .synthetic
                .schema()?
                .attributes()
                .iter()
                .map(|a| (a.name.clone(), a.kind))
                .collect();
            (out.join(CORPUS), Some(out.join(LABELS)), hints)
        }
    };
    hints.extend(cfg.data.kind_hints.clone());
    let corpus = read_corpus_csv(&corpus_path, &hints, &cfg.data.excluded)?;
    let labels = match labels_path {
        Some(p) if p.exists() => Some(align_labels(&corpus, &read_labels_csv(&p)?)?),
        _ => None,
    };
    Ok((corpus, labels))
}

/// Builds the encoding map of the corpus and writes it to `out`.
pub fn encode(cfg: &RunConfig, out: &Path) -> Result<EncodingMap> {
    ensure_dir(out)?;
    let (corpus, _) = load_corpus(cfg, out)?;
    let map = EncodingMap::build(&corpus.entries, &corpus.schema)?;
    map.save(&out.join(ENCMAP))?;
    Ok(map)
}

pub fn load_dataset(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    let (corpus, labels) = load_corpus(cfg, out)?;
    let map = EncodingMap::load(&out.join(ENCMAP))?;
    Dataset::new(corpus, labels, map, cfg)
}

pub fn load_encoder(dir: &Path) -> Result<DenseNetwork> {
    checkpoint::load(&dir.join(ENCODER))
}

/// Contrastive pretraining; the returned encoder is the stored 32-bit one.
pub fn pretrain(cfg: &RunConfig, data: &Dataset, dir: &Path) -> Result<PretrainOutcome> {
    ensure_dir(dir)?;
    let (encoded, ids): (Vec<EncodedEntry>, Vec<u64>) = if cfg.pretrain.exclude_anomalies {
        let labels = data.labels.as_ref().ok_or_else(|| {
            LensError::Config("pretrain.exclude_anomalies needs anomaly labels".into())
        })?;
        data.encoded
            .iter()
            .zip(&data.ids)
            .zip(labels)
            .filter(|(_, l)| **l == LabelKind::Normal)
            .map(|((x, id), _)| (x.clone(), *id))
            .unzip()
    } else {
        (data.encoded.clone(), data.ids.clone())
    };
    let mut outcome = contrastive::pretrain(&encoded, &ids, &data.layout(), &cfg.pretrain, &cfg.augmentation)?;
    checkpoint::save(&outcome.encoder, &dir.join(ENCODER))?;
    outcome.encoder = checkpoint::quantize(&outcome.encoder);
    write_log(&dir.join(PRETRAIN_LOG), &outcome.log)?;
    Ok(outcome)
}

/// Randomly initialized frozen encoder of the configured architecture.
pub fn baseline_encoder(cfg: &RunConfig, input_dim: usize) -> Result<DenseNetwork> {
    DenseNetwork::glorot(
        &mlp_specs(input_dim, &cfg.pretrain.encoder_widths, cfg.pretrain.leaky_alpha),
        &mut derived_rng(cfg.pretrain.seed, &[stream::BASELINE_INIT]),
    )
}

fn write_scores(path: &Path, data: &Dataset, scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["entry_id", "score", "label"])?;
    for (i, (id, s)) in data.ids.iter().zip(scores).enumerate() {
        let label = data.labels.as_ref().map_or(String::new(), |l| l[i].to_string());
        w.write_record([id.to_string(), format!("{s:.8e}"), label])?;
    }
    w.flush().map_err(|e| LensError::io(path, e))
}

/// Fine-tunes the anomaly decoder; metrics are computed when labels exist.
/// `prefix` names the artifacts (`aen` or `baseline`).
pub fn finetune_aen(
    cfg: &RunConfig,
    data: &Dataset,
    encoder: &DenseNetwork,
    dir: &Path,
    prefix: &str,
) -> Result<(AenOutcome, Option<AnomalyMetrics>)> {
    ensure_dir(dir)?;
    let outcome = anomaly::finetune_aen(encoder, &data.encoded, &data.layout(), &cfg.aen)?;
    let scores: Vec<f64> = anomaly::score_entries(&outcome.model, &data.encoded, &data.ids, cfg.aen.nu)?
        .into_iter()
        .map(|s| s.reconstruction_error)
        .collect();
    let name = |s: &str| dir.join(format!("{prefix}_{s}"));
    checkpoint::save(&outcome.model.decoder, &name("decoder.ckpt"))?;
    write_log(&name("log.jsonl"), &outcome.log)?;
    write_scores(&name("scores.csv"), data, &scores)?;
    let metrics = match &data.labels {
        Some(l) => Some(anomaly::evaluate_scores(&scores, l)?),
        None => None,
    };
    Ok((outcome, metrics))
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    format: String,
    vectors: Vec<Vec<f64>>,
}

pub fn save_codebook(codebook: &Codebook, path: &Path) -> Result<()> {
    let file = CodebookFile {
        format: CODEBOOK_FORMAT.into(),
        vectors: codebook.vectors.clone(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)? + "\n").map_err(|e| LensError::io(path, e))
}

pub fn load_codebook(path: &Path) -> Result<Codebook> {
    if !path.exists() {
        return Err(LensError::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| LensError::io(path, e))?;
    let file: CodebookFile = serde_json::from_str(&text)?;
    if file.format != CODEBOOK_FORMAT {
        return Err(LensError::Config(format!("unknown codebook format `{}`", file.format)));
    }
    Codebook::new(file.vectors)
}

fn write_codes(path: &Path, ids: &[u64], codes: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["entry_id", "code"])?;
    for (id, k) in ids.iter().zip(codes) {
        w.write_record([id.to_string(), k.to_string()])?;
    }
    w.flush().map_err(|e| LensError::io(path, e))
}

pub fn read_codes(path: &Path, ids: &[u64]) -> Result<Vec<usize>> {
    if !path.exists() {
        return Err(LensError::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut by_id = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| rec.get(i).and_then(|s| s.trim().parse::<u64>().ok());
        match (parse(0), parse(1)) {
            (Some(id), Some(k)) => by_id.insert(id, k as usize),
            _ => return Err(LensError::Schema(format!("{}: malformed row", path.display()))),
        };
    }
    ids.iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| LensError::Schema(format!("no code for entry {id}")))
        })
        .collect()
}

fn write_audit_sample(path: &Path, data: &Dataset, outcome: &VqvaeOutcome) -> Result<()> {
    let picks = draw_audit_sample(&outcome.assignment, &outcome.model.codebook, &outcome.latents, &data.ids)?;
    let index: BTreeMap<u64, usize> = data.ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["code".to_string(), "entry_id".into(), "distance".into()];
    header.extend(data.corpus.schema.attributes().iter().map(|a| a.name.clone()));
    w.write_record(&header)?;
    for p in picks {
        let entry = &data.corpus.entries[index[&p.entry_id]];
        let mut row = vec![p.code.to_string(), p.entry_id.to_string(), format!("{:.8e}", p.distance)];
        row.extend(entry.values.iter().map(|v| v.as_text()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| LensError::io(path, e))
}

/// Fine-tunes the VQ-VAE with `k` codes and writes its artifacts.
pub fn finetune_vqvae(
    cfg: &RunConfig,
    data: &Dataset,
    encoder: &DenseNetwork,
    k: usize,
    dir: &Path,
) -> Result<(VqvaeOutcome, SamplingMetrics)> {
    ensure_dir(dir)?;
    let outcome = sampling::finetune_vqvae(encoder, &data.encoded, &data.layout(), k, &cfg.vqvae)?;
    let metrics = evaluate_sampling(&outcome.assignment, &data.categorical_keys(), cfg.vqvae.perplexity_literal)?;
    checkpoint::save(&outcome.model.decoder, &dir.join(vqvae_artifact(k, "decoder.ckpt")))?;
    save_codebook(&outcome.model.codebook, &dir.join(vqvae_artifact(k, "codebook.json")))?;
    write_log(&dir.join(vqvae_artifact(k, "log.jsonl")), &outcome.log)?;
    write_codes(&dir.join(vqvae_artifact(k, "codes.csv")), &data.ids, &outcome.assignment.codes)?;
    write_audit_sample(&dir.join(vqvae_artifact(k, "audit_sample.csv")), data, &outcome)?;
    Ok((outcome, metrics))
}

/// Codebook size feeding the `code_index` column.
pub fn export_codebook_size(cfg: &RunConfig) -> Option<usize> {
    cfg.export
        .codebook_size
        .or_else(|| cfg.vqvae.codebook_sizes.first().copied())
}

/// Writes `latents.csv`; annotations whose data is unavailable are omitted.
pub fn export_latents(
    cfg: &RunConfig,
    data: &Dataset,
    encoder: &DenseNetwork,
    codes: Option<&[usize]>,
    dir: &Path,
) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let annotations: Vec<Annotation> = cfg
        .export
        .annotations
        .iter()
        .filter(|a| match a {
            Annotation::AnomalyLabel => data.labels.is_some(),
            Annotation::CodeIndex => codes.is_some(),
            Annotation::Attribute(_) => true,
        })
        .cloned()
        .collect();
    let path = dir.join(LATENTS);
    let tasks = TaskColumns {
        labels: data.labels.as_deref(),
        codes,
    };
    export_latents_to_path(encoder, &data.corpus, &data.encoded, &annotations, tasks, &path)?;
    Ok(path)
}

/// Pretraining and every downstream task for one seed, written under `dir`.
pub fn run_seed(cfg: &RunConfig, data: &Dataset, dir: &Path, timings: &mut BTreeMap<String, f64>) -> Result<SeedResult> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| LensError::Metric("evaluation needs anomaly labels".into()))?;
    let seed = cfg.pretrain.seed;
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let pre = pretrain(cfg, data, dir)?;
    lap("pretrain", timings);
    let (_, aen) = finetune_aen(cfg, data, &pre.encoder, dir, "aen")?;
    lap("aen", timings);
    let baseline = if cfg.aen.baseline {
        let enc = baseline_encoder(cfg, data.layout().dimension())?;
        let (_, m) = finetune_aen(cfg, data, &enc, dir, "baseline")?;
        lap("baseline", timings);
        m
    } else {
        None
    };
    let mut sampling_metrics = Vec::new();
    let mut export_codes = None;
    let export_k = export_codebook_size(cfg);
    for &k in &cfg.vqvae.codebook_sizes {
        let (outcome, m) = finetune_vqvae(cfg, data, &pre.encoder, k, dir)?;
        if Some(k) == export_k {
            export_codes = Some(outcome.assignment.codes);
        }
        sampling_metrics.push(m);
        lap(&format!("vqvae_k{k}"), timings);
    }
    if pre.encoder.output_dim() == 2 {
        export_latents(cfg, data, &pre.encoder, export_codes.as_deref(), dir)?;
        lap("export", timings);
    }
    debug_assert_eq!(labels.len(), data.encoded.len());
    Ok(SeedResult {
        seed,
        pretrain_epochs: pre.log.len(),
        pretrain_best_loss: pre.log[pre.best_epoch].loss,
        aen: aen.expect("labels present"),
        baseline,
        sampling: sampling_metrics,
    })
}

/// Multi-seed protocol over an encoded corpus in `out`; writes `report.json`.
pub fn evaluate(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    evaluate_with(cfg, out, |_, _| {})
}

/// As [`evaluate`], calling `on_seed` after each seed completes.
pub fn evaluate_with(cfg: &RunConfig, out: &Path, mut on_seed: impl FnMut(&SeedResult, &BTreeMap<String, f64>)) -> Result<RunReport> {
    cfg.validate()?;
    let data = load_dataset(cfg, out)?;
    let mut results = Vec::with_capacity(cfg.seeds.len());
    let mut timings = Timings::new();
    for &seed in &cfg.seeds {
        let mut t = BTreeMap::new();
        let r = run_seed(&cfg.for_seed(seed), &data, &seed_dir(out, seed), &mut t)?;
        on_seed(&r, &t);
        results.push(r);
        timings.insert(format!("seed-{seed}"), t);
    }
    let report = RunReport::new(cfg, results, timings)?;
    report.save(&out.join(REPORT))?;
    Ok(report)
}

/// Generation (synthetic corpora only), encoding and the full evaluation.
pub fn run_all(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    cfg.validate()?;
    ensure_dir(out)?;
    if cfg.data.corpus.is_none() {
        generate(cfg, out)?;
    }
    encode(cfg, out)?;
    evaluate(cfg, out)
}

/// Writes the effective configuration next to the artifacts.
pub fn write_effective_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let path = out.join("config.toml");
    let mut f = fs::File::create(&path).map_err(|e| LensError::io(&path, e))?;
    f.write_all(cfg.to_toml()?.as_bytes())
        .map_err(|e| LensError::io(&path, e))
}
