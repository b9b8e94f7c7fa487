use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lens_core::config::RunConfig;
use lens_core::export::Annotation;
use lens_core::pipeline::{self, Dataset};
use lens_core::{LensError, Result};

/// Contrastive representation learning for journal-entry data.
#[derive(Debug, Parser)]
#[command(name = "lens", version)]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration value, e.g. `pretrain.temperature=0.8`.
    #[arg(long = "set", value_name = "K=V", global = true)]
    overrides: Vec<String>,

    /// Run a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of consecutive seeds, starting at `--seed` or the first configured seed.
    #[arg(long, global = true)]
    seeds: Option<usize>,

    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Print errors as JSON on stderr.
    #[arg(long, global = true)]
    json_errors: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic ledger and its anomaly labels.
    Generate,
    /// Build the encoding map of the corpus.
    Encode,
    /// Contrastively pretrain the encoder.
    Pretrain,
    /// Fine-tune the anomaly-detection decoder on the frozen encoder.
    FinetuneAen,
    /// Fine-tune VQ-VAE decoders and codebooks on the frozen encoder.
    FinetuneVqvae,
    /// Multi-seed evaluation of every task; writes report.json.
    Eval,
    /// Export 2-D latents with annotations to latents.csv.
    ExportLatents,
    /// Generate, encode and evaluate in one go.
    RunAll,
    /// Print the effective configuration.
    ShowConfig,
}

fn seed_overrides(cli: &Cli, base: &RunConfig) -> Vec<String> {
    let start = cli.seed.unwrap_or(base.seeds[0]);
    match (cli.seed, cli.seeds) {
        (_, Some(n)) => {
            let list: Vec<String> = (0..n as u64).map(|i| (start + i).to_string()).collect();
            vec![format!("seeds=[{}]", list.join(", "))]
        }
        (Some(s), None) => vec![format!("seeds=[{s}]")],
        (None, None) => Vec::new(),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let base = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let extra = seed_overrides(cli, &base);
    if extra.is_empty() {
        return Ok(base);
    }
    if cli.seeds == Some(0) {
        return Err(LensError::Config("--seeds must be >= 1".into()));
    }
    let mut all = cli.overrides.clone();
    all.extend(extra);
    RunConfig::load(cli.config.as_deref(), &all)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn codes_for_export(cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<Option<Vec<usize>>> {
    if !cfg.export.annotations.contains(&Annotation::CodeIndex) {
        return Ok(None);
    }
    match pipeline::export_codebook_size(cfg) {
        Some(k) => {
            let path = out.join(pipeline::vqvae_artifact(k, "codes.csv"));
            if path.exists() {
                pipeline::read_codes(&path, &data.ids).map(Some)
            } else {
                Ok(None)
            }
        }
        None => Ok(None),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = cli.out.as_path();
    let single = cfg.for_seed(cfg.seeds[0]);
    match cli.command {
        Command::ShowConfig => print!("{}", cfg.to_toml()?),
        Command::Generate => {
            let (corpus, labels) = pipeline::generate(&cfg, out)?;
            let count = |k| labels.iter().filter(|l| l.label == k).count();
            eprintln!(
                "wrote {} entries ({} global, {} local anomalies) to {}",
                corpus.entries.len(),
                count(lens_core::synthetic::LabelKind::Global),
                count(lens_core::synthetic::LabelKind::Local),
                out.display()
            );
        }
        Command::Encode => {
            let map = pipeline::encode(&cfg, out)?;
            eprintln!("encoding dimension {}", map.dimension());
        }
        Command::Pretrain => {
            let data = pipeline::load_dataset(&single, out)?;
            let outcome = pipeline::pretrain(&single, &data, out)?;
            eprintln!(
                "pretrained {} epochs, best loss {:.6} at epoch {}",
                outcome.log.len(),
                outcome.log[outcome.best_epoch].loss,
                outcome.best_epoch
            );
        }
        Command::FinetuneAen => {
            let data = pipeline::load_dataset(&single, out)?;
            let encoder = pipeline::load_encoder(out)?;
            let (_, metrics) = pipeline::finetune_aen(&single, &data, &encoder, out, "aen")?;
            if let Some(m) = metrics {
                print_json(&m)?;
            }
        }
        Command::FinetuneVqvae => {
            let data = pipeline::load_dataset(&single, out)?;
            let encoder = pipeline::load_encoder(out)?;
            let mut all = Vec::new();
            for &k in &single.vqvae.codebook_sizes {
                all.push(pipeline::finetune_vqvae(&single, &data, &encoder, k, out)?.1);
            }
            print_json(&all)?;
        }
        Command::ExportLatents => {
            let data = pipeline::load_dataset(&single, out)?;
            let encoder = pipeline::load_encoder(out)?;
            let codes = codes_for_export(&single, &data, out)?;
            let path = pipeline::export_latents(&single, &data, &encoder, codes.as_deref(), out)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Eval | Command::RunAll => {
            pipeline::write_effective_config(&cfg, out)?;
            if matches!(cli.command, Command::RunAll) {
                if cfg.data.corpus.is_none() {
                    pipeline::generate(&cfg, out)?;
                }
                pipeline::encode(&cfg, out)?;
            }
            let report = pipeline::evaluate_with(&cfg, out, |r, t| {
                let total: f64 = t.values().sum();
                eprintln!("seed {} done in {total:.1}s: AP_all {:.4}", r.seed, r.aen.ap_all);
            })?;
            print!("{}", report.summary());
            eprintln!("wrote {}", out.join(pipeline::REPORT).display());
        }
    }
    Ok(())
}

fn exit_code(e: &LensError) -> u8 {
    match e {
        LensError::Config(_) => 2,
        LensError::MissingArtifact(_) => 3,
        LensError::Checkpoint(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.json_errors {
                let body = serde_json::json!({
                    "error": { "kind": e.kind(), "message": e.to_string() }
                });
                eprintln!("{body}");
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
