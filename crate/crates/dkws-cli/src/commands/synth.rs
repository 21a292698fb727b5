use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use dkws::data::{generate_synthetic_corpus, save_corpus, write_keywords, Keyword, SynthesisSpec};
use dkws::scorer::{extract_references, write_references};

use crate::config::{load_config, load_manifest_params, Manifest};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Config file with a "synth" section (or a synthesis spec on its own).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory; one subdirectory per language.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replay an earlier run from its manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct Params {
    spec: SynthesisSpec,
    out: PathBuf,
    seed: u64,
}

pub fn run(args: SynthArgs) -> Result<()> {
    let params = match &args.manifest {
        Some(m) => {
            let mut p: Params = load_manifest_params(m, "synth")?;
            if let Some(out) = args.out {
                p.out = out;
            }
            p
        }
        None => {
            let spec = match &args.spec {
                Some(path) => {
                    // accept either a full run config or a bare synthesis spec
                    match load_config(path) {
                        Ok(cfg) => cfg.synth.unwrap_or_default(),
                        Err(_) => {
                            let text = std::fs::read_to_string(path)?;
                            serde_json::from_str::<SynthesisSpec>(&text)
                                .with_context(|| format!("invalid synthesis spec {}", path.display()))?
                        }
                    }
                }
                None => SynthesisSpec::default(),
            };
            spec.validate()?;
            Params {
                spec,
                out: args.out.context("--out is required (or use --manifest)")?,
                seed: args.seed.unwrap_or(0),
            }
        }
    };

    let languages = generate_synthetic_corpus(&params.spec, params.seed)?;
    std::fs::create_dir_all(&params.out)?;
    for lang in &languages {
        let dir = params.out.join(&lang.language);
        save_corpus(&dir.join("train"), &lang.train)?;
        save_corpus(&dir.join("dev"), &lang.dev)?;

        let kw = |words: &[String], prefix: &str| -> Vec<Keyword> {
            words
                .iter()
                .enumerate()
                .map(|(i, w)| Keyword { id: format!("{prefix}{i:04}"), surface: w.clone() })
                .collect()
        };
        let iv = kw(&lang.queries_iv, "iv");
        let oov = kw(&lang.queries_oov, "oov");
        write_keywords(&dir.join("queries_iv.tsv"), &iv)?;
        write_keywords(&dir.join("queries_oov.tsv"), &oov)?;
        write_references(&extract_references(&lang.dev, &iv), &dir.join("refs_iv.txt"))?;
        write_references(&extract_references(&lang.dev, &oov), &dir.join("refs_oov.txt"))?;
        println!(
            "{}: {} train utts ({:.1} s), {} dev utts ({:.1} s), {} IV / {} OOV queries",
            lang.language,
            lang.train.len(),
            lang.train.total_seconds(),
            lang.dev.len(),
            lang.dev.total_seconds(),
            iv.len(),
            oov.len()
        );
    }
    Manifest::new("synth", params.seed, &params).write(&params.out.join("manifest.json"))?;
    Ok(())
}
