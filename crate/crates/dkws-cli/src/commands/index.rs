use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use dkws::index::{build_index, save_index};
use dkws::model::load_model;

use crate::commands::load_corpus_arg;
use crate::config::{load_manifest_params, Manifest};

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[arg(long, required_unless_present = "manifest")]
    model: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    language: Option<String>,
    #[arg(long, required_unless_present = "manifest")]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct Params {
    model: PathBuf,
    corpus: PathBuf,
    language: Option<String>,
    out: PathBuf,
}

pub fn run(args: IndexArgs) -> Result<()> {
    let params = match &args.manifest {
        Some(m) => {
            let mut p: Params = load_manifest_params(m, "index")?;
            if let Some(out) = args.out {
                p.out = out;
            }
            p
        }
        None => Params {
            model: args.model.expect("clap"),
            corpus: args.corpus.expect("clap"),
            language: args.language,
            out: args.out.expect("clap"),
        },
    };

    let model = load_model(&params.model)?;
    let corpus = load_corpus_arg(&params.corpus, params.language.as_deref())?;
    let index = build_index(&model, &corpus)?;
    let short: Vec<&str> = index
        .entries
        .iter()
        .filter(|e| e.output_frames() == 0 && e.input_frames > 0)
        .map(|e| e.utterance_id.as_str())
        .collect();
    if !short.is_empty() {
        eprintln!(
            "warning: {} utterances too short to encode, indexed as empty: {}",
            short.len(),
            short.join(", ")
        );
    }
    save_index(&index, &params.out)?;
    Manifest::new("index", 0, &params)
        .input("model_fingerprint", format!("{:#018x}", index.model_fingerprint))
        .write(&params.out.with_extension("manifest.json"))
        .context("writing index manifest")?;
    println!(
        "indexed {} utterances ({:.1} s, {} encoded frames) into {}",
        index.entries.len(),
        index.total_seconds(),
        index.total_output_frames(),
        params.out.display()
    );
    Ok(())
}
