use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use dkws::index::read_hitlist;
use dkws::scorer::report::{class_breakdown_tsv, full_report, length_breakdown_tsv, to_json, to_table};
use dkws::scorer::{kst_normalize, read_references, ScoringConfig};

use crate::config::{load_config, load_manifest_params, Manifest};

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long, required_unless_present = "manifest")]
    hits: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    refs: Option<PathBuf>,
    /// Total archive duration in seconds (one trial per second). Required.
    #[arg(long = "T", required_unless_present = "manifest")]
    trial_duration: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Fixed decision threshold for ATWV (e.g. the dev MTWV threshold).
    #[arg(long)]
    xi: Option<f64>,
    /// Apply keyword-specific threshold normalization before scoring.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    kst: bool,
    /// Keyword list; enables the per-query-length breakdown table.
    #[arg(long)]
    keywords: Option<PathBuf>,
    /// File of keyword ids (one per line) to report as the OOV class.
    #[arg(long)]
    oov_ids: Option<PathBuf>,
    /// JSON report destination (the table always goes to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for breakdown TSVs.
    #[arg(long)]
    breakdown_dir: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct Params {
    hits: PathBuf,
    refs: PathBuf,
    scoring: ScoringConfig,
    xi: Option<f64>,
    kst: bool,
    keywords: Option<PathBuf>,
    oov_ids: Option<PathBuf>,
    out: Option<PathBuf>,
    breakdown_dir: Option<PathBuf>,
}

pub fn run(args: ScoreArgs) -> Result<()> {
    let params = match &args.manifest {
        Some(m) => load_manifest_params(m, "score")?,
        None => {
            let section = match &args.config {
                Some(path) => load_config(path)?.scoring,
                None => Default::default(),
            };
            let mut scoring = ScoringConfig::new(args.trial_duration.expect("clap"));
            if let Some(beta) = args.beta.or(section.beta) {
                scoring.beta = beta;
            }
            if let Some(tol) = section.match_tolerance_s {
                scoring.match_tolerance_s = tol;
            }
            Params {
                hits: args.hits.expect("clap"),
                refs: args.refs.expect("clap"),
                scoring,
                xi: args.xi,
                kst: args.kst,
                keywords: args.keywords,
                oov_ids: args.oov_ids,
                out: args.out,
                breakdown_dir: args.breakdown_dir,
            }
        }
    };

    let raw_hits = read_hitlist(&params.hits)?;
    let refs = read_references(&params.refs)?;
    let hits =
        if params.kst { kst_normalize(&raw_hits, &params.scoring) } else { raw_hits };

    let report = full_report(&hits, &refs, &params.scoring, params.xi)?;
    print!("{}", to_table(&report));

    if let Some(out) = &params.out {
        let json = serde_json::to_string_pretty(&to_json(&report)).expect("report json");
        std::fs::write(out, json).with_context(|| format!("cannot write {}", out.display()))?;
    }
    if let Some(dir) = &params.breakdown_dir {
        std::fs::create_dir_all(dir)?;
        if let Some(kw_path) = &params.keywords {
            let surfaces: HashMap<String, String> = dkws::data::read_keywords(kw_path)?
                .into_iter()
                .map(|k| (k.id, k.surface))
                .collect();
            let tsv = length_breakdown_tsv(&hits, &refs, &params.scoring, &surfaces)?;
            std::fs::write(dir.join("by_length.tsv"), tsv)?;
        }
        if let Some(oov_path) = &params.oov_ids {
            let oov: HashSet<String> = std::fs::read_to_string(oov_path)?
                .lines()
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect();
            let tsv = class_breakdown_tsv(&hits, &refs, &params.scoring, &oov)?;
            std::fs::write(dir.join("by_class.tsv"), tsv)?;
        }
    }
    if let Some(out) = &params.out {
        Manifest::new("score", 0, &params).write(&out.with_extension("manifest.json"))?;
    }
    Ok(())
}
