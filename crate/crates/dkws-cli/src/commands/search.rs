use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use dkws::index::{load_index, search_all, write_hitlist, IslandScore, SearchConfig};
use dkws::model::{load_model, Query};

use crate::config::{load_config, load_manifest_params, Manifest};

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long, required_unless_present = "manifest")]
    index: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    model: Option<PathBuf>,
    /// Keyword list TSV: keywordId<TAB>surface.
    #[arg(long, required_unless_present = "manifest")]
    keywords: Option<PathBuf>,
    /// Posterior threshold; defaults to the config's search section (0.4).
    #[arg(long)]
    alpha: Option<f64>,
    /// Island score: median (default), mean, or max.
    #[arg(long)]
    island_score: Option<String>,
    /// Query language (defaults to the model's language when unambiguous).
    #[arg(long)]
    language: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct Params {
    index: PathBuf,
    model: PathBuf,
    keywords: PathBuf,
    language: Option<String>,
    search: SearchConfig,
    out: PathBuf,
}

pub fn run(args: SearchArgs) -> Result<()> {
    let params = match &args.manifest {
        Some(m) => {
            let mut p: Params = load_manifest_params(m, "search")?;
            if let Some(out) = args.out {
                p.out = out;
            }
            p
        }
        None => {
            let cfg = match &args.config {
                Some(path) => load_config(path)?,
                None => Default::default(),
            };
            let mut search = cfg.search.unwrap_or_default();
            if let Some(alpha) = args.alpha {
                search.alpha = alpha;
            }
            if let Some(kind) = &args.island_score {
                search.island_score = match kind.as_str() {
                    "median" => IslandScore::Median,
                    "mean" => IslandScore::Mean,
                    "max" => IslandScore::Max,
                    other => bail!("unknown island score '{other}'"),
                };
            }
            search.validate()?;
            Params {
                index: args.index.expect("clap"),
                model: args.model.expect("clap"),
                keywords: args.keywords.expect("clap"),
                language: args.language,
                search,
                out: args.out.expect("clap"),
            }
        }
    };

    let model = load_model(&params.model)?;
    let index = load_index(&params.index)?;
    let language = match &params.language {
        Some(l) => l.clone(),
        None => {
            let langs: Vec<&str> = model.languages().collect();
            if langs.len() != 1 {
                bail!("model has {} languages; pass --language", langs.len());
            }
            langs[0].to_string()
        }
    };
    let keywords: Vec<(String, Query)> = dkws::data::read_keywords(&params.keywords)?
        .into_iter()
        .map(|k| (k.id, Query::new(language.clone(), k.surface)))
        .collect();

    let (hits, failures) = search_all(&index, &model, &keywords, &params.search)?;
    for (id, err) in &failures {
        eprintln!("warning: keyword {id} not searchable: {err}");
    }
    write_hitlist(&hits, &params.out)?;
    Manifest::new("search", 0, &params)
        .input("model_fingerprint", format!("{:#018x}", index.model_fingerprint))
        .write(&params.out.with_extension("manifest.json"))?;
    println!(
        "{} hits for {} keywords ({} unsearchable) -> {}",
        hits.len(),
        keywords.len(),
        failures.len(),
        params.out.display()
    );
    Ok(())
}
