use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use dkws::index::{read_hitlist, write_hitlist};
use dkws::scorer::{fuse_hitlists, kst_normalize, read_references, tune_fusion_weight, ScoringConfig};

use crate::config::{load_manifest_params, Manifest};

#[derive(Args, Debug)]
pub struct FuseArgs {
    #[arg(long, required_unless_present = "manifest")]
    hits_a: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    hits_b: Option<PathBuf>,
    /// Fusion weight for system A in [0, 1]; omit with --tune.
    #[arg(long)]
    w: Option<f64>,
    /// Tune the weight on a dev grid {0.0, 0.1, ..., 1.0} against --refs.
    #[arg(long)]
    tune: bool,
    #[arg(long)]
    refs: Option<PathBuf>,
    /// Total archive duration in seconds (for KST normalization and tuning).
    #[arg(long = "T", required_unless_present = "manifest")]
    trial_duration: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Skip KST normalization (inputs are already normalized).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    kst: bool,
    #[arg(long, required_unless_present = "manifest")]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct Params {
    hits_a: PathBuf,
    hits_b: PathBuf,
    w: Option<f64>,
    tune: bool,
    refs: Option<PathBuf>,
    scoring: ScoringConfig,
    kst: bool,
    out: PathBuf,
}

pub fn run(args: FuseArgs) -> Result<()> {
    let params = match &args.manifest {
        Some(m) => {
            let mut p: Params = load_manifest_params(m, "fuse")?;
            if let Some(out) = args.out {
                p.out = out;
            }
            p
        }
        None => {
            let mut scoring = ScoringConfig::new(args.trial_duration.expect("clap"));
            if let Some(beta) = args.beta {
                scoring.beta = beta;
            }
            Params {
                hits_a: args.hits_a.expect("clap"),
                hits_b: args.hits_b.expect("clap"),
                w: args.w,
                tune: args.tune,
                refs: args.refs,
                scoring,
                kst: args.kst,
                out: args.out.expect("clap"),
            }
        }
    };

    let mut a = read_hitlist(&params.hits_a)?;
    let mut b = read_hitlist(&params.hits_b)?;
    if params.kst {
        a = kst_normalize(&a, &params.scoring);
        b = kst_normalize(&b, &params.scoring);
    }

    let (w, fused) = if params.tune {
        let Some(refs_path) = &params.refs else {
            bail!("--tune requires --refs");
        };
        let refs = read_references(refs_path)?;
        tune_fusion_weight(&a, &b, &refs, &params.scoring)?
    } else {
        let Some(w) = params.w else {
            bail!("either --w or --tune is required");
        };
        if !(0.0..=1.0).contains(&w) {
            bail!("--w must be in [0, 1], got {w}");
        }
        (w, fuse_hitlists(&a, &b, w, &params.scoring))
    };

    write_hitlist(&fused, &params.out)?;
    let recorded = Params { w: Some(w), ..params };
    Manifest::new("fuse", 0, &recorded).write(&recorded.out.with_extension("manifest.json"))?;
    println!("fused {} + {} hits at w = {:.1} -> {} hits", a.len(), b.len(), w, fused.len());
    Ok(())
}
