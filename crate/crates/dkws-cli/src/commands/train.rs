use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use dkws::model::{save_model, LanguageVocab, Model, ModelConfig};
use dkws::trainer::{self, TrainConfig};

use crate::config::{load_config, load_manifest_params, Manifest, ModelSection};
use crate::commands::{load_corpus_arg, load_dev_set};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training corpus directory (repeatable for pretraining).
    #[arg(long = "corpus", required_unless_present = "manifest")]
    corpora: Vec<PathBuf>,
    /// Language id override (defaults to each corpus directory's name).
    #[arg(long)]
    language: Option<String>,
    #[arg(long)]
    dev_corpus: Option<PathBuf>,
    #[arg(long)]
    dev_keywords: Option<PathBuf>,
    #[arg(long)]
    dev_refs: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    model_out: Option<PathBuf>,
    /// Training log destination (default: <model-out>.trainlog.json).
    #[arg(long)]
    log_out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// For finetune: the pretrained model to transfer the document encoder from.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(skip)]
    pub mode: Mode,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    Train,
    Pretrain,
    Finetune,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Pretrain => "pretrain",
            Mode::Finetune => "finetune",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Params {
    mode: Mode,
    corpora: Vec<PathBuf>,
    language: Option<String>,
    dev_corpus: Option<PathBuf>,
    dev_keywords: Option<PathBuf>,
    dev_refs: Option<PathBuf>,
    model_out: PathBuf,
    log_out: PathBuf,
    pretrained: Option<PathBuf>,
    model_section: ModelSection,
    train: TrainConfig,
}

fn resolve(args: TrainArgs) -> Result<Params> {
    if let Some(m) = &args.manifest {
        let mut p: Params = load_manifest_params(m, args.mode.name())?;
        if let Some(out) = args.model_out {
            p.log_out = out.with_extension("trainlog.json");
            p.model_out = out;
        }
        return Ok(p);
    }
    let cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => Default::default(),
    };
    let mut train = cfg.train.unwrap_or_default();
    if let Some(seed) = args.seed {
        train.seed = seed;
    } else if let Some(seed) = cfg.seed {
        train.seed = seed;
    }
    let model_out = args.model_out.expect("clap enforces model_out");
    let log_out = args
        .log_out
        .unwrap_or_else(|| model_out.with_extension("trainlog.json"));
    if args.mode == Mode::Finetune && args.pretrained.is_none() {
        bail!("finetune requires --pretrained");
    }
    Ok(Params {
        mode: args.mode,
        corpora: args.corpora,
        language: args.language,
        dev_corpus: args.dev_corpus,
        dev_keywords: args.dev_keywords,
        dev_refs: args.dev_refs,
        model_out,
        log_out,
        pretrained: args.pretrained,
        model_section: cfg.model,
        train,
    })
}

fn model_config_for(
    section: &ModelSection,
    corpora: &[dkws::data::Corpus],
) -> Result<ModelConfig> {
    let feature_dim = corpora
        .iter()
        .flat_map(|c| c.utterances.first())
        .map(|u| u.features.cols())
        .next()
        .context("cannot infer the feature dimension from an empty corpus")?;
    let languages: Vec<LanguageVocab> = corpora.iter().map(LanguageVocab::from_corpus).collect();
    section.build(feature_dim, languages)
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mode = args.mode;
    let params = resolve(args)?;
    if params.corpora.is_empty() {
        bail!("at least one --corpus is required");
    }
    if mode != Mode::Pretrain && params.corpora.len() != 1 {
        bail!("{} takes exactly one --corpus", mode.name());
    }

    let mut corpora = Vec::new();
    for dir in &params.corpora {
        corpora.push(load_corpus_arg(dir, params.language.as_deref())?);
    }

    let dev = match (&params.dev_corpus, &params.dev_keywords, &params.dev_refs) {
        (Some(c), Some(k), Some(r)) => Some(load_dev_set(c, k, r, params.language.as_deref())?),
        (None, None, None) => None,
        _ => bail!("--dev-corpus, --dev-keywords, and --dev-refs must be given together"),
    };

    let (model, log) = match mode {
        Mode::Train => {
            let mcfg = model_config_for(&params.model_section, &corpora)?;
            let model: Model<f32> = Model::init(mcfg, params.train.seed)?;
            trainer::train(&corpora[0], dev.as_ref(), model, &params.train)?
        }
        Mode::Pretrain => {
            let mcfg = model_config_for(&params.model_section, &corpora)?;
            let model: Model<f32> = Model::init(mcfg, params.train.seed)?;
            trainer::pretrain_multilingual(&corpora, model, &params.train)?
        }
        Mode::Finetune => {
            let pretrained_path = params.pretrained.as_ref().expect("checked in resolve");
            let pretrained = dkws::model::load_model(pretrained_path)?;
            let mut mcfg = model_config_for(&params.model_section, &corpora)?;
            // finetuning keeps the pretrained document encoder architecture
            mcfg.doc_lstm_layers = pretrained.config.doc_lstm_layers;
            mcfg.doc_lstm_width = pretrained.config.doc_lstm_width;
            mcfg.decimate_after = pretrained.config.decimate_after.clone();
            mcfg.projection_dim = pretrained.config.projection_dim;
            trainer::finetune(&pretrained, mcfg, &corpora[0], dev.as_ref(), &params.train)?
        }
    };

    if let Some(reason) = &log.aborted {
        eprintln!("warning: training aborted early: {reason}");
    }
    save_model(&model, &params.model_out)?;
    std::fs::write(&params.log_out, log.to_json())
        .with_context(|| format!("cannot write {}", params.log_out.display()))?;

    let mut manifest = Manifest::new(mode.name(), params.train.seed, &params)
        .input("model_fingerprint", format!("{:#018x}", model.fingerprint()));
    if let Some(p) = &params.pretrained {
        manifest = manifest.input("pretrained", p.display().to_string());
    }
    manifest.write(&params.model_out.with_extension("manifest.json"))?;

    if let Some(best) = &log.best {
        println!(
            "best dev MTWV {:.2} (x100) at alpha {} (epoch {})",
            best.mtwv * 100.0,
            best.alpha,
            best.epoch
        );
    }
    println!("model written to {}", params.model_out.display());
    Ok(())
}
