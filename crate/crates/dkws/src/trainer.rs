//! Training: optimizes the sampled frame-classification objective over
//! (phrase, utterance) pairs, with dev-set MTWV driving checkpoint and
//! decision-threshold selection. Multilingual pretraining pools corpora with
//! per-language embedding tables; finetuning transfers the document encoder
//! and re-initializes the query encoder.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::sampler::{assemble_batch, eligible_pool, UttRef};
use crate::data::{
    downsample_labels, extract_phrases, speed_perturb, Corpus, DataError, Keyword, PhraseTable,
    SamplerConfig,
};
use crate::index::{build_index, search_all, IndexError, SearchConfig};
use crate::model::{
    FeatureNorm, Model, ModelConfig, ModelError, Query, POSTERIOR_EPS,
};
use crate::numerics::tape::{Mode, Tape};
use crate::numerics::{AdamConfig, GradSet, LossConfig, NumericsError, OptimizerState};
use crate::rng;
use crate::scorer::{kst_normalize, mtwv_sweep, ReferenceOccurrence, ScoreError, ScoringConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("dev set is empty")]
    EmptyDev,
    #[error("document encoder shapes differ: {0}")]
    TransferMismatch(String),
}

#[derive(Clone, Debug, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    /// Optional cap on steps per epoch (an epoch is one shuffled pass over
    /// the phrase table, which can be enormous with n-grams enabled).
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
    /// Evaluate on dev every this many epochs (always after the last).
    pub dev_every: usize,
    /// Write a checkpoint every this many epochs (0 = never).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Augment training data with 0.9x and 1.1x speed-perturbed copies.
    pub speed_perturb: bool,
    /// Candidate posterior thresholds for dev-set alpha selection.
    pub alpha_grid: Vec<f64>,
    /// Recompute feature normalization from the training corpora; finetuning
    /// switches this off to keep the transferred encoder's input statistics.
    pub refresh_feature_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            sampler: SamplerConfig::default(),
            optimizer: AdamConfig::default(),
            epochs: 10,
            steps_per_epoch: None,
            seed: 0,
            dev_every: 1,
            checkpoint_every: 0,
            checkpoint_dir: None,
            speed_perturb: false,
            alpha_grid: vec![0.2, 0.4, 0.6],
            refresh_feature_norm: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        self.loss.validate()?;
        self.sampler.validate()?;
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|&a| !(0.0 < a && a < 1.0)) {
            return Err(TrainError::Config("alpha_grid entries must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Everything needed to measure dev MTWV: a corpus, the query list, and the
/// reference occurrences.
#[derive(Clone, Debug)]
pub struct DevSet {
    pub corpus: Corpus,
    pub keywords: Vec<Keyword>,
    pub references: Vec<ReferenceOccurrence>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DevEval {
    pub epoch: usize,
    pub mtwv: f64,
    pub alpha: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub dev_evals: Vec<DevEval>,
    /// Dev eval of the checkpoint the returned model corresponds to.
    pub best: Option<DevEval>,
    pub aborted: Option<String>,
}

impl TrainLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("train log serializes")
    }
}

/// Train on one corpus with dev-driven checkpoint selection.
pub fn train(
    corpus: &Corpus,
    dev: Option<&DevSet>,
    model: Model<f32>,
    cfg: &TrainConfig,
) -> Result<(Model<f32>, TrainLog), TrainError> {
    train_pooled(std::slice::from_ref(corpus), dev, model, cfg)
}

/// Multilingual pretraining: one shared model over pooled corpora; only the
/// query embedding tables are language-specific, and the random utterances
/// sampled for a phrase can come from any language. With a single corpus
/// this is exactly `train` without a dev set.
pub fn pretrain_multilingual(
    corpora: &[Corpus],
    model: Model<f32>,
    cfg: &TrainConfig,
) -> Result<(Model<f32>, TrainLog), TrainError> {
    train_pooled(corpora, None, model, cfg)
}

/// Initialize a finetuning model: document encoder weights (and the feature
/// normalization they were trained against) come from the pretrained model,
/// the entire query encoder is freshly initialized for the target languages.
pub fn transfer_document_encoder(
    pretrained: &Model<f32>,
    target_config: ModelConfig,
    seed: u64,
) -> Result<Model<f32>, TrainError> {
    let src = &pretrained.config;
    if target_config.projection_dim != src.projection_dim {
        return Err(TrainError::TransferMismatch(format!(
            "projection_dim {} vs pretrained {}",
            target_config.projection_dim, src.projection_dim
        )));
    }
    if target_config.feature_dim != src.feature_dim
        || target_config.doc_lstm_layers != src.doc_lstm_layers
        || target_config.doc_lstm_width != src.doc_lstm_width
        || target_config.decimate_after != src.decimate_after
    {
        return Err(TrainError::TransferMismatch(
            "document encoder architecture differs from the pretrained model".into(),
        ));
    }
    let mut model = Model::init(target_config, seed)?;
    let names: Vec<String> = model
        .params
        .iter()
        .filter(|(_, e)| e.name.starts_with("doc."))
        .map(|(_, e)| e.name.clone())
        .collect();
    for name in names {
        let dst = model.params.id(&name).expect("own name");
        let src_id = pretrained
            .params
            .id(&name)
            .ok_or_else(|| TrainError::TransferMismatch(format!("pretrained model lacks '{name}'")))?;
        *model.params.value_mut(dst) = pretrained.params.value(src_id).clone();
    }
    model.feature_norm = pretrained.feature_norm.clone();
    Ok(model)
}

/// Transfer the pretrained document encoder and train the whole model on the
/// target corpus with no frozen phase.
pub fn finetune(
    pretrained: &Model<f32>,
    target_config: ModelConfig,
    corpus: &Corpus,
    dev: Option<&DevSet>,
    cfg: &TrainConfig,
) -> Result<(Model<f32>, TrainLog), TrainError> {
    let model = transfer_document_encoder(pretrained, target_config, cfg.seed)?;
    let cfg = TrainConfig { refresh_feature_norm: false, ..cfg.clone() };
    train_pooled(std::slice::from_ref(corpus), dev, model, &cfg)
}

/// Dev-set selection of the posterior threshold alpha: runs index + search +
/// score at each candidate and returns the maximizer (ties toward smaller
/// alpha) with its MTWV and global decision threshold.
pub fn select_alpha(
    model: &Model<f32>,
    dev: &DevSet,
    alpha_grid: &[f64],
) -> Result<DevEval, TrainError> {
    if dev.corpus.is_empty() || dev.keywords.is_empty() {
        return Err(TrainError::EmptyDev);
    }
    let index = build_index(model, &dev.corpus)?;
    let scoring = ScoringConfig::new(index.total_seconds());
    let keywords: Vec<(String, Query)> = dev
        .keywords
        .iter()
        .map(|k| (k.id.clone(), Query::new(dev.corpus.language.clone(), k.surface.clone())))
        .collect();
    let mut best: Option<DevEval> = None;
    for &alpha in alpha_grid {
        let search_cfg = SearchConfig { alpha, ..Default::default() };
        let (hits, _failures) = search_all(&index, model, &keywords, &search_cfg)?;
        let normalized = kst_normalize(&hits, &scoring);
        let (mtwv, threshold) = mtwv_sweep(&normalized, &dev.references, &scoring)?;
        if best.as_ref().is_none_or(|b| mtwv > b.mtwv) {
            best = Some(DevEval { epoch: 0, mtwv, alpha, threshold });
        }
    }
    best.ok_or(TrainError::Config("alpha grid is empty".into()))
}

struct Pool {
    corpora: Vec<Corpus>,
    table: PhraseTable,
    eligible: Vec<UttRef>,
}

fn build_pool(corpora: &[Corpus], model: &Model<f32>, cfg: &TrainConfig) -> Result<Pool, TrainError> {
    let mut owned: Vec<Corpus> = corpora.to_vec();
    if cfg.speed_perturb {
        for corpus in corpora {
            for factor in [0.9, 1.1] {
                let mut copy = Corpus::empty(corpus.language.clone());
                for utt in &corpus.utterances {
                    let mut p = speed_perturb(utt, factor)?;
                    p.id = format!("{}#sp{factor}", p.id);
                    copy.utterances.push(p);
                }
                owned.push(copy);
            }
        }
    }
    for corpus in &owned {
        if model.embedding_table(&corpus.language).is_none() {
            return Err(TrainError::Config(format!(
                "model has no embedding table for language '{}'",
                corpus.language
            )));
        }
    }
    let min_frames = model.config.min_input_frames();
    let table = extract_phrases(&owned, &cfg.sampler.phrase_orders, min_frames);
    if table.is_empty() {
        return Err(TrainError::Config("no trainable phrases in the corpora".into()));
    }
    let eligible = eligible_pool(&owned, min_frames);
    if cfg.sampler.utterances_per_phrase > eligible.len() {
        return Err(TrainError::Config(format!(
            "utterances_per_phrase {} exceeds the {} eligible utterances",
            cfg.sampler.utterances_per_phrase,
            eligible.len()
        )));
    }
    Ok(Pool { corpora: owned, table, eligible })
}

fn train_pooled(
    corpora: &[Corpus],
    dev: Option<&DevSet>,
    mut model: Model<f32>,
    cfg: &TrainConfig,
) -> Result<(Model<f32>, TrainLog), TrainError> {
    cfg.validate()?;
    if corpora.is_empty() || corpora.iter().all(|c| c.is_empty()) {
        return Err(TrainError::Config("no training data".into()));
    }
    let pool = build_pool(corpora, &model, cfg)?;
    if cfg.refresh_feature_norm {
        let refs: Vec<&Corpus> = pool.corpora.iter().collect();
        model.feature_norm = FeatureNorm::from_corpora(&refs, model.config.feature_dim);
    }

    let mut opt = OptimizerState::new(&model.params, cfg.optimizer);
    let mut log = TrainLog::default();
    let mut best: Option<(DevEval, Model<f32>)> = None;
    let mut step: u64 = 0;
    let batch_size = cfg.sampler.batch_phrases;

    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pool.table.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::derive_indexed(cfg.seed, "epoch-shuffle", epoch as u64));
        if let Some(cap) = cfg.steps_per_epoch {
            order.truncate(cap.saturating_mul(batch_size));
        }

        for chunk in order.chunks(batch_size) {
            let mut batch_rng = rng::derive_indexed(cfg.seed, "batch", step);
            let batch = assemble_batch(
                &pool.table,
                chunk,
                &pool.corpora,
                &pool.eligible,
                cfg.sampler.utterances_per_phrase,
                &mut batch_rng,
            )?;

            let results: Vec<Result<(f64, GradSet<f32>), TrainError>> = batch
                .items
                .par_iter()
                .enumerate()
                .map(|(slot, item)| {
                    let entry = &pool.table.entries[item.phrase];
                    let query =
                        Query::new(entry.phrase.language.clone(), entry.phrase.surface());
                    let mut tape = Tape::new();
                    let e_q = model.encode_query_tape(&query, &mut tape)?;
                    let mut drop_rng = rng::derive_indexed(
                        cfg.seed,
                        "dropout",
                        (step << 20) | slot as u64,
                    );
                    let factor = model.config.downsample_factor();
                    let mut losses = Vec::with_capacity(item.utterances.len());
                    for (utt_ref, labels) in item.utterances.iter().zip(item.labels.iter()) {
                        let utt = &pool.corpora[utt_ref.corpus].utterances[utt_ref.utterance];
                        let enc = model.encode_document_tape(
                            &utt.features,
                            Mode::Train,
                            Some(&mut drop_rng),
                            &mut tape,
                        )?;
                        let logits = tape.matvec(enc, e_q)?;
                        let z = tape.sigmoid_clamp(logits, POSTERIOR_EPS);
                        let y = downsample_labels(labels, factor);
                        losses.push(tape.masked_weighted_bce(z, &y, cfg.loss)?);
                    }
                    let total = tape.add_scalars(&losses);
                    let loss = tape.value(total).item() as f64;
                    let grads = tape.backward(total, &model.params)?;
                    Ok((loss, grads))
                })
                .collect();

            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                model.params.accumulate(&grads);
            }

            if !batch_loss.is_finite() {
                log.aborted = Some(format!("non-finite loss at step {step}"));
                model.params.zero_grads();
                break 'epochs;
            }
            if let Err(e) = opt.step(&mut model.params) {
                log.aborted = Some(e.to_string());
                model.params.zero_grads();
                break 'epochs;
            }
            log.steps.push(StepLog { step, epoch, loss: batch_loss });
            step += 1;
        }

        let last_epoch = epoch + 1 == cfg.epochs;
        if let Some(dev) = dev {
            let cadence = cfg.dev_every.max(1);
            if (epoch + 1) % cadence == 0 || last_epoch {
                let mut eval = select_alpha(&model, dev, &cfg.alpha_grid)?;
                eval.epoch = epoch;
                log.dev_evals.push(eval.clone());
                if best.as_ref().is_none_or(|(b, _)| eval.mtwv > b.mtwv) {
                    best = Some((eval, model.clone()));
                }
            }
        }
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            if let Some(dir) = &cfg.checkpoint_dir {
                std::fs::create_dir_all(dir).ok();
                crate::model::save_model(&model, &dir.join(format!("epoch{epoch:04}.dkws")))?;
            }
        }
    }

    if let Some((eval, best_model)) = best {
        log.best = Some(eval);
        model = best_model;
    }
    Ok((model, log))
}

#[cfg(test)]
#[path = "trainer_tests.rs"]
mod tests;
