//! Scratch calibration driver: measures training throughput and dev MTWV on
//! synthetic corpora. Knobs via env vars so iterations don't need rebuilds.

use std::time::Instant;

use dkws::data::synth::{SynthLanguage, SynthesisSpec};
use dkws::data::{generate_synthetic_corpus, Corpus, Keyword, SamplerConfig};
use dkws::model::{LanguageVocab, Model, ModelConfig};
use dkws::numerics::AdamConfig;
use dkws::scorer::extract_references;
use dkws::trainer::{select_alpha, train, DevSet, TrainConfig};

fn diagnose(model: &Model<f32>, dev: &DevSet, lang: &dkws::data::GeneratedLanguage) {
    use dkws::index::{build_index, detect_islands, SearchConfig};
    use dkws::model::{score, Query};
    use dkws::scorer::{kst_normalize, match_hits, ScoringConfig};

    let index = build_index(model, &dev.corpus).unwrap();
    let scoring = ScoringConfig::new(index.total_seconds());
    let cfg = SearchConfig::default();
    for kw in dev.keywords.iter().take(3) {
        let q = Query::new(lang.language.clone(), kw.surface.clone());
        let e_q = model.encode_query(&q).unwrap();
        let mut hits = Vec::new();
        for enc in &index.entries {
            if enc.output_frames() == 0 {
                continue;
            }
            let track = score(enc, e_q.data()).unwrap();
            hits.extend(detect_islands(&track, &kw.id, &enc.utterance_id, &cfg));
        }
        let refs: Vec<_> =
            dev.references.iter().filter(|r| r.keyword_id == kw.id).cloned().collect();
        let matching = match_hits(&hits, &refs, &scoring);
        let matched = matching.iter().filter(|m| m.is_some()).count();
        eprintln!(
            "DIAG {} '{}': {} refs, {} hits at alpha {}, {} matched, {} FAs",
            kw.id,
            kw.surface,
            refs.len(),
            hits.len(),
            cfg.alpha,
            matched,
            hits.len() - matched
        );
        let normalized = kst_normalize(&hits, &scoring);
        let mut scored: Vec<(f64, f64, bool)> = normalized
            .iter()
            .zip(matching.iter())
            .map(|(h, m)| (h.score, h.start_s, m.is_some()))
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for (s, t, ok) in scored.iter().take(8) {
            eprintln!("    s'={s:.4} t={t:.2} {}", if *ok { "HIT" } else { "FA" });
        }
        // posterior shape on one positive utterance
        if let Some(r) = refs.first() {
            if let Some(enc) = index.entries.iter().find(|e| e.utterance_id == r.utterance_id) {
                let track = score(enc, e_q.data()).unwrap();
                let step = track.frame_period * track.downsample_factor as f64;
                let lo = (r.start_s / step) as usize;
                let hi = ((r.end_s / step) as usize + 1).min(track.values.len());
                let fmt = |vals: &[f32]| {
                    vals.iter().map(|v| format!("{:.2}", v)).collect::<Vec<_>>().join(" ")
                };
                eprintln!(
                    "    ref {:.2}-{:.2}s in {} -> z[in]: {}",
                    r.start_s,
                    r.end_s,
                    r.utterance_id,
                    fmt(&track.values[lo..hi])
                );
                let olo = lo.saturating_sub(4);
                let ohi = (hi + 4).min(track.values.len());
                eprintln!("    context z[{olo}..{ohi}]: {}", fmt(&track.values[olo..ohi]));
            }
        }
    }
}

fn envf(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}
fn envu(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let seed = envu("SEED", 1) as u64;
    let train_utts = envu("TRAIN_UTTS", 400);
    let dev_utts = envu("DEV_UTTS", 60);
    let lexicon = envu("LEXICON", 200);
    let alphabet = envu("ALPHABET", 20);
    let sigma = envf("SIGMA", 0.3);
    let epochs = envu("EPOCHS", 10);
    let steps = envu("STEPS_PER_EPOCH", 12);
    let layers = envu("LAYERS", 4);
    let width = envu("WIDTH", 64);
    let d = envu("PROJ", 64);
    let gru_w = envu("GRU_WIDTH", 32);
    let lb = envu("LB", 16);
    let m = envu("M", 4);
    let lr = envf("LR", 1e-3);
    let threads = envu("THREADS", 2);

    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().ok();

    let wpu = envu("WPU_LO", 4);
    let wpu_hi = envu("WPU_HI", 9);
    let spec = SynthesisSpec {
        feature_dim: envu("FDIM", 24),
        words_per_utterance: (wpu, wpu_hi),
        noise_sigma: sigma,
        train_utterances: train_utts,
        dev_utterances: dev_utts,
        dev_queries: envu("DEV_QUERIES", 40),
        languages: vec![SynthLanguage {
            id: "synth".into(),
            alphabet_size: alphabet,
            lexicon_size: lexicon,
            holdout_words: envu("HOLDOUT", 20),
        }],
        ..Default::default()
    };
    let t0 = Instant::now();
    let lang = generate_synthetic_corpus(&spec, seed).unwrap().remove(0);
    eprintln!(
        "corpus: {} train utts ({:.1} s audio), {} dev utts ({:.1} s), gen in {:.1?}",
        lang.train.len(),
        lang.train.total_seconds(),
        lang.dev.len(),
        lang.dev.total_seconds(),
        t0.elapsed()
    );

    let mk_keywords = |words: &[String], prefix: &str| -> Vec<Keyword> {
        words
            .iter()
            .enumerate()
            .map(|(i, w)| Keyword { id: format!("{prefix}{i:03}"), surface: w.clone() })
            .collect()
    };
    let kw_iv = mk_keywords(&lang.queries_iv, "iv");
    let kw_oov = mk_keywords(&lang.queries_oov, "oov");
    let dev_iv = DevSet {
        corpus: lang.dev.clone(),
        references: extract_references(&lang.dev, &kw_iv),
        keywords: kw_iv,
    };
    let dev_oov = DevSet {
        corpus: lang.dev.clone(),
        references: extract_references(&lang.dev, &kw_oov),
        keywords: kw_oov,
    };
    eprintln!("queries: {} IV ({} refs), {} OOV ({} refs)",
        dev_iv.keywords.len(), dev_iv.references.len(),
        dev_oov.keywords.len(), dev_oov.references.len());

    let mcfg = ModelConfig {
        feature_dim: spec.feature_dim,
        embedding_dim: 32,
        query_gru_layers: 2,
        query_gru_width: gru_w,
        doc_lstm_layers: layers,
        doc_lstm_width: width,
        projection_dim: d,
        dropout: envf("DROPOUT", 0.4),
        decimate_after: if layers >= 2 { vec![1, 2] } else { vec![1] },
        languages: vec![LanguageVocab::from_corpus(&lang.train)],
    };
    let model: Model<f32> = Model::init(mcfg, seed).unwrap();

    let tcfg = TrainConfig {
        sampler: SamplerConfig {
            batch_phrases: lb,
            utterances_per_phrase: m,
            phrase_orders: (1..=envu("ORDERS", 1)).collect(),
        },
        optimizer: AdamConfig { learning_rate: lr, ..Default::default() },
        epochs,
        steps_per_epoch: Some(steps),
        seed,
        dev_every: envu("DEV_EVERY", 2),
        ..Default::default()
    };

    let t1 = Instant::now();
    let (trained, log) = train(&lang.train, Some(&dev_iv), model, &tcfg).unwrap();
    let train_time = t1.elapsed();
    let n_steps = log.steps.len();
    eprintln!(
        "trained {} steps in {:.1?} ({:.2} s/step); aborted: {:?}",
        n_steps,
        train_time,
        train_time.as_secs_f64() / n_steps.max(1) as f64,
        log.aborted
    );
    for e in &log.dev_evals {
        eprintln!("  epoch {:>3}: dev IV MTWV {:.3} (alpha {})", e.epoch, e.mtwv, e.alpha);
    }
    let first = log.steps.first().map(|s| s.loss).unwrap_or(0.0);
    let last = log.steps.last().map(|s| s.loss).unwrap_or(0.0);
    eprintln!("loss: first {:.1} last {:.1}", first, last);

    if std::env::var("DIAG").is_ok() {
        // self-search on a train subset separates pipeline bugs from
        // generalization failure
        let sub = Corpus {
            language: lang.train.language.clone(),
            utterances: lang.train.utterances.iter().take(300).cloned().collect(),
        };
        let occurring: Vec<String> = {
            let mut words: Vec<String> = sub.utterances.iter().flat_map(|u| u.words.clone()).collect();
            words.sort(); words.dedup();
            words.into_iter().take(40).collect()
        };
        let kw_train = mk_keywords(&occurring, "tr");
        let dev_train = DevSet {
            references: extract_references(&sub, &kw_train),
            corpus: sub,
            keywords: kw_train,
        };
        let on_train = select_alpha(&trained, &dev_train, &[0.2, 0.4, 0.6]).unwrap();
        eprintln!("DIAG train-subset MTWV {:.3} (alpha {})", on_train.mtwv, on_train.alpha);
        diagnose(&trained, &dev_train, &lang);
        eprintln!("DIAG dev:");
        diagnose(&trained, &dev_iv, &lang);
    }

    let t2 = Instant::now();
    let iv = select_alpha(&trained, &dev_iv, &[0.2, 0.4, 0.6]).unwrap();
    let oov = select_alpha(&trained, &dev_oov, &[0.2, 0.4, 0.6]).unwrap();
    eprintln!(
        "final: IV MTWV {:.3} (alpha {})  OOV MTWV {:.3} (alpha {})  [eval {:.1?}]",
        iv.mtwv, iv.alpha, oov.mtwv, oov.alpha, t2.elapsed()
    );
    println!(
        "{{\"iv\": {:.4}, \"oov\": {:.4}, \"steps\": {}, \"train_s\": {:.1}}}",
        iv.mtwv,
        oov.mtwv,
        n_steps,
        train_time.as_secs_f64()
    );
}
