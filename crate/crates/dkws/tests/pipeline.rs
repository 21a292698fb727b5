//! End-to-end smoke test at the library level: generate a corpus, train a
//! few steps with the default hyper-parameters (lambda = 5, phi = 0.7,
//! M = 4), index, search, score, and fuse.

use dkws::data::synth::{SynthLanguage, SynthesisSpec};
use dkws::data::{generate_synthetic_corpus, Keyword, SamplerConfig};
use dkws::index::{build_index, search_all, SearchConfig};
use dkws::model::{LanguageVocab, Model, ModelConfig, Query};
use dkws::scorer::report::{full_report, to_json, to_table};
use dkws::scorer::{extract_references, fuse_hitlists, kst_normalize, ScoringConfig};
use dkws::trainer::{train, DevSet, TrainConfig};

#[test]
fn synth_train_index_search_score_fuse() {
    let spec = SynthesisSpec {
        feature_dim: 8,
        frames_per_grapheme: (2, 4),
        graphemes_per_word: (2, 4),
        words_per_utterance: (2, 4),
        silence_frames: (1, 3),
        noise_sigma: 0.2,
        frame_period: 0.05,
        train_utterances: 30,
        dev_utterances: 20,
        dev_queries: 8,
        languages: vec![SynthLanguage {
            id: "toy".into(),
            alphabet_size: 8,
            lexicon_size: 20,
            holdout_words: 2,
        }],
    };
    let lang = generate_synthetic_corpus(&spec, 33).unwrap().remove(0);

    let keywords: Vec<Keyword> = lang
        .queries_iv
        .iter()
        .enumerate()
        .map(|(i, w)| Keyword { id: format!("kw{i:02}"), surface: w.clone() })
        .collect();
    let references = extract_references(&lang.dev, &keywords);
    let dev = DevSet { corpus: lang.dev.clone(), keywords: keywords.clone(), references: references.clone() };

    let mcfg = ModelConfig {
        feature_dim: 8,
        embedding_dim: 6,
        query_gru_layers: 1,
        query_gru_width: 4,
        doc_lstm_layers: 2,
        doc_lstm_width: 6,
        projection_dim: 8,
        dropout: 0.1,
        decimate_after: vec![1, 2],
        languages: vec![LanguageVocab::from_corpus(&lang.train)],
    };
    let model: Model<f32> = Model::init(mcfg, 33).unwrap();

    // paper-default loss and sampler settings; tiny step budget
    let tcfg = TrainConfig {
        epochs: 2,
        steps_per_epoch: Some(3),
        sampler: SamplerConfig { batch_phrases: 4, ..Default::default() },
        seed: 33,
        dev_every: 2,
        ..Default::default()
    };
    assert_eq!(tcfg.loss.lambda, 5.0);
    assert_eq!(tcfg.loss.phi, 0.7);
    assert_eq!(tcfg.sampler.utterances_per_phrase, 4);

    let (trained, log) = train(&lang.train, Some(&dev), model, &tcfg).unwrap();
    assert!(log.aborted.is_none());
    assert!(!log.steps.is_empty());
    assert!(!log.dev_evals.is_empty());

    let index = build_index(&trained, &lang.dev).unwrap();
    let queries: Vec<(String, Query)> = keywords
        .iter()
        .map(|k| (k.id.clone(), Query::new("toy", k.surface.clone())))
        .collect();
    let (hits, failures) =
        search_all(&index, &trained, &queries, &SearchConfig::default()).unwrap();
    assert!(failures.is_empty());

    let scoring = ScoringConfig::new(index.total_seconds());
    let normalized = kst_normalize(&hits, &scoring);
    let report = full_report(&normalized, &references, &scoring, None).unwrap();
    assert!(report.mtwv >= 0.0 && report.mtwv <= 1.0);
    assert!(report.stwv >= report.otwv);
    assert!(report.otwv >= report.mtwv);

    let json = to_json(&report);
    assert!(json.get("mtwv").is_some());
    let table = to_table(&report);
    assert!(table.contains("MTWV"));

    let fused = fuse_hitlists(&normalized, &normalized, 0.5, &scoring);
    assert_eq!(fused.len(), normalized.len());
}
