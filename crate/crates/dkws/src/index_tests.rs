use super::*;
use crate::data::synth::{SynthLanguage, SynthesisSpec};
use crate::data::{generate_synthetic_corpus, Corpus};
use crate::model::{LanguageVocab, ModelConfig};
use tempfile::tempdir;

fn track(values: &[f32]) -> PosteriorTrack {
    PosteriorTrack { values: values.to_vec(), frame_period: 0.01, downsample_factor: 4 }
}

fn toy_setup() -> (Model<f32>, Corpus) {
    let spec = SynthesisSpec {
        feature_dim: 6,
        train_utterances: 6,
        dev_utterances: 0,
        languages: vec![SynthLanguage {
            id: "toy".into(),
            alphabet_size: 5,
            lexicon_size: 6,
            holdout_words: 0,
        }],
        ..Default::default()
    };
    let lang = generate_synthetic_corpus(&spec, 21).unwrap().remove(0);
    let cfg = ModelConfig {
        feature_dim: 6,
        embedding_dim: 4,
        query_gru_layers: 1,
        query_gru_width: 3,
        doc_lstm_layers: 2,
        doc_lstm_width: 4,
        projection_dim: 5,
        dropout: 0.0,
        decimate_after: vec![1, 2],
        languages: vec![LanguageVocab::from_corpus(&lang.train)],
    };
    (Model::init(cfg, 99).unwrap(), lang.train)
}

#[test]
fn island_hand_trace() {
    let t = track(&[0.1, 0.7, 0.9, 0.8, 0.05, 0.3]);
    let cfg = SearchConfig { alpha: 0.2, island_score: IslandScore::Median };
    let hits = detect_islands(&t, "kw", "utt", &cfg);
    assert_eq!(hits.len(), 2);
    assert!((hits[0].score - 0.8).abs() < 1e-6);
    assert!((hits[0].start_s - 0.04).abs() < 1e-12);
    assert!((hits[0].end_s - 0.16).abs() < 1e-12);
    assert!((hits[1].score - 0.3).abs() < 1e-7);
    assert!((hits[1].start_s - 0.20).abs() < 1e-12);
    assert!((hits[1].end_s - 0.24).abs() < 1e-12);
}

#[test]
fn island_edges() {
    let cfg = SearchConfig { alpha: 0.5, island_score: IslandScore::Median };
    assert!(detect_islands(&track(&[0.1, 0.2, 0.3]), "k", "u", &cfg).is_empty());
    let all = detect_islands(&track(&[0.6, 0.7, 0.8]), "k", "u", &cfg);
    assert_eq!(all.len(), 1);
    assert!((all[0].start_s - 0.0).abs() < 1e-12);
    assert!((all[0].end_s - 0.12).abs() < 1e-12);
    // even-length island: mean of the two middle values
    let even = detect_islands(&track(&[0.6, 0.9, 0.7, 0.8]), "k", "u", &cfg);
    assert_eq!(even.len(), 1);
    assert!((even[0].score - 0.75).abs() < 1e-7);
}

#[test]
fn island_mean_and_max_variants() {
    let t = track(&[0.5, 0.9, 0.7]);
    let mean = detect_islands(&t, "k", "u", &SearchConfig { alpha: 0.2, island_score: IslandScore::Mean });
    assert!((mean[0].score - 0.7).abs() < 1e-6);
    let max = detect_islands(&t, "k", "u", &SearchConfig { alpha: 0.2, island_score: IslandScore::Max });
    assert!((max[0].score - 0.9).abs() < 1e-7);
}

proptest::proptest! {
    #[test]
    fn island_soundness_and_alpha_monotonicity(
        values in proptest::collection::vec(0.001f32..0.999, 0..60),
        lo in 1u32..8,
    ) {
        let alpha_lo = lo as f64 / 10.0;
        let alpha_hi = alpha_lo + 0.1;
        let t = track(&values);
        let mk = |alpha: f64| SearchConfig { alpha, island_score: IslandScore::Median };
        let hits_lo = detect_islands(&t, "k", "u", &mk(alpha_lo));
        let hits_hi = detect_islands(&t, "k", "u", &mk(alpha_hi));

        let cover = |hits: &[Hit], alpha: f64| {
            let step = 0.01 * 4.0;
            let mut covered = vec![false; values.len()];
            for h in hits {
                let s = (h.start_s / step).round() as usize;
                let e = (h.end_s / step).round() as usize;
                for (i, c) in covered.iter_mut().enumerate().take(e).skip(s) {
                    proptest::prop_assert!(values[i] >= alpha as f32, "hit frame below alpha");
                    proptest::prop_assert!(!*c, "frame covered twice");
                    *c = true;
                }
                // median bounds
                let island = &values[s..e];
                let mn = island.iter().cloned().fold(f32::MAX, f32::min) as f64;
                let mx = island.iter().cloned().fold(f32::MIN, f32::max) as f64;
                proptest::prop_assert!(h.score >= mn - 1e-9 && h.score <= mx + 1e-9);
                proptest::prop_assert!(h.score >= alpha - 1e-9);
            }
            // every frame >= alpha is covered exactly once
            for (i, &v) in values.iter().enumerate() {
                proptest::prop_assert_eq!(covered[i], v >= alpha as f32, "frame {} coverage", i);
            }
            Ok(covered.iter().filter(|&&c| c).count())
        };
        let n_lo = cover(&hits_lo, alpha_lo)?;
        let n_hi = cover(&hits_hi, alpha_hi)?;
        proptest::prop_assert!(n_hi <= n_lo, "covered frames must not grow with alpha");
    }
}

#[test]
fn build_index_length_law_and_determinism() {
    let (model, corpus) = toy_setup();
    let index = build_index(&model, &corpus).unwrap();
    assert_eq!(index.entries.len(), corpus.len());
    let expected: usize = corpus.utterances.iter().map(|u| u.num_frames() / 4).sum();
    assert_eq!(index.total_output_frames(), expected);

    let again = build_index(&model, &corpus).unwrap();
    for (a, b) in index.entries.iter().zip(again.entries.iter()) {
        assert_eq!(a.matrix, b.matrix);
    }

    let empty = build_index(&model, &Corpus::empty("toy")).unwrap();
    assert!(empty.entries.is_empty());
}

#[test]
fn short_utterances_index_as_empty() {
    let (model, mut corpus) = toy_setup();
    corpus.utterances[0].features = Tensor::zeros(vec![4, 6]);
    corpus.utterances[0].alignment = vec![crate::data::AlignedWord {
        word: corpus.utterances[0].words[0].clone(),
        start_frame: 0,
        end_frame: 3,
    }];
    corpus.utterances[0].words.truncate(1);
    let index = build_index(&model, &corpus).unwrap();
    assert_eq!(index.entries[0].output_frames(), 0);
    // searching an index with an empty entry just yields no hits there
    let q = Query::new("toy", corpus.utterances[1].words[0].clone());
    let hits = search(&index, &model, "kw", &q, &SearchConfig::default()).unwrap();
    assert!(hits.iter().all(|h| h.utterance_id != corpus.utterances[0].id));
}

#[test]
fn index_roundtrip_is_bit_exact_and_guarded() {
    let dir = tempdir().unwrap();
    let (model, corpus) = toy_setup();
    let index = build_index(&model, &corpus).unwrap();
    let path = dir.path().join("archive.idx");
    save_index(&index, &path).unwrap();
    let loaded = load_index(&path).unwrap();
    assert_eq!(loaded.model_fingerprint, index.model_fingerprint);
    assert_eq!(loaded.frame_period, index.frame_period);
    for (a, b) in index.entries.iter().zip(loaded.entries.iter()) {
        assert_eq!(a.utterance_id, b.utterance_id);
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.input_frames, b.input_frames);
    }

    // truncation
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(load_index(&path), Err(IndexError::Format { .. })));

    // fingerprint guard
    let other: Model<f32> = Model::init(model.config.clone(), 12345).unwrap();
    let q = Query::new("toy", corpus.utterances[0].words[0].clone());
    assert!(matches!(
        search(&index, &other, "kw", &q, &SearchConfig::default()),
        Err(IndexError::FingerprintMismatch { .. })
    ));
}

#[test]
fn zero_query_vector_has_no_hits_above_point_six() {
    let (mut model, corpus) = toy_setup();
    // zero out the query side: e_q = 0 -> z = 0.5 everywhere < 0.6
    let names: Vec<String> = model
        .params
        .iter()
        .filter(|(_, e)| e.name.starts_with("query."))
        .map(|(_, e)| e.name.clone())
        .collect();
    for name in names {
        let id = model.params.id(&name).unwrap();
        model.params.value_mut(id).fill(0.0);
    }
    let index = build_index(&model, &corpus).unwrap();
    let q = Query::new("toy", corpus.utterances[0].words[0].clone());
    let cfg = SearchConfig { alpha: 0.6, island_score: IslandScore::Median };
    let hits = search(&index, &model, "kw", &q, &cfg).unwrap();
    assert!(hits.is_empty());
    // while at alpha = 0.4 everything is one big island per utterance
    let cfg = SearchConfig { alpha: 0.4, island_score: IslandScore::Median };
    let hits = search(&index, &model, "kw", &q, &cfg).unwrap();
    assert_eq!(hits.len(), corpus.len());
}

#[test]
fn search_is_deterministic_and_matches_fresh_encodings() {
    let (model, corpus) = toy_setup();
    let dir = tempdir().unwrap();
    let index = build_index(&model, &corpus).unwrap();
    let path = dir.path().join("a.idx");
    save_index(&index, &path).unwrap();
    let loaded = load_index(&path).unwrap();

    let q = Query::new("toy", corpus.utterances[2].words[1].clone());
    let cfg = SearchConfig { alpha: 0.2, island_score: IslandScore::Median };
    let from_loaded = search(&loaded, &model, "kw", &q, &cfg).unwrap();
    let from_memory = search(&index, &model, "kw", &q, &cfg).unwrap();
    assert_eq!(from_loaded, from_memory);

    let again = search(&loaded, &model, "kw", &q, &cfg).unwrap();
    assert_eq!(from_loaded, again);

    // online route: encode documents freshly and score directly
    let e_q = model.encode_query(&q).unwrap();
    let mut online = Vec::new();
    for utt in &corpus.utterances {
        let enc = model.encode_utterance(utt).unwrap();
        let track = score(&enc, e_q.data()).unwrap();
        online.extend(detect_islands(&track, "kw", &utt.id, &cfg));
    }
    assert_eq!(from_loaded, online);
}

#[test]
fn hitlist_roundtrip_and_guards() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("hits.tsv");
    let hits = vec![
        Hit {
            keyword_id: "kw1".into(),
            utterance_id: "u1".into(),
            start_s: 0.04,
            end_s: 0.16,
            score: 0.812345,
            decision: true,
        },
        Hit {
            keyword_id: "kw2".into(),
            utterance_id: "u2".into(),
            start_s: 1.0,
            end_s: 1.2,
            score: 0.25,
            decision: false,
        },
    ];
    write_hitlist(&hits, &path).unwrap();
    let back = read_hitlist(&path).unwrap();
    assert_eq!(back, hits);

    // empty list: header only
    write_hitlist(&[], &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
    assert!(read_hitlist(&path).unwrap().is_empty());

    // score guard and line numbers
    std::fs::write(&path, "keyword_id\tutterance_id\tstart\tend\tscore\tdecision\nk\tu\t0.0\t0.1\t1.5\tYES\n")
        .unwrap();
    match read_hitlist(&path) {
        Err(IndexError::Parse { line, msg, .. }) => {
            assert_eq!(line, 2);
            assert!(msg.contains("1.5"));
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}
