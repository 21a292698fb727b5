//! Acceptance suite, part 1: exact property criteria.
//!
//! Each test prints one PASS/FAIL line (visible with `--nocapture`); a FAIL
//! line is immediately followed by the panic that fails the test. The trend
//! experiments on synthetic corpora live in `acceptance_trends.rs`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use dkws::data::synth::{SynthLanguage, SynthesisSpec};
use dkws::data::{downsample_labels, generate_synthetic_corpus};
use dkws::index::{
    build_index, detect_islands, load_index, save_index, search, Hit, IslandScore, SearchConfig,
};
use dkws::model::{score, LanguageVocab, Model, ModelConfig, ModelError, Query};
use dkws::numerics::tape::{Mode, Tape};
use dkws::numerics::{grad_check, GradCheckConfig, LossConfig, NumericsError, ParamSet, Tensor};
use dkws::scorer::oracle::{oracle_mtwv, oracle_otwv, oracle_stwv, oracle_twv};
use dkws::scorer::{
    kst_normalize, kst_threshold, mtwv_sweep, otwv, stwv, twv, ReferenceOccurrence, ScoringConfig,
};

fn criterion(n: usize, name: &str, pass: bool, detail: &str) {
    println!("{} criterion {n}: {name} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {name} ({detail})");
}

fn rand_tensor(shape: Vec<usize>, scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect();
    Tensor::new(shape, data).unwrap()
}

fn to_numerics(e: ModelError) -> NumericsError {
    match e {
        ModelError::Numerics(n) => n,
        other => NumericsError::Config(other.to_string()),
    }
}

// ---- criterion 1: gradient correctness -----------------------------------

#[test]
fn criterion_1_gradient_correctness() {
    let started = std::time::Instant::now();

    // every layer type in isolation, 64-bit, tiny dims
    let mut rng = dkws::rng::derive(101, "acc-gc");
    {
        let mut params = ParamSet::<f64>::new();
        params.insert("w", rand_tensor(vec![3, 4], 0.8, &mut rng));
        params.insert("b", rand_tensor(vec![3], 0.4, &mut rng));
        let x = rand_tensor(vec![5, 4], 1.0, &mut rng);
        let err = grad_check(
            move |p, tape: &mut Tape<f64>| {
                let xv = tape.input(x.clone());
                let y = tape.affine(xv, p.id("w").unwrap(), p.id("b").unwrap(), p)?;
                Ok(tape.sum_all(y))
            },
            &params,
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(err <= 1e-8, "affine-only model must be essentially exact, got {err}");
    }

    // embedding + bigru + bilstm + decimate + matvec + sigmoid + masked bce,
    // then the full model
    let config = ModelConfig {
        feature_dim: 5,
        embedding_dim: 4,
        query_gru_layers: 2,
        query_gru_width: 3,
        doc_lstm_layers: 2,
        doc_lstm_width: 4,
        projection_dim: 6,
        dropout: 0.0,
        decimate_after: vec![1, 2],
        languages: vec![LanguageVocab {
            id: "toy".into(),
            graphemes: "abcdefgh".chars().collect(),
        }],
    };
    let model: Model<f64> = Model::init(config.clone(), 7).unwrap();
    let feats = rand_tensor(vec![14, 5], 1.0, &mut rng);
    let base = model.params.clone();
    let norm = model.feature_norm.clone();
    let loss_cfg = LossConfig::new(5.0, 0.7, 1e-9).unwrap();
    let err = grad_check(
        move |params, tape: &mut Tape<f64>| {
            let view = Model::assemble(config.clone(), params.clone(), norm.clone())
                .map_err(to_numerics)?;
            let e_q = view
                .encode_query_tape(&Query::new("toy", "bad egg"), tape)
                .map_err(to_numerics)?;
            let enc =
                view.encode_document_tape(&feats, Mode::Eval, None, tape).map_err(to_numerics)?;
            let logits = tape.matvec(enc, e_q)?;
            let z = tape.sigmoid_clamp(logits, 1e-9);
            tape.masked_weighted_bce(z, &[1, 0, 1], loss_cfg)
        },
        &base,
        GradCheckConfig { max_coords: 400, ..Default::default() },
    )
    .unwrap();

    let elapsed = started.elapsed();
    criterion(
        1,
        "gradient correctness",
        err <= 1e-4 && elapsed.as_secs() < 120,
        &format!("full-model max rel err {err:.2e}, {:.1} s", elapsed.as_secs_f64()),
    );
}

// ---- criterion 2: loss identity -------------------------------------------

#[test]
fn criterion_2_loss_identity() {
    let mut rng = dkws::rng::derive(102, "acc-bce");
    let cfg = LossConfig::bce();
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let n = 1 + rng.random_range(0..8);
        let z: Vec<f64> = (0..n).map(|_| rng.random::<f64>().clamp(1e-6, 1.0 - 1e-6)).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();

        let mut tape = Tape::<f64>::new();
        let zv = tape.input(Tensor::from_vec(z.clone()));
        let loss_id = tape.masked_weighted_bce(zv, &y, cfg).unwrap();
        let ours = tape.value(loss_id).item();

        let plain: f64 = z
            .iter()
            .zip(y.iter())
            .map(|(&z, &y)| if y == 1 { -z.ln() } else { -(1.0 - z).ln() })
            .sum();
        let diff = (ours - plain).abs() / plain.abs().max(1.0);
        worst = worst.max(diff);
    }
    criterion(
        2,
        "loss identity at lambda=phi=1",
        worst <= 1e-12,
        &format!("max relative deviation {worst:.2e} over 10^4 pairs"),
    );
}

// ---- criteria 3 and 4: scorer vs oracle, metric ordering -------------------

fn hit(kw: &str, utt: &str, start: f64, end: f64, score: f64) -> Hit {
    Hit {
        keyword_id: kw.into(),
        utterance_id: utt.into(),
        start_s: start,
        end_s: end,
        score,
        decision: true,
    }
}

fn reference(kw: &str, utt: &str, start: f64, end: f64) -> ReferenceOccurrence {
    ReferenceOccurrence {
        keyword_id: kw.into(),
        utterance_id: utt.into(),
        start_s: start,
        end_s: end,
    }
}

/// Random instance with tolerance-disjoint references (3 s slot spacing far
/// exceeds twice the 0.5 s matching tolerance), <= 5 queries, <= 20 refs,
/// <= 50 hits.
fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Hit>, Vec<ReferenceOccurrence>, ScoringConfig) {
    let n_queries = rng.random_range(1..=5);
    let n_utts = rng.random_range(1..=4);
    let mut refs = Vec::new();
    let mut hits = Vec::new();
    for q in 0..n_queries {
        let kw = format!("kw{q}");
        for u in 0..n_utts {
            let utt = format!("utt{u}");
            for k in 0..rng.random_range(0..=2) {
                let base = k as f64 * 3.0;
                let dur = 0.4 + rng.random::<f64>() * 0.6;
                if rng.random::<f64>() < 0.8 && refs.len() < 20 {
                    refs.push(reference(&kw, &utt, base, base + dur));
                }
                if rng.random::<f64>() < 0.7 && hits.len() < 48 {
                    let jitter = (rng.random::<f64>() - 0.5) * 0.6;
                    let mid = base + dur / 2.0 + jitter;
                    let w = 0.1 + rng.random::<f64>() * 0.3;
                    hits.push(hit(&kw, &utt, mid - w, mid + w, rng.random::<f64>().clamp(0.01, 1.0)));
                }
                if rng.random::<f64>() < 0.4 && hits.len() < 48 {
                    let mid = base + 1.9 + rng.random::<f64>() * 0.4;
                    hits.push(hit(&kw, &utt, mid - 0.1, mid + 0.1, rng.random::<f64>().clamp(0.01, 1.0)));
                }
            }
        }
    }
    let trial = 400.0 + rng.random::<f64>() * 600.0;
    (hits, refs, ScoringConfig::new(trial))
}

#[test]
fn criterion_3_scorer_oracle_equivalence() {
    // the hand-checked instance first
    let refs = vec![reference("k", "u", 1.0, 2.0), reference("k", "u", 5.0, 6.0)];
    let hits = vec![hit("k", "u", 1.2, 1.8, 0.9), hit("k", "u", 20.0, 20.4, 0.8)];
    let c = ScoringConfig::new(100.0);
    let at_half = twv(&hits, &refs, 0.5, &c).unwrap().atwv;
    assert!((at_half - (-9.7031)).abs() < 1e-4, "hand instance at xi=0.5: {at_half}");
    let at_085 = twv(&hits, &refs, 0.85, &c).unwrap().atwv;
    assert!((at_085 - 0.5).abs() < 1e-12, "hand instance at xi=0.85: {at_085}");
    assert_eq!(at_half, oracle_twv(&hits, &refs, 0.5, &c).unwrap().atwv);
    assert_eq!(at_085, oracle_twv(&hits, &refs, 0.85, &c).unwrap().atwv);

    let mut rng = dkws::rng::derive(103, "acc-oracle");
    let mut checked = 0;
    while checked < 100 {
        let (hits, refs, c) = random_instance(&mut rng);
        if refs.is_empty() {
            continue;
        }
        checked += 1;
        for xi in [0.0, 0.2, 0.5, 0.8, 1.0] {
            let ours = twv(&hits, &refs, xi, &c).unwrap();
            let oracle = oracle_twv(&hits, &refs, xi, &c).unwrap();
            assert_eq!(ours.atwv, oracle.atwv, "instance {checked}, xi {xi}");
            for (a, b) in ours.per_query.iter().zip(oracle.per_query.iter()) {
                assert_eq!(
                    (a.n_true, a.n_correct, a.n_fa),
                    (b.n_true, b.n_correct, b.n_fa),
                    "instance {checked} query {}",
                    a.keyword_id
                );
            }
        }
        assert_eq!(
            mtwv_sweep(&hits, &refs, &c).unwrap().0,
            oracle_mtwv(&hits, &refs, &c).unwrap().0,
            "instance {checked} mtwv"
        );
        assert_eq!(
            otwv(&hits, &refs, &c).unwrap(),
            oracle_otwv(&hits, &refs, &c).unwrap(),
            "instance {checked} otwv"
        );
        assert_eq!(
            stwv(&hits, &refs, &c).unwrap(),
            oracle_stwv(&hits, &refs, &c).unwrap(),
            "instance {checked} stwv"
        );
    }
    criterion(3, "scorer oracle equivalence", true, "100 instances + hand-checked values");
}

#[test]
fn criterion_4_metric_ordering() {
    let mut rng = dkws::rng::derive(104, "acc-ordering");
    let mut checked = 0;
    while checked < 100 {
        let (hits, refs, c) = random_instance(&mut rng);
        if refs.is_empty() {
            continue;
        }
        checked += 1;
        let (m, _) = mtwv_sweep(&hits, &refs, &c).unwrap();
        let o = otwv(&hits, &refs, &c).unwrap();
        let s = stwv(&hits, &refs, &c).unwrap();
        let mut probes: Vec<f64> = hits.iter().map(|h| h.score).collect();
        probes.extend([0.0, 0.25, 0.5, 0.75, 1.0]);
        for xi in probes {
            let t = twv(&hits, &refs, xi, &c).unwrap().atwv;
            assert!(t <= m, "instance {checked}: twv({xi}) = {t} > MTWV {m}");
        }
        assert!(m <= o, "instance {checked}: MTWV {m} > OTWV {o}");
        assert!(o <= s, "instance {checked}: OTWV {o} > STWV {s}");
    }
    criterion(4, "metric ordering chain", true, "twv <= MTWV <= OTWV <= STWV on 100 instances");
}

// ---- criterion 5: length law ------------------------------------------------

#[test]
fn criterion_5_length_law() {
    let config = ModelConfig {
        feature_dim: 2,
        embedding_dim: 2,
        query_gru_layers: 1,
        query_gru_width: 2,
        doc_lstm_layers: 2,
        doc_lstm_width: 2,
        projection_dim: 2,
        dropout: 0.0,
        decimate_after: vec![1, 2],
        languages: vec![LanguageVocab { id: "t".into(), graphemes: vec!['a'] }],
    };
    let model: Model<f32> = Model::init(config, 5).unwrap();
    let mut rng = dkws::rng::derive(105, "acc-length");
    for n in 8..=1000usize {
        let feats = Tensor::new(
            vec![n, 2],
            (0..n * 2).map(|_| rng.random::<f32>()).collect(),
        )
        .unwrap();
        let enc = model.encode_document(&feats).unwrap();
        let labels = vec![0u8; n];
        let down = downsample_labels(&labels, 4);
        assert_eq!(enc.rows(), n / 4, "encoder length at N = {n}");
        assert_eq!(down.len(), n / 4, "label length at N = {n}");
    }
    criterion(5, "length law", true, "encoder and label lengths equal floor(N/4) for N in 8..=1000");
}

// ---- criterion 6: index/online equivalence -----------------------------------

#[test]
fn criterion_6_index_online_equivalence() {
    let spec = SynthesisSpec {
        feature_dim: 8,
        train_utterances: 12,
        dev_utterances: 0,
        languages: vec![SynthLanguage {
            id: "toy".into(),
            alphabet_size: 8,
            lexicon_size: 30,
            holdout_words: 0,
        }],
        ..Default::default()
    };
    let lang = generate_synthetic_corpus(&spec, 61).unwrap().remove(0);
    let config = ModelConfig {
        feature_dim: 8,
        embedding_dim: 6,
        query_gru_layers: 1,
        query_gru_width: 4,
        doc_lstm_layers: 2,
        doc_lstm_width: 6,
        projection_dim: 8,
        dropout: 0.0,
        decimate_after: vec![1, 2],
        languages: vec![LanguageVocab::from_corpus(&lang.train)],
    };
    let model: Model<f32> = Model::init(config, 99).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("archive.idx");
    let index = build_index(&model, &lang.train).unwrap();
    save_index(&index, &path).unwrap();
    let loaded = load_index(&path).unwrap();

    let mut rng = dkws::rng::derive(106, "acc-index");
    let vocab: Vec<String> =
        lang.train.utterances.iter().flat_map(|u| u.words.clone()).collect();
    let cfg = SearchConfig { alpha: 0.2, island_score: IslandScore::Median };
    for qi in 0..50 {
        let word = &vocab[rng.random_range(0..vocab.len())];
        let q = Query::new("toy", word.clone());
        let from_index = search(&loaded, &model, &format!("q{qi}"), &q, &cfg).unwrap();

        let e_q = model.encode_query(&q).unwrap();
        let mut online = Vec::new();
        for utt in &lang.train.utterances {
            let enc = model.encode_utterance(utt).unwrap();
            let track = score(&enc, e_q.data()).unwrap();
            online.extend(detect_islands(&track, &format!("q{qi}"), &utt.id, &cfg));
        }
        assert_eq!(from_index, online, "query {qi} ('{word}') differs");
    }
    criterion(6, "index/online equivalence", true, "50 queries bit-identical after save/load");
}

// ---- criterion 11: KST properties ---------------------------------------------

#[test]
fn criterion_11_kst_properties() {
    let mut rng = dkws::rng::derive(111, "acc-kst");

    // rank preservation on random hitlists (exact)
    for _ in 0..50 {
        let t = 200.0 + rng.random::<f64>() * 5000.0;
        let cfg = ScoringConfig::new(t);
        let n_kw = rng.random_range(1..=4);
        let mut hits = Vec::new();
        for k in 0..n_kw {
            for i in 0..rng.random_range(1..=15) {
                hits.push(hit(
                    &format!("kw{k}"),
                    "u",
                    i as f64 * 2.0,
                    i as f64 * 2.0 + 1.0,
                    rng.random::<f64>().clamp(1e-4, 1.0),
                ));
            }
        }
        let normalized = kst_normalize(&hits, &cfg);
        for k in 0..n_kw {
            let kw = format!("kw{k}");
            let idx: Vec<usize> =
                (0..hits.len()).filter(|&i| hits[i].keyword_id == kw).collect();
            for a in &idx {
                for b in &idx {
                    let before = hits[*a].score.partial_cmp(&hits[*b].score).unwrap();
                    let after =
                        normalized[*a].score.partial_cmp(&normalized[*b].score).unwrap();
                    assert_eq!(before, after, "rank changed within {kw}");
                }
            }
        }
    }

    // s = thr(q) maps to 0.5 within 1e-9 for 100 random (beta, T, N_true)
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let beta = 10.0 + rng.random::<f64>() * 2000.0;
        let t = 50.0 + rng.random::<f64>() * 10000.0;
        let n_true = 0.5 + rng.random::<f64>() * 10.0;
        let cfg = ScoringConfig { beta, trial_duration_s: t, match_tolerance_s: 0.5 };
        let thr = kst_threshold(n_true, &cfg);
        // hit list engineered so the score sum equals n_true with one hit at thr
        let mut hits = vec![hit("k", "u", 0.0, 1.0, thr)];
        let mut rest = n_true - thr;
        let mut i = 1;
        while rest > 1e-12 {
            let s = rest.min(0.9);
            hits.push(hit("k", "u", i as f64 * 2.0, i as f64 * 2.0 + 1.0, s));
            rest -= s;
            i += 1;
        }
        let sum: f64 = hits.iter().map(|h| h.score).sum();
        assert!((sum - n_true).abs() < 1e-9);
        let normalized = kst_normalize(&hits, &cfg);
        worst = worst.max((normalized[0].score - 0.5).abs());
    }
    criterion(
        11,
        "KST properties",
        worst <= 1e-9,
        &format!("rank preserved; threshold fixed point off by {worst:.1e}"),
    );
}
