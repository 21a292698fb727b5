//! Scratch driver for the trend experiments: multilingual transfer, the phi
//! ablation, the down-sampling ablation, and fusion sanity, at mini scale.

use std::time::Instant;

use dkws::data::synth::{SynthLanguage, SynthesisSpec};
use dkws::data::{generate_synthetic_corpus, Corpus, GeneratedLanguage, Keyword, SamplerConfig};
use dkws::index::{build_index, search_all, SearchConfig};
use dkws::model::{LanguageVocab, Model, ModelConfig, Query};
use dkws::numerics::AdamConfig;
use dkws::scorer::{extract_references, kst_normalize, mtwv_sweep, tune_fusion_weight, ScoringConfig};
use dkws::trainer::{finetune, pretrain_multilingual, select_alpha, train, DevSet, TrainConfig};

fn envu(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}
fn envf(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn mini_spec(lang: &str, train_utts: usize, dev_utts: usize) -> SynthesisSpec {
    SynthesisSpec {
        feature_dim: 16,
        frames_per_grapheme: (3, 6),
        graphemes_per_word: (3, 6),
        words_per_utterance: (2, 4),
        silence_frames: (2, 5),
        noise_sigma: envf("SIGMA", 0.3),
        frame_period: 0.01,
        train_utterances: train_utts,
        dev_utterances: dev_utts,
        dev_queries: envu("QUERIES", 15),
        languages: vec![SynthLanguage {
            id: lang.into(),
            alphabet_size: envu("ALPHABET", 12),
            lexicon_size: envu("LEXICON", 36),
            holdout_words: 0,
        }],
    }
}

fn mini_model(lang: &GeneratedLanguage, layers: usize, decimate: Vec<usize>, seed: u64) -> Model<f32> {
    let cfg = ModelConfig {
        feature_dim: 16,
        embedding_dim: 16,
        query_gru_layers: 1,
        query_gru_width: envu("GRU_WIDTH", 16),
        doc_lstm_layers: layers,
        doc_lstm_width: envu("WIDTH", 24),
        projection_dim: envu("PROJ", 32),
        dropout: envf("DROPOUT", 0.1),
        decimate_after: decimate,
        languages: vec![LanguageVocab::from_corpus(&lang.train)],
    };
    Model::init(cfg, seed).unwrap()
}

fn mini_train_cfg(seed: u64, phi: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        loss: dkws::numerics::LossConfig::new(5.0, phi, 1e-7).unwrap(),
        sampler: SamplerConfig {
            batch_phrases: envu("LB", 8),
            utterances_per_phrase: envu("M", 3),
            phrase_orders: vec![1],
        },
        optimizer: AdamConfig { learning_rate: envf("LR", 3e-3), ..Default::default() },
        epochs,
        steps_per_epoch: None,
        seed,
        dev_every: usize::MAX, // dev evaluated once at the end by the caller
        ..Default::default()
    }
}

fn dev_set(lang: &GeneratedLanguage) -> DevSet {
    let keywords: Vec<Keyword> = lang
        .queries_iv
        .iter()
        .enumerate()
        .map(|(i, w)| Keyword { id: format!("kw{i:03}"), surface: w.clone() })
        .collect();
    DevSet {
        references: extract_references(&lang.dev, &keywords),
        corpus: lang.dev.clone(),
        keywords,
    }
}

fn trend_multilingual(seeds: &[u64]) {
    let epochs = envu("EPOCHS", 30);
    let pre_epochs = envu("PRE_EPOCHS", 20);
    let target_train = envu("TARGET_TRAIN", 60);
    let mut wins = 0;
    for &seed in seeds {
        let t0 = Instant::now();
        // two pretraining languages, one low-resource target, disjoint alphabets
        let mut spec = mini_spec("pa", envu("PRE_TRAIN", 200), 0);
        spec.languages.push(SynthLanguage {
            id: "pb".into(),
            alphabet_size: envu("ALPHABET", 12),
            lexicon_size: envu("LEXICON", 36),
            holdout_words: 0,
        });
        spec.languages.push(SynthLanguage {
            id: "tgt".into(),
            alphabet_size: envu("ALPHABET", 12),
            lexicon_size: envu("LEXICON", 36),
            holdout_words: 0,
        });
        spec.dev_utterances = envu("DEV_UTTS", 250);
        let mut langs = generate_synthetic_corpus(&spec, seed).unwrap();
        let tgt = langs.pop().unwrap();
        let (pa, pb) = (langs.remove(0), langs.remove(0));
        let mut target_corpus = tgt.train.clone();
        target_corpus.utterances.truncate(target_train);
        let dev = dev_set(&tgt);

        // scratch baseline
        let scratch_model = mini_model(&tgt, 2, vec![1, 2], seed);
        let cfg = mini_train_cfg(seed, 0.7, epochs);
        let (scratch, _) = train(&target_corpus, None, scratch_model, &cfg).unwrap();
        let scratch_eval = select_alpha(&scratch, &dev, &[0.2, 0.4, 0.6]).unwrap();

        // pretrain on both auxiliary languages, then finetune
        let pre_cfg = ModelConfig {
            languages: vec![
                LanguageVocab::from_corpus(&pa.train),
                LanguageVocab::from_corpus(&pb.train),
            ],
            ..scratch.config.clone()
        };
        let pre_model = Model::init(pre_cfg, seed).unwrap();
        let pre_train_cfg = mini_train_cfg(seed, 0.7, pre_epochs);
        let (pretrained, _) =
            pretrain_multilingual(&[pa.train.clone(), pb.train.clone()], pre_model, &pre_train_cfg)
                .unwrap();
        let tgt_cfg = ModelConfig {
            languages: vec![LanguageVocab::from_corpus(&tgt.train)],
            ..pretrained.config.clone()
        };
        let (tuned, _) = finetune(&pretrained, tgt_cfg, &target_corpus, None, &cfg).unwrap();
        let tuned_eval = select_alpha(&tuned, &dev, &[0.2, 0.4, 0.6]).unwrap();

        let win = tuned_eval.mtwv > scratch_eval.mtwv;
        wins += win as usize;
        eprintln!(
            "multilingual seed {seed}: finetuned {:.3} vs scratch {:.3} {} [{:.0?}]",
            tuned_eval.mtwv,
            scratch_eval.mtwv,
            if win { "WIN" } else { "LOSS" },
            t0.elapsed()
        );
    }
    eprintln!("multilingual trend: {wins}/{} wins", seeds.len());
}

fn train_mtwv(lang: &GeneratedLanguage, dev: &DevSet, phi: f64, layers: usize, decimate: Vec<usize>, epochs: usize, seed: u64) -> f64 {
    let model = mini_model(lang, layers, decimate, seed);
    let cfg = mini_train_cfg(seed, phi, epochs);
    let (trained, _) = train(&lang.train, None, model, &cfg).unwrap();
    select_alpha(&trained, dev, &[0.2, 0.4, 0.6]).unwrap().mtwv
}

fn trend_phi(seeds: &[u64]) {
    let epochs = envu("EPOCHS", 30);
    let phis = [0.6, 0.7, 0.8, 0.9, 1.0];
    let mut means = [0.0; 5];
    let mut wins_07_vs_10 = 0;
    for &seed in seeds {
        let t0 = Instant::now();
        let spec = mini_spec("mono", envu("TRAIN_UTTS", 150), envu("DEV_UTTS", 250));
        let lang = generate_synthetic_corpus(&spec, seed).unwrap().remove(0);
        let dev = dev_set(&lang);
        let mut row = Vec::new();
        for (i, &phi) in phis.iter().enumerate() {
            let m = train_mtwv(&lang, &dev, phi, 2, vec![1, 2], epochs, seed);
            means[i] += m / seeds.len() as f64;
            row.push(m);
        }
        if row[1] > row[4] {
            wins_07_vs_10 += 1;
        }
        eprintln!(
            "phi seed {seed}: {:?} [{:.0?}]",
            row.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            t0.elapsed()
        );
    }
    let mut pair_gap = 0.0;
    let mut pairs = 0;
    for i in 0..4 {
        for j in (i + 1)..4 {
            pair_gap += (means[i] - means[j]).abs();
            pairs += 1;
        }
    }
    pair_gap /= pairs as f64;
    let gap_10 = means[..4].iter().sum::<f64>() / 4.0 - means[4];
    eprintln!(
        "phi trend: 0.7 beats 1.0 in {wins_07_vs_10}/{}; means {:?}; pairwise {pair_gap:.3} vs 1.0-gap {gap_10:.3}",
        seeds.len(),
        means.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
    );
}

fn trend_downsampling(seeds: &[u64]) {
    let epochs = envu("EPOCHS", 30);
    let variants: [(usize, Vec<usize>); 3] =
        [(1, vec![]), (4, vec![1, 2]), (16, vec![1, 2, 3, 4])];
    let mut means = [0.0; 3];
    let mut wins_4_vs_1 = 0;
    for &seed in seeds {
        let t0 = Instant::now();
        let spec = mini_spec("mono", envu("TRAIN_UTTS", 150), envu("DEV_UTTS", 250));
        let lang = generate_synthetic_corpus(&spec, seed).unwrap().remove(0);
        let dev = dev_set(&lang);
        let mut row = Vec::new();
        for (i, (_, decimate)) in variants.iter().enumerate() {
            let m = train_mtwv(&lang, &dev, 0.7, 4, decimate.clone(), epochs, seed);
            means[i] += m / seeds.len() as f64;
            row.push(m);
        }
        if row[1] >= row[0] {
            wins_4_vs_1 += 1;
        }
        eprintln!(
            "downsampling seed {seed}: r1 {:.3} r4 {:.3} r16 {:.3} [{:.0?}]",
            row[0],
            row[1],
            row[2],
            t0.elapsed()
        );
    }
    eprintln!(
        "downsampling trend: 4 >= 1 in {wins_4_vs_1}/{}; means r1 {:.3} r4 {:.3} r16 {:.3}",
        seeds.len(),
        means[0],
        means[1],
        means[2]
    );
}

fn trend_fusion(seeds: &[u64]) {
    let epochs = envu("EPOCHS", 20);
    let mut ok = 0;
    for &seed in seeds {
        let spec = mini_spec("mono", envu("TRAIN_UTTS", 120), envu("DEV_UTTS", 250));
        let lang = generate_synthetic_corpus(&spec, seed).unwrap().remove(0);
        let dev = dev_set(&lang);
        let model = mini_model(&lang, 2, vec![1, 2], seed);
        let cfg = mini_train_cfg(seed, 0.7, epochs);
        let (trained, _) = train(&lang.train, None, model, &cfg).unwrap();

        let index = build_index(&trained, &dev.corpus).unwrap();
        let scoring = ScoringConfig::new(index.total_seconds());
        let queries: Vec<(String, Query)> = dev
            .keywords
            .iter()
            .map(|k| (k.id.clone(), Query::new("mono", k.surface.clone())))
            .collect();
        let (hits, _) =
            search_all(&index, &trained, &queries, &SearchConfig::default()).unwrap();
        let a = kst_normalize(&hits, &scoring);
        let mut rng = dkws::rng::derive(seed, "fusion-jitter");
        use rand::Rng;
        let b: Vec<_> = a
            .iter()
            .map(|h| dkws::index::Hit {
                score: (h.score + (rng.random::<f64>() - 0.5) * 0.2).clamp(1e-6, 1.0),
                ..h.clone()
            })
            .collect();
        let (ma, _) = mtwv_sweep(&a, &dev.references, &scoring).unwrap();
        let (mb, _) = mtwv_sweep(&b, &dev.references, &scoring).unwrap();
        let (w, fused) = tune_fusion_weight(&a, &b, &dev.references, &scoring).unwrap();
        let (mf, _) = mtwv_sweep(&fused, &dev.references, &scoring).unwrap();
        let pass = mf >= ma.max(mb) - 1e-12;
        ok += pass as usize;
        eprintln!("fusion seed {seed}: A {ma:.3} B {mb:.3} fused {mf:.3} (w {w}) {}",
            if pass { "OK" } else { "VIOLATION" });
    }
    eprintln!("fusion sanity: {ok}/{}", seeds.len());
}

fn main() {
    rayon::ThreadPoolBuilder::new().num_threads(envu("THREADS", 2)).build_global().ok();
    let seeds: Vec<u64> = (1..=envu("SEEDS", 5) as u64).collect();
    let which = std::env::var("WHICH").unwrap_or_else(|_| "all".into());
    let t0 = Instant::now();
    if which == "all" || which == "multilingual" {
        trend_multilingual(&seeds);
    }
    if which == "all" || which == "phi" {
        trend_phi(&seeds);
    }
    if which == "all" || which == "downsampling" {
        trend_downsampling(&seeds);
    }
    if which == "all" || which == "fusion" {
        trend_fusion(&seeds);
    }
    eprintln!("total {:.0?}", t0.elapsed());
}
