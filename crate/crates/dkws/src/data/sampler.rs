//! Mini-batch sampling: for each training phrase, one guaranteed-positive
//! utterance plus M-1 drawn uniformly from the whole pool. Labels always come
//! from the alignments, so an accidentally positive "negative" is still
//! labeled correctly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::frame_labels;
use super::phrases::PhraseTable;
use super::{Corpus, DataError, LabelSequence};

/// Pool coordinates of one utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UttRef {
    pub corpus: usize,
    pub utterance: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Phrases per training step (L_b).
    pub batch_phrases: usize,
    /// Utterances per phrase (M), the first of which is a positive.
    pub utterances_per_phrase: usize,
    /// Which n-gram orders participate in training.
    pub phrase_orders: Vec<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        // L_b = 16, M = 4
        SamplerConfig { batch_phrases: 16, utterances_per_phrase: 4, phrase_orders: vec![1, 2, 3] }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.batch_phrases == 0 {
            return Err(DataError::Config("batch_phrases must be >= 1".into()));
        }
        if self.utterances_per_phrase == 0 {
            return Err(DataError::Config("utterances_per_phrase must be >= 1".into()));
        }
        if self.phrase_orders.is_empty() || self.phrase_orders.iter().any(|&o| !(1..=3).contains(&o)) {
            return Err(DataError::Config("phrase_orders must be a nonempty subset of {1,2,3}".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BatchItem {
    /// Index into the phrase table.
    pub phrase: usize,
    pub utterances: Vec<UttRef>,
    /// Full-rate labels per utterance, aligned with `utterances`.
    pub labels: Vec<LabelSequence>,
}

#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

/// Assemble a batch for the given phrase ids: per phrase one occurrence-drawn
/// positive followed by M-1 uniform draws from `eligible`.
pub fn assemble_batch(
    table: &PhraseTable,
    phrase_ids: &[usize],
    corpora: &[Corpus],
    eligible: &[UttRef],
    utterances_per_phrase: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Batch, DataError> {
    let m = utterances_per_phrase;
    if m > eligible.len() {
        return Err(DataError::Config(format!(
            "utterances_per_phrase {m} exceeds the eligible pool of {}",
            eligible.len()
        )));
    }
    let mut items = Vec::with_capacity(phrase_ids.len());
    for &pid in phrase_ids {
        let entry = &table.entries[pid];
        let occ = entry.occurrences[rng.random_range(0..entry.occurrences.len())];
        let mut utts = Vec::with_capacity(m);
        utts.push(UttRef { corpus: occ.corpus, utterance: occ.utterance });
        for _ in 1..m {
            utts.push(eligible[rng.random_range(0..eligible.len())]);
        }
        let labels = utts
            .iter()
            .map(|r| frame_labels(&entry.phrase.words, &corpora[r.corpus].utterances[r.utterance]))
            .collect();
        items.push(BatchItem { phrase: pid, utterances: utts, labels });
    }
    Ok(Batch { items })
}

/// Pool of utterances long enough to train on.
pub fn eligible_pool(corpora: &[Corpus], min_frames: usize) -> Vec<UttRef> {
    let mut pool = Vec::new();
    for (ci, corpus) in corpora.iter().enumerate() {
        for (ui, utt) in corpus.utterances.iter().enumerate() {
            if utt.num_frames() >= min_frames {
                pool.push(UttRef { corpus: ci, utterance: ui });
            }
        }
    }
    pool
}

/// Draw a standalone batch: L_b phrases uniformly from the table.
pub fn sample_batch(
    table: &PhraseTable,
    corpus: &Corpus,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Batch, DataError> {
    cfg.validate()?;
    if table.is_empty() {
        return Err(DataError::Config("phrase table is empty".into()));
    }
    let corpora = std::slice::from_ref(corpus);
    let eligible = eligible_pool(corpora, 8);
    let phrase_ids: Vec<usize> =
        (0..cfg.batch_phrases).map(|_| rng.random_range(0..table.len())).collect();
    assemble_batch(table, &phrase_ids, corpora, &eligible, cfg.utterances_per_phrase, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::phrases::extract_phrases;
    use crate::data::{AlignedWord, Utterance};
    use crate::numerics::Tensor;
    use crate::rng;

    fn utt(id: &str, words: &[&str]) -> Utterance {
        let per = 10;
        let n = words.len() * per;
        Utterance {
            id: id.into(),
            features: Tensor::zeros(vec![n, 1]),
            frame_period: 0.01,
            words: words.iter().map(|w| w.to_string()).collect(),
            alignment: words
                .iter()
                .enumerate()
                .map(|(i, w)| AlignedWord {
                    word: w.to_string(),
                    start_frame: i * per,
                    end_frame: (i + 1) * per - 1,
                })
                .collect(),
        }
    }

    fn corpus() -> Corpus {
        Corpus {
            language: "t".into(),
            utterances: vec![
                utt("u0", &["alpha", "beta"]),
                utt("u1", &["gamma", "alpha"]),
                utt("u2", &["delta"]),
                utt("u3", &["beta", "gamma", "delta"]),
            ],
        }
    }

    #[test]
    fn m_equals_one_gives_positives_only() {
        let c = corpus();
        let table = extract_phrases(std::slice::from_ref(&c), &[1], 8);
        let cfg = SamplerConfig { utterances_per_phrase: 1, ..Default::default() };
        let mut r = rng::derive(9, "sampler");
        let batch = sample_batch(&table, &c, &cfg, &mut r).unwrap();
        for item in &batch.items {
            assert_eq!(item.utterances.len(), 1);
            assert!(item.labels[0].contains(&1), "positive labels required");
        }
    }

    #[test]
    fn m_four_has_one_guaranteed_positive_and_three_draws() {
        let c = corpus();
        let table = extract_phrases(std::slice::from_ref(&c), &[1], 8);
        let cfg = SamplerConfig::default();
        let mut r = rng::derive(10, "sampler");
        let batch = sample_batch(&table, &c, &cfg, &mut r).unwrap();
        for item in &batch.items {
            assert_eq!(item.utterances.len(), 4);
            assert!(item.labels[0].contains(&1));
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_batch() {
        let c = corpus();
        let table = extract_phrases(std::slice::from_ref(&c), &[1, 2], 8);
        let cfg = SamplerConfig::default();
        let a = sample_batch(&table, &c, &cfg, &mut rng::derive(11, "s")).unwrap();
        let b = sample_batch(&table, &c, &cfg, &mut rng::derive(11, "s")).unwrap();
        for (x, y) in a.items.iter().zip(b.items.iter()) {
            assert_eq!(x.phrase, y.phrase);
            assert_eq!(x.utterances, y.utterances);
            assert_eq!(x.labels, y.labels);
        }
    }

    #[test]
    fn m_larger_than_pool_is_a_config_error() {
        let c = corpus();
        let table = extract_phrases(std::slice::from_ref(&c), &[1], 8);
        let cfg = SamplerConfig { utterances_per_phrase: 99, ..Default::default() };
        assert!(sample_batch(&table, &c, &cfg, &mut rng::derive(0, "s")).is_err());
    }

    #[test]
    fn every_batch_item_contains_a_downsampled_positive() {
        let c = corpus();
        let table = extract_phrases(std::slice::from_ref(&c), &[1, 2, 3], 8);
        let cfg = SamplerConfig::default();
        let mut r = rng::derive(12, "sampler");
        for _ in 0..20 {
            let batch = sample_batch(&table, &c, &cfg, &mut r).unwrap();
            for item in &batch.items {
                let down = crate::data::downsample_labels(&item.labels[0], 4);
                assert!(down.contains(&1), "positive lost by down-sampling");
            }
        }
    }
}
