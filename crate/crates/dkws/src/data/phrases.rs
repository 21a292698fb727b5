//! Training phrases: all word n-grams (n in 1..=3) of the transcripts, with
//! back-references to the utterances containing them.

use std::collections::HashMap;

use super::Corpus;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Phrase {
    pub words: Vec<String>,
    pub language: String,
}

impl Phrase {
    pub fn surface(&self) -> String {
        self.words.join(" ")
    }

    pub fn order(&self) -> usize {
        self.words.len()
    }
}

/// One occurrence of a phrase: pool coordinates plus the word position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Occurrence {
    pub corpus: usize,
    pub utterance: usize,
    pub word_index: usize,
}

#[derive(Clone, Debug)]
pub struct PhraseEntry {
    pub phrase: Phrase,
    pub occurrences: Vec<Occurrence>,
}

#[derive(Clone, Debug, Default)]
pub struct PhraseTable {
    pub entries: Vec<PhraseEntry>,
}

impl PhraseTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Enumerate the deduplicated n-grams of every transcript. `orders` filters
/// the n-gram sizes (subset of {1,2,3}); utterances shorter than `min_frames`
/// contribute no occurrences, which keeps the document encoder's minimum
/// input length satisfiable downstream.
pub fn extract_phrases(corpora: &[Corpus], orders: &[usize], min_frames: usize) -> PhraseTable {
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    let mut entries: Vec<PhraseEntry> = Vec::new();
    for (ci, corpus) in corpora.iter().enumerate() {
        for (ui, utt) in corpus.utterances.iter().enumerate() {
            if utt.num_frames() < min_frames {
                continue;
            }
            for &n in orders {
                if n == 0 || n > utt.words.len() {
                    continue;
                }
                for start in 0..=(utt.words.len() - n) {
                    let words = utt.words[start..start + n].to_vec();
                    let key = (corpus.language.clone(), words.join(" "));
                    let occ = Occurrence { corpus: ci, utterance: ui, word_index: start };
                    match index.get(&key) {
                        Some(&i) => entries[i].occurrences.push(occ),
                        None => {
                            index.insert(key, entries.len());
                            entries.push(PhraseEntry {
                                phrase: Phrase { words, language: corpus.language.clone() },
                                occurrences: vec![occ],
                            });
                        }
                    }
                }
            }
        }
    }
    PhraseTable { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AlignedWord, Utterance};
    use crate::numerics::Tensor;

    fn utt(id: &str, n: usize, words: &[&str]) -> Utterance {
        let per = n / words.len().max(1);
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

    #[test]
    fn three_word_transcript_yields_six_ngrams() {
        let corpus =
            Corpus { language: "t".into(), utterances: vec![utt("u", 30, &["a", "b", "c"])] };
        let table = extract_phrases(&[corpus], &[1, 2, 3], 8);
        let mut surfaces: Vec<String> = table.entries.iter().map(|e| e.phrase.surface()).collect();
        surfaces.sort();
        assert_eq!(surfaces, vec!["a", "a b", "a b c", "b", "b c", "c"]);
    }

    #[test]
    fn single_word_transcript_yields_one_phrase() {
        let corpus = Corpus { language: "t".into(), utterances: vec![utt("u", 20, &["solo"])] };
        let table = extract_phrases(&[corpus], &[1, 2, 3], 8);
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn duplicates_share_an_entry_with_two_occurrences() {
        let corpus = Corpus {
            language: "t".into(),
            utterances: vec![utt("u1", 20, &["hi", "there"]), utt("u2", 20, &["hi"])],
        };
        let table = extract_phrases(&[corpus], &[1], 8);
        let hi = table.entries.iter().find(|e| e.phrase.surface() == "hi").unwrap();
        assert_eq!(hi.occurrences.len(), 2);
    }

    #[test]
    fn short_utterances_are_excluded() {
        let corpus = Corpus { language: "t".into(), utterances: vec![utt("u", 5, &["tiny"])] };
        let table = extract_phrases(&[corpus], &[1, 2, 3], 8);
        assert!(table.is_empty());
    }

    #[test]
    fn phrase_closure_every_entry_occurs_in_a_transcript() {
        let corpus = Corpus {
            language: "t".into(),
            utterances: vec![utt("u1", 40, &["a", "b", "a", "c"]), utt("u2", 40, &["b", "a"])],
        };
        let corpora = [corpus];
        let table = extract_phrases(&corpora, &[1, 2, 3], 8);
        for entry in &table.entries {
            for occ in &entry.occurrences {
                let u = &corpora[occ.corpus].utterances[occ.utterance];
                let k = entry.phrase.order();
                assert_eq!(
                    &u.words[occ.word_index..occ.word_index + k],
                    entry.phrase.words.as_slice()
                );
            }
        }
    }
}
