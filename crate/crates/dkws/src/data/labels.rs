//! Per-frame occurrence indicators and their down-sampled variant.

use super::Utterance;

/// Binary per-frame labels, 1 where the phrase is being spoken.
pub type LabelSequence = Vec<u8>;

/// y_n = 1 exactly on the frames from the start of the phrase's first word to
/// the end of its last word, for every occurrence of the phrase as a
/// consecutive word sequence. No occurrence means all zeros.
pub fn frame_labels(phrase_words: &[String], utterance: &Utterance) -> LabelSequence {
    let n = utterance.num_frames();
    let mut labels = vec![0u8; n];
    let k = phrase_words.len();
    if k == 0 || k > utterance.words.len() {
        return labels;
    }
    for start in 0..=(utterance.words.len() - k) {
        if utterance.words[start..start + k] == *phrase_words {
            let s = utterance.alignment[start].start_frame;
            let e = utterance.alignment[start + k - 1].end_frame;
            for l in labels.iter_mut().take(e.min(n - 1) + 1).skip(s) {
                *l = 1;
            }
        }
    }
    labels
}

/// Map full-rate labels onto the encoder's output frames.
///
/// The encoder output frame m survives `log2(factor)` odd-phase decimations,
/// i.e. it sits at input index `factor*m + factor - 1`. Each output frame is
/// responsible for the span from its own input index up to the next surviving
/// one, with the first bucket extended back to frame 0 and the last forward to
/// N, so the buckets partition the input exactly. A bucket is positive if any
/// of its input frames is (any-positive rule, so 1-3 frame words survive).
pub fn downsample_labels(labels: &LabelSequence, factor: usize) -> LabelSequence {
    assert!(factor >= 1, "downsample factor must be >= 1");
    let n = labels.len();
    let out_len = n / factor;
    let mut out = vec![0u8; out_len];
    for (m, o) in out.iter_mut().enumerate() {
        let start = if m == 0 { 0 } else { factor * m + factor - 1 };
        let end = if m + 1 == out_len { n } else { factor * (m + 1) + factor - 1 };
        if labels[start..end].contains(&1) {
            *o = 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AlignedWord;
    use crate::numerics::Tensor;

    fn utt(n: usize, words: &[(&str, usize, usize)]) -> Utterance {
        Utterance {
            id: "u".into(),
            features: Tensor::zeros(vec![n, 1]),
            frame_period: 0.01,
            words: words.iter().map(|(w, _, _)| w.to_string()).collect(),
            alignment: words
                .iter()
                .map(|&(w, s, e)| AlignedWord { word: w.into(), start_frame: s, end_frame: e })
                .collect(),
        }
    }

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn unigram_labels_cover_exactly_the_aligned_span() {
        let u = utt(60, &[("the", 0, 15), ("cat", 20, 45), ("sat", 46, 59)]);
        let y = frame_labels(&words(&["cat"]), &u);
        for (n, &v) in y.iter().enumerate() {
            assert_eq!(v == 1, (20..=45).contains(&n), "frame {n}");
        }
    }

    #[test]
    fn absent_phrase_gives_all_zeros() {
        let u = utt(30, &[("dog", 0, 29)]);
        assert!(frame_labels(&words(&["cat"]), &u).iter().all(|&v| v == 0));
    }

    #[test]
    fn bigram_span_unions_both_words() {
        let u = utt(60, &[("red", 10, 19), ("cat", 20, 45), ("red", 50, 55)]);
        let y = frame_labels(&words(&["red", "cat"]), &u);
        for (n, &v) in y.iter().enumerate() {
            assert_eq!(v == 1, (10..=45).contains(&n), "frame {n}");
        }
    }

    #[test]
    fn repeated_occurrences_all_label() {
        let u = utt(40, &[("hi", 0, 5), ("x", 10, 15), ("hi", 20, 25)]);
        let y = frame_labels(&words(&["hi"]), &u);
        let expect: Vec<u8> =
            (0..40).map(|n| u8::from((0..=5).contains(&n) || (20..=25).contains(&n))).collect();
        assert_eq!(y, expect);
    }

    #[test]
    fn downsample_all_zeros_stays_zero() {
        assert_eq!(downsample_labels(&vec![0; 16], 4), vec![0; 4]);
    }

    #[test]
    fn downsample_traces_odd_phase_decimation_indices() {
        // N=10, ones at frames 8 and 9: output frames survive at inputs 3 and
        // 7; the second bucket spans [7, 10) and catches them.
        let mut y = vec![0u8; 10];
        y[8] = 1;
        y[9] = 1;
        assert_eq!(downsample_labels(&y, 4), vec![0, 1]);
    }

    #[test]
    fn downsample_any_positive_in_a_bucket_sets_the_output() {
        for hot in 0..12 {
            let mut y = vec![0u8; 12];
            y[hot] = 1;
            let d = downsample_labels(&y, 4);
            assert_eq!(d.len(), 3);
            assert_eq!(d.iter().map(|&v| v as usize).sum::<usize>(), 1, "frame {hot}");
        }
    }

    #[test]
    fn downsample_factor_one_is_identity() {
        let y = vec![0, 1, 1, 0, 1];
        assert_eq!(downsample_labels(&y, 1), y);
    }

    proptest::proptest! {
        #[test]
        fn downsample_length_law(n in 0usize..300, factor in proptest::sample::select(vec![1usize, 2, 4, 8, 16])) {
            let y = vec![0u8; n];
            proptest::prop_assert_eq!(downsample_labels(&y, factor).len(), n / factor);
        }

        #[test]
        fn downsample_preserves_any_positive(n in 4usize..200, hot in 0usize..200) {
            let hot = hot % n;
            let mut y = vec![0u8; n];
            y[hot] = 1;
            let d = downsample_labels(&y, 4);
            if !d.is_empty() {
                proptest::prop_assert_eq!(d.iter().map(|&v| v as usize).sum::<usize>(), 1);
            }
        }
    }
}
