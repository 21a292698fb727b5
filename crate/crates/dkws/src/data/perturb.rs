//! Speed perturbation in the feature domain: linear interpolation along the
//! time axis plus the matching rescale of alignment frame indices.

use super::{DataError, Utterance};
use crate::numerics::Tensor;

/// Resample to `round(N / factor)` frames. Factor 1.0 is the bit-exact
/// identity; factors below 1 slow the utterance down (more frames).
pub fn speed_perturb(utterance: &Utterance, factor: f64) -> Result<Utterance, DataError> {
    if factor <= 0.0 || factor.is_nan() {
        return Err(DataError::Config(format!("perturbation factor must be positive, got {factor}")));
    }
    let n = utterance.num_frames();
    let f = utterance.features.cols();
    let out_len = (n as f64 / factor).round() as usize;
    if out_len == 0 {
        return Err(DataError::Config(format!(
            "perturbation factor {factor} empties a {n}-frame utterance"
        )));
    }

    let mut data = Vec::with_capacity(out_len * f);
    for t in 0..out_len {
        let pos = (t as f64 * factor).min((n - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let frac = pos - lo as f64;
        let row_lo = utterance.features.row(lo);
        if frac == 0.0 {
            data.extend_from_slice(row_lo);
        } else {
            let row_hi = utterance.features.row(hi);
            let w = frac as f32;
            data.extend(row_lo.iter().zip(row_hi.iter()).map(|(a, b)| a + (b - a) * w));
        }
    }

    let rescale = |frame: usize| -> usize {
        ((frame as f64 / factor).round() as usize).min(out_len - 1)
    };
    let alignment = utterance
        .alignment
        .iter()
        .map(|a| {
            let start = rescale(a.start_frame);
            let end = rescale(a.end_frame).max(start);
            super::AlignedWord { word: a.word.clone(), start_frame: start, end_frame: end }
        })
        .collect();

    Ok(Utterance {
        id: utterance.id.clone(),
        features: Tensor::new(vec![out_len, f], data).expect("perturb shape"),
        frame_period: utterance.frame_period,
        words: utterance.words.clone(),
        alignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AlignedWord;
    use rand::Rng;

    fn utt(n: usize) -> Utterance {
        let mut rng = crate::rng::derive(3, "perturb-test");
        let data: Vec<f32> = (0..n * 3).map(|_| rng.random::<f32>()).collect();
        Utterance {
            id: "u".into(),
            features: Tensor::new(vec![n, 3], data).unwrap(),
            frame_period: 0.01,
            words: vec!["w".into()],
            alignment: vec![AlignedWord { word: "w".into(), start_frame: 20, end_frame: 45 }],
        }
    }

    #[test]
    fn factor_one_is_identity() {
        let u = utt(100);
        let p = speed_perturb(&u, 1.0).unwrap();
        assert_eq!(p.features, u.features);
        assert_eq!(p.alignment, u.alignment);
    }

    #[test]
    fn factor_09_lengthens_to_111_frames() {
        let u = utt(100);
        let p = speed_perturb(&u, 0.9).unwrap();
        assert_eq!(p.num_frames(), 111);
    }

    #[test]
    fn alignment_rescale_matches_hand_arithmetic() {
        let u = utt(100);
        let p = speed_perturb(&u, 1.1).unwrap();
        // round(20/1.1) = 18, round(45/1.1) = 41
        assert_eq!(p.alignment[0].start_frame, 18);
        assert_eq!(p.alignment[0].end_frame, 41);
    }

    #[test]
    fn extreme_factor_on_single_frame_errors() {
        let mut u = utt(8);
        u.features = Tensor::zeros(vec![1, 3]);
        u.alignment = vec![AlignedWord { word: "w".into(), start_frame: 0, end_frame: 0 }];
        assert!(speed_perturb(&u, 3.0).is_err());
    }
}
