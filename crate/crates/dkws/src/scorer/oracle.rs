//! Naive reference implementation of the TWV metrics, used only for
//! verification. Matching is solved as maximum-cardinality bipartite
//! matching per (keyword, utterance) group via augmenting paths, instead of
//! the production greedy-by-score pass; on references separated by more than
//! twice the match tolerance the two are provably equivalent.

use std::collections::HashMap;

use super::{QueryScore, ReferenceOccurrence, ScoreError, ScoringConfig, TwvReport};
use crate::index::Hit;

fn compatible(hit: &Hit, r: &ReferenceOccurrence, tol: f64) -> bool {
    let mid = (hit.start_s + hit.end_s) / 2.0;
    hit.keyword_id == r.keyword_id
        && hit.utterance_id == r.utterance_id
        && mid >= r.start_s - tol
        && mid <= r.end_s + tol
}

/// Maximum number of one-to-one hit/reference pairs under the compatibility
/// rule (Kuhn's augmenting-path algorithm).
fn max_matching(hits: &[&Hit], refs: &[&ReferenceOccurrence], tol: f64) -> usize {
    let adj: Vec<Vec<usize>> = hits
        .iter()
        .map(|h| (0..refs.len()).filter(|&j| compatible(h, refs[j], tol)).collect())
        .collect();
    let mut ref_owner: Vec<Option<usize>> = vec![None; refs.len()];

    fn augment(
        i: usize,
        adj: &[Vec<usize>],
        ref_owner: &mut [Option<usize>],
        visited: &mut [bool],
    ) -> bool {
        for &j in &adj[i] {
            if visited[j] {
                continue;
            }
            visited[j] = true;
            if ref_owner[j].is_none()
                || augment(ref_owner[j].unwrap(), adj, ref_owner, visited)
            {
                ref_owner[j] = Some(i);
                return true;
            }
        }
        false
    }

    let mut matched = 0;
    for i in 0..hits.len() {
        let mut visited = vec![false; refs.len()];
        if augment(i, &adj, &mut ref_owner, &mut visited) {
            matched += 1;
        }
    }
    matched
}

/// Direct evaluation of the TWV formula over an exhaustive matching.
pub fn oracle_twv(
    hits: &[Hit],
    refs: &[ReferenceOccurrence],
    xi: f64,
    cfg: &ScoringConfig,
) -> Result<TwvReport, ScoreError> {
    if cfg.trial_duration_s <= 0.0 || cfg.trial_duration_s.is_nan() {
        return Err(ScoreError::Config("trial_duration_s must be positive".into()));
    }
    let decided: Vec<&Hit> = hits.iter().filter(|h| h.score >= xi).collect();

    let mut keywords: Vec<&str> = refs.iter().map(|r| r.keyword_id.as_str()).collect();
    keywords.sort_unstable();
    keywords.dedup();

    let mut per_query = Vec::with_capacity(keywords.len());
    let mut sum = 0.0;
    for kw in &keywords {
        let kw_refs: Vec<&ReferenceOccurrence> =
            refs.iter().filter(|r| r.keyword_id == *kw).collect();
        let kw_hits: Vec<&Hit> = decided.iter().filter(|h| h.keyword_id == *kw).copied().collect();
        let n_true = kw_refs.len();
        if cfg.trial_duration_s <= n_true as f64 {
            return Err(ScoreError::Config(format!(
                "trial duration too small for keyword '{kw}'"
            )));
        }

        // Matching decomposes over utterances.
        let mut utts: Vec<&str> = kw_refs.iter().map(|r| r.utterance_id.as_str()).collect();
        utts.extend(kw_hits.iter().map(|h| h.utterance_id.as_str()));
        utts.sort_unstable();
        utts.dedup();
        let mut n_correct = 0;
        for utt in utts {
            let u_refs: Vec<&ReferenceOccurrence> =
                kw_refs.iter().filter(|r| r.utterance_id == utt).copied().collect();
            let u_hits: Vec<&Hit> =
                kw_hits.iter().filter(|h| h.utterance_id == utt).copied().collect();
            n_correct += max_matching(&u_hits, &u_refs, cfg.match_tolerance_s);
        }
        let n_fa = kw_hits.len() - n_correct;
        let p_miss = 1.0 - n_correct as f64 / n_true as f64;
        let p_fa = n_fa as f64 / (cfg.trial_duration_s - n_true as f64);
        let q_twv = 1.0 - (p_miss + cfg.beta * p_fa);
        sum += q_twv;
        per_query.push(QueryScore {
            keyword_id: kw.to_string(),
            n_true,
            n_correct,
            n_fa,
            p_miss,
            p_fa,
            twv: q_twv,
        });
    }
    let atwv = if per_query.is_empty() { 0.0 } else { sum / per_query.len() as f64 };
    Ok(TwvReport { threshold: xi, per_query, atwv })
}

fn thresholds(hits: &[Hit]) -> Vec<f64> {
    let mut cands: Vec<f64> = hits.iter().map(|h| h.score).collect();
    cands.push(0.0);
    cands.push(1.0);
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup();
    cands
}

pub fn oracle_mtwv(
    hits: &[Hit],
    refs: &[ReferenceOccurrence],
    cfg: &ScoringConfig,
) -> Result<(f64, f64), ScoreError> {
    let mut best = f64::NEG_INFINITY;
    let mut best_xi = 1.0;
    for xi in thresholds(hits) {
        let r = oracle_twv(hits, refs, xi, cfg)?;
        if r.atwv >= best {
            best = r.atwv;
            best_xi = xi;
        }
    }
    Ok((best, best_xi))
}

pub fn oracle_otwv(
    hits: &[Hit],
    refs: &[ReferenceOccurrence],
    cfg: &ScoringConfig,
) -> Result<f64, ScoreError> {
    let mut keywords: Vec<&str> = refs.iter().map(|r| r.keyword_id.as_str()).collect();
    keywords.sort_unstable();
    keywords.dedup();
    if keywords.is_empty() {
        return Ok(0.0);
    }
    let mut by_kw: HashMap<&str, (Vec<Hit>, Vec<ReferenceOccurrence>)> = HashMap::new();
    for kw in &keywords {
        by_kw.insert(kw, (Vec::new(), Vec::new()));
    }
    for h in hits {
        if let Some((hs, _)) = by_kw.get_mut(h.keyword_id.as_str()) {
            hs.push(h.clone());
        }
    }
    for r in refs {
        by_kw.get_mut(r.keyword_id.as_str()).unwrap().1.push(r.clone());
    }
    let mut sum = 0.0;
    for kw in &keywords {
        let (kw_hits, kw_refs) = &by_kw[kw];
        let mut best = f64::NEG_INFINITY;
        for xi in thresholds(kw_hits) {
            best = best.max(oracle_twv(kw_hits, kw_refs, xi, cfg)?.atwv);
        }
        sum += best;
    }
    Ok(sum / keywords.len() as f64)
}

pub fn oracle_stwv(
    hits: &[Hit],
    refs: &[ReferenceOccurrence],
    cfg: &ScoringConfig,
) -> Result<f64, ScoreError> {
    oracle_otwv(hits, refs, &ScoringConfig { beta: 0.0, ..*cfg })
}
