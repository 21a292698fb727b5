//! Hit/reference matching and the term-weighted-value metric family:
//! TWV at a threshold, MTWV (best global threshold), OTWV (per-query
//! thresholds), STWV (recall with zero false-alarm cost), keyword-specific
//! threshold normalization, and hitlist fusion.
//!
//! Internally every term weighted value lives in [-beta, 1]; the conventional
//! x100 scaling is applied only in the report layer.

pub mod oracle;
pub mod report;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Corpus, Keyword};
use crate::index::Hit;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("invalid scoring config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
}

/// A true keyword occurrence, in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceOccurrence {
    pub keyword_id: String,
    pub utterance_id: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScoringConfig {
    /// False-alarm weight in the TWV (999.9 in the NIST STD evaluations).
    pub beta: f64,
    /// Total archive duration in seconds; one trial per second.
    pub trial_duration_s: f64,
    /// Slack added on each side of a reference when matching hits.
    pub match_tolerance_s: f64,
}

impl ScoringConfig {
    pub fn new(trial_duration_s: f64) -> Self {
        ScoringConfig { beta: 999.9, trial_duration_s, match_tolerance_s: 0.5 }
    }

    fn validate(&self, refs: &[ReferenceOccurrence]) -> Result<(), ScoreError> {
        if self.beta < 0.0 {
            return Err(ScoreError::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.trial_duration_s <= 0.0 || self.trial_duration_s.is_nan() {
            return Err(ScoreError::Config("trial_duration_s must be positive".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in refs {
            *counts.entry(r.keyword_id.as_str()).or_default() += 1;
        }
        if let Some((kw, &n)) = counts.iter().max_by_key(|(_, &n)| n) {
            if self.trial_duration_s <= n as f64 {
                return Err(ScoreError::Config(format!(
                    "trial duration {} s does not exceed the {n} occurrences of '{kw}'",
                    self.trial_duration_s
                )));
            }
        }
        Ok(())
    }
}

/// Per-query tally at one decision threshold.
#[derive(Clone, Debug, Serialize)]
pub struct QueryScore {
    pub keyword_id: String,
    pub n_true: usize,
    pub n_correct: usize,
    pub n_fa: usize,
    pub p_miss: f64,
    pub p_fa: f64,
    pub twv: f64,
}

/// TWV report at a fixed global threshold. Queries with no reference
/// occurrences are excluded from the average entirely.
#[derive(Clone, Debug, Serialize)]
pub struct TwvReport {
    pub threshold: f64,
    pub per_query: Vec<QueryScore>,
    pub atwv: f64,
}

/// Greedy score-ordered assignment of hits to references. A hit may claim one
/// unmatched reference with the same keyword and utterance whose interval,
/// extended by the match tolerance on both sides, contains the hit midpoint;
/// ties prefer the nearer reference midpoint, then the earlier start.
///
/// Returns, per hit (input order), the index of the matched reference.
pub fn match_hits(
    hits: &[Hit],
    refs: &[ReferenceOccurrence],
    cfg: &ScoringConfig,
) -> Vec<Option<usize>> {
    let mut groups: HashMap<(&str, &str), Vec<usize>> = HashMap::new();
    for (j, r) in refs.iter().enumerate() {
        groups.entry((r.keyword_id.as_str(), r.utterance_id.as_str())).or_default().push(j);
    }
    let mut order: Vec<usize> = (0..hits.len()).collect();
    order.sort_by(|&a, &b| {
        let (ha, hb) = (&hits[a], &hits[b]);
        hb.score
            .partial_cmp(&ha.score)
            .unwrap()
            .then_with(|| ha.utterance_id.cmp(&hb.utterance_id))
            .then_with(|| ha.start_s.partial_cmp(&hb.start_s).unwrap())
            .then_with(|| ha.keyword_id.cmp(&hb.keyword_id))
    });

    let tol = cfg.match_tolerance_s;
    let mut taken = vec![false; refs.len()];
    let mut assignment = vec![None; hits.len()];
    for &i in &order {
        let h = &hits[i];
        let mid = (h.start_s + h.end_s) / 2.0;
        let Some(candidates) = groups.get(&(h.keyword_id.as_str(), h.utterance_id.as_str())) else {
            continue;
        };
        let mut best: Option<(f64, f64, usize)> = None;
        for &j in candidates {
            if taken[j] {
                continue;
            }
            let r = &refs[j];
            if mid < r.start_s - tol || mid > r.end_s + tol {
                continue;
            }
            let dist = (mid - (r.start_s + r.end_s) / 2.0).abs();
            let key = (dist, r.start_s, j);
            if best.is_none_or(|(d, s, _)| (key.0, key.1) < (d, s)) {
                best = Some(key);
            }
        }
        if let Some((_, _, j)) = best {
            taken[j] = true;
            assignment[i] = Some(j);
        }
    }
    assignment
}

/// TWV at a fixed global threshold: decisions are the hits scoring at least
/// xi; P_miss(q) = 1 - N_correct/N_true, P_FA(q) = N_FA / (T - N_true), and
/// TWV = 1 - mean_q (P_miss + beta * P_FA) over queries with N_true > 0.
pub fn twv(
    hits: &[Hit],
    refs: &[ReferenceOccurrence],
    xi: f64,
    cfg: &ScoringConfig,
) -> Result<TwvReport, ScoreError> {
    cfg.validate(refs)?;
    let decided: Vec<Hit> = hits.iter().filter(|h| h.score >= xi).cloned().collect();
    let assignment = match_hits(&decided, refs, cfg);

    let mut keywords: Vec<&str> = refs.iter().map(|r| r.keyword_id.as_str()).collect();
    keywords.sort_unstable();
    keywords.dedup();

    let mut correct: HashMap<&str, usize> = HashMap::new();
    let mut fa: HashMap<&str, usize> = HashMap::new();
    for (i, m) in assignment.iter().enumerate() {
        let kw = decided[i].keyword_id.as_str();
        match m {
            Some(_) => *correct.entry(kw).or_default() += 1,
            None => *fa.entry(kw).or_default() += 1,
        }
    }

    let mut per_query = Vec::with_capacity(keywords.len());
    let mut sum = 0.0;
    for kw in &keywords {
        let n_true = refs.iter().filter(|r| r.keyword_id == *kw).count();
        let n_correct = correct.get(kw).copied().unwrap_or(0);
        let n_fa = fa.get(kw).copied().unwrap_or(0);
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

/// Incremental sweep machinery: hits are folded in descending score order,
/// and because the greedy matching of a score-ordered prefix never revisits
/// earlier decisions, the state after folding every hit with score >= xi is
/// exactly the matching that `twv(.., xi, ..)` computes.
struct SweepState<'a> {
    cfg: &'a ScoringConfig,
    /// (keyword, utterance) -> indices into `refs`.
    groups: HashMap<(&'a str, &'a str), Vec<usize>>,
    taken: Vec<bool>,
    refs: &'a [ReferenceOccurrence],
    /// keyword -> (n_true, n_correct, n_fa).
    stats: BTreeMap<&'a str, (usize, usize, usize)>,
}

use std::collections::BTreeMap;

impl<'a> SweepState<'a> {
    fn new(refs: &'a [ReferenceOccurrence], cfg: &'a ScoringConfig) -> Self {
        let mut groups: HashMap<(&str, &str), Vec<usize>> = HashMap::new();
        let mut stats: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
        for (j, r) in refs.iter().enumerate() {
            groups.entry((r.keyword_id.as_str(), r.utterance_id.as_str())).or_default().push(j);
            stats.entry(r.keyword_id.as_str()).or_default().0 += 1;
        }
        SweepState { cfg, groups, taken: vec![false; refs.len()], refs, stats }
    }

    /// Fold one hit (must be called in descending score order).
    fn add_hit(&mut self, h: &Hit) {
        let kw = h.keyword_id.as_str();
        if !self.stats.contains_key(kw) {
            return; // no references for this keyword: excluded from averages
        }
        let mid = (h.start_s + h.end_s) / 2.0;
        let tol = self.cfg.match_tolerance_s;
        let mut best: Option<(f64, f64, usize)> = None;
        if let Some(candidates) = self.groups.get(&(kw, h.utterance_id.as_str())) {
            for &j in candidates {
                if self.taken[j] {
                    continue;
                }
                let r = &self.refs[j];
                if mid < r.start_s - tol || mid > r.end_s + tol {
                    continue;
                }
                let dist = (mid - (r.start_s + r.end_s) / 2.0).abs();
                if best.is_none_or(|(d, s, _)| (dist, r.start_s) < (d, s)) {
                    best = Some((dist, r.start_s, j));
                }
            }
        }
        match best {
            Some((_, _, j)) => {
                self.taken[j] = true;
                self.stats.get_mut(kw).unwrap().1 += 1;
            }
            None => self.stats.get_mut(kw).unwrap().2 += 1,
        }
    }

    /// TWV at the current prefix, evaluated with exactly the arithmetic of
    /// `twv` (fresh per-query terms, keyword-sorted summation) so the sweep
    /// agrees bit for bit with pointwise evaluation.
    fn twv_now(&self) -> f64 {
        if self.stats.is_empty() {
            return 0.0;
        }
        let mut sum = 0.0;
        for (&_kw, &(n_true, n_correct, n_fa)) in &self.stats {
            let p_miss = 1.0 - n_correct as f64 / n_true as f64;
            let p_fa = n_fa as f64 / (self.cfg.trial_duration_s - n_true as f64);
            sum += 1.0 - (p_miss + self.cfg.beta * p_fa);
        }
        sum / self.stats.len() as f64
    }
}

fn descending_order(hits: &[Hit]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..hits.len()).collect();
    order.sort_by(|&a, &b| {
        let (ha, hb) = (&hits[a], &hits[b]);
        hb.score
            .partial_cmp(&ha.score)
            .unwrap()
            .then_with(|| ha.utterance_id.cmp(&hb.utterance_id))
            .then_with(|| ha.start_s.partial_cmp(&hb.start_s).unwrap())
            .then_with(|| ha.keyword_id.cmp(&hb.keyword_id))
    });
    order
}

/// Sweep every distinct hit score (plus 0 and 1) as the global threshold and
/// return the maximum TWV with its threshold; ties break toward the larger
/// threshold. TWV is piecewise constant between observed scores, so the
/// sweep is exact.
pub fn mtwv_sweep(
    hits: &[Hit],
    refs: &[ReferenceOccurrence],
    cfg: &ScoringConfig,
) -> Result<(f64, f64), ScoreError> {
    cfg.validate(refs)?;
    let order = descending_order(hits);
    let mut state = SweepState::new(refs, cfg);
    // xi = 1.0 first: only hits scoring exactly 1 are decided
    let mut best;
    let mut best_xi;
    {
        let mut i = 0;
        while i < order.len() && hits[order[i]].score >= 1.0 {
            state.add_hit(&hits[order[i]]);
            i += 1;
        }
        best = state.twv_now();
        best_xi = 1.0;
        // remaining distinct scores in descending order
        while i < order.len() {
            let s = hits[order[i]].score;
            while i < order.len() && hits[order[i]].score == s {
                state.add_hit(&hits[order[i]]);
                i += 1;
            }
            let v = state.twv_now();
            if v > best {
                best = v;
                best_xi = s;
            }
        }
    }
    // xi = 0 decides the same set as the smallest observed score
    let at_zero = state.twv_now();
    if at_zero > best {
        best = at_zero;
        best_xi = 0.0;
    }
    Ok((best, best_xi))
}

/// Upper-bound TWV with query-specific thresholds: per query, minimize
/// P_miss + beta * P_FA over that query's candidate thresholds.
pub fn otwv(
    hits: &[Hit],
    refs: &[ReferenceOccurrence],
    cfg: &ScoringConfig,
) -> Result<f64, ScoreError> {
    cfg.validate(refs)?;
    let mut keywords: Vec<&str> = refs.iter().map(|r| r.keyword_id.as_str()).collect();
    keywords.sort_unstable();
    keywords.dedup();
    if keywords.is_empty() {
        return Ok(0.0);
    }
    let mut by_kw: HashMap<&str, Vec<&Hit>> = HashMap::new();
    for h in hits {
        by_kw.entry(h.keyword_id.as_str()).or_default().push(h);
    }
    let mut sum = 0.0;
    for kw in &keywords {
        let kw_refs: Vec<ReferenceOccurrence> =
            refs.iter().filter(|r| r.keyword_id == *kw).cloned().collect();
        let kw_hits: Vec<Hit> =
            by_kw.get(kw).map(|v| v.iter().map(|h| (*h).clone()).collect()).unwrap_or_default();
        let (best, _) = mtwv_sweep(&kw_hits, &kw_refs, cfg)?;
        sum += best;
    }
    Ok(sum / keywords.len() as f64)
}

/// OTWV with the false-alarm cost removed: a pure recall measure.
pub fn stwv(
    hits: &[Hit],
    refs: &[ReferenceOccurrence],
    cfg: &ScoringConfig,
) -> Result<f64, ScoreError> {
    let cfg = ScoringConfig { beta: 0.0, ..*cfg };
    otwv(hits, refs, &cfg)
}

/// Keyword-specific threshold normalization. Per keyword, the expected true
/// count is estimated reference-free as the sum of its hit scores; the
/// keyword threshold
///
///   thr(q) = beta * Nt(q) / (T + (beta - 1) * Nt(q))
///
/// is the score at which the expected TWV gain of a YES decision is zero, and
/// scores are remapped by s -> s^(ln 0.5 / ln thr(q)) so that s = thr(q)
/// lands exactly on 0.5. Ranking within a keyword is preserved.
pub fn kst_normalize(hits: &[Hit], cfg: &ScoringConfig) -> Vec<Hit> {
    let mut sums: HashMap<&str, f64> = HashMap::new();
    for h in hits {
        *sums.entry(h.keyword_id.as_str()).or_default() += h.score;
    }
    let thresholds: HashMap<&str, f64> = sums
        .into_iter()
        .map(|(kw, n_true)| {
            let thr = cfg.beta * n_true / (cfg.trial_duration_s + (cfg.beta - 1.0) * n_true);
            (kw, thr.clamp(1e-6, 1.0 - 1e-6))
        })
        .collect();
    hits.iter()
        .map(|h| {
            let thr = thresholds[h.keyword_id.as_str()];
            let exponent = 0.5f64.ln() / thr.ln();
            let score = h.score.powf(exponent);
            Hit { score, decision: score >= 0.5, ..h.clone() }
        })
        .collect()
}

/// Keyword threshold used by [`kst_normalize`], exposed for tests.
pub fn kst_threshold(estimated_true: f64, cfg: &ScoringConfig) -> f64 {
    (cfg.beta * estimated_true / (cfg.trial_duration_s + (cfg.beta - 1.0) * estimated_true))
        .clamp(1e-6, 1.0 - 1e-6)
}

const FUSE_MIN_SCORE: f64 = 1e-6;

/// Weighted-sum fusion of two KST-normalized hitlists. Hits sharing keyword
/// and utterance with midpoints within the match tolerance merge (span from
/// the higher-weighted system, score w*sA + (1-w)*sB); unmatched hits keep
/// their down-weighted score. Scores that underflow the hitlist format are
/// dropped, which is what makes w = 1 exactly system A.
pub fn fuse_hitlists(a: &[Hit], b: &[Hit], w: f64, cfg: &ScoringConfig) -> Vec<Hit> {
    let mut groups: HashMap<(&str, &str), Vec<usize>> = HashMap::new();
    for (j, h) in b.iter().enumerate() {
        groups.entry((h.keyword_id.as_str(), h.utterance_id.as_str())).or_default().push(j);
    }
    let mut b_used = vec![false; b.len()];
    let mut fused = Vec::new();
    for ha in a {
        let mid_a = (ha.start_s + ha.end_s) / 2.0;
        let mut best: Option<(f64, usize)> = None;
        if let Some(cands) = groups.get(&(ha.keyword_id.as_str(), ha.utterance_id.as_str())) {
            for &j in cands {
                if b_used[j] {
                    continue;
                }
                let hb = &b[j];
                let dist = (mid_a - (hb.start_s + hb.end_s) / 2.0).abs();
                if dist <= cfg.match_tolerance_s && best.is_none_or(|(d, _)| dist < d) {
                    best = Some((dist, j));
                }
            }
        }
        match best {
            Some((_, j)) => {
                b_used[j] = true;
                let hb = &b[j];
                let score = w * ha.score + (1.0 - w) * hb.score;
                let span = if w >= 0.5 { ha } else { hb };
                fused.push(Hit {
                    keyword_id: ha.keyword_id.clone(),
                    utterance_id: ha.utterance_id.clone(),
                    start_s: span.start_s,
                    end_s: span.end_s,
                    score,
                    decision: score >= 0.5,
                });
            }
            None => {
                let score = w * ha.score;
                fused.push(Hit { score, decision: score >= 0.5, ..ha.clone() });
            }
        }
    }
    for (j, hb) in b.iter().enumerate() {
        if !b_used[j] {
            let score = (1.0 - w) * hb.score;
            fused.push(Hit { score, decision: score >= 0.5, ..hb.clone() });
        }
    }
    fused.retain(|h| h.score >= FUSE_MIN_SCORE);
    for h in &mut fused {
        h.score = h.score.min(1.0);
    }
    fused.sort_by(|x, y| {
        (&x.keyword_id, &x.utterance_id)
            .cmp(&(&y.keyword_id, &y.utterance_id))
            .then_with(|| x.start_s.partial_cmp(&y.start_s).unwrap())
    });
    fused
}

/// Pick the fusion weight on a dev grid {0.0, 0.1, ..., 1.0} by maximizing
/// dev MTWV of the fused list.
pub fn tune_fusion_weight(
    a: &[Hit],
    b: &[Hit],
    refs: &[ReferenceOccurrence],
    cfg: &ScoringConfig,
) -> Result<(f64, Vec<Hit>), ScoreError> {
    let mut best: Option<(f64, f64, Vec<Hit>)> = None;
    for step in 0..=10 {
        let w = step as f64 / 10.0;
        let fused = fuse_hitlists(a, b, w, cfg);
        let (mtwv, _) = mtwv_sweep(&fused, refs, cfg)?;
        if best.as_ref().is_none_or(|(m, _, _)| mtwv > *m) {
            best = Some((mtwv, w, fused));
        }
    }
    let (_, w, fused) = best.expect("grid is nonempty");
    Ok((w, fused))
}

/// Exact reference occurrences of each keyword in a corpus, from the word
/// alignments. Multi-word keywords match consecutive word sequences.
pub fn extract_references(corpus: &Corpus, keywords: &[Keyword]) -> Vec<ReferenceOccurrence> {
    let mut refs = Vec::new();
    for kw in keywords {
        let words: Vec<&str> = kw.surface.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        for utt in &corpus.utterances {
            if words.len() > utt.words.len() {
                continue;
            }
            for start in 0..=(utt.words.len() - words.len()) {
                if utt.words[start..start + words.len()].iter().map(String::as_str).ne(words.iter().copied())
                {
                    continue;
                }
                let s = utt.alignment[start].start_frame as f64 * utt.frame_period;
                let e = (utt.alignment[start + words.len() - 1].end_frame + 1) as f64
                    * utt.frame_period;
                refs.push(ReferenceOccurrence {
                    keyword_id: kw.id.clone(),
                    utterance_id: utt.id.clone(),
                    start_s: s,
                    end_s: e,
                });
            }
        }
    }
    refs
}

/// References TSV: header, then `keywordId utteranceId start end` per line.
pub fn write_references(refs: &[ReferenceOccurrence], path: &Path) -> Result<(), ScoreError> {
    let mut text = String::from("keyword_id\tutterance_id\tstart\tend\n");
    for r in refs {
        text.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\n",
            r.keyword_id, r.utterance_id, r.start_s, r.end_s
        ));
    }
    fs::write(path, text).map_err(|source| ScoreError::Io { path: path.to_path_buf(), source })
}

pub fn read_references(path: &Path) -> Result<Vec<ReferenceOccurrence>, ScoreError> {
    let text =
        fs::read_to_string(path).map_err(|source| ScoreError::Io { path: path.to_path_buf(), source })?;
    let mut refs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 && line.starts_with("keyword_id\t") {
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| ScoreError::Parse { path: path.to_path_buf(), line: ln + 1, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number '{s}'")));
        refs.push(ReferenceOccurrence {
            keyword_id: fields[0].to_string(),
            utterance_id: fields[1].to_string(),
            start_s: num(fields[2])?,
            end_s: num(fields[3])?,
        });
    }
    Ok(refs)
}
