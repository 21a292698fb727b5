//! Report rendering. This is the only layer that multiplies term weighted
//! values by 100; everything underneath stays in [-beta, 1].

use std::collections::{BTreeMap, HashMap, HashSet};

use serde_json::json;

use super::{mtwv_sweep, otwv, stwv, twv, QueryScore, ReferenceOccurrence, ScoreError, ScoringConfig};
use crate::index::Hit;

#[derive(Clone, Debug)]
pub struct FullReport {
    pub beta: f64,
    pub trial_duration_s: f64,
    pub mtwv: f64,
    pub mtwv_threshold: f64,
    pub otwv: f64,
    pub stwv: f64,
    /// ATWV at a caller-supplied threshold (typically tuned on a dev set).
    pub atwv: Option<(f64, f64)>,
    /// Per-query tallies at the MTWV threshold (or the ATWV threshold when
    /// one was supplied).
    pub per_query: Vec<QueryScore>,
}

pub fn full_report(
    hits: &[Hit],
    refs: &[ReferenceOccurrence],
    cfg: &ScoringConfig,
    xi: Option<f64>,
) -> Result<FullReport, ScoreError> {
    let (mtwv, mtwv_threshold) = mtwv_sweep(hits, refs, cfg)?;
    let otwv = otwv(hits, refs, cfg)?;
    let stwv = stwv(hits, refs, cfg)?;
    let (atwv, detail_xi) = match xi {
        Some(x) => (Some((x, twv(hits, refs, x, cfg)?.atwv)), x),
        None => (None, mtwv_threshold),
    };
    let per_query = twv(hits, refs, detail_xi, cfg)?.per_query;
    Ok(FullReport {
        beta: cfg.beta,
        trial_duration_s: cfg.trial_duration_s,
        mtwv,
        mtwv_threshold,
        otwv,
        stwv,
        atwv,
        per_query,
    })
}

fn x100(v: f64) -> f64 {
    (v * 10000.0).round() / 100.0
}

pub fn to_json(report: &FullReport) -> serde_json::Value {
    let mut value = json!({
        "beta": report.beta,
        "trial_duration_s": report.trial_duration_s,
        "num_queries": report.per_query.len(),
        "mtwv": x100(report.mtwv),
        "mtwv_threshold": report.mtwv_threshold,
        "otwv": x100(report.otwv),
        "stwv": x100(report.stwv),
        "per_query": report.per_query.iter().map(|q| json!({
            "keyword_id": q.keyword_id,
            "n_true": q.n_true,
            "n_correct": q.n_correct,
            "n_fa": q.n_fa,
            "p_miss": q.p_miss,
            "p_fa": q.p_fa,
            "twv": x100(q.twv),
        })).collect::<Vec<_>>(),
    });
    if let Some((xi, atwv)) = report.atwv {
        value["atwv"] = json!(x100(atwv));
        value["atwv_threshold"] = json!(xi);
    }
    value
}

pub fn to_table(report: &FullReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "queries: {}   trial duration: {:.1} s   beta: {}\n",
        report.per_query.len(),
        report.trial_duration_s,
        report.beta
    ));
    if let Some((xi, atwv)) = report.atwv {
        out.push_str(&format!("ATWV  {:8.2}   (threshold {:.6})\n", x100(atwv), xi));
    }
    out.push_str(&format!(
        "MTWV  {:8.2}   (threshold {:.6})\n",
        x100(report.mtwv),
        report.mtwv_threshold
    ));
    out.push_str(&format!("OTWV  {:8.2}\n", x100(report.otwv)));
    out.push_str(&format!("STWV  {:8.2}\n", x100(report.stwv)));
    out.push_str("\nkeyword            n_true  n_corr  n_fa    p_miss  p_fa        twv\n");
    for q in &report.per_query {
        out.push_str(&format!(
            "{:<18} {:>6}  {:>6}  {:>4}  {:>8.4}  {:>9.6}  {:>8.2}\n",
            q.keyword_id,
            q.n_true,
            q.n_correct,
            q.n_fa,
            q.p_miss,
            q.p_fa,
            x100(q.twv)
        ));
    }
    out
}

fn subset_metrics(
    keyword_ids: &HashSet<&str>,
    hits: &[Hit],
    refs: &[ReferenceOccurrence],
    cfg: &ScoringConfig,
) -> Result<(f64, f64, f64), ScoreError> {
    let h: Vec<Hit> =
        hits.iter().filter(|h| keyword_ids.contains(h.keyword_id.as_str())).cloned().collect();
    let r: Vec<ReferenceOccurrence> =
        refs.iter().filter(|r| keyword_ids.contains(r.keyword_id.as_str())).cloned().collect();
    Ok((mtwv_sweep(&h, &r, cfg)?.0, otwv(&h, &r, cfg)?, stwv(&h, &r, cfg)?))
}

/// Per-query-length metric table (TSV), for plotting. Lengths count the
/// graphemes of the keyword surface, spaces excluded.
pub fn length_breakdown_tsv(
    hits: &[Hit],
    refs: &[ReferenceOccurrence],
    cfg: &ScoringConfig,
    surfaces: &HashMap<String, String>,
) -> Result<String, ScoreError> {
    let mut by_len: BTreeMap<usize, HashSet<&str>> = BTreeMap::new();
    let scored: HashSet<&str> = refs.iter().map(|r| r.keyword_id.as_str()).collect();
    for (id, surface) in surfaces {
        if scored.contains(id.as_str()) {
            let len = surface.chars().filter(|c| !c.is_whitespace()).count();
            by_len.entry(len).or_default().insert(id.as_str());
        }
    }
    let mut out = String::from("length\tnum_queries\tmtwv\totwv\tstwv\n");
    for (len, ids) in by_len {
        let (m, o, s) = subset_metrics(&ids, hits, refs, cfg)?;
        out.push_str(&format!(
            "{len}\t{}\t{:.2}\t{:.2}\t{:.2}\n",
            ids.len(),
            x100(m),
            x100(o),
            x100(s)
        ));
    }
    Ok(out)
}

/// IV/OOV metric table (TSV); `oov_ids` lists the keyword ids to report as
/// the out-of-vocabulary class.
pub fn class_breakdown_tsv(
    hits: &[Hit],
    refs: &[ReferenceOccurrence],
    cfg: &ScoringConfig,
    oov_ids: &HashSet<String>,
) -> Result<String, ScoreError> {
    let scored: HashSet<&str> = refs.iter().map(|r| r.keyword_id.as_str()).collect();
    let oov: HashSet<&str> =
        scored.iter().copied().filter(|id| oov_ids.contains(*id)).collect();
    let iv: HashSet<&str> = scored.difference(&oov).copied().collect();
    let mut out = String::from("class\tnum_queries\tmtwv\totwv\tstwv\n");
    for (name, ids) in [("IV", iv), ("OOV", oov)] {
        if ids.is_empty() {
            out.push_str(&format!("{name}\t0\t-\t-\t-\n"));
            continue;
        }
        let (m, o, s) = subset_metrics(&ids, hits, refs, cfg)?;
        out.push_str(&format!(
            "{name}\t{}\t{:.2}\t{:.2}\t{:.2}\n",
            ids.len(),
            x100(m),
            x100(o),
            x100(s)
        ));
    }
    Ok(out)
}
