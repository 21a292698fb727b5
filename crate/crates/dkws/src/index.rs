//! The dense archive index: per-utterance document encodings computed once
//! and stored, searched by a matrix-vector product per utterance, and
//! post-processed into timed hits by thresholding and island detection.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Corpus;
use crate::model::{score, DocumentEncoding, Model, ModelError, PosteriorTrack, Query};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"DKWSIDX1";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad index file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("index was built by model {index:#018x}, search model is {model:#018x}")]
    FingerprintMismatch { index: u64, model: u64 },
    #[error("duplicate utterance id '{0}' in corpus")]
    DuplicateUtterance(String),
    #[error("inconsistent encoding dimension: {0}")]
    Dimension(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid search config: {0}")]
    Config(String),
}

/// How an island's probabilities collapse into one hit score. Median is the
/// contract default; mean and max exist for the ablation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IslandScore {
    #[default]
    Median,
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Posteriors below alpha are zeroed before island detection.
    pub alpha: f64,
    pub island_score: IslandScore,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { alpha: 0.4, island_score: IslandScore::Median }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(IndexError::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// One keyword detection: timespan in seconds plus a confidence score.
#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    pub keyword_id: String,
    pub utterance_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub score: f64,
    pub decision: bool,
}

pub type HitList = Vec<Hit>;

/// Precomputed document encodings for a whole archive.
pub struct ArchiveIndex {
    pub model_fingerprint: u64,
    pub frame_period: f64,
    pub downsample_factor: usize,
    pub entries: Vec<DocumentEncoding>,
}

impl ArchiveIndex {
    pub fn total_output_frames(&self) -> usize {
        self.entries.iter().map(|e| e.output_frames()).sum()
    }

    /// Seconds of indexed audio, the trial denominator for TWV scoring.
    pub fn total_seconds(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.input_frames as f64 * self.frame_period)
            .sum()
    }
}

/// Encode every utterance with the model in eval mode. Utterances shorter
/// than the encoder minimum are indexed as empty (searchable, no hits) rather
/// than rejected; archives legitimately contain fragments.
pub fn build_index(model: &Model<f32>, corpus: &Corpus) -> Result<ArchiveIndex, IndexError> {
    let mut seen = std::collections::HashSet::new();
    for u in &corpus.utterances {
        if !seen.insert(&u.id) {
            return Err(IndexError::DuplicateUtterance(u.id.clone()));
        }
    }
    let factor = model.config.downsample_factor();
    let entries: Vec<DocumentEncoding> = corpus
        .utterances
        .par_iter()
        .map(|utt| match model.encode_utterance(utt) {
            Ok(enc) => Ok(enc),
            Err(ModelError::TooShort { .. }) => Ok(DocumentEncoding {
                utterance_id: utt.id.clone(),
                matrix: Tensor::zeros(vec![0, model.config.projection_dim]),
                input_frames: utt.num_frames(),
                frame_period: utt.frame_period,
                downsample_factor: factor,
            }),
            Err(e) => Err(IndexError::Model(e)),
        })
        .collect::<Result<_, _>>()?;
    let frame_period = corpus.utterances.first().map(|u| u.frame_period).unwrap_or(0.01);
    Ok(ArchiveIndex {
        model_fingerprint: model.fingerprint(),
        frame_period,
        downsample_factor: factor,
        entries,
    })
}

pub fn save_index(index: &ArchiveIndex, path: &Path) -> Result<(), IndexError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&index.model_fingerprint.to_le_bytes());
    buf.extend_from_slice(&index.frame_period.to_le_bytes());
    buf.extend_from_slice(&(index.downsample_factor as u32).to_le_bytes());
    buf.extend_from_slice(&(index.entries.len() as u32).to_le_bytes());
    for e in &index.entries {
        let id = e.utterance_id.as_bytes();
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&(e.input_frames as u32).to_le_bytes());
        buf.extend_from_slice(&(e.matrix.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(e.matrix.cols() as u32).to_le_bytes());
        for v in e.matrix.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|source| IndexError::Io { path: path.to_path_buf(), source })
}

pub fn load_index(path: &Path) -> Result<ArchiveIndex, IndexError> {
    let bytes = fs::read(path).map_err(|source| IndexError::Io { path: path.to_path_buf(), source })?;
    let fail = |msg: String| IndexError::Format { path: path.to_path_buf(), msg };
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8], IndexError> {
        if bytes.len() < *off + n {
            return Err(IndexError::Format {
                path: path.to_path_buf(),
                msg: "truncated file".into(),
            });
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 8)? != MAGIC {
        return Err(fail("missing DKWSIDX1 magic".into()));
    }
    let model_fingerprint = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
    let frame_period = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
    let downsample_factor = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    let mut dim: Option<usize> = None;
    for _ in 0..count {
        let id_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let id = String::from_utf8(take(&mut off, id_len)?.to_vec())
            .map_err(|_| fail("utterance id is not utf-8".into()))?;
        let input_frames = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let rows = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        match dim {
            None => dim = Some(cols),
            Some(d) if d != cols => {
                return Err(IndexError::Dimension(format!("{id}: D={cols}, expected {d}")))
            }
            _ => {}
        }
        let data: Vec<f32> = take(&mut off, rows * cols * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(DocumentEncoding {
            utterance_id: id,
            matrix: Tensor::new(vec![rows, cols], data).map_err(|e| fail(e.to_string()))?,
            input_frames,
            frame_period,
            downsample_factor,
        });
    }
    if off != bytes.len() {
        return Err(fail("trailing bytes".into()));
    }
    Ok(ArchiveIndex { model_fingerprint, frame_period, downsample_factor, entries })
}

/// Threshold the posterior track at alpha and turn the surviving islands of
/// consecutive nonzero frames into hits. The island score is the median
/// probability (mean of the middle two for even runs); hit times map output
/// frames back through the down-sampling factor.
pub fn detect_islands(
    track: &PosteriorTrack,
    keyword_id: &str,
    utterance_id: &str,
    cfg: &SearchConfig,
) -> Vec<Hit> {
    let alpha = cfg.alpha as f32;
    let step = track.frame_period * track.downsample_factor as f64;
    let mut hits = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=track.values.len() {
        let above = i < track.values.len() && track.values[i] >= alpha;
        match (run_start, above) {
            (None, true) => run_start = Some(i),
            (Some(s), false) => {
                let island = &track.values[s..i];
                let score = island_score(island, cfg.island_score);
                hits.push(Hit {
                    keyword_id: keyword_id.to_string(),
                    utterance_id: utterance_id.to_string(),
                    start_s: s as f64 * step,
                    end_s: i as f64 * step,
                    score,
                    decision: true,
                });
                run_start = None;
            }
            _ => {}
        }
    }
    hits
}

fn island_score(island: &[f32], kind: IslandScore) -> f64 {
    debug_assert!(!island.is_empty());
    match kind {
        IslandScore::Median => {
            let mut v: Vec<f32> = island.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2] as f64
            } else {
                (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0
            }
        }
        IslandScore::Mean => island.iter().map(|&v| v as f64).sum::<f64>() / island.len() as f64,
        IslandScore::Max => island.iter().fold(f64::MIN, |m, &v| m.max(v as f64)),
    }
}

/// Search one query over the whole index: the query is encoded once, then
/// each utterance costs one matrix-vector product. Hits come back in
/// utterance order.
pub fn search(
    index: &ArchiveIndex,
    model: &Model<f32>,
    keyword_id: &str,
    query: &Query,
    cfg: &SearchConfig,
) -> Result<HitList, IndexError> {
    cfg.validate()?;
    let fp = model.fingerprint();
    if fp != index.model_fingerprint {
        return Err(IndexError::FingerprintMismatch { index: index.model_fingerprint, model: fp });
    }
    let e_q = model.encode_query(query)?;
    let hits: Vec<Vec<Hit>> = index
        .entries
        .par_iter()
        .map(|enc| -> Result<Vec<Hit>, IndexError> {
            if enc.output_frames() == 0 {
                return Ok(Vec::new());
            }
            let track = score(enc, e_q.data())?;
            Ok(detect_islands(&track, keyword_id, &enc.utterance_id, cfg))
        })
        .collect::<Result<_, _>>()?;
    Ok(hits.into_iter().flatten().collect())
}

/// Search a keyword list; hits are concatenated in keyword order. Queries
/// that cannot be encoded (unknown graphemes) are returned per keyword so the
/// caller can decide whether that is fatal.
pub fn search_all(
    index: &ArchiveIndex,
    model: &Model<f32>,
    keywords: &[(String, Query)],
    cfg: &SearchConfig,
) -> Result<(HitList, Vec<(String, ModelError)>), IndexError> {
    let mut hits = Vec::new();
    let mut failures = Vec::new();
    for (id, query) in keywords {
        match search(index, model, id, query, cfg) {
            Ok(mut h) => hits.append(&mut h),
            Err(IndexError::Model(e)) => failures.push((id.clone(), e)),
            Err(e) => return Err(e),
        }
    }
    Ok((hits, failures))
}

/// Hitlist TSV: header line, then one hit per line with times and scores
/// printed to 6 decimals.
pub fn write_hitlist(hits: &[Hit], path: &Path) -> Result<(), IndexError> {
    let mut text = String::from("keyword_id\tutterance_id\tstart\tend\tscore\tdecision\n");
    for h in hits {
        text.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
            h.keyword_id,
            h.utterance_id,
            h.start_s,
            h.end_s,
            h.score,
            if h.decision { "YES" } else { "NO" }
        ));
    }
    fs::write(path, text).map_err(|source| IndexError::Io { path: path.to_path_buf(), source })
}

pub fn read_hitlist(path: &Path) -> Result<HitList, IndexError> {
    let text =
        fs::read_to_string(path).map_err(|source| IndexError::Io { path: path.to_path_buf(), source })?;
    let mut hits = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 {
            if !line.starts_with("keyword_id\t") {
                return Err(IndexError::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    msg: "missing hitlist header".into(),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| IndexError::Parse { path: path.to_path_buf(), line: ln + 1, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64, IndexError> {
            s.parse::<f64>().map_err(|_| err(format!("bad {what} '{s}'")))
        };
        let score = num(fields[4], "score")?;
        if !(score > 0.0 && score <= 1.0) {
            return Err(err(format!("score {score} outside (0, 1]")));
        }
        let decision = match fields[5] {
            "YES" => true,
            "NO" => false,
            other => return Err(err(format!("bad decision '{other}'"))),
        };
        let start_s = num(fields[2], "start")?;
        let end_s = num(fields[3], "end")?;
        if !(start_s >= 0.0 && start_s < end_s) {
            return Err(err(format!("bad span {start_s}..{end_s}")));
        }
        hits.push(Hit {
            keyword_id: fields[0].to_string(),
            utterance_id: fields[1].to_string(),
            start_s,
            end_s,
            score,
            decision,
        });
    }
    Ok(hits)
}

#[cfg(test)]
#[path = "index_tests.rs"]
mod tests;
