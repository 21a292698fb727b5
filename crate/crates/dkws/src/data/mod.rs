//! Corpus ingestion, label construction from forced alignments, training
//! phrase extraction and sampling, speed perturbation, and the synthetic
//! corpus generator.
//!
//! On-disk layout of a corpus directory:
//!
//! ```text
//! corpus/
//!   features/<utteranceId>.feat   binary, see `features`
//!   transcripts.tsv               utteranceId<TAB>word word ...
//!   alignments.txt                utteranceId word startFrame endFrame
//! ```

pub mod features;
pub mod labels;
pub mod perturb;
pub mod phrases;
pub mod sampler;
pub mod synth;

pub use labels::{downsample_labels, frame_labels, LabelSequence};
pub use perturb::speed_perturb;
pub use phrases::{extract_phrases, Occurrence, Phrase, PhraseEntry, PhraseTable};
pub use sampler::{sample_batch, Batch, BatchItem, SamplerConfig, UttRef};
pub use synth::{generate_synthetic_corpus, GeneratedLanguage, SynthLanguage, SynthesisSpec};

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::numerics::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("bad file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("corpus ingestion failed:\n{}", problems.join("\n"))]
    Ingestion { problems: Vec<String> },
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// One aligned word: frame indices are inclusive on both ends.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignedWord {
    pub word: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

/// An utterance with features, transcript, and word-level alignment joined.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    /// N x F acoustic features.
    pub features: Tensor<f32>,
    /// Seconds per input frame.
    pub frame_period: f64,
    pub words: Vec<String>,
    pub alignment: Vec<AlignedWord>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.features.rows()
    }

    pub fn duration_s(&self) -> f64 {
        self.num_frames() as f64 * self.frame_period
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub language: String,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn empty(language: impl Into<String>) -> Self {
        Corpus { language: language.into(), utterances: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(|u| u.num_frames()).sum()
    }

    pub fn total_seconds(&self) -> f64 {
        self.utterances.iter().map(|u| u.duration_s()).sum()
    }

    /// Distinct grapheme inventory of the transcripts (word chars only).
    pub fn grapheme_inventory(&self) -> Vec<char> {
        let mut set: Vec<char> = self
            .utterances
            .iter()
            .flat_map(|u| u.words.iter())
            .flat_map(|w| w.chars())
            .collect();
        set.sort_unstable();
        set.dedup();
        set
    }
}

/// Join features, transcripts and alignments by utterance id, validating the
/// cross-references. All problems are reported together.
pub fn load_corpus(
    feature_dir: &Path,
    transcript_file: &Path,
    alignment_file: &Path,
    language: &str,
) -> Result<Corpus, DataError> {
    let transcripts = read_transcripts(transcript_file)?;
    let mut alignments = read_alignments(alignment_file)?;

    let mut problems = Vec::new();
    let mut utterances = Vec::with_capacity(transcripts.len());
    for (id, words) in transcripts {
        let feat_path = feature_dir.join(format!("{id}.feat"));
        if !feat_path.is_file() {
            problems.push(format!("{id}: missing feature file {}", feat_path.display()));
            continue;
        }
        let (features, frame_period) = features::read_feature_file(&feat_path)?;
        let n = features.rows();
        let alignment = match alignments.remove(&id) {
            Some(a) => a,
            None => {
                problems.push(format!("{id}: no alignment entries"));
                continue;
            }
        };
        let aligned_words: Vec<&str> = alignment.iter().map(|a| a.word.as_str()).collect();
        let transcript_words: Vec<&str> = words.iter().map(|w| w.as_str()).collect();
        if aligned_words != transcript_words {
            problems.push(format!("{id}: alignment words do not match the transcript"));
            continue;
        }
        let mut ok = true;
        for a in &alignment {
            if a.start_frame > a.end_frame || a.end_frame >= n {
                problems.push(format!(
                    "{id}: alignment {} {}..{} out of range for {} frames",
                    a.word, a.start_frame, a.end_frame, n
                ));
                ok = false;
            }
        }
        if !ok {
            continue;
        }
        utterances.push(Utterance { id, features, frame_period, words, alignment });
    }
    for id in alignments.keys() {
        problems.push(format!("{id}: alignment entries without a transcript"));
    }
    if !problems.is_empty() {
        problems.sort();
        return Err(DataError::Ingestion { problems });
    }

    if let Some(first) = utterances.first() {
        let fp = first.frame_period;
        if utterances.iter().any(|u| u.frame_period != fp) {
            return Err(DataError::Ingestion {
                problems: vec!["utterances disagree on frame period".into()],
            });
        }
    }
    Ok(Corpus { language: language.to_string(), utterances })
}

/// Load a corpus from the conventional directory layout.
pub fn load_corpus_dir(dir: &Path, language: &str) -> Result<Corpus, DataError> {
    load_corpus(
        &dir.join("features"),
        &dir.join("transcripts.tsv"),
        &dir.join("alignments.txt"),
        language,
    )
}

/// Write a corpus in the conventional directory layout.
pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<(), DataError> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(io_err(&feat_dir))?;
    let mut transcripts = String::new();
    let mut alignments = String::new();
    for u in &corpus.utterances {
        features::write_feature_file(
            &feat_dir.join(format!("{}.feat", u.id)),
            &u.features,
            u.frame_period,
        )?;
        transcripts.push_str(&format!("{}\t{}\n", u.id, u.words.join(" ")));
        for a in &u.alignment {
            alignments.push_str(&format!(
                "{} {} {} {}\n",
                u.id, a.word, a.start_frame, a.end_frame
            ));
        }
    }
    let tpath = dir.join("transcripts.tsv");
    fs::write(&tpath, transcripts).map_err(io_err(&tpath))?;
    let apath = dir.join("alignments.txt");
    fs::write(&apath, alignments).map_err(io_err(&apath))?;
    Ok(())
}

fn read_transcripts(path: &Path) -> Result<Vec<(String, Vec<String>)>, DataError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, rest) = line.split_once('\t').ok_or_else(|| DataError::Parse {
            path: path.to_path_buf(),
            line: ln + 1,
            msg: "expected utteranceId<TAB>words".into(),
        })?;
        let words: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
        out.push((id.to_string(), words));
    }
    Ok(out)
}

fn read_alignments(path: &Path) -> Result<HashMap<String, Vec<AlignedWord>>, DataError> {
    let mut map: HashMap<String, Vec<AlignedWord>> = HashMap::new();
    if !path.exists() {
        return Ok(map);
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| -> Result<usize, DataError> {
            s.parse().map_err(|_| DataError::Parse {
                path: path.to_path_buf(),
                line: ln + 1,
                msg: format!("bad frame index '{s}'"),
            })
        };
        if parts.len() != 4 {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line: ln + 1,
                msg: "expected: utteranceId word startFrame endFrame".into(),
            });
        }
        map.entry(parts[0].to_string()).or_default().push(AlignedWord {
            word: parts[1].to_string(),
            start_frame: parse(parts[2])?,
            end_frame: parse(parts[3])?,
        });
    }
    for entries in map.values_mut() {
        entries.sort_by_key(|a| a.start_frame);
    }
    Ok(map)
}

/// Keyword list entry from a `keywordId<TAB>surface` TSV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Keyword {
    pub id: String,
    pub surface: String,
}

pub fn read_keywords(path: &Path) -> Result<Vec<Keyword>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, surface) = line.split_once('\t').ok_or_else(|| DataError::Parse {
            path: path.to_path_buf(),
            line: ln + 1,
            msg: "expected keywordId<TAB>surface".into(),
        })?;
        out.push(Keyword { id: id.to_string(), surface: surface.trim().to_string() });
    }
    Ok(out)
}

pub fn write_keywords(path: &Path, keywords: &[Keyword]) -> Result<(), DataError> {
    let mut text = String::new();
    for kw in keywords {
        text.push_str(&format!("{}\t{}\n", kw.id, kw.surface));
    }
    fs::write(path, text).map_err(io_err(path))
}
