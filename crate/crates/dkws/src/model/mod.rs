//! The dual-encoder keyword search model: a grapheme query encoder
//! (embedding, bidirectional GRU stack, affine), a BLSTM document encoder
//! with interior down-sampling, and the dot-product/sigmoid scorer that
//! joins them.

mod io;

pub use io::{load_model, save_model};

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Corpus, Utterance};
use crate::numerics::scalar::{clamp, sigmoid};
use crate::numerics::tape::{BiGruParams, BiLstmParams, GruDirParams, LstmDirParams, Mode, Tape, ValueId};
use crate::numerics::tensor::matvec;
use crate::numerics::{NumericsError, ParamId, ParamSet, Scalar, Tensor};
use crate::rng;

/// Posterior clamp shared by training and search.
pub const POSTERIOR_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown grapheme '{symbol}' for language '{language}'")]
    UnknownGrapheme { symbol: char, language: String },
    #[error("empty query")]
    EmptyQuery,
    #[error("model has no language '{0}'")]
    UnknownLanguage(String),
    #[error("utterance too short to encode: {frames} frames (minimum {min})")]
    TooShort { frames: usize, min: usize },
    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    FeatureDim { expected: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("model io on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad model file: {0}")]
    Format(String),
    #[error("model/config mismatch: {0}")]
    ConfigMismatch(String),
}

/// A written query: grapheme text (words separated by spaces) plus the
/// language whose embedding table should read it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub language: String,
    pub text: String,
}

impl Query {
    pub fn new(language: impl Into<String>, text: impl Into<String>) -> Self {
        Query { language: language.into(), text: text.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageVocab {
    pub id: String,
    /// Grapheme inventory; the inter-word separator is implicit (id 0).
    pub graphemes: Vec<char>,
}

impl LanguageVocab {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        LanguageVocab { id: corpus.language.clone(), graphemes: corpus.grapheme_inventory() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub embedding_dim: usize,
    pub query_gru_layers: usize,
    /// GRU width per direction.
    pub query_gru_width: usize,
    pub doc_lstm_layers: usize,
    /// LSTM width per direction.
    pub doc_lstm_width: usize,
    /// Shared output dimension D of both encoders.
    pub projection_dim: usize,
    pub dropout: f64,
    /// 1-based BLSTM layers after which frames are halved.
    pub decimate_after: Vec<usize>,
    pub languages: Vec<LanguageVocab>,
}

impl ModelConfig {
    /// Paper-scale configuration: 6 BLSTM layers (256 per direction), GRU
    /// 2 x 256, projection 400, down-sampling after layers 1 and 4.
    pub fn reference(feature_dim: usize, languages: Vec<LanguageVocab>) -> Self {
        ModelConfig {
            feature_dim,
            embedding_dim: 32,
            query_gru_layers: 2,
            query_gru_width: 256,
            doc_lstm_layers: 6,
            doc_lstm_width: 256,
            projection_dim: 400,
            dropout: 0.4,
            decimate_after: vec![1, 4],
            languages,
        }
    }

    /// Desk-scale configuration that trains in minutes on a CPU.
    pub fn desk(feature_dim: usize, languages: Vec<LanguageVocab>) -> Self {
        ModelConfig {
            feature_dim,
            embedding_dim: 32,
            query_gru_layers: 2,
            query_gru_width: 32,
            doc_lstm_layers: 4,
            doc_lstm_width: 64,
            projection_dim: 64,
            dropout: 0.4,
            decimate_after: vec![1, 2],
            languages,
        }
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.decimate_after.len()
    }

    /// Shortest encodable utterance: at least two output frames, and never
    /// below the 8-frame floor.
    pub fn min_input_frames(&self) -> usize {
        (2 * self.downsample_factor()).max(8)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("embedding_dim", self.embedding_dim),
            ("query_gru_layers", self.query_gru_layers),
            ("query_gru_width", self.query_gru_width),
            ("doc_lstm_layers", self.doc_lstm_layers),
            ("doc_lstm_width", self.doc_lstm_width),
            ("projection_dim", self.projection_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        let mut seen = std::collections::HashSet::new();
        for &l in &self.decimate_after {
            if l == 0 || l > self.doc_lstm_layers {
                return Err(ModelError::Config(format!(
                    "decimate_after layer {l} outside 1..={}",
                    self.doc_lstm_layers
                )));
            }
            if !seen.insert(l) {
                return Err(ModelError::Config(format!("decimate_after layer {l} repeated")));
            }
        }
        if self.languages.is_empty() {
            return Err(ModelError::Config("at least one language required".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for lang in &self.languages {
            if !ids.insert(&lang.id) {
                return Err(ModelError::Config(format!("duplicate language '{}'", lang.id)));
            }
            if lang.graphemes.is_empty() {
                return Err(ModelError::Config(format!("language '{}' has no graphemes", lang.id)));
            }
            if lang.graphemes.contains(&' ') {
                return Err(ModelError::Config(format!(
                    "language '{}' must not declare the separator ' ' as a grapheme",
                    lang.id
                )));
            }
        }
        Ok(())
    }
}

/// Global feature standardization computed on training data and stored with
/// the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(dim: usize) -> Self {
        FeatureNorm { mean: vec![0.0; dim], inv_std: vec![1.0; dim] }
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.inv_std.iter().all(|&s| s == 1.0)
    }

    pub fn from_corpora(corpora: &[&Corpus], dim: usize) -> Self {
        let mut count = 0u64;
        let mut sum = vec![0.0f64; dim];
        let mut sum_sq = vec![0.0f64; dim];
        for corpus in corpora {
            for utt in &corpus.utterances {
                for t in 0..utt.num_frames() {
                    for (j, &v) in utt.features.row(t).iter().enumerate() {
                        sum[j] += v as f64;
                        sum_sq[j] += (v as f64) * (v as f64);
                    }
                }
                count += utt.num_frames() as u64;
            }
        }
        if count == 0 {
            return FeatureNorm::identity(dim);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let inv_std: Vec<f64> = sum_sq
            .iter()
            .zip(mean.iter())
            .map(|(sq, m)| {
                let var = (sq / n - m * m).max(0.0);
                1.0 / var.sqrt().max(1e-6)
            })
            .collect();
        FeatureNorm { mean, inv_std }
    }
}

/// Per-utterance output of the document encoder plus timing metadata; the
/// mathematical H_X is D x N-hat, stored frame-major as N-hat x D.
#[derive(Clone, Debug, PartialEq)]
pub struct DocumentEncoding {
    pub utterance_id: String,
    pub matrix: Tensor<f32>,
    pub input_frames: usize,
    pub frame_period: f64,
    pub downsample_factor: usize,
}

impl DocumentEncoding {
    pub fn output_frames(&self) -> usize {
        self.matrix.rows()
    }
}

/// Frame-wise occurrence posteriors in (0, 1) with timing metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTrack {
    pub values: Vec<f32>,
    pub frame_period: f64,
    pub downsample_factor: usize,
}

#[derive(Clone)]
struct Layout {
    embeddings: BTreeMap<String, ParamId>,
    gru: Vec<BiGruParams>,
    query_proj: (ParamId, ParamId),
    lstm: Vec<BiLstmParams>,
    doc_proj: (ParamId, ParamId),
}

/// The full model: parameters, layout handles, per-language vocabularies and
/// feature normalization. Parameters are immutable during encoding and
/// search; training takes `&mut`.
#[derive(Clone)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub params: ParamSet<S>,
    pub feature_norm: FeatureNorm,
    layout: Layout,
    vocabs: BTreeMap<String, HashMap<char, u32>>,
}

impl<S: Scalar> Model<S> {
    /// Deterministic initialization: uniform(-k, k) with k = 1/sqrt(fan_in)
    /// per matrix, zero biases, LSTM forget-gate bias 1.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut r = rng::derive(seed, "model-init");
        let mut params = ParamSet::new();

        let uniform = |shape: Vec<usize>, fan_in: usize, r: &mut ChaCha8Rng| {
            let k = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| S::from_f64((r.random::<f64>() * 2.0 - 1.0) * k)).collect();
            Tensor::new(shape, data).expect("init shape")
        };

        let mut embeddings = BTreeMap::new();
        let mut languages = config.languages.clone();
        languages.sort_by(|a, b| a.id.cmp(&b.id));
        let e = config.embedding_dim;
        for lang in &languages {
            let rows = lang.graphemes.len() + 1; // row 0 is the word separator
            let id = params.insert(
                format!("query.embed.{}", lang.id),
                uniform(vec![rows, e], e, &mut r),
            );
            embeddings.insert(lang.id.clone(), id);
        }

        let hq = config.query_gru_width;
        let mut gru = Vec::new();
        for layer in 0..config.query_gru_layers {
            let d_in = if layer == 0 { e } else { 2 * hq };
            let mut dir = |tag: &str, r: &mut ChaCha8Rng| GruDirParams {
                w_ih: params.insert(
                    format!("query.gru{layer}.{tag}.w_ih"),
                    uniform(vec![3 * hq, d_in], d_in, r),
                ),
                w_hh: params.insert(
                    format!("query.gru{layer}.{tag}.w_hh"),
                    uniform(vec![3 * hq, hq], hq, r),
                ),
                b_ih: params.insert(format!("query.gru{layer}.{tag}.b_ih"), Tensor::zeros(vec![3 * hq])),
                b_hh: params.insert(format!("query.gru{layer}.{tag}.b_hh"), Tensor::zeros(vec![3 * hq])),
            };
            let fwd = dir("fwd", &mut r);
            let bwd = dir("bwd", &mut r);
            gru.push(BiGruParams { fwd, bwd });
        }
        let d = config.projection_dim;
        let query_proj = (
            params.insert("query.proj.w", uniform(vec![d, 2 * hq], 2 * hq, &mut r)),
            params.insert("query.proj.b", Tensor::zeros(vec![d])),
        );

        let hd = config.doc_lstm_width;
        let mut lstm = Vec::new();
        for layer in 0..config.doc_lstm_layers {
            let d_in = if layer == 0 { config.feature_dim } else { 2 * hd };
            let mut dir = |tag: &str, r: &mut ChaCha8Rng| {
                let mut bias = Tensor::zeros(vec![4 * hd]);
                for j in hd..2 * hd {
                    bias.data_mut()[j] = S::ONE; // forget gate
                }
                LstmDirParams {
                    w_ih: params.insert(
                        format!("doc.lstm{layer}.{tag}.w_ih"),
                        uniform(vec![4 * hd, d_in], d_in, r),
                    ),
                    w_hh: params.insert(
                        format!("doc.lstm{layer}.{tag}.w_hh"),
                        uniform(vec![4 * hd, hd], hd, r),
                    ),
                    bias: params.insert(format!("doc.lstm{layer}.{tag}.b"), bias),
                }
            };
            let fwd = dir("fwd", &mut r);
            let bwd = dir("bwd", &mut r);
            lstm.push(BiLstmParams { fwd, bwd });
        }
        let doc_proj = (
            params.insert("doc.proj.w", uniform(vec![d, 2 * hd], 2 * hd, &mut r)),
            params.insert("doc.proj.b", Tensor::zeros(vec![d])),
        );

        let vocabs = build_vocabs(&languages);
        let feature_norm = FeatureNorm::identity(config.feature_dim);
        Ok(Model {
            config,
            params,
            feature_norm,
            layout: Layout { embeddings, gru, query_proj, lstm, doc_proj },
            vocabs,
        })
    }

    /// Rebuild a model around externally supplied parameters (model loading,
    /// gradient checking). Parameter names and shapes must match what `init`
    /// creates for the same config.
    pub fn assemble(
        config: ModelConfig,
        params: ParamSet<S>,
        feature_norm: FeatureNorm,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let reference: Model<S> = Model::init(config.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(ModelError::ConfigMismatch(format!(
                "config implies {} parameters, file carries {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (id, e) in reference.params.iter() {
            let have = params.id(&e.name).ok_or_else(|| {
                ModelError::ConfigMismatch(format!("missing parameter '{}'", e.name))
            })?;
            if have != id {
                return Err(ModelError::ConfigMismatch(format!("parameter order differs at '{}'", e.name)));
            }
            if params.value(have).shape() != e.value.shape() {
                return Err(ModelError::ConfigMismatch(format!(
                    "parameter '{}' has shape {:?}, config implies {:?}",
                    e.name,
                    params.value(have).shape(),
                    e.value.shape()
                )));
            }
        }
        if feature_norm.mean.len() != config.feature_dim
            || feature_norm.inv_std.len() != config.feature_dim
        {
            return Err(ModelError::ConfigMismatch("feature norm dimension mismatch".into()));
        }
        Ok(Model {
            layout: reference.layout,
            vocabs: reference.vocabs,
            config,
            params,
            feature_norm,
        })
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.vocabs.keys().map(|s| s.as_str())
    }

    pub fn embedding_table(&self, language: &str) -> Option<ParamId> {
        self.layout.embeddings.get(language).copied()
    }

    /// Grapheme ids of a query; words are joined by the separator token 0.
    pub fn query_ids(&self, query: &Query) -> Result<Vec<u32>, ModelError> {
        let vocab = self
            .vocabs
            .get(&query.language)
            .ok_or_else(|| ModelError::UnknownLanguage(query.language.clone()))?;
        let words: Vec<&str> = query.text.split_whitespace().collect();
        if words.is_empty() {
            return Err(ModelError::EmptyQuery);
        }
        let mut ids = Vec::new();
        for (i, word) in words.iter().enumerate() {
            if i > 0 {
                ids.push(0);
            }
            for ch in word.chars() {
                let id = vocab.get(&ch).ok_or(ModelError::UnknownGrapheme {
                    symbol: ch,
                    language: query.language.clone(),
                })?;
                ids.push(*id);
            }
        }
        Ok(ids)
    }

    /// Query encoder on the tape: e_q = W1 (sum_k v_k) + b1.
    pub fn encode_query_tape(
        &self,
        query: &Query,
        tape: &mut Tape<S>,
    ) -> Result<ValueId, ModelError> {
        let ids = self.query_ids(query)?;
        let table = self.embedding_table(&query.language).expect("vocab checked");
        let mut x = tape.embedding_lookup(&ids, table, &self.params)?;
        for p in &self.layout.gru {
            x = tape.bigru(x, *p, &self.params)?;
        }
        let pooled = tape.sum_rows(x);
        let (w1, b1) = self.layout.query_proj;
        Ok(tape.affine(pooled, w1, b1, &self.params)?)
    }

    /// Document encoder on the tape: BLSTM stack with decimation after the
    /// configured layers and dropout between layers in train mode; final
    /// affine to the projection dimension.
    pub fn encode_document_tape(
        &self,
        features: &Tensor<S>,
        mode: Mode,
        dropout_rng: Option<&mut ChaCha8Rng>,
        tape: &mut Tape<S>,
    ) -> Result<ValueId, ModelError> {
        let n = features.rows();
        let min = self.config.min_input_frames();
        if n < min {
            return Err(ModelError::TooShort { frames: n, min });
        }
        if features.cols() != self.config.feature_dim {
            return Err(ModelError::FeatureDim {
                expected: self.config.feature_dim,
                got: features.cols(),
            });
        }
        let mut local_rng;
        let rng_ref = match dropout_rng {
            Some(r) => r,
            None => {
                local_rng = rng::derive(0, "unused-eval-dropout");
                &mut local_rng
            }
        };

        let mut x = tape.input(self.normalize(features));
        let layers = self.layout.lstm.len();
        for (i, p) in self.layout.lstm.iter().enumerate() {
            x = tape.bilstm(x, *p, &self.params)?;
            if self.config.decimate_after.contains(&(i + 1)) {
                x = tape.decimate(x);
            }
            if i + 1 < layers {
                x = tape.dropout(x, self.config.dropout, mode, rng_ref)?;
            }
        }
        let (w2, b2) = self.layout.doc_proj;
        Ok(tape.affine(x, w2, b2, &self.params)?)
    }

    fn normalize(&self, features: &Tensor<S>) -> Tensor<S> {
        let (n, f) = (features.rows(), features.cols());
        let mean: Vec<S> = self.feature_norm.mean.iter().map(|&v| S::from_f64(v)).collect();
        let inv: Vec<S> = self.feature_norm.inv_std.iter().map(|&v| S::from_f64(v)).collect();
        let mut data = Vec::with_capacity(n * f);
        for t in 0..n {
            for (j, &v) in features.row(t).iter().enumerate() {
                data.push((v - mean[j]) * inv[j]);
            }
        }
        Tensor::new(vec![n, f], data).expect("normalize shape")
    }

    /// Eval-mode query embedding.
    pub fn encode_query(&self, query: &Query) -> Result<Tensor<S>, ModelError> {
        let mut tape = Tape::new();
        let id = self.encode_query_tape(query, &mut tape)?;
        Ok(tape.value(id).clone())
    }

    /// Eval-mode document encoding (no dropout, deterministic).
    pub fn encode_document(&self, features: &Tensor<S>) -> Result<Tensor<S>, ModelError> {
        let mut tape = Tape::new();
        let id = self.encode_document_tape(features, Mode::Eval, None, &mut tape)?;
        Ok(tape.value(id).clone())
    }
}

impl Model<f32> {
    /// Encode one utterance for the archive index.
    pub fn encode_utterance(&self, utt: &Utterance) -> Result<DocumentEncoding, ModelError> {
        let matrix = self.encode_document(&utt.features)?;
        Ok(DocumentEncoding {
            utterance_id: utt.id.clone(),
            matrix,
            input_frames: utt.num_frames(),
            frame_period: utt.frame_period,
            downsample_factor: self.config.downsample_factor(),
        })
    }

    /// Content hash used to pair archive indices with the model that built
    /// them.
    pub fn fingerprint(&self) -> u64 {
        io::fingerprint(self)
    }
}

/// z = sigmoid(H^T e), elementwise, clamped away from 0 and 1.
pub fn score(encoding: &DocumentEncoding, query_vec: &[f32]) -> Result<PosteriorTrack, ModelError> {
    let m = &encoding.matrix;
    if m.cols() != query_vec.len() {
        return Err(ModelError::Numerics(NumericsError::Dimension {
            op: "score",
            detail: format!("encoding dim {} vs query dim {}", m.cols(), query_vec.len()),
        }));
    }
    let lo = POSTERIOR_EPS as f32;
    let hi = 1.0 - POSTERIOR_EPS as f32;
    let logits = matvec(m.data(), m.rows(), m.cols(), query_vec);
    let values = logits.into_iter().map(|l| clamp(sigmoid(l), lo, hi)).collect();
    Ok(PosteriorTrack {
        values,
        frame_period: encoding.frame_period,
        downsample_factor: encoding.downsample_factor,
    })
}

fn build_vocabs(languages: &[LanguageVocab]) -> BTreeMap<String, HashMap<char, u32>> {
    let mut vocabs = BTreeMap::new();
    for lang in languages {
        let mut map = HashMap::new();
        let mut graphemes = lang.graphemes.clone();
        graphemes.sort_unstable();
        graphemes.dedup();
        for (i, &g) in graphemes.iter().enumerate() {
            map.insert(g, (i + 1) as u32);
        }
        vocabs.insert(lang.id.clone(), map);
    }
    vocabs
}

#[cfg(test)]
mod tests;
