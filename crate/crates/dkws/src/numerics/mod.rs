//! Deterministic differentiable sequence layers with reverse-mode gradients.
//!
//! The layer set is exactly what the keyword-search model needs: embedding
//! lookup, bidirectional GRU/LSTM, affine projections, interior decimation,
//! inverted dropout, and a masked weighted binary cross-entropy. Forward
//! passes record onto a [`Tape`]; [`Tape::backward`] replays it in reverse
//! and returns per-parameter gradients.

pub mod adam;
pub mod gradcheck;
mod rnn;
pub mod scalar;
pub mod tape;
pub mod tensor;


pub use adam::{AdamConfig, OptimizerState};
pub use gradcheck::{grad_check, GradCheckConfig};
pub use scalar::{clamp, sigmoid, Scalar};
pub use tape::{Mode, Tape, ValueId};
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: dimension mismatch ({detail})")]
    Dimension { op: &'static str, detail: String },
    #[error("{op}: empty sequence")]
    EmptySequence { op: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("embedding id {id} out of range for table with {rows} rows")]
    Vocabulary { id: u32, rows: usize },
    #[error("tape already consumed by backward; run a fresh forward pass")]
    TapeConsumed,
    #[error("non-finite gradient in parameter '{param}'")]
    NonFiniteGradient { param: String },
}

/// Handle into a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors with same-shaped gradient accumulators.
#[derive(Clone, Debug)]
pub struct ParamSet<S> {
    entries: Vec<ParamEntry<S>>,
    by_name: HashMap<String, ParamId>,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new(), by_name: HashMap::new() }
    }

    /// Register a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter '{}'", name);
        let id = ParamId(self.entries.len());
        let grad = Tensor::zeros(value.shape().to_vec());
        self.entries.push(ParamEntry { name: name.clone(), value, grad });
        self.by_name.insert(name, id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<S>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(S::ZERO);
        }
    }

    /// Add a gradient set produced by [`Tape::backward`] into the accumulators.
    pub fn accumulate(&mut self, grads: &GradSet<S>) {
        assert_eq!(grads.slots.len(), self.entries.len(), "gradient set from a different ParamSet");
        for (e, g) in self.entries.iter_mut().zip(grads.slots.iter()) {
            e.grad.add_assign(g);
        }
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for e in &self.entries {
            out.insert(e.name.clone(), e.value.cast::<T>());
        }
        out
    }
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients aligned with a [`ParamSet`]. Tapes return these so that several
/// forward/backward passes can run in parallel against shared read-only
/// parameters and be reduced in a fixed order afterwards.
#[derive(Clone, Debug)]
pub struct GradSet<S> {
    pub(crate) slots: Vec<Tensor<S>>,
}

impl<S: Scalar> GradSet<S> {
    pub fn zeros_like(params: &ParamSet<S>) -> Self {
        GradSet {
            slots: params.entries.iter().map(|e| Tensor::zeros(e.value.shape().to_vec())).collect(),
        }
    }

    pub fn slot(&self, id: ParamId) -> &Tensor<S> {
        &self.slots[id.0]
    }

    pub(crate) fn slot_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.slots[id.0]
    }

    pub fn add_assign(&mut self, other: &GradSet<S>) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (a, b) in self.slots.iter_mut().zip(other.slots.iter()) {
            a.add_assign(b);
        }
    }
}

/// Hyper-parameters of the masked weighted binary cross-entropy.
///
/// At `lambda = 1`, `phi = 1` the loss is plain binary cross-entropy.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Relative weight of positive frames.
    pub lambda: f64,
    /// Margin beyond which well-classified frames stop contributing.
    pub phi: f64,
    /// Posteriors are clamped to `[eps, 1-eps]` before logs.
    pub clamp_epsilon: f64,
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        Self::new(self.lambda, self.phi, self.clamp_epsilon).map(|_| ())
    }

    pub fn new(lambda: f64, phi: f64, clamp_epsilon: f64) -> Result<Self, NumericsError> {
        if lambda <= 0.0 || lambda.is_nan() {
            return Err(NumericsError::Config(format!("lambda must be positive, got {lambda}")));
        }
        if phi.is_nan() || phi <= 0.0 || phi > 1.0 {
            return Err(NumericsError::Config(format!("phi must be in (0, 1], got {phi}")));
        }
        if clamp_epsilon.is_nan() || clamp_epsilon <= 0.0 || clamp_epsilon >= 0.5 {
            return Err(NumericsError::Config(format!(
                "clamp_epsilon must be in (0, 0.5), got {clamp_epsilon}"
            )));
        }
        Ok(LossConfig { lambda, phi, clamp_epsilon })
    }

    /// Plain binary cross-entropy.
    pub fn bce() -> Self {
        LossConfig { lambda: 1.0, phi: 1.0, clamp_epsilon: 1e-7 }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        // lambda = 5, phi = 0.7
        LossConfig { lambda: 5.0, phi: 0.7, clamp_epsilon: 1e-7 }
    }
}
