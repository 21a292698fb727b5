//! Reverse-mode gradient tape at layer granularity.
//!
//! Each operation runs its forward computation immediately, stores whatever
//! intermediate state its backward needs, and records itself onto the tape.
//! `backward` replays the nodes in reverse and returns a [`GradSet`] aligned
//! with the parameter set, so parallel tapes over shared read-only parameters
//! can be reduced deterministically by the caller.

use rand::Rng;

use super::rnn::{self, BiGruSaved, BiLstmSaved};
use super::scalar::{clamp, sigmoid, Scalar};
use super::tensor::{axpy, matmul_nn, matmul_nt, matvec, matvec_t, Tensor};
use super::{GradSet, LossConfig, NumericsError, ParamId, ParamSet};

/// Handle to a value held by the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

/// Whether stochastic layers (dropout) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-direction LSTM parameter handles: input weights `[4h x d]`, recurrent
/// weights `[4h x h]`, bias `[4h]` (gate order i, f, g, o).
#[derive(Clone, Copy, Debug)]
pub struct LstmDirParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmParams {
    pub fwd: LstmDirParams,
    pub bwd: LstmDirParams,
}

/// Per-direction GRU parameter handles: `w_ih [3h x d]`, `w_hh [3h x h]`,
/// `b_ih [3h]`, `b_hh [3h]` (gate order r, z, n).
#[derive(Clone, Copy, Debug)]
pub struct GruDirParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct BiGruParams {
    pub fwd: GruDirParams,
    pub bwd: GruDirParams,
}

struct Node<S> {
    value: Tensor<S>,
    kind: NodeKind<S>,
}

enum NodeKind<S> {
    /// Leaf input; no gradient flows past it.
    Input,
    /// y = x W^T + b along the last axis.
    Affine { x: ValueId, w: ParamId, b: ParamId },
    /// Row gather from an embedding table.
    Embedding { table: ParamId, ids: Vec<u32> },
    BiLstm { x: ValueId, p: BiLstmParams, saved: BiLstmSaved<S> },
    BiGru { x: ValueId, p: BiGruParams, saved: BiGruSaved<S> },
    /// Keep rows 1, 3, 5, ... of the input.
    Decimate { x: ValueId, in_rows: usize },
    /// Inverted dropout; mask entries are 0 or 1/(1-p).
    Dropout { x: ValueId, mask: Vec<S> },
    /// Sum of the rows of a rank-2 tensor.
    SumRows { x: ValueId },
    /// Sum of every element, yielding a scalar.
    SumAll { x: ValueId },
    /// out = M v.
    MatVec { m: ValueId, v: ValueId },
    /// Elementwise clamped sigmoid.
    SigmoidClamp { x: ValueId },
    /// Masked weighted BCE against constant binary labels; scalar output.
    MaskedBce { z: ValueId, labels: Vec<u8>, cfg: LossConfig },
    /// Sum of scalar values.
    AddScalars { xs: Vec<ValueId> },
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    consumed: bool,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), consumed: false }
    }

    fn push(&mut self, value: Tensor<S>, kind: NodeKind<S>) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node { value, kind });
        id
    }

    pub fn value(&self, id: ValueId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    /// Register a leaf tensor.
    pub fn input(&mut self, t: Tensor<S>) -> ValueId {
        self.push(t, NodeKind::Input)
    }

    /// y = x W^T + b, applied along the last axis of a rank-1 or rank-2 `x`.
    pub fn affine(
        &mut self,
        x: ValueId,
        w: ParamId,
        b: ParamId,
        params: &ParamSet<S>,
    ) -> Result<ValueId, NumericsError> {
        let xv = self.value(x);
        let wv = params.value(w);
        let bv = params.value(b);
        let (d_out, d_in) = (wv.rows(), wv.cols());
        if xv.cols() != d_in || bv.numel() != d_out {
            return Err(NumericsError::Dimension {
                op: "affine",
                detail: format!(
                    "x {:?}, W {:?}, b {:?}",
                    xv.shape(),
                    wv.shape(),
                    bv.shape()
                ),
            });
        }
        let n = xv.rows();
        let mut out = matmul_nt(xv.data(), n, d_in, wv.data(), d_out);
        for r in 0..n {
            for (o, bi) in out[r * d_out..(r + 1) * d_out].iter_mut().zip(bv.data()) {
                *o += *bi;
            }
        }
        let shape = if xv.shape().len() == 1 { vec![d_out] } else { vec![n, d_out] };
        Ok(self.push(Tensor::new(shape, out)?, NodeKind::Affine { x, w, b }))
    }

    /// Gather rows of `table` by id; gradients scatter-add back into the table.
    pub fn embedding_lookup(
        &mut self,
        ids: &[u32],
        table: ParamId,
        params: &ParamSet<S>,
    ) -> Result<ValueId, NumericsError> {
        let tv = params.value(table);
        let (rows, width) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id as usize >= rows {
                return Err(NumericsError::Vocabulary { id, rows });
            }
            data.extend_from_slice(tv.row(id as usize));
        }
        let out = Tensor::new(vec![ids.len(), width], data)?;
        Ok(self.push(out, NodeKind::Embedding { table, ids: ids.to_vec() }))
    }

    /// Bidirectional LSTM over time; output is `[N x 2h]`, the per-frame
    /// concatenation of both directions.
    pub fn bilstm(
        &mut self,
        x: ValueId,
        p: BiLstmParams,
        params: &ParamSet<S>,
    ) -> Result<ValueId, NumericsError> {
        let xv = self.value(x);
        if xv.rows() == 0 || xv.numel() == 0 {
            return Err(NumericsError::EmptySequence { op: "bilstm" });
        }
        let (out, saved) = rnn::bilstm_forward(xv, &p, params)?;
        Ok(self.push(out, NodeKind::BiLstm { x, p, saved }))
    }

    /// Bidirectional GRU; same interface as [`Tape::bilstm`].
    pub fn bigru(
        &mut self,
        x: ValueId,
        p: BiGruParams,
        params: &ParamSet<S>,
    ) -> Result<ValueId, NumericsError> {
        let xv = self.value(x);
        if xv.rows() == 0 || xv.numel() == 0 {
            return Err(NumericsError::EmptySequence { op: "bigru" });
        }
        let (out, saved) = rnn::bigru_forward(xv, &p, params)?;
        Ok(self.push(out, NodeKind::BiGru { x, p, saved }))
    }

    /// Keep frames 1, 3, 5, ... (0-based); length goes from N to floor(N/2).
    pub fn decimate(&mut self, x: ValueId) -> ValueId {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let kept = n / 2;
        let mut data = Vec::with_capacity(kept * d);
        for j in 0..kept {
            data.extend_from_slice(xv.row(2 * j + 1));
        }
        let out = Tensor::new(vec![kept, d], data).expect("decimate shape");
        self.push(out, NodeKind::Decimate { x, in_rows: n })
    }

    /// Inverted dropout. Identity in eval mode or at p = 0.
    pub fn dropout<R: Rng>(
        &mut self,
        x: ValueId,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ValueId, NumericsError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::Config(format!("dropout probability must be in [0, 1), got {p}")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = S::from_f64(1.0 / (1.0 - p));
        let xv = self.value(x);
        let mask: Vec<S> = (0..xv.numel())
            .map(|_| if rng.random::<f64>() < p { S::ZERO } else { keep_scale })
            .collect();
        let data: Vec<S> = xv.data().iter().zip(mask.iter()).map(|(v, m)| *v * *m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data).expect("dropout shape");
        Ok(self.push(out, NodeKind::Dropout { x, mask }))
    }

    /// Sum a `[K x d]` tensor over its rows, yielding `[d]`.
    pub fn sum_rows(&mut self, x: ValueId) -> ValueId {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let mut acc = vec![S::ZERO; d];
        for i in 0..n {
            axpy(&mut acc, S::ONE, xv.row(i));
        }
        self.push(Tensor::from_vec(acc), NodeKind::SumRows { x })
    }

    /// Sum every element into a scalar.
    pub fn sum_all(&mut self, x: ValueId) -> ValueId {
        let xv = self.value(x);
        let mut acc = S::ZERO;
        for v in xv.data() {
            acc += *v;
        }
        self.push(Tensor::scalar(acc), NodeKind::SumAll { x })
    }

    /// out = M v with M `[r x c]` and v `[c]`.
    pub fn matvec(&mut self, m: ValueId, v: ValueId) -> Result<ValueId, NumericsError> {
        let mv = self.value(m);
        let vv = self.value(v);
        if mv.cols() != vv.numel() || mv.shape().len() != 2 {
            return Err(NumericsError::Dimension {
                op: "matvec",
                detail: format!("M {:?}, v {:?}", mv.shape(), vv.shape()),
            });
        }
        let out = matvec(mv.data(), mv.rows(), mv.cols(), vv.data());
        Ok(self.push(Tensor::from_vec(out), NodeKind::MatVec { m, v }))
    }

    /// Elementwise sigmoid with outputs clamped to `[eps, 1-eps]`.
    pub fn sigmoid_clamp(&mut self, x: ValueId, eps: f64) -> ValueId {
        let e = S::from_f64(eps);
        let hi = S::from_f64(1.0 - eps);
        let xv = self.value(x);
        let data: Vec<S> = xv.data().iter().map(|&v| clamp(sigmoid(v), e, hi)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data).expect("sigmoid shape");
        self.push(out, NodeKind::SigmoidClamp { x })
    }

    /// Masked weighted binary cross-entropy against `{0,1}` labels:
    ///
    /// -sum_n [ 1{z_n > 1-phi} (1-y_n) log(1-z_n) + 1{z_n < phi} lambda y_n log z_n ]
    ///
    /// The indicators are constants for gradient purposes.
    pub fn masked_weighted_bce(
        &mut self,
        z: ValueId,
        labels: &[u8],
        cfg: LossConfig,
    ) -> Result<ValueId, NumericsError> {
        let zv = self.value(z);
        if zv.numel() != labels.len() {
            return Err(NumericsError::Dimension {
                op: "masked_weighted_bce",
                detail: format!("{} posteriors vs {} labels", zv.numel(), labels.len()),
            });
        }
        let phi = S::from_f64(cfg.phi);
        let one_minus_phi = S::from_f64(1.0 - cfg.phi);
        let lambda = S::from_f64(cfg.lambda);
        let lo = S::from_f64(cfg.clamp_epsilon);
        let hi = S::from_f64(1.0 - cfg.clamp_epsilon);
        let mut loss = S::ZERO;
        for (&zr, &y) in zv.data().iter().zip(labels.iter()) {
            let zc = clamp(zr, lo, hi);
            if y == 0 {
                if zc > one_minus_phi {
                    loss -= (S::ONE - zc).ln();
                }
            } else if zc < phi {
                loss -= lambda * zc.ln();
            }
        }
        Ok(self.push(Tensor::scalar(loss), NodeKind::MaskedBce { z, labels: labels.to_vec(), cfg }))
    }

    /// Sum scalar values (the batch objective is a plain sum of pair losses).
    pub fn add_scalars(&mut self, xs: &[ValueId]) -> ValueId {
        let mut acc = S::ZERO;
        for &x in xs {
            acc += self.value(x).item();
        }
        self.push(Tensor::scalar(acc), NodeKind::AddScalars { xs: xs.to_vec() })
    }

    /// Reverse-mode sweep from a scalar root. Parameters never touched by the
    /// forward pass get zero gradients. Consumes the tape's gradient state; a
    /// second call without a fresh forward pass is an error.
    pub fn backward(
        &mut self,
        root: ValueId,
        params: &ParamSet<S>,
    ) -> Result<GradSet<S>, NumericsError> {
        if self.consumed {
            return Err(NumericsError::TapeConsumed);
        }
        self.consumed = true;
        if self.value(root).numel() != 1 {
            return Err(NumericsError::Dimension {
                op: "backward",
                detail: format!("root must be scalar, got shape {:?}", self.value(root).shape()),
            });
        }

        let mut grads = GradSet::zeros_like(params);
        let mut d_vals: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        d_vals[root.0] = Some(Tensor::scalar(S::ONE));

        for i in (0..self.nodes.len()).rev() {
            let d_out = match d_vals[i].take() {
                Some(d) => d,
                None => continue,
            };
            match &self.nodes[i].kind {
                NodeKind::Input => {}
                NodeKind::Affine { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = params.value(*w);
                    let (n, d_in, d_o) = (xv.rows(), wv.cols(), wv.rows());
                    // dW += d_out^T x ; db += column sums ; dx = d_out W
                    {
                        let gw = grads.slot_mut(*w).data_mut();
                        for t in 0..n {
                            let dr = &d_out.data()[t * d_o..(t + 1) * d_o];
                            let xr = xv.row(t);
                            for (g, &dv) in dr.iter().enumerate() {
                                if dv != S::ZERO {
                                    axpy(&mut gw[g * d_in..(g + 1) * d_in], dv, xr);
                                }
                            }
                        }
                    }
                    {
                        let gb = grads.slot_mut(*b).data_mut();
                        for t in 0..n {
                            axpy(gb, S::ONE, &d_out.data()[t * d_o..(t + 1) * d_o]);
                        }
                    }
                    let dx = matmul_nn(d_out.data(), n, d_o, wv.data(), d_in);
                    let dx = Tensor::new(xv.shape().to_vec(), dx)?;
                    accumulate(&mut d_vals[x.0], dx);
                }
                NodeKind::Embedding { table, ids } => {
                    let width = params.value(*table).cols();
                    let gt = grads.slot_mut(*table).data_mut();
                    for (k, &id) in ids.iter().enumerate() {
                        let row = id as usize;
                        axpy(
                            &mut gt[row * width..(row + 1) * width],
                            S::ONE,
                            &d_out.data()[k * width..(k + 1) * width],
                        );
                    }
                }
                NodeKind::BiLstm { x, p, saved } => {
                    let xv = &self.nodes[x.0].value;
                    let dx = rnn::bilstm_backward(&d_out, xv, p, saved, params, &mut grads);
                    accumulate(&mut d_vals[x.0], dx);
                }
                NodeKind::BiGru { x, p, saved } => {
                    let xv = &self.nodes[x.0].value;
                    let dx = rnn::bigru_backward(&d_out, xv, p, saved, params, &mut grads);
                    accumulate(&mut d_vals[x.0], dx);
                }
                NodeKind::Decimate { x, in_rows } => {
                    let d = self.nodes[x.0].value.cols();
                    let mut dx = Tensor::zeros(vec![*in_rows, d]);
                    for j in 0..d_out.rows() {
                        dx.row_mut(2 * j + 1).copy_from_slice(d_out.row(j));
                    }
                    accumulate(&mut d_vals[x.0], dx);
                }
                NodeKind::Dropout { x, mask } => {
                    let data: Vec<S> =
                        d_out.data().iter().zip(mask.iter()).map(|(d, m)| *d * *m).collect();
                    let dx = Tensor::new(self.nodes[x.0].value.shape().to_vec(), data)?;
                    accumulate(&mut d_vals[x.0], dx);
                }
                NodeKind::SumRows { x } => {
                    let xv = &self.nodes[x.0].value;
                    let (n, d) = (xv.rows(), xv.cols());
                    let mut dx = Tensor::zeros(vec![n, d]);
                    for t in 0..n {
                        dx.row_mut(t).copy_from_slice(d_out.data());
                    }
                    accumulate(&mut d_vals[x.0], dx);
                }
                NodeKind::SumAll { x } => {
                    let xv = &self.nodes[x.0].value;
                    let mut dx = Tensor::zeros(xv.shape().to_vec());
                    dx.fill(d_out.item());
                    accumulate(&mut d_vals[x.0], dx);
                }
                NodeKind::MatVec { m, v } => {
                    let mv = &self.nodes[m.0].value;
                    let vv = &self.nodes[v.0].value;
                    let (r, c) = (mv.rows(), mv.cols());
                    let mut dm = Tensor::zeros(vec![r, c]);
                    for t in 0..r {
                        axpy(dm.row_mut(t), d_out.data()[t], vv.data());
                    }
                    let dv = Tensor::from_vec(matvec_t(mv.data(), r, c, d_out.data()));
                    accumulate(&mut d_vals[m.0], dm);
                    accumulate(&mut d_vals[v.0], dv);
                }
                NodeKind::SigmoidClamp { x } => {
                    let out = &self.nodes[i].value;
                    let data: Vec<S> = d_out
                        .data()
                        .iter()
                        .zip(out.data().iter())
                        .map(|(d, z)| *d * *z * (S::ONE - *z))
                        .collect();
                    let dx = Tensor::new(out.shape().to_vec(), data)?;
                    accumulate(&mut d_vals[x.0], dx);
                }
                NodeKind::MaskedBce { z, labels, cfg } => {
                    let zv = &self.nodes[z.0].value;
                    let phi = S::from_f64(cfg.phi);
                    let one_minus_phi = S::from_f64(1.0 - cfg.phi);
                    let lambda = S::from_f64(cfg.lambda);
                    let lo = S::from_f64(cfg.clamp_epsilon);
                    let hi = S::from_f64(1.0 - cfg.clamp_epsilon);
                    let s = d_out.item();
                    let data: Vec<S> = zv
                        .data()
                        .iter()
                        .zip(labels.iter())
                        .map(|(&zr, &y)| {
                            let zc = clamp(zr, lo, hi);
                            if y == 0 {
                                if zc > one_minus_phi {
                                    s / (S::ONE - zc)
                                } else {
                                    S::ZERO
                                }
                            } else if zc < phi {
                                -s * lambda / zc
                            } else {
                                S::ZERO
                            }
                        })
                        .collect();
                    let dz = Tensor::new(zv.shape().to_vec(), data)?;
                    accumulate(&mut d_vals[z.0], dz);
                }
                NodeKind::AddScalars { xs } => {
                    for &x in xs {
                        accumulate(&mut d_vals[x.0], Tensor::scalar(d_out.item()));
                    }
                }
            }
        }
        Ok(grads)
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, t: Tensor<S>) {
    match slot {
        Some(acc) => acc.add_assign(&t),
        None => *slot = Some(t),
    }
}
