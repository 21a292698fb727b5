//! Bidirectional LSTM/GRU kernels: forward passes that keep the per-step
//! activations, and the matching full-sequence BPTT backward passes.
//!
//! Gate layouts follow the common convention: LSTM `[i f g o]`, GRU `[r z n]`,
//! each as contiguous blocks of the hidden width. Input projections for the
//! whole sequence are batched into one matrix product; only the recurrence
//! itself runs step by step.

use super::scalar::{sigmoid, Scalar};
use super::tape::{BiGruParams, BiLstmParams, GruDirParams, LstmDirParams};
use super::tensor::{axpy, matmul_nn, matmul_nt, matvec_into, matvec_t_into, Tensor};
use super::{GradSet, NumericsError, ParamSet};

pub(crate) struct LstmDirSaved<S> {
    /// Post-activation gates, `[n x 4h]`.
    gates: Vec<S>,
    /// Cell states, `[n x h]`.
    cells: Vec<S>,
    /// Hidden states, `[n x h]`, indexed by time (not processing order).
    hs: Vec<S>,
}

pub(crate) struct BiLstmSaved<S> {
    hidden: usize,
    fwd: LstmDirSaved<S>,
    bwd: LstmDirSaved<S>,
}

pub(crate) struct GruDirSaved<S> {
    /// Post-activation gates, `[n x 3h]`.
    gates: Vec<S>,
    /// Hidden-side candidate pre-activation `W_hn h_prev + b_hn`, `[n x h]`.
    hn_pre: Vec<S>,
    hs: Vec<S>,
}

pub(crate) struct BiGruSaved<S> {
    hidden: usize,
    fwd: GruDirSaved<S>,
    bwd: GruDirSaved<S>,
}

fn time_order(n: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    }
}

fn check_rnn_dims(
    op: &'static str,
    d_in: usize,
    w_ih: &[usize],
    w_hh: &[usize],
    gates: usize,
) -> Result<usize, NumericsError> {
    let err = |detail: String| NumericsError::Dimension { op, detail };
    if w_ih.len() != 2 || w_hh.len() != 2 {
        return Err(err("weights must be rank 2".into()));
    }
    let h = w_hh[1];
    if w_ih[0] != gates * h || w_hh[0] != gates * h || w_ih[1] != d_in {
        return Err(err(format!(
            "input dim {}, w_ih {:?}, w_hh {:?} (expected [{}h x d], [{}h x h])",
            d_in, w_ih, w_hh, gates, gates
        )));
    }
    Ok(h)
}

// ---- LSTM -------------------------------------------------------------

fn lstm_dir_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &LstmDirParams,
    params: &ParamSet<S>,
    reverse: bool,
) -> Result<LstmDirSaved<S>, NumericsError> {
    let (n, d) = (x.rows(), x.cols());
    let w_ih = params.value(p.w_ih);
    let w_hh = params.value(p.w_hh);
    let bias = params.value(p.bias);
    let h = check_rnn_dims("bilstm", d, w_ih.shape(), w_hh.shape(), 4)?;
    if bias.numel() != 4 * h {
        return Err(NumericsError::Dimension {
            op: "bilstm",
            detail: format!("bias {:?} (expected [4h])", bias.shape()),
        });
    }

    let mut xproj = matmul_nt(x.data(), n, d, w_ih.data(), 4 * h);
    for t in 0..n {
        axpy(&mut xproj[t * 4 * h..(t + 1) * 4 * h], S::ONE, bias.data());
    }

    let mut gates = vec![S::ZERO; n * 4 * h];
    let mut cells = vec![S::ZERO; n * h];
    let mut hs = vec![S::ZERO; n * h];
    let mut h_prev = vec![S::ZERO; h];
    let mut c_prev = vec![S::ZERO; h];

    let mut a = vec![S::ZERO; 4 * h];
    let mut rec = vec![S::ZERO; 4 * h];
    for &t in &time_order(n, reverse) {
        a.copy_from_slice(&xproj[t * 4 * h..(t + 1) * 4 * h]);
        matvec_into(&mut rec, w_hh.data(), 4 * h, h, &h_prev);
        axpy(&mut a, S::ONE, &rec);
        let g_row = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let i_g = sigmoid(a[j]);
            let f_g = sigmoid(a[h + j]);
            let g_g = a[2 * h + j].tanh();
            let o_g = sigmoid(a[3 * h + j]);
            let c = f_g * c_prev[j] + i_g * g_g;
            let hv = o_g * c.tanh();
            g_row[j] = i_g;
            g_row[h + j] = f_g;
            g_row[2 * h + j] = g_g;
            g_row[3 * h + j] = o_g;
            cells[t * h + j] = c;
            hs[t * h + j] = hv;
        }
        h_prev.copy_from_slice(&hs[t * h..(t + 1) * h]);
        c_prev.copy_from_slice(&cells[t * h..(t + 1) * h]);
    }
    Ok(LstmDirSaved { gates, cells, hs })
}

pub(crate) fn bilstm_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &BiLstmParams,
    params: &ParamSet<S>,
) -> Result<(Tensor<S>, BiLstmSaved<S>), NumericsError> {
    let fwd = lstm_dir_forward(x, &p.fwd, params, false)?;
    let bwd = lstm_dir_forward(x, &p.bwd, params, true)?;
    let n = x.rows();
    let h = params.value(p.fwd.w_hh).cols();
    let mut out = vec![S::ZERO; n * 2 * h];
    for t in 0..n {
        out[t * 2 * h..t * 2 * h + h].copy_from_slice(&fwd.hs[t * h..(t + 1) * h]);
        out[t * 2 * h + h..(t + 1) * 2 * h].copy_from_slice(&bwd.hs[t * h..(t + 1) * h]);
    }
    Ok((Tensor::new(vec![n, 2 * h], out)?, BiLstmSaved { hidden: h, fwd, bwd }))
}

#[allow(clippy::too_many_arguments)]
fn lstm_dir_backward<S: Scalar>(
    d_h: &[S], // n*h upstream, time-indexed
    x: &Tensor<S>,
    p: &LstmDirParams,
    saved: &LstmDirSaved<S>,
    params: &ParamSet<S>,
    grads: &mut GradSet<S>,
    reverse: bool,
    dx: &mut Tensor<S>,
) {
    let (n, d) = (x.rows(), x.cols());
    let w_ih = params.value(p.w_ih);
    let w_hh = params.value(p.w_hh);
    let h = w_hh.cols();
    let order = time_order(n, reverse);

    let mut da_all = vec![S::ZERO; n * 4 * h];
    let mut dh_rec = vec![S::ZERO; h];
    let mut dc_next = vec![S::ZERO; h];

    for k in (0..n).rev() {
        let t = order[k];
        let prev_t = if k > 0 { Some(order[k - 1]) } else { None };
        let g_row = &saved.gates[t * 4 * h..(t + 1) * 4 * h];
        let c_row = &saved.cells[t * h..(t + 1) * h];
        let da = &mut da_all[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let dh_t = d_h[t * h + j] + dh_rec[j];
            let (i_g, f_g, g_g, o_g) = (g_row[j], g_row[h + j], g_row[2 * h + j], g_row[3 * h + j]);
            let tanh_c = c_row[j].tanh();
            let d_o = dh_t * tanh_c;
            let dc = dh_t * o_g * (S::ONE - tanh_c * tanh_c) + dc_next[j];
            let c_prev = match prev_t {
                Some(pt) => saved.cells[pt * h + j],
                None => S::ZERO,
            };
            let d_i = dc * g_g;
            let d_f = dc * c_prev;
            let d_g = dc * i_g;
            dc_next[j] = dc * f_g;
            da[j] = d_i * i_g * (S::ONE - i_g);
            da[h + j] = d_f * f_g * (S::ONE - f_g);
            da[2 * h + j] = d_g * (S::ONE - g_g * g_g);
            da[3 * h + j] = d_o * o_g * (S::ONE - o_g);
        }
        matvec_t_into(&mut dh_rec, w_hh.data(), 4 * h, h, da);
    }

    // Batched parameter gradients over the whole sequence.
    {
        let gw = grads.slot_mut(p.w_ih).data_mut();
        for t in 0..n {
            let da = &da_all[t * 4 * h..(t + 1) * 4 * h];
            let xr = x.row(t);
            for (g, &dv) in da.iter().enumerate() {
                if dv != S::ZERO {
                    axpy(&mut gw[g * d..(g + 1) * d], dv, xr);
                }
            }
        }
    }
    {
        let gw = grads.slot_mut(p.w_hh).data_mut();
        for k in 1..n {
            let t = order[k];
            let prev = order[k - 1];
            let da = &da_all[t * 4 * h..(t + 1) * 4 * h];
            let hp = &saved.hs[prev * h..(prev + 1) * h];
            for (g, &dv) in da.iter().enumerate() {
                if dv != S::ZERO {
                    axpy(&mut gw[g * h..(g + 1) * h], dv, hp);
                }
            }
        }
    }
    {
        let gb = grads.slot_mut(p.bias).data_mut();
        for t in 0..n {
            axpy(gb, S::ONE, &da_all[t * 4 * h..(t + 1) * 4 * h]);
        }
    }
    let dxd = matmul_nn(&da_all, n, 4 * h, w_ih.data(), d);
    for (acc, v) in dx.data_mut().iter_mut().zip(dxd.iter()) {
        *acc += *v;
    }
}

pub(crate) fn bilstm_backward<S: Scalar>(
    d_out: &Tensor<S>, // n x 2h
    x: &Tensor<S>,
    p: &BiLstmParams,
    saved: &BiLstmSaved<S>,
    params: &ParamSet<S>,
    grads: &mut GradSet<S>,
) -> Tensor<S> {
    let n = x.rows();
    let h = saved.hidden;
    let mut d_fwd = vec![S::ZERO; n * h];
    let mut d_bwd = vec![S::ZERO; n * h];
    for t in 0..n {
        d_fwd[t * h..(t + 1) * h].copy_from_slice(&d_out.data()[t * 2 * h..t * 2 * h + h]);
        d_bwd[t * h..(t + 1) * h].copy_from_slice(&d_out.data()[t * 2 * h + h..(t + 1) * 2 * h]);
    }
    let mut dx = Tensor::zeros(x.shape().to_vec());
    lstm_dir_backward(&d_fwd, x, &p.fwd, &saved.fwd, params, grads, false, &mut dx);
    lstm_dir_backward(&d_bwd, x, &p.bwd, &saved.bwd, params, grads, true, &mut dx);
    dx
}

// ---- GRU --------------------------------------------------------------

fn gru_dir_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &GruDirParams,
    params: &ParamSet<S>,
    reverse: bool,
) -> Result<GruDirSaved<S>, NumericsError> {
    let (n, d) = (x.rows(), x.cols());
    let w_ih = params.value(p.w_ih);
    let w_hh = params.value(p.w_hh);
    let b_ih = params.value(p.b_ih);
    let b_hh = params.value(p.b_hh);
    let h = check_rnn_dims("bigru", d, w_ih.shape(), w_hh.shape(), 3)?;
    if b_ih.numel() != 3 * h || b_hh.numel() != 3 * h {
        return Err(NumericsError::Dimension {
            op: "bigru",
            detail: format!("biases {:?}/{:?} (expected [3h])", b_ih.shape(), b_hh.shape()),
        });
    }

    let mut xproj = matmul_nt(x.data(), n, d, w_ih.data(), 3 * h);
    for t in 0..n {
        axpy(&mut xproj[t * 3 * h..(t + 1) * 3 * h], S::ONE, b_ih.data());
    }

    let mut gates = vec![S::ZERO; n * 3 * h];
    let mut hn_pre = vec![S::ZERO; n * h];
    let mut hs = vec![S::ZERO; n * h];
    let mut h_prev = vec![S::ZERO; h];

    let mut hproj = vec![S::ZERO; 3 * h];
    for &t in &time_order(n, reverse) {
        matvec_into(&mut hproj, w_hh.data(), 3 * h, h, &h_prev);
        axpy(&mut hproj, S::ONE, b_hh.data());
        let xp = &xproj[t * 3 * h..(t + 1) * 3 * h];
        let g_row = &mut gates[t * 3 * h..(t + 1) * 3 * h];
        for j in 0..h {
            let r = sigmoid(xp[j] + hproj[j]);
            let z = sigmoid(xp[h + j] + hproj[h + j]);
            let n_g = (xp[2 * h + j] + r * hproj[2 * h + j]).tanh();
            g_row[j] = r;
            g_row[h + j] = z;
            g_row[2 * h + j] = n_g;
            hn_pre[t * h + j] = hproj[2 * h + j];
            hs[t * h + j] = (S::ONE - z) * n_g + z * h_prev[j];
        }
        h_prev.copy_from_slice(&hs[t * h..(t + 1) * h]);
    }
    Ok(GruDirSaved { gates, hn_pre, hs })
}

pub(crate) fn bigru_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &BiGruParams,
    params: &ParamSet<S>,
) -> Result<(Tensor<S>, BiGruSaved<S>), NumericsError> {
    let fwd = gru_dir_forward(x, &p.fwd, params, false)?;
    let bwd = gru_dir_forward(x, &p.bwd, params, true)?;
    let n = x.rows();
    let h = params.value(p.fwd.w_hh).cols();
    let mut out = vec![S::ZERO; n * 2 * h];
    for t in 0..n {
        out[t * 2 * h..t * 2 * h + h].copy_from_slice(&fwd.hs[t * h..(t + 1) * h]);
        out[t * 2 * h + h..(t + 1) * 2 * h].copy_from_slice(&bwd.hs[t * h..(t + 1) * h]);
    }
    Ok((Tensor::new(vec![n, 2 * h], out)?, BiGruSaved { hidden: h, fwd, bwd }))
}

#[allow(clippy::too_many_arguments)]
fn gru_dir_backward<S: Scalar>(
    d_h: &[S],
    x: &Tensor<S>,
    p: &GruDirParams,
    saved: &GruDirSaved<S>,
    params: &ParamSet<S>,
    grads: &mut GradSet<S>,
    reverse: bool,
    dx: &mut Tensor<S>,
) {
    let (n, d) = (x.rows(), x.cols());
    let w_ih = params.value(p.w_ih);
    let w_hh = params.value(p.w_hh);
    let h = w_hh.cols();
    let order = time_order(n, reverse);

    let mut da_ih = vec![S::ZERO; n * 3 * h];
    let mut da_hh = vec![S::ZERO; n * 3 * h];
    let mut dh_rec = vec![S::ZERO; h];
    let mut dh_prev = vec![S::ZERO; h];
    let mut rec = vec![S::ZERO; h];

    for k in (0..n).rev() {
        let t = order[k];
        let prev_t = if k > 0 { Some(order[k - 1]) } else { None };
        let g_row = &saved.gates[t * 3 * h..(t + 1) * 3 * h];
        let dai = &mut da_ih[t * 3 * h..(t + 1) * 3 * h];
        let dah = &mut da_hh[t * 3 * h..(t + 1) * 3 * h];
        for j in 0..h {
            let dh_t = d_h[t * h + j] + dh_rec[j];
            let (r, z, n_g) = (g_row[j], g_row[h + j], g_row[2 * h + j]);
            let h_prev = match prev_t {
                Some(pt) => saved.hs[pt * h + j],
                None => S::ZERO,
            };
            let dz = dh_t * (h_prev - n_g);
            let dn = dh_t * (S::ONE - z);
            dh_prev[j] = dh_t * z;
            let da_n = dn * (S::ONE - n_g * n_g);
            let dr = da_n * saved.hn_pre[t * h + j];
            let da_hn = da_n * r;
            let da_r = dr * r * (S::ONE - r);
            let da_z = dz * z * (S::ONE - z);
            dai[j] = da_r;
            dai[h + j] = da_z;
            dai[2 * h + j] = da_n;
            dah[j] = da_r;
            dah[h + j] = da_z;
            dah[2 * h + j] = da_hn;
        }
        matvec_t_into(&mut rec, w_hh.data(), 3 * h, h, dah);
        for j in 0..h {
            dh_rec[j] = dh_prev[j] + rec[j];
        }
    }

    {
        let gw = grads.slot_mut(p.w_ih).data_mut();
        for t in 0..n {
            let da = &da_ih[t * 3 * h..(t + 1) * 3 * h];
            let xr = x.row(t);
            for (g, &dv) in da.iter().enumerate() {
                if dv != S::ZERO {
                    axpy(&mut gw[g * d..(g + 1) * d], dv, xr);
                }
            }
        }
    }
    {
        let gw = grads.slot_mut(p.w_hh).data_mut();
        for k in 1..n {
            let t = order[k];
            let prev = order[k - 1];
            let da = &da_hh[t * 3 * h..(t + 1) * 3 * h];
            let hp = &saved.hs[prev * h..(prev + 1) * h];
            for (g, &dv) in da.iter().enumerate() {
                if dv != S::ZERO {
                    axpy(&mut gw[g * h..(g + 1) * h], dv, hp);
                }
            }
        }
    }
    {
        let gb = grads.slot_mut(p.b_ih).data_mut();
        for t in 0..n {
            axpy(gb, S::ONE, &da_ih[t * 3 * h..(t + 1) * 3 * h]);
        }
    }
    {
        let gb = grads.slot_mut(p.b_hh).data_mut();
        for t in 0..n {
            axpy(gb, S::ONE, &da_hh[t * 3 * h..(t + 1) * 3 * h]);
        }
    }
    let dxd = matmul_nn(&da_ih, n, 3 * h, w_ih.data(), d);
    for (acc, v) in dx.data_mut().iter_mut().zip(dxd.iter()) {
        *acc += *v;
    }
}

pub(crate) fn bigru_backward<S: Scalar>(
    d_out: &Tensor<S>,
    x: &Tensor<S>,
    p: &BiGruParams,
    saved: &BiGruSaved<S>,
    params: &ParamSet<S>,
    grads: &mut GradSet<S>,
) -> Tensor<S> {
    let n = x.rows();
    let h = saved.hidden;
    let mut d_fwd = vec![S::ZERO; n * h];
    let mut d_bwd = vec![S::ZERO; n * h];
    for t in 0..n {
        d_fwd[t * h..(t + 1) * h].copy_from_slice(&d_out.data()[t * 2 * h..t * 2 * h + h]);
        d_bwd[t * h..(t + 1) * h].copy_from_slice(&d_out.data()[t * 2 * h + h..(t + 1) * 2 * h]);
    }
    let mut dx = Tensor::zeros(x.shape().to_vec());
    gru_dir_backward(&d_fwd, x, &p.fwd, &saved.fwd, params, grads, false, &mut dx);
    gru_dir_backward(&d_bwd, x, &p.bwd, &saved.bwd, params, grads, true, &mut dx);
    dx
}
