//! Central finite-difference verification of the analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::scalar::Scalar;
use super::tape::{Tape, ValueId};
use super::{NumericsError, ParamId, ParamSet};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub epsilon: f64,
    /// Cap on the number of probed coordinates (randomly subsampled beyond it).
    pub max_coords: usize,
    /// Relative-error denominator floor; below this scale the comparison is
    /// effectively absolute, so noise-magnitude gradients cannot dominate.
    pub denom_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { epsilon: 1e-5, max_coords: 400, denom_floor: 1e-4, seed: 0 }
    }
}

/// Compare analytic gradients of a scalar-valued model against central finite
/// differences `(f(p+eps) - f(p-eps)) / 2 eps` on a subsample of coordinates.
/// Returns the maximum relative error. Use 64-bit parameters and disable
/// dropout in the model function; stochastic forwards make the comparison
/// meaningless.
pub fn grad_check<S, F>(
    model_fn: F,
    params: &ParamSet<S>,
    cfg: GradCheckConfig,
) -> Result<f64, NumericsError>
where
    S: Scalar,
    F: Fn(&ParamSet<S>, &mut Tape<S>) -> Result<ValueId, NumericsError>,
{
    let mut tape = Tape::new();
    let root = model_fn(params, &mut tape)?;
    let grads = tape.backward(root, params)?;

    let mut coords: Vec<(ParamId, usize)> = params
        .iter()
        .flat_map(|(id, e)| (0..e.value.numel()).map(move |j| (id, j)))
        .collect();
    if coords.len() > cfg.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        coords.shuffle(&mut rng);
        coords.truncate(cfg.max_coords);
    }

    let eps = cfg.epsilon;
    let mut probed = params.clone();
    let mut max_rel = 0.0f64;
    for (id, j) in coords {
        let orig = probed.value(id).data()[j];
        probed.value_mut(id).data_mut()[j] = orig + S::from_f64(eps);
        let f_plus = eval(&model_fn, &probed)?;
        probed.value_mut(id).data_mut()[j] = orig - S::from_f64(eps);
        let f_minus = eval(&model_fn, &probed)?;
        probed.value_mut(id).data_mut()[j] = orig;

        let fd = (f_plus - f_minus) / (2.0 * eps);
        let analytic = grads.slot(id).data()[j].to_f64();
        let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(cfg.denom_floor);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

fn eval<S, F>(model_fn: &F, params: &ParamSet<S>) -> Result<f64, NumericsError>
where
    S: Scalar,
    F: Fn(&ParamSet<S>, &mut Tape<S>) -> Result<ValueId, NumericsError>,
{
    let mut tape = Tape::new();
    let root = model_fn(params, &mut tape)?;
    Ok(tape.value(root).item().to_f64())
}
