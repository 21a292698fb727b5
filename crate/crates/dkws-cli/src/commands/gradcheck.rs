use anyhow::{bail, Result};
use clap::Args;
use rand::Rng;

use dkws::model::{LanguageVocab, Model, ModelConfig, ModelError, Query};
use dkws::numerics::tape::{Mode, Tape};
use dkws::numerics::{grad_check, GradCheckConfig, LossConfig, NumericsError, ParamSet, Tensor};

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Failure threshold on the max relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn rand_tensor(shape: Vec<usize>, scale: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect();
    Tensor::new(shape, data).expect("shape")
}

fn full_model_check(seed: u64) -> Result<f64> {
    let config = ModelConfig {
        feature_dim: 5,
        embedding_dim: 4,
        query_gru_layers: 2,
        query_gru_width: 3,
        doc_lstm_layers: 2,
        doc_lstm_width: 4,
        projection_dim: 6,
        dropout: 0.0,
        decimate_after: vec![1, 2],
        languages: vec![LanguageVocab { id: "toy".into(), graphemes: "abcdefgh".chars().collect() }],
    };
    let model: Model<f64> = Model::init(config.clone(), seed)?;
    let mut rng = dkws::rng::derive(seed, "gradcheck-cli");
    let feats = rand_tensor(vec![13, 5], 1.0, &mut rng);
    let norm = model.feature_norm.clone();
    let loss_cfg = LossConfig::new(5.0, 0.7, 1e-9)?;
    let base = model.params.clone();
    let err = grad_check(
        move |params, tape: &mut Tape<f64>| {
            let view = Model::assemble(config.clone(), params.clone(), norm.clone())
                .map_err(to_numerics)?;
            let e_q = view.encode_query_tape(&Query::new("toy", "fade ch"), tape).map_err(to_numerics)?;
            let enc = view
                .encode_document_tape(&feats, Mode::Eval, None, tape)
                .map_err(to_numerics)?;
            let logits = tape.matvec(enc, e_q)?;
            let z = tape.sigmoid_clamp(logits, 1e-9);
            tape.masked_weighted_bce(z, &[1, 0, 1], loss_cfg)
        },
        &base,
        GradCheckConfig { seed, ..Default::default() },
    )?;
    Ok(err)
}

fn to_numerics(e: ModelError) -> NumericsError {
    match e {
        ModelError::Numerics(n) => n,
        other => NumericsError::Config(other.to_string()),
    }
}

pub fn run(args: GradcheckArgs) -> Result<()> {
    let mut rng = dkws::rng::derive(args.seed, "gradcheck-layers");
    let mut failures = 0;
    let mut check = |name: &str, err: f64, tol: f64| {
        let ok = err <= tol;
        println!("{} {name}: max relative error {err:.3e} (tolerance {tol:.0e})",
            if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // affine only: exactly linear, essentially machine precision
    let mut params = ParamSet::<f64>::new();
    params.insert("w", rand_tensor(vec![4, 3], 0.8, &mut rng));
    params.insert("b", rand_tensor(vec![4], 0.4, &mut rng));
    let x = rand_tensor(vec![6, 3], 1.0, &mut rng);
    let err = grad_check(
        move |p, tape: &mut Tape<f64>| {
            let xv = tape.input(x.clone());
            let y = tape.affine(xv, p.id("w").unwrap(), p.id("b").unwrap(), p)?;
            Ok(tape.sum_all(y))
        },
        &params,
        GradCheckConfig { seed: args.seed, ..Default::default() },
    )?;
    check("affine", err, 1e-8);

    check("full model", full_model_check(args.seed)?, args.tolerance);

    if failures > 0 {
        bail!("{failures} gradient check(s) failed");
    }
    Ok(())
}
