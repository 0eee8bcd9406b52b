use ndarray::{Array2, Array3};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{backward, forward_batch, mse_loss, ModelKind, ModelParams, ModelSpec};
use crate::error::Result;

pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub model: ModelKind,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Small configuration of `kind` used for gradient checks.
pub fn grad_check_spec(kind: ModelKind) -> ModelSpec {
    ModelSpec {
        lstm_hidden: 4,
        fc_widths: if kind == ModelKind::BaselineMLP {
            vec![5]
        } else {
            vec![6, 5]
        },
        ..ModelSpec::new(kind, 3)
    }
}

/// Compares analytic gradients with central finite differences on a small
/// model with parameters drawn from `±0.5`. Error per tensor is
/// `|a - n| / max(|a|, |n|)` in the Euclidean norm.
pub fn grad_check(kind: ModelKind, seed: u64) -> Result<GradCheckReport> {
    let spec = grad_check_spec(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new_inclusive(-0.5, 0.5).expect("finite bounds");
    let mut params = ModelParams::zeros(&spec);
    for t in &mut params.tensors {
        t.mapv_inplace(|_| u.sample(&mut rng));
    }
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("finite bounds");
    let m = 4;
    let x = Array3::from_shape_simple_fn((m, spec.n_steps, spec.input_dim), || unit.sample(&mut rng));
    let y = Array2::from_shape_simple_fn((m, spec.output_dim), || unit.sample(&mut rng));

    let (_, analytic) = backward(&spec, &params, x.view(), y.view())?;
    let loss_at = |p: &ModelParams| -> Result<f64> { mse_loss(forward_batch(&spec, p, x.view())?.view(), y.view()) };

    let mut tensors = Vec::new();
    for (ti, (name, _, _)) in spec.tensor_layout().into_iter().enumerate() {
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for idx in 0..params.tensors[ti].len() {
            let orig = *params.tensors[ti].iter().nth(idx).expect("in range");
            let set = |p: &mut ModelParams, v: f64| {
                *p.tensors[ti].iter_mut().nth(idx).expect("in range") = v;
            };
            set(&mut params, orig + GRAD_CHECK_STEP);
            let plus = loss_at(&params)?;
            set(&mut params, orig - GRAD_CHECK_STEP);
            let minus = loss_at(&params)?;
            set(&mut params, orig);
            let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
            let a = *analytic.tensors[ti].iter().nth(idx).expect("in range");
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = a2.sqrt().max(n2.sqrt());
        let rel_error = if denom < 1e-300 { 0.0 } else { diff2.sqrt() / denom };
        tensors.push(TensorCheck { name, rel_error });
    }
    let max_rel_error = tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        model: kind,
        tensors,
        max_rel_error,
        passed: max_rel_error < GRAD_CHECK_TOLERANCE,
    })
}
