use std::time::Instant;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, forward_batch, loss_and_grad, AdamConfig, AdamState, ModelKind, ModelParams, ModelSpec};
use crate::error::{Error, Result};
use crate::fsio::derive_seed;
use crate::motion::{Dataset, OUTPUTS};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop once the epoch loss has not improved for this many epochs; 0 disables.
    pub patience: usize,
    /// Relative loss decrease that counts as an improvement.
    pub min_rel_improvement: f64,
    /// Test RMSE is recorded every this many epochs; 0 disables.
    pub eval_every: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 500,
            patience: 30,
            min_rel_improvement: 1e-4,
            eval_every: 0,
            seed: 1,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs and batch_size must be >= 1".into()));
        }
        if !(self.min_rel_improvement >= 0.0 && self.min_rel_improvement < 1.0) {
            return Err(Error::Validation("min_rel_improvement must be in [0, 1)".into()));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_rmse_deg: Option<[f64; OUTPUTS]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: ModelKind,
    pub seed: u64,
    pub parameters: usize,
    pub train_windows: usize,
    pub test_windows: usize,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (lowest training loss).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_rmse_deg: [f64; OUTPUTS],
    pub test_rmse_deg: Option<[f64; OUTPUTS]>,
    pub wall_time_s: f64,
}

const PREDICT_CHUNK: usize = 1000;

fn check_dataset(spec: &ModelSpec, ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    if ds.n_steps != spec.n_steps {
        return Err(Error::Shape(format!(
            "dataset windows have {} steps, model expects {}",
            ds.n_steps, spec.n_steps
        )));
    }
    Ok(())
}

/// Predicted `(theta, phi)` in radians for every window of `ds`.
pub fn predict(spec: &ModelSpec, params: &ModelParams, ds: &Dataset, exec: Exec) -> Result<Array2<f64>> {
    check_dataset(spec, ds)?;
    let m = ds.len();
    let parts = exec.map_range(m.div_ceil(PREDICT_CHUNK), |c| {
        let r = c * PREDICT_CHUNK..((c + 1) * PREDICT_CHUNK).min(m);
        forward_batch(spec, params, ds.inputs.slice(s![r, .., ..]))
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let mut out = ndarray::concatenate(Axis(0), &views).expect("equal widths");
    for mut row in out.rows_mut() {
        let y = ds.scaler.denormalize_target([row[0], row[1]]);
        row[0] = y[0];
        row[1] = y[1];
    }
    Ok(out)
}

/// Per-DoF RMSE in degrees after denormalization.
pub fn evaluate(spec: &ModelSpec, params: &ModelParams, ds: &Dataset) -> Result<[f64; OUTPUTS]> {
    let pred = predict(spec, params, ds, Exec::default())?;
    Ok(rmse_deg(&pred, &ds.raw_targets()))
}

pub(crate) fn rmse_deg(pred: &Array2<f64>, truth: &Array2<f64>) -> [f64; OUTPUTS] {
    std::array::from_fn(|k| {
        let sq: f64 = pred
            .column(k)
            .iter()
            .zip(truth.column(k))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (sq / pred.nrows() as f64).sqrt().to_degrees()
    })
}

/// Mini-batch Adam training with seeded init and shuffling. The returned
/// parameters are those of the epoch with the lowest training loss.
pub fn train(
    spec: &ModelSpec,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<(ModelParams, TrainReport)> {
    spec.validate()?;
    cfg.validate()?;
    check_dataset(spec, train_set)?;
    if let Some(t) = test_set {
        check_dataset(spec, t)?;
    }
    let start = Instant::now();
    let mut params = ModelParams::init(spec, derive_seed(cfg.seed, 0));
    let mut adam = AdamState::new(&params, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let m = train_set.len();
    let mut order: Vec<usize> = (0..m).collect();

    let mut records = Vec::new();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = train_set.inputs.select(Axis(0), batch);
            let y = train_set.targets.select(Axis(0), batch);
            let (loss, grads) = loss_and_grad(spec, &params, x.view(), y.view(), exec)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            adam_step(&mut adam, &mut params, &grads)?;
            total += loss * batch.len() as f64;
        }
        let loss = total / m as f64;
        if !loss.is_finite() || !params.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        let test_rmse_deg = match test_set {
            Some(t) if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 => Some(evaluate(spec, &params, t)?),
            _ => None,
        };
        log::info!(
            "{} epoch {epoch} loss {loss:.6e}{}",
            spec.kind,
            match test_rmse_deg {
                Some([a, b]) => format!(" test rmse {a:.3}/{b:.3} deg"),
                None => String::new(),
            }
        );
        records.push(EpochRecord {
            epoch,
            loss,
            test_rmse_deg,
        });
        if loss < best.0 * (1.0 - cfg.min_rel_improvement) {
            best = (loss, epoch, params.clone());
        } else if cfg.patience > 0 && epoch - best.1 >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    let (_, best_epoch, best_params) = best;
    let report = TrainReport {
        model: spec.kind,
        seed: cfg.seed,
        parameters: spec.parameter_count(),
        train_windows: m,
        test_windows: test_set.map_or(0, Dataset::len),
        epochs: records,
        best_epoch,
        stopped_early,
        train_rmse_deg: evaluate(spec, &best_params, train_set)?,
        test_rmse_deg: test_set.map(|t| evaluate(spec, &best_params, t)).transpose()?,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((best_params, report))
}
