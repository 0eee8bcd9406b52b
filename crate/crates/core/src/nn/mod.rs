//! Joint-angle regressors: LNNet (one LSTM per sensor, late fusion), ENNet
//! (one LSTM over all sensors, early fusion) and a shallow baseline MLP.
//! Everything runs on batched `f64` matrices with hand-written BPTT.

mod gradcheck;
mod lstm;
mod model_file;
mod optim;
mod train;

use std::fmt;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::OUTPUTS;
use crate::par::Exec;
use crate::suitsim::CHANNELS;

pub use gradcheck::{grad_check, GradCheckReport};
pub use lstm::{lstm_backward, lstm_forward, lstm_forward_batch, LstmCache, LstmGrads};
pub use model_file::{load_model, save_model, Model, MODEL_MAGIC, MODEL_VERSION};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use train::{evaluate, predict, train, EpochRecord, TrainConfig, TrainReport};

/// Windows per gradient work item. Fixed so the reduction order, and thus
/// the result, does not depend on how items are scheduled.
pub const GRAD_CHUNK: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    LNNet,
    ENNet,
    BaselineMLP,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::LNNet, ModelKind::ENNet, ModelKind::BaselineMLP];

    pub fn slug(self) -> &'static str {
        match self {
            ModelKind::LNNet => "lnnet",
            ModelKind::ENNet => "ennet",
            ModelKind::BaselineMLP => "mlp",
        }
    }

    pub fn from_slug(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.slug() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model '{s}' (lnnet, ennet, mlp)")))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::LNNet => "LNNet",
            ModelKind::ENNet => "ENNet",
            ModelKind::BaselineMLP => "ANN",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Hidden size of each LSTM; unused by the baseline.
    pub lstm_hidden: usize,
    /// Hidden layer widths before the linear 2-unit head.
    pub fc_widths: Vec<usize>,
    pub n_steps: usize,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, n_steps: usize) -> Self {
        let (lstm_hidden, fc_widths) = match kind {
            ModelKind::LNNet => (32, vec![512, 256, 128, 64, 32]),
            ModelKind::ENNet => (64, vec![512, 256, 128, 64, 32]),
            ModelKind::BaselineMLP => (0, vec![25]),
        };
        Self {
            kind,
            lstm_hidden,
            fc_widths,
            n_steps,
            input_dim: CHANNELS,
            output_dim: OUTPUTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != CHANNELS || self.output_dim != OUTPUTS {
            return Err(Error::Validation(format!(
                "model must map {CHANNELS} inputs to {OUTPUTS} outputs"
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::Validation("n_steps must be >= 1".into()));
        }
        if self.fc_widths.contains(&0) {
            return Err(Error::Validation("fc widths must be positive".into()));
        }
        match self.kind {
            ModelKind::BaselineMLP if self.fc_widths.len() != 1 => {
                Err(Error::Validation("the baseline has exactly one hidden layer".into()))
            }
            ModelKind::LNNet | ModelKind::ENNet if self.lstm_hidden == 0 => {
                Err(Error::Validation("lstm_hidden must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    fn encoders(&self) -> usize {
        match self.kind {
            ModelKind::LNNet => CHANNELS,
            ModelKind::ENNet => 1,
            ModelKind::BaselineMLP => 0,
        }
    }

    fn encoder_input(&self) -> usize {
        match self.kind {
            ModelKind::LNNet => 1,
            _ => self.input_dim,
        }
    }

    fn head_input(&self) -> usize {
        match self.kind {
            ModelKind::BaselineMLP => self.input_dim,
            _ => self.encoders() * self.lstm_hidden,
        }
    }

    fn hidden_activation(&self) -> Activation {
        match self.kind {
            ModelKind::BaselineMLP => Activation::Tanh,
            _ => Activation::Relu,
        }
    }

    /// Names, shapes and init fan-in of every parameter tensor, in storage order.
    pub fn tensor_layout(&self) -> Vec<(String, (usize, usize), usize)> {
        let mut out = Vec::new();
        let (d, h) = (self.encoder_input(), self.lstm_hidden);
        for e in 0..self.encoders() {
            out.push((format!("lstm{e}.W"), (d, 4 * h), d + h));
            out.push((format!("lstm{e}.U"), (h, 4 * h), d + h));
            out.push((format!("lstm{e}.b"), (1, 4 * h), d + h));
        }
        let mut width = self.head_input();
        let mut widths = self.fc_widths.clone();
        widths.push(self.output_dim);
        let last = widths.len() - 1;
        for (l, &w) in widths.iter().enumerate() {
            let name = if l == last {
                "head".to_string()
            } else {
                format!("fc{l}")
            };
            out.push((format!("{name}.W"), (width, w), width));
            out.push((format!("{name}.b"), (1, w), width));
            width = w;
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_layout().iter().map(|(_, (r, c), _)| r * c).sum()
    }
}

#[derive(Debug, Clone, Copy)]
enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Linear => {}
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the output `a`.
    fn backprop(self, grad: &mut Array2<f64>, a: &Array2<f64>) {
        match self {
            Activation::Relu => grad.zip_mut_with(a, |g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_mut_with(a, |g, &a| *g *= 1.0 - a * a),
            Activation::Linear => {}
        }
    }
}

/// Parameter tensors in `ModelSpec::tensor_layout` order. Gradients and Adam
/// moments use the same container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: Vec<Array2<f64>>,
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            tensors: spec
                .tensor_layout()
                .into_iter()
                .map(|(_, shape, _)| Array2::zeros(shape))
                .collect(),
        }
    }

    /// Uniform in `±1/sqrt(fan_in)` per tensor.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            tensors: spec
                .tensor_layout()
                .into_iter()
                .map(|(_, shape, fan_in)| {
                    let a = 1.0 / (fan_in as f64).sqrt();
                    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
                    Array2::from_shape_simple_fn(shape, || dist.sample(&mut rng))
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self.tensors.iter().map(|t| Array2::zeros(t.dim())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.iter())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        let layout = spec.tensor_layout();
        if layout.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "{} tensors, {} expects {}",
                self.tensors.len(),
                spec.kind,
                layout.len()
            )));
        }
        for ((name, shape, _), t) in layout.iter().zip(&self.tensors) {
            if t.dim() != *shape {
                return Err(Error::Shape(format!("{name} is {:?}, expected {shape:?}", t.dim())));
            }
        }
        Ok(())
    }

    fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }
}

struct DenseCache {
    /// `acts[0]` is the stack input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Array2<f64>>,
}

struct ForwardCache {
    encoders: Vec<LstmCache>,
    dense: DenseCache,
}

fn encoder_inputs(spec: &ModelSpec, x: &ArrayView3<f64>, e: usize) -> Vec<Array2<f64>> {
    (0..spec.n_steps)
        .map(|t| match spec.kind {
            ModelKind::LNNet => x.slice(s![.., t, e..e + 1]).to_owned(),
            _ => x.slice(s![.., t, ..]).to_owned(),
        })
        .collect()
}

fn check_batch(spec: &ModelSpec, params: &ModelParams, x: &ArrayView3<f64>) -> Result<()> {
    params.check(spec)?;
    let (m, n, d) = x.dim();
    if n != spec.n_steps || d != spec.input_dim {
        return Err(Error::Shape(format!(
            "window batch ({m}, {n}, {d}), model expects (_, {}, {})",
            spec.n_steps, spec.input_dim
        )));
    }
    if m == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

fn forward_cached(spec: &ModelSpec, params: &ModelParams, x: ArrayView3<f64>) -> Result<(Array2<f64>, ForwardCache)> {
    check_batch(spec, params, &x)?;
    let p = &params.tensors;
    let mut encoders = Vec::with_capacity(spec.encoders());
    let head_in = if spec.kind == ModelKind::BaselineMLP {
        x.index_axis(Axis(1), spec.n_steps - 1).to_owned()
    } else {
        let mut blocks = Vec::with_capacity(spec.encoders());
        for e in 0..spec.encoders() {
            let (w, u, b) = (&p[3 * e], &p[3 * e + 1], &p[3 * e + 2]);
            let (h, cache) = lstm_forward_batch(w.view(), u.view(), b.view(), encoder_inputs(spec, &x, e))?;
            blocks.push(h);
            encoders.push(cache);
        }
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        ndarray::concatenate(Axis(1), &views).expect("equal row counts")
    };

    let dense_params = &p[3 * spec.encoders()..];
    let layers = dense_params.len() / 2;
    let mut acts = Vec::with_capacity(layers + 1);
    acts.push(head_in);
    for l in 0..layers {
        let mut z = acts[l].dot(&dense_params[2 * l]);
        z += &dense_params[2 * l + 1];
        let act = if l + 1 == layers {
            Activation::Linear
        } else {
            spec.hidden_activation()
        };
        act.apply(&mut z);
        acts.push(z);
    }
    let out = acts[layers].clone();
    Ok((
        out,
        ForwardCache {
            encoders,
            dense: DenseCache { acts },
        },
    ))
}

/// Predictions `(m, 2)` in normalized units for a window batch `(m, n, 4)`.
pub fn forward_batch(spec: &ModelSpec, params: &ModelParams, x: ArrayView3<f64>) -> Result<Array2<f64>> {
    forward_cached(spec, params, x).map(|(y, _)| y)
}

/// Prediction for one `n x 4` window, normalized units.
pub fn forward(spec: &ModelSpec, params: &ModelParams, window: ArrayView2<f64>) -> Result<[f64; OUTPUTS]> {
    let y = forward_batch(spec, params, window.insert_axis(Axis(0)))?;
    Ok([y[[0, 0]], y[[0, 1]]])
}

fn check_targets(pred: &ArrayView2<f64>, target: &ArrayView2<f64>) -> Result<()> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "pred {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.nrows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

/// Mean over the batch of the squared error norm.
pub fn mse_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    check_targets(&pred, &target)?;
    let sq: f64 = pred.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / pred.nrows() as f64)
}

/// Loss contribution and gradient of rows `x` when the mean runs over `m_total`.
fn partial_grad(
    spec: &ModelSpec,
    params: &ModelParams,
    x: ArrayView3<f64>,
    y: ArrayView2<f64>,
    m_total: usize,
) -> Result<(f64, ModelParams)> {
    let (pred, cache) = forward_cached(spec, params, x)?;
    check_targets(&pred.view(), &y)?;
    let scale = 1.0 / m_total as f64;
    let diff = &pred - &y;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() * scale;
    let mut grad = diff * (2.0 * scale);

    let p = &params.tensors;
    let mut g = params.zeros_like();
    let base = 3 * spec.encoders();
    let layers = (p.len() - base) / 2;
    let acts = &cache.dense.acts;
    for l in (0..layers).rev() {
        if l + 1 < layers {
            spec.hidden_activation().backprop(&mut grad, &acts[l + 1]);
        }
        g.tensors[base + 2 * l] = acts[l].t().dot(&grad);
        g.tensors[base + 2 * l + 1] = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
        if l > 0 || spec.encoders() > 0 {
            grad = grad.dot(&p[base + 2 * l].t());
        }
    }

    let h = spec.lstm_hidden;
    for (e, enc) in cache.encoders.iter().enumerate() {
        let dh = grad.slice(s![.., e * h..(e + 1) * h]).to_owned();
        let lg = lstm_backward(p[3 * e].view(), p[3 * e + 1].view(), enc, dh);
        g.tensors[3 * e] = lg.w;
        g.tensors[3 * e + 1] = lg.u;
        g.tensors[3 * e + 2] = lg.b;
    }
    Ok((loss, g))
}

/// Loss and exact gradient (BPTT) over a window batch.
pub fn backward(
    spec: &ModelSpec,
    params: &ModelParams,
    x: ArrayView3<f64>,
    y: ArrayView2<f64>,
) -> Result<(f64, ModelParams)> {
    partial_grad(spec, params, x, y, x.dim().0)
}

/// Same as [`backward`], split into fixed chunks of [`GRAD_CHUNK`] windows
/// whose results are summed in chunk order.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ModelParams,
    x: ArrayView3<f64>,
    y: ArrayView2<f64>,
    exec: Exec,
) -> Result<(f64, ModelParams)> {
    let m = x.dim().0;
    if m == 0 || y.nrows() != m {
        return Err(Error::Shape(format!("batch of {m} windows with {} targets", y.nrows())));
    }
    let chunks = m.div_ceil(GRAD_CHUNK);
    let parts = exec.map_range(chunks, |c| {
        let r = c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(m);
        partial_grad(spec, params, x.slice(s![r.clone(), .., ..]), y.slice(s![r, ..]), m)
    });
    let mut iter = parts.into_iter();
    let (mut loss, mut grad) = iter.next().expect("at least one chunk")?;
    for part in iter {
        let (l, g) = part?;
        loss += l;
        grad.add_assign(&g);
    }
    Ok((loss, grad))
}

/// Stacks windows into a batch array.
pub fn stack_windows(windows: &[Array2<f64>]) -> Result<Array3<f64>> {
    let views: Vec<_> = windows.iter().map(|w| w.view()).collect();
    ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn small(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            lstm_hidden: 3,
            fc_widths: if kind == ModelKind::BaselineMLP {
                vec![5]
            } else {
                vec![4, 3]
            },
            ..ModelSpec::new(kind, 2)
        }
    }

    fn window(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Uniform::new(-1.0, 1.0).unwrap();
        Array2::from_shape_simple_fn((n, 4), || d.sample(&mut rng))
    }

    #[test]
    fn default_specs() {
        let l = ModelSpec::new(ModelKind::LNNet, 10);
        assert_eq!(l.head_input(), 128);
        assert_eq!(l.tensor_layout()[0].1, (1, 128));
        let e = ModelSpec::new(ModelKind::ENNet, 10);
        assert_eq!(e.tensor_layout()[0].1, (4, 256));
        assert_eq!(e.tensor_layout().len(), 3 + 12);
        let b = ModelSpec::new(ModelKind::BaselineMLP, 10);
        assert_eq!(b.parameter_count(), 4 * 25 + 25 + 25 * 2 + 2);
        for k in ModelKind::ALL {
            ModelSpec::new(k, 10).validate().unwrap();
            assert_eq!(ModelKind::from_slug(k.slug()).unwrap(), k);
        }
        assert!(ModelSpec {
            fc_widths: vec![3, 3],
            ..b
        }
        .validate()
        .is_err());
    }

    #[test]
    fn zero_params_predict_zero() {
        for k in ModelKind::ALL {
            let spec = small(k);
            let y = forward(&spec, &ModelParams::zeros(&spec), window(2, 1).view()).unwrap();
            assert_eq!(y, [0.0, 0.0]);
        }
    }

    #[test]
    fn mse_examples() {
        let z = array![[0.0, 0.0]];
        assert_eq!(mse_loss(z.view(), z.view()).unwrap(), 0.0);
        assert_eq!(mse_loss(array![[1.0, 0.0]].view(), z.view()).unwrap(), 1.0);
        let p = array![[1.0, 1.0], [0.0, 2.0]];
        assert_eq!(mse_loss(p.view(), Array2::zeros((2, 2)).view()).unwrap(), 3.0);
        assert!(mse_loss(Array2::zeros((0, 2)).view(), Array2::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn window_shape_is_enforced() {
        let spec = small(ModelKind::ENNet);
        let p = ModelParams::init(&spec, 3);
        assert!(matches!(forward(&spec, &p, window(3, 1).view()), Err(Error::Shape(_))));
        let other = small(ModelKind::LNNet);
        assert!(forward(&other, &p, window(2, 1).view()).is_err());
    }

    // Oracle: an independent numpy forward pass at n=2, widths (4,3), hidden 3,
    // with the parameters dumped from `ModelParams::init(spec, 11)`.
    #[test]
    fn golden_forward() {
        for (kind, expected) in [
            (ModelKind::LNNet, GOLDEN_LN),
            (ModelKind::ENNet, GOLDEN_EN),
            (ModelKind::BaselineMLP, GOLDEN_MLP),
        ] {
            let spec = small(kind);
            let p = ModelParams::init(&spec, 11);
            let window = array![[0.3, -0.2, 0.9, -1.1], [0.05, 0.7, -0.4, 0.25]];
            let y = forward(&spec, &p, window.view()).unwrap();
            for k in 0..2 {
                assert!((y[k] - expected[k]).abs() < 1e-14, "{kind}: {y:?} vs {expected:?}");
            }
        }
    }
    const GOLDEN_LN: [f64; 2] = [0.08002741242944869, 0.3029423556110421];
    const GOLDEN_EN: [f64; 2] = [-0.44161479454552127, 0.34729957634082753];
    const GOLDEN_MLP: [f64; 2] = [-0.11295300972801996, -0.21006579800802982];

    #[test]
    fn lnnet_identical_channels_give_identical_blocks() {
        let spec = small(ModelKind::LNNet);
        let mut p = ModelParams::init(&spec, 5);
        for e in 1..4 {
            for j in 0..3 {
                p.tensors[3 * e + j] = p.tensors[j].clone();
            }
        }
        let col = array![[0.4], [-0.9]];
        let x = ndarray::concatenate(Axis(1), &[col.view(); 4]).unwrap();
        let (_, cache) = forward_cached(&spec, &p, x.view().insert_axis(Axis(0))).unwrap();
        let enc = &cache.dense.acts[0];
        for e in 1..4 {
            assert_eq!(enc.slice(s![.., 0..3]), enc.slice(s![.., 3 * e..3 * e + 3]));
        }
    }

    #[test]
    fn zero_error_batch_has_zero_gradient() {
        for k in ModelKind::ALL {
            let spec = small(k);
            let p = ModelParams::init(&spec, 2);
            let x = stack_windows(&[window(2, 1), window(2, 2)]).unwrap();
            let y = forward_batch(&spec, &p, x.view()).unwrap();
            let (loss, g) = backward(&spec, &p, x.view(), y.view()).unwrap();
            assert_eq!(loss, 0.0);
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn duplicated_batch_keeps_gradient() {
        let spec = small(ModelKind::ENNet);
        let p = ModelParams::init(&spec, 4);
        let w: Vec<_> = (0..3).map(|i| window(2, i)).collect();
        let x = stack_windows(&w).unwrap();
        let y = Array2::from_elem((3, 2), 0.3);
        let (l1, g1) = backward(&spec, &p, x.view(), y.view()).unwrap();
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let y2 = ndarray::concatenate(Axis(0), &[y.view(), y.view()]).unwrap();
        let (l2, g2) = backward(&spec, &p, x2.view(), y2.view()).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn chunked_paths_agree_bitwise() {
        let spec = small(ModelKind::LNNet);
        let p = ModelParams::init(&spec, 9);
        let w: Vec<_> = (0..137).map(|i| window(2, i)).collect();
        let x = stack_windows(&w).unwrap();
        let y = Array2::from_shape_fn((137, 2), |(i, j)| (i as f64 * 0.01) - j as f64);
        let (ls, gs) = loss_and_grad(&spec, &p, x.view(), y.view(), Exec::Sequential).unwrap();
        let (lp, gp) = loss_and_grad(&spec, &p, x.view(), y.view(), Exec::default()).unwrap();
        assert_eq!(ls.to_bits(), lp.to_bits());
        assert_eq!(gs, gp);
        let (lb, gb) = backward(&spec, &p, x.view(), y.view()).unwrap();
        assert!((lb - ls).abs() < 1e-12);
        for (a, b) in gb.iter().zip(gs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn batch_order_does_not_change_loss(seed in 0u64..1000, rot in 1usize..6) {
            let spec = small(ModelKind::ENNet);
            let p = ModelParams::init(&spec, seed);
            let w: Vec<_> = (0..6).map(|i| window(2, seed + i)).collect();
            let y = Array2::from_shape_fn((6, 2), |(i, j)| (i + j) as f64 * 0.1);
            let x = stack_windows(&w).unwrap();
            let l1 = mse_loss(forward_batch(&spec, &p, x.view()).unwrap().view(), y.view()).unwrap();
            let idx: Vec<usize> = (0..6).map(|i| (i + rot) % 6).collect();
            let xs = x.select(Axis(0), &idx);
            let ys = y.select(Axis(0), &idx);
            let l2 = mse_loss(forward_batch(&spec, &p, xs.view()).unwrap().view(), ys.view()).unwrap();
            prop_assert!((l1 - l2).abs() <= 1e-14 * l1.max(1.0));
        }

        #[test]
        fn lnnet_channel_permutation_permutes_blocks(seed in 0u64..1000, perm in Just([2usize, 0, 3, 1])) {
            let spec = small(ModelKind::LNNet);
            let mut p = ModelParams::init(&spec, seed);
            for e in 1..4 {
                for j in 0..3 {
                    p.tensors[3 * e + j] = p.tensors[j].clone();
                }
            }
            let x = window(2, seed);
            let xp = x.select(Axis(1), &perm);
            let (_, c1) = forward_cached(&spec, &p, x.view().insert_axis(Axis(0))).unwrap();
            let (_, c2) = forward_cached(&spec, &p, xp.view().insert_axis(Axis(0))).unwrap();
            let (a, b) = (&c1.dense.acts[0], &c2.dense.acts[0]);
            for (k, &src) in perm.iter().enumerate() {
                prop_assert_eq!(b.slice(s![.., 3 * k..3 * k + 3]), a.slice(s![.., 3 * src..3 * src + 3]));
            }
        }
    }
}
