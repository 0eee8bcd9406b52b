//! Batched LSTM encoder with cached activations for backpropagation through
//! time. Gate columns are laid out `[i | f | g | o]`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    xs: Vec<Array2<f64>>,
    /// `hs[t]` is the state entering step `t`; `hs[0]` is zero.
    hs: Vec<Array2<f64>>,
    cs: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
    tanh_c: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array2<f64>,
}

fn check_shapes(w: &ArrayView2<f64>, u: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<usize> {
    let h = u.nrows();
    if u.ncols() != 4 * h || w.ncols() != 4 * h || b.dim() != (1, 4 * h) || h == 0 {
        return Err(Error::Shape(format!(
            "LSTM weights W{:?} U{:?} b{:?} are inconsistent",
            w.dim(),
            u.dim(),
            b.dim()
        )));
    }
    Ok(h)
}

/// Runs the recurrence over `xs` (one `(batch, d)` matrix per step) from zero
/// state and returns the final hidden state `(batch, h)`.
pub fn lstm_forward_batch(
    w: ArrayView2<f64>,
    u: ArrayView2<f64>,
    b: ArrayView2<f64>,
    xs: Vec<Array2<f64>>,
) -> Result<(Array2<f64>, LstmCache)> {
    let h = check_shapes(&w, &u, &b)?;
    let Some(first) = xs.first() else {
        return Err(Error::Shape("empty input sequence".into()));
    };
    let m = first.nrows();
    if let Some(x) = xs.iter().find(|x| x.dim() != (m, w.nrows())) {
        return Err(Error::Shape(format!(
            "LSTM step input {:?}, expected ({m}, {})",
            x.dim(),
            w.nrows()
        )));
    }
    let n = xs.len();
    let mut cache = LstmCache {
        hs: Vec::with_capacity(n + 1),
        cs: Vec::with_capacity(n + 1),
        gates: Vec::with_capacity(n),
        tanh_c: Vec::with_capacity(n),
        xs,
    };
    cache.hs.push(Array2::zeros((m, h)));
    cache.cs.push(Array2::zeros((m, h)));
    for t in 0..n {
        let mut z = cache.xs[t].dot(&w) + cache.hs[t].dot(&u);
        z += &b;
        z.slice_mut(s![.., 0..2 * h]).mapv_inplace(sigmoid);
        z.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(f64::tanh);
        z.slice_mut(s![.., 3 * h..]).mapv_inplace(sigmoid);

        let mut c = Array2::zeros((m, h));
        Zip::from(&mut c)
            .and(&cache.cs[t])
            .and(z.slice(s![.., 0..h]))
            .and(z.slice(s![.., h..2 * h]))
            .and(z.slice(s![.., 2 * h..3 * h]))
            .for_each(|c, &cp, &i, &f, &g| *c = f * cp + i * g);
        let tc = c.mapv(f64::tanh);
        let hn = &z.slice(s![.., 3 * h..]) * &tc;
        cache.gates.push(z);
        cache.cs.push(c);
        cache.tanh_c.push(tc);
        cache.hs.push(hn);
    }
    let out = cache.hs[n].clone();
    Ok((out, cache))
}

/// Single-sequence convenience: `seq` is `n x d`, returns `h_n`.
pub fn lstm_forward(
    w: ArrayView2<f64>,
    u: ArrayView2<f64>,
    b: ArrayView2<f64>,
    seq: ArrayView2<f64>,
) -> Result<(Array1<f64>, LstmCache)> {
    let xs = seq
        .outer_iter()
        .map(|row| row.insert_axis(Axis(0)).to_owned())
        .collect();
    let (h, cache) = lstm_forward_batch(w, u, b, xs)?;
    Ok((h.row(0).to_owned(), cache))
}

/// Gradients of the weights given the gradient of the loss w.r.t. `h_n`.
pub fn lstm_backward(w: ArrayView2<f64>, u: ArrayView2<f64>, cache: &LstmCache, dh_last: Array2<f64>) -> LstmGrads {
    let h = u.nrows();
    let m = dh_last.nrows();
    let mut grads = LstmGrads {
        w: Array2::zeros(w.dim()),
        u: Array2::zeros(u.dim()),
        b: Array2::zeros((1, 4 * h)),
    };
    let mut dh = dh_last;
    let mut dc = Array2::<f64>::zeros((m, h));
    let mut dz = Array2::<f64>::zeros((m, 4 * h));
    for t in (0..cache.gates.len()).rev() {
        let gates = &cache.gates[t];
        let tc = &cache.tanh_c[t];
        let c_prev = &cache.cs[t];
        for r in 0..m {
            let gr = gates.row(r);
            let mut dzr = dz.row_mut(r);
            for k in 0..h {
                let (i, f, g, o) = (gr[k], gr[h + k], gr[2 * h + k], gr[3 * h + k]);
                let tck = tc[[r, k]];
                let dhk = dh[[r, k]];
                let dck = dc[[r, k]] + dhk * o * (1.0 - tck * tck);
                dzr[k] = dck * g * i * (1.0 - i);
                dzr[h + k] = dck * c_prev[[r, k]] * f * (1.0 - f);
                dzr[2 * h + k] = dck * i * (1.0 - g * g);
                dzr[3 * h + k] = dhk * tck * o * (1.0 - o);
                dc[[r, k]] = dck * f;
            }
        }
        grads.w += &cache.xs[t].t().dot(&dz);
        grads.u += &cache.hs[t].t().dot(&dz);
        grads.b += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        if t > 0 {
            dh = dz.dot(&u.t());
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_weights_give_zero_state() {
        let w = Array2::zeros((2, 12));
        let u = Array2::zeros((3, 12));
        let b = Array2::zeros((1, 12));
        let seq = array![[1.0, -2.0], [0.5, 3.0], [4.0, 4.0]];
        let (h, _) = lstm_forward(w.view(), u.view(), b.view(), seq.view()).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_input_and_bias_give_zero_state() {
        let w = Array2::from_elem((2, 8), 0.3);
        let u = Array2::from_elem((2, 8), -0.7);
        let b = Array2::zeros((1, 8));
        let seq = Array2::zeros((5, 2));
        let (h, _) = lstm_forward(w.view(), u.view(), b.view(), seq.view()).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    // Oracle: the recurrence stepped by hand in numpy for n=3, d=2, h=2 with
    // W[k][j] = 0.1*(k+1) - 0.05*j, U[k][j] = 0.02*(j+1)*(-1)^k, b[j] = 0.01*j - 0.03.
    #[test]
    fn hand_stepped_recurrence() {
        let w = Array2::from_shape_fn((2, 8), |(k, j)| 0.1 * (k as f64 + 1.0) - 0.05 * j as f64);
        let u = Array2::from_shape_fn((2, 8), |(k, j)| {
            0.02 * (j as f64 + 1.0) * if k % 2 == 0 { 1.0 } else { -1.0 }
        });
        let b = Array2::from_shape_fn((1, 8), |(_, j)| 0.01 * j as f64 - 0.03);
        let seq = array![[0.5, -1.0], [1.5, 0.25], [-0.75, 2.0]];
        let (h, _) = lstm_forward(w.view(), u.view(), b.view(), seq.view()).unwrap();
        let expected = [0.0012989065446776058, -0.020170600389783376];
        for k in 0..2 {
            assert!((h[k] - expected[k]).abs() < 1e-14, "{} vs {}", h[k], expected[k]);
        }
    }

    #[test]
    fn shape_errors() {
        let w = Array2::zeros((2, 8));
        let u = Array2::zeros((3, 8));
        let b = Array2::zeros((1, 8));
        let seq = Array2::zeros((3, 2));
        assert!(lstm_forward(w.view(), u.view(), b.view(), seq.view()).is_err());
        let u = Array2::zeros((2, 8));
        let seq = Array2::zeros((3, 5));
        assert!(lstm_forward(w.view(), u.view(), b.view(), seq.view()).is_err());
        assert!(lstm_forward_batch(w.view(), u.view(), b.view(), vec![]).is_err());
    }
}
