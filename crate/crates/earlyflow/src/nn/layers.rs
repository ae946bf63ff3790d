//! The individual layers of the network, each as a forward/backward pair
//! over `f64`. Keeping them free functions lets the gradient tests check
//! every layer in isolation before checking the composed model.
//!
//! Shape conventions: activations are `T×ch` matrices (time steps by
//! channels); dense layers operate on plain vectors.

// Kernels walk time steps by index across several same-length buffers;
// zipped iterators would obscure the arithmetic here.
#![allow(clippy::needless_range_loop)]

use super::matrix::Matrix;

/// Convolution with kernel size 1: each time step is an independent affine
/// map. `w` is `ch×d`, `x` is `T×d`; output is `T×ch`.
pub fn conv1x1_forward(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    debug_assert_eq!(x.cols, w.cols);
    debug_assert_eq!(w.rows, b.len());
    let mut out = Matrix::zeros(x.rows, w.rows);
    for t in 0..x.rows {
        let xt = x.row(t);
        let ot = out.row_mut(t);
        for (k, slot) in ot.iter_mut().enumerate() {
            let wk = w.row(k);
            let mut acc = b[k];
            for (xv, wv) in xt.iter().zip(wk) {
                acc += xv * wv;
            }
            *slot = acc;
        }
    }
    out
}

/// Gradients of the kernel-size-1 convolution w.r.t. its parameters.
pub fn conv1x1_backward(x: &Matrix, dz: &Matrix) -> (Matrix, Vec<f64>) {
    let mut dw = Matrix::zeros(dz.cols, x.cols);
    let mut db = vec![0.0; dz.cols];
    for t in 0..x.rows {
        let xt = x.row(t);
        let dzt = dz.row(t);
        for (k, &g) in dzt.iter().enumerate() {
            db[k] += g;
            for (slot, &xv) in dw.row_mut(k).iter_mut().zip(xt) {
                *slot += g * xv;
            }
        }
    }
    (dw, db)
}

pub fn relu_forward(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for v in &mut out.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Pass-through where the pre-activation was positive, zero elsewhere
/// (subgradient 0 at exactly 0).
pub fn relu_backward(z: &Matrix, da: &Matrix) -> Matrix {
    let mut dz = da.clone();
    for (g, &zv) in dz.data.iter_mut().zip(&z.data) {
        if zv <= 0.0 {
            *g = 0.0;
        }
    }
    dz
}

pub fn relu_vec_forward(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

pub fn relu_vec_backward(z: &[f64], da: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(da)
        .map(|(&zv, &g)| if zv > 0.0 { g } else { 0.0 })
        .collect()
}

/// Layer normalization over the channel axis, independently per time step,
/// with population variance. Returns the normalized activations before
/// gain/shift (needed by backward) and the per-step inverse stddev.
pub fn layernorm_forward(
    a: &Matrix,
    gain: &[f64],
    shift: &[f64],
    epsilon: f64,
) -> (Matrix, Matrix, Vec<f64>) {
    let n = a.cols as f64;
    let mut xhat = Matrix::zeros(a.rows, a.cols);
    let mut y = Matrix::zeros(a.rows, a.cols);
    let mut inv_std = vec![0.0; a.rows];
    for t in 0..a.rows {
        let at = a.row(t);
        let mean = at.iter().sum::<f64>() / n;
        let var = at.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + epsilon).sqrt();
        inv_std[t] = is;
        for c in 0..a.cols {
            let xh = (at[c] - mean) * is;
            *xhat.at_mut(t, c) = xh;
            *y.at_mut(t, c) = gain[c] * xh + shift[c];
        }
    }
    (y, xhat, inv_std)
}

/// Layer-norm backward: input gradient plus gain/shift gradients.
pub fn layernorm_backward(
    xhat: &Matrix,
    inv_std: &[f64],
    gain: &[f64],
    dy: &Matrix,
) -> (Matrix, Vec<f64>, Vec<f64>) {
    let n = xhat.cols as f64;
    let mut da = Matrix::zeros(xhat.rows, xhat.cols);
    let mut dgain = vec![0.0; xhat.cols];
    let mut dshift = vec![0.0; xhat.cols];
    for t in 0..xhat.rows {
        let xht = xhat.row(t);
        let dyt = dy.row(t);
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for c in 0..xhat.cols {
            let dxhat = dyt[c] * gain[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xht[c];
            dgain[c] += dyt[c] * xht[c];
            dshift[c] += dyt[c];
        }
        let dat = da.row_mut(t);
        for c in 0..xhat.cols {
            let dxhat = dyt[c] * gain[c];
            dat[c] = inv_std[t] / n * (n * dxhat - sum_dxhat - xht[c] * sum_dxhat_xhat);
        }
    }
    (da, dgain, dshift)
}

/// Temporal average pooling, window 2, stride 2, same padding: output
/// length ⌈T/2⌉. On odd T the final window holds one real element and
/// averages only that (divisor 1), so the last activation is not diluted.
pub fn avgpool2_forward(y: &Matrix) -> Matrix {
    let p = y.rows.div_ceil(2);
    let mut out = Matrix::zeros(p, y.cols);
    for i in 0..p {
        let lo = 2 * i;
        let hi = (lo + 2).min(y.rows);
        let div = (hi - lo) as f64;
        for c in 0..y.cols {
            let mut acc = 0.0;
            for t in lo..hi {
                acc += y.at(t, c);
            }
            *out.at_mut(i, c) = acc / div;
        }
    }
    out
}

pub fn avgpool2_backward(input_rows: usize, dp: &Matrix) -> Matrix {
    let mut dy = Matrix::zeros(input_rows, dp.cols);
    for i in 0..dp.rows {
        let lo = 2 * i;
        let hi = (lo + 2).min(input_rows);
        let div = (hi - lo) as f64;
        for c in 0..dp.cols {
            let g = dp.at(i, c) / div;
            for t in lo..hi {
                *dy.at_mut(t, c) += g;
            }
        }
    }
    dy
}

/// Global average pool over time: `P×ch` → `ch`.
pub fn gap_forward(p: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; p.cols];
    for t in 0..p.rows {
        for (slot, &v) in out.iter_mut().zip(p.row(t)) {
            *slot += v;
        }
    }
    let div = p.rows as f64;
    for v in &mut out {
        *v /= div;
    }
    out
}

pub fn gap_backward(input_rows: usize, dg: &[f64]) -> Matrix {
    let mut dp = Matrix::zeros(input_rows, dg.len());
    let div = input_rows as f64;
    for t in 0..input_rows {
        for (slot, &g) in dp.row_mut(t).iter_mut().zip(dg) {
            *slot = g / div;
        }
    }
    dp
}

/// Fully connected layer: `w` is `out×in`.
pub fn dense_forward(x: &[f64], w: &Matrix, b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), w.cols);
    w.data
        .chunks(w.cols)
        .zip(b)
        .map(|(row, &bias)| row.iter().zip(x).map(|(wv, xv)| wv * xv).sum::<f64>() + bias)
        .collect()
}

pub fn dense_backward(x: &[f64], w: &Matrix, dout: &[f64]) -> (Matrix, Vec<f64>, Vec<f64>) {
    let mut dw = Matrix::zeros(w.rows, w.cols);
    let mut dx = vec![0.0; w.cols];
    for (k, &g) in dout.iter().enumerate() {
        let wk = w.row(k);
        let dwk = dw.row_mut(k);
        for c in 0..w.cols {
            dwk[c] = g * x[c];
            dx[c] += g * wk[c];
        }
    }
    (dw, dout.to_vec(), dx)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// Softmax Jacobian applied to a probability-space gradient.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(dprobs).map(|(&p, &g)| p * g).sum();
    probs
        .iter()
        .zip(dprobs)
        .map(|(&p, &g)| p * (g - dot))
        .collect()
}
