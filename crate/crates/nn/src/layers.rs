//! Forward and backward passes of the individual layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding: output length is `len - kernel + 1`.
    #[default]
    Valid,
    /// Zero padding that keeps the length; the extra zero goes on the right
    /// for even kernels.
    Same,
}

impl Padding {
    pub fn output_length(self, len: usize, kernel: usize) -> Option<usize> {
        match self {
            Padding::Valid => (len >= kernel).then(|| len - kernel + 1),
            Padding::Same => (len > 0).then_some(len),
        }
    }

    fn left(self, kernel: usize) -> usize {
        match self {
            Padding::Valid => 0,
            Padding::Same => (kernel - 1) / 2,
        }
    }
}

/// Convolution weights laid out as `(filters, in_channels, kernel)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub filters: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub padding: Padding,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.filters * self.in_channels * self.kernel
    }
}

/// For tap `k`: output range `[t0, t1)` and the input offset `s = t + k - pad`.
fn tap_range(k: usize, pad: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let t0 = pad.saturating_sub(k);
    let t1 = (in_len + pad).saturating_sub(k).min(out_len);
    (t0, t1.max(t0))
}

/// Stride-1 cross-correlation: `y[b,f,t] = bias[f] + sum_c,k w[f,c,k] x[b,c,t+k-pad]`.
pub fn conv1d_forward(x: &Tensor, weight: &[f64], bias: &[f64], s: ConvShape) -> Result<Tensor> {
    let [batch, c_in, len] = x.shape();
    if c_in != s.in_channels || weight.len() != s.weight_len() || bias.len() != s.filters {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {} channels, {} weights, {} biases; got input {:?}, {} weights, {} biases",
            s.in_channels,
            s.weight_len(),
            s.filters,
            x.shape(),
            weight.len(),
            bias.len()
        )));
    }
    let out_len = s
        .padding
        .output_length(len, s.kernel)
        .ok_or_else(|| Error::InsufficientLength {
            len,
            reason: format!("kernel {} needs at least that many samples", s.kernel),
        })?;
    let pad = s.padding.left(s.kernel);
    let mut y = vec![0.0; batch * s.filters * out_len];
    for b in 0..batch {
        for f in 0..s.filters {
            let out = &mut y[(b * s.filters + f) * out_len..][..out_len];
            out.fill(bias[f]);
            for c in 0..c_in {
                let xr = x.row(b, c);
                let w = &weight[(f * c_in + c) * s.kernel..][..s.kernel];
                for (k, &wk) in w.iter().enumerate() {
                    let (t0, t1) = tap_range(k, pad, len, out_len);
                    let src = &xr[t0 + k - pad..t1 + k - pad];
                    for (o, xv) in out[t0..t1].iter_mut().zip(src) {
                        *o += wk * xv;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw([batch, s.filters, out_len], y))
}

pub struct ConvGrads {
    pub dx: Tensor,
    pub dweight: Vec<f64>,
    pub dbias: Vec<f64>,
}

pub fn conv1d_backward(x: &Tensor, weight: &[f64], s: ConvShape, dy: &Tensor) -> ConvGrads {
    let [batch, c_in, len] = x.shape();
    let out_len = dy.length();
    let pad = s.padding.left(s.kernel);
    let mut dx = vec![0.0; x.data().len()];
    let mut dweight = vec![0.0; s.weight_len()];
    let mut dbias = vec![0.0; s.filters];
    for b in 0..batch {
        for f in 0..s.filters {
            let g = dy.row(b, f);
            dbias[f] += g.iter().sum::<f64>();
            for c in 0..c_in {
                let xr = x.row(b, c);
                let dxr = &mut dx[(b * c_in + c) * len..][..len];
                let wi = (f * c_in + c) * s.kernel;
                for k in 0..s.kernel {
                    let (t0, t1) = tap_range(k, pad, len, out_len);
                    let (lo, hi) = (t0 + k - pad, t1 + k - pad);
                    let mut acc = 0.0;
                    for (gv, xv) in g[t0..t1].iter().zip(&xr[lo..hi]) {
                        acc += gv * xv;
                    }
                    dweight[wi + k] += acc;
                    let wk = weight[wi + k];
                    for (d, gv) in dxr[lo..hi].iter_mut().zip(&g[t0..t1]) {
                        *d += wk * gv;
                    }
                }
            }
        }
    }
    ConvGrads {
        dx: Tensor::from_raw(x.shape(), dx),
        dweight,
        dbias,
    }
}

/// Normalized activations and inverse std kept for the backward pass.
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Per-channel statistics over batch and length.
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn batchnorm_train(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Tensor, BnBatchStats, BnCache) {
    let [batch, ch, len] = x.shape();
    let n = (batch * len) as f64;
    let mut mean = vec![0.0; ch];
    let mut var = vec![0.0; ch];
    for c in 0..ch {
        let mut s = 0.0;
        for b in 0..batch {
            s += x.row(b, c).iter().sum::<f64>();
        }
        let m = s / n;
        let mut v = 0.0;
        for b in 0..batch {
            v += x.row(b, c).iter().map(|&xv| (xv - m) * (xv - m)).sum::<f64>();
        }
        mean[c] = m;
        var[c] = v / n;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.data().len()];
    let mut y = vec![0.0; x.data().len()];
    for b in 0..batch {
        for c in 0..ch {
            let off = (b * ch + c) * len;
            for (i, &xv) in x.row(b, c).iter().enumerate() {
                let h = (xv - mean[c]) * inv_std[c];
                xhat[off + i] = h;
                y[off + i] = gamma[c] * h + beta[c];
            }
        }
    }
    (
        Tensor::from_raw(x.shape(), y),
        BnBatchStats { mean, var },
        BnCache { xhat, inv_std },
    )
}

pub fn batchnorm_eval(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Tensor {
    let [batch, ch, len] = x.shape();
    let mut y = x.data().to_vec();
    for b in 0..batch {
        for c in 0..ch {
            let scale = gamma[c] / (running_var[c] + eps).sqrt();
            let shift = beta[c] - running_mean[c] * scale;
            for v in &mut y[(b * ch + c) * len..][..len] {
                *v = *v * scale + shift;
            }
        }
    }
    Tensor::from_raw(x.shape(), y)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward(dy: &Tensor, gamma: &[f64], cache: &BnCache) -> (Tensor, Vec<f64>, Vec<f64>) {
    let [batch, ch, len] = dy.shape();
    let n = (batch * len) as f64;
    let mut dgamma = vec![0.0; ch];
    let mut dbeta = vec![0.0; ch];
    for b in 0..batch {
        for c in 0..ch {
            let off = (b * ch + c) * len;
            for (g, h) in dy.row(b, c).iter().zip(&cache.xhat[off..off + len]) {
                dgamma[c] += g * h;
                dbeta[c] += g;
            }
        }
    }
    // dx = gamma * inv_std / n * (n dy - sum(dy) - xhat * sum(dy xhat))
    let mut dx = vec![0.0; dy.data().len()];
    for b in 0..batch {
        for c in 0..ch {
            let off = (b * ch + c) * len;
            let k = gamma[c] * cache.inv_std[c] / n;
            for i in 0..len {
                dx[off + i] = k * (n * dy.data()[off + i] - dbeta[c] - cache.xhat[off + i] * dgamma[c]);
            }
        }
    }
    (Tensor::from_raw(dy.shape(), dx), dgamma, dbeta)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    let y = x
        .data()
        .iter()
        .map(|&v| if v > 0.0 { v } else { slope * v })
        .collect();
    Tensor::from_raw(x.shape(), y)
}

/// `pre` is the activation input.
pub fn leaky_relu_backward(pre: &Tensor, dy: &Tensor, slope: f64) -> Tensor {
    let dx = pre
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&p, &g)| if p > 0.0 { g } else { slope * g })
        .collect();
    Tensor::from_raw(pre.shape(), dx)
}

/// Width-2 stride-2 max pooling along length, dropping a trailing odd
/// sample. Also returns the flat input index chosen for each output.
pub fn maxpool2(x: &Tensor) -> (Tensor, Vec<usize>) {
    let [batch, ch, len] = x.shape();
    let out_len = len / 2;
    let mut y = Vec::with_capacity(batch * ch * out_len);
    let mut arg = Vec::with_capacity(batch * ch * out_len);
    for r in 0..batch * ch {
        let row = &x.data()[r * len..][..len];
        for t in 0..out_len {
            let (a, b) = (row[2 * t], row[2 * t + 1]);
            let pick = if b > a { 2 * t + 1 } else { 2 * t };
            y.push(row[pick]);
            arg.push(r * len + pick);
        }
    }
    (Tensor::from_raw([batch, ch, out_len], y), arg)
}

pub fn maxpool2_backward(dy: &Tensor, argmax: &[usize], in_shape: [usize; 3]) -> Tensor {
    let mut dx = Tensor::zeros(in_shape);
    for (g, &i) in dy.data().iter().zip(argmax) {
        dx.data_mut()[i] += g;
    }
    dx
}

/// `y[b, o] = bias[o] + sum_i w[o, i] x[b, i]` with `w` as `(out, in)`.
pub fn dense_forward(x: &Tensor, weight: &[f64], bias: &[f64]) -> Result<Tensor> {
    let batch = x.batch();
    let n_in = x.item_size();
    let n_out = bias.len();
    if weight.len() != n_in * n_out {
        return Err(Error::ShapeMismatch(format!(
            "dense layer expects {} inputs, got {n_in}",
            weight.len() / n_out.max(1)
        )));
    }
    let mut y = Vec::with_capacity(batch * n_out);
    for b in 0..batch {
        let xi = x.item(b);
        for o in 0..n_out {
            let w = &weight[o * n_in..][..n_in];
            y.push(bias[o] + w.iter().zip(xi).map(|(a, v)| a * v).sum::<f64>());
        }
    }
    Ok(Tensor::from_raw([batch, n_out, 1], y))
}

/// Returns `(dx, dweight, dbias)`; `dx` has the shape of `x`.
pub fn dense_backward(x: &Tensor, weight: &[f64], dy: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let batch = x.batch();
    let n_in = x.item_size();
    let n_out = dy.item_size();
    let mut dx = vec![0.0; x.data().len()];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; n_out];
    for b in 0..batch {
        let xi = x.item(b);
        let gi = dy.item(b);
        let dxi = &mut dx[b * n_in..][..n_in];
        for o in 0..n_out {
            let g = gi[o];
            db[o] += g;
            let w = &weight[o * n_in..][..n_in];
            for (d, xv) in dw[o * n_in..][..n_in].iter_mut().zip(xi) {
                *d += g * xv;
            }
            for (d, wv) in dxi.iter_mut().zip(w) {
                *d += g * wv;
            }
        }
    }
    (Tensor::from_raw(x.shape(), dx), dw, db)
}

/// Inverted dropout mask: kept units are scaled by `1 / (1 - p)`.
pub fn dropout_mask<R: rand::Rng>(n: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.random::<f64>() >= p { keep } else { 0.0 })
        .collect()
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let batch = logits.batch();
    let k = logits.item_size();
    if labels.len() != batch {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, n_classes: k });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(batch * k);
    for (b, &label) in labels.iter().enumerate() {
        let z = logits.item(b);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        loss += lse - z[label];
        for (j, v) in z.iter().enumerate() {
            let p = (v - lse).exp();
            grad.push((p - f64::from(j == label)) / batch as f64);
        }
    }
    Ok((loss / batch as f64, Tensor::from_raw(logits.shape(), grad)))
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
