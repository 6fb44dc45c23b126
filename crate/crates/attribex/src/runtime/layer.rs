//! Layer definitions: forward evaluation, shape inference, and exact
//! input-gradients (vector-Jacobian products).
//!
//! The affine kernels (`dense_affine`, `conv_affine`, and their transposes)
//! are parameterized by the weight tensors they use rather than by the layer,
//! so relevance propagation can reuse them with transformed parameters.

use crate::error::{Error, Result};
use crate::runtime::tensor::Tensor;

/// Pooling direction of a log-sum-exp pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolSign {
    Max,
    Min,
}

impl PoolSign {
    pub fn as_f64(self) -> f64 {
        match self {
            PoolSign::Max => 1.0,
            PoolSign::Min => -1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense {
        /// `[out, in]`, row-major.
        weight: Tensor,
        bias: Option<Tensor>,
    },
    Conv2D {
        /// `[out_c, in_c, kh, kw]`, row-major.
        weight: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool2D {
        kernel: (usize, usize),
        stride: usize,
    },
    AvgPool2D {
        kernel: (usize, usize),
        stride: usize,
    },
    Flatten,
    /// Soft minimum over competitor scores: `-1/beta * log sum_r exp(-beta z_r)`
    /// with `z_r = W_r a + b_r`. Output is a single scalar.
    SoftMinHead {
        weight: Tensor,
        bias: Option<Tensor>,
        beta: f64,
    },
    /// Blockwise soft max / soft min pooling via log-sum-exp with sharpness
    /// `beta`. `groups` are consecutive block lengths summing to the input size.
    LogSumExpPool {
        groups: Vec<usize>,
        beta: f64,
        sign: PoolSign,
    },
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "Dense",
            Layer::Conv2D { .. } => "Conv2D",
            Layer::Relu => "ReLU",
            Layer::MaxPool2D { .. } => "MaxPool2D",
            Layer::AvgPool2D { .. } => "AvgPool2D",
            Layer::Flatten => "Flatten",
            Layer::SoftMinHead { .. } => "SoftMinHead",
            Layer::LogSumExpPool { .. } => "LogSumExpPool",
        }
    }

    /// True for the trainable-weight kinds (Dense, Conv2D).
    pub fn is_weighted(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv2D { .. })
    }

    /// Output shape for a given input shape, validating consistency.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let fail = |msg: String| Err(Error::ModelFormat(msg));
        match self {
            Layer::Dense { weight, bias } => {
                if input.len() != 1 {
                    return fail(format!("Dense expects rank-1 input, got {input:?}"));
                }
                let n_in = input[0];
                if weight.len() % n_in != 0 {
                    return fail(format!(
                        "Dense weight length {} not divisible by input size {n_in}",
                        weight.len()
                    ));
                }
                let n_out = weight.len() / n_in;
                if let Some(b) = bias {
                    if b.len() != n_out {
                        return fail(format!(
                            "Dense bias length {} does not match {n_out} outputs",
                            b.len()
                        ));
                    }
                }
                Ok(vec![n_out])
            }
            Layer::Conv2D {
                weight,
                bias,
                stride,
                pad,
            } => {
                if input.len() != 3 {
                    return fail(format!("Conv2D expects [c,h,w] input, got {input:?}"));
                }
                let ws = weight.shape();
                if ws.len() != 4 {
                    return fail(format!("Conv2D weight must be [oc,ic,kh,kw], got {ws:?}"));
                }
                let (oc, ic, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
                if ic != input[0] {
                    return fail(format!(
                        "Conv2D weight expects {ic} input channels, input has {}",
                        input[0]
                    ));
                }
                if *stride == 0 {
                    return fail("Conv2D stride must be >= 1".into());
                }
                let (h, w) = (input[1] + 2 * pad, input[2] + 2 * pad);
                if kh > h || kw > w {
                    return fail(format!(
                        "Conv2D kernel {kh}x{kw} larger than padded input {h}x{w}"
                    ));
                }
                if let Some(b) = bias {
                    if b.len() != oc {
                        return fail(format!(
                            "Conv2D bias length {} does not match {oc} output channels",
                            b.len()
                        ));
                    }
                }
                Ok(vec![oc, (h - kh) / stride + 1, (w - kw) / stride + 1])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2D { kernel, stride } | Layer::AvgPool2D { kernel, stride } => {
                if input.len() != 3 {
                    return fail(format!("pool expects [c,h,w] input, got {input:?}"));
                }
                if *stride == 0 {
                    return fail("pool stride must be >= 1".into());
                }
                let (kh, kw) = *kernel;
                if kh == 0 || kw == 0 || kh > input[1] || kw > input[2] {
                    return fail(format!(
                        "pool kernel {kh}x{kw} invalid for input {input:?}"
                    ));
                }
                Ok(vec![
                    input[0],
                    (input[1] - kh) / stride + 1,
                    (input[2] - kw) / stride + 1,
                ])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::SoftMinHead { weight, bias, beta } => {
                if input.len() != 1 {
                    return fail(format!("SoftMinHead expects rank-1 input, got {input:?}"));
                }
                if *beta <= 0.0 {
                    return fail(format!("SoftMinHead beta must be > 0, got {beta}"));
                }
                let n_in = input[0];
                if weight.len() % n_in != 0 {
                    return fail(format!(
                        "SoftMinHead weight length {} not divisible by input size {n_in}",
                        weight.len()
                    ));
                }
                if let Some(b) = bias {
                    if b.len() != weight.len() / n_in {
                        return fail(format!(
                            "SoftMinHead bias length {} does not match row count",
                            b.len()
                        ));
                    }
                }
                Ok(vec![1])
            }
            Layer::LogSumExpPool { groups, beta, .. } => {
                if input.len() != 1 {
                    return fail(format!("LogSumExpPool expects rank-1 input, got {input:?}"));
                }
                if *beta <= 0.0 {
                    return fail(format!("LogSumExpPool beta must be > 0, got {beta}"));
                }
                if groups.is_empty() || groups.iter().any(|&g| g == 0) {
                    return fail("LogSumExpPool groups must be non-empty and positive".into());
                }
                if groups.iter().sum::<usize>() != input[0] {
                    return fail(format!(
                        "LogSumExpPool groups sum to {}, input has {} entries",
                        groups.iter().sum::<usize>(),
                        input[0]
                    ));
                }
                Ok(vec![groups.len()])
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let data = match self {
            Layer::Dense { weight, bias } => dense_affine(weight, bias.as_ref(), x.data()),
            Layer::Conv2D {
                weight,
                bias,
                stride,
                pad,
            } => conv_affine(weight, bias.as_ref(), x.data(), x.shape(), *stride, *pad).0,
            Layer::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
            Layer::MaxPool2D { kernel, stride } => {
                max_pool(x.data(), x.shape(), *kernel, *stride).0
            }
            Layer::AvgPool2D { kernel, stride } => avg_pool(x.data(), x.shape(), *kernel, *stride),
            Layer::Flatten => x.data().to_vec(),
            Layer::SoftMinHead { weight, bias, beta } => {
                let z = dense_affine(weight, bias.as_ref(), x.data());
                vec![soft_min(&z, *beta)]
            }
            Layer::LogSumExpPool { groups, beta, sign } => {
                let mut out = Vec::with_capacity(groups.len());
                let mut start = 0;
                for &g in groups {
                    let block = &x.data()[start..start + g];
                    out.push(match sign {
                        PoolSign::Max => soft_max(block, *beta),
                        PoolSign::Min => soft_min(block, *beta),
                    });
                    start += g;
                }
                out
            }
        };
        Ok(Tensor::from_parts_unchecked(out_shape, data))
    }

    /// Input gradient: `d<out, g_out>/d(input)` evaluated at `x`.
    pub fn input_grad(&self, x: &Tensor, g_out: &Tensor) -> Result<Tensor> {
        let data = match self {
            Layer::Dense { weight, .. } => dense_input_grad(weight, x.len(), g_out.data()),
            Layer::Conv2D {
                weight,
                stride,
                pad,
                ..
            } => conv_input_grad(weight, g_out.data(), x.shape(), *stride, *pad),
            Layer::Relu => x
                .data()
                .iter()
                .zip(g_out.data())
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect(),
            Layer::MaxPool2D { kernel, stride } => {
                let (_, argmax) = max_pool(x.data(), x.shape(), *kernel, *stride);
                let mut grad = vec![0.0; x.len()];
                for (o, &src) in argmax.iter().enumerate() {
                    grad[src] += g_out.data()[o];
                }
                grad
            }
            Layer::AvgPool2D { kernel, stride } => {
                avg_pool_input_grad(g_out.data(), x.shape(), *kernel, *stride)
            }
            Layer::Flatten => g_out.data().to_vec(),
            Layer::SoftMinHead { weight, bias, beta } => {
                let z = dense_affine(weight, bias.as_ref(), x.data());
                // d out / d z_r = softmax(-beta z)_r
                let p = stable_softmax(&z.iter().map(|v| -beta * v).collect::<Vec<_>>());
                let gz: Vec<f64> = p.iter().map(|&pr| pr * g_out.data()[0]).collect();
                dense_input_grad(weight, x.len(), &gz)
            }
            Layer::LogSumExpPool { groups, beta, sign } => {
                let mut grad = vec![0.0; x.len()];
                let mut start = 0;
                for (gi, &g) in groups.iter().enumerate() {
                    let block = &x.data()[start..start + g];
                    let s = sign.as_f64();
                    let p = stable_softmax(&block.iter().map(|&v| s * beta * v).collect::<Vec<_>>());
                    for (j, &pj) in p.iter().enumerate() {
                        grad[start + j] = pj * g_out.data()[gi];
                    }
                    start += g;
                }
                grad
            }
        };
        Ok(Tensor::from_parts_unchecked(x.shape().to_vec(), data))
    }
}

// ── affine kernels ───────────────────────────────────────────────────

/// `W x + b` for `W: [out, in]` row-major.
pub fn dense_affine(weight: &Tensor, bias: Option<&Tensor>, x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    let n_out = weight.len() / n_in;
    let w = weight.data();
    let mut out = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let row = &w[k * n_in..(k + 1) * n_in];
        let mut acc = match bias {
            Some(b) => b.data()[k],
            None => 0.0,
        };
        for (wj, xj) in row.iter().zip(x) {
            acc += wj * xj;
        }
        out.push(acc);
    }
    out
}

/// `W^T g` for `W: [out, in]` row-major.
pub fn dense_input_grad(weight: &Tensor, n_in: usize, g_out: &[f64]) -> Vec<f64> {
    let w = weight.data();
    let mut grad = vec![0.0; n_in];
    for (k, &gk) in g_out.iter().enumerate() {
        if gk == 0.0 {
            continue;
        }
        let row = &w[k * n_in..(k + 1) * n_in];
        for (gj, wj) in grad.iter_mut().zip(row) {
            *gj += wj * gk;
        }
    }
    grad
}

/// 2-D convolution with explicit zero padding. Returns (data, out shape).
pub fn conv_affine(
    weight: &Tensor,
    bias: Option<&Tensor>,
    x: &[f64],
    in_shape: &[usize],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 3]) {
    let ws = weight.shape();
    let (oc, ic, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let (h, w) = (in_shape[1], in_shape[2]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let wd = weight.data();
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        let b = bias.map_or(0.0, |b| b.data()[o]);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b;
                for c in 0..ic {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += wd[((o * ic + c) * kh + ky) * kw + kx]
                                * x[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (out, [oc, oh, ow])
}

/// Transposed convolution: scatter `g_out` back through the kernel.
pub fn conv_input_grad(
    weight: &Tensor,
    g_out: &[f64],
    in_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let ws = weight.shape();
    let (oc, ic, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let (h, w) = (in_shape[1], in_shape[2]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let wd = weight.data();
    let mut grad = vec![0.0; ic * h * w];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = g_out[(o * oh + oy) * ow + ox];
                if g == 0.0 {
                    continue;
                }
                for c in 0..ic {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            grad[(c * h + iy as usize) * w + ix as usize] +=
                                wd[((o * ic + c) * kh + ky) * kw + kx] * g;
                        }
                    }
                }
            }
        }
    }
    grad
}

/// Max pooling. Returns (values, per-output flat argmax). Ties are broken by
/// the first-encountered (lowest flat) index: the scan is row-major and uses
/// a strict comparison.
pub fn max_pool(
    x: &[f64],
    in_shape: &[usize],
    kernel: (usize, usize),
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (kh, kw) = kernel;
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let idx = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax)
}

pub fn avg_pool(x: &[f64], in_shape: &[usize], kernel: (usize, usize), stride: usize) -> Vec<f64> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (kh, kw) = kernel;
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let norm = 1.0 / (kh * kw) as f64;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        acc += x[(ch * h + oy * stride + ky) * w + ox * stride + kx];
                    }
                }
                out.push(acc * norm);
            }
        }
    }
    out
}

pub fn avg_pool_input_grad(
    g_out: &[f64],
    in_shape: &[usize],
    kernel: (usize, usize),
    stride: usize,
) -> Vec<f64> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (kh, kw) = kernel;
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let norm = 1.0 / (kh * kw) as f64;
    let mut grad = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = g_out[(ch * oh + oy) * ow + ox] * norm;
                for ky in 0..kh {
                    for kx in 0..kw {
                        grad[(ch * h + oy * stride + ky) * w + ox * stride + kx] += g;
                    }
                }
            }
        }
    }
    grad
}

// ── log-sum-exp primitives ───────────────────────────────────────────

/// `log sum_i exp(v_i)` with max-subtraction; the shifted exponentials are
/// summed in ascending order so the result is invariant to permutations of
/// `v` (sorted-summation contract). Exact on singletons.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    debug_assert!(!v.is_empty());
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let mut terms: Vec<f64> = v.iter().map(|&x| (x - m).exp()).collect();
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    m + terms.iter().sum::<f64>().ln()
}

/// Soft maximum with sharpness `beta`: `1/beta * lse(beta v)`.
/// A singleton is the identity at any sharpness, bit-exactly.
pub fn soft_max(v: &[f64], beta: f64) -> f64 {
    if v.len() == 1 {
        return v[0];
    }
    log_sum_exp(&v.iter().map(|&x| beta * x).collect::<Vec<_>>()) / beta
}

/// Soft minimum with sharpness `beta`: `-1/beta * lse(-beta v)`.
pub fn soft_min(v: &[f64], beta: f64) -> f64 {
    if v.len() == 1 {
        return v[0];
    }
    -log_sum_exp(&v.iter().map(|&x| -beta * x).collect::<Vec<_>>()) / beta
}

/// Numerically stable softmax weights (sum to 1).
pub fn stable_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|&x| (x - m).exp()).collect();
    let mut sorted = e.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let z: f64 = sorted.iter().sum();
    e.iter().map(|&x| x / z).collect()
}
