//! Layer-wise relevance propagation.
//!
//! The output score is redistributed backward layer by layer. Weighted layers
//! apply the generalized four-step rule
//! `R_j = sum_k a_j rho(w_jk) / (eps + sum_{0,j} a_j rho(w_jk)) R_k` with
//! `rho(w) = w + gamma * max(0, w)`:
//!
//! 1. forward-evaluate a copy of the layer with rho-transformed parameters,
//! 2. divide the incoming relevance elementwise by the result,
//! 3. propagate the quotients backward through the rho-copy,
//! 4. multiply by the input activations.
//!
//! ReLU layers pass relevance through unchanged (the rules are stated on
//! fused linear+rectifier neurons). Sum pools redistribute proportionally to
//! contributions, max pools route to the argmax, and soft pools redistribute
//! by their log-sum-exp gradient weights. The first weighted layer may use
//! the bounds-based z^B rule instead.

use crate::attribution::explanation::{Explanation, Rule, RuleMap};
use crate::error::{Error, Result};
use crate::runtime::layer::{
    avg_pool, avg_pool_input_grad, conv_affine, conv_input_grad, dense_affine, dense_input_grad,
    max_pool, stable_softmax,
};
use crate::runtime::{Layer, Network, Tensor};

/// Tiny-denominator guard: denominators below this magnitude are pushed away
/// from zero with their own sign.
const DEN_GUARD: f64 = 1e-12;

fn signum_pos(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Signed epsilon stabilization followed by the tiny-denominator guard.
fn stabilize(den: &mut [f64], eps: f64) {
    for d in den.iter_mut() {
        if eps > 0.0 {
            *d += signum_pos(*d) * eps;
        }
        if d.abs() < DEN_GUARD {
            *d += signum_pos(*d) * DEN_GUARD;
        }
    }
}

/// Resolve an `EpsScaled` rule to its absolute epsilon for this layer.
fn effective_eps(rule: &Rule, den: &[f64]) -> f64 {
    match rule {
        Rule::Eps(e) => *e,
        Rule::EpsScaled(factor) => {
            let mean_abs = den.iter().map(|d| d.abs()).sum::<f64>() / den.len() as f64;
            factor * mean_abs
        }
        _ => 0.0,
    }
}

fn rho_params(weight: &Tensor, bias: Option<&Tensor>, gamma: f64) -> (Tensor, Option<Tensor>) {
    if gamma == 0.0 {
        return (weight.clone(), bias.cloned());
    }
    let w = weight.map(|v| v + gamma * v.max(0.0));
    let b = bias.map(|b| b.map(|v| v + gamma * v.max(0.0)));
    (w, b)
}

/// Four-step rule for a Dense layer.
fn relprop_dense(
    weight: &Tensor,
    bias: Option<&Tensor>,
    a: &Tensor,
    r_out: &[f64],
    rule: &Rule,
) -> Result<Vec<f64>> {
    let gamma = if let Rule::Gamma(g) = rule { *g } else { 0.0 };
    let (w_rho, b_rho) = rho_params(weight, bias, gamma);
    let mut den = dense_affine(&w_rho, b_rho.as_ref(), a.data());
    let eps = effective_eps(rule, &den);
    stabilize(&mut den, eps);
    let s: Vec<f64> = r_out.iter().zip(&den).map(|(r, d)| r / d).collect();
    let c = dense_input_grad(&w_rho, a.len(), &s);
    Ok(a.data().iter().zip(&c).map(|(ai, ci)| ai * ci).collect())
}

/// Four-step rule for a Conv2D layer.
#[allow(clippy::too_many_arguments)]
fn relprop_conv(
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
    a: &Tensor,
    r_out: &[f64],
    rule: &Rule,
) -> Result<Vec<f64>> {
    let gamma = if let Rule::Gamma(g) = rule { *g } else { 0.0 };
    let (w_rho, b_rho) = rho_params(weight, bias, gamma);
    let (mut den, _) = conv_affine(&w_rho, b_rho.as_ref(), a.data(), a.shape(), stride, pad);
    let eps = effective_eps(rule, &den);
    stabilize(&mut den, eps);
    let s: Vec<f64> = r_out.iter().zip(&den).map(|(r, d)| r / d).collect();
    let c = conv_input_grad(&w_rho, &s, a.shape(), stride, pad);
    Ok(a.data().iter().zip(&c).map(|(ai, ci)| ai * ci).collect())
}

/// z^B rule for the first weighted layer, with per-feature bounds:
/// `R_i = sum_j (x_i w_ij - l_i w_ij^+ - h_i w_ij^-) / (sum_i ...) R_j`.
fn relprop_zb(
    layer: &Layer,
    a: &Tensor,
    r_out: &[f64],
    low: &Tensor,
    high: &Tensor,
) -> Result<Vec<f64>> {
    if low.shape() != a.shape() || high.shape() != a.shape() {
        return Err(Error::Config(
            "z^B bounds must have the input shape".into(),
        ));
    }
    for ((&l, &x), &h) in low.data().iter().zip(a.data()).zip(high.data()) {
        if !(l <= x && x <= h) {
            return Err(Error::Config(format!(
                "z^B bounds violated: l={l}, x={x}, h={h}"
            )));
        }
    }
    let (forward, backward): (
        Box<dyn Fn(&Tensor, &Tensor) -> Vec<f64>>,
        Box<dyn Fn(&Tensor, &[f64]) -> Vec<f64>>,
    ) = match layer {
        Layer::Dense { .. } => (
            Box::new(|w: &Tensor, x: &Tensor| dense_affine(w, None, x.data())),
            Box::new(|w: &Tensor, s: &[f64]| dense_input_grad(w, a.len(), s)),
        ),
        Layer::Conv2D { stride, pad, .. } => {
            let (stride, pad) = (*stride, *pad);
            (
                Box::new(move |w: &Tensor, x: &Tensor| {
                    conv_affine(w, None, x.data(), x.shape(), stride, pad).0
                }),
                Box::new(move |w: &Tensor, s: &[f64]| {
                    conv_input_grad(w, s, a.shape(), stride, pad)
                }),
            )
        }
        _ => {
            return Err(Error::Config(
                "z^B applies only to Dense or Conv2D layers".into(),
            ))
        }
    };
    let weight = match layer {
        Layer::Dense { weight, .. } | Layer::Conv2D { weight, .. } => weight,
        _ => unreachable!(),
    };
    let w_pos = weight.map(|v| v.max(0.0));
    let w_neg = weight.map(|v| v.min(0.0));

    let z_x = forward(weight, a);
    let z_l = forward(&w_pos, low);
    let z_h = forward(&w_neg, high);
    let mut den: Vec<f64> = z_x
        .iter()
        .zip(&z_l)
        .zip(&z_h)
        .map(|((zx, zl), zh)| zx - zl - zh)
        .collect();
    stabilize(&mut den, 0.0);
    let s: Vec<f64> = r_out.iter().zip(&den).map(|(r, d)| r / d).collect();
    let c1 = backward(weight, &s);
    let c2 = backward(&w_pos, &s);
    let c3 = backward(&w_neg, &s);
    Ok((0..a.len())
        .map(|i| a.data()[i] * c1[i] - low.data()[i] * c2[i] - high.data()[i] * c3[i])
        .collect())
}

/// Proportional redistribution through an average pool (the 1/n factors of
/// numerator and denominator cancel, so this reduces to share-by-activation).
fn relprop_avg_pool(
    kernel: (usize, usize),
    stride: usize,
    a: &Tensor,
    r_out: &[f64],
) -> Vec<f64> {
    let mut den = avg_pool(a.data(), a.shape(), kernel, stride);
    stabilize(&mut den, 0.0);
    let s: Vec<f64> = r_out.iter().zip(&den).map(|(r, d)| r / d).collect();
    let c = avg_pool_input_grad(&s, a.shape(), kernel, stride);
    a.data().iter().zip(&c).map(|(ai, ci)| ai * ci).collect()
}

/// Redistribute one relevance value over a block by softmax weights.
fn spread_softmax(block: &[f64], scale: f64, r: f64, out: &mut [f64]) {
    let scores: Vec<f64> = block.iter().map(|&v| scale * v).collect();
    let p = stable_softmax(&scores);
    for (o, &pi) in out.iter_mut().zip(&p) {
        *o = pi * r;
    }
}

/// Propagate relevance from the output of `layer` (given its input
/// activations `a`) to its input, under `rule`.
fn relprop_layer(layer: &Layer, a: &Tensor, r_out: &Tensor, rule: &Rule) -> Result<Tensor> {
    let data = match layer {
        Layer::Dense { weight, bias } => match rule {
            Rule::ZB { low, high } => relprop_zb(layer, a, r_out.data(), low, high)?,
            _ => relprop_dense(weight, bias.as_ref(), a, r_out.data(), rule)?,
        },
        Layer::Conv2D {
            weight,
            bias,
            stride,
            pad,
        } => match rule {
            Rule::ZB { low, high } => relprop_zb(layer, a, r_out.data(), low, high)?,
            _ => relprop_conv(weight, bias.as_ref(), *stride, *pad, a, r_out.data(), rule)?,
        },
        Layer::Relu => r_out.data().to_vec(),
        Layer::Flatten => r_out.data().to_vec(),
        Layer::MaxPool2D { kernel, stride } => {
            let (_, argmax) = max_pool(a.data(), a.shape(), *kernel, *stride);
            let mut r = vec![0.0; a.len()];
            for (o, &src) in argmax.iter().enumerate() {
                r[src] += r_out.data()[o];
            }
            r
        }
        Layer::AvgPool2D { kernel, stride } => {
            relprop_avg_pool(*kernel, *stride, a, r_out.data())
        }
        Layer::SoftMinHead { weight, bias, beta } => {
            // Pool stage: split the scalar relevance over competitor scores by
            // the soft-min weights, then apply the generalized rule to the
            // linear stage.
            let z = dense_affine(weight, bias.as_ref(), a.data());
            let mut r_rows = vec![0.0; z.len()];
            spread_softmax(&z, -beta, r_out.data()[0], &mut r_rows);
            relprop_dense(weight, bias.as_ref(), a, &r_rows, rule)?
        }
        Layer::LogSumExpPool { groups, beta, sign } => {
            let mut r = vec![0.0; a.len()];
            let mut start = 0;
            for (gi, &g) in groups.iter().enumerate() {
                let block = &a.data()[start..start + g];
                spread_softmax(
                    block,
                    sign.as_f64() * beta,
                    r_out.data()[gi],
                    &mut r[start..start + g],
                );
                start += g;
            }
            r
        }
    };
    Ok(Tensor::from_parts_unchecked(a.shape().to_vec(), data))
}

/// Index of the first weighted layer (Dense/Conv2D), if any.
pub fn first_weighted_layer(net: &Network) -> Option<usize> {
    net.layers().iter().position(|l| l.is_weighted())
}

fn validate_rules(net: &Network, rules: &RuleMap) -> Result<()> {
    rules.validate()?;
    let first = first_weighted_layer(net);
    for (&idx, rule) in rules.assigned() {
        if matches!(rule, Rule::ZB { .. }) && Some(idx) != first {
            return Err(Error::Config(format!(
                "z^B may only be assigned to the first weighted layer ({first:?}), got layer {idx}"
            )));
        }
    }
    if matches!(rules.rule_for(usize::MAX), Rule::ZB { .. }) {
        return Err(Error::Config(
            "z^B cannot be the default rule; assign it to the first weighted layer".into(),
        ));
    }
    Ok(())
}

/// Propagate an arbitrary output-layer relevance vector down to the input.
/// This is the backward half of the forward-backward loop; `lrp` seeds it
/// with the one-hot target score.
pub fn lrp_from_output(
    net: &Network,
    x: &Tensor,
    rules: &RuleMap,
    r_output: Tensor,
) -> Result<Tensor> {
    validate_rules(net, rules)?;
    let (_, trace) = net.forward(x)?;
    let mut r = r_output;
    for (l, layer) in net.layers().iter().enumerate().rev() {
        r = relprop_layer(layer, trace.input_of(l), &r, rules.rule_for(l))?;
    }
    Ok(r)
}

/// LRP explanation of output `target`: the relevance at the output layer is
/// initialized to the target score and redistributed down to the input.
pub fn lrp(net: &Network, x: &Tensor, rules: &RuleMap, target: usize) -> Result<Explanation> {
    let (y, _) = net.forward_target(x, target)?;
    let mut seed = vec![0.0; net.output_len()];
    seed[target] = y;
    let r_out = Tensor::from_parts_unchecked(net.output_shape().to_vec(), seed);
    let relevance = lrp_from_output(net, x, rules, r_out)?;
    Ok(Explanation::new("lrp", target, None, relevance))
}

/// Composite preset mirroring the layered strategy used for deep rectifier
/// networks: z^B on the first weighted layer, Gamma(0.25) on the lower half
/// of the remaining weighted layers, scaled-epsilon (factor 1e-6) on the
/// upper half, and the basic rule on the last weighted layer.
pub fn composite_rules(net: &Network, low: Tensor, high: Tensor) -> Result<RuleMap> {
    let weighted: Vec<usize> = net
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_weighted())
        .map(|(i, _)| i)
        .collect();
    if weighted.is_empty() {
        return Err(Error::Config(
            "composite rules require at least one weighted layer".into(),
        ));
    }
    let mut map = RuleMap::uniform(Rule::Zero).with_layer(weighted[0], Rule::ZB { low, high });
    let m = weighted.len();
    if m > 1 {
        map = map.with_layer(weighted[m - 1], Rule::Zero);
        let middle = &weighted[1..m - 1];
        let half = middle.len().div_ceil(2);
        for (pos, &idx) in middle.iter().enumerate() {
            let rule = if pos < half {
                Rule::Gamma(0.25)
            } else {
                Rule::EpsScaled(1e-6)
            };
            map = map.with_layer(idx, rule);
        }
    }
    Ok(map)
}
