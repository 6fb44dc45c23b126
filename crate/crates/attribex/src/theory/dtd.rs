//! Deep Taylor Decomposition reference route.
//!
//! Relevance is redistributed through explicit per-neuron messages
//! `R_{j<-k} = a_j (w_jk + gamma w_jk^+) * t * c_k`, where the root-point
//! step `t` is resolved from the conservation equation
//! `sum_j R_{j<-k} = R_k` and `c_k` comes from the relevance model
//! `R_k = a_k c_k`. This route deliberately uses different arithmetic than
//! the four-step rule in `attribution::lrp` so the two can cross-check each
//! other; it covers bias-free Dense/ReLU/Flatten networks, which is the
//! class the equivalence results are stated for.

use crate::error::{Error, Result};
use crate::runtime::{Layer, Network, Tensor};

/// Messages through one bias-free linear+rectifier stage.
///
/// `a` are the layer inputs, `r_out` the relevance on the layer outputs, and
/// `a_out` the post-rectifier activations used by the relevance model. Where
/// an activation vanishes the model factor is degenerate; those neurons carry
/// zero relevance and are skipped (their messages are zero).
pub fn dtd_messages_dense(
    weight: &Tensor,
    a: &Tensor,
    a_out: &[f64],
    r_out: &[f64],
    gamma: f64,
) -> Vec<f64> {
    let n_in = a.len();
    let n_out = r_out.len();
    let w = weight.data();
    let mut r_in = vec![0.0; n_in];
    for k in 0..n_out {
        if r_out[k] == 0.0 {
            continue;
        }
        let row = &w[k * n_in..(k + 1) * n_in];
        let mut den = 0.0;
        for (j, wj) in row.iter().enumerate() {
            den += a.data()[j] * (wj + gamma * wj.max(0.0));
        }
        if den == 0.0 {
            continue;
        }
        // Resolve t from conservation; keep c_k explicit when the relevance
        // model is well defined, otherwise fold t*c_k into one factor.
        let t_times_c = if a_out[k] != 0.0 {
            let c_k = r_out[k] / a_out[k];
            let t = r_out[k] / (c_k * den);
            t * c_k
        } else {
            r_out[k] / den
        };
        for (j, wj) in row.iter().enumerate() {
            r_in[j] += a.data()[j] * (wj + gamma * wj.max(0.0)) * t_times_c;
        }
    }
    r_in
}

fn require_bias_free(weight_layer: &Layer) -> Result<&Tensor> {
    match weight_layer {
        Layer::Dense { weight, bias: None } => Ok(weight),
        Layer::Dense { bias: Some(_), .. } => Err(Error::Config(
            "the deep Taylor route is defined for bias-free layers".into(),
        )),
        other => Err(Error::Config(format!(
            "the deep Taylor route supports Dense/ReLU/Flatten layers only, got {}",
            other.kind_name()
        ))),
    }
}

/// Full-depth relevance propagation via deep Taylor messages with the
/// gamma-family root points. Equivalent to LRP with the gamma rule on
/// bias-free rectifier networks, computed along an independent path.
pub fn dtd_backward(net: &Network, x: &Tensor, gamma: f64, target: usize) -> Result<Tensor> {
    let (y, trace) = net.forward_target(x, target)?;
    let mut r = vec![0.0; net.output_len()];
    r[target] = y;
    let mut r_shape = net.output_shape().to_vec();
    for (l, layer) in net.layers().iter().enumerate().rev() {
        match layer {
            Layer::Relu | Layer::Flatten => {
                r_shape = trace.input_of(l).shape().to_vec();
                // relevance passes through unchanged (reshaped for Flatten)
            }
            Layer::Dense { .. } => {
                let weight = require_bias_free(layer)?;
                let a = trace.input_of(l);
                let a_out = trace.input_of(l + 1).data();
                // Post-rectifier activations for the relevance model: if a
                // ReLU follows, use its outputs.
                let rectified: Vec<f64> = if matches!(net.layers().get(l + 1), Some(Layer::Relu))
                {
                    a_out.iter().map(|&v| v.max(0.0)).collect()
                } else {
                    a_out.to_vec()
                };
                r = dtd_messages_dense(weight, a, &rectified, &r, gamma);
                r_shape = a.shape().to_vec();
            }
            other => {
                return Err(Error::Config(format!(
                    "the deep Taylor route supports Dense/ReLU/Flatten layers only, got {}",
                    other.kind_name()
                )))
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(r_shape, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{lrp, Rule, RuleMap};
    use crate::rng;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn all_positive_single_layer_matches_lrp_gamma_bit_near() {
        // gamma = 1 on a layer with all-positive weights.
        let mut r = rng::seeded(4);
        let w: Vec<f64> = rng::uniform_vec(&mut r, 8 * 5, 0.05, 1.0);
        let weight = t(vec![8, 5], w);
        let x = t(vec![5], rng::uniform_vec(&mut r, 5, 0.1, 1.0));
        let net = Network::new(
            vec![5],
            vec![
                Layer::Dense {
                    weight: weight.clone(),
                    bias: None,
                },
                Layer::Relu,
            ],
        )
        .unwrap();
        let (_, trace) = net.forward(&x).unwrap();
        let z = trace.input_of(1).data();
        let a_out: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
        let r_out: Vec<f64> = a_out.iter().enumerate().map(|(k, &a)| a * (1.0 + k as f64 * 0.1)).collect();

        let messages = dtd_messages_dense(&weight, &x, &a_out, &r_out, 1.0);

        // Same upstream relevance through the implementation's rule.
        let single = Network::new(
            vec![5],
            vec![Layer::Dense {
                weight: weight.clone(),
                bias: None,
            }],
        )
        .unwrap();
        let rule_route = crate::attribution::lrp_from_output(
            &single,
            &x,
            &RuleMap::uniform(Rule::Gamma(1.0)),
            t(vec![8], r_out.clone()),
        )
        .unwrap();
        for (m, l) in messages.iter().zip(rule_route.data()) {
            assert!((m - l).abs() < 1e-12, "{m} vs {l}");
        }
    }

    #[test]
    fn deep_dtd_matches_lrp_gamma() {
        for seed in 0..4 {
            let mut r = rng::seeded(3000 + seed);
            let net = Network::new(
                vec![6],
                vec![
                    Layer::Dense {
                        weight: t(vec![12, 6], rng::normal_vec(&mut r, 72)),
                        bias: None,
                    },
                    Layer::Relu,
                    Layer::Dense {
                        weight: t(vec![8, 12], rng::normal_vec(&mut r, 96)),
                        bias: None,
                    },
                    Layer::Relu,
                    Layer::Dense {
                        weight: t(vec![1, 8], rng::normal_vec(&mut r, 8)),
                        bias: None,
                    },
                ],
            )
            .unwrap();
            let x = t(vec![6], rng::normal_vec(&mut r, 6));
            for gamma in [0.0, 0.25] {
                let dtd = dtd_backward(&net, &x, gamma, 0).unwrap();
                let rule = lrp(&net, &x, &RuleMap::uniform(Rule::Gamma(gamma)), 0).unwrap();
                for (a, b) in dtd.data().iter().zip(rule.relevance.data()) {
                    assert!((a - b).abs() < 1e-10, "seed {seed} gamma {gamma}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn biased_layers_are_rejected() {
        let net = Network::new(
            vec![2],
            vec![Layer::Dense {
                weight: t(vec![1, 2], vec![1.0, 1.0]),
                bias: Some(t(vec![1], vec![0.5])),
            }],
        )
        .unwrap();
        let x = t(vec![2], vec![1.0, 2.0]);
        assert!(dtd_backward(&net, &x, 0.0, 0).is_err());
    }
}
