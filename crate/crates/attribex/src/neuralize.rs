//! Neuralization: rewrite shallow models as explainable networks without
//! retraining. Kernel k-means cluster logits become detection + soft-pooling
//! networks, and softmax heads become soft-min logit networks.
//!
//! Log-sum-exp is computed with max-subtraction everywhere.

use crate::error::{Error, Result};
use crate::jsontext::{as_f64, as_f64_array, as_usize, fmt_f64, get, parse, push_f64_array};
use crate::runtime::layer::log_sum_exp;
use crate::runtime::{Layer, Network, PoolSign, Tensor};
use std::path::Path;

/// A kernel k-means soft cluster-assignment model with Gaussian kernel
/// `K(x, x') = exp(-gamma ||x - x'||^2)`: per-cluster representative sets,
/// kernel width `gamma`, assignment sharpness `beta`, and positive
/// normalizers `z[c]`.
#[derive(Debug, Clone)]
pub struct KernelKMeansModel {
    pub clusters: Vec<Vec<Tensor>>,
    pub gamma: f64,
    pub beta: f64,
    pub z: Vec<f64>,
    pub dim: usize,
}

impl KernelKMeansModel {
    pub fn new(
        clusters: Vec<Vec<Tensor>>,
        gamma: f64,
        beta: f64,
        z: Vec<f64>,
    ) -> Result<Self> {
        if clusters.len() < 2 {
            return Err(Error::Config("need at least 2 clusters".into()));
        }
        if clusters.iter().any(|c| c.is_empty()) {
            return Err(Error::Config(
                "every cluster needs at least one representative".into(),
            ));
        }
        if gamma <= 0.0 || beta <= 0.0 {
            return Err(Error::Config(format!(
                "gamma and beta must be > 0, got gamma={gamma}, beta={beta}"
            )));
        }
        if z.len() != clusters.len() || z.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::Config(
                "normalizers must be positive, one per cluster".into(),
            ));
        }
        let dim = clusters[0][0].len();
        for c in &clusters {
            for rep in c {
                if rep.rank() != 1 || rep.len() != dim {
                    return Err(Error::Config(format!(
                        "representatives must all be rank-1 of dimension {dim}"
                    )));
                }
            }
        }
        Ok(KernelKMeansModel {
            clusters,
            gamma,
            beta,
            z,
            dim,
        })
    }

    pub fn check_cluster(&self, c: usize) -> Result<()> {
        if c >= self.clusters.len() {
            return Err(Error::Config(format!(
                "cluster {c} out of range for {} clusters",
                self.clusters.len()
            )));
        }
        Ok(())
    }
}

/// Log kernel-density score of cluster `c`:
/// `D_c = 1/gamma * (log sum_i exp(-gamma ||x - x_i||^2) - log Z_c)`.
fn log_density(model: &KernelKMeansModel, x: &Tensor, c: usize) -> f64 {
    let sq_dists: Vec<f64> = model.clusters[c]
        .iter()
        .map(|rep| {
            rep.data()
                .iter()
                .zip(x.data())
                .map(|(r, v)| (v - r) * (v - r))
                .sum::<f64>()
        })
        .collect();
    let lse = log_sum_exp(&sq_dists.iter().map(|&d| -model.gamma * d).collect::<Vec<_>>());
    (lse - model.z[c].ln()) / model.gamma
}

/// Log probability ratio in favor of cluster `c`, evaluated directly from
/// the power-assignment form over the kernel densities.
pub fn kkm_logit_direct(model: &KernelKMeansModel, x: &Tensor, c: usize) -> Result<f64> {
    model.check_cluster(c)?;
    if x.len() != model.dim {
        return Err(Error::InputShape {
            expected: vec![model.dim],
            got: x.shape().to_vec(),
        });
    }
    let log_num = model.beta * log_density(model, x, c);
    let competitors: Vec<f64> = (0..model.clusters.len())
        .filter(|&k| k != c)
        .map(|k| model.beta * log_density(model, x, k))
        .collect();
    let logit = log_num - log_sum_exp(&competitors);
    if !logit.is_finite() {
        return Err(Error::Numerics(format!(
            "kernel sums degenerate at this point (logit = {logit})"
        )));
    }
    Ok(logit)
}

/// Emit the equivalent detection + pooling network for cluster `c`:
/// a linear detection layer with `w_ij = 2(x_i - x_j)` and
/// `b_ijk = ||x_j||^2 - ||x_i||^2 + 1/gamma (log Z_k - log Z_c)`, followed by
/// a soft-max pool over the cluster-c representatives (sharpness gamma), a
/// soft-min pool over competitor representatives (gamma), a soft-min pool
/// over competitors (beta), and a final scaling by beta.
///
/// With `absorb_bias` the detection biases become weights on an extra
/// constant-1 input feature (input shape `[dim + 1]`), which makes the
/// network bias-free so relevance conservation is exact.
pub fn kkm_neuralize(model: &KernelKMeansModel, c: usize, absorb_bias: bool) -> Result<Network> {
    model.check_cluster(c)?;
    let d = model.dim;
    let n_c = model.clusters[c].len();
    let competitors: Vec<usize> = (0..model.clusters.len()).filter(|&k| k != c).collect();

    let in_dim = if absorb_bias { d + 1 } else { d };
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for &k in &competitors {
        let log_ratio = (model.z[k].ln() - model.z[c].ln()) / model.gamma;
        for rep_j in &model.clusters[k] {
            let sq_j: f64 = rep_j.data().iter().map(|v| v * v).sum();
            for rep_i in &model.clusters[c] {
                let sq_i: f64 = rep_i.data().iter().map(|v| v * v).sum();
                let b = sq_j - sq_i + log_ratio;
                for (wi, wj) in rep_i.data().iter().zip(rep_j.data()) {
                    weights.push(2.0 * (wi - wj));
                }
                if absorb_bias {
                    weights.push(b);
                } else {
                    biases.push(b);
                }
            }
        }
    }
    let rows = weights.len() / in_dim;
    let detection = Layer::Dense {
        weight: Tensor::new(vec![rows, in_dim], weights)?,
        bias: if absorb_bias {
            None
        } else {
            Some(Tensor::new(vec![rows], biases)?)
        },
    };

    let max_over_i = Layer::LogSumExpPool {
        groups: vec![n_c; rows / n_c],
        beta: model.gamma,
        sign: PoolSign::Max,
    };
    let min_over_j = Layer::LogSumExpPool {
        groups: competitors.iter().map(|&k| model.clusters[k].len()).collect(),
        beta: model.gamma,
        sign: PoolSign::Min,
    };
    let min_over_k = Layer::LogSumExpPool {
        groups: vec![competitors.len()],
        beta: model.beta,
        sign: PoolSign::Min,
    };
    let scale = Layer::Dense {
        weight: Tensor::new(vec![1, 1], vec![model.beta])?,
        bias: None,
    };

    Network::new(
        vec![in_dim],
        vec![detection, max_over_i, min_over_j, min_over_k, scale],
    )
    .map(|n| n.with_name(format!("kkm-logit-cluster-{c}")))
}

/// Append a constant-1 feature to an input for bias-absorbed networks.
pub fn augment_one(x: &Tensor) -> Result<Tensor> {
    let mut data = x.data().to_vec();
    data.push(1.0);
    Tensor::new(vec![x.len() + 1], data)
}

/// Replace the final Dense layer (class scores) by a soft-min head computing
/// the log probability ratio in favor of class `c`:
/// `-1/beta * log sum_{k != c} exp(-beta (w_c - w_k)^T a)`.
/// With `beta = 1` this equals the log-odds of the softmax over the scores.
pub fn neuralize_logit(net: &Network, c: usize, beta: f64) -> Result<Network> {
    if beta <= 0.0 {
        return Err(Error::Config(format!("beta must be > 0, got {beta}")));
    }
    let (weight, bias) = match net.layers().last() {
        Some(Layer::Dense { weight, bias }) => (weight, bias),
        other => {
            return Err(Error::Config(format!(
                "final layer must be Dense into class scores, got {:?}",
                other.map(|l| l.kind_name())
            )))
        }
    };
    let n_classes = weight.shape()[0];
    let n_in = weight.shape()[1];
    if n_classes < 2 {
        return Err(Error::Config(
            "logit neuralization needs at least 2 classes".into(),
        ));
    }
    if c >= n_classes {
        return Err(Error::Config(format!(
            "class {c} out of range for {n_classes} classes"
        )));
    }
    let w = weight.data();
    let row_c = &w[c * n_in..(c + 1) * n_in];
    let mut rows = Vec::with_capacity((n_classes - 1) * n_in);
    let mut head_bias = Vec::with_capacity(n_classes - 1);
    for k in (0..n_classes).filter(|&k| k != c) {
        let row_k = &w[k * n_in..(k + 1) * n_in];
        for (wc, wk) in row_c.iter().zip(row_k) {
            rows.push(wc - wk);
        }
        if let Some(b) = bias {
            head_bias.push(b.data()[c] - b.data()[k]);
        }
    }
    let head = Layer::SoftMinHead {
        weight: Tensor::new(vec![n_classes - 1, n_in], rows)?,
        bias: if bias.is_some() {
            Some(Tensor::new(vec![n_classes - 1], head_bias)?)
        } else {
            None
        },
        beta,
    };
    let mut layers: Vec<Layer> = net.layers()[..net.layers().len() - 1].to_vec();
    layers.push(head);
    Network::new(net.input_shape().to_vec(), layers)
        .map(|n| n.with_name(format!("{}-logit-{c}", net.name)))
}

// ── model file I/O ───────────────────────────────────────────────────

pub fn kkm_to_json(model: &KernelKMeansModel) -> String {
    let mut buf = String::from("{\"gamma\":");
    buf.push_str(&fmt_f64(model.gamma));
    buf.push_str(",\"beta\":");
    buf.push_str(&fmt_f64(model.beta));
    buf.push_str(",\"Z\":");
    push_f64_array(&mut buf, &model.z);
    buf.push_str(&format!(",\"dim\":{}", model.dim));
    buf.push_str(",\"clusters\":[");
    for (i, cluster) in model.clusters.iter().enumerate() {
        if i > 0 {
            buf.push(',');
        }
        let flat: Vec<f64> = cluster.iter().flat_map(|r| r.data().to_vec()).collect();
        push_f64_array(&mut buf, &flat);
    }
    buf.push_str("]}\n");
    buf
}

pub fn kkm_from_json(text: &str) -> Result<KernelKMeansModel> {
    let v = parse(text, "kernel k-means file")?;
    let gamma = as_f64(get(&v, "gamma", "kkm")?, "kkm `gamma`")?;
    let beta = as_f64(get(&v, "beta", "kkm")?, "kkm `beta`")?;
    let z = as_f64_array(get(&v, "Z", "kkm")?, "kkm `Z`")?;
    let dim = as_usize(get(&v, "dim", "kkm")?, "kkm `dim`")?;
    let clusters_v = get(&v, "clusters", "kkm")?
        .as_array()
        .ok_or_else(|| Error::DataFormat("kkm `clusters` must be an array".into()))?;
    let mut clusters = Vec::with_capacity(clusters_v.len());
    for (i, cv) in clusters_v.iter().enumerate() {
        let flat = as_f64_array(cv, &format!("kkm cluster {i}"))?;
        if dim == 0 || flat.len() % dim != 0 {
            return Err(Error::DataFormat(format!(
                "kkm cluster {i}: length {} not a multiple of dim {dim}",
                flat.len()
            )));
        }
        let reps = flat
            .chunks(dim)
            .map(|chunk| Tensor::new(vec![dim], chunk.to_vec()))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::DataFormat(format!("kkm cluster {i}: {e}")))?;
        clusters.push(reps);
    }
    KernelKMeansModel::new(clusters, gamma, beta, z)
        .map_err(|e| Error::DataFormat(e.to_string()))
}

pub fn load_kkm(path: impl AsRef<Path>) -> Result<KernelKMeansModel> {
    kkm_from_json(&std::fs::read_to_string(path)?)
}

pub fn save_kkm(model: &KernelKMeansModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, kkm_to_json(model))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{lrp, Rule, RuleMap};
    use crate::rng;
    use crate::runtime::layer::soft_min;

    fn t(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::new(vec![n], data).unwrap()
    }

    fn three_cluster_model(seed: u64) -> KernelKMeansModel {
        let centers = [[-2.0, 0.0], [2.0, 0.0], [0.0, 2.5]];
        let mut r = rng::seeded(seed);
        let clusters = centers
            .iter()
            .map(|c| {
                (0..3)
                    .map(|_| {
                        let n = rng::normal_vec(&mut r, 2);
                        t(vec![c[0] + 0.3 * n[0], c[1] + 0.3 * n[1]])
                    })
                    .collect()
            })
            .collect();
        KernelKMeansModel::new(clusters, 0.7, 2.0, vec![3.0, 3.0, 3.0]).unwrap()
    }

    #[test]
    fn mirrored_clusters_give_zero_logit() {
        let x = t(vec![0.5, -1.0]);
        let delta = [1.3, 0.4];
        let reps_a = vec![t(vec![x.data()[0] + delta[0], x.data()[1] + delta[1]])];
        let reps_b = vec![t(vec![x.data()[0] - delta[0], x.data()[1] - delta[1]])];
        let model =
            KernelKMeansModel::new(vec![reps_a, reps_b], 0.5, 1.5, vec![1.0, 1.0]).unwrap();
        let logit = kkm_logit_direct(&model, &x, 0).unwrap();
        assert!(logit.abs() < 1e-12, "logit {logit}");
    }

    #[test]
    fn isolated_representative_gives_large_positive_logit() {
        let model = KernelKMeansModel::new(
            vec![vec![t(vec![0.0, 0.0])], vec![t(vec![50.0, 0.0])]],
            1.0,
            1.0,
            vec![1.0, 1.0],
        )
        .unwrap();
        let logit = kkm_logit_direct(&model, &t(vec![0.0, 0.0]), 0).unwrap();
        assert!(logit > 100.0, "logit {logit}");
    }

    #[test]
    fn direct_and_neuralized_agree() {
        let model = three_cluster_model(5);
        let mut r = rng::seeded(99);
        for c in 0..3 {
            let net = kkm_neuralize(&model, c, false).unwrap();
            for _ in 0..40 {
                let n = rng::normal_vec(&mut r, 2);
                let x = t(vec![2.0 * n[0], 2.0 * n[1]]);
                let direct = kkm_logit_direct(&model, &x, c).unwrap();
                let neural = net.eval(&x, 0).unwrap();
                let rel = (direct - neural).abs() / direct.abs().max(1e-12);
                assert!(rel < 1e-6, "cluster {c}: {direct} vs {neural}");
            }
        }
    }

    #[test]
    fn singleton_clusters_reduce_to_scaled_linear() {
        let xi = t(vec![1.0, -0.5]);
        let xj = t(vec![-0.7, 0.9]);
        let beta = 2.5;
        let model = KernelKMeansModel::new(
            vec![vec![xi.clone()], vec![xj.clone()]],
            0.8,
            beta,
            vec![1.3, 0.6],
        )
        .unwrap();
        let net = kkm_neuralize(&model, 0, false).unwrap();
        let w: Vec<f64> = xi
            .data()
            .iter()
            .zip(xj.data())
            .map(|(a, b)| 2.0 * (a - b))
            .collect();
        let b = xj.dot(&xj).unwrap() - xi.dot(&xi).unwrap()
            + (model.z[1].ln() - model.z[0].ln()) / model.gamma;
        let x = t(vec![0.33, -1.2]);
        // Same accumulation order as the Dense kernel: bias first.
        let mut z = b;
        z += w[0] * x.data()[0];
        z += w[1] * x.data()[1];
        let expected = beta * z;
        let got = net.eval(&x, 0).unwrap();
        // All pools act on singleton blocks, so log-sum-exp is exact.
        assert_eq!(expected.to_bits(), got.to_bits());
    }

    #[test]
    fn lrp_conserves_on_bias_absorbed_network() {
        let model = three_cluster_model(8);
        let net = kkm_neuralize(&model, 1, true).unwrap();
        let mut r = rng::seeded(123);
        let mut checked = 0;
        for _ in 0..20 {
            let n = rng::normal_vec(&mut r, 2);
            let x = t(vec![1.5 * n[0], 1.5 * n[1]]);
            let logit = kkm_logit_direct(&model, &x, 1).unwrap();
            if logit.abs() < 1e-2 {
                continue;
            }
            let xa = augment_one(&x).unwrap();
            let e = lrp(&net, &xa, &RuleMap::uniform(Rule::Zero), 0).unwrap();
            let defect = (e.sum_relevance - logit).abs() / logit.abs();
            assert!(defect < 1e-5, "defect {defect} at logit {logit}");
            checked += 1;
        }
        assert!(checked > 5);
    }

    #[test]
    fn two_class_head_is_exactly_the_difference_row() {
        let mut r = rng::seeded(3);
        let w = rng::normal_vec(&mut r, 2 * 4);
        let net = Network::new(
            vec![4],
            vec![Layer::Dense {
                weight: Tensor::new(vec![2, 4], w.clone()).unwrap(),
                bias: None,
            }],
        )
        .unwrap();
        for beta in [0.5, 1.0, 37.0] {
            let logit_net = neuralize_logit(&net, 0, beta).unwrap();
            let x = t(vec![0.2, -0.4, 1.0, 0.7]);
            let expected: f64 = (0..4).map(|j| (w[j] - w[4 + j]) * x.data()[j]).sum();
            let got = logit_net.eval(&x, 0).unwrap();
            assert_eq!(expected.to_bits(), got.to_bits(), "beta {beta}");
        }
    }

    #[test]
    fn beta_one_matches_softmax_log_odds() {
        let mut r = rng::seeded(11);
        let net = Network::new(
            vec![3],
            vec![
                Layer::Dense {
                    weight: Tensor::new(vec![6, 3], rng::normal_vec(&mut r, 18)).unwrap(),
                    bias: Some(Tensor::new(vec![6], rng::normal_vec(&mut r, 6)).unwrap()),
                },
                Layer::Relu,
                Layer::Dense {
                    weight: Tensor::new(vec![4, 6], rng::normal_vec(&mut r, 24)).unwrap(),
                    bias: Some(Tensor::new(vec![4], rng::normal_vec(&mut r, 4)).unwrap()),
                },
            ],
        )
        .unwrap();
        for c in 0..4 {
            let logit_net = neuralize_logit(&net, c, 1.0).unwrap();
            for _ in 0..10 {
                let x = t(rng::normal_vec(&mut r, 3));
                let (scores, _) = net.forward(&x).unwrap();
                let max = scores.data().iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let exps: Vec<f64> = scores.data().iter().map(|&s| (s - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                let p_c = exps[c] / total;
                let oracle = (p_c / (1.0 - p_c)).ln();
                let got = logit_net.eval(&x, 0).unwrap();
                let rel = (oracle - got).abs() / oracle.abs().max(1.0);
                assert!(rel < 1e-6, "class {c}: {oracle} vs {got}");
            }
        }
    }

    #[test]
    fn competitor_permutation_is_bit_identical() {
        // Reorder the non-target rows of the final Dense layer; under sorted
        // summation inside log-sum-exp the head output must not move a bit.
        let w = vec![
            0.3, -0.2, 0.7, // class 0
            1.1, 0.4, -0.9, // class 1
            -0.5, 0.8, 0.2, // class 2
            0.6, -1.0, 0.1, // class 3
        ];
        let build = |rows: &[usize]| {
            let mut data = Vec::new();
            for &r in rows {
                data.extend_from_slice(&w[r * 3..(r + 1) * 3]);
            }
            Network::new(
                vec![3],
                vec![Layer::Dense {
                    weight: Tensor::new(vec![4, 3], data).unwrap(),
                    bias: None,
                }],
            )
            .unwrap()
        };
        let net_a = build(&[0, 1, 2, 3]);
        let net_b = build(&[0, 3, 2, 1]);
        let x = t(vec![0.9, -0.3, 0.5]);
        let ya = neuralize_logit(&net_a, 0, 4.0).unwrap().eval(&x, 0).unwrap();
        let yb = neuralize_logit(&net_b, 0, 4.0).unwrap().eval(&x, 0).unwrap();
        assert_eq!(ya.to_bits(), yb.to_bits());
    }

    #[test]
    fn soft_min_head_converges_to_hard_min() {
        let mut r = rng::seeded(21);
        let w = rng::normal_vec(&mut r, 5 * 4);
        let net = Network::new(
            vec![4],
            vec![Layer::Dense {
                weight: Tensor::new(vec![5, 4], w.clone()).unwrap(),
                bias: None,
            }],
        )
        .unwrap();
        let x = t(vec![0.8, -0.2, 0.5, 1.1]);
        let diffs: Vec<f64> = (1..5)
            .map(|k| {
                (0..4)
                    .map(|j| (w[j] - w[k * 4 + j]) * x.data()[j])
                    .sum::<f64>()
            })
            .collect();
        let hard = diffs.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut prev_gap = f64::INFINITY;
        for beta in [1.0, 10.0, 100.0, 1000.0] {
            let got = neuralize_logit(&net, 0, beta).unwrap().eval(&x, 0).unwrap();
            assert!((got - soft_min(&diffs, beta)).abs() < 1e-12);
            let gap = hard - got;
            assert!(gap >= -1e-12, "soft min above hard min at beta {beta}");
            assert!(gap <= prev_gap + 1e-15, "gap grew at beta {beta}");
            prev_gap = gap;
            if beta == 1000.0 {
                assert!(gap.abs() < 1e-3, "gap {gap} at beta 1000");
            }
        }
    }

    #[test]
    fn single_class_model_is_config_error() {
        let net = Network::new(
            vec![2],
            vec![Layer::Dense {
                weight: Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(),
                bias: None,
            }],
        )
        .unwrap();
        assert!(matches!(
            neuralize_logit(&net, 0, 1.0).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn cluster_relabeling_preserves_argmax() {
        let model = three_cluster_model(42);
        // Swap clusters 0 and 2 (and their normalizers).
        let swapped = KernelKMeansModel::new(
            vec![
                model.clusters[2].clone(),
                model.clusters[1].clone(),
                model.clusters[0].clone(),
            ],
            model.gamma,
            model.beta,
            vec![model.z[2], model.z[1], model.z[0]],
        )
        .unwrap();
        let mut r = rng::seeded(7);
        for _ in 0..20 {
            let n = rng::normal_vec(&mut r, 2);
            let x = t(vec![2.0 * n[0], 2.0 * n[1]]);
            let logits: Vec<f64> = (0..3)
                .map(|c| kkm_logit_direct(&model, &x, c).unwrap())
                .collect();
            let logits_swapped: Vec<f64> = (0..3)
                .map(|c| kkm_logit_direct(&swapped, &x, c).unwrap())
                .collect();
            let argmax = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            let perm = [2usize, 1, 0];
            assert_eq!(perm[argmax(&logits)], argmax(&logits_swapped));
        }
    }

    #[test]
    fn kkm_file_round_trip() {
        let model = three_cluster_model(1);
        let back = kkm_from_json(&kkm_to_json(&model)).unwrap();
        assert_eq!(back.clusters.len(), 3);
        assert_eq!(back.dim, 2);
        for (c0, c1) in model.clusters.iter().zip(&back.clusters) {
            for (r0, r1) in c0.iter().zip(c1) {
                for (a, b) in r0.data().iter().zip(r1.data()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
