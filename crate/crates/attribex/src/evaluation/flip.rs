//! Pixel-flipping: remove features from the most to the least relevant,
//! impute them, and track the decay of the model output.

use crate::attribution::Explanation;
use crate::error::{Error, Result};
use crate::rng;
use crate::runtime::{Network, Sample, Tensor};
use rand::seq::SliceRandom;

/// How removed features are filled in.
#[derive(Debug, Clone)]
pub enum ImputationPolicy {
    Zero,
    /// Per-feature mean of a dataset.
    DatasetMean(Tensor),
    /// Iterative inpainting on grid inputs: removed pixels start from the
    /// initializer (dataset mean if provided, else zero) and are repeatedly
    /// replaced by the mean of their in-bounds 4-neighbors.
    NeighborMean {
        iterations: usize,
        init: Option<Tensor>,
    },
}

impl ImputationPolicy {
    pub fn neighbor_mean(init: Option<Tensor>) -> Self {
        ImputationPolicy::NeighborMean {
            iterations: 10,
            init,
        }
    }

    fn validate(&self, shape: &[usize]) -> Result<()> {
        match self {
            ImputationPolicy::Zero => Ok(()),
            ImputationPolicy::DatasetMean(mean) => {
                if mean.shape() != shape {
                    return Err(Error::Config(format!(
                        "dataset mean shape {:?} does not match input {shape:?}",
                        mean.shape()
                    )));
                }
                Ok(())
            }
            ImputationPolicy::NeighborMean { iterations, init } => {
                if *iterations == 0 {
                    return Err(Error::Config("inpainting iterations must be >= 1".into()));
                }
                if shape.len() != 2 && shape.len() != 3 {
                    return Err(Error::Config(
                        "neighbor-mean imputation requires grid-shaped input".into(),
                    ));
                }
                if let Some(init) = init {
                    if init.shape() != shape {
                        return Err(Error::Config(format!(
                            "inpainting initializer shape {:?} does not match input {shape:?}",
                            init.shape()
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Per-feature mean over a dataset of identically shaped samples.
pub fn dataset_mean(samples: &[Sample]) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("dataset mean of an empty dataset".into()))?;
    let shape = first.x.shape().to_vec();
    let mut acc = vec![0.0; first.x.len()];
    for s in samples {
        if s.x.shape() != shape.as_slice() {
            return Err(Error::Config("dataset samples must share one shape".into()));
        }
        for (a, v) in acc.iter_mut().zip(s.x.data()) {
            *a += v;
        }
    }
    let inv = 1.0 / samples.len() as f64;
    Tensor::new(shape, acc.iter().map(|a| a * inv).collect())
}

/// Fill the removed positions of `x` according to the policy. Untouched
/// positions are returned bit-identically.
pub fn impute(x: &Tensor, removed: &[bool], policy: &ImputationPolicy) -> Result<Tensor> {
    policy.validate(x.shape())?;
    let mut data = x.data().to_vec();
    match policy {
        ImputationPolicy::Zero => {
            for (v, &r) in data.iter_mut().zip(removed) {
                if r {
                    *v = 0.0;
                }
            }
        }
        ImputationPolicy::DatasetMean(mean) => {
            for ((v, &r), &m) in data.iter_mut().zip(removed).zip(mean.data()) {
                if r {
                    *v = m;
                }
            }
        }
        ImputationPolicy::NeighborMean { iterations, init } => {
            for (i, (v, &r)) in data.iter_mut().zip(removed).enumerate() {
                if r {
                    *v = init.as_ref().map_or(0.0, |t| t.data()[i]);
                }
            }
            let (channels, h, w) = match x.shape() {
                [h, w] => (1usize, *h, *w),
                [c, h, w] => (*c, *h, *w),
                _ => unreachable!("validated grid shape"),
            };
            for _ in 0..*iterations {
                // Jacobi update: all replacements computed from the previous
                // iterate so the result is order-independent.
                let prev = data.clone();
                for c in 0..channels {
                    for y in 0..h {
                        for xx in 0..w {
                            let idx = (c * h + y) * w + xx;
                            if !removed[idx] {
                                continue;
                            }
                            let mut acc = 0.0;
                            let mut n = 0.0;
                            if y > 0 {
                                acc += prev[idx - w];
                                n += 1.0;
                            }
                            if y + 1 < h {
                                acc += prev[idx + w];
                                n += 1.0;
                            }
                            if xx > 0 {
                                acc += prev[idx - 1];
                                n += 1.0;
                            }
                            if xx + 1 < w {
                                acc += prev[idx + 1];
                                n += 1.0;
                            }
                            data[idx] = acc / n;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// Ordered record of outputs along a feature-removal schedule.
#[derive(Debug, Clone)]
pub struct FlipCurve {
    /// Cumulative number of removed features at each record, starting at 0.
    pub steps: Vec<usize>,
    /// `scores[0]` is the untouched prediction.
    pub scores: Vec<f64>,
    /// Trapezoidal area under the curve, normalized by the number of removal
    /// steps and by the initial score (so curves are comparable across
    /// samples and invariant to positive rescaling of the relevance).
    pub auc: f64,
}

fn auc_of(scores: &[f64]) -> f64 {
    let k = scores.len() - 1;
    if k == 0 {
        return 0.0;
    }
    let trapz: f64 = scores.windows(2).map(|w| (w[0] + w[1]) / 2.0).sum();
    let norm = if scores[0].abs() > 1e-12 { scores[0] } else { 1.0 };
    trapz / (k as f64 * norm)
}

fn flip_with_order(
    net: &Network,
    x: &Tensor,
    order: &[usize],
    policy: &ImputationPolicy,
    step_size: usize,
) -> Result<FlipCurve> {
    if step_size == 0 {
        return Err(Error::Config("step size must be >= 1".into()));
    }
    policy.validate(x.shape())?;
    let d = x.len();
    let target_probe = 0; // curves always track output 0 of the handed net
    let mut removed = vec![false; d];
    let mut steps = vec![0usize];
    let mut scores = vec![net.eval(x, target_probe)?];
    let mut cursor = 0;
    while cursor < d {
        let upto = (cursor + step_size).min(d);
        for &idx in &order[cursor..upto] {
            removed[idx] = true;
        }
        cursor = upto;
        let imputed = impute(x, &removed, policy)?;
        steps.push(cursor);
        scores.push(net.eval(&imputed, target_probe)?);
    }
    let auc = auc_of(&scores);
    Ok(FlipCurve { steps, scores, auc })
}

/// Removal order: descending relevance, ties broken by the lowest flat index.
pub fn relevance_order(expl: &Explanation) -> Vec<usize> {
    let r = expl.relevance.data();
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| {
        r[b].partial_cmp(&r[a])
            .unwrap()
            .then_with(|| a.cmp(&b))
    });
    order
}

/// Pixel-flipping along the explanation's relevance order. The curve tracks
/// the scalar output the explanation targeted.
pub fn pixel_flip(
    net: &Network,
    x: &Tensor,
    expl: &Explanation,
    policy: &ImputationPolicy,
    step_size: usize,
) -> Result<FlipCurve> {
    if expl.relevance.shape() != x.shape() {
        return Err(Error::Config(format!(
            "explanation shape {:?} does not match input {:?}",
            expl.relevance.shape(),
            x.shape()
        )));
    }
    let scoped = scoped_net(net, x, expl.target)?;
    flip_with_order(&scoped, x, &relevance_order(expl), policy, step_size)
}

/// Pixel-flipping along a seeded random permutation.
pub fn random_flip_baseline(
    net: &Network,
    x: &Tensor,
    seed: u64,
    policy: &ImputationPolicy,
    step_size: usize,
    target: usize,
) -> Result<FlipCurve> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.shuffle(&mut rng::seeded(seed));
    let scoped = scoped_net(net, x, target)?;
    flip_with_order(&scoped, x, &order, policy, step_size)
}

/// A view of the network whose output 0 is the chosen target.
fn scoped_net(net: &Network, _x: &Tensor, target: usize) -> Result<Network> {
    if target >= net.output_len() {
        return Err(Error::Config(format!(
            "target {target} out of range for {} outputs",
            net.output_len()
        )));
    }
    if net.output_len() == 1 {
        return Ok(net.clone());
    }
    // Append a one-hot selector row so the flip loop can always read output 0.
    let out = net.output_len();
    let mut w = vec![0.0; out];
    w[target] = 1.0;
    let mut layers = net.layers().to_vec();
    if net.output_shape().len() != 1 {
        layers.push(crate::runtime::Layer::Flatten);
    }
    layers.push(crate::runtime::Layer::Dense {
        weight: Tensor::new(vec![1, out], w)?,
        bias: None,
    });
    Network::new(net.input_shape().to_vec(), layers)
}
