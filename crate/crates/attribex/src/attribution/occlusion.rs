//! Occlusion analysis: score each patch by the output drop it causes when
//! replaced, and spread patch scores back onto the covered positions.

use crate::attribution::explanation::{Explanation, OcclusionConfig};
use crate::error::Result;
use crate::runtime::{Network, Tensor};

/// Iterate patch start offsets along one dimension.
fn starts(extent: usize, patch: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..=(extent - patch)).step_by(stride)
}

/// All flat indices covered by the patch starting at `origin`.
fn patch_indices(shape: &[usize], origin: &[usize], patch: &[usize]) -> Vec<usize> {
    let mut idxs = vec![0usize];
    for (d, (&o, &p)) in origin.iter().zip(patch).enumerate() {
        let mut next = Vec::with_capacity(idxs.len() * p);
        for base in &idxs {
            for k in 0..p {
                next.push(base * shape[d] + o + k);
            }
        }
        idxs = next;
    }
    idxs
}

/// Per-feature occlusion scores: `R_i = f(x) - f(x with the patch covering i
/// replaced)`. Positions covered by several patches receive the average of
/// their patch scores; positions covered by none receive exactly 0.
pub fn occlusion(
    net: &Network,
    x: &Tensor,
    cfg: &OcclusionConfig,
    target: usize,
) -> Result<Explanation> {
    cfg.validate(x.shape())?;
    let base = net.eval(x, target)?;

    let shape = x.shape().to_vec();
    let rank = shape.len();
    let mut scores = vec![0.0; x.len()];
    let mut counts = vec![0u32; x.len()];

    // Odometer over the patch grid.
    let dim_starts: Vec<Vec<usize>> = (0..rank)
        .map(|d| starts(shape[d], cfg.patch[d], cfg.stride[d]).collect())
        .collect();
    let mut cursor = vec![0usize; rank];
    let mut occluded = x.clone();
    loop {
        let origin: Vec<usize> = (0..rank).map(|d| dim_starts[d][cursor[d]]).collect();
        let covered = patch_indices(&shape, &origin, &cfg.patch);

        let saved: Vec<f64> = covered.iter().map(|&i| occluded.data()[i]).collect();
        for &i in &covered {
            occluded.data_mut()[i] = cfg.replacement;
        }
        let score = base - net.eval(&occluded, target)?;
        for (&i, &v) in covered.iter().zip(&saved) {
            occluded.data_mut()[i] = v;
            scores[i] += score;
            counts[i] += 1;
        }

        // advance odometer
        let mut d = rank;
        loop {
            if d == 0 {
                return finish(scores, counts, shape, target);
            }
            d -= 1;
            cursor[d] += 1;
            if cursor[d] < dim_starts[d].len() {
                break;
            }
            cursor[d] = 0;
        }
    }
}

fn finish(
    mut scores: Vec<f64>,
    counts: Vec<u32>,
    shape: Vec<usize>,
    target: usize,
) -> Result<Explanation> {
    for (s, &c) in scores.iter_mut().zip(&counts) {
        if c > 1 {
            *s /= c as f64;
        }
    }
    let relevance = Tensor::new(shape, scores)?;
    Ok(Explanation::new("occlusion", target, None, relevance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::Layer;

    fn linear_net(w: Vec<f64>) -> Network {
        let n = w.len();
        Network::new(
            vec![n],
            vec![Layer::Dense {
                weight: Tensor::new(vec![1, n], w).unwrap(),
                bias: None,
            }],
        )
        .unwrap()
    }

    #[test]
    fn linear_singleton_occlusion_is_w_times_x() {
        let net = linear_net(vec![2.0, -1.0]);
        let x = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let e = occlusion(&net, &x, &OcclusionConfig::singleton(1), 0).unwrap();
        assert_eq!(e.relevance.data(), &[6.0, -4.0]);
    }

    #[test]
    fn constant_network_scores_zero() {
        // Weight zero, bias 5: the output never moves.
        let net = Network::new(
            vec![3],
            vec![Layer::Dense {
                weight: Tensor::new(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap(),
                bias: Some(Tensor::new(vec![1], vec![5.0]).unwrap()),
            }],
        )
        .unwrap();
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap();
        let e = occlusion(&net, &x, &OcclusionConfig::singleton(1), 0).unwrap();
        assert_eq!(e.relevance.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn uncovered_positions_get_exactly_zero() {
        // patch 2 stride 2 on length 5: position 4 is never covered.
        let net = linear_net(vec![1.0, 1.0, 1.0, 1.0, 1.0]);
        let x = Tensor::new(vec![5], vec![1.0, 1.0, 1.0, 1.0, 9.0]).unwrap();
        let cfg = OcclusionConfig {
            patch: vec![2],
            stride: vec![2],
            replacement: 0.0,
        };
        let e = occlusion(&net, &x, &cfg, 0).unwrap();
        assert_eq!(e.relevance.data()[4], 0.0);
        assert_eq!(e.relevance.data()[0], 2.0);
    }

    #[test]
    fn overlapping_patches_average() {
        // patch 2 stride 1 on length 3: middle position covered twice.
        let net = linear_net(vec![1.0, 1.0, 1.0]);
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 4.0]).unwrap();
        let cfg = OcclusionConfig {
            patch: vec![2],
            stride: vec![1],
            replacement: 0.0,
        };
        let e = occlusion(&net, &x, &cfg, 0).unwrap();
        // patches: [0,1] score 3, [1,2] score 6
        assert_eq!(e.relevance.data(), &[3.0, 4.5, 6.0]);
    }

    #[test]
    fn oversized_patch_is_config_error() {
        let net = linear_net(vec![1.0, 1.0]);
        let x = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let cfg = OcclusionConfig {
            patch: vec![3],
            stride: vec![1],
            replacement: 0.0,
        };
        assert!(occlusion(&net, &x, &cfg, 0).is_err());
    }
}
