//! Gradient-based attribution: simple Taylor expansion, Gradient x Input,
//! SmoothGrad, and (smoothed) Integrated Gradients.

use crate::attribution::explanation::{Explanation, IGConfig, RootPolicy};
use crate::error::{Error, Result};
use crate::rng;
use crate::runtime::{Network, Tensor};

/// First-order Taylor attribution at a root point:
/// `R_i = [grad f(root)]_i * (x_i - root_i)`.
pub fn simple_taylor(
    net: &Network,
    x: &Tensor,
    root: &Tensor,
    target: usize,
) -> Result<Explanation> {
    if root.shape() != x.shape() {
        return Err(Error::InputShape {
            expected: x.shape().to_vec(),
            got: root.shape().to_vec(),
        });
    }
    let g = net.gradient(root, target)?;
    let relevance = g.zip_map(&x.zip_map(root, |a, b| a - b)?, |gi, di| gi * di)?;
    Ok(Explanation::new("taylor", target, None, relevance))
}

/// `R_i = x_i * [grad f(x)]_i`.
pub fn gradient_x_input(net: &Network, x: &Tensor, target: usize) -> Result<Explanation> {
    let g = net.gradient(x, target)?;
    let relevance = g.zip_map(x, |gi, xi| gi * xi)?;
    Ok(Explanation::new("gxi", target, None, relevance))
}

/// Mean gradient under Gaussian input noise, from the documented seeded
/// generator (ChaCha8 keyed by `seed`, standard-normal draws in flat order,
/// one batch of `x.len()` draws per sample). `sigma = 0` returns the plain
/// gradient.
pub fn smoothgrad(
    net: &Network,
    x: &Tensor,
    sigma: f64,
    samples: usize,
    seed: u64,
    target: usize,
) -> Result<Tensor> {
    if sigma < 0.0 {
        return Err(Error::Config(format!("sigma must be >= 0, got {sigma}")));
    }
    if samples == 0 {
        return Err(Error::Config("samples must be >= 1".into()));
    }
    if sigma == 0.0 {
        return net.gradient(x, target);
    }
    let mut rng = rng::seeded(seed);
    let mut acc = vec![0.0; x.len()];
    for _ in 0..samples {
        let noise = rng::normal_vec(&mut rng, x.len());
        let point = Tensor::new(
            x.shape().to_vec(),
            x.data()
                .iter()
                .zip(&noise)
                .map(|(&v, &n)| v + sigma * n)
                .collect(),
        )?;
        let g = net.gradient(&point, target)?;
        for (a, gi) in acc.iter_mut().zip(g.data()) {
            *a += gi;
        }
    }
    let inv = 1.0 / samples as f64;
    Tensor::new(x.shape().to_vec(), acc.iter().map(|a| a * inv).collect())
}

/// Draw the integration roots for a configuration. Random roots consume the
/// seeded generator in sample order; deterministic policies ignore the seed.
pub fn sample_roots(cfg: &IGConfig, x: &Tensor, seed: Option<u64>) -> Result<Vec<Tensor>> {
    match &cfg.root {
        RootPolicy::Origin => Ok(vec![Tensor::zeros(x.shape().to_vec())]),
        RootPolicy::Fixed(t) => {
            if t.shape() != x.shape() {
                return Err(Error::InputShape {
                    expected: x.shape().to_vec(),
                    got: t.shape().to_vec(),
                });
            }
            Ok(vec![t.clone()])
        }
        RootPolicy::RandomNearOrigin => {
            let seed = seed.ok_or_else(|| {
                Error::Config("random roots require a seed".into())
            })?;
            let mut rng = rng::seeded(seed);
            (0..cfg.samples)
                .map(|_| {
                    let noise = rng::normal_vec(&mut rng, x.len());
                    Tensor::new(
                        x.shape().to_vec(),
                        noise.iter().map(|&n| cfg.sigma * n).collect(),
                    )
                })
                .collect()
        }
    }
}

/// (Smoothed) Integrated Gradients: for each of S roots accumulate
/// `(x - root) . grad f(root + (t-0.5)/T * (x - root))` over `t = 1..T`,
/// then divide by `T*S`. Midpoint sampling of the segment path.
pub fn integrated_gradients(
    net: &Network,
    x: &Tensor,
    cfg: &IGConfig,
    seed: Option<u64>,
    target: usize,
) -> Result<Explanation> {
    cfg.validate()?;
    let roots = sample_roots(cfg, x, seed)?;
    let t_steps = cfg.steps;
    let mut acc = vec![0.0; x.len()];
    for root in &roots {
        let delta: Vec<f64> = x
            .data()
            .iter()
            .zip(root.data())
            .map(|(&xi, &ri)| xi - ri)
            .collect();
        for t in 1..=t_steps {
            let alpha = (t as f64 - 0.5) / t_steps as f64;
            let point = Tensor::new(
                x.shape().to_vec(),
                root.data()
                    .iter()
                    .zip(&delta)
                    .map(|(&ri, &di)| ri + alpha * di)
                    .collect(),
            )?;
            let g = net.gradient(&point, target)?;
            for ((a, &di), &gi) in acc.iter_mut().zip(&delta).zip(g.data()) {
                *a += di * gi;
            }
        }
    }
    let inv = 1.0 / (t_steps * roots.len()) as f64;
    let relevance = Tensor::new(x.shape().to_vec(), acc.iter().map(|a| a * inv).collect())?;
    let method = if cfg.samples > 1 { "smooth-ig" } else { "ig" };
    Ok(Explanation::new(method, target, seed, relevance))
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

    fn seeded_relu_net(seed: u64, d: usize, hidden: usize, bias: bool) -> Network {
        let mut r = rng::seeded(seed);
        let w1 = rng::normal_vec(&mut r, hidden * d);
        let w2 = rng::normal_vec(&mut r, hidden);
        let b1 = if bias {
            Some(Tensor::new(vec![hidden], rng::normal_vec(&mut r, hidden)).unwrap())
        } else {
            None
        };
        Network::new(
            vec![d],
            vec![
                Layer::Dense {
                    weight: Tensor::new(vec![hidden, d], w1).unwrap(),
                    bias: b1,
                },
                Layer::Relu,
                Layer::Dense {
                    weight: Tensor::new(vec![1, hidden], w2).unwrap(),
                    bias: None,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn taylor_linear_at_origin_is_w_times_x() {
        let net = linear_net(vec![2.0, -1.0]);
        let x = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let root = Tensor::zeros(vec![2]);
        let e = simple_taylor(&net, &x, &root, 0).unwrap();
        assert_eq!(e.relevance.data(), &[6.0, -4.0]);
    }

    #[test]
    fn taylor_at_x_is_zero() {
        let net = seeded_relu_net(3, 4, 8, true);
        let x = Tensor::new(vec![4], vec![0.3, -0.8, 1.2, 0.5]).unwrap();
        let e = simple_taylor(&net, &x, &x, 0).unwrap();
        assert!(e.relevance.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn taylor_near_origin_sums_to_f_on_bias_free_relu_nets() {
        for seed in 0..5 {
            let net = seeded_relu_net(seed, 6, 16, false);
            let mut r = rng::seeded(100 + seed);
            let x = Tensor::new(vec![6], rng::normal_vec(&mut r, 6)).unwrap();
            let f = net.eval(&x, 0).unwrap();
            if f.abs() < 1e-3 {
                continue;
            }
            let e = simple_taylor(&net, &x, &x.scaled(1e-6), 0).unwrap();
            // The displacement (x - eps*x) shrinks the sum by exactly eps*f,
            // so the relative defect sits at eps itself.
            let rel = (e.sum_relevance - f).abs() / f.abs();
            assert!(rel < 1.0000001e-6, "seed {seed}: defect {rel}");
        }
    }

    #[test]
    fn smoothgrad_sigma_zero_is_plain_gradient() {
        let net = seeded_relu_net(11, 5, 12, true);
        let x = Tensor::new(vec![5], vec![0.2, -0.4, 0.9, -1.1, 0.6]).unwrap();
        let g = net.gradient(&x, 0).unwrap();
        let s = smoothgrad(&net, &x, 0.0, 10, 42, 0).unwrap();
        for (a, b) in g.data().iter().zip(s.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn smoothgrad_on_linear_model_recovers_w_exactly() {
        // The gradient of a linear map is constant, so the Monte-Carlo mean
        // equals w up to summation rounding no matter the noise.
        let net = linear_net(vec![2.0, -1.0, 0.5]);
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = smoothgrad(&net, &x, 0.5, 1000, 7, 0).unwrap();
        for (si, wi) in s.data().iter().zip([2.0, -1.0, 0.5]) {
            assert!((si - wi).abs() < 1e-12, "{si} vs {wi}");
        }
    }

    #[test]
    fn smoothgrad_equal_seeds_bit_identical() {
        let net = seeded_relu_net(21, 4, 8, true);
        let x = Tensor::new(vec![4], vec![0.3, 0.1, -0.2, 0.8]).unwrap();
        let a = smoothgrad(&net, &x, 0.3, 50, 123, 0).unwrap();
        let b = smoothgrad(&net, &x, 0.3, 50, 123, 0).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn ig_linear_from_origin_is_w_times_x() {
        let net = linear_net(vec![2.0, -1.0]);
        let x = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        for t in [1, 3, 17] {
            let e = integrated_gradients(
                &net,
                &x,
                &IGConfig::segment(RootPolicy::Origin, t),
                None,
                0,
            )
            .unwrap();
            assert!((e.relevance.data()[0] - 6.0).abs() < 1e-12);
            assert!((e.relevance.data()[1] + 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ig_segment_matches_taylor_near_origin_on_bias_free_relu_nets() {
        for seed in 0..5 {
            let net = seeded_relu_net(seed, 6, 16, false);
            let mut r = rng::seeded(200 + seed);
            let x = Tensor::new(vec![6], rng::normal_vec(&mut r, 6)).unwrap();
            let ig = integrated_gradients(
                &net,
                &x,
                &IGConfig::segment(RootPolicy::Origin, 7),
                None,
                0,
            )
            .unwrap();
            let ty = simple_taylor(&net, &x, &x.scaled(1e-9), 0).unwrap();
            let scale = ig.relevance.max_abs().max(ty.relevance.max_abs()).max(1e-30);
            for (a, b) in ig.relevance.data().iter().zip(ty.relevance.data()) {
                assert!(
                    (a - b).abs() / scale < 1e-8,
                    "seed {seed}: {a} vs {b} (scale {scale})"
                );
            }
        }
    }

    #[test]
    fn ig_completeness_error_halves_when_steps_double() {
        // Midpoint-rule defect on piecewise-linear integrands scales ~1/T.
        let ts = [4usize, 8, 16, 32];
        let mut mean_err = [0.0f64; 4];
        let nets = 40;
        for seed in 0..nets {
            let net = seeded_relu_net(1000 + seed, 6, 24, true);
            let mut r = rng::seeded(5000 + seed);
            let x = Tensor::new(vec![6], rng::normal_vec(&mut r, 6)).unwrap();
            let f_x = net.eval(&x, 0).unwrap();
            let f_0 = net.eval(&Tensor::zeros(vec![6]), 0).unwrap();
            for (k, &t) in ts.iter().enumerate() {
                let e = integrated_gradients(
                    &net,
                    &x,
                    &IGConfig::segment(RootPolicy::Origin, t),
                    None,
                    0,
                )
                .unwrap();
                mean_err[k] += (e.sum_relevance - (f_x - f_0)).abs() / nets as f64;
            }
        }
        for k in 0..3 {
            let ratio = mean_err[k + 1] / mean_err[k];
            assert!(
                (0.35..=0.65).contains(&ratio),
                "ratio {ratio} at T={} -> {}, errors {mean_err:?}",
                ts[k],
                ts[k + 1]
            );
        }
    }

    #[test]
    fn ig_random_roots_require_seed_and_are_deterministic() {
        let net = seeded_relu_net(31, 4, 8, true);
        let x = Tensor::new(vec![4], vec![0.5, -0.3, 0.8, 0.1]).unwrap();
        let cfg = IGConfig {
            steps: 3,
            samples: 4,
            sigma: 0.05,
            root: RootPolicy::RandomNearOrigin,
        };
        assert!(integrated_gradients(&net, &x, &cfg, None, 0).is_err());
        let a = integrated_gradients(&net, &x, &cfg, Some(9), 0).unwrap();
        let b = integrated_gradients(&net, &x, &cfg, Some(9), 0).unwrap();
        assert_eq!(a.method, "smooth-ig");
        assert_eq!(a.seed, Some(9));
        for (u, v) in a.relevance.data().iter().zip(b.relevance.data()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }
}
