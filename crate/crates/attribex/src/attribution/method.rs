//! Uniform dispatch over the attribution methods, used by batch evaluation
//! and the command line.

use crate::attribution::explanation::{Explanation, IGConfig, OcclusionConfig, RuleMap};
use crate::attribution::gradients::{
    gradient_x_input, integrated_gradients, simple_taylor, smoothgrad,
};
use crate::attribution::lrp::lrp;
use crate::attribution::occlusion::occlusion;
use crate::error::Result;
use crate::runtime::{Network, Tensor};

/// One attribution method with its configuration, runnable on any
/// (network, input, target) triple.
#[derive(Debug, Clone)]
pub enum MethodSpec {
    Occlusion(OcclusionConfig),
    /// Plain gradient (saliency).
    Gradient,
    GradientXInput,
    /// Taylor attribution at `eps * x`.
    TaylorNearOrigin { eps: f64 },
    SmoothGrad { sigma: f64, samples: usize, seed: u64 },
    IntegratedGradients { cfg: IGConfig, seed: Option<u64> },
    Lrp(RuleMap),
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Occlusion(_) => "occlusion",
            MethodSpec::Gradient => "gradient",
            MethodSpec::GradientXInput => "gxi",
            MethodSpec::TaylorNearOrigin { .. } => "taylor",
            MethodSpec::SmoothGrad { .. } => "smoothgrad",
            MethodSpec::IntegratedGradients { cfg, .. } => {
                if cfg.samples > 1 {
                    "smooth-ig"
                } else {
                    "ig"
                }
            }
            MethodSpec::Lrp(_) => "lrp",
        }
    }

    pub fn run(&self, net: &Network, x: &Tensor, target: usize) -> Result<Explanation> {
        match self {
            MethodSpec::Occlusion(cfg) => occlusion(net, x, cfg, target),
            MethodSpec::Gradient => {
                let g = net.gradient(x, target)?;
                Ok(Explanation::new("gradient", target, None, g))
            }
            MethodSpec::GradientXInput => gradient_x_input(net, x, target),
            MethodSpec::TaylorNearOrigin { eps } => {
                simple_taylor(net, x, &x.scaled(*eps), target)
            }
            MethodSpec::SmoothGrad {
                sigma,
                samples,
                seed,
            } => {
                let g = smoothgrad(net, x, *sigma, *samples, *seed, target)?;
                Ok(Explanation::new("smoothgrad", target, Some(*seed), g))
            }
            MethodSpec::IntegratedGradients { cfg, seed } => {
                integrated_gradients(net, x, cfg, *seed, target)
            }
            MethodSpec::Lrp(rules) => lrp(net, x, rules, target),
        }
    }
}
