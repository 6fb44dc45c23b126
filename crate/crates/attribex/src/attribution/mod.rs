//! Per-sample explanation methods: occlusion, simple Taylor / Gradient x
//! Input, SmoothGrad, (smoothed) Integrated Gradients, LRP with composite
//! rules and the z^B input rule, and BiLRP for similarity models.
//!
//! All operations are read-only over the network; explanations for different
//! samples may run on different threads, and every stochastic method is a
//! pure function of (network, input, configuration, seed).

pub mod bilrp;
pub mod explanation;
pub mod method;
pub mod gradients;
pub mod lrp;
pub mod occlusion;

pub use bilrp::{bilrp, PairRelevance};
pub use explanation::{
    load_explanations, save_explanations, Explanation, IGConfig, OcclusionConfig, RootPolicy,
    Rule, RuleMap,
};
pub use gradients::{gradient_x_input, integrated_gradients, sample_roots, simple_taylor, smoothgrad};
pub use method::MethodSpec;
pub use lrp::{composite_rules, first_weighted_layer, lrp, lrp_from_output};
pub use occlusion::occlusion;
