//! Explanation evaluation: faithfulness via pixel-flipping, an
//! interpretability proxy via compressed heatmap size, and runtime
//! benchmarking.

pub mod bench;
pub mod flip;
pub mod proxy;

pub use bench::{runtime_bench, BenchEntry, BenchReport};
pub use flip::{
    dataset_mean, impute, pixel_flip, random_flip_baseline, relevance_order, FlipCurve,
    ImputationPolicy,
};
pub use proxy::filesize_proxy;
