//! attribex: an attribution engine for small feed-forward and convolutional
//! networks. It runs inference, produces per-feature explanations (occlusion,
//! gradient-based methods, relevance propagation), evaluates explanation
//! faithfulness, performs dataset-wide explanation analysis, and checks the
//! underlying equivalence results against brute-force oracles.

pub mod attribution;
pub mod error;
pub mod evaluation;
pub mod jsontext;
pub mod neuralize;
pub mod rng;
pub mod runtime;
pub mod theory;

pub use error::{Error, Result};
