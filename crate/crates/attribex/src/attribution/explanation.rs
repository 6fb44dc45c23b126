//! Explanation values and configuration types shared by all attribution
//! methods, plus the explanation file format.

use crate::error::{Error, Result};
use crate::jsontext::{
    as_f64_array, as_usize, as_usize_array, fmt_f64, get, parse, push_f64_array, push_usize_array,
};
use crate::runtime::Tensor;
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;

/// A relevance tensor shaped like the input it explains, plus metadata.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub relevance: Tensor,
    pub method: String,
    pub target: usize,
    pub seed: Option<u64>,
    /// Cached `sum_i R_i`, accumulated in flat (row-major) order.
    pub sum_relevance: f64,
}

impl Explanation {
    pub fn new(method: impl Into<String>, target: usize, seed: Option<u64>, relevance: Tensor) -> Self {
        let sum_relevance = relevance.sum();
        Explanation {
            relevance,
            method: method.into(),
            target,
            seed,
            sum_relevance,
        }
    }

    pub fn to_json(&self) -> String {
        let mut buf = String::from("{\"method\":");
        buf.push_str(&Value::String(self.method.clone()).to_string());
        buf.push_str(&format!(",\"target\":{}", self.target));
        match self.seed {
            Some(s) => buf.push_str(&format!(",\"seed\":{s}")),
            None => buf.push_str(",\"seed\":null"),
        }
        buf.push_str(",\"shape\":");
        push_usize_array(&mut buf, self.relevance.shape());
        buf.push_str(",\"relevance\":");
        push_f64_array(&mut buf, self.relevance.data());
        buf.push_str(",\"sum\":");
        buf.push_str(&fmt_f64(self.sum_relevance));
        buf.push('}');
        buf
    }

    pub fn from_json_value(v: &Value, ctx: &str) -> Result<Self> {
        let method = get(v, "method", ctx)?
            .as_str()
            .ok_or_else(|| Error::DataFormat(format!("{ctx}: `method` must be a string")))?
            .to_string();
        let target = as_usize(get(v, "target", ctx)?, &format!("{ctx} `target`"))?;
        let seed = match v.get("seed") {
            None | Some(Value::Null) => None,
            Some(s) => Some(
                s.as_u64()
                    .ok_or_else(|| Error::DataFormat(format!("{ctx}: `seed` must be an integer")))?,
            ),
        };
        let shape = as_usize_array(get(v, "shape", ctx)?, &format!("{ctx} `shape`"))?;
        let data = as_f64_array(get(v, "relevance", ctx)?, &format!("{ctx} `relevance`"))?;
        let relevance =
            Tensor::new(shape, data).map_err(|e| Error::DataFormat(format!("{ctx}: {e}")))?;
        Ok(Explanation::new(method, target, seed, relevance))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v = parse(text, "explanation file")?;
        Self::from_json_value(&v, "explanation")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Save a batch of explanations as a JSON array.
pub fn save_explanations(expls: &[Explanation], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = String::from("[");
    for (i, e) in expls.iter().enumerate() {
        if i > 0 {
            buf.push(',');
        }
        buf.push_str(&e.to_json());
    }
    buf.push_str("]\n");
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_explanations(path: impl AsRef<Path>) -> Result<Vec<Explanation>> {
    let text = std::fs::read_to_string(path)?;
    let v = parse(&text, "explanations file")?;
    let arr = v
        .as_array()
        .ok_or_else(|| Error::DataFormat("explanations file must be a JSON array".into()))?;
    arr.iter()
        .enumerate()
        .map(|(i, e)| Explanation::from_json_value(e, &format!("explanation {i}")))
        .collect()
}

// ── LRP rules ────────────────────────────────────────────────────────

/// Relevance propagation rule for a weighted layer.
#[derive(Debug, Clone)]
pub enum Rule {
    /// Basic rule (no stabilizer beyond the tiny-denominator guard).
    Zero,
    /// Epsilon rule: the stabilizer is added with the sign of the denominator.
    Eps(f64),
    /// Epsilon rule with layer-adaptive magnitude: epsilon = factor times the
    /// mean absolute denominator of the layer. Used by the composite preset.
    EpsScaled(f64),
    /// Gamma rule: positive weight parts are boosted by `gamma`.
    Gamma(f64),
    /// Input-layer rule with per-feature bounds `low <= x <= high`.
    ZB { low: Tensor, high: Tensor },
}

impl Rule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Rule::Eps(e) | Rule::EpsScaled(e) if *e < 0.0 => {
                Err(Error::Config(format!("epsilon must be >= 0, got {e}")))
            }
            Rule::Gamma(g) if *g < 0.0 => {
                Err(Error::Config(format!("gamma must be >= 0, got {g}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Rule::Zero => "lrp0".into(),
            Rule::Eps(e) => format!("eps={e}"),
            Rule::EpsScaled(f) => format!("eps~{f}"),
            Rule::Gamma(g) => format!("gamma={g}"),
            Rule::ZB { .. } => "zb".into(),
        }
    }
}

/// Per-layer-index assignment of LRP rules (the composite strategy), with a
/// default rule for unlisted layers.
#[derive(Debug, Clone)]
pub struct RuleMap {
    default: Rule,
    per_layer: BTreeMap<usize, Rule>,
}

impl RuleMap {
    pub fn uniform(rule: Rule) -> Self {
        RuleMap {
            default: rule,
            per_layer: BTreeMap::new(),
        }
    }

    pub fn with_layer(mut self, layer: usize, rule: Rule) -> Self {
        self.per_layer.insert(layer, rule);
        self
    }

    pub fn rule_for(&self, layer: usize) -> &Rule {
        self.per_layer.get(&layer).unwrap_or(&self.default)
    }

    pub fn assigned(&self) -> impl Iterator<Item = (&usize, &Rule)> {
        self.per_layer.iter()
    }

    pub fn validate(&self) -> Result<()> {
        self.default.validate()?;
        for rule in self.per_layer.values() {
            rule.validate()?;
        }
        Ok(())
    }
}

// ── gradient-path configuration ──────────────────────────────────────

/// Where integration paths start.
#[derive(Debug, Clone)]
pub enum RootPolicy {
    /// The origin (all-zero input).
    Origin,
    /// A fixed reference point.
    Fixed(Tensor),
    /// Gaussian draws near the origin with scale `sigma` per sample.
    RandomNearOrigin,
}

/// Integration / smoothing configuration for gradient-path methods.
#[derive(Debug, Clone)]
pub struct IGConfig {
    /// Integration steps T per path.
    pub steps: usize,
    /// Smoothing samples S (number of root draws).
    pub samples: usize,
    /// Noise scale for root sampling; must be 0 unless roots are random.
    pub sigma: f64,
    pub root: RootPolicy,
}

impl IGConfig {
    pub fn segment(root: RootPolicy, steps: usize) -> Self {
        IGConfig {
            steps,
            samples: 1,
            sigma: 0.0,
            root,
        }
    }

    /// Smooth-IG default: S = 5 paths of T = 5 steps from random roots near
    /// the origin, with root scale 0.01 times the RMS of the input.
    pub fn smooth_default(x: &Tensor) -> Self {
        let rms = (x.data().iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        IGConfig {
            steps: 5,
            samples: 5,
            sigma: 0.01 * rms,
            root: RootPolicy::RandomNearOrigin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("integration steps must be >= 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("smoothing samples must be >= 1".into()));
        }
        if self.sigma < 0.0 {
            return Err(Error::Config(format!(
                "noise scale must be >= 0, got {}",
                self.sigma
            )));
        }
        if self.sigma == 0.0 && self.samples != 1 {
            return Err(Error::Config(
                "smoothing samples must be 1 when the noise scale is 0".into(),
            ));
        }
        Ok(())
    }
}

/// Patch configuration for occlusion analysis.
#[derive(Debug, Clone)]
pub struct OcclusionConfig {
    /// Patch extents, one per input dimension.
    pub patch: Vec<usize>,
    /// Patch grid strides, one per input dimension.
    pub stride: Vec<usize>,
    /// Value written into occluded positions.
    pub replacement: f64,
}

impl OcclusionConfig {
    /// Single-feature occlusion with replacement 0.
    pub fn singleton(rank: usize) -> Self {
        OcclusionConfig {
            patch: vec![1; rank],
            stride: vec![1; rank],
            replacement: 0.0,
        }
    }

    /// Spatial patch/stride for `[c,h,w]` or `[h,w]` inputs: the patch spans
    /// all channels and `patch x patch` spatial positions.
    pub fn spatial(input_shape: &[usize], patch: usize, stride: usize) -> Self {
        let rank = input_shape.len();
        let mut p = vec![1; rank];
        let mut s = vec![1; rank];
        match rank {
            3 => {
                p = vec![input_shape[0], patch, patch];
                s = vec![input_shape[0].max(1), stride, stride];
            }
            2 => {
                p = vec![patch, patch];
                s = vec![stride, stride];
            }
            _ => {
                if rank == 1 {
                    p = vec![patch];
                    s = vec![stride];
                }
            }
        }
        OcclusionConfig {
            patch: p,
            stride: s,
            replacement: 0.0,
        }
    }

    pub fn validate(&self, input_shape: &[usize]) -> Result<()> {
        if self.patch.len() != input_shape.len() || self.stride.len() != input_shape.len() {
            return Err(Error::Config(format!(
                "patch/stride rank must match input rank {}",
                input_shape.len()
            )));
        }
        for (d, (&p, &e)) in self.patch.iter().zip(input_shape).enumerate() {
            if p == 0 {
                return Err(Error::Config(format!("patch extent 0 in dimension {d}")));
            }
            if p > e {
                return Err(Error::Config(format!(
                    "patch extent {p} larger than input extent {e} in dimension {d}"
                )));
            }
        }
        if self.stride.iter().any(|&s| s == 0) {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if !self.replacement.is_finite() {
            return Err(Error::Config("replacement value must be finite".into()));
        }
        Ok(())
    }
}
