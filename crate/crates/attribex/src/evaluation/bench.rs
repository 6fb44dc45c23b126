//! Wall-clock throughput comparison of explanation methods, in
//! explanations per second. Each method runs single-threaded over the
//! dataset; the median over repetitions is reported.

use crate::attribution::method::MethodSpec;
use crate::error::{Error, Result};
use crate::jsontext::fmt_f64;
use crate::runtime::{Network, Sample};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct BenchEntry {
    pub method: String,
    /// Median over repetitions.
    pub explanations_per_second: f64,
    /// Per-repetition throughputs, in run order.
    pub reps: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub entries: Vec<BenchEntry>,
    pub environment: String,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn runtime_bench(
    net: &Network,
    samples: &[Sample],
    methods: &[(String, MethodSpec)],
    repetitions: usize,
    target: usize,
) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::Config(format!(
            "need at least 3 repetitions, got {repetitions}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::Config("benchmark needs at least one sample".into()));
    }
    let mut entries = Vec::new();
    for (name, spec) in methods {
        let mut reps = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t0 = Instant::now();
            for s in samples {
                spec.run(net, &s.x, target)?;
            }
            let secs = t0.elapsed().as_secs_f64().max(1e-9);
            reps.push(samples.len() as f64 / secs);
        }
        entries.push(BenchEntry {
            method: name.clone(),
            explanations_per_second: median(&reps),
            reps,
        });
    }
    let environment = format!(
        "os={} arch={} cores={}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        std::thread::available_parallelism().map_or(0, |n| n.get())
    );
    Ok(BenchReport { entries, environment })
}

impl BenchReport {
    /// JSON table keyed by method, with the environment under `_env`.
    pub fn to_json(&self) -> String {
        let mut buf = String::from("{");
        for e in &self.entries {
            buf.push_str(&format!(
                "\"{}\":{{\"explanations_per_second\":{},\"reps\":[",
                e.method,
                fmt_f64(e.explanations_per_second)
            ));
            for (i, r) in e.reps.iter().enumerate() {
                if i > 0 {
                    buf.push(',');
                }
                buf.push_str(&fmt_f64(*r));
            }
            buf.push_str("]},");
        }
        buf.push_str(&format!(
            "\"_env\":{}}}\n",
            serde_json::Value::String(self.environment.clone())
        ));
        buf
    }
}
