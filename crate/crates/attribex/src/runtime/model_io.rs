//! Model and dataset file I/O.
//!
//! Model file schema (JSON):
//! `{"input_shape": [..], "layers": [{"kind": "...", "W": [flat row-major],
//! "b": [..], "kernel": [kh,kw], "stride": n, "pad": n, "beta": x,
//! "sign": 1|-1, "groups": [..]}, ..], "labels": [..], "name": "..."}`
//!
//! Data file schema: a JSON array of samples
//! `{"x": [flat row-major], "shape": [..], "label": optional}`.
//!
//! All floats are written with 17 significant digits; `load(save(net))`
//! reproduces weights bit-identically.

use crate::error::{Error, Result};
use crate::jsontext::{
    as_f64, as_f64_array, as_usize, as_usize_array, fmt_f64, get, parse, push_f64_array,
    push_str_array, push_usize_array,
};
use crate::runtime::layer::{Layer, PoolSign};
use crate::runtime::network::Network;
use crate::runtime::tensor::Tensor;
use serde_json::Value;
use std::path::Path;

fn model_err(layer: usize, field: &str, msg: impl std::fmt::Display) -> Error {
    Error::ModelFormat(format!("layer {layer}: field `{field}`: {msg}"))
}

fn layer_tensor(
    v: &Value,
    layer: usize,
    field: &str,
    shape: Vec<usize>,
) -> Result<Tensor> {
    let data = as_f64_array(v, &format!("layer {layer} `{field}`"))
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    let expected: usize = shape.iter().product();
    if data.len() != expected {
        return Err(model_err(
            layer,
            field,
            format!("expected {expected} values for shape {shape:?}, got {}", data.len()),
        ));
    }
    Tensor::new(shape, data).map_err(|e| model_err(layer, field, e))
}

fn parse_layer(v: &Value, idx: usize, in_shape: &[usize]) -> Result<(Layer, Vec<usize>)> {
    let kind = get(v, "kind", &format!("layer {idx}"))
        .and_then(|k| {
            k.as_str()
                .ok_or_else(|| Error::DataFormat(format!("layer {idx}: `kind` must be a string")))
        })
        .map_err(|e| Error::ModelFormat(e.to_string()))?;

    let opt_bias = |n_out: usize| -> Result<Option<Tensor>> {
        match v.get("b") {
            None | Some(Value::Null) => Ok(None),
            Some(b) => Ok(Some(layer_tensor(b, idx, "b", vec![n_out])?)),
        }
    };
    let opt_usize = |field: &str, default: usize| -> Result<usize> {
        match v.get(field) {
            None | Some(Value::Null) => Ok(default),
            Some(x) => as_usize(x, &format!("layer {idx} `{field}`"))
                .map_err(|e| Error::ModelFormat(e.to_string())),
        }
    };
    let req_f64 = |field: &str| -> Result<f64> {
        as_f64(get(v, field, &format!("layer {idx}")).map_err(|e| Error::ModelFormat(e.to_string()))?,
               &format!("layer {idx} `{field}`"))
            .map_err(|e| Error::ModelFormat(e.to_string()))
    };
    let kernel = || -> Result<(usize, usize)> {
        let k = as_usize_array(
            get(v, "kernel", &format!("layer {idx}")).map_err(|e| Error::ModelFormat(e.to_string()))?,
            &format!("layer {idx} `kernel`"),
        )
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
        if k.len() != 2 {
            return Err(model_err(idx, "kernel", "expected [kh, kw]"));
        }
        Ok((k[0], k[1]))
    };

    let layer = match kind {
        "Dense" => {
            let n_in: usize = in_shape.iter().product::<usize>();
            if in_shape.len() != 1 {
                return Err(model_err(idx, "kind", "Dense requires rank-1 input (use Flatten)"));
            }
            let wv = get(v, "W", &format!("layer {idx}")).map_err(|e| Error::ModelFormat(e.to_string()))?;
            let flat = as_f64_array(wv, &format!("layer {idx} `W`"))
                .map_err(|e| Error::ModelFormat(e.to_string()))?;
            if n_in == 0 || flat.len() % n_in != 0 {
                return Err(model_err(
                    idx,
                    "W",
                    format!("length {} is not a multiple of input size {n_in}", flat.len()),
                ));
            }
            let n_out = flat.len() / n_in;
            let weight = Tensor::new(vec![n_out, n_in], flat).map_err(|e| model_err(idx, "W", e))?;
            Layer::Dense {
                weight,
                bias: opt_bias(n_out)?,
            }
        }
        "Conv2D" => {
            if in_shape.len() != 3 {
                return Err(model_err(idx, "kind", "Conv2D requires [c,h,w] input"));
            }
            let (kh, kw) = kernel()?;
            let ic = in_shape[0];
            let wv = get(v, "W", &format!("layer {idx}")).map_err(|e| Error::ModelFormat(e.to_string()))?;
            let flat = as_f64_array(wv, &format!("layer {idx} `W`"))
                .map_err(|e| Error::ModelFormat(e.to_string()))?;
            let per_out = ic * kh * kw;
            if per_out == 0 || flat.len() % per_out != 0 {
                return Err(model_err(
                    idx,
                    "W",
                    format!(
                        "length {} is not a multiple of in_c*kh*kw = {per_out}",
                        flat.len()
                    ),
                ));
            }
            let oc = flat.len() / per_out;
            let weight =
                Tensor::new(vec![oc, ic, kh, kw], flat).map_err(|e| model_err(idx, "W", e))?;
            Layer::Conv2D {
                weight,
                bias: opt_bias(oc)?,
                stride: opt_usize("stride", 1)?,
                pad: opt_usize("pad", 0)?,
            }
        }
        "ReLU" => Layer::Relu,
        "MaxPool2D" | "AvgPool2D" => {
            let k = kernel()?;
            let stride = opt_usize("stride", k.0)?;
            if kind == "MaxPool2D" {
                Layer::MaxPool2D { kernel: k, stride }
            } else {
                Layer::AvgPool2D { kernel: k, stride }
            }
        }
        "Flatten" => Layer::Flatten,
        "SoftMinHead" => {
            let n_in: usize = in_shape.iter().product();
            let wv = get(v, "W", &format!("layer {idx}")).map_err(|e| Error::ModelFormat(e.to_string()))?;
            let flat = as_f64_array(wv, &format!("layer {idx} `W`"))
                .map_err(|e| Error::ModelFormat(e.to_string()))?;
            if n_in == 0 || flat.len() % n_in != 0 {
                return Err(model_err(
                    idx,
                    "W",
                    format!("length {} is not a multiple of input size {n_in}", flat.len()),
                ));
            }
            let rows = flat.len() / n_in;
            let weight = Tensor::new(vec![rows, n_in], flat).map_err(|e| model_err(idx, "W", e))?;
            Layer::SoftMinHead {
                weight,
                bias: opt_bias(rows)?,
                beta: req_f64("beta")?,
            }
        }
        "LogSumExpPool" => {
            let groups = as_usize_array(
                get(v, "groups", &format!("layer {idx}")).map_err(|e| Error::ModelFormat(e.to_string()))?,
                &format!("layer {idx} `groups`"),
            )
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
            let sign = match get(v, "sign", &format!("layer {idx}"))
                .map_err(|e| Error::ModelFormat(e.to_string()))?
                .as_i64()
            {
                Some(1) => PoolSign::Max,
                Some(-1) => PoolSign::Min,
                _ => return Err(model_err(idx, "sign", "expected 1 (max) or -1 (min)")),
            };
            Layer::LogSumExpPool {
                groups,
                beta: req_f64("beta")?,
                sign,
            }
        }
        other => {
            return Err(Error::ModelFormat(format!(
                "layer {idx}: unknown kind `{other}`"
            )))
        }
    };
    let out_shape = layer
        .output_shape(in_shape)
        .map_err(|e| Error::ModelFormat(format!("layer {idx} ({kind}): {e}")))?;
    Ok((layer, out_shape))
}

pub fn network_from_json(text: &str) -> Result<Network> {
    let root = parse(text, "model file").map_err(|e| Error::ModelFormat(e.to_string()))?;
    let input_shape = as_usize_array(
        get(&root, "input_shape", "model").map_err(|e| Error::ModelFormat(e.to_string()))?,
        "input_shape",
    )
    .map_err(|e| Error::ModelFormat(e.to_string()))?;
    let layers_v = get(&root, "layers", "model")
        .map_err(|e| Error::ModelFormat(e.to_string()))?
        .as_array()
        .ok_or_else(|| Error::ModelFormat("`layers` must be an array".into()))?
        .clone();

    let mut layers = Vec::with_capacity(layers_v.len());
    let mut shape = input_shape.clone();
    for (i, lv) in layers_v.iter().enumerate() {
        let (layer, out) = parse_layer(lv, i, &shape)?;
        layers.push(layer);
        shape = out;
    }
    let mut net = Network::new(input_shape, layers)?;
    if let Some(Value::String(name)) = root.get("name") {
        net = net.with_name(name.clone());
    }
    if let Some(Value::Array(labels)) = root.get("labels") {
        net = net.with_labels(
            labels
                .iter()
                .map(|l| match l {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect(),
        );
    }
    Ok(net)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let text = std::fs::read_to_string(path)?;
    network_from_json(&text)
}

fn push_layer_json(buf: &mut String, layer: &Layer) {
    buf.push_str("{\"kind\":\"");
    buf.push_str(layer.kind_name());
    buf.push('"');
    let mut push_weight = |w: &Tensor, b: &Option<Tensor>| {
        buf.push_str(",\"W\":");
        push_f64_array(buf, w.data());
        if let Some(b) = b {
            buf.push_str(",\"b\":");
            push_f64_array(buf, b.data());
        }
    };
    match layer {
        Layer::Dense { weight, bias } => push_weight(weight, bias),
        Layer::Conv2D {
            weight,
            bias,
            stride,
            pad,
        } => {
            push_weight(weight, bias);
            let ws = weight.shape();
            buf.push_str(&format!(
                ",\"kernel\":[{},{}],\"stride\":{stride},\"pad\":{pad}",
                ws[2], ws[3]
            ));
        }
        Layer::Relu | Layer::Flatten => {}
        Layer::MaxPool2D { kernel, stride } | Layer::AvgPool2D { kernel, stride } => {
            buf.push_str(&format!(
                ",\"kernel\":[{},{}],\"stride\":{stride}",
                kernel.0, kernel.1
            ));
        }
        Layer::SoftMinHead { weight, bias, beta } => {
            push_weight(weight, bias);
            buf.push_str(",\"beta\":");
            buf.push_str(&fmt_f64(*beta));
        }
        Layer::LogSumExpPool { groups, beta, sign } => {
            buf.push_str(",\"beta\":");
            buf.push_str(&fmt_f64(*beta));
            buf.push_str(&format!(",\"sign\":{}", sign.as_f64() as i64));
            buf.push_str(",\"groups\":");
            push_usize_array(buf, groups);
        }
    }
    buf.push('}');
}

pub fn network_to_json(net: &Network) -> String {
    let mut buf = String::new();
    buf.push_str("{\"input_shape\":");
    push_usize_array(&mut buf, net.input_shape());
    buf.push_str(",\"layers\":[");
    for (i, layer) in net.layers().iter().enumerate() {
        if i > 0 {
            buf.push(',');
        }
        push_layer_json(&mut buf, layer);
    }
    buf.push(']');
    if !net.labels.is_empty() {
        buf.push_str(",\"labels\":");
        push_str_array(&mut buf, &net.labels);
    }
    if !net.name.is_empty() {
        buf.push_str(&format!(",\"name\":{}", Value::String(net.name.clone())));
    }
    buf.push_str("}\n");
    buf
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, network_to_json(net))?;
    Ok(())
}

// ── datasets ─────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Sample {
    pub x: Tensor,
    pub label: Option<String>,
}

pub fn dataset_from_json(text: &str) -> Result<Vec<Sample>> {
    let root = parse(text, "data file")?;
    let arr = root
        .as_array()
        .ok_or_else(|| Error::DataFormat("data file must be a JSON array of samples".into()))?;
    arr.iter()
        .enumerate()
        .map(|(i, s)| {
            let ctx = format!("sample {i}");
            let shape = as_usize_array(get(s, "shape", &ctx)?, &format!("{ctx} `shape`"))?;
            let x = as_f64_array(get(s, "x", &ctx)?, &format!("{ctx} `x`"))?;
            let x = Tensor::new(shape, x)
                .map_err(|e| Error::DataFormat(format!("{ctx}: {e}")))?;
            let label = match s.get("label") {
                None | Some(Value::Null) => None,
                Some(Value::String(l)) => Some(l.clone()),
                Some(other) => Some(other.to_string()),
            };
            Ok(Sample { x, label })
        })
        .collect()
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path)?;
    dataset_from_json(&text)
}

pub fn dataset_to_json(samples: &[Sample]) -> String {
    let mut buf = String::from("[");
    for (i, s) in samples.iter().enumerate() {
        if i > 0 {
            buf.push(',');
        }
        buf.push_str("{\"x\":");
        push_f64_array(&mut buf, s.x.data());
        buf.push_str(",\"shape\":");
        push_usize_array(&mut buf, s.x.shape());
        if let Some(l) = &s.label {
            buf.push_str(&format!(",\"label\":{}", Value::String(l.clone())));
        }
        buf.push('}');
    }
    buf.push_str("]\n");
    buf
}

pub fn save_dataset(samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset_to_json(samples))?;
    Ok(())
}
