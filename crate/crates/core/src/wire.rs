//! Canonical JSON encoding shared by the CLI and the HTTP service.
//!
//! Canonical means: object keys sorted, no insignificant whitespace, and
//! every non-integer number printed with 6 significant digits (`%g`
//! style). Identical values always encode to identical bytes.

use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::analysis::HeadSummary;
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::tokenizer::Mode;
use crate::trace::{AttentionTrace, HeadThumbnail, NeuronDetail};

const SIG_DIGITS: usize = 6;

/// Formats a finite float with 6 significant digits, `%g` style: plain
/// notation for decimal exponents in `[-4, 6)`, scientific otherwise, trailing
/// zeros removed.
pub fn format_float(v: f64) -> String {
    if !v.is_finite() {
        // JSON has no representation for these; traces never contain them.
        return "null".into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= SIG_DIGITS as i32 {
        format!(
            "{}e{}{:02}",
            trim_zeros(mantissa),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    } else {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, v)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_i64() || n.is_u64() {
                out.push_str(&n.to_string());
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string encodes")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("key encodes"));
                out.push(':');
                write_value(out, &map[k]);
            }
            out.push('}');
        }
    }
}

pub fn to_canonical_string(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v);
    out
}

pub fn to_canonical_bytes(v: &Value) -> Vec<u8> {
    to_canonical_string(v).into_bytes()
}

pub fn matrix_json(m: &Matrix) -> Value {
    Value::Array(
        (0..m.rows())
            .map(|r| Value::Array(m.row(r).iter().map(|&x| json!(x)).collect()))
            .collect(),
    )
}

pub fn floats_json(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| json!(x)).collect())
}

pub fn trace_json(trace: &AttentionTrace, include_qk: bool) -> Value {
    let per_head = |f: &dyn Fn(usize, usize) -> Value| -> Value {
        Value::Array(
            (0..trace.n_layers())
                .map(|l| Value::Array((0..trace.n_heads()).map(|h| f(l, h)).collect()))
                .collect(),
        )
    };
    let get = |l: usize, h: usize| trace.head(l, h).expect("indices in range");
    let input = trace.input();

    let mut obj = Map::new();
    obj.insert("tokens".into(), json!(input.display));
    obj.insert("segments".into(), json!(input.segments));
    obj.insert("mode".into(), json!(input.mode.as_str()));
    obj.insert("layers".into(), json!(trace.n_layers()));
    obj.insert("heads".into(), json!(trace.n_heads()));
    obj.insert("d_head".into(), json!(trace.d_head()));
    obj.insert(
        "attn".into(),
        per_head(&|l, h| matrix_json(&get(l, h).alpha)),
    );
    if include_qk {
        obj.insert("q".into(), per_head(&|l, h| matrix_json(&get(l, h).q)));
        obj.insert("k".into(), per_head(&|l, h| matrix_json(&get(l, h).k)));
    }
    Value::Object(obj)
}

/// Canonical JSON bytes for a trace.
pub fn serialize_trace(trace: &AttentionTrace, include_qk: bool) -> Vec<u8> {
    to_canonical_bytes(&trace_json(trace, include_qk))
}

/// Decoded form of the trace wire schema.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TraceDocument {
    pub tokens: Vec<String>,
    pub segments: Vec<u8>,
    pub mode: Mode,
    pub layers: usize,
    pub heads: usize,
    pub d_head: usize,
    pub attn: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub q: Option<Vec<Vec<Vec<Vec<f64>>>>>,
    #[serde(default)]
    pub k: Option<Vec<Vec<Vec<Vec<f64>>>>>,
}

pub fn deserialize_trace(bytes: &[u8]) -> Result<TraceDocument> {
    let doc: TraceDocument =
        serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("trace JSON: {e}")))?;
    let n = doc.tokens.len();
    if doc.segments.len() != n || doc.attn.len() != doc.layers {
        return Err(Error::Shape("trace document dimensions disagree".into()));
    }
    for layer in &doc.attn {
        if layer.len() != doc.heads
            || layer
                .iter()
                .any(|a| a.len() != n || a.iter().any(|r| r.len() != n))
        {
            return Err(Error::Shape(
                "attention tensor is not [layers][heads][N][N]".into(),
            ));
        }
    }
    Ok(doc)
}

pub fn neuron_json(detail: &NeuronDetail, trace: &AttentionTrace) -> Value {
    let tokens = &trace.input().display;
    let rows = |v: &[Vec<f64>]| Value::Array(v.iter().map(|r| floats_json(r)).collect());
    json!({
        "layer": detail.layer,
        "head": detail.head,
        "token_index": detail.source,
        "source_token": tokens[detail.source],
        "targets": detail.targets,
        "target_tokens": detail.targets.iter().map(|&j| tokens[j].as_str()).collect::<Vec<_>>(),
        "q": floats_json(&detail.query),
        "k": rows(&detail.keys),
        "elementwise": rows(&detail.elementwise),
        "dot": floats_json(&detail.dot),
        "scaled": floats_json(&detail.scaled),
        "softmax": floats_json(&detail.softmax),
    })
}

/// One head summary with its thumbnail grid. Metrics that are undefined
/// for the trace are omitted.
pub fn summary_json(summary: &HeadSummary, thumb: &HeadThumbnail) -> Value {
    let mut obj = Map::new();
    obj.insert("layer".into(), json!(summary.layer));
    obj.insert("head".into(), json!(summary.head));
    obj.insert("first_token_share".into(), json!(summary.first_token_share));
    let optional = [
        ("prev_token_score", summary.prev_token_score),
        ("dispersion", summary.dispersion),
        ("decay_slope", summary.decay_slope),
        ("inter_sentence_fraction", summary.inter_sentence_fraction),
    ];
    for (key, value) in optional {
        if let Some(v) = value {
            obj.insert(key.into(), json!(v));
        }
    }
    obj.insert("label".into(), json!(summary.label.as_str()));
    obj.insert("thumbnail".into(), matrix_json(&thumb.grid));
    Value::Object(obj)
}

pub fn summaries_json(items: &[(HeadSummary, HeadThumbnail)]) -> Value {
    Value::Array(items.iter().map(|(s, t)| summary_json(s, t)).collect())
}

pub fn error_json(code: &str, detail: &str) -> Vec<u8> {
    to_canonical_bytes(&json!({ "error": code, "detail": detail }))
}
