//! Scalar metrics over attention matrices and the rule table that turns
//! them into one pattern label per head.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::tokenizer::Mode;
use crate::trace::{thumbnail, AttentionTrace, HeadThumbnail};

/// Mean attention from each token to the one before it.
pub fn prev_token_score(alpha: &Matrix, _mode: Mode) -> Result<f64> {
    let n = alpha.rows();
    if n < 2 {
        return Err(Error::InsufficientLength(
            "previous-token score needs at least 2 tokens".into(),
        ));
    }
    Ok((1..n).map(|i| alpha.get(i, i - 1)).sum::<f64>() / (n - 1) as f64)
}

/// Mean attention parked on the first token.
pub fn first_token_share(alpha: &Matrix) -> Result<f64> {
    let n = alpha.rows();
    if n == 0 {
        return Err(Error::InsufficientLength("empty attention matrix".into()));
    }
    Ok((0..n).map(|i| alpha.get(i, 0)).sum::<f64>() / n as f64)
}

/// Mean normalized entropy of the rows that have at least two visible
/// targets. 1 means uniform, 0 means one-hot.
pub fn dispersion(alpha: &Matrix, mode: Mode) -> Result<f64> {
    let n = alpha.rows();
    let mut total = 0.0;
    let mut rows = 0usize;
    for i in 0..n {
        let visible = mode.allowed_len(i, n);
        if visible < 2 {
            continue;
        }
        let entropy: f64 = alpha.row(i)[..visible]
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        total += (entropy / (visible as f64).ln()).clamp(0.0, 1.0);
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::InsufficientLength(
            "dispersion needs a row with at least 2 targets".into(),
        ));
    }
    Ok(total / rows as f64)
}

/// Least-squares slope of attention weight against distance `i - j`, over
/// every visible pair of rows `i >= 1`. Negative means attention falls
/// off with distance.
pub fn decay_slope(alpha: &Matrix, mode: Mode) -> Result<f64> {
    if mode != Mode::Causal {
        return Err(Error::Mode(
            "decay slope is defined for causal traces only".into(),
        ));
    }
    let n = alpha.rows();
    if n < 3 {
        return Err(Error::InsufficientLength(
            "decay slope needs at least 3 tokens".into(),
        ));
    }
    let points: Vec<(f64, f64)> = (1..n)
        .flat_map(|i| (0..=i).map(move |j| (i, j)))
        .map(|(i, j)| ((i - j) as f64, alpha.get(i, j)))
        .collect();
    let count = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / count;
    let my = points.iter().map(|p| p.1).sum::<f64>() / count;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Share of total attention that crosses between sentence A and B.
pub fn inter_sentence_fraction(trace: &AttentionTrace, layer: usize, head: usize) -> Result<f64> {
    if trace.mode() != Mode::Bidirectional {
        return Err(Error::Mode(
            "inter-sentence fraction requires a bidirectional trace".into(),
        ));
    }
    let alpha = &trace.head(layer, head)?.alpha;
    Ok(cross_segment_fraction(alpha, &trace.input().segments))
}

fn cross_segment_fraction(alpha: &Matrix, segments: &[u8]) -> f64 {
    let n = alpha.rows();
    let mut cross = 0.0;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = alpha.get(i, j);
            total += v;
            if segments[i] != segments[j] {
                cross += v;
            }
        }
    }
    if total > 0.0 {
        (cross / total).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatternLabel {
    PositionalPrev,
    NullFirst,
    Dispersed,
    DistanceDecay,
    InterSentence,
    Unlabeled,
}

impl PatternLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternLabel::PositionalPrev => "POSITIONAL_PREV",
            PatternLabel::NullFirst => "NULL_FIRST",
            PatternLabel::Dispersed => "DISPERSED",
            PatternLabel::DistanceDecay => "DISTANCE_DECAY",
            PatternLabel::InterSentence => "INTER_SENTENCE",
            PatternLabel::Unlabeled => "UNLABELED",
        }
    }
}

impl fmt::Display for PatternLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub inter_sentence: f64,
    pub positional_prev: f64,
    pub null_first: f64,
    pub distance_decay_slope: f64,
    pub distance_decay_dispersion: f64,
    pub dispersed: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            inter_sentence: 0.5,
            positional_prev: 0.7,
            null_first: 0.6,
            distance_decay_slope: -0.01,
            distance_decay_dispersion: 0.3,
            dispersed: 0.9,
        }
    }
}

impl Thresholds {
    /// Key/value pairs in rule order.
    pub fn entries(&self) -> [(&'static str, f64); 6] {
        [
            ("inter_sentence", self.inter_sentence),
            ("positional_prev", self.positional_prev),
            ("null_first", self.null_first),
            ("distance_decay_slope", self.distance_decay_slope),
            ("distance_decay_dispersion", self.distance_decay_dispersion),
            ("dispersed", self.dispersed),
        ]
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }
}

/// Flat `key = value` lines; `#` starts a comment. Keys not given keep
/// their default.
impl FromStr for Thresholds {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut t = Thresholds::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!(
                    "thresholds line {}: expected key = value",
                    lineno + 1
                ))
            })?;
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::Format(format!(
                    "thresholds line {}: {:?} is not a number",
                    lineno + 1,
                    value.trim()
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Format(format!(
                    "thresholds line {}: value must be finite",
                    lineno + 1
                )));
            }
            let slot = match key.trim() {
                "inter_sentence" => &mut t.inter_sentence,
                "positional_prev" => &mut t.positional_prev,
                "null_first" => &mut t.null_first,
                "distance_decay_slope" => &mut t.distance_decay_slope,
                "distance_decay_dispersion" => &mut t.distance_decay_dispersion,
                "dispersed" => &mut t.dispersed,
                other => {
                    return Err(Error::Format(format!(
                        "thresholds line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            };
            *slot = value;
        }
        Ok(t)
    }
}

/// Metrics for one head. A metric is `None` when it is undefined for the
/// trace's mode or the sequence is too short for it.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSummary {
    pub layer: usize,
    pub head: usize,
    pub prev_token_score: Option<f64>,
    pub first_token_share: f64,
    pub dispersion: Option<f64>,
    pub decay_slope: Option<f64>,
    pub inter_sentence_fraction: Option<f64>,
    pub label: PatternLabel,
}

/// First matching rule wins; missing metrics never match.
pub fn classify_head(summary: &HeadSummary, t: &Thresholds) -> PatternLabel {
    let at_least = |v: Option<f64>, min: f64| v.is_some_and(|v| v >= min);
    if at_least(summary.inter_sentence_fraction, t.inter_sentence) {
        PatternLabel::InterSentence
    } else if at_least(summary.prev_token_score, t.positional_prev) {
        PatternLabel::PositionalPrev
    } else if summary.first_token_share >= t.null_first {
        PatternLabel::NullFirst
    } else if summary
        .decay_slope
        .is_some_and(|s| s <= t.distance_decay_slope)
        && at_least(summary.dispersion, t.distance_decay_dispersion)
    {
        PatternLabel::DistanceDecay
    } else if at_least(summary.dispersion, t.dispersed) {
        PatternLabel::Dispersed
    } else {
        PatternLabel::Unlabeled
    }
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::InsufficientLength(_) | Error::Mode(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn summarize_head(
    trace: &AttentionTrace,
    layer: usize,
    head: usize,
    thresholds: &Thresholds,
) -> Result<HeadSummary> {
    let alpha = &trace.head(layer, head)?.alpha;
    let mode = trace.mode();
    let mut summary = HeadSummary {
        layer,
        head,
        prev_token_score: optional(prev_token_score(alpha, mode))?,
        first_token_share: first_token_share(alpha)?,
        dispersion: optional(dispersion(alpha, mode))?,
        decay_slope: optional(decay_slope(alpha, mode))?,
        inter_sentence_fraction: optional(inter_sentence_fraction(trace, layer, head))?,
        label: PatternLabel::Unlabeled,
    };
    summary.label = classify_head(&summary, thresholds);
    Ok(summary)
}

/// Summary and thumbnail for every head, layer-major.
pub fn summarize_trace(
    trace: &AttentionTrace,
    thresholds: &Thresholds,
    resolution: usize,
) -> Result<Vec<(HeadSummary, HeadThumbnail)>> {
    let mut out = Vec::with_capacity(trace.n_layers() * trace.n_heads());
    for layer in 0..trace.n_layers() {
        for head in 0..trace.n_heads() {
            out.push((
                summarize_head(trace, layer, head, thresholds)?,
                thumbnail(trace, layer, head, resolution)?,
            ));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    PrevTokenScore,
    FirstTokenShare,
    Dispersion,
    DecaySlope,
    InterSentenceFraction,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "prev_token_score" => Metric::PrevTokenScore,
            "first_token_share" => Metric::FirstTokenShare,
            "dispersion" => Metric::Dispersion,
            "decay_slope" => Metric::DecaySlope,
            "inter_sentence_fraction" => Metric::InterSentenceFraction,
            other => return Err(Error::Input(format!("unknown metric {other:?}"))),
        })
    }
}

impl Metric {
    pub fn evaluate(self, trace: &AttentionTrace, layer: usize, head: usize) -> Result<f64> {
        let alpha = &trace.head(layer, head)?.alpha;
        let mode = trace.mode();
        match self {
            Metric::PrevTokenScore => prev_token_score(alpha, mode),
            Metric::FirstTokenShare => first_token_share(alpha),
            Metric::Dispersion => dispersion(alpha, mode),
            Metric::DecaySlope => decay_slope(alpha, mode),
            Metric::InterSentenceFraction => inter_sentence_fraction(trace, layer, head),
        }
    }
}

/// All heads ordered by `metric` descending; ties go to the lower
/// (layer, head).
pub fn rank_heads(trace: &AttentionTrace, metric: &str) -> Result<Vec<(usize, usize, f64)>> {
    let metric: Metric = metric.parse()?;
    let mut out = Vec::with_capacity(trace.n_layers() * trace.n_heads());
    for layer in 0..trace.n_layers() {
        for head in 0..trace.n_heads() {
            out.push((layer, head, metric.evaluate(trace, layer, head)?));
        }
    }
    out.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    Ok(out)
}
