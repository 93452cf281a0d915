//! Model configuration, weights, synthetic generation and the binary model
//! file.
//!
//! File layout (all integers little-endian `u32`, all values little-endian
//! `f32`, row-major):
//!
//! ```text
//! "ATNM1\0"
//! n_layers n_heads d_model d_ff vocab_size max_seq mode(0=causal, 1=bidirectional)
//! repeated for every tensor in `tensor_layout` order:
//!     name_len name_bytes rows cols values[rows*cols]
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::tokenizer::Mode;

pub const MAGIC: &[u8; 6] = b"ATNM1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub mode: Mode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config(
                "vocab_size must cover the 4 special tokens".into(),
            ));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_gamma: Matrix,
    pub ln1_beta: Matrix,
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub bk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln2_gamma: Matrix,
    pub ln2_beta: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// All learned tensors. Bias and layer-norm vectors are stored as 1-row
/// matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub segment_embedding: Option<Matrix>,
    pub layers: Vec<LayerWeights>,
    pub ln_f_gamma: Matrix,
    pub ln_f_beta: Matrix,
}

const LAYER_TENSORS: [&str; 16] = [
    "ln1.gamma",
    "ln1.beta",
    "Wq",
    "bq",
    "Wk",
    "bk",
    "Wv",
    "bv",
    "Wo",
    "bo",
    "ln2.gamma",
    "ln2.beta",
    "W1",
    "b1",
    "W2",
    "b2",
];

/// Names and shapes of every tensor, in file order.
pub fn tensor_layout(config: &ModelConfig) -> Vec<(String, usize, usize)> {
    let d = config.d_model;
    let f = config.d_ff;
    let mut out = vec![
        ("token_embedding".to_string(), config.vocab_size, d),
        ("position_embedding".to_string(), config.max_seq, d),
    ];
    if config.mode == Mode::Bidirectional {
        out.push(("segment_embedding".to_string(), 2, d));
    }
    for l in 0..config.n_layers {
        for name in LAYER_TENSORS {
            let (rows, cols) = match name {
                "Wq" | "Wk" | "Wv" | "Wo" => (d, d),
                "W1" => (d, f),
                "W2" => (f, d),
                "b1" => (1, f),
                _ => (1, d),
            };
            out.push((format!("layer{l}.{name}"), rows, cols));
        }
    }
    out.push(("ln_f.gamma".to_string(), 1, d));
    out.push(("ln_f.beta".to_string(), 1, d));
    out
}

impl WeightSet {
    /// Tensors in `tensor_layout` order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        if let Some(seg) = &self.segment_embedding {
            out.push(seg);
        }
        for l in &self.layers {
            out.extend([
                &l.ln1_gamma,
                &l.ln1_beta,
                &l.wq,
                &l.bq,
                &l.wk,
                &l.bk,
                &l.wv,
                &l.bv,
                &l.wo,
                &l.bo,
                &l.ln2_gamma,
                &l.ln2_beta,
                &l.w1,
                &l.b1,
                &l.w2,
                &l.b2,
            ]);
        }
        out.push(&self.ln_f_gamma);
        out.push(&self.ln_f_beta);
        out
    }

    /// Assembles a weight set from tensors given in `tensor_layout` order,
    /// checking every shape against `config`.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Matrix>) -> Result<Self> {
        let layout = tensor_layout(config);
        if tensors.len() != layout.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, rows, cols), t) in layout.iter().zip(&tensors) {
            if t.shape() != (*rows, *cols) {
                return Err(Error::Shape(format!(
                    "tensor {name} is {}x{}, expected {rows}x{cols}",
                    t.rows(),
                    t.cols()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Data(format!("tensor {name} has a non-finite entry")));
            }
        }

        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked above");
        let token_embedding = next();
        let position_embedding = next();
        let segment_embedding = (config.mode == Mode::Bidirectional).then(&mut next);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerWeights {
                ln1_gamma: next(),
                ln1_beta: next(),
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ln2_gamma: next(),
                ln2_beta: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            });
        }
        let ln_f_gamma = next();
        let ln_f_beta = next();
        Ok(Self {
            token_embedding,
            position_embedding,
            segment_embedding,
            layers,
            ln_f_gamma,
            ln_f_beta,
        })
    }
}

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`: the top 53 bits of the draw scaled by 2^-53.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xCBF2_9CE4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Fills every tensor from its own SplitMix64 stream seeded with
/// `seed ^ fnv1a64(tensor_name)`, mapping each draw to `[-0.1, 0.1)` and
/// rounding to `f32`.
pub fn generate_synthetic_model(config: &ModelConfig, seed: u64) -> Result<WeightSet> {
    config.validate()?;
    let tensors = tensor_layout(config)
        .into_iter()
        .map(|(name, rows, cols)| {
            let mut rng = SplitMix64::new(seed ^ fnv1a64(name.as_bytes()));
            let values = (0..rows * cols)
                .map(|_| f64::from((-0.1 + 0.2 * rng.next_unit()) as f32))
                .collect();
            Matrix::from_vec(rows, cols, values)
        })
        .collect::<Result<Vec<_>>>()?;
    WeightSet::from_tensors(config, tensors)
}

pub fn model_to_bytes(config: &ModelConfig, weights: &WeightSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        config.n_layers,
        config.n_heads,
        config.d_model,
        config.d_ff,
        config.vocab_size,
        config.max_seq,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&config.mode.flag().to_le_bytes());
    for ((name, _, _), t) in tensor_layout(config).iter().zip(weights.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for &v in t.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "file truncated while reading {what}"
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<(ModelConfig, WeightSet)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let mut header = [0usize; 6];
    for (slot, name) in header.iter_mut().zip([
        "n_layers",
        "n_heads",
        "d_model",
        "d_ff",
        "vocab_size",
        "max_seq",
    ]) {
        *slot = r.u32(name)? as usize;
    }
    let flag = r.u32("mode")?;
    let mode =
        Mode::from_flag(flag).ok_or_else(|| Error::Format(format!("unknown mode flag {flag}")))?;
    let config = ModelConfig {
        n_layers: header[0],
        n_heads: header[1],
        d_model: header[2],
        d_ff: header[3],
        vocab_size: header[4],
        max_seq: header[5],
        mode,
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("invalid header: {e}")))?;

    let layout = tensor_layout(&config);
    let mut tensors = Vec::with_capacity(layout.len());
    for (name, rows, cols) in &layout {
        let name_len = r.u32("tensor name length")? as usize;
        let found = r.take(name_len, "tensor name")?;
        if found != name.as_bytes() {
            return Err(Error::Format(format!(
                "expected tensor {name}, found {:?}",
                String::from_utf8_lossy(found)
            )));
        }
        let fr = r.u32(name)? as usize;
        let fc = r.u32(name)? as usize;
        if (fr, fc) != (*rows, *cols) {
            return Err(Error::Shape(format!(
                "tensor {name} has {} values ({fr}x{fc}), config requires {rows}x{cols}",
                fr * fc
            )));
        }
        let raw = r.take(rows * cols * 4, name)?;
        let mut values = Vec::with_capacity(rows * cols);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::Data(format!("tensor {name} has a non-finite entry")));
            }
            values.push(f64::from(v));
        }
        tensors.push(Matrix::from_vec(*rows, *cols, values)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    let weights = WeightSet::from_tensors(&config, tensors)?;
    Ok((config, weights))
}

pub fn save_model(path: impl AsRef<Path>, config: &ModelConfig, weights: &WeightSet) -> Result<()> {
    std::fs::write(path, model_to_bytes(config, weights))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelConfig, WeightSet)> {
    model_from_bytes(&std::fs::read(path)?)
}
