//! Forward pass with attention capture.
//!
//! Both modes share one pre-layernorm block:
//!
//! ```text
//! h  = LN1(x)
//! x += concat_h(softmax(q_h k_hᵀ / √d_head, masked) v_h) Wo + bo
//! x += W2 gelu(LN2(x) W1 + b1) + b2
//! ```

use crate::error::{Error, Result};
use crate::model::{LayerWeights, ModelConfig, WeightSet};
use crate::tensor::{dot, gelu, layer_norm, matmul, softmax, Matrix};
use crate::tokenizer::{Mode, TokenizedInput};
use crate::trace::{AttentionTrace, HeadTrace};

pub const LN_EPS: f64 = 1e-5;

/// A configuration paired with its weights. Immutable once built, so one
/// instance can be shared by concurrent callers.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub weights: WeightSet,
}

impl Model {
    pub fn new(config: ModelConfig, weights: WeightSet) -> Result<Self> {
        config.validate()?;
        // re-runs the per-tensor shape checks
        let weights =
            WeightSet::from_tensors(&config, weights.tensors().into_iter().cloned().collect())?;
        Ok(Self { config, weights })
    }

    pub fn synthetic(config: ModelConfig, seed: u64) -> Result<Self> {
        let weights = crate::model::generate_synthetic_model(&config, seed)?;
        Ok(Self { config, weights })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (config, weights) = crate::model::load_model(path)?;
        Ok(Self { config, weights })
    }

    pub fn forward(&self, input: &TokenizedInput) -> Result<AttentionTrace> {
        forward(&self.config, &self.weights, input)
    }
}

fn layer_norm_rows(x: &Matrix, gamma: &Matrix, beta: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let normed = layer_norm(x.row(r), gamma.values(), beta.values(), LN_EPS)?;
        out.row_mut(r).copy_from_slice(&normed);
    }
    Ok(out)
}

fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut out = matmul(x, w)?;
    out.add_row_vector(b.values())?;
    Ok(out)
}

fn embed(config: &ModelConfig, weights: &WeightSet, input: &TokenizedInput) -> Result<Matrix> {
    let n = input.len();
    let mut x = Matrix::zeros(n, config.d_model);
    for (pos, (&id, &seg)) in input.ids.iter().zip(&input.segments).enumerate() {
        let row = x.row_mut(pos);
        let tok = weights.token_embedding.row(id as usize);
        let p = weights.position_embedding.row(pos);
        for c in 0..config.d_model {
            row[c] = tok[c] + p[c];
        }
        if let Some(seg_emb) = &weights.segment_embedding {
            for (v, s) in row.iter_mut().zip(seg_emb.row(usize::from(seg))) {
                *v += s;
            }
        }
    }
    Ok(x)
}

/// Attention weights for one head. Masked entries are written as exact
/// zeros; the softmax runs over the visible keys only.
fn head_attention(q: &Matrix, k: &Matrix, mode: Mode) -> Result<Matrix> {
    let n = q.rows();
    let scale = (q.cols() as f64).sqrt();
    let mut alpha = Matrix::zeros(n, n);
    for i in 0..n {
        let visible = mode.allowed_len(i, n);
        let scores: Vec<f64> = (0..visible)
            .map(|j| dot(q.row(i), k.row(j)) / scale)
            .collect();
        let probs = softmax(&scores)?;
        alpha.row_mut(i)[..visible].copy_from_slice(&probs);
    }
    Ok(alpha)
}

fn block(
    config: &ModelConfig,
    layer: &LayerWeights,
    x: &mut Matrix,
    heads: &mut Vec<HeadTrace>,
) -> Result<()> {
    let d_head = config.d_head();
    let h = layer_norm_rows(x, &layer.ln1_gamma, &layer.ln1_beta)?;
    let q_all = affine(&h, &layer.wq, &layer.bq)?;
    let k_all = affine(&h, &layer.wk, &layer.bk)?;
    let v_all = affine(&h, &layer.wv, &layer.bv)?;

    let mut context = Matrix::zeros(x.rows(), config.d_model);
    for head in 0..config.n_heads {
        let (start, end) = (head * d_head, (head + 1) * d_head);
        let q = q_all.column_slice(start, end);
        let k = k_all.column_slice(start, end);
        let v = v_all.column_slice(start, end);
        let alpha = head_attention(&q, &k, config.mode)?;
        let ctx = matmul(&alpha, &v)?;
        for r in 0..ctx.rows() {
            context.row_mut(r)[start..end].copy_from_slice(ctx.row(r));
        }
        heads.push(HeadTrace { alpha, q, k });
    }
    x.add_assign(&affine(&context, &layer.wo, &layer.bo)?)?;

    let h2 = layer_norm_rows(x, &layer.ln2_gamma, &layer.ln2_beta)?;
    let mut hidden = affine(&h2, &layer.w1, &layer.b1)?;
    for r in 0..hidden.rows() {
        for v in hidden.row_mut(r) {
            *v = gelu(*v);
        }
    }
    x.add_assign(&affine(&hidden, &layer.w2, &layer.b2)?)?;
    Ok(())
}

pub fn forward(
    config: &ModelConfig,
    weights: &WeightSet,
    input: &TokenizedInput,
) -> Result<AttentionTrace> {
    let n = input.len();
    if n == 0 {
        return Err(Error::Input("input has no tokens".into()));
    }
    if n > config.max_seq {
        return Err(Error::Length {
            len: n,
            max: config.max_seq,
        });
    }
    if input.mode != config.mode {
        return Err(Error::Mode(format!(
            "{} input given to a {} model",
            input.mode, config.mode
        )));
    }
    if input.segments.len() != n || input.display.len() != n {
        return Err(Error::Shape(
            "display, ids and segments must have equal length".into(),
        ));
    }
    if let Some(&id) = input
        .ids
        .iter()
        .find(|&&id| id as usize >= config.vocab_size)
    {
        return Err(Error::Vocab {
            id,
            size: config.vocab_size,
        });
    }
    if let Some(&s) = input.segments.iter().find(|&&s| s > 1) {
        return Err(Error::Input(format!("segment id {s} is not 0 or 1")));
    }

    let mut x = embed(config, weights, input)?;
    let mut heads = Vec::with_capacity(config.n_layers * config.n_heads);
    for layer in &weights.layers {
        block(config, layer, &mut x, &mut heads)?;
    }

    // Final norm and tied-embedding logits are part of the recipe but not
    // part of the trace.
    let x = layer_norm_rows(&x, &weights.ln_f_gamma, &weights.ln_f_beta)?;
    let logits = matmul_transposed(&x, &weights.token_embedding);
    debug_assert!(logits.is_finite());

    Ok(AttentionTrace::new(
        input.clone(),
        config.n_layers,
        config.n_heads,
        config.d_head(),
        heads,
    ))
}

fn matmul_transposed(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            out.set(i, j, dot(a.row(i), b.row(j)));
        }
    }
    out
}
