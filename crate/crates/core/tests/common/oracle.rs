//! Straight-loop forward pass used as an independent reference for the
//! engine. Reads weight values only; shares no arithmetic with the crate.

#![allow(dead_code, clippy::needless_range_loop)]

use attnscope::{Mode, WeightSet};

type Rows = Vec<Vec<f64>>;

fn rows(m: &attnscope::Matrix) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn vector(m: &attnscope::Matrix) -> Vec<f64> {
    m.values().to_vec()
}

fn norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mut mean = 0.0;
    for v in x {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for v in x {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        out[i] = g[i] * (x[i] - mean) / (var + 1e-5).sqrt() + b[i];
    }
    out
}

fn proj(x: &[f64], w: &Rows, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w[0].len()];
    for c in 0..out.len() {
        let mut acc = b[c];
        for r in 0..x.len() {
            acc += x[r] * w[r][c];
        }
        out[c] = acc;
    }
    out
}

fn gelu(x: f64) -> f64 {
    let inner = 0.7978845608 * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

/// `alpha[layer][head][i][j]`
pub fn attention(
    weights: &WeightSet,
    n_heads: usize,
    mode: Mode,
    ids: &[u32],
    segments: &[u8],
) -> Vec<Vec<Rows>> {
    let tok = rows(&weights.token_embedding);
    let pos = rows(&weights.position_embedding);
    let d = tok[0].len();
    let dh = d / n_heads;
    let n = ids.len();

    let mut x: Rows = vec![vec![0.0; d]; n];
    for p in 0..n {
        for c in 0..d {
            x[p][c] = tok[ids[p] as usize][c] + pos[p][c];
            if let Some(seg) = &weights.segment_embedding {
                x[p][c] += seg.get(segments[p] as usize, c);
            }
        }
    }

    let mut all = Vec::new();
    for lw in &weights.layers {
        let h: Rows = x
            .iter()
            .map(|r| norm(r, &vector(&lw.ln1_gamma), &vector(&lw.ln1_beta)))
            .collect();
        let q: Rows = h
            .iter()
            .map(|r| proj(r, &rows(&lw.wq), &vector(&lw.bq)))
            .collect();
        let k: Rows = h
            .iter()
            .map(|r| proj(r, &rows(&lw.wk), &vector(&lw.bk)))
            .collect();
        let v: Rows = h
            .iter()
            .map(|r| proj(r, &rows(&lw.wv), &vector(&lw.bv)))
            .collect();
        let mut ctx: Rows = vec![vec![0.0; d]; n];
        let mut layer_alpha = Vec::new();
        for head in 0..n_heads {
            let off = head * dh;
            let mut a: Rows = vec![vec![0.0; n]; n];
            for i in 0..n {
                let last = if mode == Mode::Causal { i } else { n - 1 };
                let mut scores = Vec::new();
                for j in 0..=last {
                    let mut s = 0.0;
                    for c in 0..dh {
                        s += q[i][off + c] * k[j][off + c];
                    }
                    scores.push(s / (dh as f64).sqrt());
                }
                let mut mx = f64::NEG_INFINITY;
                for &s in &scores {
                    if s > mx {
                        mx = s;
                    }
                }
                let mut z = 0.0;
                for &s in &scores {
                    z += (s - mx).exp();
                }
                for j in 0..=last {
                    a[i][j] = (scores[j] - mx).exp() / z;
                }
                for c in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += a[i][j] * v[j][off + c];
                    }
                    ctx[i][off + c] = acc;
                }
            }
            layer_alpha.push(a);
        }
        all.push(layer_alpha);
        for i in 0..n {
            let o = proj(&ctx[i], &rows(&lw.wo), &vector(&lw.bo));
            for c in 0..d {
                x[i][c] += o[c];
            }
        }
        for i in 0..n {
            let h2 = norm(&x[i], &vector(&lw.ln2_gamma), &vector(&lw.ln2_beta));
            let hid: Vec<f64> = proj(&h2, &rows(&lw.w1), &vector(&lw.b1))
                .into_iter()
                .map(gelu)
                .collect();
            let o = proj(&hid, &rows(&lw.w2), &vector(&lw.b2));
            for c in 0..d {
                x[i][c] += o[c];
            }
        }
    }
    all
}
