//! Captured attention and the views derived from it: neuron-level
//! decomposition, display filters and pooled thumbnails.

use crate::error::{Error, Result};
use crate::tensor::{dot, softmax, Matrix};
use crate::tokenizer::{Mode, TokenizedInput};

pub const DEFAULT_THUMBNAIL_RESOLUTION: usize = 16;

/// Capture for one (layer, head): attention weights plus the query and key
/// vectors that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrace {
    /// `N x N`, row `i` is the distribution of query `i` over keys.
    pub alpha: Matrix,
    /// `N x d_head`
    pub q: Matrix,
    /// `N x d_head`
    pub k: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    input: TokenizedInput,
    n_layers: usize,
    n_heads: usize,
    d_head: usize,
    /// Layer-major: index `layer * n_heads + head`.
    heads: Vec<HeadTrace>,
}

impl AttentionTrace {
    pub(crate) fn new(
        input: TokenizedInput,
        n_layers: usize,
        n_heads: usize,
        d_head: usize,
        heads: Vec<HeadTrace>,
    ) -> Self {
        debug_assert_eq!(heads.len(), n_layers * n_heads);
        Self {
            input,
            n_layers,
            n_heads,
            d_head,
            heads,
        }
    }

    /// Builds a trace from externally supplied heads (layer-major order),
    /// checking every shape.
    pub fn from_heads(
        input: TokenizedInput,
        n_layers: usize,
        n_heads: usize,
        d_head: usize,
        heads: Vec<HeadTrace>,
    ) -> Result<Self> {
        let n = input.len();
        if n == 0 || input.segments.len() != n || input.display.len() != n {
            return Err(Error::Shape(
                "input sequences must be nonempty and equal length".into(),
            ));
        }
        if heads.len() != n_layers * n_heads {
            return Err(Error::Shape(format!(
                "{} heads given for {n_layers} layers x {n_heads} heads",
                heads.len()
            )));
        }
        for ht in &heads {
            if ht.alpha.shape() != (n, n)
                || ht.q.shape() != (n, d_head)
                || ht.k.shape() != (n, d_head)
            {
                return Err(Error::Shape(format!(
                    "head capture shapes alpha {:?}, q {:?}, k {:?} do not match N={n}, d_head={d_head}",
                    ht.alpha.shape(),
                    ht.q.shape(),
                    ht.k.shape()
                )));
            }
        }
        Ok(Self::new(input, n_layers, n_heads, d_head, heads))
    }

    pub fn input(&self) -> &TokenizedInput {
        &self.input
    }

    pub fn mode(&self) -> Mode {
        self.input.mode
    }

    pub fn seq_len(&self) -> usize {
        self.input.len()
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    pub fn heads(&self) -> &[HeadTrace] {
        &self.heads
    }

    pub fn head(&self, layer: usize, head: usize) -> Result<&HeadTrace> {
        check_index("layer", layer, self.n_layers)?;
        check_index("head", head, self.n_heads)?;
        Ok(&self.heads[layer * self.n_heads + head])
    }

    /// Iterates `(layer, head, capture)` in layer-major order.
    pub fn iter_heads(&self) -> impl Iterator<Item = (usize, usize, &HeadTrace)> {
        let h = self.n_heads;
        self.heads
            .iter()
            .enumerate()
            .map(move |(idx, ht)| (idx / h, idx % h, ht))
    }
}

pub(crate) fn check_index(dim: &'static str, index: usize, len: usize) -> Result<()> {
    if index >= len {
        return Err(Error::Bounds { dim, index, len });
    }
    Ok(())
}

/// How attention from one source token decomposes into per-neuron
/// products.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronDetail {
    pub layer: usize,
    pub head: usize,
    pub source: usize,
    pub query: Vec<f64>,
    /// Key vectors of the visible targets.
    pub keys: Vec<Vec<f64>>,
    /// `elementwise[j][n] = query[n] * keys[j][n]`
    pub elementwise: Vec<Vec<f64>>,
    pub dot: Vec<f64>,
    /// `dot / √d_head`
    pub scaled: Vec<f64>,
    pub softmax: Vec<f64>,
    pub targets: Vec<usize>,
}

pub fn neuron_detail(
    trace: &AttentionTrace,
    layer: usize,
    head: usize,
    source: usize,
) -> Result<NeuronDetail> {
    let ht = trace.head(layer, head)?;
    let n = trace.seq_len();
    check_index("token_index", source, n)?;

    let visible = trace.mode().allowed_len(source, n);
    let targets: Vec<usize> = (0..visible).collect();
    let query = ht.q.row(source).to_vec();
    let keys: Vec<Vec<f64>> = targets.iter().map(|&j| ht.k.row(j).to_vec()).collect();
    let elementwise: Vec<Vec<f64>> = keys
        .iter()
        .map(|k| query.iter().zip(k).map(|(a, b)| a * b).collect())
        .collect();
    let dots: Vec<f64> = keys.iter().map(|k| dot(&query, k)).collect();
    let scale = (trace.d_head() as f64).sqrt();
    let scaled: Vec<f64> = dots.iter().map(|d| d / scale).collect();
    let probs = softmax(&scaled)?;

    Ok(NeuronDetail {
        layer,
        head,
        source,
        query,
        keys,
        elementwise,
        dot: dots,
        scaled,
        softmax: probs,
        targets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sentence {
    A,
    B,
}

impl Sentence {
    pub fn segment(self) -> u8 {
        match self {
            Sentence::A => 0,
            Sentence::B => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterSpec {
    All,
    FromToken(usize),
    Sentence { src: Sentence, dst: Sentence },
}

/// Masked copy of one head's attention: entries outside the filter become
/// zero, the rest are copied unchanged (never renormalized).
pub fn apply_filter(
    trace: &AttentionTrace,
    layer: usize,
    head: usize,
    filter: FilterSpec,
) -> Result<Matrix> {
    let alpha = &trace.head(layer, head)?.alpha;
    let n = trace.seq_len();
    let segments = &trace.input().segments;
    let keep: Box<dyn Fn(usize, usize) -> bool> = match filter {
        FilterSpec::All => return Ok(alpha.clone()),
        FilterSpec::FromToken(i) => {
            check_index("token_index", i, n)?;
            Box::new(move |r, _| r == i)
        }
        FilterSpec::Sentence { src, dst } => {
            if trace.mode() != Mode::Bidirectional {
                return Err(Error::Mode(
                    "sentence filters require a bidirectional trace".into(),
                ));
            }
            let (s, d) = (src.segment(), dst.segment());
            Box::new(move |r, c| segments[r] == s && segments[c] == d)
        }
    };
    let mut out = Matrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            if keep(r, c) {
                out.set(r, c, alpha.get(r, c));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadThumbnail {
    pub layer: usize,
    pub head: usize,
    /// `R x R`, `R = min(N, resolution)`
    pub grid: Matrix,
}

/// Start offsets of `parts` contiguous near-equal blocks covering `0..n`,
/// plus the final end offset.
fn block_bounds(n: usize, parts: usize) -> Vec<usize> {
    (0..=parts).map(|b| b * n / parts).collect()
}

/// Max-pools one head's attention down to at most `resolution` cells per
/// side.
pub fn thumbnail(
    trace: &AttentionTrace,
    layer: usize,
    head: usize,
    resolution: usize,
) -> Result<HeadThumbnail> {
    if resolution == 0 {
        return Err(Error::Domain(
            "thumbnail resolution must be at least 1".into(),
        ));
    }
    let alpha = &trace.head(layer, head)?.alpha;
    let n = trace.seq_len();
    if n <= resolution {
        return Ok(HeadThumbnail {
            layer,
            head,
            grid: alpha.clone(),
        });
    }
    let bounds = block_bounds(n, resolution);
    let mut grid = Matrix::zeros(resolution, resolution);
    for br in 0..resolution {
        for bc in 0..resolution {
            let mut m = 0.0f64;
            for r in bounds[br]..bounds[br + 1] {
                for c in bounds[bc]..bounds[bc + 1] {
                    m = m.max(alpha.get(r, c));
                }
            }
            grid.set(br, bc, m);
        }
    }
    Ok(HeadThumbnail { layer, head, grid })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn input(n: usize, mode: Mode, segments: Vec<u8>) -> TokenizedInput {
        TokenizedInput {
            display: (0..n).map(|i| format!("t{i}")).collect(),
            ids: vec![1; n],
            segments,
            mode,
        }
    }

    /// Single-layer single-head trace wrapping an injected alpha.
    pub(crate) fn alpha_trace(
        alpha: Vec<Vec<f64>>,
        mode: Mode,
        segments: Option<Vec<u8>>,
    ) -> AttentionTrace {
        let n = alpha.len();
        let segments = segments.unwrap_or_else(|| vec![0; n]);
        AttentionTrace::from_heads(
            input(n, mode, segments),
            1,
            1,
            1,
            vec![HeadTrace {
                alpha: Matrix::from_rows(&alpha).unwrap(),
                q: Matrix::zeros(n, 1),
                k: Matrix::zeros(n, 1),
            }],
        )
        .unwrap()
    }

    #[test]
    fn neuron_detail_forced_arithmetic() {
        let trace = AttentionTrace::from_heads(
            input(2, Mode::Causal, vec![0, 0]),
            1,
            1,
            2,
            vec![HeadTrace {
                alpha: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap(),
                q: Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0]]).unwrap(),
                k: Matrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap(),
            }],
        )
        .unwrap();
        let d = neuron_detail(&trace, 0, 0, 1).unwrap();
        assert_eq!(d.elementwise[0], vec![3.0, 8.0]);
        assert_eq!(d.dot[0], 11.0);
        assert_eq!(d.scaled[0], 11.0 / 2f64.sqrt());
        assert_eq!(d.targets, vec![0, 1]);

        let d0 = neuron_detail(&trace, 0, 0, 0).unwrap();
        assert_eq!(d0.targets, vec![0]);
        assert_eq!(d0.softmax, vec![1.0]);
    }

    #[test]
    fn neuron_detail_bounds() {
        let trace = alpha_trace(vec![vec![1.0]], Mode::Causal, None);
        let dims = [
            (1, 0, 0, "layer"),
            (0, 1, 0, "head"),
            (0, 0, 1, "token_index"),
        ];
        for (l, h, i, dim) in dims {
            match neuron_detail(&trace, l, h, i) {
                Err(Error::Bounds { dim: d, .. }) => assert_eq!(d, dim),
                other => panic!("expected bounds error, got {other:?}"),
            }
        }
    }

    #[test]
    fn filters() {
        let alpha = vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.4, 0.3, 0.2, 0.1],
            vec![0.25, 0.25, 0.25, 0.25],
            vec![0.7, 0.1, 0.1, 0.1],
        ];
        let trace = alpha_trace(alpha.clone(), Mode::Bidirectional, Some(vec![0, 0, 1, 1]));
        let all = apply_filter(&trace, 0, 0, FilterSpec::All).unwrap();
        assert_eq!(all.to_rows(), alpha);

        let row = apply_filter(&trace, 0, 0, FilterSpec::FromToken(2)).unwrap();
        for r in 0..4 {
            let expect = if r == 2 {
                alpha[2].clone()
            } else {
                vec![0.0; 4]
            };
            assert_eq!(row.row(r), &expect[..]);
        }

        let ab = apply_filter(
            &trace,
            0,
            0,
            FilterSpec::Sentence {
                src: Sentence::A,
                dst: Sentence::B,
            },
        )
        .unwrap();
        assert_eq!(
            ab.to_rows(),
            vec![
                vec![0.0, 0.0, 0.3, 0.4],
                vec![0.0, 0.0, 0.2, 0.1],
                vec![0.0; 4],
                vec![0.0; 4]
            ]
        );

        assert!(matches!(
            apply_filter(&trace, 0, 0, FilterSpec::FromToken(4)),
            Err(Error::Bounds {
                dim: "token_index",
                ..
            })
        ));

        let causal = alpha_trace(vec![vec![1.0]], Mode::Causal, None);
        assert!(matches!(
            apply_filter(
                &causal,
                0,
                0,
                FilterSpec::Sentence {
                    src: Sentence::A,
                    dst: Sentence::A
                }
            ),
            Err(Error::Mode(_))
        ));
    }

    #[test]
    fn thumbnail_passthrough_when_small() {
        let alpha = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.2, 0.3, 0.5, 0.0],
            vec![0.1, 0.2, 0.3, 0.4],
        ];
        let trace = alpha_trace(alpha.clone(), Mode::Causal, None);
        assert_eq!(thumbnail(&trace, 0, 0, 8).unwrap().grid.to_rows(), alpha);
        assert!(thumbnail(&trace, 0, 0, 0).is_err());
    }

    #[test]
    fn thumbnail_keeps_shifted_diagonal() {
        let n = 8;
        let mut alpha = vec![vec![0.0; n]; n];
        alpha[0][0] = 1.0;
        for i in 1..n {
            alpha[i][i - 1] = 1.0;
        }
        let trace = alpha_trace(alpha, Mode::Causal, None);
        let g = thumbnail(&trace, 0, 0, 4).unwrap().grid;
        assert_eq!(g.shape(), (4, 4));
        // blocks {0,1} {2,3} {4,5} {6,7}: (2k, 2k-1) lands below the
        // diagonal, (2k+1, 2k) on it
        for b in 1..4 {
            assert_eq!(g.get(b, b - 1), 1.0);
        }
        for r in 0..4 {
            for c in 0..4 {
                if c != r && c + 1 != r {
                    assert_eq!(g.get(r, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn thumbnail_uneven_blocks() {
        // N=5, R=3: blocks [0,1) [1,3) [3,5)
        let alpha: Vec<Vec<f64>> = (0..5)
            .map(|r| (0..5).map(|c| (r * 5 + c) as f64 / 100.0).collect())
            .collect();
        let trace = alpha_trace(alpha, Mode::Bidirectional, None);
        let g = thumbnail(&trace, 0, 0, 3).unwrap().grid;
        // max of each block is its bottom-right element
        let expect = vec![
            vec![0.00, 0.02, 0.04],
            vec![0.10, 0.12, 0.14],
            vec![0.20, 0.22, 0.24],
        ];
        assert_eq!(g.to_rows(), expect);
    }
}
