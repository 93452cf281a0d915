//! Dense numeric kernels used by the engine.
//!
//! Storage is `f64` throughout. Model weights are generated and stored as
//! `f32`, so every weight value is exactly representable here and the
//! model file round trip is lossless.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {}x{} matrix",
                values.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Copy of the column range `[start, end)`.
    pub fn column_slice(&self, start: usize, end: usize) -> Matrix {
        let width = end - start;
        let mut values = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            values.extend_from_slice(&self.row(r)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols: width,
            values,
        }
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::Shape(format!(
                "bias of length {} added to {}x{} matrix",
                bias.len(),
                self.rows,
                self.cols
            )));
        }
        for r in 0..self.rows {
            for (v, b) in self.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }
}

/// Standard matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        for (k, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(b.row(k)) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(
            "softmax input contains a non-finite entry".into(),
        ));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Layer normalization with population variance.
pub fn layer_norm(v: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    if gamma.len() != v.len() || beta.len() != v.len() {
        return Err(Error::Shape(format!(
            "layer_norm input {} with gamma {} and beta {}",
            v.len(),
            gamma.len(),
            beta.len()
        )));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Domain(format!(
            "layer_norm eps must be positive, got {eps}"
        )));
    }
    if v.is_empty() {
        return Ok(Vec::new());
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    Ok(v.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(x, (g, b))| g * (x - mean) * inv + b)
        .collect())
}

const GELU_SQRT_2_OVER_PI: f64 = 0.7978845608;
const GELU_CUBIC: f64 = 0.044715;

/// GELU, tanh approximation:
/// `0.5 x (1 + tanh(0.7978845608 (x + 0.044715 x^3)))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}
