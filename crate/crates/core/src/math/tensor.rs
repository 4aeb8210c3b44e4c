//! Row-major dense tensors. Everything in this crate is 2D: vectors are
//! `1 x n` rows and scalars are `1 x 1`.

use super::{MathError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// When true, graph leaves built from this tensor participate in backward.
    pub requires_grad: bool,
    /// Accumulated gradient, same length as `data`. Populated by
    /// `Graph::scatter_grads` for parameter tensors.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.len() != 2 {
            return Err(MathError::ShapeMismatch {
                op: "tensor_new",
                detail: format!("shape {:?} incompatible with {} elements", shape, data.len()),
            });
        }
        Ok(Self { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { shape: vec![rows, cols], data: vec![0.0; rows * cols], requires_grad: false, grad: None }
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Self {
        Self { shape: vec![rows, cols], data: vec![v; rows * cols], requires_grad: false, grad: None }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// A `1 x n` row vector.
    pub fn row(values: &[f64]) -> Self {
        Self { shape: vec![1, values.len()], data: values.to_vec(), requires_grad: false, grad: None }
    }

    /// A `1 x 1` scalar.
    pub fn scalar(v: f64) -> Self {
        Self::row(&[v])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(MathError::ShapeMismatch {
                    op: "from_rows",
                    detail: "ragged rows".into(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![r, c], data)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.shape[0], self.shape[1])
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.shape[1];
        self.data[i * c + j] = v;
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max absolute entrywise difference; shapes must already match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
