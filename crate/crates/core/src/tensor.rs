//! Row-major dense tensors and row-sparse gradient buffers.

use serde::{Deserialize, Serialize};

/// Names of every trainable parameter tensor, in update order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    UserEmb,
    ItemEmb,
    UserMargin,
    ItemMargin,
    BoundaryProj,
    PopUserEmb,
    PopItemEmb,
}

impl ParamKind {
    pub const ALL: [ParamKind; 7] = [
        ParamKind::UserEmb,
        ParamKind::ItemEmb,
        ParamKind::UserMargin,
        ParamKind::ItemMargin,
        ParamKind::BoundaryProj,
        ParamKind::PopUserEmb,
        ParamKind::PopItemEmb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::UserEmb => "user_emb",
            ParamKind::ItemEmb => "item_emb",
            ParamKind::UserMargin => "user_margin",
            ParamKind::ItemMargin => "item_margin",
            ParamKind::BoundaryProj => "boundary_proj",
            ParamKind::PopUserEmb => "pop_user_emb",
            ParamKind::PopItemEmb => "pop_item_emb",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamKind> {
        ParamKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute element-wise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Gradient buffer for one parameter tensor. Rows never written stay zero and
/// are reported as untouched, which the lazy optimizer relies on.
#[derive(Clone, Debug, PartialEq)]
pub struct Grad {
    values: Tensor,
    touched: Vec<bool>,
}

impl Grad {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grad {
            values: Tensor::zeros(rows, cols),
            touched: vec![false; rows],
        }
    }

    /// A gradient where every row counts as touched.
    pub fn dense(values: Tensor) -> Self {
        let touched = vec![true; values.rows()];
        Grad { values, touched }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn is_touched(&self, row: usize) -> bool {
        self.touched[row]
    }

    pub fn touched_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.touched
            .iter()
            .enumerate()
            .filter_map(|(r, &t)| t.then_some(r))
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.values.row(r)
    }

    /// Mutable row access; marks the row touched.
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        self.touched[r] = true;
        self.values.row_mut(r)
    }

    /// `row[r] += coef * v`
    #[inline]
    pub fn axpy(&mut self, r: usize, coef: f64, v: &[f64]) {
        let row = self.row_mut(r);
        for (g, x) in row.iter_mut().zip(v) {
            *g += coef * x;
        }
    }

    #[inline]
    pub fn add_scalar(&mut self, r: usize, delta: f64) {
        self.row_mut(r)[0] += delta;
    }

    pub fn merge(&mut self, other: &Grad) {
        assert_eq!(self.values.shape(), other.values.shape());
        for r in other.touched_rows() {
            self.axpy(r, 1.0, other.row(r));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.is_finite()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = c * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in chunks * 4..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
