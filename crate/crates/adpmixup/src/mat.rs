//! Small dense matrix used for every weight block in the model.
//!
//! Matrices are stored row-major and applied input-major: `y = x·W + b` where
//! `x` has `rows` entries and `y` has `cols` entries. Everything is `f64`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Mat) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// `x·W + b` with `x.len() == rows`, output length `cols`.
    pub fn apply(&self, x: &[f64], bias: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(bias.len(), self.cols);
        let mut out = bias.to_vec();
        for (r, &xv) in x.iter().enumerate() {
            let row = self.row(r);
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xv * w;
            }
        }
        out
    }

    /// Back-propagate through `apply`: given dL/dy, return dL/dx.
    pub fn apply_transpose(&self, dy: &[f64]) -> Vec<f64> {
        debug_assert_eq!(dy.len(), self.cols);
        let mut dx = vec![0.0; self.rows];
        for (r, dv) in dx.iter_mut().enumerate() {
            let row = self.row(r);
            *dv = row.iter().zip(dy).map(|(&w, &g)| w * g).sum();
        }
        dx
    }

    /// `self += c * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Mat, c: f64) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    /// Elementwise `ca*a + cb*b`. Each entry is computed as a single fused
    /// expression so two calls with the same coefficients give identical bits.
    pub fn lincomb(a: &Mat, b: &Mat, ca: f64, cb: f64) -> Mat {
        debug_assert!(a.same_shape(b));
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| ca * x + cb * y)
            .collect();
        Mat {
            rows: a.rows,
            cols: a.cols,
            data,
        }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `a += c * b` for plain vectors.
pub fn add_scaled_vec(a: &mut [f64], b: &[f64], c: f64) {
    debug_assert_eq!(a.len(), b.len());
    for (x, &y) in a.iter_mut().zip(b) {
        *x += c * y;
    }
}

/// Elementwise `ca*a + cb*b` for plain vectors.
pub fn lincomb_vec(a: &[f64], b: &[f64], ca: f64, cb: f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| ca * x + cb * y).collect()
}
