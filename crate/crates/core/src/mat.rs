//! Dense row-major `f64` matrix and the three batched kernels the layers need.
//!
//! Everything is plain scalar Rust; the kernels are written so the inner
//! loops run over contiguous slices and auto-vectorize. Weights are stored
//! transposed (`in x out`) for exactly that reason: the batch forward pass
//! and the weight-gradient accumulation both become axpy loops.

use crate::{Error, Result};

/// Row-major dense matrix.
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

    /// Build from a flat row-major buffer. Panics if the length disagrees.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "flat buffer length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
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

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Elementwise map into a new matrix.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped matrices.
    pub fn zip_map(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, other: &Mat, c: f64) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    /// New matrix whose rows are `self`'s rows at `idx`, in order.
    pub fn gather_rows(&self, idx: &[usize]) -> Mat {
        let mut out = Mat::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    /// Columns of `self` reordered so that output column `k` is input column `perm[k]`.
    pub fn permute_cols(&self, perm: &[usize]) -> Mat {
        assert_eq!(perm.len(), self.cols, "permutation length mismatch");
        let mut out = Mat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let src = self.row(i);
            let dst = out.row_mut(i);
            for (k, &p) in perm.iter().enumerate() {
                dst[k] = src[p];
            }
        }
        out
    }

    /// Copy of column `j`.
    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Horizontal slice `[c0, c1)` of every row.
    pub fn col_range(&self, c0: usize, c1: usize) -> Mat {
        assert!(c0 <= c1 && c1 <= self.cols);
        let mut out = Mat::zeros(self.rows, c1 - c0);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[c0..c1]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_cols(&self, context: &'static str, expected: usize) -> Result<()> {
        if self.cols != expected {
            return Err(Error::shape(
                context,
                format!("{} columns", expected),
                format!("{} columns", self.cols),
            ));
        }
        Ok(())
    }
}

/// `y = x . wt (+ bias)` with `x: n x in`, `wt: in x out` (transposed weights).
pub(crate) fn affine(x: &Mat, wt: &Mat, bias: Option<&[f64]>) -> Mat {
    assert_eq!(x.cols, wt.rows, "affine inner dimension mismatch");
    let (n, out) = (x.rows, wt.cols);
    let mut y = Mat::zeros(n, out);
    for i in 0..n {
        let xi = x.row(i);
        let yi = y.row_mut(i);
        if let Some(b) = bias {
            yi.copy_from_slice(b);
        }
        for (k, &c) in xi.iter().enumerate() {
            let wk = wt.row(k);
            for (yv, &wv) in yi.iter_mut().zip(wk) {
                *yv += c * wv;
            }
        }
    }
    y
}

/// `dx = dy . wt^T` with `dy: n x out`, `wt: in x out`.
pub(crate) fn grad_input(dy: &Mat, wt: &Mat) -> Mat {
    assert_eq!(dy.cols, wt.cols, "grad_input dimension mismatch");
    let (n, inn, out) = (dy.rows, wt.rows, wt.cols);
    let mut dx = Mat::zeros(n, inn);
    for i in 0..n {
        let di = dy.row(i);
        let xi = dx.row_mut(i);
        for (k, xv) in xi.iter_mut().enumerate() {
            let wk = wt.row(k);
            let mut acc = [0.0f64; 8];
            let chunks = out / 8;
            for c in 0..chunks {
                let b = c * 8;
                for l in 0..8 {
                    acc[l] += di[b + l] * wk[b + l];
                }
            }
            let mut tail = 0.0;
            for b in chunks * 8..out {
                tail += di[b] * wk[b];
            }
            *xv = ((acc[0] + acc[1]) + (acc[2] + acc[3]))
                + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
                + tail;
        }
    }
    dx
}

/// Accumulate `dwt += x^T . dy` and, when present, `dbias += column sums of dy`.
pub(crate) fn accumulate_param_grads(
    x: &Mat,
    dy: &Mat,
    dwt: &mut Mat,
    dbias: Option<&mut Vec<f64>>,
) {
    assert_eq!(x.rows, dy.rows, "batch size mismatch");
    assert_eq!(dwt.shape(), (x.cols, dy.cols), "weight grad shape mismatch");
    for i in 0..x.rows {
        let xi = x.row(i);
        let di = dy.row(i);
        for (k, &c) in xi.iter().enumerate() {
            let wk = dwt.row_mut(k);
            for (wv, &dv) in wk.iter_mut().zip(di) {
                *wv += c * dv;
            }
        }
    }
    if let Some(db) = dbias {
        assert_eq!(db.len(), dy.cols, "bias grad shape mismatch");
        for i in 0..dy.rows {
            for (bv, &dv) in db.iter_mut().zip(dy.row(i)) {
                *bv += dv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_hand_product() {
        // x = [[1,2],[3,4]], wt = [[1,0,2],[0,1,1]] (in=2, out=3), bias [10,20,30]
        let x = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let wt = Mat::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 1.0]]);
        let b = vec![10.0, 20.0, 30.0];
        let y = affine(&x, &wt, Some(&b));
        assert_eq!(y.row(0), &[11.0, 22.0, 34.0]);
        assert_eq!(y.row(1), &[13.0, 24.0, 40.0]);
    }

    #[test]
    fn grad_input_is_transpose_product() {
        let dy = Mat::from_rows(&[vec![1.0, -1.0, 2.0]]);
        let wt = Mat::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 1.0]]);
        let dx = grad_input(&dy, &wt);
        // dx = dy . wt^T: [1*1 + -1*0 + 2*2, 1*0 + -1*1 + 2*1] = [5, 1]
        assert_eq!(dx.row(0), &[5.0, 1.0]);
    }

    #[test]
    fn param_grads_accumulate_outer_products() {
        let x = Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        let dy = Mat::from_rows(&[vec![3.0], vec![5.0]]);
        let mut dwt = Mat::zeros(2, 1);
        let mut db = vec![0.0];
        accumulate_param_grads(&x, &dy, &mut dwt, Some(&mut db));
        assert_eq!(dwt.data(), &[3.0, 11.0]);
        assert_eq!(db, vec![8.0]);
    }

    #[test]
    fn permute_cols_reorders() {
        let m = Mat::from_rows(&[vec![1.0, 2.0, 3.0]]);
        let p = m.permute_cols(&[2, 0, 1]);
        assert_eq!(p.row(0), &[3.0, 1.0, 2.0]);
    }
}
