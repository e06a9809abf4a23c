//! Dense row-major matrices and a define-by-run gradient tape.
//!
//! Every value in the model is a 2-D [`Tensor`]; vectors are `1 × n` rows.
//! A [`Tape`] records operations on [`Var`] handles during a forward pass and
//! replays them in reverse in [`Tape::backward`]. A fresh tape is built for
//! every forward pass, so variable-length dialogues need no special casing.
//!
//! ```
//! use misc_observer::tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.constant(Tensor::row(vec![3.0]));
//! let y = x.mul(x).unwrap().sum();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
//! ```

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, grad_check_params, relative_error};
pub(crate) use tape::{focal_value, PROB_FLOOR};
pub use tape::{Gradients, NodeId, Tape, Var};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `rows × cols` matrix of `f64` in row-major order.
///
/// Zero rows are allowed (an empty utterance embeds to a `0 × d` matrix);
/// zero columns are not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::dim("tensor must have at least one column"));
        }
        if rows * cols != data.len() {
            return Err(Error::dim(format!(
                "shape {rows}x{cols} does not match {} elements",
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(cols > 0, "tensor must have at least one column");
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// A single-row tensor.
    pub fn row(data: Vec<f64>) -> Self {
        let cols = data.len();
        assert!(cols > 0, "row vector must be non-empty");
        Tensor {
            rows: 1,
            cols,
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::row(vec![value])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Tensor::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a `1 × 1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::contract(format!(
                "expected a scalar, found shape {:?}",
                self.shape()
            )));
        }
        Ok(self.data[0])
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::dim(format!(
                "matmul {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Tensor {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other, "elementwise")?;
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Numerically stable softmax along `axis` (0 = down columns, 1 = along rows).
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        match axis {
            1 => {
                let mut out = self.clone();
                for r in 0..self.rows {
                    softmax_in_place(&mut out.data[r * self.cols..(r + 1) * self.cols]);
                }
                Ok(out)
            }
            0 => {
                if self.rows == 0 {
                    return Err(Error::dim("softmax over an empty axis"));
                }
                Ok(self.transpose().softmax(1)?.transpose())
            }
            _ => Err(Error::dim(format!("softmax axis {axis} out of range"))),
        }
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn row_times_column() {
        let a = Tensor::row(vec![1.0, 2.0]);
        let b = Tensor::new(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn zeros_annihilate() {
        let b = Tensor::new(3, 2, vec![1.5, -2.0, 3.0, 0.25, 9.0, -7.0]).unwrap();
        assert_eq!(Tensor::zeros(2, 3).matmul(&b).unwrap(), Tensor::zeros(2, 2));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let err = Tensor::zeros(2, 3)
            .matmul(&Tensor::zeros(2, 3))
            .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Tensor::new(0, 4, vec![]).is_ok());
        assert!(Tensor::new(1, 0, vec![]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let u = Tensor::row(vec![0.0, 0.0, 0.0]).softmax(1).unwrap();
        for p in u.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = Tensor::row(vec![1000.0, 0.0]).softmax(1).unwrap();
        assert!(s.all_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-15 && s.data()[1] < 1e-300);

        let l = Tensor::row(vec![1f64.ln(), 2f64.ln(), 3f64.ln()])
            .softmax(1)
            .unwrap();
        for (p, want) in l.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((p - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_axis_zero_and_empty() {
        let t = Tensor::new(2, 1, vec![0.0, 0.0]).unwrap();
        assert_eq!(t.softmax(0).unwrap().data(), &[0.5, 0.5]);
        assert!(Tensor::zeros(0, 3).softmax(0).is_err());
        assert!(t.softmax(2).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
