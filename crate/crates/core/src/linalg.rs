// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal dense linear algebra over `f64`.
//!
//! [`Vector`] and [`Matrix`] are immutable-by-convention value types: every
//! operation returns a fresh value. Matrices are stored row-major.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Summation
// ---------------------------------------------------------------------------

/// Neumaier-compensated sum. Result is independent of how the caller
/// chunked the work as long as the input order is fixed.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Vector
// ---------------------------------------------------------------------------

/// Dense column vector.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Builds a vector, rejecting empty or non-finite data.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::dim("Vector::new", "len 0", "len >= 1"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Vector::new"));
        }
        Ok(Self(data))
    }

    /// Wraps already-validated data.
    pub(crate) fn from_vec(data: Vec<f64>) -> Self {
        debug_assert!(data.iter().all(|x| x.is_finite()));
        Self(data)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::dim("dot", self.len(), other.len()));
        }
        Ok(dot_slices(&self.0, &other.0))
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        dot_slices(&self.0, &self.0).sqrt()
    }

    pub fn scale(&self, c: f64) -> Vector {
        Self(self.0.iter().map(|x| x * c).collect())
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        if self.len() != other.len() {
            return Err(Error::dim("add", self.len(), other.len()));
        }
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        if self.len() != other.len() {
            return Err(Error::dim("sub", self.len(), other.len()));
        }
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    /// Unit vector along `self`, or `None` for the zero vector.
    pub fn normalized(&self) -> Option<Vector> {
        let n = self.norm();
        (n > 0.0).then(|| self.scale(1.0 / n))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(data: Vec<f64>) -> Result<Self> {
        Self::new(data)
    }
}

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim("Matrix::new", format!("{rows}x{cols}"), "positive dims"));
        }
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Matrix::new",
                format!("{rows}x{cols}"),
                format!("data len {}", data.len()),
            ));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Matrix::new"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::dim("Matrix::from_rows", "ragged rows", format!("{c} cols")));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub(crate) fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.cols;
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn column(&self, c: usize) -> Vector {
        Vector((0..self.rows).map(|r| self.get(r, c)).collect())
    }

    /// Sub-matrix made of columns `start..start + width`.
    pub fn column_block(&self, start: usize, width: usize) -> Matrix {
        Matrix::from_fn(self.rows, width, |r, c| self.get(r, start + c))
    }

    /// Overwrites columns `start..start + block.cols()` with `block`.
    pub(crate) fn set_column_block(&mut self, start: usize, block: &Matrix) {
        for r in 0..self.rows {
            for c in 0..block.cols {
                self.set(r, start + c, block.get(r, c));
            }
        }
    }

    /// `self^T x`.
    pub fn transpose_matvec(&self, x: &Vector) -> Result<Vector> {
        if self.rows != x.len() {
            return Err(Error::dim(
                "transpose_matvec",
                format!("{}x{} (transposed)", self.rows, self.cols),
                format!("vector of len {}", x.len()),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.as_slice().iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * xr;
            }
        }
        Ok(Vector(out))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                "Matrix::add",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot_slices(&self.data, &self.data).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    /// Rounds every entry to the nearest `f32`.
    pub fn round_to_f32(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f64::from(x as f32)).collect(),
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list().entries((0..self.rows).map(|r| self.row(r))).finish()
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Matrix-vector product `m x`.
pub fn matvec(m: &Matrix, x: &Vector) -> Result<Vector> {
    if m.cols != x.len() {
        return Err(Error::dim(
            "matvec",
            format!("matrix {}x{}", m.rows, m.cols),
            format!("vector of len {}", x.len()),
        ));
    }
    Ok(Vector(
        (0..m.rows).map(|r| dot_slices(m.row(r), x.as_slice())).collect(),
    ))
}

/// `scale * u k^T`.
pub fn outer(u: &Vector, k: &Vector, scale: f64) -> Matrix {
    Matrix::from_fn(u.len(), k.len(), |r, c| scale * u.get(r) * k.get(c))
}

/// Cosine similarity, defined as 0 when either vector is zero.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine", a.len(), b.len()));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot_slices(a.as_slice(), b.as_slice()) / (na * nb)).clamp(-1.0, 1.0))
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim("pearson", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::DegenerateSample(format!("{} points", x.len())));
    }
    let n = x.len() as f64;
    let mx = compensated_sum(x.iter().copied()) / n;
    let my = compensated_sum(y.iter().copied()) / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// RMS normalization followed by an elementwise gain.
pub fn rms_norm(x: &Vector, gain: &Vector, eps: f64) -> Result<Vector> {
    if x.len() != gain.len() {
        return Err(Error::dim("rms_norm", x.len(), gain.len()));
    }
    Ok(Vector(rms_norm_slice(x.as_slice(), gain.as_slice(), eps)))
}

/// Mean/variance normalization followed by an elementwise gain (no bias).
pub fn layer_norm(x: &Vector, gain: &Vector, eps: f64) -> Result<Vector> {
    if x.len() != gain.len() {
        return Err(Error::dim("layer_norm", x.len(), gain.len()));
    }
    Ok(Vector(layer_norm_slice(x.as_slice(), gain.as_slice(), eps)))
}

pub(crate) fn rms_norm_slice(x: &[f64], gain: &[f64], eps: f64) -> Vec<f64> {
    let ms = dot_slices(x, x) / x.len() as f64;
    let inv = 1.0 / (ms + eps).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
}

pub(crate) fn layer_norm_slice(x: &[f64], gain: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter().zip(gain).map(|(v, g)| (v - mean) * inv * g).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Vector {
        Vector::new(data.to_vec()).unwrap()
    }

    #[test]
    fn matvec_examples() {
        let id = Matrix::identity(2);
        assert_eq!(matvec(&id, &v(&[3.0, -1.0])).unwrap(), v(&[3.0, -1.0]));
        let diag = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(matvec(&diag, &v(&[1.0, 1.0])).unwrap(), v(&[1.0, 2.0]));
        let zero = Matrix::zeros(3, 2);
        assert!(matvec(&zero, &v(&[5.0, -7.0])).unwrap().is_zero());
    }

    #[test]
    fn matvec_dimension_error_names_both_shapes() {
        let err = matvec(&Matrix::zeros(2, 3), &v(&[1.0, 2.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("len 2"), "{msg}");
    }

    #[test]
    fn outer_examples() {
        let m = outer(&v(&[1.0, 0.0]), &v(&[0.0, 1.0]), 2.0);
        assert_eq!(m, Matrix::from_rows(&[vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap());
        assert!(outer(&v(&[1.0, 2.0]), &v(&[3.0, 4.0]), 0.0).is_zero());
    }

    #[test]
    fn outer_has_rank_one() {
        // every pair of columns is proportional: c_a[r] c_b[s] == c_a[s] c_b[r]
        let m = outer(&v(&[1.5, -2.0, 0.25]), &v(&[0.5, 3.0, -1.0, 2.0]), -0.7);
        for a in 0..m.cols() {
            for b in 0..m.cols() {
                for r in 0..m.rows() {
                    for s in 0..m.rows() {
                        let lhs = m.get(r, a) * m.get(s, b);
                        let rhs = m.get(s, a) * m.get(r, b);
                        assert!((lhs - rhs).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[2.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 3.0])).unwrap(), 0.0);
        let c = cosine(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(cosine(&Vector::zeros(2), &v(&[1.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&v(&[1.0, 1.0]), &Vector::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // cov = 1.0 (sum of products of deviations 4.0), var = 5/4 each
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-15);
    }

    #[test]
    fn pearson_degenerate() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateSample(_))
        ));
        assert!(matches!(pearson(&[1.0], &[2.0]), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn rms_norm_examples() {
        let ones = v(&[1.0; 4]);
        assert_eq!(rms_norm(&ones, &ones, 0.0).unwrap(), ones);
        assert_eq!(rms_norm(&v(&[2.0, 2.0]), &v(&[1.0, 1.0]), 0.0).unwrap(), v(&[1.0, 1.0]));
        let y = rms_norm(&v(&[3.0, 4.0]), &v(&[1.0, 1.0]), 0.0).unwrap();
        let rms = 12.5_f64.sqrt();
        assert!((y.get(0) - 3.0 / rms).abs() < 1e-15);
        assert!((y.get(1) - 4.0 / rms).abs() < 1e-15);
        assert!((y.get(0) - 0.84853).abs() < 1e-5 && (y.get(1) - 1.13137).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_centers() {
        let y = layer_norm(&v(&[1.0, 2.0, 3.0]), &v(&[1.0, 1.0, 1.0]), 0.0).unwrap();
        assert!(y.as_slice().iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Vector::new(vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(1, 2, vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }
}
