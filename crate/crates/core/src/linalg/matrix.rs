use serde::{Deserialize, Serialize};

use super::flops;
use crate::error::{Error, Result};

/// Read access to a row-major or transposed matrix.
pub trait MatRef {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn at(&self, i: usize, j: usize) -> f64;
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense vector of `f64`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

/// Zero-copy transposed view of a [`DenseMatrix`].
#[derive(Debug, Clone, Copy)]
pub struct Transposed<'a>(&'a DenseMatrix);

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "DenseMatrix::from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DenseMatrix::from_vec"));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("DenseMatrix::from_rows", "ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    /// Stack vectors of equal length as rows.
    pub fn from_row_vectors(rows: &[DenseVector]) -> Result<Self> {
        let cols = rows.first().map_or(0, DenseVector::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dim("DenseMatrix::from_row_vectors", "ragged rows"));
            }
            data.extend_from_slice(r.as_slice());
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_vector(&self, i: usize) -> DenseVector {
        DenseVector(self.row(i).to_vec())
    }

    pub fn column(&self, j: usize) -> DenseVector {
        DenseVector((0..self.rows).map(|i| self.get(i, j)).collect())
    }

    /// All columns as separate vectors.
    pub fn columns(&self) -> Vec<DenseVector> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    pub fn t(&self) -> Transposed<'_> {
        Transposed(self)
    }

    /// Materialized transpose.
    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::dim("sub", format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &DenseMatrix) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn checked(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }
}

impl MatRef for DenseMatrix {
    #[inline]
    fn rows(&self) -> usize {
        self.rows
    }
    #[inline]
    fn cols(&self) -> usize {
        self.cols
    }
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

impl MatRef for Transposed<'_> {
    #[inline]
    fn rows(&self) -> usize {
        self.0.cols
    }
    #[inline]
    fn cols(&self) -> usize {
        self.0.rows
    }
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.0.data[j * self.0.cols + i]
    }
}

impl DenseVector {
    pub fn zeros(len: usize) -> Self {
        DenseVector(vec![0.0; len])
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

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::dim("dot", format!("{} vs {}", self.len(), other.len())));
        }
        flops::add(2 * self.len() as u64);
        Ok(dot(&self.0, &other.0))
    }

    /// View as a 1×len matrix.
    pub fn to_row_matrix(&self) -> DenseMatrix {
        DenseMatrix {
            rows: 1,
            cols: self.len(),
            data: self.0.clone(),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        DenseVector(v)
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Sequential dot product; the summation order matches [`matmul`] so a single
/// column computed this way is bit-identical to the same entry of a full product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Exact product `a · b`. Counts `2·m·n·p` FLOPs.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::dim(
            "matmul",
            format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (m, n, p) = (a.rows, a.cols, b.cols);
    let mut out = DenseMatrix::zeros(m, p);
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out.data[i * p..(i + 1) * p];
        for (t, &av) in arow.iter().enumerate() {
            let brow = &b.data[t * p..(t + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    flops::add(2 * (m * n * p) as u64);
    out.checked("matmul")
}

/// Exact product of two arbitrary views (e.g. transposed operands).
pub fn matmul_views<A: MatRef, B: MatRef>(a: &A, b: &B) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::dim(
            "matmul_views",
            format!("{}x{} times {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    let (m, n, p) = (a.rows(), a.cols(), b.cols());
    let mut out = DenseMatrix::zeros(m, p);
    for i in 0..m {
        for t in 0..n {
            let av = a.at(i, t);
            let orow = out.row_mut(i);
            for (j, o) in orow.iter_mut().enumerate() {
                *o += av * b.at(t, j);
            }
        }
    }
    flops::add(2 * (m * n * p) as u64);
    out.checked("matmul_views")
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_at_b(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(Error::dim(
            "matmul_at_b",
            format!("({}x{})ᵀ times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (m, n, p) = (a.cols, a.rows, b.cols);
    let mut out = DenseMatrix::zeros(m, p);
    for t in 0..n {
        let arow = a.row(t);
        let brow = b.row(t);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * p..(i + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    flops::add(2 * (m * n * p) as u64);
    out.checked("matmul_at_b")
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_a_bt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(Error::dim(
            "matmul_a_bt",
            format!("{}x{} times ({}x{})ᵀ", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (m, n, p) = (a.rows, a.cols, b.rows);
    let mut out = DenseMatrix::zeros(m, p);
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..p {
            out.data[i * p + j] = dot(arow, b.row(j));
        }
    }
    flops::add(2 * (m * n * p) as u64);
    out.checked("matmul_a_bt")
}

/// Row vector times matrix.
pub fn vecmat(v: &DenseVector, m: &DenseMatrix) -> Result<DenseVector> {
    if v.len() != m.rows {
        return Err(Error::dim(
            "vecmat",
            format!("vector of {} times {}x{}", v.len(), m.rows, m.cols),
        ));
    }
    let out = matmul(&v.to_row_matrix(), m)?;
    Ok(DenseVector(out.data))
}

/// ℓ2 norm of every column. Counts `2·rows·cols` FLOPs.
pub fn col_norms<M: MatRef>(m: &M) -> DenseVector {
    let (r, c) = (m.rows(), m.cols());
    let mut sq = vec![0.0; c];
    for i in 0..r {
        for (j, s) in sq.iter_mut().enumerate() {
            let v = m.at(i, j);
            *s += v * v;
        }
    }
    flops::add(2 * (r * c) as u64);
    DenseVector(sq.into_iter().map(f64::sqrt).collect())
}

/// ℓ2 norm of every row. Counts `2·rows·cols` FLOPs.
pub fn row_norms<M: MatRef>(m: &M) -> DenseVector {
    let (r, c) = (m.rows(), m.cols());
    let out = (0..r)
        .map(|i| (0..c).map(|j| m.at(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    flops::add(2 * (r * c) as u64);
    DenseVector(out)
}
