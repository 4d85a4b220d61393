//! Dense 64-bit kernels: matrices, vectors, Hadamard algebra, Kronecker
//! products and single-channel 2-D cross-correlation.
//!
//! Storage is row-major and every reduction runs in a fixed order so that
//! repeated runs are bit-reproducible.

use crate::error::{Error, Result};

/// Row-major dense matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense vector of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} entry {i} is {}", data[i]))),
        None => Ok(()),
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data, "matrix")?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. All rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Constructor for results of arithmetic on already validated inputs.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_raw(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · v`, summing each row left to right.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::shape(format!(
                "matvec: matrix has {} columns, vector has {} entries",
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `selfᵀ · v` without materializing the transpose. Output entry `c`
    /// accumulates `self[r, c] · v[r]` for `r` ascending.
    pub fn matvec_transposed(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::shape(format!(
                "transposed matvec: matrix has {} rows, vector has {} entries",
                self.rows,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                let orow = other.row(k);
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * s).collect(),
        )
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    fn zip_with(&self, other: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        check_finite(&data, "vector")?;
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn ones(len: usize) -> Self {
        Self {
            data: vec![1.0; len],
        }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Column-matrix view (`len × 1`).
    pub fn to_column(&self) -> Matrix {
        Matrix::from_raw(self.data.len(), 1, self.data.clone())
    }
}

/// Elementwise integer power `A^{∘k}`.
pub fn hadamard_power(a: &Matrix, k: u32) -> Result<Matrix> {
    if k == 0 {
        return Err(Error::InvalidOrder(0, "Hadamard power needs k >= 1".into()));
    }
    if k == 1 {
        return Ok(a.clone());
    }
    let data = a.data.iter().map(|v| v.powi(k as i32)).collect();
    Ok(Matrix::from_raw(a.rows, a.cols, data))
}

/// Elementwise product `A ⊙ B`.
pub fn hadamard_product(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.zip_with(b, "hadamard product", |x, y| x * y)
}

/// Kronecker product: block `(i, j)` of the result is `A[i, j] · B`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let s = a.get(i, j);
            for p in 0..b.rows {
                let base = (i * b.rows + p) * cols + j * b.cols;
                for (q, &bv) in b.row(p).iter().enumerate() {
                    out.data[base + q] = s * bv;
                }
            }
        }
    }
    out
}

/// Kernel rotated by 180 degrees.
pub fn rot180(f: &Matrix) -> Matrix {
    let mut data = f.data.clone();
    data.reverse();
    Matrix::from_raw(f.rows, f.cols, data)
}

/// Output length of a strided window sweep, or an error when the geometry
/// does not tile exactly.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::Dimension(
            "kernel and stride must be positive".into(),
        ));
    }
    let span = input + 2 * pad;
    if span < kernel {
        return Err(Error::Dimension(format!(
            "kernel {kernel} larger than padded input {span}"
        )));
    }
    if !(span - kernel).is_multiple_of(stride) {
        return Err(Error::Dimension(format!(
            "(input {input} + 2*pad {pad} - kernel {kernel}) is not divisible by stride {stride}"
        )));
    }
    Ok((span - kernel) / stride + 1)
}

/// Zero-padded 2-D cross-correlation. Each output sums the kernel window in
/// row-major kernel order.
pub fn conv2d(
    input: &Matrix,
    kernel: &Matrix,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Matrix> {
    let oh = conv_output_len(input.rows, kernel.rows, stride.0, padding.0)?;
    let ow = conv_output_len(input.cols, kernel.cols, stride.1, padding.1)?;
    let mut out = Matrix::zeros(oh, ow);
    let (ph, pw) = (padding.0 as isize, padding.1 as isize);
    for oy in 0..oh {
        for ox in 0..ow {
            let y0 = (oy * stride.0) as isize - ph;
            let x0 = (ox * stride.1) as isize - pw;
            let mut acc = 0.0;
            for ky in 0..kernel.rows {
                let y = y0 + ky as isize;
                if y < 0 || y >= input.rows as isize {
                    continue;
                }
                for kx in 0..kernel.cols {
                    let x = x0 + kx as isize;
                    if x < 0 || x >= input.cols as isize {
                        continue;
                    }
                    acc += input.get(y as usize, x as usize) * kernel.get(ky, kx);
                }
            }
            out.set(oy, ox, acc);
        }
    }
    Ok(out)
}

/// Inserts `stride - 1` zeros between neighbouring entries, then pads with
/// `pad` zeros on every side. Used to express strided convolution backward
/// passes as a plain stride-1 full correlation.
pub(crate) fn dilate_and_pad(m: &Matrix, stride: (usize, usize), pad: (usize, usize)) -> Matrix {
    let dh = (m.rows - 1) * stride.0 + 1;
    let dw = (m.cols - 1) * stride.1 + 1;
    let rows = dh + 2 * pad.0;
    let cols = dw + 2 * pad.1;
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..m.rows {
        for c in 0..m.cols {
            out.set(pad.0 + r * stride.0, pad.1 + c * stride.1, m.get(r, c));
        }
    }
    out
}
