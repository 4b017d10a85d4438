use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense vector of scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector<S: Scalar> {
    values: Vec<S>,
}

impl<S: Scalar> DenseVector<S> {
    pub fn new(values: Vec<S>) -> Self {
        DenseVector { values }
    }

    pub fn zeros(dim: usize) -> Self {
        DenseVector {
            values: vec![S::zero(); dim],
        }
    }

    pub fn from_f64s(values: &[f64]) -> Self {
        DenseVector {
            values: values.iter().map(|&v| S::from_f64(v)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    /// Errors if any entry is NaN or infinite. Used at I/O boundaries.
    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "vector contains a non-finite entry".into(),
            ));
        }
        Ok(())
    }

    pub fn dot(&self, other: &DenseVector<S>) -> Result<S> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidArgument(format!(
                "dot: dimension mismatch {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        let mut acc = S::zero();
        for (a, b) in self.values.iter().zip(&other.values) {
            acc = acc + *a * *b;
        }
        Ok(acc)
    }

    pub fn norm(&self) -> S {
        let mut acc = S::zero();
        for v in &self.values {
            acc = acc + *v * *v;
        }
        acc.sqrt()
    }

    pub fn add(&self, other: &DenseVector<S>) -> Result<DenseVector<S>> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidArgument(format!(
                "add: dimension mismatch {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(DenseVector::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| *a + *b)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &DenseVector<S>) -> Result<DenseVector<S>> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidArgument(format!(
                "sub: dimension mismatch {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(DenseVector::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| *a - *b)
                .collect(),
        ))
    }

    pub fn scale(&self, factor: S) -> DenseVector<S> {
        DenseVector::new(self.values.iter().map(|v| *v * factor).collect())
    }

    /// `self += factor * other`, in place.
    pub fn axpy(&mut self, factor: S, other: &DenseVector<S>) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidArgument(format!(
                "axpy: dimension mismatch {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + factor * *b;
        }
        Ok(())
    }
}

/// Dense row-major matrix of scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<S: Scalar> {
    rows: usize,
    cols: usize,
    values: Vec<S>,
}

impl<S: Scalar> DenseMatrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<S>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "matrix with {rows}x{cols} shape needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }
}

/// Standard matrix-vector product. Output has dimension `m.rows()`.
pub fn matvec<S: Scalar>(m: &DenseMatrix<S>, v: &DenseVector<S>) -> Result<DenseVector<S>> {
    if m.cols() != v.dim() {
        return Err(Error::InvalidArgument(format!(
            "matvec: matrix has {} columns, vector has dimension {}",
            m.cols(),
            v.dim()
        )));
    }
    let mut out = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let mut acc = S::zero();
        for (a, b) in m.row(r).iter().zip(v.values()) {
            acc = acc + *a * *b;
        }
        out.push(acc);
    }
    Ok(DenseVector::new(out))
}

/// `m.transpose() * v` without materializing the transpose.
pub fn matvec_transpose<S: Scalar>(
    m: &DenseMatrix<S>,
    v: &DenseVector<S>,
) -> Result<DenseVector<S>> {
    if m.rows() != v.dim() {
        return Err(Error::InvalidArgument(format!(
            "matvec_transpose: matrix has {} rows, vector has dimension {}",
            m.rows(),
            v.dim()
        )));
    }
    let mut out = vec![S::zero(); m.cols()];
    for r in 0..m.rows() {
        let factor = v.values()[r];
        for (o, a) in out.iter_mut().zip(m.row(r)) {
            *o = *o + factor * *a;
        }
    }
    Ok(DenseVector::new(out))
}
