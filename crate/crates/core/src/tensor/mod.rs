//! Dense row-major tensors and the few kernels the rest of the crate needs.

mod fixture;
mod rng;
mod scalar;
mod spectrum;

pub(crate) use fixture::read_u64 as fixture_read_u64;
pub use fixture::{read_tensor, read_tensor_file, write_tensor, write_tensor_file};
pub use rng::{random_tensor, Distribution, SplitMix64};
pub use scalar::Scalar;
pub use spectrum::{singular_spectrum, SpectrumCurve};

use std::ops::Range;

use crate::error::{Error, Result};

/// Dense row-major tensor with an explicit shape.
///
/// Tensors are immutable once built: every operation returns a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {numel} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![T::ZERO; shape.iter().product()],
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        check_shape(shape)?;
        let numel = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::ONE } else { T::ZERO })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Extent of the last dimension.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("shape is never empty")
    }

    /// Number of rows when the tensor is viewed as `[numel / last_dim, last_dim]`.
    pub fn rows(&self) -> usize {
        self.numel() / self.last_dim()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let n = self.last_dim();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    /// View as a matrix `[rows, last_dim]`.
    pub fn flatten_rows(&self) -> Self {
        Self {
            shape: vec![self.rows(), self.last_dim()],
            data: self.data.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    /// Adds `bias` (length `last_dim`) to every row.
    pub fn add_row_vector(&self, bias: &[T]) -> Result<Self> {
        if bias.len() != self.last_dim() {
            return Err(Error::Dimension(format!(
                "bias of length {} against rows of length {}",
                bias.len(),
                self.last_dim()
            )));
        }
        let mut data = self.data.clone();
        for row in data.chunks_mut(bias.len()) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.matrix_dims()?;
        let mut data = Vec::with_capacity(self.numel());
        for j in 0..n {
            for i in 0..m {
                data.push(self.data[i * n + j]);
            }
        }
        Ok(Self {
            shape: vec![n, m],
            data,
        })
    }

    /// Columns `range` of every row, keeping the leading dimensions.
    pub fn slice_last(&self, range: Range<usize>) -> Result<Self> {
        let n = self.last_dim();
        if range.start >= range.end || range.end > n {
            return Err(Error::Dimension(format!(
                "column range {range:?} outside last dimension {n}"
            )));
        }
        let mut data = Vec::with_capacity(self.rows() * range.len());
        for row in self.data.chunks(n) {
            data.extend_from_slice(&row[range.clone()]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = range.len();
        Ok(Self { shape, data })
    }

    /// Rows `range` of a matrix.
    pub fn slice_rows(&self, range: Range<usize>) -> Result<Self> {
        let (m, n) = self.matrix_dims()?;
        if range.start >= range.end || range.end > m {
            return Err(Error::Dimension(format!("row range {range:?} outside {m} rows")));
        }
        Ok(Self {
            shape: vec![range.len(), n],
            data: self.data[range.start * n..range.end * n].to_vec(),
        })
    }

    /// Concatenates tensors along the last dimension.
    pub fn concat_last(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("nothing to concatenate".into()))?;
        let lead = &first.shape[..first.rank() - 1];
        for p in parts {
            if &p.shape[..p.rank() - 1] != lead {
                return Err(Error::Dimension(format!(
                    "cannot concatenate {:?} with {:?}",
                    first.shape, p.shape
                )));
            }
        }
        let rows = first.rows();
        let width: usize = parts.iter().map(|p| p.last_dim()).sum();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(width);
        Ok(Self { shape, data })
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::ZERO, |m, v| m.max(v.abs()))
    }

    /// Largest element-wise absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::ZERO, |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// `max |self - reference| / max |reference|`; zero when both vanish.
    pub fn relative_deviation(&self, reference: &Self) -> Result<f64> {
        let diff = self.max_abs_diff(reference)?.to_f64();
        let scale = reference.max_abs().to_f64();
        Ok(if scale > 0.0 {
            diff / scale
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub(crate) fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::Dimension(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Dimension(format!(
            "shape {shape:?} must be non-empty with positive extents"
        )));
    }
    Ok(())
}

/// Matrix product `a[m×k] · b[k×n]`.
///
/// The reduction over `k` is the innermost loop and runs in index order, so
/// results are bit-reproducible.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.matrix_dims()?;
    matmul_last(a, b)
}

/// Applies `x · w` over the last dimension of `x`, keeping leading dimensions.
pub fn matmul_last<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, n) = w.matrix_dims()?;
    if x.last_dim() != k {
        return Err(Error::Dimension(format!(
            "inner dimensions differ: {:?} x {:?}",
            x.shape, w.shape
        )));
    }
    let m = x.rows();
    // Column-major copy of `w` keeps the k-loop contiguous without changing
    // the summation order.
    let wt = w.transpose()?;
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        let xr = &x.data[i * k..(i + 1) * k];
        for j in 0..n {
            let wc = &wt.data[j * k..(j + 1) * k];
            let mut acc = T::ZERO;
            for p in 0..k {
                acc += xr[p] * wc[p];
            }
            data.push(acc);
        }
    }
    let mut shape = x.shape.clone();
    *shape.last_mut().unwrap() = n;
    Ok(Tensor { shape, data })
}

/// Softmax over the last dimension, with the row maximum subtracted first.
pub fn rowwise_softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.last_dim();
    let mut data = Vec::with_capacity(x.numel());
    for row in x.data.chunks(n) {
        let max = row.iter().copied().fold(row[0], T::max);
        let start = data.len();
        let mut sum = T::ZERO;
        for &v in row {
            let e = (v - max).exp();
            sum += e;
            data.push(e);
        }
        for v in &mut data[start..] {
            *v = *v / sum;
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data,
    }
}
