//! Dense real tensors, pairwise contraction, and the two matrix factorizations
//! used throughout the crate.
//!
//! Storage is row-major `f64`. Contraction takes an explicit list of paired
//! axes, as in `numpy.tensordot`: the result carries the unpaired axes of `a`
//! followed by the unpaired axes of `b`.

use faer::{Mat, MatRef, Side};

use crate::{Error, Result};

/// Default relative cut for [`eigh_truncated`].
pub const DEFAULT_EIGH_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if let Some(axis) = shape.iter().position(|&d| d == 0) {
            return Err(Error::Dimension(format!("axis {axis} has length 0")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {len} entries but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(&[n, n], |ix| if ix[0] == ix[1] { 1.0 } else { 0.0 })
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut index = vec![0; shape.len()];
        for _ in 0..len {
            data.push(f(&index));
            increment(&mut index, shape);
        }
        Self::new(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {i} out of bounds for axis of length {d}");
                acc * d + i
            })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let k = self.offset(index);
        self.data[k] = value;
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    /// Reorders axes so that output axis `k` is input axis `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Dimension(format!("{perm:?} is not a permutation of {rank} axes")));
        }
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(self.clone());
        }
        let in_strides = self.strides();
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let moved: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut data = Vec::with_capacity(self.len());
        let mut index = vec![0; rank];
        for _ in 0..self.len() {
            let src: usize = index.iter().zip(&moved).map(|(i, s)| i * s).sum();
            data.push(self.data[src]);
            increment(&mut index, &shape);
        }
        Self::new(shape, data)
    }

    pub fn nrows(&self) -> usize {
        self.shape[0]
    }

    pub fn ncols(&self) -> usize {
        self.shape[1]
    }

    pub fn transpose(&self) -> Result<Self> {
        self.expect_rank2("transpose")?;
        self.permute(&[1, 0])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.expect_rank2("matmul")?;
        other.expect_rank2("matmul")?;
        contract(self, &[1], other, &[0])
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|x| x * factor).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!("cannot add shapes {:?} and {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self::new(self.shape.clone(), data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub(crate) fn expect_rank2(&self, what: &str) -> Result<()> {
        if self.rank() != 2 {
            return Err(Error::Dimension(format!("{what} needs a rank-2 tensor, got shape {:?}", self.shape)));
        }
        Ok(())
    }

    pub(crate) fn to_faer(&self) -> Mat<f64> {
        let cols = self.ncols();
        Mat::from_fn(self.nrows(), cols, |i, j| self.data[i * cols + j])
    }

    pub(crate) fn from_faer(m: MatRef<'_, f64>) -> Self {
        let (rows, cols) = (m.nrows(), m.ncols());
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self { shape: vec![rows, cols], data }
    }
}

/// `aᵀ · b` for rank-2 tensors with matching row counts.
pub(crate) fn matmul_tn(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    a.expect_rank2("matmul_tn")?;
    b.expect_rank2("matmul_tn")?;
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!("cannot form aᵀb for shapes {:?} and {:?}", a.shape, b.shape)));
    }
    let (fa, fb) = (a.to_faer(), b.to_faer());
    let product = fa.transpose() * &fb;
    Ok(DenseTensor::from_faer(product.as_ref()))
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

fn increment(index: &mut [usize], shape: &[usize]) {
    for k in (0..shape.len()).rev() {
        index[k] += 1;
        if index[k] < shape[k] {
            return;
        }
        index[k] = 0;
    }
}

/// Sums over the paired axes `axes_a[k]` / `axes_b[k]`.
///
/// The result's axes are the unpaired axes of `a` (in order) followed by the
/// unpaired axes of `b`. Contracting every axis yields a rank-0 tensor.
pub fn contract(a: &DenseTensor, axes_a: &[usize], b: &DenseTensor, axes_b: &[usize]) -> Result<DenseTensor> {
    if axes_a.len() != axes_b.len() {
        return Err(Error::Dimension(format!(
            "{} axes of a paired with {} axes of b",
            axes_a.len(),
            axes_b.len()
        )));
    }
    for (&i, &j) in axes_a.iter().zip(axes_b) {
        if i >= a.rank() || j >= b.rank() {
            return Err(Error::Dimension(format!(
                "axis pair ({i}, {j}) out of range for ranks {} and {}",
                a.rank(),
                b.rank()
            )));
        }
        if a.shape[i] != b.shape[j] {
            return Err(Error::Dimension(format!(
                "axis pair ({i}, {j}) has lengths {} and {}",
                a.shape[i], b.shape[j]
            )));
        }
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|k| !axes_a.contains(k)).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|k| !axes_b.contains(k)).collect();
    if free_a.len() + axes_a.len() != a.rank() || free_b.len() + axes_b.len() != b.rank() {
        return Err(Error::Dimension("an axis is paired more than once".into()));
    }

    let perm_a: Vec<usize> = free_a.iter().chain(axes_a).copied().collect();
    let perm_b: Vec<usize> = axes_b.iter().chain(&free_b).copied().collect();
    let a_t = a.permute(&perm_a)?;
    let b_t = b.permute(&perm_b)?;

    let rows: usize = free_a.iter().map(|&k| a.shape[k]).product();
    let inner: usize = axes_a.iter().map(|&k| a.shape[k]).product();
    let cols: usize = free_b.iter().map(|&k| b.shape[k]).product();

    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let a_row = &a_t.data[i * inner..(i + 1) * inner];
        let out_row = &mut out[i * cols..(i + 1) * cols];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b_t.data[k * cols..(k + 1) * cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }

    let shape: Vec<usize> = free_a.iter().map(|&k| a.shape[k]).chain(free_b.iter().map(|&k| b.shape[k])).collect();
    DenseTensor::new(shape, out)
}

#[derive(Clone, Debug)]
pub struct SvdResult {
    /// `m × k` with orthonormal columns.
    pub u: DenseTensor,
    /// Singular values, non-increasing.
    pub s: Vec<f64>,
    /// `k × n` with orthonormal rows.
    pub vt: DenseTensor,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        let k = self.s.len();
        let mut us = self.u.clone();
        for row in us.data.chunks_mut(k) {
            for (x, s) in row.iter_mut().zip(&self.s) {
                *x *= s;
            }
        }
        us.matmul(&self.vt)
    }
}

fn check_finite(m: &DenseTensor, what: &str) -> Result<()> {
    if let Some(k) = m.data.iter().position(|x| !x.is_finite()) {
        return Err(Error::Input(format!("{what}: non-finite entry at flat index {k}")));
    }
    Ok(())
}

/// Thin singular value decomposition, `k = min(rows, cols)`.
pub fn svd(m: &DenseTensor) -> Result<SvdResult> {
    m.expect_rank2("svd")?;
    check_finite(m, "svd")?;
    let decomposition = m
        .to_faer()
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd did not converge: {e:?}")))?;
    let s: Vec<f64> = decomposition.S().column_vector().iter().copied().collect();
    let u = DenseTensor::from_faer(decomposition.U());
    let vt = DenseTensor::from_faer(decomposition.V().transpose());
    Ok(SvdResult { u, s, vt })
}

/// Singular values only, non-increasing.
pub fn singular_values(m: &DenseTensor) -> Result<Vec<f64>> {
    m.expect_rank2("singular_values")?;
    check_finite(m, "singular_values")?;
    m.to_faer()
        .singular_values()
        .map_err(|e| Error::Numerical(format!("svd did not converge: {e:?}")))
}

#[derive(Clone, Debug)]
pub struct TruncatedEigh {
    /// Retained eigenvalues, non-increasing, all above the cut.
    pub eigvals: Vec<f64>,
    /// `n × m` isometry whose columns are the matching eigenvectors.
    pub eigvecs: DenseTensor,
}

impl TruncatedEigh {
    pub fn rank(&self) -> usize {
        self.eigvals.len()
    }
}

/// Eigendecomposition of a symmetric positive semi-definite matrix, keeping
/// only eigenvalues strictly above `tol · max(λ_max, 1)`.
///
/// Eigenvalues below `-tol · max(λ_max, 1)` are reported as [`Error::NotPsd`].
/// If nothing survives the cut the result has rank 0 and a single zero column
/// placeholder is *not* added; callers must handle `rank() == 0`.
pub fn eigh_truncated(x: &DenseTensor, tol: f64) -> Result<TruncatedEigh> {
    x.expect_rank2("eigh_truncated")?;
    check_finite(x, "eigh_truncated")?;
    let n = x.nrows();
    if x.ncols() != n {
        return Err(Error::Dimension(format!("eigh_truncated needs a square matrix, got {:?}", x.shape)));
    }
    if !(tol >= 0.0) {
        return Err(Error::Input(format!("tolerance must be non-negative, got {tol}")));
    }
    let scale = x.data.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (x.data[i * n + j], x.data[j * n + i]);
            if (a - b).abs() > 1e-10 * scale {
                return Err(Error::Input(format!("matrix is not symmetric at ({i}, {j}): {a} vs {b}")));
            }
        }
    }

    let decomposition = x
        .to_faer()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition did not converge: {e:?}")))?;
    // faer returns eigenvalues in non-decreasing order.
    let values: Vec<f64> = decomposition.S().column_vector().iter().copied().collect();
    let vectors = decomposition.U();
    let largest = values.last().copied().unwrap_or(0.0);
    let threshold = tol * largest.max(1.0);
    if let Some(&lowest) = values.first() {
        if lowest < -threshold {
            return Err(Error::NotPsd { eigenvalue: lowest, threshold });
        }
    }

    let keep: Vec<usize> = (0..n).rev().filter(|&k| values[k] > threshold).collect();
    let m = keep.len();
    let eigvals = keep.iter().map(|&k| values[k]).collect();
    let mut data = vec![0.0; n * m];
    for (col, &k) in keep.iter().enumerate() {
        for row in 0..n {
            data[row * m + col] = vectors[(row, k)];
        }
    }
    let eigvecs = DenseTensor { shape: vec![n, m], data };
    Ok(TruncatedEigh { eigvals, eigvecs })
}
