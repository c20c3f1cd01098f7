//! Dense N-mode tensors and the mode-n algebra.
//!
//! Values live in a single contiguous buffer with the **first index varying
//! fastest**: the entry at multi-index `(i_0, ..., i_{N-1})` sits at offset
//! `i_0 + I_0 * (i_1 + I_1 * (i_2 + ...))`. Mode indices are zero-based.
//!
//! The mode-n unfolding is the `I_n x prod_{k != n} I_k` matrix whose columns
//! are the mode-n fibers; the column of a fiber is determined by the remaining
//! indices in increasing mode order with the lowest mode varying fastest.
//! With this layout the mode-0 unfolding is the raw buffer read column-major.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use crate::error::{GlossError, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// Sizes of the blocks before, at, and after mode `n`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ModeSplit {
    pub left: usize,
    pub dim: usize,
    pub right: usize,
}

fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.iter().any(|&e| e == 0) {
        return Err(GlossError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

pub(crate) fn mode_split(shape: &[usize], n: usize) -> Result<ModeSplit> {
    if n >= shape.len() {
        return Err(GlossError::ModeOutOfRange {
            mode: n,
            order: shape.len(),
        });
    }
    Ok(ModeSplit {
        left: shape[..n].iter().product(),
        dim: shape[n],
        right: shape[n + 1..].iter().product(),
    })
}

impl<T: Real> DenseTensor<T> {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        })
    }

    pub fn filled(shape: &[usize], value: T) -> Result<Self> {
        let len = validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = validate_shape(shape)?;
        if data.len() != len {
            return Err(GlossError::DimensionMismatch(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        let len = validate_shape(shape)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// A zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }
}

impl<T> DenseTensor<T> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Linear offset of a multi-index. Panics when the index is out of bounds.
    pub fn offset(&self, idx: &[usize]) -> usize {
        offset_of(&self.shape, idx)
    }

    /// Multi-index of a linear offset.
    pub fn index_of(&self, offset: usize) -> Vec<usize> {
        index_of(&self.shape, offset)
    }
}

pub(crate) fn offset_of(shape: &[usize], idx: &[usize]) -> usize {
    assert_eq!(idx.len(), shape.len(), "index order does not match tensor order");
    let mut off = 0;
    for (k, (&i, &e)) in idx.iter().zip(shape).enumerate().rev() {
        assert!(i < e, "index {i} out of bounds for mode {k} with extent {e}");
        off = off * e + i;
    }
    off
}

pub(crate) fn index_of(shape: &[usize], mut offset: usize) -> Vec<usize> {
    shape
        .iter()
        .map(|&e| {
            let i = offset % e;
            offset /= e;
            i
        })
        .collect()
}

/// Advances a multi-index in storage order (first mode fastest).
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &e) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < e {
            return;
        }
        *i = 0;
    }
}

/// Row-major ("lexicographic") rank of the entry stored at `offset`.
pub fn lexicographic_key(shape: &[usize], offset: usize) -> usize {
    let idx = index_of(shape, offset);
    idx.iter().zip(shape).fold(0, |acc, (&i, &e)| acc * e + i)
}

impl<T: Real> DenseTensor<T> {
    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: T) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    pub(crate) fn split(&self, n: usize) -> Result<ModeSplit> {
        mode_split(&self.shape, n)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite_value())
    }

    pub fn check_same_shape(&self, other_shape: &[usize]) -> Result<()> {
        if self.shape != other_shape {
            return Err(GlossError::ShapeMismatch {
                expected: self.shape.clone(),
                found: other_shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Mode-n unfolding as an owned `I_n x (len / I_n)` matrix.
    pub fn unfold(&self, n: usize) -> Result<DMatrix<T>> {
        let ModeSplit { left, dim, right } = self.split(n)?;
        let cols = left * right;
        let mut out = DMatrix::<T>::zeros(dim, cols);
        let buf = out.as_mut_slice();
        for r in 0..right {
            for i in 0..dim {
                let src = &self.data[left * (i + dim * r)..left * (i + dim * r + 1)];
                for (l, &v) in src.iter().enumerate() {
                    buf[i + dim * (l + left * r)] = v;
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: &DMatrix<T>, n: usize, shape: &[usize]) -> Result<Self> {
        let len = validate_shape(shape)?;
        let ModeSplit { left, dim, right } = mode_split(shape, n)?;
        if m.nrows() != dim || m.ncols() != left * right {
            return Err(GlossError::DimensionMismatch(format!(
                "cannot fold a {}x{} matrix along mode {n} into shape {shape:?} (needs {dim}x{})",
                m.nrows(),
                m.ncols(),
                left * right
            )));
        }
        let mut data = vec![T::zero(); len];
        let buf = m.as_slice();
        for r in 0..right {
            for i in 0..dim {
                let dst = &mut data[left * (i + dim * r)..left * (i + dim * r + 1)];
                for (l, v) in dst.iter_mut().enumerate() {
                    *v = buf[i + dim * (l + left * r)];
                }
            }
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Mode-n product `self x_n u` with `u` of size `J x I_n`.
    pub fn mode_product(&self, u: &DMatrix<T>, n: usize) -> Result<Self> {
        let ModeSplit { left, dim, right } = self.split(n)?;
        if u.ncols() != dim {
            return Err(GlossError::DimensionMismatch(format!(
                "mode-{n} product needs a matrix with {dim} columns, got {}x{}",
                u.nrows(),
                u.ncols()
            )));
        }
        let j = u.nrows();
        let mut shape = self.shape.clone();
        shape[n] = j;
        if j == 0 {
            return Err(GlossError::InvalidShape(shape));
        }
        let mut out = vec![T::zero(); left * j * right];
        if left == 1 {
            let a = DMatrixView::from_slice(&self.data, dim, right);
            let mut o = DMatrixViewMut::from_slice(&mut out, j, right);
            o.gemm(T::one(), u, &a, T::zero());
        } else {
            let ut = u.transpose();
            for r in 0..right {
                let x = DMatrixView::from_slice(&self.data[r * left * dim..(r + 1) * left * dim], left, dim);
                let mut o = DMatrixViewMut::from_slice(&mut out[r * left * j..(r + 1) * left * j], left, j);
                o.gemm(T::one(), &x, &ut, T::zero());
            }
        }
        Ok(Self { shape, data: out })
    }

    /// Gram matrix `unfold(n) * unfold(n)^T` without materializing the unfolding.
    pub fn mode_gram(&self, n: usize) -> Result<DMatrix<T>> {
        let ModeSplit { left, dim, right } = self.split(n)?;
        let mut g = DMatrix::<T>::zeros(dim, dim);
        if left == 1 {
            let at = DMatrixView::from_slice(&self.data, dim, right).transpose();
            g.gemm_tr(T::one(), &at, &at, T::zero());
        } else {
            for r in 0..right {
                let slab = &self.data[r * left * dim..(r + 1) * left * dim];
                let x = DMatrixView::from_slice(slab, left, dim);
                g.gemm_tr(T::one(), &x, &x, T::one());
            }
        }
        Ok(g)
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }

    pub fn l1_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v.abs())
    }

    /// Number of entries different from zero.
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != T::zero()).count()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, mut f: impl FnMut(T) -> T) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    /// Elementwise combination of two tensors of identical shape.
    pub fn zip_map(&self, other: &Self, mut f: impl FnMut(T, T) -> T) -> Result<Self> {
        self.check_same_shape(&other.shape)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.map(|v| v * alpha)
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: T, x: &Self) -> Result<()> {
        self.check_same_shape(&x.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Frobenius distance `||self - other||_F`.
    pub fn distance(&self, other: &Self) -> Result<T> {
        self.check_same_shape(&other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
            .sqrt())
    }

    /// Keeps entries inside the support, zeroes the rest.
    pub fn project(&self, support: &SupportSet) -> Result<Self> {
        self.check_same_shape(support.shape())?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(support.as_slice())
                .map(|(&v, &m)| if m { v } else { T::zero() })
                .collect(),
        })
    }

    /// Keeps entries outside the support, zeroes the rest.
    pub fn project_complement(&self, support: &SupportSet) -> Result<Self> {
        self.check_same_shape(support.shape())?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(support.as_slice())
                .map(|(&v, &m)| if m { T::zero() } else { v })
                .collect(),
        })
    }

    /// Converts to another scalar type through `f64`.
    pub fn cast<U: Real>(&self) -> DenseTensor<U> {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Offsets of the mode-`n` fiber passing through `offset`, in order of the mode-`n` index.
    pub fn fiber_offsets(&self, n: usize, offset: usize) -> Result<Vec<usize>> {
        let ModeSplit { left, dim, .. } = self.split(n)?;
        let l = offset % left;
        let r = offset / (left * dim);
        Ok((0..dim).map(|i| l + left * (i + dim * r)).collect())
    }

    /// Offsets of the first entry of every mode-`n` fiber (the entries with `i_n = 0`).
    pub fn fiber_starts(&self, n: usize) -> Result<Vec<usize>> {
        let ModeSplit { left, dim, right } = self.split(n)?;
        Ok((0..right)
            .flat_map(|r| (0..left).map(move |l| l + left * dim * r))
            .collect())
    }
}

/// Mode-n concatenation: stacks the mode-n unfoldings of the inputs row-wise.
pub fn cat_n<T: Real>(tensors: &[DenseTensor<T>], n: usize) -> Result<DMatrix<T>> {
    let first = tensors
        .first()
        .ok_or_else(|| GlossError::EmptyInput("cat_n needs at least one tensor".into()))?;
    for t in &tensors[1..] {
        first.check_same_shape(t.shape())?;
    }
    let ModeSplit { left, dim, right } = first.split(n)?;
    let mut out = DMatrix::<T>::zeros(dim * tensors.len(), left * right);
    for (m, t) in tensors.iter().enumerate() {
        let unfolded = t.unfold(n)?;
        out.view_mut((m * dim, 0), (dim, left * right))
            .copy_from(&unfolded);
    }
    Ok(out)
}

/// Boolean mask of observed entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SupportSet {
    shape: Vec<usize>,
    mask: Vec<bool>,
}

/// Boolean tensor of anomaly labels; shares the mask representation.
pub type LabelTensor = SupportSet;

impl SupportSet {
    pub fn full(shape: &[usize]) -> Result<Self> {
        let len = validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            mask: vec![true; len],
        })
    }

    pub fn empty(shape: &[usize]) -> Result<Self> {
        let len = validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            mask: vec![false; len],
        })
    }

    pub fn from_mask(shape: &[usize], mask: Vec<bool>) -> Result<Self> {
        let len = validate_shape(shape)?;
        if mask.len() != len {
            return Err(GlossError::DimensionMismatch(format!(
                "shape {shape:?} needs {len} mask entries, got {}",
                mask.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            mask,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.mask
    }

    pub fn get(&self, idx: &[usize]) -> bool {
        self.mask[offset_of(&self.shape, idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: bool) {
        let o = offset_of(&self.shape, idx);
        self.mask[o] = value;
    }

    pub fn is_observed(&self, offset: usize) -> bool {
        self.mask[offset]
    }

    pub fn count_observed(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_full(&self) -> bool {
        self.mask.iter().all(|m| *m)
    }

    pub fn complement(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            mask: self.mask.iter().map(|m| !m).collect(),
        }
    }
}
