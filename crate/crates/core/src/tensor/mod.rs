//! Dense channel-first tensors and the primitive kernels everything else is
//! built from.
//!
//! Layout is always row-major with the canonical `N, C, H, W` axis order;
//! lower-rank tensors use a suffix of that order. Every operation here is a
//! pure function that allocates its output.

mod conv;
mod gaussian;
mod ops;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

use crate::error::{Error, Result};

pub use conv::{conv2d, conv2d_backward, linear, linear_backward, Padding, Stride};
pub use gaussian::{gaussian_filter, gaussian_filter_adjoint, gaussian_kernel, FilterMode};
pub use ops::{
    binary, broadcast_shape, reduce_along, softmax_along, sum_to_shape, unary, BinaryFn,
    Reduction, ReduceKind, SoftmaxDistribution, UnaryFn, LOG_CLAMP,
};

/// Scalar types a [`Tensor`] can hold. Implemented for `f32` (training) and
/// `f64` (verification).
pub trait Element:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const NAME: &'static str;

    /// Converts an `f64` literal into this precision.
    fn of(x: f64) -> Self;

    /// `C = A·B + beta·C` for row/column-strided operands.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );
}

fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a: (usize, (isize, isize)),
    b: (usize, (isize, isize)),
    c: (usize, (isize, isize)),
) {
    let extent = |rows: usize, cols: usize, (rs, cs): (isize, isize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(extent(m, k, a.1) <= a.0, "gemm: lhs buffer too small");
    assert!(extent(k, n, b.1) <= b.0, "gemm: rhs buffer too small");
    assert!(extent(m, n, c.1) <= c.0, "gemm: output buffer too small");
}

macro_rules! impl_element {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Element for $t {
            const NAME: &'static str = $name;

            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                assert!(a_strides.0 >= 0 && a_strides.1 >= 0);
                assert!(b_strides.0 >= 0 && b_strides.1 >= 0);
                assert!(c_strides.0 >= 0 && c_strides.1 >= 0);
                check_gemm_bounds(
                    m,
                    k,
                    n,
                    (a.len(), a_strides),
                    (b.len(), b_strides),
                    (c.len(), c_strides),
                );
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the bounds check above guarantees every strided
                // access stays inside the three slices, and `c` is borrowed
                // mutably so it cannot alias `a` or `b`.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_element!(f32, "f32", matrixmultiply::sgemm);
impl_element!(f64, "f64", matrixmultiply::dgemm);

/// A dense row-major tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor<{}>{:?} [", std::any::type_name::<T>(), self.shape)?;
        for (i, v) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

pub(crate) fn validate_shape(op: &'static str, shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::shape(op, "rank-0 shapes are not allowed; use [1]"));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(op, format!("zero extent in {shape:?}")));
    }
    Ok(())
}

/// Row-major strides for a contiguous tensor of `shape`.
pub fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        validate_shape("from_vec", &shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!(
                    "shape {shape:?} holds {expected} elements, data has {}",
                    data.len()
                ),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from a generator over flat indices.
    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = shape.into();
        validate_shape("from_fn", &shape)?;
        let n = shape.iter().product();
        Ok(Self {
            data: (0..n).map(f).collect(),
            shape,
        })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        Self::from_fn(shape, |_| value)
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::one())
    }

    /// A one-element tensor of shape `[1]`.
    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Value at a multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (d, (&i, &extent)) in index.iter().zip(&self.shape).enumerate() {
            assert!(i < extent, "index {i} out of range on axis {d}");
            flat = flat * extent + i;
        }
        self.data[flat]
    }

    /// Interprets the tensor as `N, C, H, W`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(
                "dims4",
                format!("expected an N×C×H×W tensor, got {:?}", self.shape),
            )),
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        validate_shape("reshape", &shape)?;
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Same-shape pointwise combination; shapes must match exactly.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "zip_map",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
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

    pub(crate) fn add_assign_same(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute elementwise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (*a - *b).abs().to_f64().unwrap_or(f64::INFINITY))
                .fold(0.0, f64::max),
        )
    }

    /// Converts to another precision.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| U::of(x.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    /// Copies sample `index` of an N-major tensor into a batch of one.
    pub fn sample(&self, index: usize) -> Result<Self> {
        let n = self.shape[0];
        if index >= n {
            return Err(Error::invalid(
                "sample",
                format!("index {index} out of range for batch of {n}"),
            ));
        }
        let per = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Self {
            shape,
            data: self.data[index * per..(index + 1) * per].to_vec(),
        })
    }

    // Pointwise conveniences used throughout the crate.

    pub fn sigmoid(&self) -> Self {
        unary(self, UnaryFn::Sigmoid)
    }

    pub fn relu(&self) -> Self {
        unary(self, UnaryFn::Relu)
    }

    pub fn log_clamped(&self) -> Self {
        unary(self, UnaryFn::LogClamped)
    }

    pub fn neg(&self) -> Self {
        unary(self, UnaryFn::Negate)
    }

    pub fn scale(&self, factor: T) -> Self {
        unary(self, UnaryFn::Scale(factor))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        binary(self, other, BinaryFn::Add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        binary(self, other, BinaryFn::Sub)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        binary(self, other, BinaryFn::Mul)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        binary(self, other, BinaryFn::Div)
    }
}

/// Walks a shape in row-major order, tracking two strided offsets alongside
/// the flat output position. Broadcast axes carry stride zero.
pub(crate) fn walk2(
    shape: &[usize],
    strides_a: &[usize],
    strides_b: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = shape.len();
    debug_assert!(rank >= 1 && strides_a.len() == rank && strides_b.len() == rank);
    let last = shape[rank - 1];
    let (la, lb) = (strides_a[rank - 1], strides_b[rank - 1]);
    let outer: usize = shape[..rank - 1].iter().product();
    let mut index = vec![0usize; rank - 1];
    let (mut oa, mut ob, mut out) = (0usize, 0usize, 0usize);
    for _ in 0..outer {
        for j in 0..last {
            f(out, oa + j * la, ob + j * lb);
            out += 1;
        }
        for d in (0..rank - 1).rev() {
            index[d] += 1;
            oa += strides_a[d];
            ob += strides_b[d];
            if index[d] < shape[d] {
                break;
            }
            oa -= strides_a[d] * shape[d];
            ob -= strides_b[d] * shape[d];
            index[d] = 0;
        }
    }
}

/// Strides that read a tensor of `shape` as if it had shape `target`,
/// right-aligned, with zero strides on broadcast axes.
pub(crate) fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(shape);
    let offset = target.len() - shape.len();
    (0..target.len())
        .map(|d| {
            if d < offset || shape[d - offset] == 1 {
                0
            } else {
                own[d - offset]
            }
        })
        .collect()
}

/// Validates and deduplicates an axis set against a rank.
pub(crate) fn normalize_axes(op: &'static str, axes: &[usize], rank: usize) -> Result<Vec<usize>> {
    if axes.is_empty() {
        return Err(Error::invalid(op, "empty axis set"));
    }
    let mut sorted = axes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|&&a| a >= rank) {
        return Err(Error::invalid(
            op,
            format!("axis {bad} out of range for rank {rank}"),
        ));
    }
    Ok(sorted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shapes() {
        assert!(Tensor::<f32>::from_vec([2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f32>::from_vec([2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::from_vec(Vec::<usize>::new(), vec![1.0]).is_err());
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(contiguous_strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(broadcast_strides(&[3, 1], &[2, 3, 4]), vec![0, 1, 0]);
    }

    #[test]
    fn walk2_visits_in_order() {
        let mut seen = Vec::new();
        walk2(&[2, 3], &[3, 1], &[1, 0], |o, a, b| seen.push((o, a, b)));
        assert_eq!(
            seen,
            vec![(0, 0, 0), (1, 1, 0), (2, 2, 0), (3, 3, 1), (4, 4, 1), (5, 5, 1)]
        );
    }

    #[test]
    fn gemm_matches_hand_product() {
        // [[1,2],[3,4]] · [[5],[6]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0];
        let mut c = [0.0f64; 2];
        f64::gemm(2, 2, 1, &a, (2, 1), &b, (1, 1), 0.0, &mut c, (1, 1));
        assert_eq!(c, [17.0, 39.0]);
    }
}
