use super::{
    broadcast_strides, contiguous_strides, normalize_axes, walk2, Element, Tensor,
};
use crate::error::{Error, Result};

/// Floor applied before taking logarithms so that entropies stay finite on
/// one-hot distributions.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryFn<T> {
    Sigmoid,
    Relu,
    /// `ln(max(x, 1e-12))`
    LogClamped,
    Negate,
    Scale(T),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryFn {
    Add,
    Sub,
    Mul,
    Div,
}

#[inline]
pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn unary<T: Element>(input: &Tensor<T>, f: UnaryFn<T>) -> Tensor<T> {
    let clamp = T::of(LOG_CLAMP);
    match f {
        UnaryFn::Sigmoid => input.map(sigmoid),
        UnaryFn::Relu => input.map(|x| if x > T::zero() { x } else { T::zero() }),
        UnaryFn::LogClamped => input.map(|x| x.max(clamp).ln()),
        UnaryFn::Negate => input.map(|x| -x),
        UnaryFn::Scale(s) => input.map(|x| x * s),
    }
}

/// Right-aligned broadcast of two shapes; extent-1 axes expand.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for d in 0..rank {
        let da = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
        let db = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
        out[d] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

pub fn binary<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: BinaryFn) -> Result<Tensor<T>> {
    let apply = |x: T, y: T| match f {
        BinaryFn::Add => x + y,
        BinaryFn::Sub => x - y,
        BinaryFn::Mul => x * y,
        BinaryFn::Div => x / y,
    };
    if a.shape == b.shape {
        return a.zip_map(b, apply);
    }
    let shape = broadcast_shape(&a.shape, &b.shape).ok_or_else(|| {
        Error::shape(
            "elementwise",
            format!("cannot broadcast {:?} with {:?}", a.shape, b.shape),
        )
    })?;
    let sa = broadcast_strides(&a.shape, &shape);
    let sb = broadcast_strides(&b.shape, &shape);
    let mut data = vec![T::zero(); shape.iter().product()];
    walk2(&shape, &sa, &sb, |o, ia, ib| {
        data[o] = apply(a.data[ia], b.data[ib]);
    });
    Ok(Tensor::from_parts_unchecked(shape, data))
}

/// Sums a broadcast result back down to `shape` (the adjoint of broadcasting).
pub fn sum_to_shape<T: Element>(grad: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if grad.shape == shape {
        return Ok(grad.clone());
    }
    match broadcast_shape(shape, &grad.shape) {
        Some(ref s) if s.as_slice() == grad.shape() => {}
        _ => {
            return Err(Error::shape(
                "sum_to_shape",
                format!("{shape:?} does not broadcast to {:?}", grad.shape),
            ))
        }
    }
    let own = contiguous_strides(&grad.shape);
    let target = broadcast_strides(shape, &grad.shape);
    let mut data = vec![T::zero(); shape.iter().product()];
    walk2(&grad.shape, &own, &target, |_, i, o| data[o] += grad.data[i]);
    Ok(Tensor::from_parts_unchecked(shape.to_vec(), data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Mean,
    Max,
    Min,
    Sum,
}

/// Result of [`reduce_along`]. `selected` holds, for max/min reductions, the
/// flat input index chosen for each output element (first occurrence on ties).
#[derive(Debug, Clone)]
pub struct Reduction<T> {
    pub values: Tensor<T>,
    pub selected: Option<Vec<usize>>,
}

fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(d, &e)| if axes.contains(&d) { 1 } else { e })
        .collect()
}

/// Reduces over `axes`; reduced axes are kept with extent 1.
pub fn reduce_along<T: Element>(
    input: &Tensor<T>,
    axes: &[usize],
    kind: ReduceKind,
) -> Result<Reduction<T>> {
    let axes = normalize_axes("reduce_along", axes, input.rank())?;
    let out_shape = reduced_shape(&input.shape, &axes);
    let out_len: usize = out_shape.iter().product();
    let own = contiguous_strides(&input.shape);
    let target = broadcast_strides(&out_shape, &input.shape);
    match kind {
        ReduceKind::Sum | ReduceKind::Mean => {
            let mut data = vec![T::zero(); out_len];
            walk2(&input.shape, &own, &target, |_, i, o| data[o] += input.data[i]);
            if kind == ReduceKind::Mean {
                let count = T::of((input.len() / out_len) as f64);
                for v in &mut data {
                    *v /= count;
                }
            }
            Ok(Reduction {
                values: Tensor::from_parts_unchecked(out_shape, data),
                selected: None,
            })
        }
        ReduceKind::Max | ReduceKind::Min => {
            let mut data = vec![T::zero(); out_len];
            let mut selected = vec![usize::MAX; out_len];
            let better = |candidate: T, current: T| match kind {
                ReduceKind::Max => candidate > current,
                _ => candidate < current,
            };
            walk2(&input.shape, &own, &target, |_, i, o| {
                let v = input.data[i];
                if selected[o] == usize::MAX || better(v, data[o]) {
                    data[o] = v;
                    selected[o] = i;
                }
            });
            Ok(Reduction {
                values: Tensor::from_parts_unchecked(out_shape, data),
                selected: Some(selected),
            })
        }
    }
}

/// A tensor whose slices along `axes` are probability distributions.
#[derive(Debug, Clone)]
pub struct SoftmaxDistribution<T> {
    pub probs: Tensor<T>,
    pub axes: Vec<usize>,
}

impl<T: Element> SoftmaxDistribution<T> {
    /// Largest deviation of any slice sum from one.
    pub fn max_sum_error(&self) -> f64 {
        let sums = reduce_along(&self.probs, &self.axes, ReduceKind::Sum)
            .expect("axes validated at construction");
        sums.values
            .data()
            .iter()
            .map(|s| (s.to_f64().unwrap_or(f64::NAN) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Numerically stable softmax over an axis set: each slice has its maximum
/// subtracted before exponentiation.
pub fn softmax_along<T: Element>(
    input: &Tensor<T>,
    axes: &[usize],
) -> Result<SoftmaxDistribution<T>> {
    let axes = normalize_axes("softmax_along", axes, input.rank())?;
    let max = reduce_along(input, &axes, ReduceKind::Max)?.values;
    let own = contiguous_strides(&input.shape);
    let target = broadcast_strides(&max.shape, &input.shape);
    let mut exps = vec![T::zero(); input.len()];
    let mut sums = vec![T::zero(); max.len()];
    walk2(&input.shape, &own, &target, |_, i, o| {
        let e = (input.data[i] - max.data[o]).exp();
        exps[i] = e;
        sums[o] += e;
    });
    walk2(&input.shape, &own, &target, |_, i, o| exps[i] /= sums[o]);
    Ok(SoftmaxDistribution {
        probs: Tensor::from_parts_unchecked(input.shape.clone(), exps),
        axes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_along(&t(&[2], &[0.0, 0.0]), &[0]).unwrap();
        assert_eq!(p.probs.data(), &[0.5, 0.5]);
        let p = softmax_along(&t(&[2], &[0.0, 3f64.ln()]), &[0]).unwrap();
        assert!((p.probs.data()[0] - 0.25).abs() < 1e-15);
        assert!((p.probs.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let x = t(&[2, 3], &[0.1, -0.4, 2.0, 1.5, 0.0, -3.0]);
        let shifted = x.map(|v| v + 1000.0);
        let a = softmax_along(&x, &[1]).unwrap();
        let b = softmax_along(&shifted, &[1]).unwrap();
        assert!(a.probs.max_abs_diff(&b.probs).unwrap() < 1e-7);
        assert!(a.max_sum_error() < 1e-12);
    }

    #[test]
    fn softmax_rejects_empty_axes() {
        assert!(softmax_along(&t(&[2], &[0.0, 1.0]), &[]).is_err());
        assert!(softmax_along(&t(&[2], &[0.0, 1.0]), &[1]).is_err());
    }

    #[test]
    fn unary_examples() {
        assert_eq!(unary(&Tensor::<f64>::scalar(0.0), UnaryFn::Sigmoid).data(), &[0.5]);
        let r = unary(&t(&[2], &[-3.0, 3.0]), UnaryFn::Relu);
        assert_eq!(r.data(), &[0.0, 3.0]);
        let l = unary(&t(&[2], &[0.0, 1.0]), UnaryFn::LogClamped);
        assert!((l.data()[0] - LOG_CLAMP.ln()).abs() < 1e-12);
        assert_eq!(l.data()[1], 0.0);
        // large negative inputs stay finite
        let s = unary(&t(&[2], &[-800.0, 800.0]), UnaryFn::Sigmoid);
        assert!(s.all_finite());
    }

    #[test]
    fn reduce_examples() {
        let x = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        let m = reduce_along(&x, &[0], ReduceKind::Mean).unwrap();
        assert_eq!(m.values.data(), &[2.5]);
        let x = t(&[4], &[1.0, 5.0, 5.0, 2.0]);
        let m = reduce_along(&x, &[0], ReduceKind::Max).unwrap();
        assert_eq!(m.values.data(), &[5.0]);
        assert_eq!(m.selected.unwrap(), vec![1]);
    }

    #[test]
    fn broadcast_multiply_matches_tiling() {
        let a = Tensor::<f64>::from_fn([2, 3, 2, 2], |i| i as f64).unwrap();
        let b = Tensor::<f64>::from_fn([2, 3, 1, 1], |i| 10.0 + i as f64).unwrap();
        let out = a.mul(&b).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for h in 0..2 {
                    for w in 0..2 {
                        let tiled = b.at(&[n, c, 0, 0]);
                        assert_eq!(out.at(&[n, c, h, w]), a.at(&[n, c, h, w]) * tiled);
                    }
                }
            }
        }
        let c = Tensor::<f64>::from_fn([2, 1, 2, 2], |i| i as f64).unwrap();
        assert!(a.add(&c).is_ok());
        let bad = Tensor::<f64>::zeros([2, 2, 1, 1]).unwrap();
        assert!(a.mul(&bad).is_err());
    }

    #[test]
    fn sum_to_shape_is_broadcast_adjoint() {
        let g = Tensor::<f64>::ones([2, 3, 2, 2]).unwrap();
        let s = sum_to_shape(&g, &[2, 3, 1, 1]).unwrap();
        assert!(s.data().iter().all(|&v| v == 4.0));
        let s = sum_to_shape(&g, &[1]).unwrap();
        assert_eq!(s.data(), &[24.0]);
    }
}
