//! Forward evaluation and vector-Jacobian products for every recorded op.

use crate::error::{Error, Result};
use crate::tensor::{
    self, broadcast_strides, contiguous_strides, normalize_axes, walk2, BinaryFn, Element,
    FilterMode, Padding, ReduceKind, Stride, Tensor, UnaryFn, LOG_CLAMP,
};

#[derive(Debug, Clone)]
pub(crate) enum OpKind<T> {
    Leaf,
    Constant,
    Unary(UnaryFn<T>),
    Binary(BinaryFn),
    Reduce {
        axes: Vec<usize>,
        kind: ReduceKind,
    },
    Softmax {
        axes: Vec<usize>,
    },
    Reshape {
        shape: Vec<usize>,
    },
    Conv2d {
        padding: Padding,
        stride: Stride,
    },
    Linear,
    Gaussian {
        k: usize,
        sigma: f64,
        mode: FilterMode,
    },
    MinMax {
        axes: Vec<usize>,
        symmetric: bool,
    },
    BatchNorm {
        eps: f64,
    },
    CrossEntropy {
        labels: Vec<usize>,
    },
    Concat {
        axis: usize,
    },
    Narrow {
        axis: usize,
        start: usize,
        len: usize,
    },
}

impl<T> OpKind<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Constant => "constant",
            OpKind::Unary(_) => "unary",
            OpKind::Binary(_) => "binary",
            OpKind::Reduce { .. } => "reduce",
            OpKind::Softmax { .. } => "softmax",
            OpKind::Reshape { .. } => "reshape",
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::Linear => "linear",
            OpKind::Gaussian { .. } => "gaussian_filter",
            OpKind::MinMax { .. } => "minmax_normalize",
            OpKind::BatchNorm { .. } => "batch_norm",
            OpKind::CrossEntropy { .. } => "cross_entropy",
            OpKind::Concat { .. } => "concat",
            OpKind::Narrow { .. } => "narrow",
        }
    }
}

/// Activations an op keeps for its backward pass beyond its inputs and output.
#[derive(Debug, Clone, Default)]
pub(crate) enum Saved<T> {
    #[default]
    Nothing,
    Selected(Vec<usize>),
    MinMax {
        lo_index: Vec<usize>,
        hi_index: Vec<usize>,
        range: Vec<T>,
    },
    BatchNorm {
        normalized: Tensor<T>,
        inv_std: Vec<T>,
        mean: Vec<T>,
        var: Vec<T>,
    },
    Probs(Tensor<T>),
}

/// Splits a shape at `axis` into (outer, extent, inner) block sizes.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

/// Per-slice min-max scaling. Degenerate slices (max == min) map to zero.
fn minmax_forward<T: Element>(
    x: &Tensor<T>,
    axes: &[usize],
    symmetric: bool,
) -> Result<(Tensor<T>, Saved<T>)> {
    let lo = tensor::reduce_along(x, axes, ReduceKind::Min)?;
    let hi = tensor::reduce_along(x, axes, ReduceKind::Max)?;
    let range: Vec<T> = hi
        .values
        .data()
        .iter()
        .zip(lo.values.data())
        .map(|(&h, &l)| h - l)
        .collect();
    let own = contiguous_strides(x.shape());
    let target = broadcast_strides(lo.values.shape(), x.shape());
    let mut out = vec![T::zero(); x.len()];
    let two = T::of(2.0);
    walk2(x.shape(), &own, &target, |_, i, o| {
        let d = range[o];
        out[i] = if d > T::zero() {
            let unit = (x.data()[i] - lo.values.data()[o]) / d;
            if symmetric {
                two * unit - T::one()
            } else {
                unit
            }
        } else {
            T::zero()
        };
    });
    Ok((
        Tensor::from_parts_unchecked(x.shape().to_vec(), out),
        Saved::MinMax {
            lo_index: lo.selected.expect("min records indices"),
            hi_index: hi.selected.expect("max records indices"),
            range,
        },
    ))
}

fn batch_norm_forward<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, Saved<T>)> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::shape("batch_norm", format!("need N×C[…], got {shape:?}")));
    }
    let (n, c) = (shape[0], shape[1]);
    let spatial: usize = shape[2..].iter().product();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "batch_norm",
            format!(
                "affine parameters have {} / {} entries, input has {c} channels",
                gamma.len(),
                beta.len()
            ),
        ));
    }
    let count = T::of((n * spatial) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let data = x.data();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * spatial;
            mean[ch] += data[base..base + spatial].iter().copied().sum::<T>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * spatial;
            let m = mean[ch];
            var[ch] += data[base..base + spatial]
                .iter()
                .map(|&v| (v - m) * (v - m))
                .sum::<T>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    let inv_std: Vec<T> = var.iter().map(|&v| (v + T::of(eps)).sqrt().recip()).collect();
    let mut normalized = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * spatial;
            let (m, s, g, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in base..base + spatial {
                let xh = (data[i] - m) * s;
                normalized[i] = xh;
                out[i] = g * xh + bt;
            }
        }
    }
    Ok((
        Tensor::from_parts_unchecked(shape.to_vec(), out),
        Saved::BatchNorm {
            normalized: Tensor::from_parts_unchecked(shape.to_vec(), normalized),
            inv_std,
            mean,
            var,
        },
    ))
}

fn cross_entropy_forward<T: Element>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(Tensor<T>, Saved<T>)> {
    let (n, k) = match *logits.shape() {
        [n, k] => (n, k),
        _ => {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits must be N×K, got {:?}", logits.shape()),
            ))
        }
    };
    if labels.len() != n {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for a batch of {n}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(
            "cross_entropy",
            format!("label {bad} out of range for {k} classes"),
        ));
    }
    let probs = tensor::softmax_along(logits, &[1])?.probs;
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        total += lse - row[label];
    }
    Ok((
        Tensor::scalar(total / T::of(n as f64)),
        Saved::Probs(probs),
    ))
}

fn concat_forward<T: Element>(inputs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(Error::invalid("concat", format!("axis {axis} out of range")));
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = 0;
    for t in inputs {
        let compatible = t.rank() == first.rank()
            && (0..t.rank()).all(|d| d == axis || t.shape()[d] == first.shape()[d]);
        if !compatible {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {:?} along axis {axis}", first.shape(), t.shape()),
            ));
        }
        shape[axis] += t.shape()[axis];
    }
    let (outer, _, inner) = split_at_axis(&shape, axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for t in inputs {
            let block = t.shape()[axis] * inner;
            data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
        }
    }
    Ok(Tensor::from_parts_unchecked(shape, data))
}

fn narrow_forward<T: Element>(
    x: &Tensor<T>,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Tensor<T>> {
    if axis >= x.rank() || len == 0 || start + len > x.shape()[axis] {
        return Err(Error::invalid(
            "narrow",
            format!("range {start}..{} on axis {axis} of {:?}", start + len, x.shape()),
        ));
    }
    let (outer, extent, inner) = split_at_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        data.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Ok(Tensor::from_parts_unchecked(shape, data))
}

fn arity_error(kind: &str, got: usize) -> Error {
    Error::invalid("tape", format!("{kind} received {got} inputs"))
}

/// Computes an op's output from its inputs.
pub(crate) fn eval<T: Element>(
    kind: &OpKind<T>,
    inputs: &[&Tensor<T>],
) -> Result<(Tensor<T>, Saved<T>)> {
    let one = |inputs: &[&Tensor<T>]| -> Result<Tensor<T>> {
        match inputs {
            [x] => Ok((*x).clone()),
            _ => Err(arity_error(kind.name(), inputs.len())),
        }
    };
    let nothing = |t: Tensor<T>| (t, Saved::Nothing);
    match kind {
        OpKind::Leaf | OpKind::Constant => Err(Error::invalid("tape", "leaves are not evaluated")),
        OpKind::Unary(f) => match inputs {
            [x] => Ok(nothing(tensor::unary(x, *f))),
            _ => Err(arity_error(kind.name(), inputs.len())),
        },
        OpKind::Binary(f) => match inputs {
            [a, b] => tensor::binary(a, b, *f).map(nothing),
            _ => Err(arity_error(kind.name(), inputs.len())),
        },
        OpKind::Reduce { axes, kind: rk } => match inputs {
            [x] => {
                let r = tensor::reduce_along(x, axes, *rk)?;
                Ok((r.values, r.selected.map_or(Saved::Nothing, Saved::Selected)))
            }
            _ => Err(arity_error(kind.name(), inputs.len())),
        },
        OpKind::Softmax { axes } => match inputs {
            [x] => Ok(nothing(tensor::softmax_along(x, axes)?.probs)),
            _ => Err(arity_error(kind.name(), inputs.len())),
        },
        OpKind::Reshape { shape } => one(inputs)?.reshape(shape.clone()).map(nothing),
        OpKind::Conv2d { padding, stride } => match inputs {
            [x, w] => tensor::conv2d(x, w, None, *padding, *stride).map(nothing),
            [x, w, b] => tensor::conv2d(x, w, Some(b), *padding, *stride).map(nothing),
            _ => Err(arity_error(kind.name(), inputs.len())),
        },
        OpKind::Linear => match inputs {
            [x, w] => tensor::linear(x, w, None).map(nothing),
            [x, w, b] => tensor::linear(x, w, Some(b)).map(nothing),
            _ => Err(arity_error(kind.name(), inputs.len())),
        },
        OpKind::Gaussian { k, sigma, mode } => match inputs {
            [x] => tensor::gaussian_filter(x, *k, *sigma, *mode).map(nothing),
            _ => Err(arity_error(kind.name(), inputs.len())),
        },
        OpKind::MinMax { axes, symmetric } => match inputs {
            [x] => {
                let axes = normalize_axes("minmax_normalize", axes, x.rank())?;
                minmax_forward(x, &axes, *symmetric)
            }
            _ => Err(arity_error(kind.name(), inputs.len())),
        },
        OpKind::BatchNorm { eps } => match inputs {
            [x, g, b] => batch_norm_forward(x, g, b, *eps),
            _ => Err(arity_error(kind.name(), inputs.len())),
        },
        OpKind::CrossEntropy { labels } => match inputs {
            [x] => cross_entropy_forward(x, labels),
            _ => Err(arity_error(kind.name(), inputs.len())),
        },
        OpKind::Concat { axis } => concat_forward(inputs, *axis).map(nothing),
        OpKind::Narrow { axis, start, len } => match inputs {
            [x] => narrow_forward(x, *axis, *start, *len).map(nothing),
            _ => Err(arity_error(kind.name(), inputs.len())),
        },
    }
}

/// Expands a reduced tensor back over the reduced axes of `shape`.
fn expand_to<T: Element>(small: &Tensor<T>, shape: &[usize], scale: T) -> Tensor<T> {
    let own = contiguous_strides(shape);
    let target = broadcast_strides(small.shape(), shape);
    let mut data = vec![T::zero(); shape.iter().product()];
    walk2(shape, &own, &target, |_, i, o| data[i] = small.data()[o] * scale);
    Tensor::from_parts_unchecked(shape.to_vec(), data)
}

/// Vector-Jacobian product: maps the output gradient to one gradient per
/// input.
pub(crate) fn backward<T: Element>(
    kind: &OpKind<T>,
    inputs: &[&Tensor<T>],
    output: &Tensor<T>,
    saved: &Saved<T>,
    grad: &Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    let zero = T::zero();
    match kind {
        OpKind::Leaf | OpKind::Constant => Ok(Vec::new()),
        OpKind::Unary(f) => {
            let x = inputs[0];
            let g = match f {
                UnaryFn::Sigmoid => output.zip_map(grad, |y, g| g * y * (T::one() - y))?,
                UnaryFn::Relu => x.zip_map(grad, |x, g| if x > zero { g } else { zero })?,
                UnaryFn::LogClamped => {
                    let clamp = T::of(LOG_CLAMP);
                    x.zip_map(grad, |x, g| if x > clamp { g / x } else { zero })?
                }
                UnaryFn::Negate => grad.neg(),
                UnaryFn::Scale(s) => grad.scale(*s),
            };
            Ok(vec![g])
        }
        OpKind::Binary(f) => {
            let (a, b) = (inputs[0], inputs[1]);
            let (ga, gb) = match f {
                BinaryFn::Add => (grad.clone(), grad.clone()),
                BinaryFn::Sub => (grad.clone(), grad.neg()),
                BinaryFn::Mul => (grad.mul(b)?, grad.mul(a)?),
                BinaryFn::Div => {
                    let ga = grad.div(b)?;
                    // -g·a/b² = -(g/b)·(a/b)
                    let gb = ga.mul(&a.div(b)?)?.neg();
                    (ga, gb)
                }
            };
            Ok(vec![
                tensor::sum_to_shape(&ga, a.shape())?,
                tensor::sum_to_shape(&gb, b.shape())?,
            ])
        }
        OpKind::Reduce { kind: rk, .. } => {
            let x = inputs[0];
            let g = match (rk, saved) {
                (ReduceKind::Sum, _) => expand_to(grad, x.shape(), T::one()),
                (ReduceKind::Mean, _) => {
                    let count = T::of((x.len() / output.len()) as f64);
                    expand_to(grad, x.shape(), T::one() / count)
                }
                (ReduceKind::Max | ReduceKind::Min, Saved::Selected(sel)) => {
                    let mut data = vec![zero; x.len()];
                    for (o, &i) in sel.iter().enumerate() {
                        data[i] += grad.data()[o];
                    }
                    Tensor::from_parts_unchecked(x.shape().to_vec(), data)
                }
                _ => return Err(Error::invalid("tape", "reduce lost its selection")),
            };
            Ok(vec![g])
        }
        OpKind::Softmax { axes } => {
            let gy = grad.mul(output)?;
            let s = tensor::reduce_along(&gy, axes, ReduceKind::Sum)?.values;
            let own = contiguous_strides(output.shape());
            let target = broadcast_strides(s.shape(), output.shape());
            let mut data = vec![zero; output.len()];
            walk2(output.shape(), &own, &target, |_, i, o| {
                data[i] = output.data()[i] * (grad.data()[i] - s.data()[o]);
            });
            Ok(vec![Tensor::from_parts_unchecked(output.shape().to_vec(), data)])
        }
        OpKind::Reshape { .. } => Ok(vec![grad.reshape(inputs[0].shape().to_vec())?]),
        OpKind::Conv2d { padding, stride } => {
            let (dx, dw, db) =
                tensor::conv2d_backward(inputs[0], inputs[1], grad, *padding, *stride)?;
            let mut out = vec![dx, dw];
            if inputs.len() == 3 {
                out.push(db.reshape(inputs[2].shape().to_vec())?);
            }
            Ok(out)
        }
        OpKind::Linear => {
            let (dx, dw, db) = tensor::linear_backward(inputs[0], inputs[1], grad)?;
            let mut out = vec![dx, dw];
            if inputs.len() == 3 {
                out.push(db.reshape(inputs[2].shape().to_vec())?);
            }
            Ok(out)
        }
        OpKind::Gaussian { k, sigma, mode } => Ok(vec![tensor::gaussian_filter_adjoint(
            grad, *k, *sigma, *mode,
        )?]),
        OpKind::MinMax { axes, symmetric } => {
            let Saved::MinMax {
                lo_index,
                hi_index,
                range,
            } = saved
            else {
                return Err(Error::invalid("tape", "minmax lost its selection"));
            };
            let x = inputs[0];
            let axes = normalize_axes("minmax_normalize", axes, x.rank())?;
            let slice_shape = tensor::reduce_along(x, &axes, ReduceKind::Sum)?.values;
            let own = contiguous_strides(x.shape());
            let target = broadcast_strides(slice_shape.shape(), x.shape());
            let factor = if *symmetric { T::of(2.0) } else { T::one() };
            let mut gx = vec![zero; x.len()];
            let mut to_lo = vec![zero; range.len()];
            let mut to_hi = vec![zero; range.len()];
            walk2(x.shape(), &own, &target, |_, i, o| {
                let d = range[o];
                if d > zero {
                    let g = grad.data()[i] * factor / d;
                    let unit = (x.data()[i] - x.data()[lo_index[o]]) / d;
                    gx[i] += g;
                    to_lo[o] += g * (unit - T::one());
                    to_hi[o] -= g * unit;
                }
            });
            for o in 0..range.len() {
                gx[lo_index[o]] += to_lo[o];
                gx[hi_index[o]] += to_hi[o];
            }
            Ok(vec![Tensor::from_parts_unchecked(x.shape().to_vec(), gx)])
        }
        OpKind::BatchNorm { .. } => {
            let Saved::BatchNorm {
                normalized,
                inv_std,
                ..
            } = saved
            else {
                return Err(Error::invalid("tape", "batch norm lost its statistics"));
            };
            let (x, gamma) = (inputs[0], inputs[1]);
            let (n, c) = (x.shape()[0], x.shape()[1]);
            let spatial = x.len() / (n * c);
            let count = T::of((n * spatial) as f64);
            let mut dgamma = vec![zero; c];
            let mut dbeta = vec![zero; c];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * spatial;
                    for i in base..base + spatial {
                        dbeta[ch] += grad.data()[i];
                        dgamma[ch] += grad.data()[i] * normalized.data()[i];
                    }
                }
            }
            let mut dx = vec![zero; x.len()];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * spatial;
                    let scale = gamma.data()[ch] * inv_std[ch] / count;
                    for i in base..base + spatial {
                        dx[i] = scale
                            * (count * grad.data()[i]
                                - dbeta[ch]
                                - normalized.data()[i] * dgamma[ch]);
                    }
                }
            }
            Ok(vec![
                Tensor::from_parts_unchecked(x.shape().to_vec(), dx),
                Tensor::from_parts_unchecked(inputs[1].shape().to_vec(), dgamma),
                Tensor::from_parts_unchecked(inputs[2].shape().to_vec(), dbeta),
            ])
        }
        OpKind::CrossEntropy { labels } => {
            let Saved::Probs(probs) = saved else {
                return Err(Error::invalid("tape", "cross entropy lost its probabilities"));
            };
            let k = probs.shape()[1];
            let scale = grad.data()[0] / T::of(labels.len() as f64);
            let mut g = probs.data().to_vec();
            for (b, &label) in labels.iter().enumerate() {
                g[b * k + label] -= T::one();
            }
            g.iter_mut().for_each(|v| *v *= scale);
            Ok(vec![Tensor::from_parts_unchecked(probs.shape().to_vec(), g)])
        }
        OpKind::Concat { axis } => {
            let mut start = 0;
            inputs
                .iter()
                .map(|t| {
                    let len = t.shape()[*axis];
                    let piece = narrow_forward(grad, *axis, start, len);
                    start += len;
                    piece
                })
                .collect()
        }
        OpKind::Narrow { axis, start, len } => {
            let x = inputs[0];
            let (outer, extent, inner) = split_at_axis(x.shape(), *axis);
            let mut data = vec![zero; x.len()];
            for o in 0..outer {
                let dst = (o * extent + start) * inner;
                let src = o * len * inner;
                data[dst..dst + len * inner]
                    .copy_from_slice(&grad.data()[src..src + len * inner]);
            }
            Ok(vec![Tensor::from_parts_unchecked(x.shape().to_vec(), data)])
        }
    }
}
