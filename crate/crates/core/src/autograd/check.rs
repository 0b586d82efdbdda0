//! Central finite-difference oracle for verifying recorded gradients.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// `|a − b| / max(1e-8, |a| + |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Outcome of comparing analytic and numeric gradients for one tensor.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

fn to_f64<T: Element>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Perturbs every element of `point` by `±h` and compares
/// `(f(x+h) − f(x−h)) / 2h` with `analytic`.
///
/// `f` is evaluated twice at the unperturbed point first; differing results
/// are reported as [`Error::NonDeterministic`].
pub fn finite_diff_check<T, F>(
    mut f: F,
    point: &Tensor<T>,
    analytic: &Tensor<T>,
    h: f64,
) -> Result<GradCheck>
where
    T: Element,
    F: FnMut(&Tensor<T>) -> Result<T>,
{
    if analytic.shape() != point.shape() {
        return Err(Error::shape(
            "finite_diff_check",
            format!("gradient {:?} vs point {:?}", analytic.shape(), point.shape()),
        ));
    }
    let first = to_f64(f(point)?);
    let second = to_f64(f(point)?);
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let mut probe = point.clone();
    let mut numeric = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + T::of(h);
        let plus = to_f64(f(&probe)?);
        probe.data_mut()[i] = original - T::of(h);
        let minus = to_f64(f(&probe)?);
        probe.data_mut()[i] = original;
        numeric.push((plus - minus) / (2.0 * h));
    }
    let analytic: Vec<f64> = analytic.data().iter().map(|&a| to_f64(a)).collect();
    let (worst_index, max_rel_err) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheck {
        max_rel_err,
        worst_index,
        analytic,
        numeric,
    })
}

/// Checks the gradient of a scalar function of several tensors.
///
/// `build` receives the tape and one var per entry of `params` and returns a
/// single-element root. Analytic gradients come from one backward pass with
/// every parameter as a leaf; each parameter is then probed with
/// [`finite_diff_check`] while the others are held constant.
pub fn gradient_check<T, B>(params: &[Tensor<T>], h: f64, build: B) -> Result<Vec<GradCheck>>
where
    T: Element,
    B: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    let analytic: Vec<Tensor<T>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_, T>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = build(&tape, &vars)?;
        let grads = tape.backward(root)?;
        vars.iter().map(|&v| grads.wrt_or_zeros(v)).collect()
    };
    params
        .iter()
        .enumerate()
        .map(|(index, param)| {
            let eval = |x: &Tensor<T>| -> Result<T> {
                let tape = Tape::new();
                let vars: Vec<Var<'_, T>> = params
                    .iter()
                    .enumerate()
                    .map(|(j, p)| {
                        if j == index {
                            tape.constant(x.clone())
                        } else {
                            tape.constant(p.clone())
                        }
                    })
                    .collect();
                let root = build(&tape, &vars)?;
                let value = root.value();
                value.item().ok_or(Error::NonScalarRoot {
                    shape: value.shape().to_vec(),
                })
            };
            finite_diff_check(eval, param, &analytic[index], h)
        })
        .collect()
}
