//! Per-channel Gaussian low-pass filtering with reflect padding.

use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// `k×1` filter along the height axis only.
    Vertical,
    /// Separable `k×k` filter.
    Full,
}

/// Normalized 1-D Gaussian taps, `exp(-d²/2σ²)` for `d = -k/2 ..= k/2`.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Result<Vec<f64>> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::invalid(
            "gaussian_filter",
            format!("kernel size must be odd and positive, got {k}"),
        ));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(
            "gaussian_filter",
            format!("sigma must be positive, got {sigma}"),
        ));
    }
    let r = (k / 2) as f64;
    let raw: Vec<f64> = (0..k)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Mirror index without repeating the edge sample (`-1 → 1`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Axis {
    H,
    W,
}

/// One pass of a 1-D filter along `axis` of every `H×W` plane. With
/// `adjoint` set, scatters instead of gathers (the transpose operator).
fn filter_pass<T: Element>(
    src: &[T],
    planes: usize,
    h: usize,
    w: usize,
    taps: &[T],
    axis: Axis,
    adjoint: bool,
) -> Vec<T> {
    let r = (taps.len() / 2) as isize;
    let mut dst = vec![T::zero(); src.len()];
    let plane = h * w;
    let len = if axis == Axis::H { h } else { w };
    // reflected source coordinate for every (output coordinate, tap)
    let table: Vec<usize> = (0..len)
        .flat_map(|i| (0..taps.len()).map(move |t| reflect(i as isize + t as isize - r, len)))
        .collect();
    let k = taps.len();
    for p in 0..planes {
        let s = &src[p * plane..(p + 1) * plane];
        let d = &mut dst[p * plane..(p + 1) * plane];
        match axis {
            Axis::H => {
                for y in 0..h {
                    for (t, &tap) in taps.iter().enumerate() {
                        let sy = table[y * k + t];
                        if adjoint {
                            let (from, to) = (&s[y * w..(y + 1) * w], &mut d[sy * w..(sy + 1) * w]);
                            to.iter_mut().zip(from).for_each(|(o, &v)| *o += tap * v);
                        } else {
                            let (from, to) = (&s[sy * w..(sy + 1) * w], &mut d[y * w..(y + 1) * w]);
                            to.iter_mut().zip(from).for_each(|(o, &v)| *o += tap * v);
                        }
                    }
                }
            }
            Axis::W => {
                for y in 0..h {
                    let (srow, drow) = (&s[y * w..(y + 1) * w], &mut d[y * w..(y + 1) * w]);
                    for x in 0..w {
                        let idx = &table[x * k..(x + 1) * k];
                        if adjoint {
                            for (&sx, &tap) in idx.iter().zip(taps) {
                                drow[sx] += tap * srow[x];
                            }
                        } else {
                            let mut acc = drow[x];
                            for (&sx, &tap) in idx.iter().zip(taps) {
                                acc += tap * srow[sx];
                            }
                            drow[x] = acc;
                        }
                    }
                }
            }
        }
    }
    dst
}

fn run<T: Element>(
    input: &Tensor<T>,
    k: usize,
    sigma: f64,
    mode: FilterMode,
    adjoint: bool,
) -> Result<Tensor<T>> {
    let taps: Vec<T> = gaussian_kernel(k, sigma)?.into_iter().map(T::of).collect();
    let (n, c, h, w) = input.dims4()?;
    if k == 1 {
        return Ok(input.clone());
    }
    let planes = n * c;
    let data = match (mode, adjoint) {
        (FilterMode::Vertical, _) => filter_pass(input.data(), planes, h, w, &taps, Axis::H, adjoint),
        (FilterMode::Full, false) => {
            let v = filter_pass(input.data(), planes, h, w, &taps, Axis::H, false);
            filter_pass(&v, planes, h, w, &taps, Axis::W, false)
        }
        (FilterMode::Full, true) => {
            let v = filter_pass(input.data(), planes, h, w, &taps, Axis::W, true);
            filter_pass(&v, planes, h, w, &taps, Axis::H, true)
        }
    };
    Ok(Tensor::from_parts_unchecked(input.shape().to_vec(), data))
}

/// Gaussian low-pass filter applied independently to every channel.
pub fn gaussian_filter<T: Element>(
    input: &Tensor<T>,
    k: usize,
    sigma: f64,
    mode: FilterMode,
) -> Result<Tensor<T>> {
    run(input, k, sigma, mode, false)
}

/// Transpose of [`gaussian_filter`]; maps output gradients to input gradients.
pub fn gaussian_filter_adjoint<T: Element>(
    grad: &Tensor<T>,
    k: usize,
    sigma: f64,
    mode: FilterMode,
) -> Result<Tensor<T>> {
    run(grad, k, sigma, mode, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_tap_kernel_values() {
        let k = gaussian_kernel(5, 1.0).unwrap();
        let expected = [0.05449, 0.24420, 0.40262, 0.24420, 0.05449];
        for (a, b) in k.iter().zip(expected) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_even_sizes() {
        let x = Tensor::<f32>::zeros([1, 1, 4, 4]).unwrap();
        assert!(gaussian_filter(&x, 4, 1.0, FilterMode::Full).is_err());
        assert!(gaussian_filter(&x, 0, 1.0, FilterMode::Full).is_err());
    }

    #[test]
    fn unit_kernel_and_constants_pass_through() {
        let x = Tensor::<f64>::from_fn([1, 2, 5, 6], |i| i as f64).unwrap();
        assert_eq!(gaussian_filter(&x, 1, 1.0, FilterMode::Full).unwrap(), x);
        let c = Tensor::<f64>::full([1, 2, 5, 6], 3.25).unwrap();
        for mode in [FilterMode::Vertical, FilterMode::Full] {
            let y = gaussian_filter(&c, 5, 1.0, mode).unwrap();
            assert!(y.max_abs_diff(&c).unwrap() < 1e-12);
        }
    }

    #[test]
    fn reflect_handles_tiny_extents() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-3, 2), 1);
        assert_eq!(reflect(7, 1), 0);
    }

    #[test]
    fn adjoint_satisfies_inner_product_identity() {
        let x = Tensor::<f64>::from_fn([1, 2, 6, 5], |i| ((i * 7919) % 13) as f64 - 6.0).unwrap();
        let y = Tensor::<f64>::from_fn([1, 2, 6, 5], |i| ((i * 104729) % 11) as f64 - 5.0).unwrap();
        for mode in [FilterMode::Vertical, FilterMode::Full] {
            let ax = gaussian_filter(&x, 5, 1.0, mode).unwrap();
            let aty = gaussian_filter_adjoint(&y, 5, 1.0, mode).unwrap();
            let lhs: f64 = ax.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
