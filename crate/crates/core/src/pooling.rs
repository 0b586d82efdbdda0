//! Global average, maximum and entropy pooling in channel and spatial form.
//!
//! Channel pooling summarizes each feature map to one value (`N×C×1×1`);
//! spatial pooling summarizes the channel vector at each pixel (`N×1×H×W`).
//! Entropy pooling takes the Shannon entropy of a softmax over the pooled
//! axes and min-max normalizes the result per sample.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, FilterMode, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolMethod {
    Gap,
    Gmp,
    Gep,
}

impl PoolMethod {
    pub const ALL: [PoolMethod; 3] = [PoolMethod::Gap, PoolMethod::Gmp, PoolMethod::Gep];
}

/// Target interval of the entropy min-max normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GepRange {
    /// `(x − min)/(max − min)` in `[0, 1]`.
    #[default]
    Unit,
    /// The unit result remapped through `2x − 1`.
    Symmetric,
}

impl fmt::Display for GepRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GepRange::Unit => "unit",
            GepRange::Symmetric => "symmetric",
        })
    }
}

impl FromStr for GepRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(GepRange::Unit),
            "symmetric" => Ok(GepRange::Symmetric),
            other => Err(Error::invalid(
                "gep_range",
                format!("expected `unit` or `symmetric`, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolConfig {
    /// Gaussian prefilter size ahead of max pooling; 1 disables it.
    pub gaussian_k: usize,
    pub gaussian_sigma: f64,
    pub gep_range: GepRange,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            gaussian_k: 5,
            gaussian_sigma: 1.0,
            gep_range: GepRange::Unit,
        }
    }
}

const SPATIAL_AXES: [usize; 2] = [2, 3];
const CHANNEL_AXIS: [usize; 1] = [1];

fn require_nchw<T: Element>(x: &Var<'_, T>, op: &'static str) -> Result<()> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(Error::shape(op, format!("expected N×C×H×W, got {shape:?}")));
    }
    Ok(())
}

/// `−Σ p log p` with `p = softmax(x)` over `axes`; the axes are kept.
fn entropy_over<'t, T: Element>(x: Var<'t, T>, axes: &[usize]) -> Result<Var<'t, T>> {
    let p = x.softmax(axes)?;
    Ok(p.mul(p.log_clamped())?.sum(axes)?.neg())
}

/// Raw channel entropy: per feature map, the entropy of the softmax over its
/// `H·W` locations. Bounded by `[0, ln(H·W)]`.
pub fn channel_entropy<'t, T: Element>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    require_nchw(&x, "channel_entropy")?;
    entropy_over(x, &SPATIAL_AXES)
}

/// Raw spatial entropy: per pixel, the entropy of the softmax over the `C`
/// channels. Bounded by `[0, ln C]`.
pub fn spatial_entropy<'t, T: Element>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    require_nchw(&x, "spatial_entropy")?;
    entropy_over(x, &CHANNEL_AXIS)
}

/// Channel pooling on a recorded value; returns `N×C×1×1`.
pub fn pool_channel_var<'t, T: Element>(
    x: Var<'t, T>,
    method: PoolMethod,
    cfg: &PoolConfig,
) -> Result<Var<'t, T>> {
    require_nchw(&x, "pool_channel")?;
    match method {
        PoolMethod::Gap => x.mean(&SPATIAL_AXES),
        PoolMethod::Gmp => {
            let filtered = if cfg.gaussian_k == 1 {
                x
            } else {
                x.gaussian_filter(cfg.gaussian_k, cfg.gaussian_sigma, FilterMode::Vertical)?
            };
            filtered.max(&SPATIAL_AXES)
        }
        PoolMethod::Gep => channel_entropy(x)?
            .minmax_normalize(&CHANNEL_AXIS, cfg.gep_range == GepRange::Symmetric),
    }
}

/// Spatial pooling on a recorded value; returns `N×1×H×W`.
pub fn pool_spatial_var<'t, T: Element>(
    x: Var<'t, T>,
    method: PoolMethod,
    cfg: &PoolConfig,
) -> Result<Var<'t, T>> {
    require_nchw(&x, "pool_spatial")?;
    match method {
        PoolMethod::Gap => x.mean(&CHANNEL_AXIS),
        PoolMethod::Gmp => {
            let filtered = if cfg.gaussian_k == 1 {
                x
            } else {
                x.gaussian_filter(cfg.gaussian_k, cfg.gaussian_sigma, FilterMode::Full)?
            };
            filtered.max(&CHANNEL_AXIS)
        }
        PoolMethod::Gep => spatial_entropy(x)?
            .minmax_normalize(&SPATIAL_AXES, cfg.gep_range == GepRange::Symmetric),
    }
}

/// Per-sample channel summary, `N×C×1×1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDescriptor<T: Element>(Tensor<T>);

/// Per-sample spatial summary, `N×1×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDescriptor<T: Element>(Tensor<T>);

impl<T: Element> ChannelDescriptor<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        match values.shape() {
            [_, _, 1, 1] if values.all_finite() => Ok(Self(values)),
            s => Err(Error::shape(
                "ChannelDescriptor",
                format!("expected finite N×C×1×1, got {s:?}"),
            )),
        }
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_inner(self) -> Tensor<T> {
        self.0
    }
}

impl<T: Element> SpatialDescriptor<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        match values.shape() {
            [_, 1, _, _] if values.all_finite() => Ok(Self(values)),
            s => Err(Error::shape(
                "SpatialDescriptor",
                format!("expected finite N×1×H×W, got {s:?}"),
            )),
        }
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_inner(self) -> Tensor<T> {
        self.0
    }
}

pub fn pool_channel<T: Element>(
    input: &Tensor<T>,
    method: PoolMethod,
    cfg: &PoolConfig,
) -> Result<ChannelDescriptor<T>> {
    let tape = Tape::new();
    let out = pool_channel_var(tape.constant(input.clone()), method, cfg)?;
    ChannelDescriptor::new(out.value().as_ref().clone())
}

pub fn pool_spatial<T: Element>(
    input: &Tensor<T>,
    method: PoolMethod,
    cfg: &PoolConfig,
) -> Result<SpatialDescriptor<T>> {
    let tape = Tape::new();
    let out = pool_spatial_var(tape.constant(input.clone()), method, cfg)?;
    SpatialDescriptor::new(out.value().as_ref().clone())
}

/// Per-slice min-max scaling over `slice_axes`. Constant slices map to zero.
pub fn minmax_normalize<T: Element>(
    input: &Tensor<T>,
    slice_axes: &[usize],
    range: GepRange,
) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let out = tape
        .constant(input.clone())
        .minmax_normalize(slice_axes, range == GepRange::Symmetric)?;
    Ok(out.value().as_ref().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gaussian_kernel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-2.0..2.0)).unwrap()
    }

    fn raw_channel_entropy(x: &Tensor<f64>) -> Tensor<f64> {
        let tape = Tape::new();
        channel_entropy(tape.constant(x.clone())).unwrap().value().as_ref().clone()
    }

    fn raw_spatial_entropy(x: &Tensor<f64>) -> Tensor<f64> {
        let tape = Tape::new();
        spatial_entropy(tape.constant(x.clone())).unwrap().value().as_ref().clone()
    }

    /// Entropy of softmax(logits), one scalar loop, no shared code.
    fn entropy_oracle(logits: &[f64]) -> f64 {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        -logits
            .iter()
            .map(|v| {
                let p = (v - max).exp() / z;
                p * p.max(1e-12).ln()
            })
            .sum::<f64>()
    }

    #[test]
    fn uniform_channel_has_log_count_entropy() {
        let x = Tensor::<f64>::full([1, 1, 4, 4], 0.7).unwrap();
        let e = raw_channel_entropy(&x);
        assert!((e.data()[0] - 16f64.ln()).abs() < 1e-12);
        assert!((e.data()[0] - 2.7726).abs() < 1e-4);
    }

    #[test]
    fn near_one_hot_channel_has_zero_entropy() {
        let mut x = Tensor::<f64>::zeros([1, 1, 4, 4]).unwrap();
        x.data_mut()[5] = 50.0;
        assert!(raw_channel_entropy(&x).data()[0] < 1e-10);
    }

    #[test]
    fn single_channel_spatial_entropy_is_zero() {
        let x = random([1, 1, 3, 5], 3);
        assert!(raw_spatial_entropy(&x).data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn spatial_gap_of_channel_index_planes() {
        let x = Tensor::<f64>::from_fn([1, 4, 3, 3], |i| (i / 9) as f64).unwrap();
        let d = pool_spatial(&x, PoolMethod::Gap, &PoolConfig::default()).unwrap();
        assert!(d.values().data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn spatial_entropy_matches_loop_oracle() {
        let x = random([1, 8, 5, 5], 11);
        let e = raw_spatial_entropy(&x);
        for h in 0..5 {
            for w in 0..5 {
                let logits: Vec<f64> = (0..8).map(|c| x.at(&[0, c, h, w])).collect();
                let got = e.at(&[0, 0, h, w]);
                assert!((got - entropy_oracle(&logits)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn channel_entropy_matches_loop_oracle() {
        let x = random([2, 3, 4, 6], 12);
        let e = raw_channel_entropy(&x);
        for n in 0..2 {
            for c in 0..3 {
                let mut logits = Vec::new();
                for h in 0..4 {
                    for w in 0..6 {
                        logits.push(x.at(&[n, c, h, w]));
                    }
                }
                assert!((e.at(&[n, c, 0, 0]) - entropy_oracle(&logits)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gmp_of_centered_impulse_matches_filter_then_max() {
        let mut x = Tensor::<f64>::zeros([1, 1, 9, 9]).unwrap();
        x.data_mut()[4 * 9 + 4] = 1.0;
        let cfg = PoolConfig::default();
        let taps = gaussian_kernel(5, 1.0).unwrap();
        // vertical filter of an impulse: the peak tap survives at the center
        let d = pool_channel(&x, PoolMethod::Gmp, &cfg).unwrap();
        let mut best = f64::NEG_INFINITY;
        for y in 0..9i32 {
            for xx in 0..9i32 {
                let mut acc = 0.0;
                for (t, tap) in taps.iter().enumerate() {
                    let sy = (y + t as i32 - 2).clamp(0, 8) as usize;
                    acc += tap * x.at(&[0, 0, sy, xx as usize]);
                }
                best = best.max(acc);
            }
        }
        assert_eq!(d.values().data()[0], best);
        assert!((best - 0.40262).abs() < 1e-5);

        // 2-D filter: peak is the outer product center
        let s = pool_spatial(&x, PoolMethod::Gmp, &cfg).unwrap();
        let center = s.values().at(&[0, 0, 4, 4]);
        assert!((center - taps[2] * taps[2]).abs() < 1e-15);
    }

    #[test]
    fn unfiltered_gmp_is_plain_max() {
        let x = random([2, 3, 5, 4], 5);
        let cfg = PoolConfig {
            gaussian_k: 1,
            ..PoolConfig::default()
        };
        let d = pool_channel(&x, PoolMethod::Gmp, &cfg).unwrap();
        let plain = crate::tensor::reduce_along(&x, &[2, 3], crate::tensor::ReduceKind::Max).unwrap();
        assert_eq!(d.values(), &plain.values);
    }

    #[test]
    fn minmax_examples() {
        let x = Tensor::<f64>::from_vec([3], vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(minmax_normalize(&x, &[0], GepRange::Unit).unwrap().data(), &[0.0, 0.5, 1.0]);
        assert_eq!(
            minmax_normalize(&x, &[0], GepRange::Symmetric).unwrap().data(),
            &[-1.0, 0.0, 1.0]
        );
        let c = Tensor::<f64>::full([3], 5.0).unwrap();
        assert_eq!(minmax_normalize(&c, &[0], GepRange::Unit).unwrap().data(), &[0.0; 3]);
        let r = random([1, 1, 10, 10], 8);
        let n = minmax_normalize(&r, &[2, 3], GepRange::Unit).unwrap();
        let min = n.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let max = n.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((min, max), (0.0, 1.0));
    }

    #[test]
    fn gep_descriptor_is_normalized_per_sample() {
        let x = random([2, 6, 4, 4], 21);
        let d = pool_channel(&x, PoolMethod::Gep, &PoolConfig::default()).unwrap();
        for n in 0..2 {
            let slice: Vec<f64> = (0..6).map(|c| d.values().at(&[n, c, 0, 0])).collect();
            let min = slice.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((min, max), (0.0, 1.0));
        }
        let s = pool_spatial(&x, PoolMethod::Gep, &PoolConfig::default()).unwrap();
        assert_eq!(s.values().shape(), &[2, 1, 4, 4]);
    }

    #[test]
    fn descriptors_validate_shape() {
        assert!(ChannelDescriptor::new(Tensor::<f64>::zeros([1, 3, 2, 1]).unwrap()).is_err());
        assert!(SpatialDescriptor::new(Tensor::<f64>::zeros([1, 2, 2, 2]).unwrap()).is_err());
    }

    #[test]
    fn pooling_rejects_non_nchw() {
        let x = Tensor::<f64>::zeros([3, 4]).unwrap();
        assert!(pool_channel(&x, PoolMethod::Gap, &PoolConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn gep_is_shift_invariant(seed in 0u64..1000, shift in -50.0f64..50.0) {
            let x = random([1, 4, 3, 3], seed);
            let shifted = x.map(|v| v + shift);
            let a = raw_channel_entropy(&x);
            let b = raw_channel_entropy(&shifted);
            prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-7);
            let a = raw_spatial_entropy(&x);
            let b = raw_spatial_entropy(&shifted);
            prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-7);
        }

        #[test]
        fn entropy_stays_within_bounds(seed in 0u64..1000) {
            let x = random([1, 5, 3, 4], seed).map(|v| v * 10.0);
            let c = raw_channel_entropy(&x);
            prop_assert!(c.data().iter().all(|&v| (-1e-12..=12f64.ln() + 1e-12).contains(&v)));
            let s = raw_spatial_entropy(&x);
            prop_assert!(s.data().iter().all(|&v| (-1e-12..=5f64.ln() + 1e-12).contains(&v)));
        }

        #[test]
        fn minmax_is_idempotent(seed in 0u64..1000) {
            let x = random([1, 1, 4, 25], seed);
            let once = minmax_normalize(&x, &[2, 3], GepRange::Unit).unwrap();
            let twice = minmax_normalize(&once, &[2, 3], GepRange::Unit).unwrap();
            prop_assert!(once.max_abs_diff(&twice).unwrap() < 1e-7);
        }
    }
}
