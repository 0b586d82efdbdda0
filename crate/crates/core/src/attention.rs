//! The collaborative channel/spatial attention block.
//!
//! Both modules pool their input three ways (average, max, entropy) and
//! weight the pooled results with interior colla-factors. The channel module
//! passes every descriptor through one shared two-layer MLP; the spatial
//! module negates the average map and runs the weighted sum through a 7×7
//! convolution. Exterior colla-factors, softmax-normalized on every forward,
//! balance the two modules:
//!
//! ```text
//! (w_c, w_s)  = softmax(C_w, S_w)
//! refined     = F ⊙ σ(w_c · C'_A) + F ⊙ σ(w_s · S'_A)
//! ```
//!
//! All colla-factors start at zero, so a fresh block returns its input
//! unchanged: both gates evaluate to `σ(0) = 0.5`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::pooling::{
    pool_channel_var, pool_spatial_var, ChannelDescriptor, PoolConfig, PoolMethod,
    SpatialDescriptor,
};
use crate::tensor::{Element, Padding, Stride, Tensor};

pub const SPATIAL_KERNEL: usize = 7;

/// How the two gates are combined with the exterior weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fusion {
    /// One sigmoid per branch, applied after scaling by the exterior weight.
    #[default]
    Canonical,
    /// Sigmoid first, then a weighted sum of the two gates multiplies `F`.
    Pseudocode,
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Canonical => "canonical",
            Fusion::Pseudocode => "pseudocode",
        })
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Fusion::Canonical),
            "pseudocode" => Ok(Fusion::Pseudocode),
            other => Err(Error::invalid(
                "fusion",
                format!("expected `canonical` or `pseudocode`, got `{other}`"),
            )),
        }
    }
}

/// Which attention arrangement a block uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationMode {
    ChannelOnly,
    SpatialOnly,
    ChannelThenSpatial,
    SpatialThenChannel,
    FullCat,
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [
        AblationMode::ChannelOnly,
        AblationMode::SpatialOnly,
        AblationMode::ChannelThenSpatial,
        AblationMode::SpatialThenChannel,
        AblationMode::FullCat,
    ];

    pub fn uses_channel(self) -> bool {
        self != AblationMode::SpatialOnly
    }

    pub fn uses_spatial(self) -> bool {
        self != AblationMode::ChannelOnly
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationMode::ChannelOnly => "channel_only",
            AblationMode::SpatialOnly => "spatial_only",
            AblationMode::ChannelThenSpatial => "channel_then_spatial",
            AblationMode::SpatialThenChannel => "spatial_then_channel",
            AblationMode::FullCat => "full_cat",
        })
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::invalid("attention mode", format!("unknown mode `{s}`")))
    }
}

/// Hyperparameters of one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatConfig {
    pub channels: usize,
    pub reduction: usize,
    pub pool: PoolConfig,
    pub fusion: Fusion,
}

impl CatConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            reduction: 16,
            pool: PoolConfig::default(),
            fusion: Fusion::Canonical,
        }
    }

    /// Width of the shared MLP bottleneck: `max(1, round(C / r))`.
    pub fn hidden(&self) -> usize {
        ((self.channels as f64 / self.reduction.max(1) as f64).round() as usize).max(1)
    }
}

/// Learnable state of one block.
#[derive(Debug, Clone)]
pub struct CatParams<T: Element> {
    pub config: CatConfig,
    /// `C_α, C_β, C_γ`: weights of the average, max and entropy channel branches.
    pub channel_factors: [T; 3],
    /// `S_α, S_β, S_γ`: weights of the spatial branches.
    pub spatial_factors: [T; 3],
    /// `C_w, S_w`, normalized by softmax at read time.
    pub exterior: [T; 2],
    /// `hidden × C`
    pub mlp_reduce: Tensor<T>,
    /// `C × hidden`
    pub mlp_expand: Tensor<T>,
    /// `1×1×7×7`
    pub conv7: Tensor<T>,
    pub conv7_bias: T,
}

/// Zero-mean normal weights with variance `2 / fan_in`.
pub fn he_normal<T: Element, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape.to_vec(), |_| T::of(normal.sample(rng))).expect("valid shape")
}

impl<T: Element> CatParams<T> {
    /// Fresh parameters: every colla-factor and the conv bias are zero.
    pub fn init<R: Rng + ?Sized>(config: CatConfig, rng: &mut R) -> Self {
        let (c, hidden) = (config.channels, config.hidden());
        Self {
            config,
            channel_factors: [T::zero(); 3],
            spatial_factors: [T::zero(); 3],
            exterior: [T::zero(); 2],
            mlp_reduce: he_normal(&[hidden, c], c, rng),
            mlp_expand: he_normal(&[c, hidden], hidden, rng),
            conv7: he_normal(
                &[1, 1, SPATIAL_KERNEL, SPATIAL_KERNEL],
                SPATIAL_KERNEL * SPATIAL_KERNEL,
                rng,
            ),
            conv7_bias: T::zero(),
        }
    }

    /// Softmax-normalized exterior weights `(w_c, w_s)`.
    pub fn exterior_weights(&self) -> (T, T) {
        exterior_softmax(self.exterior[0], self.exterior[1])
    }

    /// Records every parameter on `tape`, as leaves when `learnable`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, learnable: bool) -> CatVars<'t, T> {
        let put = |t: Tensor<T>| if learnable { tape.leaf(t) } else { tape.constant(t) };
        let scalar = |v: T| put(Tensor::scalar(v));
        CatVars {
            channel_factors: self.channel_factors.map(scalar),
            spatial_factors: self.spatial_factors.map(scalar),
            exterior: self.exterior.map(scalar),
            mlp_reduce: put(self.mlp_reduce.clone()),
            mlp_expand: put(self.mlp_expand.clone()),
            conv7: put(self.conv7.clone()),
            conv7_bias: scalar(self.conv7_bias),
        }
    }
}

pub fn exterior_softmax<T: Element>(c_w: T, s_w: T) -> (T, T) {
    let m = c_w.max(s_w);
    let (a, b) = ((c_w - m).exp(), (s_w - m).exp());
    (a / (a + b), b / (a + b))
}

/// The block's parameters as recorded values.
#[derive(Debug, Clone, Copy)]
pub struct CatVars<'t, T: Element> {
    pub channel_factors: [Var<'t, T>; 3],
    pub spatial_factors: [Var<'t, T>; 3],
    pub exterior: [Var<'t, T>; 2],
    pub mlp_reduce: Var<'t, T>,
    pub mlp_expand: Var<'t, T>,
    pub conv7: Var<'t, T>,
    pub conv7_bias: Var<'t, T>,
}

/// The channel module's output together with its pooled inputs.
#[derive(Debug, Clone, Copy)]
pub struct ChannelBranch<'t, T: Element> {
    /// Pre-sigmoid score `C'_A`, `N×C×1×1`.
    pub score: Var<'t, T>,
    /// GAP, GMP and (when enabled) normalized GEP descriptors.
    pub pooled: [Option<Var<'t, T>>; 3],
}

/// The spatial module's output together with its pooled inputs.
#[derive(Debug, Clone, Copy)]
pub struct SpatialBranch<'t, T: Element> {
    /// Pre-sigmoid 7×7 conv output, `N×1×H×W`.
    pub score: Var<'t, T>,
    /// `S_Avg`, `S_Max` and (when enabled) normalized `S_Ent`.
    pub pooled: [Option<Var<'t, T>>; 3],
}

fn check_channels<T: Element>(x: &Var<'_, T>, cfg: &CatConfig) -> Result<(usize, usize)> {
    match *x.shape().as_slice() {
        [n, c, _, _] if c == cfg.channels => Ok((n, c)),
        [_, c, _, _] => Err(Error::shape(
            "attention",
            format!("input has {c} channels, block expects {}", cfg.channels),
        )),
        ref s => Err(Error::shape("attention", format!("expected N×C×H×W, got {s:?}"))),
    }
}

/// Channel module: shared-MLP outputs of the three channel descriptors,
/// combined with the interior factors. Returns the pre-sigmoid `C'_A`.
pub fn channel_branch<'t, T: Element>(
    x: Var<'t, T>,
    vars: &CatVars<'t, T>,
    cfg: &CatConfig,
    gep: bool,
) -> Result<ChannelBranch<'t, T>> {
    let (n, c) = check_channels(&x, cfg)?;
    let mlp = |d: Var<'t, T>| -> Result<Var<'t, T>> {
        d.reshape(&[n, c])?
            .linear(vars.mlp_reduce, None)?
            .relu()
            .linear(vars.mlp_expand, None)?
            .reshape(&[n, c, 1, 1])
    };
    let mut pooled = [None; 3];
    let mut score: Option<Var<'t, T>> = None;
    for (slot, method) in PoolMethod::ALL.into_iter().enumerate() {
        if method == PoolMethod::Gep && !gep {
            continue;
        }
        let d = pool_channel_var(x, method, &cfg.pool)?;
        pooled[slot] = Some(d);
        let term = mlp(d)?.mul(vars.channel_factors[slot])?;
        score = Some(match score {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    Ok(ChannelBranch {
        score: score.expect("average branch always present"),
        pooled,
    })
}

/// Spatial module: `Conv7×7(−S_Avg·S_α + S_Max·S_β + S_Ent·S_γ)`, without
/// the sigmoid.
pub fn spatial_branch<'t, T: Element>(
    x: Var<'t, T>,
    vars: &CatVars<'t, T>,
    cfg: &CatConfig,
    gep: bool,
) -> Result<SpatialBranch<'t, T>> {
    check_channels(&x, cfg)?;
    let avg = pool_spatial_var(x, PoolMethod::Gap, &cfg.pool)?;
    let max = pool_spatial_var(x, PoolMethod::Gmp, &cfg.pool)?;
    let mut combined = avg
        .neg()
        .mul(vars.spatial_factors[0])?
        .add(max.mul(vars.spatial_factors[1])?)?;
    let ent = if gep {
        let e = pool_spatial_var(x, PoolMethod::Gep, &cfg.pool)?;
        combined = combined.add(e.mul(vars.spatial_factors[2])?)?;
        Some(e)
    } else {
        None
    };
    let score = combined.conv2d(
        vars.conv7,
        Some(vars.conv7_bias),
        Padding::same(SPATIAL_KERNEL / 2),
        Stride::default(),
    )?;
    Ok(SpatialBranch {
        score,
        pooled: [Some(avg), Some(max), ent],
    })
}

/// Everything a CAT forward pass records.
#[derive(Debug, Clone, Copy)]
pub struct CatTrace<'t, T: Element> {
    pub refined: Var<'t, T>,
    /// Channel gate, `N×C×1×1`.
    pub channel_map: Var<'t, T>,
    /// Spatial gate, `N×1×H×W`.
    pub spatial_map: Var<'t, T>,
    /// `[w_c, w_s]`
    pub weights: Var<'t, T>,
    pub channel: ChannelBranch<'t, T>,
    pub spatial: SpatialBranch<'t, T>,
}

/// Full block on recorded values.
pub fn cat_forward_var<'t, T: Element>(
    x: Var<'t, T>,
    vars: &CatVars<'t, T>,
    cfg: &CatConfig,
    gep: bool,
) -> Result<CatTrace<'t, T>> {
    let channel = channel_branch(x, vars, cfg, gep)?;
    let spatial = spatial_branch(x, vars, cfg, gep)?;
    let weights = Var::concat(&vars.exterior, 0)?.softmax(&[0])?;
    let w_c = weights.narrow(0, 0, 1)?;
    let w_s = weights.narrow(0, 1, 1)?;
    let (channel_map, spatial_map, refined) = match cfg.fusion {
        Fusion::Canonical => {
            let cm = channel.score.mul(w_c)?.sigmoid();
            let sm = spatial.score.mul(w_s)?.sigmoid();
            let refined = x.mul(cm)?.add(x.mul(sm)?)?;
            (cm, sm, refined)
        }
        Fusion::Pseudocode => {
            let cm = channel.score.sigmoid();
            let sm = spatial.score.sigmoid();
            let gate = cm.mul(w_c)?.add(sm.mul(w_s)?)?;
            (cm, sm, x.mul(gate)?)
        }
    };
    Ok(CatTrace {
        refined,
        channel_map,
        spatial_map,
        weights,
        channel,
        spatial,
    })
}

/// Trace of any ablation arrangement. Maps are present for the modules the
/// arrangement uses; for sequential modes they belong to the module's own
/// input.
#[derive(Debug, Clone, Copy)]
pub struct AttentionTrace<'t, T: Element> {
    pub refined: Var<'t, T>,
    pub channel_map: Option<Var<'t, T>>,
    pub spatial_map: Option<Var<'t, T>>,
    pub spatial_pooled: Option<[Option<Var<'t, T>>; 3]>,
    pub weights: Option<Var<'t, T>>,
}

pub fn ablation_forward_var<'t, T: Element>(
    x: Var<'t, T>,
    vars: &CatVars<'t, T>,
    cfg: &CatConfig,
    mode: AblationMode,
    gep: bool,
) -> Result<AttentionTrace<'t, T>> {
    let channel_gate = |input: Var<'t, T>| -> Result<(Var<'t, T>, Var<'t, T>)> {
        let gate = channel_branch(input, vars, cfg, gep)?.score.sigmoid();
        Ok((input.mul(gate)?, gate))
    };
    let spatial_gate =
        |input: Var<'t, T>| -> Result<(Var<'t, T>, Var<'t, T>, [Option<Var<'t, T>>; 3])> {
            let branch = spatial_branch(input, vars, cfg, gep)?;
            let gate = branch.score.sigmoid();
            Ok((input.mul(gate)?, gate, branch.pooled))
        };
    let trace = match mode {
        AblationMode::ChannelOnly => {
            let (refined, cm) = channel_gate(x)?;
            AttentionTrace {
                refined,
                channel_map: Some(cm),
                spatial_map: None,
                spatial_pooled: None,
                weights: None,
            }
        }
        AblationMode::SpatialOnly => {
            let (refined, sm, pooled) = spatial_gate(x)?;
            AttentionTrace {
                refined,
                channel_map: None,
                spatial_map: Some(sm),
                spatial_pooled: Some(pooled),
                weights: None,
            }
        }
        AblationMode::ChannelThenSpatial => {
            let (mid, cm) = channel_gate(x)?;
            let (refined, sm, pooled) = spatial_gate(mid)?;
            AttentionTrace {
                refined,
                channel_map: Some(cm),
                spatial_map: Some(sm),
                spatial_pooled: Some(pooled),
                weights: None,
            }
        }
        AblationMode::SpatialThenChannel => {
            let (mid, sm, pooled) = spatial_gate(x)?;
            let (refined, cm) = channel_gate(mid)?;
            AttentionTrace {
                refined,
                channel_map: Some(cm),
                spatial_map: Some(sm),
                spatial_pooled: Some(pooled),
                weights: None,
            }
        }
        AblationMode::FullCat => {
            let t = cat_forward_var(x, vars, cfg, gep)?;
            AttentionTrace {
                refined: t.refined,
                channel_map: Some(t.channel_map),
                spatial_map: Some(t.spatial_map),
                spatial_pooled: Some(t.spatial.pooled),
                weights: Some(t.weights),
            }
        }
    };
    Ok(trace)
}

/// Pooled descriptors retained from a forward pass; the entropy slot is
/// empty when entropy pooling is disabled.
#[derive(Debug, Clone)]
pub struct RawDescriptors<T: Element> {
    pub channel: [Option<ChannelDescriptor<T>>; 3],
    pub spatial: [Option<SpatialDescriptor<T>>; 3],
}

#[derive(Debug, Clone)]
pub struct AttentionOutput<T: Element> {
    /// `F_A`, same shape as the input.
    pub refined: Tensor<T>,
    pub channel_map: Tensor<T>,
    pub spatial_map: Tensor<T>,
    pub raw_descriptors: RawDescriptors<T>,
}

fn snapshot<T: Element>(v: Var<'_, T>) -> Tensor<T> {
    v.value().as_ref().clone()
}

/// Pre-sigmoid channel score `C'_A` for a plain tensor.
pub fn channel_attention<T: Element>(input: &Tensor<T>, params: &CatParams<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let vars = params.bind(&tape, false);
    let branch = channel_branch(tape.constant(input.clone()), &vars, &params.config, true)?;
    Ok(snapshot(branch.score))
}

/// Pre-sigmoid spatial score for a plain tensor.
pub fn spatial_attention<T: Element>(input: &Tensor<T>, params: &CatParams<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let vars = params.bind(&tape, false);
    let branch = spatial_branch(tape.constant(input.clone()), &vars, &params.config, true)?;
    Ok(snapshot(branch.score))
}

/// Full block for a plain tensor.
pub fn cat_forward<T: Element>(input: &Tensor<T>, params: &CatParams<T>) -> Result<AttentionOutput<T>> {
    let tape = Tape::new();
    let vars = params.bind(&tape, false);
    let trace = cat_forward_var(tape.constant(input.clone()), &vars, &params.config, true)?;
    let channel = trace
        .channel
        .pooled
        .map(|d| d.map(|v| ChannelDescriptor::new(snapshot(v))).transpose());
    let spatial = trace
        .spatial
        .pooled
        .map(|d| d.map(|v| SpatialDescriptor::new(snapshot(v))).transpose());
    let [c0, c1, c2] = channel;
    let [s0, s1, s2] = spatial;
    Ok(AttentionOutput {
        refined: snapshot(trace.refined),
        channel_map: snapshot(trace.channel_map),
        spatial_map: snapshot(trace.spatial_map),
        raw_descriptors: RawDescriptors {
            channel: [c0?, c1?, c2?],
            spatial: [s0?, s1?, s2?],
        },
    })
}

/// Any ablation arrangement for a plain tensor.
pub fn ablation_variant<T: Element>(
    input: &Tensor<T>,
    params: &CatParams<T>,
    mode: AblationMode,
    gep_enabled: bool,
) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let vars = params.bind(&tape, false);
    let trace = ablation_forward_var(
        tape.constant(input.clone()),
        &vars,
        &params.config,
        mode,
        gep_enabled,
    )?;
    Ok(snapshot(trace.refined))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.5..1.5)).unwrap()
    }

    fn params(c: usize, seed: u64) -> CatParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CatParams::init(CatConfig::new(c), &mut rng)
    }

    #[test]
    fn hidden_width_rounds_with_floor_of_one() {
        assert_eq!(CatConfig::new(64).hidden(), 4);
        assert_eq!(CatConfig::new(8).hidden(), 1);
        assert_eq!(CatConfig::new(40).hidden(), 3);
    }

    #[test]
    fn zero_interior_factors_give_zero_scores() {
        let p = params(8, 1);
        let x = random(&[2, 8, 5, 5], 2);
        assert!(channel_attention(&x, &p).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(spatial_attention(&x, &p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fresh_block_is_identity() {
        let p = params(8, 3);
        let x = random(&[2, 8, 6, 6], 4);
        let out = cat_forward(&x, &p).unwrap();
        assert_eq!(out.refined, x);
        assert!(out.channel_map.data().iter().all(|&v| v == 0.5));
        assert_eq!(p.exterior_weights(), (0.5, 0.5));
    }

    #[test]
    fn isolated_average_branch_with_identity_mlp() {
        let mut cfg = CatConfig::new(4);
        cfg.reduction = 1;
        let mut p = params(4, 5);
        p.config = cfg;
        let eye = Tensor::from_fn([4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 }).unwrap();
        p.mlp_reduce = eye.clone();
        p.mlp_expand = eye;
        p.channel_factors = [1.0, 0.0, 0.0];
        // nonnegative input keeps the ReLU transparent
        let x = random(&[1, 4, 3, 3], 6).map(f64::abs);
        let score = channel_attention(&x, &p).unwrap();
        let gap = crate::pooling::pool_channel(&x, PoolMethod::Gap, &p.config.pool).unwrap();
        assert!(score.max_abs_diff(gap.values()).unwrap() < 1e-15);
    }

    #[test]
    fn negated_average_with_centered_identity_conv() {
        let mut p = params(4, 7);
        p.spatial_factors = [-1.0, 0.0, 0.0];
        p.conv7 = Tensor::from_fn([1, 1, 7, 7], |i| if i == 24 { 1.0 } else { 0.0 }).unwrap();
        let x = random(&[1, 4, 5, 5], 8);
        let score = spatial_attention(&x, &p).unwrap();
        let gap = crate::pooling::pool_spatial(&x, PoolMethod::Gap, &p.config.pool).unwrap();
        assert!(score.max_abs_diff(gap.values()).unwrap() < 1e-15);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let p = params(8, 9);
        let x = random(&[1, 4, 5, 5], 10);
        assert!(cat_forward(&x, &p).is_err());
    }

    #[test]
    fn gep_toggle_is_invisible_at_init() {
        let p = params(6, 11);
        let x = random(&[1, 6, 4, 4], 12);
        let a = ablation_variant(&x, &p, AblationMode::FullCat, true).unwrap();
        let b = ablation_variant(&x, &p, AblationMode::FullCat, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn saturated_sequential_gates_pass_input() {
        let mut p = params(4, 13);
        p.conv7 = Tensor::zeros([1, 1, 7, 7]).unwrap();
        p.conv7_bias = 60.0;
        p.mlp_reduce = Tensor::full([1, 4], 1.0).unwrap();
        p.mlp_expand = Tensor::full([4, 1], 1.0).unwrap();
        p.channel_factors = [100.0, 100.0, 0.0];
        let x = random(&[1, 4, 5, 5], 14).map(|v| v.abs() + 0.5);
        let y = ablation_variant(&x, &p, AblationMode::ChannelThenSpatial, true).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-9);
    }

    #[test]
    fn spatial_only_recomputes_compositionally() {
        let mut p = params(4, 15);
        p.spatial_factors = [0.3, -0.7, 1.1];
        let x = random(&[2, 4, 6, 6], 16);
        let y = ablation_variant(&x, &p, AblationMode::SpatialOnly, true).unwrap();
        let gate = spatial_attention(&x, &p).unwrap().sigmoid();
        assert!(y.max_abs_diff(&x.mul(&gate).unwrap()).unwrap() < 1e-15);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in AblationMode::ALL {
            assert_eq!(m.to_string().parse::<AblationMode>().unwrap(), m);
        }
        assert!("both".parse::<AblationMode>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn fresh_block_is_identity_for_any_shape(
            c in 1usize..24, h in 1usize..9, w in 1usize..9, n in 1usize..3, seed in 0u64..500,
        ) {
            let x = random(&[n, c, h, w], seed).map(|v| v * 4.0);
            let out = cat_forward(&x, &params(c, seed)).unwrap();
            proptest::prop_assert_eq!(out.refined.data(), x.data());
        }

        #[test]
        fn exterior_weights_are_a_distribution(c_w in -700.0f64..700.0, s_w in -700.0f64..700.0) {
            let (a, b) = exterior_softmax(c_w, s_w);
            proptest::prop_assert!((a + b - 1.0).abs() < 1e-12);
            proptest::prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
            proptest::prop_assert_eq!(a >= b, c_w >= s_w);
        }

        #[test]
        fn attention_maps_are_gates(c in 2usize..12, seed in 0u64..500) {
            let mut p = params(c, seed);
            p.channel_factors = [0.7, -1.3, 0.4];
            p.spatial_factors = [1.1, 0.2, -0.9];
            p.exterior = [0.5, -0.25];
            let out = cat_forward(&random(&[1, c, 5, 4], seed + 1), &p).unwrap();
            for v in out.channel_map.data().iter().chain(out.spatial_map.data()) {
                proptest::prop_assert!(*v > 0.0 && *v < 1.0);
            }
        }
    }
}
