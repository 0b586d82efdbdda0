//! A small CIFAR-style residual network with an attention block on the
//! residual branch of every block.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::Rng;

use crate::attention::{
    ablation_forward_var, he_normal, AblationMode, AttentionTrace, CatConfig, CatVars,
    SPATIAL_KERNEL,
};
use crate::autograd::{BatchStats, Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Padding, Stride, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Whether the interior colla-factors are trained or held at fixed values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interior {
    Learned,
    Fixed { channel: [f64; 3], spatial: [f64; 3] },
}

impl Interior {
    pub const ONES: Interior = Interior::Fixed {
        channel: [1.0; 3],
        spatial: [1.0; 3],
    };
}

/// One attention arrangement as inserted into every residual block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionArm {
    pub mode: AblationMode,
    pub gep: bool,
    pub interior: Interior,
}

impl AttentionArm {
    /// The full block with every colla-factor learned.
    pub const CAT: AttentionArm = AttentionArm {
        mode: AblationMode::FullCat,
        gep: true,
        interior: Interior::Learned,
    };

    /// Squeeze-and-excitation style gate: channel branch on average pooling only.
    pub const SE: AttentionArm = AttentionArm {
        mode: AblationMode::ChannelOnly,
        gep: false,
        interior: Interior::Fixed {
            channel: [1.0, 0.0, 0.0],
            spatial: [0.0; 3],
        },
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Attention {
    None,
    Arm(AttentionArm),
}

impl Attention {
    pub fn arm(&self) -> Option<&AttentionArm> {
        match self {
            Attention::None => None,
            Attention::Arm(a) => Some(a),
        }
    }
}

/// Textual names accepted for the attention setting.
///
/// | name | arrangement |
/// |---|---|
/// | `none` | no attention |
/// | `se` | channel gate on average pooling, fixed weights |
/// | `cat` | full block, all colla-factors learned |
/// | `cat_exterior` | full block, interior factors fixed at 1 |
/// | `channel_only`, `spatial_only`, `channel_then_spatial`, `spatial_then_channel` | single or sequential gates with interior factors fixed at 1 |
///
/// The GEP switch is a separate setting.
impl Attention {
    pub fn parse(name: &str, gep: bool) -> Result<Self> {
        let fixed = |mode| {
            Attention::Arm(AttentionArm {
                mode,
                gep,
                interior: Interior::ONES,
            })
        };
        Ok(match name {
            "none" => Attention::None,
            "se" => Attention::Arm(AttentionArm::SE),
            "cat" => Attention::Arm(AttentionArm { gep, ..AttentionArm::CAT }),
            "cat_exterior" => fixed(AblationMode::FullCat),
            other => match other.parse::<AblationMode>() {
                Ok(AblationMode::FullCat) | Err(_) => {
                    return Err(Error::invalid(
                        "attention",
                        format!(
                            "unknown attention `{other}` (expected none, se, cat, cat_exterior, \
                             channel_only, spatial_only, channel_then_spatial, spatial_then_channel)"
                        ),
                    ))
                }
                Ok(mode) => fixed(mode),
            },
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Attention::None => "none",
            Attention::Arm(arm) if *arm == AttentionArm::SE => "se",
            Attention::Arm(arm) => match (arm.mode, arm.interior) {
                (AblationMode::FullCat, Interior::Learned) => "cat",
                (AblationMode::FullCat, _) => "cat_exterior",
                (AblationMode::ChannelOnly, _) => "channel_only",
                (AblationMode::SpatialOnly, _) => "spatial_only",
                (AblationMode::ChannelThenSpatial, _) => "channel_then_spatial",
                (AblationMode::SpatialThenChannel, _) => "spatial_then_channel",
            },
        }
    }
}

impl fmt::Display for Attention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub image_size: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub num_classes: usize,
    pub attention: Attention,
    /// Template for every block's attention; `channels` is overwritten per stage.
    pub cat: CatConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            in_channels: 3,
            image_size: 32,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: 3,
            num_classes: 10,
            attention: Attention::Arm(AttentionArm::CAT),
            cat: CatConfig::new(16),
        }
    }
}

/// Static description of one residual block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl BlockLayout {
    pub fn has_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::invalid("model spec", detail));
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return bad(format!("stage widths must be positive, got {:?}", self.stage_widths));
        }
        if self.stage_widths.windows(2).any(|w| w[1] < w[0]) {
            return bad(format!("stage widths must be nondecreasing, got {:?}", self.stage_widths));
        }
        if self.blocks_per_stage == 0 || self.num_classes == 0 || self.in_channels == 0 {
            return bad("blocks per stage, classes and input channels must be positive".into());
        }
        if self.cat.reduction == 0 {
            return bad("reduction ratio must be positive".into());
        }
        Ok(())
    }

    /// Every residual block in execution order.
    pub fn blocks(&self) -> Vec<BlockLayout> {
        let mut out = Vec::new();
        let mut cin = self.stage_widths[0];
        for (s, &width) in self.stage_widths.iter().enumerate() {
            for b in 0..self.blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                out.push(BlockLayout {
                    name: format!("stage{}.block{}", s + 1, b + 1),
                    in_channels: cin,
                    out_channels: width,
                    stride,
                });
                cin = width;
            }
        }
        out
    }

    pub fn cat_config(&self, channels: usize) -> CatConfig {
        CatConfig {
            channels,
            ..self.cat
        }
    }

    /// Names of blocks that carry an attention module.
    pub fn attention_blocks(&self) -> Vec<String> {
        match self.attention {
            Attention::None => Vec::new(),
            Attention::Arm(_) => self.blocks().into_iter().map(|b| b.name).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Weight,
    Bias,
    CollaFactor,
    Norm,
    RunningStat,
}

impl Role {
    pub fn trainable(self) -> bool {
        self != Role::RunningStat
    }

    pub fn decays(self) -> bool {
        matches!(self, Role::Weight | Role::Bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Element> {
    pub value: Tensor<T>,
    pub role: Role,
}

/// Named model state in deterministic insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Element = f32> {
    params: IndexMap<String, Param<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, role: Role) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::invalid("param store", format!("duplicate name `{name}`")));
        }
        self.params.insert(name, Param { value, role });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.params.get(name).ok_or_else(|| Error::UnknownParameter { name: name.into() })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter { name: name.into() })
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.get(name)?.value)
    }

    /// Reads a single-element parameter.
    pub fn scalar(&self, name: &str) -> Result<T> {
        let v = self.value(name)?;
        v.item()
            .ok_or_else(|| Error::shape("param store", format!("`{name}` is not a scalar: {:?}", v.shape())))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.role.trainable())
            .map(|p| p.value.len())
            .sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            role: p.role,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Records every parameter on `tape`: trainable ones as leaves, running
    /// statistics as constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| {
                let v = if p.role.trainable() {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { tape, vars }
    }

    /// Folds batch statistics into the running averages:
    /// `running ← momentum · running + (1 − momentum) · batch`.
    pub fn update_running_stats(&mut self, updates: &[(String, BatchStats<T>)]) -> Result<()> {
        let m = T::of(BN_MOMENTUM);
        for (prefix, stats) in updates {
            for (suffix, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
                let p = self.get_mut(&format!("{prefix}.{suffix}"))?;
                if p.value.len() != batch.len() {
                    return Err(Error::shape(
                        "running stats",
                        format!("{prefix}: {} channels vs batch {}", p.value.len(), batch.len()),
                    ));
                }
                for (r, &b) in p.value.data_mut().iter_mut().zip(batch) {
                    *r = m * *r + (T::one() - m) * b;
                }
            }
        }
        Ok(())
    }
}

/// A store recorded on a tape.
pub struct Bound<'t, T: Element> {
    tape: &'t Tape<T>,
    vars: IndexMap<String, Var<'t, T>>,
}

impl<'t, T: Element> Bound<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn var(&self, name: &str) -> Result<Var<'t, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter { name: name.into() })
    }

    fn var_or_constant(&self, name: &str, fallback: f64) -> Var<'t, T> {
        self.vars
            .get(name)
            .copied()
            .unwrap_or_else(|| self.tape.constant(Tensor::scalar(T::of(fallback))))
    }

    /// Gradients of every trainable parameter, by name. Parameters the root
    /// does not depend on get zeros.
    pub fn gradients(&self, grads: &Gradients<T>) -> IndexMap<String, Tensor<T>> {
        self.vars
            .iter()
            .filter(|(_, v)| v.requires_grad())
            .map(|(k, &v)| (k.clone(), grads.wrt_or_zeros(v)))
            .collect()
    }
}

pub const CHANNEL_FACTORS: [&str; 3] = ["C_alpha", "C_beta", "C_gamma"];
pub const SPATIAL_FACTORS: [&str; 3] = ["S_alpha", "S_beta", "S_gamma"];
pub const EXTERIOR_FACTORS: [&str; 2] = ["C_w", "S_w"];

fn insert_conv<T: Element, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert(
        format!("{name}.weight"),
        he_normal(&[cout, cin, k, k], cin * k * k, rng),
        Role::Weight,
    )
}

fn insert_bn<T: Element>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<()> {
    store.insert(format!("{name}.gamma"), Tensor::ones([c])?, Role::Norm)?;
    store.insert(format!("{name}.beta"), Tensor::zeros([c])?, Role::Norm)?;
    store.insert(format!("{name}.running_mean"), Tensor::zeros([c])?, Role::RunningStat)?;
    store.insert(format!("{name}.running_var"), Tensor::ones([c])?, Role::RunningStat)
}

fn insert_attention<T: Element, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    arm: &AttentionArm,
    cfg: &CatConfig,
    rng: &mut R,
) -> Result<()> {
    let zero = || Tensor::scalar(T::zero());
    let (c, hidden) = (cfg.channels, cfg.hidden());
    let active = |slot: usize| slot < 2 || arm.gep;
    if arm.mode.uses_channel() {
        if arm.interior == Interior::Learned {
            for (_, f) in CHANNEL_FACTORS.iter().enumerate().filter(|(s, _)| active(*s)) {
                store.insert(format!("{prefix}.{f}"), zero(), Role::CollaFactor)?;
            }
        }
        store.insert(format!("{prefix}.mlp.reduce"), he_normal(&[hidden, c], c, rng), Role::Weight)?;
        store.insert(format!("{prefix}.mlp.expand"), he_normal(&[c, hidden], hidden, rng), Role::Weight)?;
    }
    if arm.mode.uses_spatial() {
        if arm.interior == Interior::Learned {
            for (_, f) in SPATIAL_FACTORS.iter().enumerate().filter(|(s, _)| active(*s)) {
                store.insert(format!("{prefix}.{f}"), zero(), Role::CollaFactor)?;
            }
        }
        let k = SPATIAL_KERNEL;
        store.insert(format!("{prefix}.conv7.weight"), he_normal(&[1, 1, k, k], k * k, rng), Role::Weight)?;
        store.insert(format!("{prefix}.conv7.bias"), zero(), Role::Bias)?;
    }
    if arm.mode == AblationMode::FullCat {
        for f in EXTERIOR_FACTORS {
            store.insert(format!("{prefix}.{f}"), zero(), Role::CollaFactor)?;
        }
    }
    Ok(())
}

/// Fresh parameters for `spec`: He-normal convolutions, unit/zero batch norm,
/// zero colla-factors, zero classifier bias.
pub fn init_params<T: Element, R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<ParamStore<T>> {
    spec.validate()?;
    let mut store = ParamStore::new();
    let w0 = spec.stage_widths[0];
    insert_conv(&mut store, "stem.conv", w0, spec.in_channels, 3, rng)?;
    insert_bn(&mut store, "stem.bn", w0)?;
    for block in spec.blocks() {
        let n = &block.name;
        let (cin, cout) = (block.in_channels, block.out_channels);
        insert_conv(&mut store, &format!("{n}.conv1"), cout, cin, 3, rng)?;
        insert_bn(&mut store, &format!("{n}.bn1"), cout)?;
        insert_conv(&mut store, &format!("{n}.conv2"), cout, cout, 3, rng)?;
        insert_bn(&mut store, &format!("{n}.bn2"), cout)?;
        if let Some(arm) = spec.attention.arm() {
            insert_attention(&mut store, &format!("{n}.cat"), arm, &spec.cat_config(cout), rng)?;
        }
        if block.has_projection() {
            insert_conv(&mut store, &format!("{n}.shortcut.conv"), cout, cin, 1, rng)?;
            insert_bn(&mut store, &format!("{n}.shortcut.bn"), cout)?;
        }
    }
    let last = *spec.stage_widths.last().expect("validated");
    store.insert(
        "head.weight",
        he_normal(&[spec.num_classes, last], last, rng),
        Role::Weight,
    )?;
    store.insert("head.bias", Tensor::zeros([spec.num_classes])?, Role::Bias)?;
    Ok(store)
}

/// Collects the attention block's vars, substituting constants for factors
/// that are fixed or disabled.
fn attention_vars<'t, T: Element>(
    bound: &Bound<'t, T>,
    prefix: &str,
    arm: &AttentionArm,
) -> Result<CatVars<'t, T>> {
    let (fixed_c, fixed_s) = match arm.interior {
        Interior::Learned => ([0.0; 3], [0.0; 3]),
        Interior::Fixed { channel, spatial } => (channel, spatial),
    };
    let factor = |name: &str, fallback: f64| bound.var_or_constant(&format!("{prefix}.{name}"), fallback);
    let tensor = |name: &str| -> Var<'t, T> {
        bound
            .vars
            .get(&format!("{prefix}.{name}"))
            .copied()
            .unwrap_or_else(|| bound.tape.constant(Tensor::scalar(T::zero())))
    };
    Ok(CatVars {
        channel_factors: [0, 1, 2].map(|i| factor(CHANNEL_FACTORS[i], fixed_c[i])),
        spatial_factors: [0, 1, 2].map(|i| factor(SPATIAL_FACTORS[i], fixed_s[i])),
        exterior: EXTERIOR_FACTORS.map(|n| factor(n, 0.0)),
        mlp_reduce: tensor("mlp.reduce"),
        mlp_expand: tensor("mlp.expand"),
        conv7: tensor("conv7.weight"),
        conv7_bias: tensor("conv7.bias"),
    })
}

/// Records of one forward pass.
pub struct ForwardTrace<'t, T: Element> {
    pub logits: Var<'t, T>,
    /// Attention traces per block name, in execution order.
    pub attention: Vec<(String, AttentionTrace<'t, T>)>,
    /// Batch statistics per batch-norm prefix (training mode only).
    pub bn_updates: Vec<(String, BatchStats<T>)>,
}

struct Ctx<'a, 't, T: Element> {
    bound: &'a Bound<'t, T>,
    training: bool,
    bn_updates: Vec<(String, BatchStats<T>)>,
}

impl<'a, 't, T: Element> Ctx<'a, 't, T> {
    fn conv(&self, x: Var<'t, T>, name: &str, pad: usize, stride: usize) -> Result<Var<'t, T>> {
        x.conv2d(
            self.bound.var(&format!("{name}.weight"))?,
            None,
            Padding::same(pad),
            Stride::uniform(stride),
        )
    }

    fn bn(&mut self, x: Var<'t, T>, name: &str) -> Result<Var<'t, T>> {
        let gamma = self.bound.var(&format!("{name}.gamma"))?;
        let beta = self.bound.var(&format!("{name}.beta"))?;
        if self.training {
            let (y, stats) = x.batch_norm(gamma, beta, BN_EPS)?;
            self.bn_updates.push((name.to_string(), stats));
            return Ok(y);
        }
        let mean = self.bound.var(&format!("{name}.running_mean"))?;
        let var = self.bound.var(&format!("{name}.running_var"))?;
        let c = gamma.shape()[0];
        let eps = T::of(BN_EPS);
        let inv_std = var.value().map(|v| T::one() / (v + eps).sqrt()).reshape([1, c, 1, 1])?;
        let inv_std = self.bound.tape.constant(inv_std);
        x.sub(mean.reshape(&[1, c, 1, 1])?)?
            .mul(inv_std)?
            .mul(gamma.reshape(&[1, c, 1, 1])?)?
            .add(beta.reshape(&[1, c, 1, 1])?)
    }
}

/// Logits for a `N×C×H×W` batch. In training mode batch norm uses batch
/// statistics and reports them in the trace; in eval mode it uses the stored
/// running averages.
pub fn model_forward<'t, T: Element>(
    input: Var<'t, T>,
    bound: &Bound<'t, T>,
    spec: &ModelSpec,
    training: bool,
) -> Result<ForwardTrace<'t, T>> {
    let expected = [spec.in_channels, spec.image_size, spec.image_size];
    let shape = input.shape();
    if shape.len() != 4 || shape[1..] != expected {
        return Err(Error::shape(
            "model_forward",
            format!("expected N×{}×{}×{}, got {shape:?}", expected[0], expected[1], expected[2]),
        ));
    }
    let mut ctx = Ctx {
        bound,
        training,
        bn_updates: Vec::new(),
    };
    let stem = ctx.conv(input, "stem.conv", 1, 1)?;
    let mut x = ctx.bn(stem, "stem.bn")?.relu();
    let mut attention = Vec::new();
    for block in spec.blocks() {
        let (y, trace) = block_forward(&mut ctx, x, &block, spec)?;
        if let Some(t) = trace {
            attention.push((block.name.clone(), t));
        }
        x = y;
    }
    let (n, c) = (shape[0], *spec.stage_widths.last().expect("validated"));
    let pooled = x.mean(&[2, 3])?.reshape(&[n, c])?;
    let logits = pooled.linear(bound.var("head.weight")?, Some(bound.var("head.bias")?))?;
    Ok(ForwardTrace {
        logits,
        attention,
        bn_updates: ctx.bn_updates,
    })
}

fn block_forward<'t, T: Element>(
    ctx: &mut Ctx<'_, 't, T>,
    x: Var<'t, T>,
    block: &BlockLayout,
    spec: &ModelSpec,
) -> Result<(Var<'t, T>, Option<AttentionTrace<'t, T>>)> {
    let n = &block.name;
    let h = ctx.conv(x, &format!("{n}.conv1"), 1, block.stride)?;
    let h = ctx.bn(h, &format!("{n}.bn1"))?.relu();
    let h = ctx.conv(h, &format!("{n}.conv2"), 1, 1)?;
    let mut h = ctx.bn(h, &format!("{n}.bn2"))?;
    let mut trace = None;
    if let Some(arm) = spec.attention.arm() {
        let vars = attention_vars(ctx.bound, &format!("{n}.cat"), arm)?;
        let t = ablation_forward_var(h, &vars, &spec.cat_config(block.out_channels), arm.mode, arm.gep)?;
        h = t.refined;
        trace = Some(t);
    }
    let skip = if block.has_projection() {
        let s = ctx.conv(x, &format!("{n}.shortcut.conv"), 0, block.stride)?;
        ctx.bn(s, &format!("{n}.shortcut.bn"))?
    } else {
        x
    };
    Ok((h.add(skip)?.relu(), trace))
}

/// Eval-mode logits for a plain tensor batch.
pub fn predict<T: Element>(store: &ParamStore<T>, spec: &ModelSpec, batch: &Tensor<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let trace = model_forward(tape.constant(batch.clone()), &bound, spec, false)?;
    Ok(trace.logits.value().as_ref().clone())
}

/// Trainable parameter count computed from the spec alone.
pub fn analytic_param_count(spec: &ModelSpec) -> usize {
    let conv = |cout: usize, cin: usize, k: usize| cout * cin * k * k;
    let bn = |c: usize| 2 * c;
    let w0 = spec.stage_widths[0];
    let mut total = conv(w0, spec.in_channels, 3) + bn(w0);
    for b in spec.blocks() {
        let (cin, cout) = (b.in_channels, b.out_channels);
        total += conv(cout, cin, 3) + bn(cout) + conv(cout, cout, 3) + bn(cout);
        if b.has_projection() {
            total += conv(cout, cin, 1) + bn(cout);
        }
        if let Some(arm) = spec.attention.arm() {
            let cfg = spec.cat_config(cout);
            let interior = if arm.interior == Interior::Learned {
                if arm.gep { 3 } else { 2 }
            } else {
                0
            };
            if arm.mode.uses_channel() {
                total += 2 * cfg.hidden() * cout + interior;
            }
            if arm.mode.uses_spatial() {
                total += SPATIAL_KERNEL * SPATIAL_KERNEL + 1 + interior;
            }
            if arm.mode == AblationMode::FullCat {
                total += 2;
            }
        }
    }
    let last = *spec.stage_widths.last().expect("validated");
    total + spec.num_classes * last + spec.num_classes
}

impl FromStr for Interior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(Interior::Learned),
            "fixed" => Ok(Interior::ONES),
            other => Err(Error::invalid("interior", format!("expected learned or fixed, got `{other}`"))),
        }
    }
}
