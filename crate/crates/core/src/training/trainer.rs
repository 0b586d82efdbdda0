//! The training loop, evaluation, and the colla-factor trajectory.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{augment, shuffled, Dataset};
use super::optim::{sgd_step, OptimState, StepSchedule};
use crate::attention::{exterior_softmax, AblationMode};
use crate::autograd::Tape;
use crate::backbone::{
    model_forward, predict, Interior, ModelSpec, ParamStore, CHANNEL_FACTORS, EXTERIOR_FACTORS,
    SPATIAL_FACTORS,
};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: StepSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: bool,
    pub seed: u64,
    /// Stops after this many optimizer steps, mid-epoch if necessary.
    pub max_steps: Option<usize>,
}

impl TrainConfig {
    /// 10 epochs, batch 64, base lr 0.05 dropping every 5 epochs, no augmentation.
    pub fn desk() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            schedule: StepSchedule { base: 0.05, drop_every: 5 },
            momentum: 0.9,
            weight_decay: 0.0005,
            augment: false,
            seed: 0,
            max_steps: None,
        }
    }

    /// 200 epochs, batch 128, base lr 0.001 dropping tenfold every 50 epochs,
    /// flip and pad-crop augmentation.
    pub fn paper_cifar() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            schedule: StepSchedule { base: 0.001, drop_every: 50 },
            augment: true,
            ..Self::desk()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub n: usize,
}

/// Colla-factor snapshot of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub epoch: usize,
    pub block: String,
    pub c_w: f64,
    pub s_w: f64,
    pub w_c: f64,
    pub w_s: f64,
    /// `C_α, C_β, C_γ`
    pub channel: [f64; 3],
    /// `S_α, S_β, S_γ`
    pub spatial: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val: Evaluation,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// One row per block with exterior factors, recorded at the start of every epoch.
    pub trajectory: Vec<TrajectoryRow>,
    pub epochs: Vec<EpochMetrics>,
    pub step_losses: Vec<f64>,
    pub steps: usize,
    pub final_eval: Evaluation,
}

fn to_f64<T: Element>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Factor values of every full CAT block. Fixed or disabled factors are
/// reported at the value the forward pass uses.
pub fn trajectory_rows<T: Element>(store: &ParamStore<T>, spec: &ModelSpec, epoch: usize) -> Result<Vec<TrajectoryRow>> {
    let Some(arm) = spec.attention.arm() else {
        return Ok(Vec::new());
    };
    if arm.mode != AblationMode::FullCat {
        return Ok(Vec::new());
    }
    let (fixed_c, fixed_s) = match arm.interior {
        Interior::Learned => ([0.0; 3], [0.0; 3]),
        Interior::Fixed { channel, spatial } => (channel, spatial),
    };
    spec.attention_blocks()
        .into_iter()
        .map(|block| {
            let read = |name: &str, fallback: f64| -> Result<f64> {
                let full = format!("{block}.cat.{name}");
                if store.contains(&full) {
                    Ok(to_f64(store.scalar(&full)?))
                } else {
                    Ok(fallback)
                }
            };
            let c_w = read(EXTERIOR_FACTORS[0], 0.0)?;
            let s_w = read(EXTERIOR_FACTORS[1], 0.0)?;
            let (w_c, w_s) = exterior_softmax(c_w, s_w);
            let mut channel = [0.0; 3];
            let mut spatial = [0.0; 3];
            for i in 0..3 {
                channel[i] = read(CHANNEL_FACTORS[i], fixed_c[i])?;
                spatial[i] = read(SPATIAL_FACTORS[i], fixed_s[i])?;
            }
            Ok(TrajectoryRow {
                epoch,
                block,
                c_w,
                s_w,
                w_c,
                w_s,
                channel,
                spatial,
            })
        })
        .collect()
}

fn argmax_row<T: Element>(row: &[T]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn correct<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax_row(row) == l)
        .count()
}

/// Eval-mode accuracy and mean loss over the whole dataset.
pub fn evaluate<T: Element>(
    store: &ParamStore<T>,
    spec: &ModelSpec,
    data: &Dataset,
    batch_size: usize,
) -> Result<Evaluation> {
    let (mut hits, mut loss_sum) = (0usize, 0f64);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch::<T>(chunk)?;
        let logits = predict(store, spec, &x)?;
        hits += correct(&logits, &labels);
        loss_sum += to_f64(super::optim::cross_entropy(&logits, &labels)?) * chunk.len() as f64;
    }
    let n = data.len();
    let denom = n.max(1) as f64;
    Ok(Evaluation {
        accuracy: hits as f64 / denom,
        loss: loss_sum / denom,
        n,
    })
}

/// Trains `store` in place.
pub fn train<T: Element>(
    spec: &ModelSpec,
    store: &mut ParamStore<T>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if cfg.batch_size < 2 {
        return Err(Error::invalid("train", "batch size must be at least 2 for batch statistics"));
    }
    if train_set.len() < 2 {
        return Err(Error::invalid("train", "training set needs at least 2 images"));
    }
    let mut state = OptimState::new(cfg.schedule.base, cfg.momentum, cfg.weight_decay)?;
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_A5A5);
    let mut report = TrainReport {
        trajectory: Vec::new(),
        epochs: Vec::new(),
        step_losses: Vec::new(),
        steps: 0,
        final_eval: Evaluation { accuracy: 0.0, loss: 0.0, n: 0 },
    };
    for epoch in 0..cfg.epochs {
        if cfg.max_steps.is_some_and(|m| report.steps >= m) {
            break;
        }
        report.trajectory.extend(trajectory_rows(store, spec, epoch)?);
        state.lr = cfg.schedule.lr(epoch);
        let order = shuffled(train_set.len(), cfg.seed.wrapping_add(epoch as u64));
        let (mut seen, mut hits, mut loss_sum) = (0usize, 0usize, 0f64);
        for chunk in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            if cfg.max_steps.is_some_and(|m| report.steps >= m) {
                break;
            }
            let (mut x, labels) = train_set.batch::<T>(chunk)?;
            if cfg.augment {
                x = augment(&x, &mut aug_rng)?;
            }
            let tape = Tape::new();
            let bound = store.bind(&tape);
            let trace = model_forward(tape.constant(x), &bound, spec, true)?;
            let loss = trace.logits.cross_entropy(&labels)?;
            let loss_value = to_f64(loss.value().data()[0]);
            if !loss_value.is_finite() {
                return Err(Error::invalid("train", format!("loss diverged at step {}", report.steps)));
            }
            hits += correct(&trace.logits.value(), &labels);
            let grads = bound.gradients(&tape.backward(loss)?);
            sgd_step(store, &grads, &mut state)?;
            store.update_running_stats(&trace.bn_updates)?;
            seen += chunk.len();
            loss_sum += loss_value * chunk.len() as f64;
            report.step_losses.push(loss_value);
            report.steps += 1;
        }
        let val = evaluate(store, spec, val_set, 100)?;
        report.epochs.push(EpochMetrics {
            epoch,
            lr: state.lr,
            train_loss: loss_sum / seen.max(1) as f64,
            train_accuracy: hits as f64 / seen.max(1) as f64,
            val,
        });
    }
    report.final_eval = evaluate(store, spec, val_set, 100)?;
    Ok(report)
}
