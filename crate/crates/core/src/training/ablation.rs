//! Trains a list of attention arms under one budget and tabulates them.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::Dataset;
use super::trainer::{train, TrainConfig};
use crate::attention::AblationMode;
use crate::backbone::{init_params, Attention, AttentionArm, Interior, ModelSpec, ParamStore};
use crate::error::Result;

pub const ABLATION_HEADER: &str = "mode,gep,params,accuracy,seconds";

/// The ten attention arms in table order: each single and sequential
/// arrangement with and without entropy pooling, then the full block with
/// exterior factors only and with exterior and interior factors.
pub fn default_arms() -> Vec<Attention> {
    let fixed = |mode, gep| {
        Attention::Arm(AttentionArm {
            mode,
            gep,
            interior: Interior::ONES,
        })
    };
    let mut arms = Vec::new();
    for mode in [
        AblationMode::SpatialOnly,
        AblationMode::ChannelOnly,
        AblationMode::ChannelThenSpatial,
        AblationMode::SpatialThenChannel,
    ] {
        arms.push(fixed(mode, true));
        arms.push(fixed(mode, false));
    }
    arms.push(fixed(AblationMode::FullCat, true));
    arms.push(Attention::Arm(AttentionArm::CAT));
    arms
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mode: String,
    pub gep: bool,
    pub params: usize,
    /// `None` when the arm failed to train.
    pub accuracy: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

/// Trains every arm from the same seed on the same data. A failing arm
/// becomes a row without accuracy; the remaining arms still run.
pub fn run_ablation(
    template: &ModelSpec,
    arms: &[Attention],
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Vec<AblationRow> {
    arms.iter()
        .map(|&attention| {
            let spec = ModelSpec {
                attention,
                ..template.clone()
            };
            let gep = attention.arm().is_some_and(|a| a.gep);
            let start = Instant::now();
            let outcome = (|| -> Result<(usize, f64)> {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let mut store: ParamStore<f32> = init_params(&spec, &mut rng)?;
                let params = store.trainable_count();
                let report = train(&spec, &mut store, train_set, val_set, cfg)?;
                Ok((params, report.final_eval.accuracy))
            })();
            let seconds = start.elapsed().as_secs_f64();
            match outcome {
                Ok((params, accuracy)) => AblationRow {
                    mode: attention.name().to_string(),
                    gep,
                    params,
                    accuracy: Some(accuracy),
                    seconds,
                    error: None,
                },
                Err(e) => AblationRow {
                    mode: attention.name().to_string(),
                    gep,
                    params: 0,
                    accuracy: None,
                    seconds,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// CSV with header `mode,gep,params,accuracy,seconds`; failed arms show
/// `failed` in the accuracy column.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let acc = r.accuracy.map_or_else(|| "failed".to_string(), |a| format!("{a:.6}"));
        let _ = writeln!(out, "{},{},{},{},{:.3}", r.mode, r.gep, r.params, acc, r.seconds);
    }
    out
}
