//! The four subcommands. Each is generic over the element type so that
//! `--verify` can rerun the same code in f64.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cat_core::autograd::Tape;
use cat_core::backbone::{init_params, model_forward, ModelSpec, ParamStore};
use cat_core::training::{
    ablation_csv, evaluate, gen_synthetic, load_cifar_bin, run_ablation, train, Dataset, EpochMetrics, Evaluation,
    TrajectoryRow,
};
use cat_core::{Element, Tensor};

use crate::checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::error::{io_err, CliError, Result};
use crate::pgm;

/// Batch size used for every evaluation pass.
pub const EVAL_BATCH: usize = 100;

pub const FACTORS_HEADER: [&str; 12] = [
    "epoch", "block", "C_w", "S_w", "w_c", "w_s", "C_alpha", "C_beta", "C_gamma", "S_alpha", "S_beta", "S_gamma",
];
pub const METRICS_HEADER: [&str; 6] = ["epoch", "lr", "train_loss", "train_accuracy", "val_loss", "val_accuracy"];

/// Standardized training and validation splits for a config.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (mut train_set, mut val_set) = match &cfg.data {
        DataSource::Synthetic { n, seed } => gen_synthetic(*n, *seed, &cfg.synthetic)?.split(cfg.val_n)?,
        DataSource::Cifar { train, test, format } => {
            let full = load_cifar_bin(train, *format)?;
            match test {
                Some(t) => (full, load_cifar_bin(t, *format)?),
                None => full.split(cfg.val_n)?,
            }
        }
    };
    train_set.standardize(cfg.mean, cfg.std)?;
    val_set.standardize(cfg.mean, cfg.std)?;
    Ok((train_set, val_set))
}

/// A freshly initialized store for the config's model and seed.
pub fn fresh_store<T: Element>(cfg: &RunConfig) -> Result<ParamStore<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    Ok(init_params(&cfg.spec, &mut rng)?)
}

pub fn load_model<T: Element>(cfg: &RunConfig) -> Result<ParamStore<T>> {
    let mut store = fresh_store(cfg)?;
    checkpoint::load_into(&mut store, &cfg.checkpoint)?;
    Ok(store)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn metrics_line(e: &Evaluation) -> String {
    format!("accuracy={} loss={} n={}", e.accuracy, e.loss, e.n)
}

pub fn factors_csv(rows: &[TrajectoryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FACTORS_HEADER)?;
    for r in rows {
        let mut record = vec![r.epoch.to_string(), r.block.clone()];
        record.extend(
            [r.c_w, r.s_w, r.w_c, r.w_s]
                .iter()
                .chain(&r.channel)
                .chain(&r.spatial)
                .map(f64::to_string),
        );
        w.write_record(&record)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv output is UTF-8"))
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for m in rows {
        w.write_record([
            m.epoch.to_string(),
            m.lr.to_string(),
            m.train_loss.to_string(),
            m.train_accuracy.to_string(),
            m.val.loss.to_string(),
            m.val.accuracy.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv output is UTF-8"))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Trains, then writes `model.ckpt`, `factors.csv` and `metrics.csv`.
/// Returns the final validation metrics.
pub fn cmd_train<T: Element>(cfg: &RunConfig) -> Result<Evaluation> {
    create_dir(&cfg.export_dir)?;
    let (train_set, val_set) = load_data(cfg)?;
    let mut store = fresh_store::<T>(cfg)?;
    let report = train(&cfg.spec, &mut store, &train_set, &val_set, &cfg.train)?;
    checkpoint::save(&store, &cfg.checkpoint)?;
    write_file(&cfg.export_dir.join("factors.csv"), &factors_csv(&report.trajectory)?)?;
    write_file(&cfg.export_dir.join("metrics.csv"), &metrics_csv(&report.epochs)?)?;
    Ok(report.final_eval)
}

pub fn cmd_eval<T: Element>(cfg: &RunConfig) -> Result<Evaluation> {
    let store = load_model::<T>(cfg)?;
    let (_, val_set) = load_data(cfg)?;
    Ok(evaluate(&store, &cfg.spec, &val_set, EVAL_BATCH)?)
}

/// Blocks whose attention has a spatial branch, in execution order.
pub fn exportable_blocks(spec: &ModelSpec) -> Vec<String> {
    match spec.attention.arm() {
        Some(arm) if arm.mode.uses_spatial() => spec.attention_blocks(),
        _ => Vec::new(),
    }
}

fn select_blocks(spec: &ModelSpec, selector: Option<&[String]>) -> Result<Vec<String>> {
    let available = exportable_blocks(spec);
    let Some(wanted) = selector else {
        return Ok(available);
    };
    for name in wanted {
        if !available.contains(name) {
            return Err(CliError::UnknownLayer {
                name: name.clone(),
                available,
            });
        }
    }
    Ok(wanted.to_vec())
}

/// Writes one block's maps for every image in the batch and returns the
/// paths in write order. `pooled` holds the `N×1×H×W` average, max and
/// entropy descriptors; `fused` is the post-sigmoid spatial map. Files are
/// named `<block>_img<index>_<map>.pgm` with map `-savg`, `smax`, `sent`
/// (skipped when the entropy slot is empty) or `fused`.
pub fn write_block_maps<T: Element>(
    dir: &Path,
    block: &str,
    pooled: [Option<&Tensor<T>>; 3],
    fused: &Tensor<T>,
) -> Result<Vec<PathBuf>> {
    let (n, _, h, w) = fused.dims4()?;
    let maps = [
        ("-savg", pooled[0], -1.0),
        ("smax", pooled[1], 1.0),
        ("sent", pooled[2], 1.0),
        ("fused", Some(fused), 1.0),
    ];
    let mut written = Vec::new();
    for i in 0..n {
        for (suffix, map, sign) in maps {
            let Some(map) = map else { continue };
            let plane: Vec<f64> = map.data()[i * h * w..(i + 1) * h * w]
                .iter()
                .map(|v| sign * v.to_f64().unwrap_or(f64::NAN))
                .collect();
            let path = dir.join(format!("{block}_img{i:03}_{suffix}.pgm"));
            pgm::write(&path, &plane, w, h)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Runs the model in eval mode on `batch` and writes the maps of every
/// selected block (all blocks with a spatial branch when `selector` is
/// `None`).
pub fn export_maps<T: Element>(
    store: &ParamStore<T>,
    spec: &ModelSpec,
    batch: &Tensor<T>,
    selector: Option<&[String]>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let blocks = select_blocks(spec, selector)?;
    create_dir(dir)?;
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let trace = model_forward(tape.constant(batch.clone()), &bound, spec, false)?;
    let mut written = Vec::new();
    for (block, t) in &trace.attention {
        let (Some(fused), Some(pooled)) = (&t.spatial_map, &t.spatial_pooled) else {
            continue;
        };
        if !blocks.contains(block) {
            continue;
        }
        let pooled = pooled.map(|v| v.map(|v| v.value().as_ref().clone()));
        let fused = fused.value().as_ref().clone();
        let [a, m, e] = &pooled;
        written.extend(write_block_maps(dir, block, [a.as_ref(), m.as_ref(), e.as_ref()], &fused)?);
    }
    Ok(written)
}

/// Exports maps for the first `export_images` validation images into
/// `<export_dir>/attention`.
pub fn cmd_export_attn<T: Element>(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let store = load_model::<T>(cfg)?;
    let (_, val_set) = load_data(cfg)?;
    let count = cfg.export_images.min(val_set.len());
    let indices: Vec<usize> = (0..count).collect();
    let (batch, _) = val_set.batch::<T>(&indices)?;
    export_maps(
        &store,
        &cfg.spec,
        &batch,
        cfg.export_layers.as_deref(),
        &cfg.export_dir.join("attention"),
    )
}

/// Runs every configured arm and writes `ablation.csv`; returns its contents.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<String> {
    create_dir(&cfg.export_dir)?;
    let (train_set, val_set) = load_data(cfg)?;
    let rows = run_ablation(&cfg.spec, &cfg.arms, &train_set, &val_set, &cfg.train);
    let csv = ablation_csv(&rows);
    write_file(&cfg.export_dir.join("ablation.csv"), &csv)?;
    let mut failures = String::new();
    for r in rows.iter().filter(|r| r.error.is_some()) {
        let _ = write!(failures, "{}: {}; ", r.mode, r.error.as_deref().unwrap_or(""));
    }
    if !failures.is_empty() {
        eprintln!("warning: some arms failed: {}", failures.trim_end_matches("; "));
    }
    Ok(csv)
}
