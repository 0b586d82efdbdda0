//! `key = value` run configuration with named presets.
//!
//! Resolution order: built-in defaults, then the selected preset's
//! overrides, then the file, then command-line overrides. The preset itself
//! may be chosen in the file or on the command line.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use cat_core::attention::{CatConfig, Fusion};
use cat_core::backbone::{Attention, ModelSpec};
use cat_core::pooling::{GepRange, PoolConfig};
use cat_core::training::{default_arms, CifarFormat, StepSchedule, SyntheticParams, TrainConfig};

use crate::error::{io_err, CliError, Result};

/// Every accepted key with its default (the `desk` preset) and meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("preset", "desk", "desk | paper-cifar; fills in the keys below before the file is applied"),
    ("seed", "0", "model initialization and batch-order seed"),
    ("data_seed", "7", "synthetic dataset seed"),
    ("dataset", "synthetic", "synthetic | cifar"),
    ("synthetic_n", "2000", "number of synthetic images"),
    ("val_n", "720", "images held out for validation when no separate test file is given"),
    ("cifar_train", "", "CIFAR binary training file"),
    ("cifar_test", "", "CIFAR binary test file (used for validation when set)"),
    ("cifar_label_bytes", "1", "label bytes per record (1 for CIFAR-10, 2 for CIFAR-100)"),
    ("cifar_label_index", "0", "which label byte holds the class"),
    ("num_classes", "2", "number of classes"),
    ("mean", "0.5,0.5,0.5", "per-channel standardization mean"),
    ("std", "0.1,0.1,0.1", "per-channel standardization standard deviation"),
    ("stage_widths", "8,16,32", "channels per stage"),
    ("blocks_per_stage", "1", "residual blocks per stage"),
    ("attention", "cat", "none | se | cat | cat_exterior | channel_only | spatial_only | channel_then_spatial | spatial_then_channel"),
    ("gep", "true", "entropy pooling on or off"),
    ("reduction", "16", "channel MLP reduction ratio"),
    ("gaussian_k", "5", "Gaussian prefilter taps (odd)"),
    ("gaussian_sigma", "1.0", "Gaussian prefilter standard deviation"),
    ("gep_range", "unit", "entropy normalization range: unit | symmetric"),
    ("fusion", "canonical", "canonical | pseudocode"),
    ("epochs", "10", "training epochs"),
    ("batch_size", "64", "mini-batch size"),
    ("lr", "0.05", "base learning rate"),
    ("drop_every", "5", "epochs between tenfold learning-rate drops"),
    ("momentum", "0.9", "SGD momentum"),
    ("weight_decay", "0.0005", "L2 weight decay (not applied to colla-factors or batch norm)"),
    ("augment", "false", "random flip and pad-crop-4"),
    ("max_steps", "0", "stop after this many optimizer steps (0 = no limit)"),
    ("arms", "default", "ablation arms: `default` or a comma list of attention names, `name/nogep` disables entropy pooling"),
    ("export_dir", "out", "directory for checkpoints, CSV files and exported maps"),
    ("checkpoint", "", "checkpoint path (default: <export_dir>/model.ckpt)"),
    ("export_layers", "all", "comma list of block names to export, or `all`"),
    ("export_images", "4", "number of validation images to export"),
];

const PAPER_CIFAR: &[(&str, &str)] = &[
    ("dataset", "cifar"),
    ("cifar_label_bytes", "2"),
    ("cifar_label_index", "1"),
    ("num_classes", "100"),
    ("mean", "0.5071,0.4865,0.4409"),
    ("std", "0.2673,0.2564,0.2762"),
    ("stage_widths", "16,32,64"),
    ("blocks_per_stage", "3"),
    ("epochs", "200"),
    ("batch_size", "128"),
    ("lr", "0.001"),
    ("drop_every", "50"),
    ("augment", "true"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { n: usize, seed: u64 },
    Cifar { train: PathBuf, test: Option<PathBuf>, format: CifarFormat },
}

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub values: IndexMap<String, String>,
    pub data: DataSource,
    pub val_n: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub arms: Vec<Attention>,
    pub export_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub export_layers: Option<Vec<String>>,
    pub export_images: usize,
    pub synthetic: SyntheticParams,
}

fn preset_overlay(name: &str) -> Result<&'static [(&'static str, &'static str)]> {
    match name {
        "desk" => Ok(&[]),
        "paper-cifar" => Ok(PAPER_CIFAR),
        other => Err(CliError::BadValue {
            key: "preset".into(),
            detail: format!("unknown preset `{other}` (expected desk or paper-cifar)"),
        }),
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Config {
            line: i + 1,
            detail: format!("expected key=value, got `{line}`"),
        })?;
        let key = k.trim().to_string();
        if !KEYS.iter().any(|(name, _, _)| *name == key) {
            return Err(CliError::UnknownKey { key });
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_override(text: &str) -> Result<(String, String)> {
    let mut parsed = parse_lines(text)?;
    match parsed.len() {
        1 => Ok(parsed.remove(0)),
        _ => Err(CliError::Config {
            line: 1,
            detail: format!("override must be a single key=value, got `{text}`"),
        }),
    }
}

fn parse<T: std::str::FromStr>(values: &IndexMap<String, String>, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = &values[key];
    raw.parse().map_err(|e: T::Err| CliError::BadValue {
        key: key.into(),
        detail: format!("`{raw}`: {e}"),
    })
}

fn parse_list<T: std::str::FromStr>(values: &IndexMap<String, String>, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    values[key]
        .split(',')
        .map(|s| {
            s.trim().parse().map_err(|e: T::Err| CliError::BadValue {
                key: key.into(),
                detail: format!("`{s}`: {e}"),
            })
        })
        .collect()
}

fn triple(values: &IndexMap<String, String>, key: &str) -> Result<[f32; 3]> {
    let v: Vec<f32> = parse_list(values, key)?;
    v.try_into().map_err(|v: Vec<f32>| CliError::BadValue {
        key: key.into(),
        detail: format!("expected 3 values, got {}", v.len()),
    })
}

fn parse_arms(raw: &str, key: &str) -> Result<Vec<Attention>> {
    if raw == "default" {
        return Ok(default_arms());
    }
    raw.split(',')
        .map(|item| {
            let item = item.trim();
            let (name, gep) = match item.strip_suffix("/nogep") {
                Some(n) => (n, false),
                None => (item, true),
            };
            Attention::parse(name, gep).map_err(|e| CliError::BadValue {
                key: key.into(),
                detail: e.to_string(),
            })
        })
        .collect()
}

impl RunConfig {
    /// Resolves file entries and command-line overrides (later wins).
    pub fn resolve(entries: &[(String, String)]) -> Result<Self> {
        let preset = entries
            .iter()
            .rev()
            .find(|(k, _)| k == "preset")
            .map_or("desk", |(_, v)| v.as_str());
        let mut values: IndexMap<String, String> = KEYS
            .iter()
            .map(|(k, v, _)| (k.to_string(), v.to_string()))
            .collect();
        for (k, v) in preset_overlay(preset)? {
            values.insert(k.to_string(), v.to_string());
        }
        for (k, v) in entries {
            if !values.contains_key(k) {
                return Err(CliError::UnknownKey { key: k.clone() });
            }
            values.insert(k.clone(), v.clone());
        }
        Self::from_values(values)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut entries = match path {
            Some(p) => parse_lines(&std::fs::read_to_string(p).map_err(io_err(p))?)?,
            None => Vec::new(),
        };
        entries.extend_from_slice(overrides);
        Self::resolve(&entries)
    }

    fn from_values(values: IndexMap<String, String>) -> Result<Self> {
        let bad = |key: &str, detail: String| CliError::BadValue {
            key: key.into(),
            detail,
        };
        let data = match values["dataset"].as_str() {
            "synthetic" => DataSource::Synthetic {
                n: parse(&values, "synthetic_n")?,
                seed: parse(&values, "data_seed")?,
            },
            "cifar" => {
                let train = values["cifar_train"].clone();
                if train.is_empty() {
                    return Err(bad("cifar_train", "required when dataset=cifar".into()));
                }
                let test = Some(values["cifar_test"].clone()).filter(|s| !s.is_empty());
                DataSource::Cifar {
                    train: train.into(),
                    test: test.map(PathBuf::from),
                    format: CifarFormat {
                        label_bytes: parse(&values, "cifar_label_bytes")?,
                        label_index: parse(&values, "cifar_label_index")?,
                        num_classes: parse(&values, "num_classes")?,
                    },
                }
            }
            other => return Err(bad("dataset", format!("expected synthetic or cifar, got `{other}`"))),
        };
        let gep: bool = parse(&values, "gep")?;
        let attention = Attention::parse(&values["attention"], gep).map_err(|e| bad("attention", e.to_string()))?;
        let gaussian_k: usize = parse(&values, "gaussian_k")?;
        if gaussian_k % 2 == 0 {
            return Err(bad("gaussian_k", format!("must be odd, got {gaussian_k}")));
        }
        let spec = ModelSpec {
            stage_widths: parse_list(&values, "stage_widths")?,
            blocks_per_stage: parse(&values, "blocks_per_stage")?,
            num_classes: parse(&values, "num_classes")?,
            attention,
            cat: CatConfig {
                reduction: parse(&values, "reduction")?,
                pool: PoolConfig {
                    gaussian_k,
                    gaussian_sigma: parse(&values, "gaussian_sigma")?,
                    gep_range: parse::<GepRange>(&values, "gep_range")?,
                },
                fusion: parse::<Fusion>(&values, "fusion")?,
                ..CatConfig::new(1)
            },
            ..ModelSpec::default()
        };
        spec.validate().map_err(|e| bad("stage_widths", e.to_string()))?;
        let max_steps: usize = parse(&values, "max_steps")?;
        let train = TrainConfig {
            epochs: parse(&values, "epochs")?,
            batch_size: parse(&values, "batch_size")?,
            schedule: StepSchedule {
                base: parse(&values, "lr")?,
                drop_every: parse(&values, "drop_every")?,
            },
            momentum: parse(&values, "momentum")?,
            weight_decay: parse(&values, "weight_decay")?,
            augment: parse(&values, "augment")?,
            seed: parse(&values, "seed")?,
            max_steps: (max_steps > 0).then_some(max_steps),
        };
        let export_dir = PathBuf::from(&values["export_dir"]);
        let checkpoint = match values["checkpoint"].as_str() {
            "" => export_dir.join("model.ckpt"),
            p => PathBuf::from(p),
        };
        let export_layers = match values["export_layers"].as_str() {
            "all" => None,
            list => Some(list.split(',').map(|s| s.trim().to_string()).collect()),
        };
        Ok(Self {
            data,
            val_n: parse(&values, "val_n")?,
            mean: triple(&values, "mean")?,
            std: triple(&values, "std")?,
            spec,
            train,
            arms: parse_arms(&values["arms"], "arms")?,
            export_dir,
            checkpoint,
            export_layers,
            export_images: parse(&values, "export_images")?,
            synthetic: SyntheticParams::default(),
            values,
        })
    }

    /// The resolved configuration as a `key = value` file.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_are_the_desk_preset() {
        let cfg = RunConfig::resolve(&[]).unwrap();
        assert_eq!(cfg.train, TrainConfig::desk());
        assert_eq!(cfg.spec.stage_widths, vec![8, 16, 32]);
        assert_eq!(cfg.arms.len(), 10);
        assert_eq!(cfg.checkpoint, PathBuf::from("out/model.ckpt"));
    }

    #[test]
    fn cifar_preset_matches_training_recipe() {
        let cfg = RunConfig::resolve(&entries(&[("preset", "paper-cifar"), ("cifar_train", "x.bin")])).unwrap();
        assert_eq!(cfg.train, TrainConfig::paper_cifar());
        assert_eq!(cfg.spec.stage_widths, vec![16, 32, 64]);
        assert!(matches!(cfg.data, DataSource::Cifar { .. }));
    }

    #[test]
    fn later_entries_win() {
        let cfg = RunConfig::resolve(&entries(&[("epochs", "3"), ("epochs", "1")])).unwrap();
        assert_eq!(cfg.train.epochs, 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(parse_lines("epochz = 3"), Err(CliError::UnknownKey { .. })));
        assert!(matches!(
            RunConfig::resolve(&entries(&[("colour", "red")])),
            Err(CliError::UnknownKey { .. })
        ));
    }

    #[test]
    fn comments_and_blank_lines() {
        let parsed = parse_lines("# heading\n\nepochs = 2 # short\n").unwrap();
        assert_eq!(parsed, entries(&[("epochs", "2")]));
        assert!(parse_lines("epochs").is_err());
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = RunConfig::resolve(&entries(&[("lr", "fast")])).unwrap_err();
        assert!(err.to_string().contains("`lr`"), "{err}");
        assert!(RunConfig::resolve(&entries(&[("gaussian_k", "4")])).is_err());
        assert!(RunConfig::resolve(&entries(&[("mean", "0.5,0.5")])).is_err());
        assert!(RunConfig::resolve(&entries(&[("preset", "imagenet")])).is_err());
    }

    #[test]
    fn arm_lists() {
        let cfg = RunConfig::resolve(&entries(&[("arms", "none, cat/nogep")])).unwrap();
        assert_eq!(cfg.arms.len(), 2);
        assert_eq!(cfg.arms[0], Attention::None);
        assert!(!cfg.arms[1].arm().unwrap().gep);
    }

    #[test]
    fn every_key_has_a_default_that_resolves() {
        let cfg = RunConfig::resolve(&[]).unwrap();
        assert_eq!(cfg.values.len(), KEYS.len());
        let again = RunConfig::resolve(&parse_lines(&cfg.render()).unwrap()).unwrap();
        assert_eq!(again.values, cfg.values);
    }
}
