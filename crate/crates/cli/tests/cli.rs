use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cat_tool::checkpoint;
use cat_tool::commands::{export_maps, fresh_store, write_block_maps, FACTORS_HEADER};
use cat_tool::config::RunConfig;
use cat_core::attention::{cat_forward, CatConfig, CatParams};
use cat_core::Tensor;

const SMALL: &[&str] = &["synthetic_n=240", "val_n=100", "epochs=1", "batch_size=32"];

fn cat(dir: &Path, args: &[&str], overrides: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cat"));
    cmd.args(args);
    cmd.arg("--override").arg(format!("export_dir={}", dir.display()));
    for o in overrides {
        cmd.arg("--override").arg(o);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn failure_line(out: &Output) -> String {
    assert!(!out.status.success(), "command unexpectedly succeeded");
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "error is not one line: {err:?}");
    assert!(err.starts_with("error: "), "{err}");
    err
}

fn parse_metrics(line: &str) -> (f64, f64, usize) {
    let mut fields = line.trim().split(' ').map(|kv| kv.split_once('=').unwrap().1);
    (
        fields.next().unwrap().parse().unwrap(),
        fields.next().unwrap().parse().unwrap(),
        fields.next().unwrap().parse().unwrap(),
    )
}

fn config(dir: &Path, extra: &[&str]) -> RunConfig {
    let mut entries: Vec<(String, String)> = SMALL
        .iter()
        .chain(extra)
        .map(|s| {
            let (k, v) = s.split_once('=').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect();
    entries.push(("export_dir".into(), dir.display().to_string()));
    RunConfig::resolve(&entries).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn train_writes_all_outputs_and_eval_reproduces_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&cat(dir.path(), &["train"], SMALL));
    for file in ["model.ckpt", "factors.csv", "metrics.csv"] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    let (acc, loss, n) = parse_metrics(&stdout);
    assert_eq!(n, 100);
    assert!((0.0..=1.0).contains(&acc) && loss.is_finite());

    let (header, rows) = read_csv(&dir.path().join("factors.csv"));
    assert_eq!(header, FACTORS_HEADER);
    assert_eq!(rows.len(), 3, "three blocks × one epoch");
    for row in &rows {
        assert_eq!(row.len(), 12);
        assert_eq!(row[0], "0");
        let v: Vec<f64> = row[2..].iter().map(|s| s.parse().unwrap()).collect();
        assert_eq!(&v[..4], &[0.0, 0.0, 0.5, 0.5]);
        assert!(v[4..].iter().all(|&f| f == 0.0));
    }
    let (header, rows) = read_csv(&dir.path().join("metrics.csv"));
    assert_eq!(header, ["epoch", "lr", "train_loss", "train_accuracy", "val_loss", "val_accuracy"]);
    assert_eq!(rows.len(), 1);

    let again = ok(&cat(dir.path(), &["eval"], SMALL));
    assert_eq!(again, stdout);
}

#[test]
fn factor_rows_sum_to_one_over_several_epochs() {
    let dir = tempfile::tempdir().unwrap();
    ok(&cat(dir.path(), &["train"], &["synthetic_n=240", "val_n=100", "epochs=3", "batch_size=32", "lr=0.2"]));
    let (_, rows) = read_csv(&dir.path().join("factors.csv"));
    assert_eq!(rows.len(), 9);
    for row in rows {
        let w_c: f64 = row[4].parse().unwrap();
        let w_s: f64 = row[5].parse().unwrap();
        assert!((w_c + w_s - 1.0).abs() < 1e-6, "{row:?}");
    }
}

#[test]
fn verify_mode_is_bitwise_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--verify", "train"];
    let overrides = ["synthetic_n=120", "val_n=40", "epochs=2", "batch_size=16", "max_steps=6"];
    let out_a = ok(&cat(a.path(), &args, &overrides));
    let out_b = ok(&cat(b.path(), &args, &overrides));
    assert_eq!(out_a, out_b);
    for file in ["factors.csv", "metrics.csv", "model.ckpt"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn corrupted_checkpoint_fails_with_checksum_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[]);
    checkpoint::save(&fresh_store::<f32>(&cfg).unwrap(), &cfg.checkpoint).unwrap();
    let mut bytes = std::fs::read(&cfg.checkpoint).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&cfg.checkpoint, bytes).unwrap();
    let err = failure_line(&cat(dir.path(), &["eval"], SMALL));
    assert!(err.contains("checksum"), "{err}");
}

#[test]
fn checkpoint_for_another_model_lists_names() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["attention=none"]);
    checkpoint::save(&fresh_store::<f32>(&cfg).unwrap(), &cfg.checkpoint).unwrap();
    let err = failure_line(&cat(dir.path(), &["eval"], SMALL));
    assert!(err.contains("missing [stage1.block1.cat."), "{err}");
    assert!(err.contains("extra []"), "{err}");
}

#[test]
fn fresh_model_scores_chance_on_balanced_data() {
    for seed in 0..4u64 {
        let dir = tempfile::tempdir().unwrap();
        let seed_arg = seed.to_string();
        let cfg = config(dir.path(), &[&format!("seed={seed}")]);
        checkpoint::save(&fresh_store::<f32>(&cfg).unwrap(), &cfg.checkpoint).unwrap();
        let out = ok(&cat(dir.path(), &["--seed", &seed_arg, "eval"], SMALL));
        let (acc, _, n) = parse_metrics(&out);
        assert_eq!(n, 100);
        assert!((0.4..=0.6).contains(&acc), "seed {seed}: accuracy {acc}");
    }
}

#[test]
fn config_errors_are_single_lines() {
    let dir = tempfile::tempdir().unwrap();
    let err = failure_line(&cat(dir.path(), &["train"], &["epochz=1"]));
    assert!(err.contains("epochz"));
    let err = failure_line(&cat(dir.path(), &["train"], &["lr=fast"]));
    assert!(err.contains("`lr`"));
    let cfg_path = dir.path().join("bad.cfg");
    std::fs::write(&cfg_path, "# comment\nepochs 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cat"))
        .args(["--config", cfg_path.to_str().unwrap(), "train"])
        .output()
        .unwrap();
    assert!(failure_line(&out).contains("line 2"));
    let err = failure_line(&cat(dir.path(), &["eval"], &["checkpoint=/nonexistent/model.ckpt"]));
    assert!(err.contains("/nonexistent/model.ckpt"));
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, "epochs = 7\nseed = 3 # file value\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cat"))
        .args(["--config", cfg_path.to_str().unwrap(), "--override", "epochs=2", "--seed", "11", "show-config"])
        .output()
        .unwrap();
    let text = ok(&out);
    assert!(text.contains("epochs = 2\n"), "{text}");
    assert!(text.contains("seed = 11\n"), "{text}");
    assert!(text.contains("preset = desk\n"));
}

fn pgm_dims(path: &Path) -> (usize, usize, Vec<u8>) {
    let bytes = std::fs::read(path).unwrap();
    assert!(bytes.starts_with(b"P5\n"), "{}", path.display());
    let text = String::from_utf8_lossy(&bytes[3..20]).to_string();
    let mut lines = text.lines();
    let dims: Vec<usize> = lines.next().unwrap().split(' ').map(|d| d.parse().unwrap()).collect();
    assert_eq!(lines.next().unwrap(), "255");
    let pixels = bytes[bytes.len() - dims[0] * dims[1]..].to_vec();
    (dims[0], dims[1], pixels)
}

#[test]
fn export_writes_four_maps_per_block_at_block_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["export_images=2"]);
    checkpoint::save(&fresh_store::<f32>(&cfg).unwrap(), &cfg.checkpoint).unwrap();
    let out = ok(&cat(dir.path(), &["export-attn"], &[SMALL, &["export_images=2"]].concat()));
    assert!(out.starts_with("wrote=24 "), "{out}");
    for (block, side) in [("stage1.block1", 32), ("stage2.block1", 16), ("stage3.block1", 8)] {
        for i in 0..2 {
            for map in ["-savg", "smax", "sent", "fused"] {
                let path = dir.path().join("attention").join(format!("{block}_img{i:03}_{map}.pgm"));
                let (w, h, _) = pgm_dims(&path);
                assert_eq!((w, h), (side, side), "{}", path.display());
            }
        }
    }
}

#[test]
fn export_layer_selection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[]);
    checkpoint::save(&fresh_store::<f32>(&cfg).unwrap(), &cfg.checkpoint).unwrap();
    let out = ok(&cat(dir.path(), &["export-attn"], &[SMALL, &["export_images=1", "export_layers=stage2.block1"]].concat()));
    assert!(out.starts_with("wrote=4 "), "{out}");
    let err = failure_line(&cat(dir.path(), &["export-attn"], &[SMALL, &["export_layers=stage9.block1"]].concat()));
    assert!(err.contains("stage9.block1") && err.contains("stage1.block1, stage2.block1, stage3.block1"), "{err}");
}

#[test]
fn export_without_gep_skips_the_entropy_map() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["gep=false"]);
    let store = fresh_store::<f32>(&cfg).unwrap();
    let batch = Tensor::<f32>::zeros([1, 3, 32, 32]).unwrap();
    let paths = export_maps(&store, &cfg.spec, &batch, None, dir.path()).unwrap();
    assert_eq!(paths.len(), 9);
    assert!(paths.iter().all(|p| !p.to_string_lossy().ends_with("_sent.pgm")));
}

#[test]
fn constant_feature_map_gives_flat_entropy_image() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = CatParams::<f64>::init(CatConfig::new(8), &mut rng);
    let input = Tensor::<f64>::full([1, 8, 6, 6], 0.3).unwrap();
    let out = cat_forward(&input, &params).unwrap();
    let [a, m, e] = out.raw_descriptors.spatial.map(|d| d.map(|d| d.into_inner()));
    let paths = write_block_maps(dir.path(), "block", [a.as_ref(), m.as_ref(), e.as_ref()], &out.spatial_map).unwrap();
    assert_eq!(paths.len(), 4);
    for path in &paths {
        let (w, h, pixels) = pgm_dims(path);
        assert_eq!((w, h), (6, 6));
        assert!(pixels.iter().all(|&p| p == pixels[0]), "{} is not one level", path.display());
    }
}

#[test]
fn ablate_single_arm_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let overrides = ["synthetic_n=120", "val_n=40", "batch_size=16", "max_steps=3", "arms=cat"];
    let out_a = ok(&cat(a.path(), &["ablate"], &overrides));
    let out_b = ok(&cat(b.path(), &["ablate"], &overrides));
    let rows = |s: &str| s.lines().skip(1).map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
    assert_eq!(out_a.lines().next(), Some("mode,gep,params,accuracy,seconds"));
    assert_eq!(rows(&out_a).len(), 1);
    assert_eq!(rows(&out_a), rows(&out_b));
    let written = std::fs::read_to_string(a.path().join("ablation.csv")).unwrap();
    assert_eq!(written, out_a);
}
