use cat_core::attention::{ablation_forward_var, AblationMode, CatConfig, CatParams, CatVars, Fusion};
use cat_core::autograd::gradient_check;
use cat_core::autograd::Var;
use cat_core::pooling::GepRange;
use cat_core::tensor::{FilterMode, Padding, Stride};
use cat_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0)).unwrap()
}

fn assert_checks(label: &str, checks: &[cat_core::autograd::GradCheck], tol: f64) {
    for (i, c) in checks.iter().enumerate() {
        assert!(
            c.max_rel_err < tol,
            "{label} param {i}: rel err {} at {} (analytic {}, numeric {})",
            c.max_rel_err,
            c.worst_index,
            c.analytic[c.worst_index],
            c.numeric[c.worst_index]
        );
    }
}

/// Random nonzero colla-factors so every branch carries gradient.
fn perturbed_params(c: usize, fusion: Fusion, rng: &mut ChaCha8Rng) -> CatParams<f64> {
    let mut cfg = CatConfig::new(c);
    cfg.reduction = 4;
    cfg.fusion = fusion;
    let mut p = CatParams::init(cfg, rng);
    p.channel_factors = [0.0; 3].map(|_| rng.gen_range(-1.0..1.0));
    p.spatial_factors = [0.0; 3].map(|_| rng.gen_range(-1.0..1.0));
    p.exterior = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    p.conv7_bias = 0.1;
    p
}

fn flatten(p: &CatParams<f64>) -> Vec<Tensor<f64>> {
    let s = |v: f64| Tensor::scalar(v);
    let mut out: Vec<Tensor<f64>> = Vec::new();
    out.extend(p.channel_factors.map(s));
    out.extend(p.spatial_factors.map(s));
    out.extend(p.exterior.map(s));
    out.push(p.mlp_reduce.clone());
    out.push(p.mlp_expand.clone());
    out.push(p.conv7.clone());
    out.push(s(p.conv7_bias));
    out
}

fn unflatten<'t>(v: &[Var<'t, f64>]) -> CatVars<'t, f64> {
    CatVars {
        channel_factors: [v[0], v[1], v[2]],
        spatial_factors: [v[3], v[4], v[5]],
        exterior: [v[6], v[7]],
        mlp_reduce: v[8],
        mlp_expand: v[9],
        conv7: v[10],
        conv7_bias: v[11],
    }
}

fn check_block(mode: AblationMode, fusion: Fusion, gep: bool, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = perturbed_params(8, fusion, &mut rng);
    let x = random(&[1, 8, 6, 6], &mut rng);
    let probe = random(&[1, 8, 6, 6], &mut rng);
    let mut tensors = flatten(&p);
    tensors.push(x);
    let cfg = p.config;
    let checks = gradient_check(&tensors, H, |tape, v| {
        let vars = unflatten(&v[..12]);
        let trace = ablation_forward_var(v[12], &vars, &cfg, mode, gep)?;
        trace.refined.mul(tape.constant(probe.clone()))?.sum_all()
    })
    .unwrap();
    assert_checks(&format!("{mode} {fusion} gep={gep}"), &checks, 1e-4);
}

#[test]
fn full_block_canonical() {
    for seed in 0..3 {
        check_block(AblationMode::FullCat, Fusion::Canonical, true, seed);
    }
}

#[test]
fn full_block_pseudocode() {
    check_block(AblationMode::FullCat, Fusion::Pseudocode, true, 10);
}

#[test]
fn every_ablation_mode() {
    for (i, mode) in AblationMode::ALL.into_iter().enumerate() {
        check_block(mode, Fusion::Canonical, i % 2 == 0, 20 + i as u64);
    }
}

#[test]
fn convolution_with_padding_and_stride() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let x = random(&[2, 3, 7, 6], &mut rng);
    let k = random(&[4, 3, 3, 3], &mut rng);
    let b = random(&[4], &mut rng);
    let checks = gradient_check(&[x, k, b], H, |_, v| {
        v[0].conv2d(v[1], Some(v[2]), Padding::same(1), Stride { h: 2, w: 1 })?
            .sigmoid()
            .sum_all()
    })
    .unwrap();
    assert_checks("conv2d", &checks, 1e-6);
}

#[test]
fn gaussian_filters_and_minmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = random(&[2, 3, 6, 7], &mut rng);
    let w = random(&[2, 3, 6, 7], &mut rng);
    for mode in [FilterMode::Vertical, FilterMode::Full] {
        for symmetric in [false, true] {
            let checks = gradient_check(&[x.clone()], H, |tape, v| {
                v[0].gaussian_filter(5, 1.0, mode)?
                    .minmax_normalize(&[2, 3], symmetric)?
                    .mul(tape.constant(w.clone()))?
                    .sum_all()
            })
            .unwrap();
            assert_checks("gaussian+minmax", &checks, 1e-5);
        }
    }
}

#[test]
fn batch_norm_and_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let x = random(&[4, 3, 2, 2], &mut rng);
    let gamma = random(&[3], &mut rng);
    let beta = random(&[3], &mut rng);
    let wl = random(&[5, 3], &mut rng);
    let checks = gradient_check(&[x, gamma, beta, wl], H, |_, v| {
        let (y, _) = v[0].batch_norm(v[1], v[2], 1e-5)?;
        y.mean(&[2, 3])?
            .reshape(&[4, 3])?
            .linear(v[3], None)?
            .cross_entropy(&[0, 4, 2, 2])
    })
    .unwrap();
    assert_checks("bn+ce", &checks, 1e-5);
}

#[test]
fn entropy_pooling_in_both_directions() {
    use cat_core::pooling::{pool_channel_var, pool_spatial_var, PoolConfig, PoolMethod};
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let x = random(&[2, 5, 4, 3], &mut rng);
    for range in [GepRange::Unit, GepRange::Symmetric] {
        let cfg = PoolConfig {
            gep_range: range,
            ..PoolConfig::default()
        };
        let wc = random(&[2, 5, 1, 1], &mut rng);
        let ws = random(&[2, 1, 4, 3], &mut rng);
        let checks = gradient_check(&[x.clone()], H, |tape, v| {
            let c = pool_channel_var(v[0], PoolMethod::Gep, &cfg)?.mul(tape.constant(wc.clone()))?;
            let s = pool_spatial_var(v[0], PoolMethod::Gep, &cfg)?.mul(tape.constant(ws.clone()))?;
            c.sum_all()?.add(s.sum_all()?)
        })
        .unwrap();
        assert_checks("gep", &checks, 1e-5);
    }
}
