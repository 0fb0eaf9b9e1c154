//! Finite-difference gradient suite shared by the gradient tests and the
//! acceptance gate.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempee::attention::{mhsa_tokens, msta_map, AttentionConfig, MhsaWeights, MstaWeights};
use tempee::data::{EchoSequence, ValueSpace};
use tempee::model::{ModelConfig, Prompts, TempEE};
use tempee::sampling::PromptMask;
use tempee::tensor::{
    grad_check, grad_check_at, ConvSpec, PoolMode, Tape, Tensor, TensorError, Var,
};

pub const SEEDS: u64 = 20;
pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-3;

type R = Result<Var, TensorError>;

/// One operator check: a summary line on success, the failure otherwise.
pub type Outcome = Result<String, String>;

/// Reduces an arbitrary tensor to a scalar with fixed random weights so that
/// every output coordinate contributes a distinct sensitivity.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> R {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = Tensor::<f64>::randn(tape.shape(y), 1.0, &mut rng);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn check<F>(name: &str, shape: &[usize], f: F) -> Outcome
where
    F: Fn(&mut Tape<f64>, Var, u64) -> R,
{
    let (mut checked, mut nonsmooth, mut worst) = (0, 0, 0.0f64);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::randn(shape, 1.0, &mut rng);
        let report = grad_check(|t, v| f(t, v, seed), &x, H)
            .map_err(|e| format!("{name} seed {seed}: {e}"))?;
        if report.max_rel_error >= TOL {
            return Err(format!("{name} seed {seed}: {report:?}"));
        }
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
        nonsmooth += report.nonsmooth;
    }
    if nonsmooth * 10 > checked {
        return Err(format!(
            "{name}: {nonsmooth} kinks against {checked} checked coordinates"
        ));
    }
    Ok(format!(
        "{name}: {checked} coordinates, {nonsmooth} kinks, worst {worst:.2e}"
    ))
}

/// Panics with every failure message if any outcome failed.
pub fn assert_all(outcomes: Vec<Outcome>) {
    let failures: Vec<String> = outcomes.into_iter().filter_map(Result::err).collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

/// Every operator group followed by the toy model.
pub fn all() -> Vec<Outcome> {
    let mut out = Vec::new();
    for group in [
        elementwise_ops,
        matmul_ops,
        softmax_and_layer_norm,
        conv_ops,
        shape_ops,
        mhsa_gradient,
        msta_gradient_on_8x8x2,
    ] {
        out.extend(group());
    }
    out.push(toy_model_end_to_end());
    out
}

pub fn elementwise_ops() -> Vec<Outcome> {
    vec![
        check("add/sub/mul/scale", &[3, 4], |t, x, s| {
            let sq = t.mul(x, x)?;
            let a = t.add(sq, x)?;
            let b = t.scale(x, -0.7)?;
            let c = t.sub(a, b)?;
            project(t, c, s)
        }),
        check("relu", &[4, 5], |t, x, s| {
            let y = t.relu(x);
            project(t, y, s)
        }),
    ]
}

pub fn matmul_ops() -> Vec<Outcome> {
    vec![
        check("matmul lhs", &[3, 4], |t, x, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 100);
            let b = t.constant(Tensor::randn(&[4, 2], 1.0, &mut rng));
            let y = t.matmul(x, b)?;
            project(t, y, s)
        }),
        check("matmul rhs shared", &[4, 2], |t, x, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 100);
            let a = t.constant(Tensor::randn(&[2, 3, 4], 1.0, &mut rng));
            let y = t.matmul(a, x)?;
            project(t, y, s)
        }),
        check("matmul batched", &[2, 3, 4], |t, x, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 100);
            let b = t.constant(Tensor::randn(&[2, 4, 3], 1.0, &mut rng));
            let y = t.matmul(x, b)?;
            let z = t.matmul(y, x)?;
            project(t, z, s)
        }),
    ]
}

pub fn softmax_and_layer_norm() -> Vec<Outcome> {
    vec![
        check("softmax", &[3, 6], |t, x, s| {
            let y = t.softmax(x)?;
            project(t, y, s)
        }),
        check("layer_norm input", &[4, 6], |t, x, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 7);
            let g = t.constant(Tensor::randn(&[6], 1.0, &mut rng));
            let b = t.constant(Tensor::randn(&[6], 1.0, &mut rng));
            let y = t.layer_norm(x, g, b, 1e-5)?;
            project(t, y, s)
        }),
        check("layer_norm affine", &[6], |t, g, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 7);
            let x = t.constant(Tensor::randn(&[4, 6], 1.0, &mut rng));
            let y = t.layer_norm(x, g, g, 1e-5)?;
            project(t, y, s)
        }),
        check("add_bias", &[5], |t, b, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 7);
            let x = t.param(Tensor::randn(&[3, 5], 1.0, &mut rng));
            let y = t.add_bias(x, b)?;
            let y = t.mul(y, y)?;
            project(t, y, s)
        }),
    ]
}

pub fn conv_ops() -> Vec<Outcome> {
    let spec2 = ConvSpec {
        dims: 2,
        stride: 2,
        padding: 1,
    };
    let spec3 = ConvSpec::same(3, 3);
    vec![
        check("conv2d input", &[2, 5, 6], |t, x, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 3);
            let k = t.constant(Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng));
            let b = t.constant(Tensor::randn(&[3], 1.0, &mut rng));
            let y = t.conv(x, k, Some(b), spec2)?;
            project(t, y, s)
        }),
        check("conv2d kernel", &[3, 2, 3, 3], |t, k, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 3);
            let x = t.constant(Tensor::randn(&[2, 5, 6], 1.0, &mut rng));
            let y = t.conv(x, k, None, spec2)?;
            project(t, y, s)
        }),
        check("conv bias", &[3], |t, b, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 3);
            let x = t.constant(Tensor::randn(&[2, 5, 6], 1.0, &mut rng));
            let k = t.constant(Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng));
            let y = t.conv(x, k, Some(b), spec2)?;
            let y = t.mul(y, y)?;
            project(t, y, s)
        }),
        check("conv3d input", &[2, 3, 4, 4], |t, x, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 4);
            let k = t.constant(Tensor::randn(&[2, 2, 3, 3, 3], 1.0, &mut rng));
            let y = t.conv(x, k, None, spec3)?;
            project(t, y, s)
        }),
        check("conv3d kernel", &[2, 2, 3, 3, 3], |t, k, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 4);
            let x = t.constant(Tensor::randn(&[2, 3, 4, 4], 1.0, &mut rng));
            let y = t.conv(x, k, None, spec3)?;
            project(t, y, s)
        }),
    ]
}

pub fn shape_ops() -> Vec<Outcome> {
    vec![
        check("pool max", &[2, 4, 6], |t, x, s| {
            let y = t.pool2d(x, 2, PoolMode::Max)?;
            project(t, y, s)
        }),
        check("pool avg", &[2, 4, 6], |t, x, s| {
            let y = t.pool2d(x, 2, PoolMode::Avg)?;
            project(t, y, s)
        }),
        check("reshape/permute", &[2, 3, 4], |t, x, s| {
            let y = t.permute(x, &[2, 0, 1])?;
            let y = t.reshape(y, &[4, 6])?;
            project(t, y, s)
        }),
        check("concat", &[2, 3], |t, x, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 5);
            let other = t.param(Tensor::randn(&[2, 2], 1.0, &mut rng));
            let y = t.concat(&[other, x, x], 1)?;
            project(t, y, s)
        }),
        check("upsample", &[2, 2, 3], |t, x, s| {
            let y = t.upsample_nearest2d(x, 2)?;
            project(t, y, s)
        }),
        check("mse/mean", &[3, 3], |t, x, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 6);
            let target = Tensor::randn(&[3, 3], 1.0, &mut rng);
            let l = t.mse(x, &target)?;
            let m = t.mean(x)?;
            let m2 = t.mul(m, m)?;
            t.add(l, m2)
        }),
    ]
}

pub fn mhsa_gradient() -> Vec<Outcome> {
    let cfg = AttentionConfig {
        heads: 2,
        ..AttentionConfig::default()
    };
    vec![check("mhsa input", &[1, 6, 4], |t, x, s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s + 9);
        let w = MhsaWeights::<f64>::random(4, &mut rng).bind(t);
        let (y, _) = mhsa_tokens(t, x, &w, &cfg)?;
        project(t, y, s)
    })]
}

pub fn msta_gradient_on_8x8x2() -> Vec<Outcome> {
    let cfg = AttentionConfig {
        heads: 1,
        g: 4,
        g_prime: 2,
        ..AttentionConfig::default()
    };
    vec![
        check("msta input", &[8, 8, 2], |t, x, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 10);
            let w = MstaWeights::<f64>::random(2, &mut rng).bind(t);
            let y = msta_map(t, x, &w, &cfg)?.out;
            Ok(t.sum(y))
        }),
        check("msta weights", &[2, 2], |t, wm, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 10);
            let x = t.constant(Tensor::randn(&[8, 8, 2], 1.0, &mut rng));
            let mut w = MstaWeights::<f64>::random(2, &mut rng).bind(t);
            w.q2 = wm;
            w.k1 = wm;
            let y = msta_map(t, x, &w, &cfg)?.out;
            project(t, y, s)
        }),
    ]
}
fn toy_config() -> ModelConfig {
    ModelConfig {
        n_in: 4,
        k_out: 4,
        image_edge: 24,
        patch: 6,
        d_model: 8,
        te_blocks: 2,
        se_blocks: 1,
        tsd_blocks: 2,
        attention: AttentionConfig {
            heads: 2,
            g: 2,
            g_prime: 2,
            ..AttentionConfig::default()
        },
        ..ModelConfig::default()
    }
}

fn pixels(n: usize, seed: u64) -> EchoSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..n * 24 * 24)
        .map(|_| rng.random_range(0.0..255.0f32))
        .collect();
    EchoSequence::new(v, n, 24, 24, ValueSpace::Pixel).unwrap()
}

/// The toy network holds thousands of ReLU and max-pool switch points; the
/// smaller step keeps most of them outside the difference stencil.
const TOY_H: f64 = 1e-4;

/// Checks two random coordinates of every parameter tensor of a small
/// network through the full forward pass and MSE loss.
pub fn toy_model_end_to_end() -> Outcome {
    const COORDS: usize = 2;
    let mut worst = 0.0f64;
    let (mut checked, mut nonsmooth) = (0, 0);
    for seed in 0..SEEDS {
        let model = TempEE::<f64>::new(toy_config(), seed).map_err(|e| e.to_string())?;
        let obs = pixels(4, 100 + seed);
        let future = pixels(4, 200 + seed);
        let mask = PromptMask::from_keep((0..4).map(|i| (seed + i) % 3 == 0).collect());
        let prompts = Prompts::from_source(&future, mask).map_err(|e| e.to_string())?;
        let target = Tensor::<f64>::from_vec(
            &[4, 24, 24],
            future.values().iter().map(|&v| v as f64 / 255.0).collect(),
        )
        .map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151);
        for (name, value) in model.params().iter() {
            let f = |tape: &mut Tape<f64>, v: Var| -> R {
                let mut bound = model.params().bind(tape, false);
                bound.replace(name, v);
                let y = model
                    .forward_tape(tape, &bound, &obs, &prompts)
                    .map_err(|e| TensorError::Contract(e.to_string()))?;
                tape.mse(y, &target)
            };
            let idx: Vec<usize> = (0..COORDS)
                .map(|_| rng.random_range(0..value.numel()))
                .collect();
            let report = grad_check_at(f, value, TOY_H, &idx)
                .map_err(|e| format!("{name} seed {seed}: {e}"))?;
            if report.max_rel_error >= TOL {
                return Err(format!("{name} seed {seed}: {report:?}"));
            }
            worst = worst.max(report.max_rel_error);
            checked += report.checked;
            nonsmooth += report.nonsmooth;
        }
    }
    if nonsmooth * 10 > checked {
        return Err(format!(
            "toy model: {nonsmooth} kinks in {checked} coordinates"
        ));
    }
    Ok(format!(
        "toy model: {checked} coordinates, {nonsmooth} kinks, worst {worst:.2e}"
    ))
}
