//! Finite-difference checks for every differentiable tape operator.

#[path = "support/grad_suite.rs"]
mod grad_suite;

use grad_suite::{assert_all, H};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempee::attention::{msta_map, AttentionConfig, MstaWeights};
use tempee::tensor::{grad_check, Tape, Tensor, TensorError};

#[test]
fn quadratic_gradient() {
    let x = Tensor::<f64>::from_vec(&[1], vec![3.0]).unwrap();
    let report = grad_check(
        |t, v| {
            let sq = t.mul(v, v)?;
            Ok(t.sum(sq))
        },
        &x,
        H,
    )
    .unwrap();
    assert!((report.analytic - 6.0).abs() < 1e-12);
    assert!(report.max_rel_error < 1e-6);
}

#[test]
fn kinks_are_detected_not_scored() {
    // |x| at 0 has no derivative; the analytic side reports 0 from the ReLU pair
    let x = Tensor::<f64>::from_vec(&[2], vec![0.0, 1.5]).unwrap();
    let report = grad_check(
        |t, v| {
            let pos = t.relu(v);
            let neg = t.scale(v, -1.0)?;
            let neg = t.relu(neg);
            let abs = t.add(pos, neg)?;
            Ok(t.sum(abs))
        },
        &x,
        H,
    )
    .unwrap();
    assert_eq!(report.nonsmooth, 1);
    assert_eq!(report.checked, 1);
    assert!(report.max_rel_error < 1e-9);
}

#[test]
fn softmax_sum_has_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::<f64>::randn(&[3, 5], 1.0, &mut rng);
    let mut tape = Tape::new();
    let v = tape.param(x);
    let s = tape.softmax(v).unwrap();
    let y = tape.sum(s);
    tape.backward(y).unwrap();
    assert!(tape.grad(v).unwrap().iter().all(|g| g.abs() < 1e-12));
}

#[test]
fn non_scalar_function_is_a_contract_error() {
    let x = Tensor::<f64>::zeros(&[2]);
    let err = grad_check(|t, v| t.scale(v, 2.0), &x, H).unwrap_err();
    assert!(matches!(err, TensorError::Contract(_)));
    let err = grad_check(|t, v| Ok(t.sum(v)), &x, 1e-6).unwrap_err();
    assert!(matches!(err, TensorError::Config(_)));
}

#[test]
fn elementwise_ops() {
    assert_all(grad_suite::elementwise_ops());
}

#[test]
fn matmul_ops() {
    assert_all(grad_suite::matmul_ops());
}

#[test]
fn softmax_and_layer_norm() {
    assert_all(grad_suite::softmax_and_layer_norm());
}

#[test]
fn conv_ops() {
    assert_all(grad_suite::conv_ops());
}

#[test]
fn shape_ops() {
    assert_all(grad_suite::shape_ops());
}

#[test]
fn mhsa_gradient() {
    assert_all(grad_suite::mhsa_gradient());
}

#[test]
fn msta_gradient_on_8x8x2() {
    assert_all(grad_suite::msta_gradient_on_8x8x2());
}

#[test]
fn backward_leaves_forward_values_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = AttentionConfig {
        heads: 2,
        g: 4,
        g_prime: 2,
        ..AttentionConfig::default()
    };
    let mut tape = Tape::<f32>::new();
    let w = MstaWeights::random(4, &mut rng).bind(&mut tape);
    let x = tape.param(Tensor::randn(&[8, 8, 4], 1.0, &mut rng));
    let y = msta_map(&mut tape, x, &w, &cfg).unwrap().out;
    let loss = tape.sum(y);
    let before: Vec<u64> = tape.vars().map(|v| tape.value(v).checksum()).collect();
    tape.backward(loss).unwrap();
    let after: Vec<u64> = tape.vars().map(|v| tape.value(v).checksum()).collect();
    assert_eq!(before, after);
    assert!(tape.grad(x).is_some());
}

#[test]
fn toy_model_end_to_end() {
    let summary = grad_suite::toy_model_end_to_end().unwrap();
    println!("{summary}");
}
