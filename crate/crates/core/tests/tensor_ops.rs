mod common;

use std::sync::Arc;

use ccmamba::tensor::{init_params, glorot_bound, InitScheme, SparseMatrix, Tape, Tensor, Var, LAYER_NORM_EPS};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

type Op = fn(&mut Tape<f64>, &[Var]) -> ccmamba::Result<Var>;

fn check_op(name: &str, op: Op, shapes: &[&[&[usize]]], lo: f64, hi: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    for inputs in shapes {
        let tensors: Vec<Tensor<f64>> = inputs.iter().map(|s| random_tensor(&mut rng, s, lo, hi)).collect();
        let err = gradcheck(&op, &tensors, &mut rng);
        assert!(err < TOL, "{name} {inputs:?}: relative error {err:.2e}");
    }
}

#[test]
fn binary_ops_gradients() {
    check_op("matmul", |t, v| t.matmul(v[0], v[1]), &[&[&[2, 3], &[3, 4]], &[&[5, 1], &[1, 2]]], -1.0, 1.0);
    check_op("add", |t, v| t.add(v[0], v[1]), &[&[&[2, 3], &[2, 3]], &[&[4, 1], &[4, 1]]], -1.0, 1.0);
    check_op("sub", |t, v| t.sub(v[0], v[1]), &[&[&[2, 3], &[2, 3]], &[&[1, 5], &[1, 5]]], -1.0, 1.0);
    check_op("mul", |t, v| t.mul(v[0], v[1]), &[&[&[2, 3], &[2, 3]], &[&[3, 3], &[3, 3]]], -1.0, 1.0);
    check_op("add_row", |t, v| t.add_row(v[0], v[1]), &[&[&[2, 3], &[3]], &[&[4, 2], &[1, 2]]], -1.0, 1.0);
    check_op("mul_row", |t, v| t.mul_row(v[0], v[1]), &[&[&[2, 3], &[3]], &[&[4, 2], &[1, 2]]], -1.0, 1.0);
    check_op("concat", |t, v| t.concat(v), &[&[&[2, 3], &[2, 1]], &[&[3, 2], &[3, 2], &[3, 4]]], -1.0, 1.0);
}

#[test]
fn unary_ops_gradients() {
    let shapes: &[&[&[usize]]] = &[&[&[3, 4]], &[&[1, 7]]];
    check_op("scale", |t, v| Ok(t.scale(v[0], -2.5)), shapes, -1.0, 1.0);
    check_op("sum", |t, v| Ok(t.sum(v[0])), shapes, -1.0, 1.0);
    check_op("mean", |t, v| Ok(t.mean(v[0])), shapes, -1.0, 1.0);
    check_op("sum_rows", |t, v| t.sum_rows(v[0]), shapes, -1.0, 1.0);
    check_op("exp", |t, v| Ok(t.exp(v[0])), shapes, -2.0, 2.0);
    check_op("neg", |t, v| Ok(t.neg(v[0])), shapes, -1.0, 1.0);
    check_op("sigmoid", |t, v| Ok(t.sigmoid(v[0])), shapes, -4.0, 4.0);
    check_op("softplus", |t, v| Ok(t.softplus(v[0])), shapes, -4.0, 4.0);
    // kept away from the kink
    check_op("relu+", |t, v| Ok(t.relu(v[0])), shapes, 0.1, 2.0);
    check_op("relu-", |t, v| Ok(t.relu(v[0])), shapes, -2.0, -0.1);
    check_op("layer_norm", |t, v| t.layer_norm(v[0]), shapes, -2.0, 2.0);
    check_op("gather_rows", |t, v| t.gather_rows(v[0], &[2, 0, 0, 1]), &[&[&[3, 2]], &[&[3, 5]]], -1.0, 1.0);
}

#[test]
fn sparse_and_loss_gradients() {
    let m = Arc::new(SparseMatrix::from_triplets(3, 4, &[(0, 0, 1.0), (0, 3, 1.0), (1, 1, 0.5), (2, 0, 2.0)]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for cols in [1, 3] {
        let x = random_tensor(&mut rng, &[4, cols], -1.0, 1.0);
        let err = gradcheck(&|t: &mut Tape<f64>, v: &[Var]| t.spmm(&m, v[0]), &[x], &mut rng);
        assert!(err < TOL, "spmm: {err:.2e}");
    }
    for (rows, classes) in [(1, 2), (4, 3)] {
        let logits = random_tensor(&mut rng, &[rows, classes], -2.0, 2.0);
        let labels: Vec<usize> = (0..rows).map(|i| i % classes).collect();
        let err = gradcheck(&|t: &mut Tape<f64>, v: &[Var]| t.cross_entropy(v[0], &labels), &[logits], &mut rng);
        assert!(err < TOL, "cross_entropy: {err:.2e}");
    }
    // the same seed draws the same mask on every evaluation
    for shape in [[2, 3], [5, 4]] {
        let x = random_tensor(&mut rng, &shape, -1.0, 1.0);
        let f = |t: &mut Tape<f64>, v: &[Var]| t.dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(4));
        let err = gradcheck(&f, &[x], &mut rng);
        assert!(err < TOL, "dropout: {err:.2e}");
    }
}

#[test]
fn sigmoid_of_product_matches_finite_differences_closely() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = random_tensor(&mut rng, &[4, 4], -1.0, 1.0);
    let x = random_tensor(&mut rng, &[4, 1], -1.0, 1.0);
    let f = |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.matmul(v[0], v[1])?;
        let s = t.sigmoid(y);
        Ok(t.sum(s))
    };
    assert!(gradcheck(&f, &[w, x], &mut rng) < 1e-6);
}

#[test]
fn spec_examples() {
    let mut t = Tape::<f64>::new();
    let z = t.leaf(Tensor::scalar(0.0));
    let sp = t.softplus(z);
    assert!((t.value(sp).item() - 0.693147).abs() < 1e-6);
    let g = t.backward(sp).unwrap();
    assert_eq!(g.get(z).unwrap().item(), 0.5);

    let mut t = Tape::<f64>::new();
    let row = t.constant(Tensor::full(&[1, 3], 1.0));
    let n = t.layer_norm(row).unwrap();
    assert_eq!(t.value(n).data(), &[0.0, 0.0, 0.0]);
    let a = t.constant(Tensor::full(&[2, 3], 1.0));
    let b = t.constant(Tensor::full(&[3, 1], 1.0));
    let p = t.matmul(a, b).unwrap();
    assert_eq!(t.value(p).data(), &[3.0, 3.0]);

    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::scalar(3.0));
    let sq = t.mul(x, x).unwrap();
    assert_eq!(t.backward(sq).unwrap().get(x).unwrap().item(), 6.0);

    assert!(Tensor::<f64>::zeros(&[2, 2]).data().iter().all(|&v| v == 0.0));
    let g1 = init_params::<f64>(&[4, 4], InitScheme::UniformGlorot, 0);
    assert_eq!(g1, init_params::<f64>(&[4, 4], InitScheme::UniformGlorot, 0));
    let big = init_params::<f64>(&[100, 100], InitScheme::UniformGlorot, 1);
    let bound = (6.0f64 / 200.0).sqrt();
    assert!((glorot_bound(100, 100) - bound).abs() < 1e-15);
    assert!(big.data().iter().all(|v| v.abs() <= bound));
}

proptest! {
    #[test]
    fn layer_norm_rows_are_standardized(rows in 1usize..5, cols in 2usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[rows, cols], -10.0, 10.0);
        let mut t = Tape::<f64>::new();
        let v = t.constant(x.clone());
        let n = t.layer_norm(v).unwrap();
        for (i, row) in t.value(n).to_rows().iter().enumerate() {
            let src = x.row(i);
            let mu = src.iter().sum::<f64>() / cols as f64;
            let var = src.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / cols as f64;
            let mean = row.iter().sum::<f64>() / cols as f64;
            let out_var = row.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / cols as f64;
            prop_assert!(mean.abs() < 1e-9);
            // the eps-guarded denominator scales the variance by var / (var + eps)
            prop_assert!((out_var - var / (var + LAYER_NORM_EPS)).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>()) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);
            let x = random_tensor(&mut rng, &[2, 3], -1.0, 1.0);
            let mut t = Tape::<f64>::new();
            let (w, x) = (t.leaf(w), t.leaf(x));
            let y = t.matmul(x, w).unwrap();
            let y = t.layer_norm(y).unwrap();
            let y = t.dropout(y, 0.2, true, &mut rng).unwrap();
            t.value(y).clone()
        };
        prop_assert_eq!(run(), run());
    }
}
