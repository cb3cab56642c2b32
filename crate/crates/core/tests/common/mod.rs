#![allow(dead_code)]

use ccmamba::complex::CombinatorialComplex;
use ccmamba::error::Result;
use ccmamba::layer::Operators;
use ccmamba::lifting::{lift, Graph, LiftMode};
use ccmamba::model::CcMamba;
use ccmamba::tensor::{Binding, ParamStore, Tape, Tensor, Var};
use ccmamba::trainer::init_features;
use rand::seq::SliceRandom;
use rand::Rng;

pub const FD_EPS: f64 = 1e-5;

/// Gradients smaller than this (times `max(1, |loss|)`, since the roundoff
/// of a difference quotient grows with the loss) are compared on an
/// absolute scale.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_floor(analytic, numeric, GRAD_FLOOR)
}

fn rel_err_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn floor_for(loss: f64) -> f64 {
    GRAD_FLOOR * loss.abs().max(1.0)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Fourth-order central difference `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`.
/// The truncation error is O(h⁴), so strongly curved losses still compare
/// at the default step.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    let near = f(x + h) - f(x - h);
    let far = f(x + 2.0 * h) - f(x - 2.0 * h);
    (8.0 * near - far) / (12.0 * h)
}

/// Contracts `out` with fixed weights so every output entry reaches the loss.
fn contract(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

/// Largest relative error between the tape gradient and [`central_diff`] of `Σ w ⊙ f(inputs)` over every input entry.
pub fn gradcheck(
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<f64>],
    rng: &mut impl Rng,
) -> f64 {
    let mut probe = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let out = f(&mut probe, &vars).unwrap();
    let weights = random_tensor(rng, probe.shape(out), -1.0, 1.0);

    let value = |ins: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        let loss = contract(&mut tape, out, &weights).unwrap();
        tape.value(loss).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let loss = contract(&mut tape, out, &weights).unwrap();
    let floor = floor_for(tape.value(loss).item());
    let grads = tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    let mut ins = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let g = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let x = inputs[k].data()[i];
            let numeric = central_diff(
                |xi| {
                    ins[k].data_mut()[i] = xi;
                    value(&ins)
                },
                x,
                FD_EPS,
            );
            ins[k].data_mut()[i] = x;
            worst = worst.max(rel_err_floor(g.data()[i], numeric, floor));
        }
    }
    worst
}

/// Gradient check of `Σ w ⊙ f(params)` over every entry of `store`.
/// Returns the worst norm-wise error `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞, floor)`
/// over parameter tensors and the worst entry-wise relative error.
pub fn params_gradcheck(
    store: &ParamStore<f64>,
    f: &dyn Fn(&mut Tape<f64>, &Binding) -> Result<Var>,
    rng: &mut impl Rng,
) -> (f64, f64) {
    let mut probe = Tape::new();
    let vars = store.bind_constant(&mut probe);
    let out = f(&mut probe, &vars).unwrap();
    let weights = random_tensor(rng, probe.shape(out), -1.0, 1.0);
    let eval = |s: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let vars = s.bind_constant(&mut tape);
        let out = f(&mut tape, &vars).unwrap();
        let loss = contract(&mut tape, out, &weights).unwrap();
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let out = f(&mut tape, &vars).unwrap();
    let loss = contract(&mut tape, out, &weights).unwrap();
    let floor = floor_for(tape.value(loss).item());
    let grads = tape.backward(loss).unwrap();

    let mut work = store.clone();
    let ids: Vec<_> = store.ids().collect();
    let (mut tensorwise, mut entrywise) = (0.0f64, 0.0f64);
    for (id, var) in ids.into_iter().zip(vars.vars()) {
        let g = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for i in 0..store.get(id).len() {
            let x0 = store.get(id).data()[i];
            let numeric = central_diff(
                |xi| {
                    work.get_mut(id).data_mut()[i] = xi;
                    eval(&work)
                },
                x0,
                FD_EPS,
            );
            work.get_mut(id).data_mut()[i] = x0;
            let analytic = g.data()[i];
            entrywise = entrywise.max(rel_err_floor(analytic, numeric, floor));
            diff = diff.max((analytic - numeric).abs());
            scale = scale.max(numeric.abs()).max(analytic.abs());
        }
        tensorwise = tensorwise.max(diff / scale.max(floor));
    }
    (tensorwise, entrywise)
}

/// [`params_gradcheck`] of the model logits on one complex.
pub fn model_gradcheck(model: &CcMamba<f64>, cc: &CombinatorialComplex, x: &Tensor<f64>, rng: &mut impl Rng) -> (f64, f64) {
    let ops = Operators::new(cc);
    let inputs = init_features(cc, x).unwrap();
    let f = |tape: &mut Tape<f64>, vars: &Binding| Ok(model.forward(tape, vars, &ops, &inputs, None)?.logits);
    params_gradcheck(model.params(), &f, rng)
}

pub fn filled_triangle_pair() -> CombinatorialComplex {
    let g = Graph::complete(3).disjoint_union(&Graph::complete(3));
    lift(&g, LiftMode::Simplicial, 6).unwrap()
}

pub fn random_perm(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Disjoint union of cycles with the given lengths.
pub fn cycle_union(lengths: &[usize]) -> Graph {
    lengths
        .iter()
        .fold(Graph::new(0, []).unwrap(), |g, &n| g.disjoint_union(&Graph::cycle(n)))
}

/// Random split of `n ≥ 3` into parts of size at least 3.
pub fn random_cycle_lengths(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut parts = Vec::new();
    let mut left = n;
    while left >= 6 && rng.gen_bool(0.5) {
        let k = rng.gen_range(3..=left - 3);
        parts.push(k);
        left -= k;
    }
    parts.push(left);
    parts
}

/// Rows of every rank sorted lexicographically, for comparing outputs up
/// to a permutation of cells.
pub fn sorted_rows(t: &Tensor<f64>) -> Vec<Vec<u64>> {
    let mut rows: Vec<Vec<u64>> = t.to_rows().into_iter().map(|r| r.into_iter().map(f64::to_bits).collect()).collect();
    rows.sort();
    rows
}
