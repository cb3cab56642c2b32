mod common;

use std::sync::Arc;

use ccmamba::complex::CombinatorialComplex;
use ccmamba::layer::{
    build_sequence, inter_rank_aggregate, intra_rank_update, layer_forward, readout, LayerConfig, LayerParams, Operators,
    RankedFeatures, RankedVars, ReadoutLevel, ScanOrder,
};
use ccmamba::lifting::{lift, Graph, LiftMode};
use ccmamba::model::{CcMamba, ModelConfig};
use ccmamba::ssm::mamba_block;
use ccmamba::tensor::{Binding, ParamStore, SparseMatrix, Tape, Tensor};
use ccmamba::trainer::random_graph;
use ccmamba::Error;
use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const WIDTH: usize = 4;

fn config(bidirectional: bool) -> LayerConfig {
    LayerConfig { bidirectional, dropout: 0.2, scan_order: ScanOrder::Content }
}

fn layer(seed: u64) -> (ParamStore<f64>, LayerParams) {
    let mut store = ParamStore::new();
    let params = LayerParams::init(&mut store, "l", WIDTH, 2, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (store, params)
}

fn random_features(cc: &CombinatorialComplex, rng: &mut ChaCha8Rng) -> RankedFeatures<f64> {
    let [n0, n1, n2] = cc.counts();
    RankedFeatures {
        h0: random_tensor(rng, &[n0, WIDTH], -1.0, 1.0),
        h1: random_tensor(rng, &[n1, WIDTH], -1.0, 1.0),
        h2: random_tensor(rng, &[n2, WIDTH], -1.0, 1.0),
    }
}

fn eval_layer(
    cc: &CombinatorialComplex,
    store: &ParamStore<f64>,
    params: &LayerParams,
    feats: &RankedFeatures<f64>,
    cfg: &LayerConfig,
) -> RankedFeatures<f64> {
    let ops = Operators::new(cc);
    let mut tape = Tape::new();
    let vars = store.bind_constant(&mut tape);
    let fv = feats.constants(&mut tape);
    let out = layer_forward(&mut tape, &ops, &fv, params, &vars, cfg, None).unwrap();
    RankedFeatures::from_tape(&tape, &out)
}

fn filled_triangle() -> CombinatorialComplex {
    lift(&Graph::complete(3), LiftMode::Simplicial, 6).unwrap()
}

#[test]
fn sequence_examples() {
    let cc = filled_triangle();
    let ops = Operators::<f64>::new(&cc);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let feats = random_features(&cc, &mut rng);
    let mut tape = Tape::new();
    let fv = feats.constants(&mut tape);
    let s2 = build_sequence(&mut tape, &ops, 2, &fv).unwrap();
    let row = tape.value(s2).row(0).to_vec();
    assert_eq!(&row[..WIDTH], feats.h2.row(0));
    for j in 0..WIDTH {
        let edge_sum: f64 = (0..3).map(|e| feats.h1.at(e, j)).sum();
        assert!((row[WIDTH + j] - edge_sum).abs() < 1e-15);
    }

    // no faces: the last block of every edge row is zero
    let tri = lift(&Graph::cycle(3), LiftMode::Graph, 6).unwrap();
    let ops = Operators::<f64>::new(&tri);
    let feats = random_features(&tri, &mut rng);
    let mut tape = Tape::new();
    let fv = feats.constants(&mut tape);
    let s1 = build_sequence(&mut tape, &ops, 1, &fv).unwrap();
    assert_eq!(tape.shape(s1), &[3, 3 * WIDTH]);
    assert!(tape.value(s1).to_rows().iter().all(|r| r[2 * WIDTH..].iter().all(|&v| v == 0.0)));

    // path 0-1-2 with unit edge features: the middle node sees two edges
    let path = lift(&Graph::path(3), LiftMode::Graph, 6).unwrap();
    let ops = Operators::<f64>::new(&path);
    let mut tape = Tape::new();
    let fv = RankedFeatures {
        h0: Tensor::zeros(&[3, WIDTH]),
        h1: Tensor::full(&[2, WIDTH], 1.0),
        h2: Tensor::zeros(&[0, WIDTH]),
    }
    .constants(&mut tape);
    let s0 = build_sequence(&mut tape, &ops, 0, &fv).unwrap();
    let slots: Vec<f64> = (0..3).map(|i| tape.value(s0).at(i, WIDTH)).collect();
    assert_eq!(slots, vec![1.0, 2.0, 1.0]);

    let bad = RankedFeatures { h0: Tensor::zeros(&[2, WIDTH]), h1: Tensor::zeros(&[2, WIDTH]), h2: Tensor::zeros(&[0, WIDTH]) };
    let fv = bad.constants(&mut tape);
    assert!(matches!(build_sequence(&mut tape, &ops, 0, &fv), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn empty_rank_gives_empty_update() {
    let cc = lift(&Graph::path(4), LiftMode::Graph, 6).unwrap();
    let (store, params) = layer(1);
    let feats = random_features(&cc, &mut ChaCha8Rng::seed_from_u64(1));
    let ops = Operators::new(&cc);
    let mut tape = Tape::new();
    let vars = store.bind_constant(&mut tape);
    let fv = feats.constants(&mut tape);
    let intra = intra_rank_update(&mut tape, &ops, &fv, &params, &vars, &config(true)).unwrap();
    assert_eq!(tape.shape(intra.h[2]), &[0, WIDTH]);
    assert_eq!(eval_layer(&cc, &store, &params, &feats, &config(true)).h2.shape(), &[0, WIDTH]);
}

#[test]
fn zero_input_and_zero_biases_give_zero_update() {
    let cc = filled_triangle();
    let (mut store, params) = layer(2);
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with(".b") || store.name(id).ends_with("b_a") || store.name(id).ends_with("b_delta") {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }
    let zero = RankedFeatures { h0: Tensor::zeros(&[3, WIDTH]), h1: Tensor::zeros(&[3, WIDTH]), h2: Tensor::zeros(&[1, WIDTH]) };
    let ops = Operators::new(&cc);
    let mut tape = Tape::new();
    let vars = store.bind_constant(&mut tape);
    let fv = zero.constants(&mut tape);
    let intra = intra_rank_update(&mut tape, &ops, &fv, &params, &vars, &config(true)).unwrap();
    let got = RankedFeatures::from_tape(&tape, &intra);
    for k in 0..3 {
        assert!(got.get(k).data().iter().all(|&v| v == 0.0), "rank {k}");
    }
}

#[test]
fn single_node_update_replays_outside_the_layer() {
    let cc = CombinatorialComplex::build(1, []).unwrap();
    let (store, params) = layer(3);
    let feats = random_features(&cc, &mut ChaCha8Rng::seed_from_u64(3));
    let ops = Operators::new(&cc);
    let mut tape = Tape::new();
    let vars = store.bind_constant(&mut tape);
    let fv = feats.constants(&mut tape);
    let intra = intra_rank_update(&mut tape, &ops, &fv, &params, &vars, &config(true)).unwrap();

    let p = &params.ranks[0];
    let mut replay = Tape::new();
    let rv = store.bind_constant(&mut replay);
    let h0 = replay.constant(feats.h0.clone());
    let pad = replay.constant(Tensor::zeros(&[1, WIDTH]));
    let row = replay.concat(&[h0, pad]).unwrap();
    let proj = p.seq.apply(&mut replay, &rv, row).unwrap();
    let scanned = mamba_block(&mut replay, proj, &p.ssm, &rv, true).unwrap();
    let out = p.mlp.apply(&mut replay, &rv, scanned).unwrap();
    assert_eq!(tape.value(intra.h[0]), replay.value(out));
}

fn aggregate_row(
    store: &ParamStore<f64>,
    params: &LayerParams,
    rank: usize,
    prev: &[f64],
    total: &[f64],
) -> Vec<f64> {
    let p = &params.ranks[rank];
    let mut tape = Tape::new();
    let vars: Binding = store.bind_constant(&mut tape);
    let prev = tape.constant(Tensor::matrix(1, WIDTH, prev.to_vec()).unwrap());
    let total = tape.constant(Tensor::matrix(1, WIDTH, total.to_vec()).unwrap());
    let msg = p.agg.apply(&mut tape, &vars, total).unwrap();
    let joined = tape.concat(&[prev, msg]).unwrap();
    let out = p.update.apply(&mut tape, &vars, joined).unwrap();
    tape.value(out).data().to_vec()
}

fn aggregate(
    cc: &CombinatorialComplex,
    store: &ParamStore<f64>,
    params: &LayerParams,
    intra: &RankedFeatures<f64>,
    prev: &RankedFeatures<f64>,
) -> RankedFeatures<f64> {
    let ops = Operators::new(cc);
    aggregate_with(&ops, store, params, intra, prev)
}

fn aggregate_with(
    ops: &Operators<f64>,
    store: &ParamStore<f64>,
    params: &LayerParams,
    intra: &RankedFeatures<f64>,
    prev: &RankedFeatures<f64>,
) -> RankedFeatures<f64> {
    let mut tape = Tape::new();
    let vars = store.bind_constant(&mut tape);
    let iv = intra.constants(&mut tape);
    let pv = prev.constants(&mut tape);
    let out = inter_rank_aggregate(&mut tape, ops, &iv, &pv, params, &vars).unwrap();
    RankedFeatures::from_tape(&tape, &out)
}

#[test]
fn isolated_node_aggregates_only_itself() {
    // vertex 2 has no incident edge
    let cc = CombinatorialComplex::build(3, [(vec![0, 1], 1)]).unwrap();
    let (store, params) = layer(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let intra = random_features(&cc, &mut rng);
    let prev = random_features(&cc, &mut rng);
    let out = aggregate(&cc, &store, &params, &intra, &prev);
    assert_eq!(out.h0.row(2), aggregate_row(&store, &params, 0, prev.h0.row(2), intra.h0.row(2)).as_slice());
}

#[test]
fn edge_of_filled_triangle_sums_nodes_face_and_self() {
    let cc = filled_triangle();
    let (store, params) = layer(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let intra = random_features(&cc, &mut rng);
    let prev = random_features(&cc, &mut rng);
    let out = aggregate(&cc, &store, &params, &intra, &prev);
    let e = cc.index_of(&[0, 1], 1).unwrap();
    let total: Vec<f64> =
        (0..WIDTH).map(|j| intra.h1.at(e, j) + intra.h0.at(0, j) + intra.h0.at(1, j) + intra.h2.at(0, j)).collect();
    let expect = aggregate_row(&store, &params, 1, prev.h1.row(e), &total);
    for (a, b) in out.h1.row(e).iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn shuffled(m: &SparseMatrix<f64>, rng: &mut ChaCha8Rng) -> Arc<SparseMatrix<f64>> {
    let mut t = m.triplets();
    t.shuffle(rng);
    Arc::new(SparseMatrix::from_triplets(m.rows(), m.cols(), &t).unwrap())
}

#[test]
fn eval_output_ignores_dropout_rate() {
    let cc = lift(&Graph::cycle(5), LiftMode::Cellular, 6).unwrap();
    let (store, params) = layer(6);
    let feats = random_features(&cc, &mut ChaCha8Rng::seed_from_u64(6));
    let a = eval_layer(&cc, &store, &params, &feats, &LayerConfig { dropout: 0.0, ..config(true) });
    let b = eval_layer(&cc, &store, &params, &feats, &LayerConfig { dropout: 0.9, ..config(true) });
    assert_eq!(a, b);
    assert_eq!(a, eval_layer(&cc, &store, &params, &feats, &LayerConfig { dropout: 0.0, ..config(true) }));
}

#[test]
fn training_mode_applies_dropout() {
    let cc = lift(&Graph::cycle(5), LiftMode::Cellular, 6).unwrap();
    let (store, params) = layer(6);
    let feats = random_features(&cc, &mut ChaCha8Rng::seed_from_u64(6));
    let ops = Operators::new(&cc);
    let run = |seed: u64| {
        let mut tape = Tape::new();
        let vars = store.bind_constant(&mut tape);
        let fv = feats.constants(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = layer_forward(&mut tape, &ops, &fv, &params, &vars, &config(true), Some(&mut rng)).unwrap();
        RankedFeatures::from_tape(&tape, &out)
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), eval_layer(&cc, &store, &params, &feats, &config(true)));
}

#[test]
fn readout_examples() {
    let mut tape = Tape::<f64>::new();
    let v = [0.5, -2.0, 3.0, 1.0];
    let single = RankedFeatures {
        h0: Tensor::matrix(1, WIDTH, v.to_vec()).unwrap(),
        h1: Tensor::zeros(&[0, WIDTH]),
        h2: Tensor::zeros(&[0, WIDTH]),
    };
    let fv = single.constants(&mut tape);
    let r = readout(&mut tape, &fv, ReadoutLevel::Graph).unwrap();
    let mut expect = v.to_vec();
    expect.resize(3 * WIDTH, 0.0);
    assert_eq!(tape.value(r).data(), expect.as_slice());
    let n = readout(&mut tape, &fv, ReadoutLevel::Node).unwrap();
    assert_eq!(tape.value(n).data(), &v);

    let empty = RankedFeatures { h0: Tensor::zeros(&[0, WIDTH]), h1: Tensor::zeros(&[0, WIDTH]), h2: Tensor::zeros(&[0, WIDTH]) };
    let ev = empty.constants(&mut tape);
    assert!(matches!(readout(&mut tape, &ev, ReadoutLevel::Graph), Err(Error::EmptyComplex)));
    assert!(matches!(readout(&mut tape, &ev, ReadoutLevel::Node), Err(Error::EmptyComplex)));
}

fn graph_readout(feats: &RankedFeatures<f64>) -> Vec<f64> {
    let mut tape = Tape::new();
    let fv = feats.constants(&mut tape);
    let r = readout(&mut tape, &fv, ReadoutLevel::Graph).unwrap();
    tape.value(r).data().to_vec()
}

fn map_rows(feats: &RankedFeatures<f64>, mut f: impl FnMut(Vec<Vec<f64>>) -> Vec<Vec<f64>>) -> RankedFeatures<f64> {
    let mut apply = |t: &Tensor<f64>| {
        let rows = f(t.to_rows());
        if rows.is_empty() {
            Tensor::zeros(&[0, t.cols()])
        } else {
            Tensor::from_rows(&rows).unwrap()
        }
    };
    let (h0, h1, h2) = (apply(&feats.h0), apply(&feats.h1), apply(&feats.h2));
    RankedFeatures { h0, h1, h2 }
}

/// Smallest row variance entering the first normalization of every rank.
fn min_norm_input_variance(
    cc: &CombinatorialComplex,
    store: &ParamStore<f64>,
    params: &LayerParams,
    feats: &RankedFeatures<f64>,
    cfg: &LayerConfig,
) -> f64 {
    let ops = Operators::new(cc);
    let mut tape = Tape::new();
    let vars = store.bind_constant(&mut tape);
    let fv = feats.constants(&mut tape);
    let intra = intra_rank_update(&mut tape, &ops, &fv, params, &vars, cfg).unwrap();
    let next = inter_rank_aggregate(&mut tape, &ops, &intra, &fv, params, &vars).unwrap();
    let mut min = f64::MAX;
    for k in 0..3 {
        let s = tape.add(next.h[k], intra.h[k]).unwrap();
        for row in tape.value(s).to_rows() {
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            min = min.min(row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64);
        }
    }
    min
}

#[test]
fn layer_gradients_match_finite_differences() {
    let cc = lift(&Graph::cycle(4), LiftMode::Cellular, 6).unwrap();
    assert_eq!(cc.counts(), [4, 4, 1]);
    // At width 4 with zero biases, relus often die for a whole row; layer
    // norm maps the zero row to zero and the next relu sits on its kink.
    // These seeds give instances clear of that.
    for (seed, bidirectional) in [(3, false), (3, true), (6, false), (6, true)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (store, params) = layer(seed);
        let feats = random_features(&cc, &mut rng);
        let ops = Operators::new(&cc);
        let cfg = config(bidirectional);
        let var = min_norm_input_variance(&cc, &store, &params, &feats, &cfg);
        assert!(var > 1e-4, "degenerate instance: row variance {var:.1e}");
        let f = |tape: &mut Tape<f64>, vars: &Binding| {
            let fv: RankedVars = feats.constants(tape);
            let out = layer_forward(tape, &ops, &fv, &params, vars, &cfg, None)?;
            readout(tape, &out, ReadoutLevel::Graph)
        };
        let (tensorwise, entrywise) = params_gradcheck(&store, &f, &mut rng);
        assert!(tensorwise < 1e-4, "seed {seed} bidirectional={bidirectional}: norm-wise {tensorwise:.2e}");
        assert!(entrywise < 1e-4, "seed {seed} bidirectional={bidirectional}: entry-wise {entrywise:.2e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn aggregation_ignores_neighbor_enumeration_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cc = lift(&random_graph(&mut rng, 8), LiftMode::Simplicial, 6).unwrap();
        let (store, params) = layer(seed);
        let intra = random_features(&cc, &mut rng);
        let prev = random_features(&cc, &mut rng);
        let ops = Operators::<f64>::new(&cc);
        let mixed = Operators {
            counts: ops.counts,
            b1: shuffled(&ops.b1, &mut rng),
            b1t: shuffled(&ops.b1t, &mut rng),
            b2: shuffled(&ops.b2, &mut rng),
            b2t: shuffled(&ops.b2t, &mut rng),
        };
        prop_assert_eq!(
            aggregate_with(&ops, &store, &params, &intra, &prev),
            aggregate_with(&mixed, &store, &params, &intra, &prev)
        );
    }

    #[test]
    fn graph_readout_is_additive_and_order_free(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cc = lift(&random_graph(&mut rng, 8), LiftMode::Cellular, 6).unwrap();
        let feats = random_features(&cc, &mut rng);
        let base = graph_readout(&feats);
        let doubled = graph_readout(&map_rows(&feats, |rows| rows.iter().chain(&rows).cloned().collect()));
        prop_assert_eq!(doubled, base.iter().map(|v| 2.0 * v).collect::<Vec<_>>());
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let permuted = map_rows(&feats, |mut rows| {
            rows.shuffle(&mut shuffle_rng);
            rows
        });
        prop_assert_eq!(graph_readout(&permuted), base);
    }

    #[test]
    fn zero_weights_give_zero_readout(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cc = lift(&random_graph(&mut rng, 7), LiftMode::Cellular, 6).unwrap();
        let mut model = CcMamba::<f64>::new(ModelConfig { hidden: 4, state_dim: 2, ..ModelConfig::default() }, 2, 2, seed).unwrap();
        let store = model.params_mut();
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let x = random_tensor(&mut rng, &[cc.vertex_count(), 2], -1.0, 1.0);
        prop_assert!(model.embed(&cc, &x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stacked_layers_keep_shapes(seed in any::<u64>(), layers in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cc = lift(&random_graph(&mut rng, 7), LiftMode::Cellular, 6).unwrap();
        let config = ModelConfig { hidden: 4, state_dim: 2, layers, ..ModelConfig::default() };
        let model = CcMamba::<f64>::new(config, 2, 2, seed).unwrap();
        let x = random_tensor(&mut rng, &[cc.vertex_count(), 2], -1.0, 1.0);
        let out = model.layer_outputs(&cc, &x).unwrap();
        for k in 0..3 {
            prop_assert_eq!(out.get(k).shape(), &[cc.count(k), 4]);
            prop_assert!(out.get(k).is_finite());
        }
        prop_assert_eq!(model.layer_outputs(&cc, &x).unwrap(), out);
    }
}
