//! One message-passing layer over a combinatorial complex of rank ≤ 2.
//!
//! Every rank is turned into a sequence whose rows concatenate a cell's own
//! features with incidence sums from the adjacent ranks. A selective block
//! filters each sequence, then cells exchange the filtered features with
//! their incidence neighbors and go through a residual/normalization stage.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complex::CombinatorialComplex;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::ssm::{mamba_block, SsmParams, SsmShape};
use crate::tensor::{glorot, Binding, ParamId, ParamStore, SparseMatrix, Tape, Tensor, Var};

/// Features of every rank: `h0` is `|V|×d`, `h1` is `|E|×d`, `h2` is `|F|×d`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedFeatures<S> {
    pub h0: Tensor<S>,
    pub h1: Tensor<S>,
    pub h2: Tensor<S>,
}

impl<S: Scalar> RankedFeatures<S> {
    pub fn get(&self, rank: usize) -> &Tensor<S> {
        match rank {
            0 => &self.h0,
            1 => &self.h1,
            _ => &self.h2,
        }
    }

    pub fn width(&self) -> usize {
        self.h0.cols()
    }

    /// Records the three matrices as constants.
    pub fn constants(&self, tape: &mut Tape<S>) -> RankedVars {
        RankedVars {
            h: [
                tape.constant(self.h0.clone()),
                tape.constant(self.h1.clone()),
                tape.constant(self.h2.clone()),
            ],
        }
    }

    pub fn from_tape(tape: &Tape<S>, vars: &RankedVars) -> Self {
        Self {
            h0: tape.value(vars.h[0]).clone(),
            h1: tape.value(vars.h[1]).clone(),
            h2: tape.value(vars.h[2]).clone(),
        }
    }
}

/// Tape handles of per-rank features.
#[derive(Clone, Copy, Debug)]
pub struct RankedVars {
    pub h: [Var; 3],
}

/// Sparse incidence operators of one complex, built once and shared.
#[derive(Clone, Debug)]
pub struct Operators<S> {
    pub counts: [usize; 3],
    /// `|V|×|E|`
    pub b1: Arc<SparseMatrix<S>>,
    pub b1t: Arc<SparseMatrix<S>>,
    /// `|E|×|F|`
    pub b2: Arc<SparseMatrix<S>>,
    pub b2t: Arc<SparseMatrix<S>>,
}

impl<S: Scalar> Operators<S> {
    pub fn new(cc: &CombinatorialComplex) -> Self {
        let b1 = SparseMatrix::from_incidence(cc.b1());
        let b2 = SparseMatrix::from_incidence(cc.b2());
        Self {
            counts: cc.counts(),
            b1t: Arc::new(b1.transpose()),
            b2t: Arc::new(b2.transpose()),
            b1: Arc::new(b1),
            b2: Arc::new(b2),
        }
    }
}

/// How the cells of one rank are ordered before scanning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanOrder {
    /// Rows sorted lexicographically by value. Cells whose rows are equal
    /// receive the mean of their scan outputs, so the result does not depend
    /// on vertex names.
    #[default]
    Content,
    /// Canonical cell order of the complex.
    Canonical,
}

/// Gather order for a sequence plus the map back to cell order.
#[derive(Clone, Debug)]
pub struct ScanPlan<S> {
    pub order: Vec<usize>,
    /// `cells × positions`; `None` when `order` is the identity.
    pub unsort: Option<Arc<SparseMatrix<S>>>,
}

fn cmp_rows<S: Scalar>(a: &[S], b: &[S]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.as_f64().total_cmp(&y.as_f64()) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

pub fn scan_plan<S: Scalar>(rows: &Tensor<S>, mode: ScanOrder) -> ScanPlan<S> {
    let t = rows.rows();
    if mode == ScanOrder::Canonical {
        return ScanPlan { order: (0..t).collect(), unsort: None };
    }
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&i, &j| cmp_rows(rows.row(i), rows.row(j)));
    let mut triplets = Vec::with_capacity(t);
    let mut lo = 0;
    while lo < t {
        let mut hi = lo + 1;
        while hi < t && cmp_rows(rows.row(order[lo]), rows.row(order[hi])) == Ordering::Equal {
            hi += 1;
        }
        let w = S::one() / S::lit((hi - lo) as f64);
        for &cell in &order[lo..hi] {
            for p in lo..hi {
                triplets.push((cell, p, w));
            }
        }
        lo = hi;
    }
    let unsort = SparseMatrix::from_triplets(t, t, &triplets).expect("plan entries in range");
    ScanPlan { order, unsort: Some(Arc::new(unsort)) }
}

/// Affine map `x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), glorot(&[fan_in, fan_out], rng))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
        Ok(Self { w, b })
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, vars: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul(x, vars[self.w])?;
        tape.add_row(y, vars[self.b])
    }
}

/// Two affine maps with a relu between them.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        dims: [usize; 3],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            first: Linear::init(store, &format!("{name}.0"), dims[0], dims[1], rng)?,
            second: Linear::init(store, &format!("{name}.1"), dims[1], dims[2], rng)?,
        })
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, vars: &Binding, x: Var) -> Result<Var> {
        let h = self.first.apply(tape, vars, x)?;
        let h = tape.relu(h);
        self.second.apply(tape, vars, h)
    }
}

/// Layer normalization followed by a learned gain and shift.
#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[width], S::one()))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[width]))?,
        })
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, vars: &Binding, x: Var) -> Result<Var> {
        let n = tape.layer_norm(x)?;
        let n = tape.mul_row(n, vars[self.gamma])?;
        tape.add_row(n, vars[self.beta])
    }
}

/// Parameters attached to one rank of one layer.
#[derive(Clone, Debug)]
pub struct RankParams {
    /// Projects the concatenated sequence row back to width `d`.
    pub seq: Linear,
    pub ssm: SsmParams,
    pub mlp: Mlp,
    pub agg: Mlp,
    pub update: Mlp,
    pub ffn: Mlp,
    pub norm1: Norm,
    pub norm2: Norm,
}

/// Behavior switches shared by all layers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerConfig {
    pub bidirectional: bool,
    pub dropout: f64,
    pub scan_order: ScanOrder,
}

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub width: usize,
    pub ranks: [RankParams; 3],
}

/// Number of `d`-wide blocks in the rank-`k` sequence row.
pub fn sequence_blocks(rank: usize) -> usize {
    if rank == 1 {
        3
    } else {
        2
    }
}

impl LayerParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        width: usize,
        state_dim: usize,
        expand: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let d = width;
        let mut rank = |k: usize, rng: &mut ChaCha8Rng| -> Result<RankParams> {
            let p = format!("{name}.r{k}");
            let shape = SsmShape { d_model: d, state_dim, expand };
            Ok(RankParams {
                seq: Linear::init(store, &format!("{p}.seq"), sequence_blocks(k) * d, d, rng)?,
                ssm: SsmParams::init(store, &format!("{p}.ssm"), shape, rng.gen())?,
                mlp: Mlp::init(store, &format!("{p}.mlp"), [d, d, d], rng)?,
                agg: Mlp::init(store, &format!("{p}.agg"), [d, d, d], rng)?,
                update: Mlp::init(store, &format!("{p}.update"), [2 * d, d, d], rng)?,
                ffn: Mlp::init(store, &format!("{p}.ffn"), [d, 2 * d, d], rng)?,
                norm1: Norm::init(store, &format!("{p}.norm1"), d)?,
                norm2: Norm::init(store, &format!("{p}.norm2"), d)?,
            })
        };
        let ranks = [rank(0, rng)?, rank(1, rng)?, rank(2, rng)?];
        Ok(Self { width, ranks })
    }
}

fn check_rows<S: Scalar>(tape: &Tape<S>, ops: &Operators<S>, feats: &RankedVars, op: &'static str) -> Result<()> {
    for k in 0..3 {
        let shape = tape.shape(feats.h[k]);
        if shape.len() != 2 || shape[0] != ops.counts[k] {
            return Err(Error::shape(op, format!("rank {k} features {shape:?} for {} cells", ops.counts[k])));
        }
    }
    Ok(())
}

/// Rows `[h0 ∥ B1 h1]`, `[h1 ∥ B1ᵀ h0 ∥ B2 h2]` or `[h2 ∥ B2ᵀ h1]`, one per
/// rank-`k` cell in canonical order. A missing adjacent rank contributes
/// zeros.
pub fn build_sequence<S: Scalar>(tape: &mut Tape<S>, ops: &Operators<S>, rank: usize, feats: &RankedVars) -> Result<Var> {
    check_rows(tape, ops, feats, "build_sequence")?;
    let [h0, h1, h2] = feats.h;
    match rank {
        0 => {
            let up = tape.spmm(&ops.b1, h1)?;
            tape.concat(&[h0, up])
        }
        1 => {
            let down = tape.spmm(&ops.b1t, h0)?;
            let up = tape.spmm(&ops.b2, h2)?;
            tape.concat(&[h1, down, up])
        }
        2 => {
            let down = tape.spmm(&ops.b2t, h1)?;
            tape.concat(&[h2, down])
        }
        _ => Err(Error::InvalidParameter(format!("rank {rank} outside 0..=2"))),
    }
}

/// `MLP_k(Mamba_k(W_k · sequence_k))` for every rank with at least one cell.
pub fn intra_rank_update<S: Scalar>(
    tape: &mut Tape<S>,
    ops: &Operators<S>,
    feats: &RankedVars,
    params: &LayerParams,
    vars: &Binding,
    config: &LayerConfig,
) -> Result<RankedVars> {
    let mut out = feats.h;
    for k in 0..3 {
        let p = &params.ranks[k];
        if ops.counts[k] == 0 {
            out[k] = tape.constant(Tensor::zeros(&[0, params.width]));
            continue;
        }
        let seq = build_sequence(tape, ops, k, feats)?;
        let plan = scan_plan(tape.value(seq), config.scan_order);
        let proj = p.seq.apply(tape, vars, seq)?;
        let scanned = match &plan.unsort {
            Some(unsort) => {
                let sorted = tape.gather_rows(proj, &plan.order)?;
                let y = mamba_block(tape, sorted, &p.ssm, vars, config.bidirectional)?;
                tape.spmm(unsort, y)?
            }
            None => mamba_block(tape, proj, &p.ssm, vars, config.bidirectional)?,
        };
        out[k] = p.mlp.apply(tape, vars, scanned)?;
    }
    Ok(RankedVars { h: out })
}

/// Each cell sums its own filtered feature with those of its incidence
/// neighbors, and `φ₁([prev ∥ MLP(sum)])` gives the updated feature.
pub fn inter_rank_aggregate<S: Scalar>(
    tape: &mut Tape<S>,
    ops: &Operators<S>,
    intra: &RankedVars,
    prev: &RankedVars,
    params: &LayerParams,
    vars: &Binding,
) -> Result<RankedVars> {
    check_rows(tape, ops, intra, "inter_rank_aggregate")?;
    check_rows(tape, ops, prev, "inter_rank_aggregate")?;
    let [i0, i1, i2] = intra.h;
    let mut out = prev.h;
    for k in 0..3 {
        if ops.counts[k] == 0 {
            continue;
        }
        let total = match k {
            0 => {
                let up = tape.spmm(&ops.b1, i1)?;
                tape.add(i0, up)?
            }
            1 => {
                let down = tape.spmm(&ops.b1t, i0)?;
                let up = tape.spmm(&ops.b2, i2)?;
                let s = tape.add(i1, down)?;
                tape.add(s, up)?
            }
            _ => {
                let down = tape.spmm(&ops.b2t, i1)?;
                tape.add(i2, down)?
            }
        };
        let p = &params.ranks[k];
        let message = p.agg.apply(tape, vars, total)?;
        let joined = tape.concat(&[prev.h[k], message])?;
        out[k] = p.update.apply(tape, vars, joined)?;
    }
    Ok(RankedVars { h: out })
}

/// Full layer: sequence filtering, cross-rank fusion, then
/// `ĥ = LN(h' + Dropout(h_intra))` and `LN(ĥ + FFN(ĥ))`. Dropout is active
/// only when `rng` is given.
pub fn layer_forward<S: Scalar>(
    tape: &mut Tape<S>,
    ops: &Operators<S>,
    feats: &RankedVars,
    params: &LayerParams,
    vars: &Binding,
    config: &LayerConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<RankedVars> {
    let intra = intra_rank_update(tape, ops, feats, params, vars, config)?;
    let next = inter_rank_aggregate(tape, ops, &intra, feats, params, vars)?;
    let mut out = next.h;
    for k in 0..3 {
        if ops.counts[k] == 0 {
            continue;
        }
        let p = &params.ranks[k];
        let dropped = match rng.as_deref_mut() {
            Some(r) => tape.dropout(intra.h[k], config.dropout, true, r)?,
            None => intra.h[k],
        };
        let res = tape.add(next.h[k], dropped)?;
        let hat = p.norm1.apply(tape, vars, res)?;
        let ff = p.ffn.apply(tape, vars, hat)?;
        let res = tape.add(hat, ff)?;
        out[k] = p.norm2.apply(tape, vars, res)?;
    }
    Ok(RankedVars { h: out })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutLevel {
    Node,
    #[default]
    Graph,
}

/// Node level: `h0`. Graph level: `[Σh0 ∥ Σh1 ∥ Σh2]` as a `1×3d` row.
pub fn readout<S: Scalar>(tape: &mut Tape<S>, feats: &RankedVars, level: ReadoutLevel) -> Result<Var> {
    let rows: Vec<usize> = feats.h.iter().map(|&v| tape.value(v).rows()).collect();
    match level {
        ReadoutLevel::Node => {
            if rows[0] == 0 {
                return Err(Error::EmptyComplex);
            }
            Ok(feats.h[0])
        }
        ReadoutLevel::Graph => {
            if rows.iter().all(|&r| r == 0) {
                return Err(Error::EmptyComplex);
            }
            let sums = feats.h.iter().map(|&v| tape.sum_rows(v)).collect::<Result<Vec<_>>>()?;
            tape.concat(&sums)
        }
    }
}
