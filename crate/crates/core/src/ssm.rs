//! Selective state-space scan and the gated block built on it.
//!
//! The state matrix is diagonal: every channel of the scanned input carries
//! `N` independent scalar states. Transition, input and readout coefficients
//! are computed from the sequence itself, one row per step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{glorot, Binding, CustomOp, ParamId, ParamStore, Tape, Tensor, Var};

/// Below this `|ΔA|` the input coefficient uses its Taylor expansion.
pub const SERIES_THRESHOLD: f64 = 1e-8;

/// Scalar operations charged per (step, channel, state) of the scan.
pub const OPS_PER_STEP: u64 = 11;

/// `(eᶻ − 1) / z`, continuous at zero.
pub fn phi1<S: Scalar>(z: S) -> S {
    if z.abs() < S::lit(SERIES_THRESHOLD) {
        S::one() + z * S::lit(0.5)
    } else {
        z.exp_m1() / z
    }
}

/// Derivative of [`phi1`].
pub fn phi1_prime<S: Scalar>(z: S) -> S {
    if z.abs() < S::lit(1e-3) {
        // 1/2 + z/3 + z²/8 + z³/30, truncation error below z⁴/144
        S::lit(0.5) + z * (S::lit(1.0 / 3.0) + z * (S::lit(0.125) + z / S::lit(30.0)))
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    }
}

/// [`phi1_prime`] given `exp(z)` and `φ₁(z)`, using
/// `φ₁'(z) = (eᶻ − φ₁(z)) / z` away from zero.
fn phi1_prime_cached<S: Scalar>(z: S, exp_z: S, phi: S) -> S {
    if z.abs() < S::lit(1e-3) {
        phi1_prime(z)
    } else {
        (exp_z - phi) / z
    }
}

/// `exp(z)` floored at the smallest normal value, so a strongly negative
/// `ΔA` decays the state without underflowing to zero.
pub fn transition<S: Scalar>(z: S) -> S {
    z.exp().max(S::min_positive_value())
}

/// Zero-order-hold discretization of one diagonal state:
/// `Ā = exp(ΔA)` and `B̄ = (ΔA)⁻¹(exp(ΔA) − 1)·ΔB`.
pub fn discretize<S: Scalar>(a: S, b: S, delta: S) -> (S, S) {
    let z = delta * a;
    (transition(z), phi1(z) * delta * b)
}

/// Hidden sizes of one selective block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SsmShape {
    pub d_model: usize,
    pub state_dim: usize,
    pub expand: usize,
}

impl SsmShape {
    pub fn inner(&self) -> usize {
        self.d_model * self.expand
    }
}

/// Parameter handles of one selective block.
#[derive(Clone, Debug)]
pub struct SsmParams {
    pub shape: SsmShape,
    pub w_in: ParamId,
    pub w_a: ParamId,
    pub b_a: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
    pub w_delta: ParamId,
    pub b_delta: ParamId,
    pub w_z: ParamId,
    pub w_out: ParamId,
}

impl SsmParams {
    /// Registers the block's tensors under `prefix`. Weights are Glorot
    /// uniform; `b_A` starts at `ln(1..=N)` so that `A = −(1..=N)` for a zero
    /// input, and `b_Δ` places the initial step sizes log-uniformly in
    /// `[1e-3, 1e-1]`.
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, shape: SsmShape, seed: u64) -> Result<Self> {
        if shape.d_model == 0 || shape.state_dim == 0 || shape.expand == 0 {
            return Err(Error::InvalidParameter(format!("degenerate block shape {shape:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, n, e) = (shape.d_model, shape.state_dim, shape.inner());
        let b_a: Vec<f64> = (1..=n).map(|k| (k as f64).ln()).collect();
        let b_delta: Vec<f64> = (0..e)
            .map(|_| {
                let dt = (rng.gen_range(0.001f64.ln()..0.1f64.ln())).exp();
                // inverse softplus
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect();
        let mut w = |name: &str, shp: &[usize], rng: &mut ChaCha8Rng| -> Result<ParamId> {
            store.add(format!("{prefix}.{name}"), glorot(shp, rng))
        };
        let w_in = w("w_in", &[d, e], &mut rng)?;
        let w_a = w("w_a", &[d, n], &mut rng)?;
        let w_b = w("w_b", &[d, n], &mut rng)?;
        let w_c = w("w_c", &[d, n], &mut rng)?;
        let w_delta = w("w_delta", &[d, e], &mut rng)?;
        let w_z = w("w_z", &[d, e], &mut rng)?;
        let w_out = w("w_out", &[e, d], &mut rng)?;
        let b_a = store.add(format!("{prefix}.b_a"), Tensor::from_f64(&[n], &b_a)?)?;
        let b_delta = store.add(format!("{prefix}.b_delta"), Tensor::from_f64(&[e], &b_delta)?)?;
        Ok(Self { shape, w_in, w_a, b_a, w_b, w_c, w_delta, b_delta, w_z, w_out })
    }
}

/// Per-step coefficients: `a`, `b`, `c` are `T×N`, `delta` is `T×D`.
#[derive(Clone, Copy, Debug)]
pub struct Selective {
    pub a: Var,
    pub b: Var,
    pub c: Var,
    pub delta: Var,
}

/// `A = −exp(h W_A + b_A)`, `B = h W_B`, `C = h W_C`,
/// `Δ = softplus(h W_Δ + b_Δ)`.
pub fn selective_params<S: Scalar>(tape: &mut Tape<S>, h: Var, p: &SsmParams, vars: &Binding) -> Result<Selective> {
    check_input(tape, h, p)?;
    let pre_a = tape.matmul(h, vars[p.w_a])?;
    let pre_a = tape.add_row(pre_a, vars[p.b_a])?;
    let exp_a = tape.exp(pre_a);
    let a = tape.neg(exp_a);
    let b = tape.matmul(h, vars[p.w_b])?;
    let c = tape.matmul(h, vars[p.w_c])?;
    let pre_d = tape.matmul(h, vars[p.w_delta])?;
    let pre_d = tape.add_row(pre_d, vars[p.b_delta])?;
    let delta = tape.softplus(pre_d);
    Ok(Selective { a, b, c, delta })
}

fn check_input<S: Scalar>(tape: &Tape<S>, h: Var, p: &SsmParams) -> Result<()> {
    let shape = tape.shape(h);
    if shape.len() != 2 || shape[1] != p.shape.d_model || shape[0] == 0 {
        return Err(Error::shape(
            "ssm",
            format!("expected T×{} with T ≥ 1, got {shape:?}", p.shape.d_model),
        ));
    }
    Ok(())
}

/// Result of running the recurrence outside a tape.
#[derive(Clone, Debug)]
pub struct ScanOutput<S> {
    pub y: Tensor<S>,
    /// `T×D×N` hidden states, step-major.
    pub states: Vec<S>,
    /// `Ā` for every state, laid out like `states`.
    pub abar: Vec<S>,
    /// `φ₁(ΔA)` for every state, laid out like `states`.
    pub phi: Vec<S>,
    pub ops: u64,
}

fn scan_dims<S: Scalar>(x: &Tensor<S>, delta: &Tensor<S>, a: &Tensor<S>, b: &Tensor<S>, c: &Tensor<S>) -> Result<(usize, usize, usize)> {
    let bad = |detail: String| Err(Error::shape("selective_scan", detail));
    if x.rank() != 2 || a.rank() != 2 {
        return bad(format!("x {:?}, a {:?}", x.shape(), a.shape()));
    }
    let (t, d, n) = (x.rows(), x.cols(), a.cols());
    if delta.shape() != x.shape() {
        return bad(format!("delta {:?} vs x {:?}", delta.shape(), x.shape()));
    }
    for (name, m) in [("a", a), ("b", b), ("c", c)] {
        if m.shape() != [t, n] {
            return bad(format!("{name} {:?}, expected [{t}, {n}]", m.shape()));
        }
    }
    Ok((t, d, n))
}

/// Runs `h_t = Ā_t h_{t−1} + B̄_t x_t`, `y_t = Σₙ C_t h_t` for every channel,
/// starting from `h_0 = 0`. Cost is `Θ(T·D·N)`.
pub fn scan<S: Scalar>(x: &Tensor<S>, delta: &Tensor<S>, a: &Tensor<S>, b: &Tensor<S>, c: &Tensor<S>) -> Result<ScanOutput<S>> {
    let (t_len, d, n) = scan_dims(x, delta, a, b, c)?;
    let (xs, ds, av, bv, cv) = (x.data(), delta.data(), a.data(), b.data(), c.data());
    let mut y = vec![S::zero(); t_len * d];
    let mut states = vec![S::zero(); t_len * d * n];
    let mut abars = vec![S::zero(); t_len * d * n];
    let mut phis = vec![S::zero(); t_len * d * n];
    let mut ops = 0u64;
    for t in 0..t_len {
        for ch in 0..d {
            let dt = ds[t * d + ch];
            let xt = xs[t * d + ch];
            let mut acc = S::zero();
            for k in 0..n {
                let z = dt * av[t * n + k];
                let abar = transition(z);
                let phi = phi1(z);
                let bbar = phi * dt * bv[t * n + k];
                let at = (t * d + ch) * n + k;
                let prev = if t == 0 { S::zero() } else { states[at - d * n] };
                let h = abar * prev + bbar * xt;
                states[at] = h;
                abars[at] = abar;
                phis[at] = phi;
                acc += cv[t * n + k] * h;
                ops += OPS_PER_STEP;
            }
            y[t * d + ch] = acc;
        }
    }
    Ok(ScanOutput { y: Tensor::matrix(t_len, d, y)?, states, abar: abars, phi: phis, ops })
}

/// Backward pass of [`scan`], inputs in the order `x, delta, a, b, c`.
struct ScanOp<S> {
    states: Vec<S>,
    abar: Vec<S>,
    phi: Vec<S>,
}

impl<S: Scalar> CustomOp<S> for ScanOp<S> {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let (x, delta, a, b, c) = (inputs[0], inputs[1], inputs[2], inputs[3], inputs[4]);
        let (t_len, d, n) = (x.rows(), x.cols(), a.cols());
        let (xs, ds, av, bv, cv, gy) = (x.data(), delta.data(), a.data(), b.data(), c.data(), grad.data());
        let mut gx = vec![S::zero(); t_len * d];
        let mut gd = vec![S::zero(); t_len * d];
        let mut ga = vec![S::zero(); t_len * n];
        let mut gb = vec![S::zero(); t_len * n];
        let mut gc = vec![S::zero(); t_len * n];
        for ch in 0..d {
            for k in 0..n {
                // gradient reaching h_t from step t+1
                let mut carry = S::zero();
                for t in (0..t_len).rev() {
                    let (dt, at, bt) = (ds[t * d + ch], av[t * n + k], bv[t * n + k]);
                    let g_out = gy[t * d + ch];
                    let gh = g_out * cv[t * n + k] + carry;
                    let idx = (t * d + ch) * n + k;
                    let h = self.states[idx];
                    let prev = if t == 0 { S::zero() } else { self.states[idx - d * n] };
                    let z = dt * at;
                    let abar = self.abar[idx];
                    let g = self.phi[idx];
                    let bbar = g * dt * bt;
                    gc[t * n + k] += g_out * h;
                    let g_abar = gh * prev;
                    let g_bbar = gh * xs[t * d + ch];
                    gx[t * d + ch] += gh * bbar;
                    let gz = g_abar * abar + g_bbar * phi1_prime_cached(z, abar, g) * dt * bt;
                    gd[t * d + ch] += gz * at + g_bbar * g * bt;
                    ga[t * n + k] += gz * dt;
                    gb[t * n + k] += g_bbar * g * dt;
                    carry = abar * gh;
                }
            }
        }
        let mk = |rows, cols, v| Some(Tensor::matrix(rows, cols, v).expect("shape"));
        vec![mk(t_len, d, gx), mk(t_len, d, gd), mk(t_len, n, ga), mk(t_len, n, gb), mk(t_len, n, gc)]
    }
}

/// Records the scan on `tape`; `x` and `delta` are `T×D`.
pub fn selective_scan<S: Scalar>(tape: &mut Tape<S>, x: Var, sel: &Selective) -> Result<Var> {
    let out = scan(
        tape.value(x),
        tape.value(sel.delta),
        tape.value(sel.a),
        tape.value(sel.b),
        tape.value(sel.c),
    )?;
    let op = ScanOp { states: out.states, abar: out.abar, phi: out.phi };
    Ok(tape.custom(&[x, sel.delta, sel.a, sel.b, sel.c], out.y, Box::new(op)))
}

/// Gated block: `out = (σ(h W_z) ⊙ S(h W_in)) W_out`, where `S` is the
/// selective scan. In bidirectional mode `S(u) = ½(scan(u) + R scan(R u))`
/// with `R` the step reversal, and the coefficients are reversed with `u`.
pub fn mamba_block<S: Scalar>(
    tape: &mut Tape<S>,
    h: Var,
    p: &SsmParams,
    vars: &Binding,
    bidirectional: bool,
) -> Result<Var> {
    check_input(tape, h, p)?;
    let t_len = tape.shape(h)[0];
    let u = tape.matmul(h, vars[p.w_in])?;
    let sel = selective_params(tape, h, p, vars)?;
    let forward = selective_scan(tape, u, &sel)?;
    let y = if bidirectional && t_len > 1 {
        let rev: Vec<usize> = (0..t_len).rev().collect();
        let u_r = tape.gather_rows(u, &rev)?;
        let sel_r = Selective {
            a: tape.gather_rows(sel.a, &rev)?,
            b: tape.gather_rows(sel.b, &rev)?,
            c: tape.gather_rows(sel.c, &rev)?,
            delta: tape.gather_rows(sel.delta, &rev)?,
        };
        let backward = selective_scan(tape, u_r, &sel_r)?;
        let backward = tape.gather_rows(backward, &rev)?;
        let both = tape.add(forward, backward)?;
        tape.scale(both, S::lit(0.5))
    } else {
        forward
    };
    let gate = tape.matmul(h, vars[p.w_z])?;
    let gate = tape.sigmoid(gate);
    let gated = tape.mul(gate, y)?;
    tape.matmul(gated, vars[p.w_out])
}
