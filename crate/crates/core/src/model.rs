//! The full network: per-rank input projections, a stack of layers and a
//! classification head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complex::CombinatorialComplex;
use crate::error::{Error, Result};
use crate::layer::{layer_forward, readout, LayerConfig, LayerParams, Linear, Operators, RankedFeatures, RankedVars, ReadoutLevel, ScanOrder};
use crate::lifting::{LiftMode, DEFAULT_MAX_CYCLE_LEN};
use crate::scalar::Scalar;
use crate::tensor::{Binding, ParamStore, Tape, Tensor, Var};
use crate::trainer::init_features;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub state_dim: usize,
    pub expand: usize,
    pub dropout: f64,
    pub bidirectional: bool,
    pub lifting: LiftMode,
    pub max_cycle_len: usize,
    pub readout: ReadoutLevel,
    pub scan_order: ScanOrder,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            layers: 2,
            state_dim: 16,
            expand: 2,
            dropout: 0.01,
            bidirectional: true,
            lifting: LiftMode::Cellular,
            max_cycle_len: DEFAULT_MAX_CYCLE_LEN,
            readout: ReadoutLevel::Graph,
            scan_order: ScanOrder::Content,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.hidden == 0 {
            return fail("hidden must be positive".into());
        }
        if self.state_dim == 0 {
            return fail("state_dim must be positive".into());
        }
        if self.expand == 0 {
            return fail("expand must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.lifting == LiftMode::Cellular && self.max_cycle_len < 3 {
            return fail(format!("max_cycle_len {} below 3", self.max_cycle_len));
        }
        Ok(())
    }

    pub fn layer_config(&self) -> LayerConfig {
        LayerConfig { bidirectional: self.bidirectional, dropout: self.dropout, scan_order: self.scan_order }
    }
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub features: RankedVars,
    pub embedding: Var,
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct CcMamba<S: Scalar> {
    config: ModelConfig,
    in_features: usize,
    num_classes: usize,
    store: ParamStore<S>,
    input: [Linear; 3],
    layers: Vec<LayerParams>,
    head: Linear,
}

impl<S: Scalar> CcMamba<S> {
    pub fn new(config: ModelConfig, in_features: usize, num_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if in_features == 0 || num_classes == 0 {
            return Err(Error::Config(format!(
                "need at least one input feature and one class, got {in_features} and {num_classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.hidden;
        let input = [
            Linear::init(&mut store, "input.r0", in_features, d, &mut rng)?,
            Linear::init(&mut store, "input.r1", in_features, d, &mut rng)?,
            Linear::init(&mut store, "input.r2", in_features, d, &mut rng)?,
        ];
        let layers = (0..config.layers)
            .map(|l| LayerParams::init(&mut store, &format!("layer{l}"), d, config.state_dim, config.expand, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head_in = match config.readout {
            ReadoutLevel::Graph => 3 * d,
            ReadoutLevel::Node => d,
        };
        let head = Linear::init(&mut store, "head", head_in, num_classes, &mut rng)?;
        Ok(Self { config, in_features, num_classes, store, input, layers, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    /// Replaces every parameter with the same-named tensor of `other`.
    pub fn load_params(&mut self, other: &ParamStore<S>) -> Result<()> {
        self.store.load_values(other)
    }

    /// Records the network on `tape`. `inputs` are the raw per-rank input
    /// features (see [`init_features`]). Dropout is active only when `rng`
    /// is given.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        vars: &Binding,
        ops: &Operators<S>,
        inputs: &RankedFeatures<S>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        if inputs.width() != self.in_features {
            return Err(Error::shape(
                "forward",
                format!("model takes {} input features, got {}", self.in_features, inputs.width()),
            ));
        }
        let raw = inputs.constants(tape);
        let mut h = raw.h;
        for k in 0..3 {
            h[k] = self.input[k].apply(tape, vars, raw.h[k])?;
        }
        let mut feats = RankedVars { h };
        let lc = self.config.layer_config();
        for layer in &self.layers {
            feats = layer_forward(tape, ops, &feats, layer, vars, &lc, rng.as_deref_mut())?;
        }
        let embedding = readout(tape, &feats, self.config.readout)?;
        let logits = self.head.apply(tape, vars, embedding)?;
        Ok(Forward { features: feats, embedding, logits })
    }

    fn eval_pass<T>(
        &self,
        cc: &CombinatorialComplex,
        node_features: &Tensor<S>,
        pick: impl FnOnce(&Tape<S>, &Forward) -> T,
    ) -> Result<T> {
        let ops = Operators::new(cc);
        let inputs = init_features(cc, node_features)?;
        let mut tape = Tape::new();
        let vars = self.store.bind_constant(&mut tape);
        let fwd = self.forward(&mut tape, &vars, &ops, &inputs, None)?;
        Ok(pick(&tape, &fwd))
    }

    /// Evaluation-mode readout (`1×3d` at graph level, `|V|×d` at node level).
    pub fn embed(&self, cc: &CombinatorialComplex, node_features: &Tensor<S>) -> Result<Tensor<S>> {
        self.eval_pass(cc, node_features, |t, f| t.value(f.embedding).clone())
    }

    /// Evaluation-mode output features of the last layer.
    pub fn layer_outputs(&self, cc: &CombinatorialComplex, node_features: &Tensor<S>) -> Result<RankedFeatures<S>> {
        self.eval_pass(cc, node_features, |t, f| RankedFeatures::from_tape(t, &f.features))
    }

    pub fn logits(&self, cc: &CombinatorialComplex, node_features: &Tensor<S>) -> Result<Tensor<S>> {
        self.eval_pass(cc, node_features, |t, f| t.value(f.logits).clone())
    }
}
