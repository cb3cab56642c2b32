//! Supervised training for graph- and node-level classification.

mod dataset;

pub use dataset::{
    load_complex, random_complex, random_graph, seeded_splits, toy_triangles_hexagons, write_dataset_dir, Labels, LabeledDataset,
    Splits,
};


use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::CombinatorialComplex;
use crate::error::{Error, Result};
use crate::layer::{Operators, RankedFeatures};
use crate::model::{CcMamba, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, SparseMatrix, Tape, Tensor};

/// Raw input features for every rank. Edges take the mean of their nodes
/// and faces the mean of their edges; a face without edges falls back to
/// the mean of its vertices.
pub fn init_features<S: Scalar>(cc: &CombinatorialComplex, node_features: &Tensor<S>) -> Result<RankedFeatures<S>> {
    if node_features.rank() != 2 || node_features.rows() != cc.vertex_count() {
        return Err(Error::shape(
            "init_features",
            format!("{} vertices, features {:?}", cc.vertex_count(), node_features.shape()),
        ));
    }
    let edge_mean = SparseMatrix::<S>::from_incidence(cc.b1()).transpose().row_normalized();
    let h1 = edge_mean.matmul(node_features)?;
    let face_mean = SparseMatrix::<S>::from_incidence(cc.b2()).transpose().row_normalized();
    let mut h2 = face_mean.matmul(&h1)?;
    let orphans: Vec<usize> = (0..cc.count(2)).filter(|&f| cc.b2().col(f).is_empty()).collect();
    if !orphans.is_empty() {
        let mut trip = Vec::new();
        for &f in &orphans {
            let verts = cc.cells(2)[f].vertices();
            let w = S::one() / S::lit(verts.len() as f64);
            trip.extend(verts.iter().map(|&v| (f, v, w)));
        }
        let fallback = SparseMatrix::from_triplets(cc.count(2), cc.vertex_count(), &trip)?.matmul(node_features)?;
        for (a, b) in h2.data_mut().iter_mut().zip(fallback.data()) {
            *a += *b;
        }
    }
    Ok(RankedFeatures { h0: node_features.clone(), h1, h2 })
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptySplit("no samples to score".into()));
    }
    if logits.rows() != labels.len() {
        return Err(Error::shape("accuracy", format!("{} rows for {} labels", logits.rows(), labels.len())));
    }
    let correct = labels.iter().enumerate().filter(|&(i, &l)| argmax(logits.row(i)) == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug)]
pub struct OptimizerState<S> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(params: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![S::zero(); t.len()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// One bias-corrected Adam update. `grads` holds one tensor per
    /// parameter, in [`ParamStore`] order.
    pub fn adam_step(&mut self, params: &mut ParamStore<S>, grads: &[Tensor<S>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape("adam_step", format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.len() != params.get(id).len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("'{}': gradient {:?} vs {:?}", params.name(id), g.shape(), params.get(id).shape()),
                ));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let bc1 = S::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = S::lit(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (S::lit(c.lr), S::lit(c.eps));
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let p = params.get_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                m[j] = b1 * m[j] + (S::one() - b1) * g;
                v[j] = b2 * v[j] + (S::one() - b2) * g * g;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 128, seed: 0, optimizer: AdamConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", o.lr)));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 {
            return Err(Error::Config("adam needs betas in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Per-epoch record. Index 0 of every array is the first training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epochs: usize,
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<Option<f64>>,
    pub initial_train_accuracy: f64,
    pub initial_val_accuracy: Option<f64>,
    /// Accuracy of the final parameters on the train split.
    pub final_train_accuracy: f64,
    /// 0 means the untrained model was never beaten on validation.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

pub struct TrainOutcome<S: Scalar> {
    /// Parameters after the last epoch.
    pub model: CcMamba<S>,
    /// Parameters of the best validation epoch.
    pub best: ParamStore<S>,
    pub metrics: Metrics,
}

/// Worker count: `CCM_THREADS` when set to a positive integer, else the
/// rayon default.
pub fn thread_count() -> usize {
    std::env::var("CCM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Samples are summed in chunks of this size, in index order, so the
/// result does not depend on the number of worker threads.
const REDUCE_CHUNK: usize = 8;

struct Prepared<S: Scalar> {
    ops: Vec<Operators<S>>,
    inputs: Vec<RankedFeatures<S>>,
}

impl<S: Scalar> Prepared<S> {
    fn new(data: &LabeledDataset<S>) -> Result<Self> {
        let ops = data.complexes.iter().map(Operators::new).collect();
        let inputs = data
            .complexes
            .iter()
            .zip(&data.features)
            .map(|(cc, x)| init_features(cc, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ops, inputs })
    }
}

/// One unit of loss: a complex plus the labeled rows of its logits.
#[derive(Clone, Debug)]
struct Job {
    complex: usize,
    rows: Vec<usize>,
    labels: Vec<usize>,
    sample: usize,
}

fn jobs_for<S: Scalar>(data: &LabeledDataset<S>, samples: &[usize]) -> Vec<Job> {
    match &data.labels {
        Labels::Graph(labels) => samples
            .iter()
            .map(|&s| Job { complex: s, rows: vec![0], labels: vec![labels[s]], sample: s })
            .collect(),
        Labels::Node(_) => {
            let mut by_complex: Vec<Job> = Vec::new();
            let mut sorted = samples.to_vec();
            sorted.sort_unstable();
            for s in sorted {
                let (c, v) = data.node_sample(s);
                let label = data.sample_label(s);
                match by_complex.last_mut() {
                    Some(j) if j.complex == c => {
                        j.rows.push(v);
                        j.labels.push(label);
                    }
                    _ => by_complex.push(Job { complex: c, rows: vec![v], labels: vec![label], sample: s }),
                }
            }
            by_complex
        }
    }
}

fn job_gradient<S: Scalar>(
    model: &CcMamba<S>,
    prep: &Prepared<S>,
    job: &Job,
    weight: S,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Tensor<S>>)> {
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let fwd = model.forward(&mut tape, &vars, &prep.ops[job.complex], &prep.inputs[job.complex], rng)?;
    let picked = tape.gather_rows(fwd.logits, &job.rows)?;
    let ce = tape.cross_entropy(picked, &job.labels)?;
    let loss = tape.scale(ce, weight);
    let value = tape.value(ce).item().as_f64();
    let mut grads = tape.backward(loss)?;
    let out = vars
        .vars()
        .iter()
        .zip(model.params().iter())
        .map(|(&v, (_, _, p))| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, out))
}

fn predict_jobs<S: Scalar>(model: &CcMamba<S>, prep: &Prepared<S>, jobs: &[Job]) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    jobs.par_iter()
        .map(|job| {
            let mut tape = Tape::new();
            let vars = model.params().bind_constant(&mut tape);
            let fwd = model.forward(&mut tape, &vars, &prep.ops[job.complex], &prep.inputs[job.complex], None)?;
            let logits = tape.value(fwd.logits);
            let preds = job.rows.iter().map(|&r| argmax(logits.row(r))).collect();
            Ok((preds, job.labels.clone()))
        })
        .collect()
}

fn score<S: Scalar>(model: &CcMamba<S>, prep: &Prepared<S>, data: &LabeledDataset<S>, samples: &[usize]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySplit("evaluation mask is empty".into()));
    }
    let jobs = jobs_for(data, samples);
    let results = predict_jobs(model, prep, &jobs)?;
    let (mut correct, mut total) = (0usize, 0usize);
    for (preds, labels) in results {
        total += labels.len();
        correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / total as f64)
}

/// Accuracy of `model` on the given sample indices.
pub fn evaluate<S: Scalar>(model: &CcMamba<S>, data: &LabeledDataset<S>, samples: &[usize]) -> Result<f64> {
    data.check_model(model)?;
    let prep = Prepared::new(data)?;
    score(model, &prep, data, samples)
}

pub(crate) fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn dropout_rng(seed: u64, epoch: usize, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d20f_0u64);
    rng.set_stream(((epoch as u64) << 32) | sample as u64);
    rng
}

/// Trains a fresh model. With `epochs = 0` the untrained model is scored
/// and returned unchanged.
pub fn train<S: Scalar>(model_config: &ModelConfig, config: &TrainConfig, data: &LabeledDataset<S>) -> Result<TrainOutcome<S>> {
    config.validate()?;
    model_config.validate()?;
    data.validate()?;
    if data.splits.train.is_empty() {
        return Err(Error::EmptySplit("train split is empty".into()));
    }
    let mut model = CcMamba::new(model_config.clone(), data.in_features(), data.num_classes, config.seed)?;
    let (best, metrics) = with_pool(|| run_training(&mut model, config, data))??;
    Ok(TrainOutcome { model, best, metrics })
}

fn run_training<S: Scalar>(
    model: &mut CcMamba<S>,
    config: &TrainConfig,
    data: &LabeledDataset<S>,
) -> Result<(ParamStore<S>, Metrics)> {
    let prep = Prepared::new(data)?;
    let val = &data.splits.val;
    let val_score = |m: &CcMamba<S>| -> Result<Option<f64>> {
        if val.is_empty() {
            Ok(None)
        } else {
            score(m, &prep, data, val).map(Some)
        }
    };
    let initial_train = score(model, &prep, data, &data.splits.train)?;
    let initial_val = val_score(model)?;

    let mut opt = OptimizerState::new(model.params(), config.optimizer);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut best = model.params().clone();
    let (mut best_epoch, mut best_val) = (0usize, initial_val);
    let mut metrics = Metrics {
        epochs: config.epochs,
        train_loss: Vec::new(),
        val_accuracy: Vec::new(),
        initial_train_accuracy: initial_train,
        initial_val_accuracy: initial_val,
        final_train_accuracy: initial_train,
        best_epoch: 0,
        best_val_accuracy: initial_val,
        test_accuracy: None,
    };

    let mut train_jobs = jobs_for(data, &data.splits.train);
    for epoch in 1..=config.epochs {
        train_jobs.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        let total_rows: usize = train_jobs.iter().map(|j| j.rows.len()).sum();
        for batch in train_jobs.chunks(config.batch_size) {
            let batch_rows: usize = batch.iter().map(|j| j.rows.len()).sum();
            let mut sum: Option<Vec<Tensor<S>>> = None;
            for chunk in batch.chunks(REDUCE_CHUNK) {
                let results = chunk
                    .par_iter()
                    .map(|job| {
                        let weight = S::lit(job.rows.len() as f64 / batch_rows as f64);
                        let mut rng = dropout_rng(config.seed, epoch, job.sample);
                        job_gradient(model, &prep, job, weight, Some(&mut rng))
                    })
                    .collect::<Result<Vec<_>>>()?;
                for ((loss, grads), job) in results.into_iter().zip(chunk) {
                    epoch_loss += loss * job.rows.len() as f64 / total_rows as f64;
                    match &mut sum {
                        None => sum = Some(grads),
                        Some(acc) => {
                            for (a, g) in acc.iter_mut().zip(&grads) {
                                for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                    *x += *y;
                                }
                            }
                        }
                    }
                }
            }
            let grads = sum.expect("batches are nonempty");
            opt.adam_step(model.params_mut(), &grads)?;
        }
        metrics.train_loss.push(epoch_loss);
        let v = val_score(model)?;
        metrics.val_accuracy.push(v);
        if let (Some(v), Some(b)) = (v, best_val) {
            if v > b {
                best_val = Some(v);
                best_epoch = epoch;
                best = model.params().clone();
            }
        } else if v.is_none() {
            // Without a validation split the latest parameters are kept.
            best_epoch = epoch;
            best = model.params().clone();
        }
    }
    if config.epochs > 0 {
        metrics.final_train_accuracy = score(model, &prep, data, &data.splits.train)?;
    }
    metrics.best_epoch = best_epoch;
    metrics.best_val_accuracy = best_val;
    if !data.splits.test.is_empty() {
        let mut best_model = model.clone();
        best_model.load_params(&best)?;
        metrics.test_accuracy = Some(score(&best_model, &prep, data, &data.splits.test)?);
    }
    Ok((best, metrics))
}
