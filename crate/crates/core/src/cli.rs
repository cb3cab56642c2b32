//! Command-line front end. Every command prints one JSON document on
//! standard output; failures print `{"error": {...}}` on standard error and
//! exit with 1 (internal), 2 (bad input) or 3 (config).

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ccwl::{distinguish, Verdict};
use crate::complex::CombinatorialComplex;
use crate::error::{Error, Result};
use crate::layer::ReadoutLevel;
use crate::lifting::{lift, Graph, LiftMode, DEFAULT_MAX_CYCLE_LEN};
use crate::model::{CcMamba, ModelConfig};
use crate::ssm::scan;
use crate::tensor::{ParamStore, Tensor};
use crate::trainer::{
    evaluate, load_complex, random_complex, toy_triangles_hexagons, train, with_pool, write_dataset_dir, LabeledDataset,
    TrainConfig,
};

pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

pub const METRICS_FILE: &str = "metrics.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MODEL_FILE: &str = "model.json";

#[derive(Parser, Debug)]
#[command(name = "ccmamba", version, about = "Selective state-space message passing on combinatorial complexes")]
pub struct Cli {
    /// Seed for every random choice; overrides the seed in a run config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config: a run config for `train`, a model config for `expressivity`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (`lift`) or directory (`train`, `toy`, `corpus`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Indent the JSON output.
    #[arg(long, global = true)]
    pub pretty: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Lift a graph file into a complex file and print cell counts per rank.
    Lift {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "cellular")]
        mode: LiftMode,
        #[arg(long, default_value_t = DEFAULT_MAX_CYCLE_LEN)]
        max_cycle_len: usize,
    },
    /// Train from a run config (`--config`) into an output directory.
    Train,
    /// Score a trained model directory on one split.
    Eval {
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory; defaults to the one the model was trained on.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
    /// Compare two complexes with color refinement.
    Ccwl {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Lifting applied to graph files.
        #[arg(long, default_value = "graph")]
        mode: LiftMode,
        #[arg(long, default_value_t = DEFAULT_MAX_CYCLE_LEN)]
        max_cycle_len: usize,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Check untrained model readouts against color refinement on a corpus
    /// of `<pair>.a.json` / `<pair>.b.json` files.
    Expressivity {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Lifting applied to graph files.
        #[arg(long, default_value = "graph")]
        mode: LiftMode,
    },
    /// Primitive-op counts and wall time of the scan over sequence lengths.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128, 256, 512])]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        channels: usize,
        #[arg(long, default_value_t = 8)]
        state_dim: usize,
    },
    /// Write the triangles-vs-hexagons toy dataset to `--out`.
    Toy {
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Write random complex pairs to `--out` for `expressivity`. About half
    /// of the pairs are relabeled copies.
    Corpus {
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 7)]
        max_vertices: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

/// Contents of the `train` config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory, relative to the config file.
    pub dataset: PathBuf,
    /// Used when `--out` is absent.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config and resolves its paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset = base.join(&cfg.dataset);
        cfg.out_dir = cfg.out_dir.map(|p| base.join(p));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}

/// `model.json` in a training output directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub config: ModelConfig,
    pub in_features: usize,
    pub num_classes: usize,
    pub dataset: PathBuf,
    /// Seed the dataset splits were drawn from.
    pub seed: u64,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::NonScalarLoss(_) => EXIT_INTERNAL,
        _ => EXIT_INPUT,
    }
}

pub fn error_json(kind: &str, message: &str, code: i32) -> String {
    json!({"error": {"kind": kind, "message": message, "exit_code": code}}).to_string()
}

fn render(value: &Value, pretty: bool) -> String {
    if pretty {
        serde_json::to_string_pretty(value).expect("json values serialize")
    } else {
        value.to_string()
    }
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| Error::Config(format!("{what} requires --out")))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Runs one parsed command and returns its standard output.
pub fn run(cli: &Cli) -> Result<String> {
    let seed = cli.seed.unwrap_or(0);
    let value = match &cli.command {
        Command::Lift { input, mode, max_cycle_len } => cmd_lift(input, *mode, *max_cycle_len, cli.out.as_deref())?,
        Command::Train => {
            let path = cli.config.as_deref().ok_or_else(|| Error::Config("train requires --config".into()))?;
            cmd_train(path, cli.seed, cli.out.as_deref())?
        }
        Command::Eval { model, dataset, split } => cmd_eval(model, dataset.as_deref(), *split)?,
        Command::Ccwl { a, b, mode, max_cycle_len, max_iters } => cmd_ccwl(a, b, *mode, *max_cycle_len, *max_iters)?,
        Command::Expressivity { corpus, seeds, tolerance, mode } => {
            let config = match &cli.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => ModelConfig::default(),
            };
            cmd_expressivity(corpus, &config, *mode, seed, *seeds, *tolerance)?
        }
        Command::Bench { lengths, channels, state_dim } => cmd_bench(lengths, *channels, *state_dim, seed)?,
        Command::Toy { samples } => cmd_toy(require(&cli.out, "toy")?, *samples, seed)?,
        Command::Corpus { pairs, max_vertices } => cmd_corpus(require(&cli.out, "corpus")?, *pairs, *max_vertices, seed)?,
    };
    Ok(render(&value, cli.pretty))
}

/// Parses `args` (program name first), runs the command, prints the result
/// and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_json("usage", e.render().to_string().trim(), EXIT_INPUT));
            return EXIT_INPUT;
        }
    };
    match run(&cli) {
        Ok(out) => {
            println!("{out}");
            0
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_json(e.kind(), &e.to_string(), code));
            code
        }
    }
}

pub fn lift_summary(cc: &CombinatorialComplex) -> Value {
    let [r0, r1, r2] = cc.counts();
    json!({"r0": r0, "r1": r1, "r2": r2})
}

pub fn cmd_lift(input: &Path, mode: LiftMode, max_cycle_len: usize, out: Option<&Path>) -> Result<Value> {
    let text = std::fs::read_to_string(input)?;
    let graph = Graph::from_json(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", input.display())),
        other => other,
    })?;
    let cc = lift(&graph, mode, max_cycle_len)?;
    if let Some(out) = out {
        cc.save(out)?;
    }
    Ok(lift_summary(&cc))
}

pub fn cmd_train(config_path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<Value> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set out_dir".into()))?;
    let data = LabeledDataset::<f64>::load_dir(&cfg.dataset, cfg.model.lifting, cfg.model.max_cycle_len, cfg.train.seed)?;
    let outcome = train(&cfg.model, &cfg.train, &data)?;
    std::fs::create_dir_all(&out_dir)?;
    write_json(&out_dir.join(METRICS_FILE), &outcome.metrics)?;
    outcome.best.save(&out_dir.join(CHECKPOINT_FILE))?;
    let dataset = std::fs::canonicalize(&cfg.dataset).unwrap_or(cfg.dataset.clone());
    let artifact = ModelArtifact {
        config: cfg.model.clone(),
        in_features: data.in_features(),
        num_classes: data.num_classes,
        dataset,
        seed: cfg.train.seed,
    };
    write_json(&out_dir.join(MODEL_FILE), &artifact)?;
    let m = &outcome.metrics;
    Ok(json!({
        "out_dir": out_dir,
        "epochs": m.epochs,
        "final_train_loss": m.train_loss.last(),
        "final_train_accuracy": m.final_train_accuracy,
        "best_epoch": m.best_epoch,
        "best_val_accuracy": m.best_val_accuracy,
        "test_accuracy": m.test_accuracy,
    }))
}

/// Loads a model directory written by `train`.
pub fn load_model(dir: &Path) -> Result<(ModelArtifact, CcMamba<f64>)> {
    let path = dir.join(MODEL_FILE);
    let text = std::fs::read_to_string(&path)?;
    let artifact: ModelArtifact =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut model = CcMamba::new(artifact.config.clone(), artifact.in_features, artifact.num_classes, 0)?;
    model.load_params(&ParamStore::load(&dir.join(CHECKPOINT_FILE))?)?;
    Ok((artifact, model))
}

pub fn cmd_eval(model_dir: &Path, dataset: Option<&Path>, split: SplitName) -> Result<Value> {
    let (artifact, model) = load_model(model_dir)?;
    let dir = dataset.unwrap_or(&artifact.dataset);
    let cfg = model.config();
    let data = LabeledDataset::<f64>::load_dir(dir, cfg.lifting, cfg.max_cycle_len, artifact.seed)?;
    let samples: Vec<usize> = match split {
        SplitName::Train => data.splits.train.clone(),
        SplitName::Val => data.splits.val.clone(),
        SplitName::Test => data.splits.test.clone(),
        SplitName::All => (0..data.num_samples()).collect(),
    };
    let accuracy = with_pool(|| evaluate(&model, &data, &samples))??;
    Ok(json!({"split": split, "samples": samples.len(), "accuracy": accuracy}))
}

pub fn cmd_ccwl(a: &Path, b: &Path, mode: LiftMode, max_cycle_len: usize, max_iters: Option<usize>) -> Result<Value> {
    let ca = load_complex(a, mode, max_cycle_len)?;
    let cb = load_complex(b, mode, max_cycle_len)?;
    Ok(ccwl_report(&ca, &cb, max_iters))
}

/// `classes_*` are the numbers of distinct colors per rank at the last
/// iteration.
pub fn ccwl_report(a: &CombinatorialComplex, b: &CombinatorialComplex, max_iters: Option<usize>) -> Value {
    let cmp = distinguish(a, b, max_iters);
    let result = match cmp.verdict {
        Verdict::Distinguished { .. } => "distinguished",
        Verdict::Indistinguishable { .. } => "indistinguishable",
    };
    json!({
        "result": result,
        "iteration": cmp.verdict.iteration(),
        "classes_a": cmp.colors_a.classes_per_rank(),
        "classes_b": cmp.colors_b.classes_per_rank(),
    })
}

/// Pair names and paths of `<pair>.a.json` files that have a `.b.json` mate.
pub fn corpus_pairs(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let mut pairs = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(pair) = name.strip_suffix(".a.json") {
            let mate = dir.join(format!("{pair}.b.json"));
            if !mate.exists() {
                return Err(Error::Parse(format!("{}: no matching {}", path.display(), mate.display())));
            }
            pairs.push((pair.to_string(), path.clone(), mate));
        }
    }
    pairs.sort_by(|x, y| match (x.0.parse::<u64>(), y.0.parse::<u64>()) {
        (Ok(a), Ok(b)) => a.cmp(&b),
        _ => x.0.cmp(&y.0),
    });
    Ok(pairs)
}

/// Largest absolute difference between the graph readouts of untrained
/// models built from `config` with seeds `first_seed..first_seed + seeds`.
pub fn readout_gaps(
    a: &CombinatorialComplex,
    b: &CombinatorialComplex,
    config: &ModelConfig,
    first_seed: u64,
    seeds: u64,
) -> Result<Vec<f64>> {
    let config = ModelConfig { readout: ReadoutLevel::Graph, ..config.clone() };
    let ones = |cc: &CombinatorialComplex| Tensor::<f64>::full(&[cc.vertex_count(), 1], 1.0);
    (first_seed..first_seed + seeds)
        .map(|s| {
            let model = CcMamba::<f64>::new(config.clone(), 1, 1, s)?;
            Ok(model.embed(a, &ones(a))?.max_abs_diff(&model.embed(b, &ones(b))?))
        })
        .collect()
}

pub fn cmd_expressivity(
    corpus: &Path,
    config: &ModelConfig,
    mode: LiftMode,
    seed: u64,
    seeds: u64,
    tolerance: f64,
) -> Result<Value> {
    config.validate()?;
    if !(tolerance >= 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {tolerance} must be non-negative")));
    }
    let pairs = corpus_pairs(corpus)?;
    let rows = with_pool(|| {
        pairs
            .par_iter()
            .map(|(name, pa, pb)| {
                let a = load_complex(pa, mode, config.max_cycle_len)?;
                let b = load_complex(pb, mode, config.max_cycle_len)?;
                let distinguished = distinguish(&a, &b, None).verdict.is_distinguished();
                let gaps = readout_gaps(&a, &b, config, seed, seeds)?;
                Ok((name.clone(), distinguished, gaps))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut results = Vec::new();
    let mut counterexamples = Vec::new();
    for (name, distinguished, gaps) in rows {
        let differs: Vec<bool> = gaps.iter().map(|&g| g > tolerance).collect();
        for (i, &d) in differs.iter().enumerate() {
            if d && !distinguished {
                counterexamples.push(json!({"pair": name, "seed": seed + i as u64}));
            }
        }
        results.push(json!({
            "pair": name,
            "ccwl_distinguished": distinguished,
            "model_differs": differs,
            "max_gap": gaps.iter().cloned().fold(0.0, f64::max),
        }));
    }
    Ok(json!({
        "pairs": results.len(),
        "seeds": seeds,
        "tolerance": tolerance,
        "results": results,
        "counterexamples": counterexamples,
    }))
}

/// Least-squares line through `(xs, ys)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// 1 when the points lie exactly on the line, including the case of a
    /// single repeated point.
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else if ss_res == 0.0 { 1.0 } else { 0.0 };
    LinearFit { slope, intercept, r_squared }
}

/// Random scan inputs of length `t`: `Δ ∈ [1e-3, 1e-1]`, `A ∈ [-2, -0.1]`.
pub fn random_scan_inputs(
    rng: &mut impl Rng,
    t: usize,
    d: usize,
    n: usize,
) -> Result<[Tensor<f64>; 5]> {
    let mut sample = |rows: usize, cols: usize, lo: f64, hi: f64| {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
    };
    Ok([
        sample(t, d, -1.0, 1.0)?,
        sample(t, d, 1e-3, 1e-1)?,
        sample(t, n, -2.0, -0.1)?,
        sample(t, n, -1.0, 1.0)?,
        sample(t, n, -1.0, 1.0)?,
    ])
}

pub fn cmd_bench(lengths: &[usize], channels: usize, state_dim: usize, seed: u64) -> Result<Value> {
    if lengths.len() < 2 || lengths.contains(&0) {
        return Err(Error::InvalidParameter("bench needs at least two positive lengths".into()));
    }
    if channels == 0 || state_dim == 0 {
        return Err(Error::InvalidParameter("channels and state_dim must be positive".into()));
    }
    let mut rows = Vec::new();
    let mut ops = Vec::new();
    for &t in lengths {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ t as u64);
        let [x, delta, a, b, c] = random_scan_inputs(&mut rng, t, channels, state_dim)?;
        let start = Instant::now();
        let out = scan(&x, &delta, &a, &b, &c)?;
        let seconds = start.elapsed().as_secs_f64();
        ops.push(out.ops as f64);
        rows.push(json!({"length": t, "ops": out.ops, "seconds": seconds}));
    }
    let xs: Vec<f64> = lengths.iter().map(|&t| t as f64).collect();
    let fit = linear_fit(&xs, &ops);
    Ok(json!({"channels": channels, "state_dim": state_dim, "rows": rows, "fit": fit}))
}

pub fn cmd_toy(out: &Path, samples: usize, seed: u64) -> Result<Value> {
    if samples < 2 {
        return Err(Error::InvalidParameter("toy needs at least two samples".into()));
    }
    let (graphs, labels) = toy_triangles_hexagons(samples, seed);
    write_dataset_dir(out, &graphs, &labels, None)?;
    Ok(json!({"out_dir": out, "samples": samples}))
}

pub fn cmd_corpus(out: &Path, pairs: usize, max_vertices: usize, seed: u64) -> Result<Value> {
    if max_vertices == 0 {
        return Err(Error::InvalidParameter("max_vertices must be positive".into()));
    }
    std::fs::create_dir_all(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut copies = 0;
    for i in 0..pairs {
        let a = random_complex(&mut rng, max_vertices);
        let b = if rng.gen_bool(0.5) {
            copies += 1;
            let mut perm: Vec<usize> = (0..a.vertex_count()).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            a.relabel(&perm)?
        } else {
            random_complex(&mut rng, max_vertices)
        };
        a.save(&out.join(format!("{i}.a.json")))?;
        b.save(&out.join(format!("{i}.b.json")))?;
    }
    Ok(json!({"out_dir": out, "pairs": pairs, "relabeled_copies": copies}))
}
