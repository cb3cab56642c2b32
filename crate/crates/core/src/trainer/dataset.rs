use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complex::CombinatorialComplex;
use crate::error::{Error, Result};
use crate::lifting::{lift, Graph, LiftMode};
use crate::model::CcMamba;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Class of each complex, or of each node of each complex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Labels {
    Graph(Vec<usize>),
    Node(Vec<Vec<usize>>),
}

/// Sample indices of each split. For node labels a sample is a node, counted
/// across complexes in order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct LabeledDataset<S> {
    pub complexes: Vec<CombinatorialComplex>,
    /// One `|V|×f` matrix per complex.
    pub features: Vec<Tensor<S>>,
    pub labels: Labels,
    pub num_classes: usize,
    pub splits: Splits,
}

impl<S: Scalar> LabeledDataset<S> {
    /// Graph-level dataset with all-ones node features and seeded splits.
    pub fn from_complexes(complexes: Vec<CombinatorialComplex>, labels: Vec<usize>, seed: u64) -> Result<Self> {
        let features = complexes.iter().map(|cc| Tensor::full(&[cc.vertex_count(), 1], S::one())).collect();
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        let splits = seeded_splits(&labels, seed);
        let data = Self { complexes, features, labels: Labels::Graph(labels), num_classes, splits };
        data.validate()?;
        Ok(data)
    }

    pub fn in_features(&self) -> usize {
        self.features.first().map_or(0, Tensor::cols)
    }

    pub fn num_samples(&self) -> usize {
        match &self.labels {
            Labels::Graph(l) => l.len(),
            Labels::Node(l) => l.iter().map(Vec::len).sum(),
        }
    }

    /// `(complex, vertex)` of a node-level sample; `(sample, 0)` for graph labels.
    pub fn node_sample(&self, sample: usize) -> (usize, usize) {
        match &self.labels {
            Labels::Graph(_) => (sample, 0),
            Labels::Node(l) => {
                let mut rest = sample;
                for (c, nodes) in l.iter().enumerate() {
                    if rest < nodes.len() {
                        return (c, rest);
                    }
                    rest -= nodes.len();
                }
                panic!("sample {sample} out of range")
            }
        }
    }

    pub fn sample_label(&self, sample: usize) -> usize {
        match &self.labels {
            Labels::Graph(l) => l[sample],
            Labels::Node(l) => {
                let (c, v) = self.node_sample(sample);
                l[c][v]
            }
        }
    }

    pub fn sample_labels(&self) -> Vec<usize> {
        (0..self.num_samples()).map(|s| self.sample_label(s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.complexes.len();
        if self.features.len() != n {
            return Err(Error::shape("dataset", format!("{} feature matrices for {n} complexes", self.features.len())));
        }
        let width = self.in_features();
        for (i, (cc, x)) in self.complexes.iter().zip(&self.features).enumerate() {
            if x.rank() != 2 || x.rows() != cc.vertex_count() || x.cols() != width {
                return Err(Error::shape(
                    "dataset",
                    format!("complex {i}: {} vertices, features {:?}", cc.vertex_count(), x.shape()),
                ));
            }
        }
        match &self.labels {
            Labels::Graph(l) if l.len() != n => {
                return Err(Error::shape("dataset", format!("{} labels for {n} complexes", l.len())));
            }
            Labels::Node(l) => {
                if l.len() != n || l.iter().zip(&self.complexes).any(|(v, cc)| v.len() != cc.vertex_count()) {
                    return Err(Error::shape("dataset", "node labels do not match vertex counts"));
                }
            }
            _ => {}
        }
        for label in self.sample_labels() {
            if label >= self.num_classes {
                return Err(Error::InvalidLabel { label, num_classes: self.num_classes });
            }
        }
        let total = self.num_samples();
        let mut seen = vec![false; total];
        for split in [&self.splits.train, &self.splits.val, &self.splits.test] {
            for &s in split {
                if s >= total {
                    return Err(Error::IndexOutOfRange { index: s, len: total });
                }
                if seen[s] {
                    return Err(Error::InvalidParameter(format!("sample {s} appears in more than one split")));
                }
                seen[s] = true;
            }
        }
        Ok(())
    }

    pub fn check_model(&self, model: &CcMamba<S>) -> Result<()> {
        if model.in_features() != self.in_features() || model.num_classes() < self.num_classes {
            return Err(Error::shape(
                "dataset",
                format!(
                    "model expects {} features and {} classes, data has {} and {}",
                    model.in_features(),
                    model.num_classes(),
                    self.in_features(),
                    self.num_classes
                ),
            ));
        }
        Ok(())
    }

    /// Reads a dataset directory:
    ///
    /// * `graphs/<id>.json`: graph (`edges`) or complex (`cells`) files;
    ///   graphs are lifted with `mode`.
    /// * `features.csv` (optional): header `complex_id,node_id,f1,...`.
    ///   Without it every node gets the single feature 1.
    /// * `labels.csv`: header `complex_id,label` or `complex_id,node_id,label`.
    /// * `splits.json` (optional): `{"train": [...], "val": [...], "test": [...]}`;
    ///   without it a stratified 60/20/20 split is drawn from `seed`.
    pub fn load_dir(dir: &Path, mode: LiftMode, max_cycle_len: usize, seed: u64) -> Result<Self> {
        if !dir.is_dir() {
            let msg = format!("dataset directory {} not found", dir.display());
            return Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, msg)));
        }
        let (ids, complexes) = read_graphs(&dir.join("graphs"), mode, max_cycle_len)?;
        let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let features = match dir.join("features.csv") {
            p if p.exists() => read_features(&p, &index, &complexes)?,
            _ => complexes.iter().map(|cc| Tensor::full(&[cc.vertex_count(), 1], S::one())).collect(),
        };
        let labels = read_labels(&dir.join("labels.csv"), &index, &complexes)?;
        let num_classes = match &labels {
            Labels::Graph(l) => l.iter().max().map_or(0, |&m| m + 1),
            Labels::Node(l) => l.iter().flatten().max().map_or(0, |&m| m + 1),
        };
        let mut data = Self { complexes, features, labels, num_classes, splits: Splits::default() };
        let splits_path = dir.join("splits.json");
        data.splits = if splits_path.exists() {
            let text = std::fs::read_to_string(&splits_path)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", splits_path.display())))?
        } else {
            seeded_splits(&data.sample_labels(), seed)
        };
        data.validate()?;
        Ok(data)
    }
}

fn stem_key(name: &str) -> (u8, u64, String) {
    match name.parse::<u64>() {
        Ok(n) => (0, n, String::new()),
        Err(_) => (1, 0, name.to_string()),
    }
}

fn read_graphs(dir: &Path, mode: LiftMode, max_cycle_len: usize) -> Result<(Vec<String>, Vec<CombinatorialComplex>)> {
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            files.push((stem, path));
        }
    }
    files.sort_by_key(|(stem, _)| stem_key(stem));
    let mut ids = Vec::with_capacity(files.len());
    let mut complexes = Vec::with_capacity(files.len());
    for (stem, path) in files {
        let cc = load_complex(&path, mode, max_cycle_len)?;
        ids.push(stem);
        complexes.push(cc);
    }
    Ok((ids, complexes))
}

/// Reads a complex file (`cells`) as is, or a graph file (`edges`) lifted
/// with `mode`.
pub fn load_complex(path: &Path, mode: LiftMode, max_cycle_len: usize) -> Result<CombinatorialComplex> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let with_path = |e: Error| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    };
    if value.get("cells").is_some() {
        CombinatorialComplex::from_json(&text).map_err(with_path)
    } else {
        let g = Graph::from_json(&text).map_err(with_path)?;
        lift(&g, mode, max_cycle_len)
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse(format!("{}: line {line}: bad or missing column {}", path.display(), i + 1)))
}

fn lookup(index: &HashMap<&str, usize>, id: &str, path: &Path) -> Result<usize> {
    index
        .get(id)
        .copied()
        .ok_or_else(|| Error::Parse(format!("{}: unknown complex id '{id}'", path.display())))
}

fn read_features<S: Scalar>(
    path: &Path,
    index: &HashMap<&str, usize>,
    complexes: &[CombinatorialComplex],
) -> Result<Vec<Tensor<S>>> {
    let mut reader = csv_reader(path)?;
    let width = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .len()
        .checked_sub(2)
        .filter(|&w| w > 0)
        .ok_or_else(|| Error::Parse(format!("{}: need complex_id, node_id and at least one feature", path.display())))?;
    let mut rows: Vec<Vec<Option<Vec<f64>>>> = complexes.iter().map(|cc| vec![None; cc.vertex_count()]).collect();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let c = lookup(index, rec.get(0).unwrap_or_default(), path)?;
        let v: usize = field(&rec, 1, path)?;
        if v >= rows[c].len() {
            return Err(Error::UnknownVertex { vertex: v, vertex_count: rows[c].len() });
        }
        let values = (0..width).map(|j| field::<f64>(&rec, j + 2, path)).collect::<Result<Vec<_>>>()?;
        rows[c][v] = Some(values);
    }
    rows.into_iter()
        .enumerate()
        .map(|(c, r)| {
            let n = r.len();
            let flat: Vec<f64> = r
                .into_iter()
                .enumerate()
                .map(|(v, row)| {
                    row.ok_or_else(|| Error::Parse(format!("{}: complex #{c} node {v} has no features", path.display())))
                })
                .collect::<Result<Vec<_>>>()?
                .concat();
            Tensor::from_f64(&[n, width], &flat)
        })
        .collect()
}

fn read_labels(path: &Path, index: &HashMap<&str, usize>, complexes: &[CombinatorialComplex]) -> Result<Labels> {
    let mut reader = csv_reader(path)?;
    let columns = reader.headers().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?.len();
    match columns {
        2 => {
            let mut labels = vec![None; complexes.len()];
            for rec in reader.records() {
                let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
                let c = lookup(index, rec.get(0).unwrap_or_default(), path)?;
                labels[c] = Some(field(&rec, 1, path)?);
            }
            let labels = labels
                .into_iter()
                .enumerate()
                .map(|(i, l)| l.ok_or_else(|| Error::Parse(format!("{}: complex #{i} has no label", path.display()))))
                .collect::<Result<Vec<usize>>>()?;
            Ok(Labels::Graph(labels))
        }
        3 => {
            let mut labels: Vec<Vec<Option<usize>>> = complexes.iter().map(|cc| vec![None; cc.vertex_count()]).collect();
            for rec in reader.records() {
                let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
                let c = lookup(index, rec.get(0).unwrap_or_default(), path)?;
                let v: usize = field(&rec, 1, path)?;
                if v >= labels[c].len() {
                    return Err(Error::UnknownVertex { vertex: v, vertex_count: labels[c].len() });
                }
                labels[c][v] = Some(field(&rec, 2, path)?);
            }
            let labels = labels
                .into_iter()
                .map(|nodes| nodes.into_iter().collect::<Option<Vec<usize>>>())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Parse(format!("{}: every node needs a label", path.display())))?;
            Ok(Labels::Node(labels))
        }
        n => Err(Error::Parse(format!("{}: expected 2 or 3 columns, found {n}", path.display()))),
    }
}

/// Stratified 60/20/20 split: every class is shuffled with `seed` and cut
/// separately. Each split is returned sorted.
pub fn seeded_splits(labels: &[usize], seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut splits = Splits::default();
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((n as f64) * 0.6).round() as usize;
        let n_val = ((n as f64) * 0.2).round() as usize;
        let n_val = n_val.min(n - n_train);
        splits.train.extend_from_slice(&members[..n_train]);
        splits.val.extend_from_slice(&members[n_train..n_train + n_val]);
        splits.test.extend_from_slice(&members[n_train + n_val..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    splits
}

/// Writes graphs and graph-level labels in the layout read by
/// [`LabeledDataset::load_dir`]. Node features are left implicit.
pub fn write_dataset_dir(dir: &Path, graphs: &[Graph], labels: &[usize], splits: Option<&Splits>) -> Result<()> {
    if graphs.len() != labels.len() {
        return Err(Error::shape("write_dataset_dir", format!("{} graphs, {} labels", graphs.len(), labels.len())));
    }
    let gdir = dir.join("graphs");
    std::fs::create_dir_all(&gdir)?;
    let mut csv = String::from("complex_id,label\n");
    for (i, (g, l)) in graphs.iter().zip(labels).enumerate() {
        std::fs::write(gdir.join(format!("{i}.json")), g.to_json())?;
        csv.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(dir.join("labels.csv"), csv)?;
    if let Some(s) = splits {
        std::fs::write(dir.join("splits.json"), serde_json::to_string(s).expect("splits serialize"))?;
    }
    Ok(())
}

/// Two-class toy task. Class 0 samples are one or two triangles, class 1
/// samples one or two hexagons; each sample also carries a pendant path of
/// 0 to 2 vertices. Classes alternate, starting with class 0.
pub fn toy_triangles_hexagons(n: usize, seed: u64) -> (Vec<Graph>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let ring = if class == 0 { 3 } else { 6 };
        let copies = rng.gen_range(1..=2);
        let tail = rng.gen_range(0..=2);
        let mut edges = Vec::new();
        for c in 0..copies {
            let base = c * ring;
            edges.extend((0..ring).map(|k| (base + k, base + (k + 1) % ring)));
        }
        let mut last = 0;
        let mut next = copies * ring;
        for _ in 0..tail {
            edges.push((last, next));
            last = next;
            next += 1;
        }
        graphs.push(Graph::new(next, edges).expect("toy graph is simple"));
        labels.push(class);
    }
    (graphs, labels)
}

/// Erdős–Rényi graph with `1..=max_vertices` vertices and edge
/// probability drawn from `[0.2, 0.6]`.
pub fn random_graph<R: Rng>(rng: &mut R, max_vertices: usize) -> Graph {
    let n = rng.gen_range(1..=max_vertices.max(1));
    let p = rng.gen_range(0.2..0.6);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::new(n, edges).expect("random graph is simple")
}

/// A random complex: either a lifted random graph, or a random collection
/// of 2- to 4-vertex cells assigned ranks 1 and 2.
pub fn random_complex<R: Rng>(rng: &mut R, max_vertices: usize) -> CombinatorialComplex {
    let modes = [LiftMode::Graph, LiftMode::Hypergraph, LiftMode::Simplicial, LiftMode::Cellular];
    if rng.gen_bool(0.75) {
        let g = random_graph(rng, max_vertices);
        let mode = modes[rng.gen_range(0..modes.len())];
        return lift(&g, mode, 6).expect("lift of a valid graph");
    }
    let n = rng.gen_range(2..=max_vertices.max(2));
    let mut cells: Vec<(Vec<usize>, usize)> = Vec::new();
    for _ in 0..rng.gen_range(0..=2 * n) {
        let size = rng.gen_range(2..=4.min(n));
        let mut verts: Vec<usize> = (0..n).collect();
        verts.shuffle(rng);
        verts.truncate(size);
        let rank = if size == 2 { 1 } else { rng.gen_range(1..=2) };
        cells.push((verts, rank));
        if CombinatorialComplex::build(n, cells.clone()).is_err() {
            cells.pop();
        }
    }
    CombinatorialComplex::build(n, cells).expect("cells were checked one by one")
}
