//! Combinatorial complexes restricted to ranks 0, 1 and 2.
//!
//! A complex is built once from a list of `(vertex set, rank)` pairs and is
//! immutable afterwards. Cells are stored per rank in lexicographic order of
//! their sorted vertex sets, and every vertex `0..vertex_count` is present as
//! a rank-0 singleton, so the node index of vertex `v` is `v` itself.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest supported rank.
pub const MAX_RANK: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    vertices: Vec<usize>,
    rank: usize,
}

impl Cell {
    /// Creates a cell, sorting its vertices. Rejects empty and repeated vertex lists.
    pub fn new(mut vertices: Vec<usize>, rank: usize) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::InvalidCell("empty vertex set".into()));
        }
        vertices.sort_unstable();
        if vertices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidCell(format!("repeated vertex in {vertices:?}")));
        }
        if rank > MAX_RANK {
            return Err(Error::InvalidCell(format!("rank {rank} exceeds {MAX_RANK}")));
        }
        if rank == 0 && vertices.len() != 1 {
            return Err(Error::InvalidCell(format!("rank-0 cell {vertices:?} is not a singleton")));
        }
        Ok(Self { vertices, rank })
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Subset test on sorted vertex lists.
    pub fn is_subset_of(&self, other: &Cell) -> bool {
        is_sorted_subset(&self.vertices, &other.vertices)
    }
}

fn is_sorted_subset(small: &[usize], big: &[usize]) -> bool {
    if small.len() > big.len() {
        return false;
    }
    let mut j = 0;
    for &v in small {
        while j < big.len() && big[j] < v {
            j += 1;
        }
        if j == big.len() || big[j] != v {
            return false;
        }
        j += 1;
    }
    true
}

/// Binary containment matrix between two consecutive ranks.
///
/// Entry `(i, j)` is set iff lower-rank cell `i` is contained in upper-rank
/// cell `j`. Both the row and column adjacency lists are kept sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IncidenceMatrix {
    rows: usize,
    cols: usize,
    by_row: Vec<Vec<usize>>,
    by_col: Vec<Vec<usize>>,
}

impl IncidenceMatrix {
    fn from_columns(rows: usize, by_col: Vec<Vec<usize>>) -> Self {
        let mut by_row = vec![Vec::new(); rows];
        for (j, col) in by_col.iter().enumerate() {
            for &i in col {
                by_row[i].push(j);
            }
        }
        Self { rows, cols: by_col.len(), by_row, by_col }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Upper-rank cells containing lower-rank cell `i`.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.by_row[i]
    }

    /// Lower-rank cells contained in upper-rank cell `j`.
    pub fn col(&self, j: usize) -> &[usize] {
        &self.by_col[j]
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.by_col.get(j).is_some_and(|c| c.binary_search(&i).is_ok())
    }

    pub fn nnz(&self) -> usize {
        self.by_col.iter().map(Vec::len).sum()
    }

    /// All set positions in row-major order.
    pub fn entries(&self) -> Vec<(usize, usize)> {
        self.by_row
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&j| (i, j)))
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut m = vec![vec![0u8; self.cols]; self.rows];
        for (i, j) in self.entries() {
            m[i][j] = 1;
        }
        m
    }
}

/// Incidence-induced neighborhood types. The name gives the message flow:
/// `NodesToEdge` collects the nodes of an edge, and so on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// N₀→₁(e): nodes incident to an edge.
    NodesToEdge,
    /// N₁→₀(v): edges incident to a node.
    EdgesToNode,
    /// N₂→₁(e): faces containing an edge.
    FacesToEdge,
    /// N₁→₂(f): edges bounding a face.
    EdgesToFace,
}

impl Direction {
    /// Rank of the cell the neighborhood is queried for.
    pub fn target_rank(self) -> usize {
        match self {
            Direction::NodesToEdge | Direction::FacesToEdge => 1,
            Direction::EdgesToNode => 0,
            Direction::EdgesToFace => 2,
        }
    }

    /// Rank of the cells returned.
    pub fn source_rank(self) -> usize {
        match self {
            Direction::NodesToEdge => 0,
            Direction::EdgesToNode | Direction::EdgesToFace => 1,
            Direction::FacesToEdge => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CombinatorialComplex {
    vertex_count: usize,
    cells: [Vec<Cell>; 3],
    b1: IncidenceMatrix,
    b2: IncidenceMatrix,
}

impl CombinatorialComplex {
    /// Validates and canonicalizes a cell list. Missing rank-0 singletons are
    /// synthesized for every vertex id below `vertex_count`.
    pub fn build<I>(vertex_count: usize, cells: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<usize>, usize)>,
    {
        let mut seen: BTreeSet<Cell> = BTreeSet::new();
        for (vertices, rank) in cells {
            if let Some(&v) = vertices.iter().find(|&&v| v >= vertex_count) {
                return Err(Error::UnknownVertex { vertex: v, vertex_count });
            }
            let cell = Cell::new(vertices, rank)?;
            if seen.contains(&cell) {
                return Err(Error::DuplicateCell { vertices: cell.vertices, rank: cell.rank });
            }
            seen.insert(cell);
        }
        for v in 0..vertex_count {
            seen.insert(Cell { vertices: vec![v], rank: 0 });
        }

        let mut by_rank: [Vec<Cell>; 3] = Default::default();
        for cell in seen {
            by_rank[cell.rank].push(cell);
        }
        for cells in by_rank.iter_mut() {
            cells.sort();
        }

        check_monotone(&by_rank)?;

        let b1 = containment(vertex_count, &by_rank[0], &by_rank[1]);
        let b2 = containment(vertex_count, &by_rank[1], &by_rank[2]);
        Ok(Self { vertex_count, cells: by_rank, b1, b2 })
    }

    pub fn empty() -> Self {
        Self::build(0, std::iter::empty()).expect("empty complex is valid")
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    /// Maximal rank present, or -1 for the empty complex.
    pub fn dimension(&self) -> i32 {
        (0..=MAX_RANK).rev().find(|&r| !self.cells[r].is_empty()).map_or(-1, |r| r as i32)
    }

    pub fn cells(&self, rank: usize) -> &[Cell] {
        &self.cells[rank]
    }

    pub fn count(&self, rank: usize) -> usize {
        self.cells.get(rank).map_or(0, Vec::len)
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.count(0), self.count(1), self.count(2)]
    }

    pub fn total_cells(&self) -> usize {
        self.counts().iter().sum()
    }

    pub fn all_cells(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().flatten()
    }

    /// Index of a cell with the given (unsorted) vertex set at `rank`.
    pub fn index_of(&self, vertices: &[usize], rank: usize) -> Option<usize> {
        let mut key = vertices.to_vec();
        key.sort_unstable();
        self.cells.get(rank)?.binary_search_by(|c| c.vertices.as_slice().cmp(&key)).ok()
    }

    /// B₁ (`level = 1`, nodes × edges) or B₂ (`level = 2`, edges × faces).
    pub fn incidence(&self, level: usize) -> Result<&IncidenceMatrix> {
        match level {
            1 => Ok(&self.b1),
            2 => Ok(&self.b2),
            _ => Err(Error::InvalidParameter(format!("incidence level must be 1 or 2, got {level}"))),
        }
    }

    pub fn b1(&self) -> &IncidenceMatrix {
        &self.b1
    }

    pub fn b2(&self) -> &IncidenceMatrix {
        &self.b2
    }

    pub fn neighborhood(&self, cell_index: usize, direction: Direction) -> Result<&[usize]> {
        let len = self.count(direction.target_rank());
        if cell_index >= len {
            return Err(Error::IndexOutOfRange { index: cell_index, len });
        }
        Ok(match direction {
            Direction::NodesToEdge => self.b1.col(cell_index),
            Direction::EdgesToNode => self.b1.row(cell_index),
            Direction::FacesToEdge => self.b2.row(cell_index),
            Direction::EdgesToFace => self.b2.col(cell_index),
        })
    }

    /// Rebuilds the complex with vertex `v` renamed to `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.vertex_count {
            return Err(Error::InvalidParameter(format!(
                "permutation has length {}, complex has {} vertices",
                perm.len(),
                self.vertex_count
            )));
        }
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check.iter().enumerate().any(|(i, &v)| i != v) {
            return Err(Error::InvalidParameter("not a permutation".into()));
        }
        Self::build(
            self.vertex_count,
            self.all_cells()
                .map(|c| (c.vertices.iter().map(|&v| perm[v]).collect(), c.rank)),
        )
    }

    /// The cell list in canonical order, as `(vertices, rank)` pairs.
    pub fn to_cell_list(&self) -> Vec<(Vec<usize>, usize)> {
        self.all_cells().map(|c| (c.vertices.clone(), c.rank)).collect()
    }

    pub fn to_file(&self) -> ComplexFile {
        ComplexFile {
            cells: self
                .all_cells()
                .map(|c| CellRecord { rank: c.rank, vertices: c.vertices.clone() })
                .collect(),
            vertex_count: self.vertex_count,
        }
    }

    pub fn from_file(file: &ComplexFile) -> Result<Self> {
        Self::build(
            file.vertex_count,
            file.cells.iter().map(|c| (c.vertices.clone(), c.rank)),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("complex serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ComplexFile = serde_json::from_str(text).map_err(parse_error)?;
        Self::from_file(&file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

pub(crate) fn parse_error(e: serde_json::Error) -> Error {
    // serde_json already reports "at line L column C"
    Error::Parse(e.to_string())
}

/// On-disk complex layout. Field order is alphabetical so the default
/// serializer emits sorted keys.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexFile {
    pub cells: Vec<CellRecord>,
    pub vertex_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellRecord {
    pub rank: usize,
    pub vertices: Vec<usize>,
}

fn check_monotone(by_rank: &[Vec<Cell>; 3]) -> Result<()> {
    for hi in 1..=MAX_RANK {
        for lo in 0..hi {
            for sigma in &by_rank[hi] {
                for tau in &by_rank[lo] {
                    if sigma.is_subset_of(tau) {
                        return Err(Error::RankViolation {
                            inner: sigma.vertices.clone(),
                            inner_rank: hi,
                            outer: tau.vertices.clone(),
                            outer_rank: lo,
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

fn containment(vertex_count: usize, lower: &[Cell], upper: &[Cell]) -> IncidenceMatrix {
    // candidate lower cells are found through their vertices
    let mut at_vertex: Vec<Vec<usize>> = vec![Vec::new(); vertex_count];
    for (i, c) in lower.iter().enumerate() {
        for &v in &c.vertices {
            at_vertex[v].push(i);
        }
    }
    let mut by_col = Vec::with_capacity(upper.len());
    for tau in upper {
        let mut hits: HashMap<usize, ()> = HashMap::new();
        for &v in &tau.vertices {
            for &i in &at_vertex[v] {
                if !hits.contains_key(&i) && lower[i].is_subset_of(tau) {
                    hits.insert(i, ());
                }
            }
        }
        let mut col: Vec<usize> = hits.into_keys().collect();
        col.sort_unstable();
        by_col.push(col);
    }
    IncidenceMatrix::from_columns(lower.len(), by_col)
}
