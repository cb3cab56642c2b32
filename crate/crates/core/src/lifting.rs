//! Lifting plain graphs into combinatorial complexes.
//!
//! Four constructions are provided:
//!
//! * `Graph`: nodes and edges only.
//! * `Simplicial`: the clique complex truncated at dimension 2, so every
//!   triangle becomes a face.
//! * `Cellular`: one face per fundamental cycle of a BFS spanning forest,
//!   keeping cycles with at most `max_cycle_len` vertices.
//! * `Hypergraph`: one hyperedge per closed 1-hop neighborhood.
//!
//! All of them are deterministic and seed-free.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::complex::{parse_error, CombinatorialComplex};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_CYCLE_LEN: usize = 6;

/// Simple undirected graph without self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    vertex_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Normalizes edges to `(min, max)` and drops repeats.
    pub fn new(vertex_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            for w in [u, v] {
                if w >= vertex_count {
                    return Err(Error::UnknownVertex { vertex: w, vertex_count });
                }
            }
            if u == v {
                return Err(Error::InvalidParameter(format!("self-loop at vertex {u}")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); vertex_count];
        for &(u, v) in &edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for a in adjacency.iter_mut() {
            a.sort_unstable();
        }
        Ok(Self { vertex_count, edges, adjacency })
    }

    pub fn cycle(n: usize) -> Self {
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n))).expect("cycle is valid")
    }

    pub fn complete(n: usize) -> Self {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)))).expect("complete graph is valid")
    }

    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i))).expect("path is valid")
    }

    /// Vertex-disjoint union, with `other` shifted past `self`.
    pub fn disjoint_union(&self, other: &Graph) -> Self {
        let off = self.vertex_count;
        Self::new(
            off + other.vertex_count,
            self.edges.iter().copied().chain(other.edges.iter().map(|&(u, v)| (u + off, v + off))),
        )
        .expect("union of valid graphs")
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.vertex_count {
            return Err(Error::InvalidParameter("permutation length mismatch".into()));
        }
        Self::new(self.vertex_count, self.edges.iter().map(|&(u, v)| (perm[u], perm[v])))
    }

    /// Number of connected components.
    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.vertex_count];
        let mut count = 0;
        for s in 0..self.vertex_count {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(u) = stack.pop() {
                for &w in &self.adjacency[u] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GraphFile {
            edges: self.edges.iter().map(|&(u, v)| [u, v]).collect(),
            vertex_count: self.vertex_count,
        })
        .expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text).map_err(parse_error)?;
        Self::new(file.vertex_count, file.edges.into_iter().map(|[u, v]| (u, v)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `{"vertex_count": n, "edges": [[u, v], ...]}`
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub edges: Vec<[usize; 2]>,
    pub vertex_count: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiftMode {
    #[default]
    Graph,
    Hypergraph,
    Simplicial,
    Cellular,
}

impl FromStr for LiftMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph" => Ok(LiftMode::Graph),
            "hypergraph" => Ok(LiftMode::Hypergraph),
            "simplicial" => Ok(LiftMode::Simplicial),
            "cellular" => Ok(LiftMode::Cellular),
            other => Err(Error::InvalidParameter(format!("unknown lifting mode '{other}'"))),
        }
    }
}

impl fmt::Display for LiftMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LiftMode::Graph => "graph",
            LiftMode::Hypergraph => "hypergraph",
            LiftMode::Simplicial => "simplicial",
            LiftMode::Cellular => "cellular",
        })
    }
}

pub fn lift(g: &Graph, mode: LiftMode, max_cycle_len: usize) -> Result<CombinatorialComplex> {
    match mode {
        LiftMode::Graph => lift_identity(g),
        LiftMode::Hypergraph => lift_hypergraph(g),
        LiftMode::Simplicial => lift_simplicial(g),
        LiftMode::Cellular => lift_cellular(g, max_cycle_len),
    }
}

fn edge_cells(g: &Graph) -> impl Iterator<Item = (Vec<usize>, usize)> + '_ {
    g.edges.iter().map(|&(u, v)| (vec![u, v], 1))
}

pub fn lift_identity(g: &Graph) -> Result<CombinatorialComplex> {
    CombinatorialComplex::build(g.vertex_count, edge_cells(g))
}

pub fn lift_simplicial(g: &Graph) -> Result<CombinatorialComplex> {
    CombinatorialComplex::build(g.vertex_count, edge_cells(g).chain(triangles(g).into_iter().map(|t| (t.to_vec(), 2))))
}

/// All 3-cliques as sorted triples.
pub fn triangles(g: &Graph) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for &(u, v) in &g.edges {
        let (a, b) = (g.neighbors(u), g.neighbors(v));
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    if a[i] > v {
                        out.push([u, v, a[i]]);
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    out.sort_unstable();
    out
}

pub fn lift_cellular(g: &Graph, max_cycle_len: usize) -> Result<CombinatorialComplex> {
    if max_cycle_len < 3 {
        return Err(Error::InvalidParameter(format!("max_cycle_len must be at least 3, got {max_cycle_len}")));
    }
    let faces = fundamental_cycles(g)
        .into_iter()
        .filter(|c| c.len() <= max_cycle_len)
        .map(|c| (c, 2));
    CombinatorialComplex::build(g.vertex_count, edge_cells(g).chain(faces))
}

/// Vertex sets of the fundamental cycles of a BFS spanning forest. Each BFS
/// starts at the lowest unvisited vertex and visits neighbors in ascending
/// order; cycles are returned sorted.
pub fn fundamental_cycles(g: &Graph) -> Vec<Vec<usize>> {
    let n = g.vertex_count;
    let mut parent = vec![usize::MAX; n];
    let mut depth = vec![0usize; n];
    let mut visited = vec![false; n];
    for root in 0..n {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &w in g.neighbors(u) {
                if !visited[w] {
                    visited[w] = true;
                    parent[w] = u;
                    depth[w] = depth[u] + 1;
                    queue.push_back(w);
                }
            }
        }
    }

    let mut cycles = Vec::new();
    for &(u, v) in &g.edges {
        if parent[u] == v || parent[v] == u {
            continue;
        }
        let (mut a, mut b) = (u, v);
        let mut verts = vec![a, b];
        while a != b {
            if depth[a] >= depth[b] {
                a = parent[a];
                verts.push(a);
            } else {
                b = parent[b];
                verts.push(b);
            }
        }
        verts.sort_unstable();
        verts.dedup();
        cycles.push(verts);
    }
    cycles.sort();
    cycles
}

pub fn lift_hypergraph(g: &Graph) -> Result<CombinatorialComplex> {
    let hyperedges: BTreeSet<Vec<usize>> = (0..g.vertex_count)
        .map(|v| {
            let mut closed = g.neighbors(v).to_vec();
            closed.push(v);
            closed.sort_unstable();
            closed
        })
        .filter(|c| c.len() > 1)
        .collect();
    CombinatorialComplex::build(g.vertex_count, hyperedges.into_iter().map(|h| (h, 1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        Graph::cycle(3)
    }

    #[test]
    fn identity_lift() {
        assert_eq!(lift_identity(&triangle()).unwrap().counts(), [3, 3, 0]);
        assert_eq!(lift_identity(&Graph::new(3, []).unwrap()).unwrap().counts(), [3, 0, 0]);
        assert_eq!(lift_identity(&Graph::path(3)).unwrap().counts(), [3, 2, 0]);
    }

    #[test]
    fn simplicial_lift() {
        assert_eq!(lift_simplicial(&triangle()).unwrap().count(2), 1);
        assert_eq!(lift_simplicial(&Graph::complete(4)).unwrap().count(2), 4);
        assert_eq!(lift_simplicial(&Graph::cycle(6)).unwrap().count(2), 0);
    }

    #[test]
    fn cellular_lift() {
        let c6 = lift_cellular(&Graph::cycle(6), 6).unwrap();
        assert_eq!(c6.counts(), [6, 6, 1]);
        assert_eq!(c6.cells(2)[0].vertices(), &[0, 1, 2, 3, 4, 5]);

        let two = Graph::cycle(3).disjoint_union(&Graph::cycle(3));
        let cc = lift_cellular(&two, 6).unwrap();
        assert_eq!(cc.count(2), 2);
        assert!(cc.cells(2).iter().all(|f| f.len() == 3));

        let tree = Graph::new(5, [(0, 1), (0, 2), (2, 3), (2, 4)]).unwrap();
        assert_eq!(lift_cellular(&tree, 6).unwrap().count(2), 0);

        assert_eq!(lift_cellular(&Graph::cycle(6), 5).unwrap().count(2), 0);
        assert!(matches!(lift_cellular(&triangle(), 2), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn hypergraph_lift() {
        let cc = lift_hypergraph(&triangle()).unwrap();
        assert_eq!(cc.count(1), 1);
        assert_eq!(cc.cells(1)[0].vertices(), &[0, 1, 2]);

        let star = Graph::new(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let cc = lift_hypergraph(&star).unwrap();
        let sets: Vec<_> = cc.cells(1).iter().map(|c| c.vertices().to_vec()).collect();
        assert_eq!(sets, vec![vec![0, 1], vec![0, 1, 2, 3], vec![0, 2], vec![0, 3]]);

        let single = lift_hypergraph(&Graph::new(1, []).unwrap()).unwrap();
        assert_eq!(single.counts(), [1, 0, 0]);
    }

    #[test]
    fn graph_validation() {
        assert!(matches!(Graph::new(2, [(1, 1)]), Err(Error::InvalidParameter(_))));
        assert!(matches!(Graph::new(2, [(0, 2)]), Err(Error::UnknownVertex { .. })));
        assert_eq!(Graph::new(2, [(0, 1), (1, 0)]).unwrap().edges().len(), 1);
        let g = Graph::from_json("{\"vertex_count\":3,\"edges\":[[0,1],[2,1]]}").unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(Graph::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn mode_parsing() {
        for m in [LiftMode::Graph, LiftMode::Hypergraph, LiftMode::Simplicial, LiftMode::Cellular] {
            assert_eq!(m.to_string().parse::<LiftMode>().unwrap(), m);
        }
        assert!("cubical".parse::<LiftMode>().is_err());
    }
}
