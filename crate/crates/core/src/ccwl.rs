//! Color refinement on combinatorial complexes and an exhaustive
//! isomorphism check for small inputs.
//!
//! A node is recolored from its own color and the multiset of colors of its
//! edges; an edge from its nodes and its faces; a face from its edges.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::Serialize;

use crate::complex::CombinatorialComplex;
use crate::error::{Error, Result};

/// Largest vertex count accepted by [`brute_force_isomorphic`].
pub const BRUTE_FORCE_LIMIT: usize = 10;

/// Color of every cell, indexed like [`CombinatorialComplex::cells`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ColorAssignment {
    pub colors: [Vec<usize>; 3],
    pub iteration: usize,
}

impl ColorAssignment {
    pub fn is_empty(&self) -> bool {
        self.colors.iter().all(Vec::is_empty)
    }

    /// Distinct colors over all cells. Signatures carry the rank, so after
    /// the first step no color is shared between ranks.
    pub fn num_classes(&self) -> usize {
        self.colors.iter().flatten().collect::<BTreeSet<_>>().len()
    }

    /// Distinct colors within each rank.
    pub fn classes_per_rank(&self) -> [usize; 3] {
        let count = |v: &Vec<usize>| v.iter().collect::<BTreeSet<_>>().len();
        [count(&self.colors[0]), count(&self.colors[1]), count(&self.colors[2])]
    }

    /// Multiset of `(rank, color)` over all cells.
    pub fn histogram(&self) -> BTreeMap<(usize, usize), usize> {
        let mut h = BTreeMap::new();
        for (rank, colors) in self.colors.iter().enumerate() {
            for &c in colors {
                *h.entry((rank, c)).or_insert(0) += 1;
            }
        }
        h
    }
}

/// True when every class of `finer` lies inside one class of `coarser`.
pub fn is_refinement(finer: &ColorAssignment, coarser: &ColorAssignment) -> bool {
    let mut image: HashMap<usize, usize> = HashMap::new();
    for (f, c) in finer.colors.iter().zip(&coarser.colors) {
        if f.len() != c.len() {
            return false;
        }
        for (&a, &b) in f.iter().zip(c) {
            if *image.entry(a).or_insert(b) != b {
                return false;
            }
        }
    }
    true
}

pub fn init_colors(cc: &CombinatorialComplex) -> ColorAssignment {
    ColorAssignment { colors: cc.counts().map(|n| vec![0; n]), iteration: 0 }
}

/// Rank, own color, then the sorted neighbor color lists.
type Signature = (usize, usize, Vec<Vec<usize>>);

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

fn signatures(cc: &CombinatorialComplex, colors: &ColorAssignment) -> [Vec<Signature>; 3] {
    let [c0, c1, c2] = &colors.colors;
    let b1 = cc.b1();
    let b2 = cc.b2();
    let nodes = (0..cc.count(0))
        .map(|v| (0, c0[v], vec![sorted(b1.row(v).iter().map(|&e| c1[e]).collect())]))
        .collect();
    let edges = (0..cc.count(1))
        .map(|e| {
            let down = sorted(b1.col(e).iter().map(|&v| c0[v]).collect());
            let up = sorted(b2.row(e).iter().map(|&f| c2[f]).collect());
            (1, c1[e], vec![down, up])
        })
        .collect();
    let faces = (0..cc.count(2))
        .map(|f| (2, c2[f], vec![sorted(b2.col(f).iter().map(|&e| c1[e]).collect())]))
        .collect();
    [nodes, edges, faces]
}

/// One refinement step over several complexes at once. New colors index
/// the sorted set of all signatures that occur, so they are contiguous from
/// 0, shared between the complexes, and independent of vertex names.
pub fn refine_joint(items: &[(&CombinatorialComplex, &ColorAssignment)]) -> Vec<ColorAssignment> {
    let sigs: Vec<[Vec<Signature>; 3]> = items.iter().map(|(cc, colors)| signatures(cc, colors)).collect();
    let dictionary: BTreeSet<&Signature> = sigs.iter().flat_map(|s| s.iter().flatten()).collect();
    let ids: HashMap<&Signature, usize> = dictionary.into_iter().enumerate().map(|(i, s)| (s, i)).collect();
    sigs.iter()
        .zip(items)
        .map(|(s, (_, colors))| ColorAssignment {
            colors: [0, 1, 2].map(|k| s[k].iter().map(|sig| ids[sig]).collect()),
            iteration: colors.iteration + 1,
        })
        .collect()
}

pub fn refine_step(cc: &CombinatorialComplex, colors: &ColorAssignment) -> ColorAssignment {
    refine_joint(&[(cc, colors)]).pop().expect("one input, one output")
}

/// Refines until the partition stops changing. The returned assignment's
/// `iteration` is the first step that produced no new class.
pub fn stable_colors(cc: &CombinatorialComplex) -> ColorAssignment {
    let mut colors = init_colors(cc);
    loop {
        let next = refine_step(cc, &colors);
        if next.num_classes() == colors.num_classes() {
            return next;
        }
        colors = next;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "lowercase")]
pub enum Verdict {
    /// The label multisets first differ at this iteration.
    Distinguished { iteration: usize },
    /// Both refinements stabilized (or `max_iters` ran out) with equal
    /// multisets at every iteration.
    Indistinguishable { iteration: usize },
}

impl Verdict {
    pub fn is_distinguished(&self) -> bool {
        matches!(self, Verdict::Distinguished { .. })
    }

    pub fn iteration(&self) -> usize {
        match *self {
            Verdict::Distinguished { iteration } | Verdict::Indistinguishable { iteration } => iteration,
        }
    }
}

/// Outcome of [`distinguish`] with the final colorings of both complexes.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub verdict: Verdict,
    pub colors_a: ColorAssignment,
    pub colors_b: ColorAssignment,
}

/// Joint refinement of two complexes with a shared color dictionary,
/// comparing the rank-tagged color multisets after every step. `max_iters`
/// defaults to the cell count of the larger complex.
pub fn distinguish(a: &CombinatorialComplex, b: &CombinatorialComplex, max_iters: Option<usize>) -> Comparison {
    let max_iters = max_iters.unwrap_or_else(|| a.total_cells().max(b.total_cells()));
    let mut ca = init_colors(a);
    let mut cb = init_colors(b);
    if ca.histogram() != cb.histogram() {
        return Comparison { verdict: Verdict::Distinguished { iteration: 0 }, colors_a: ca, colors_b: cb };
    }
    for it in 1..=max_iters {
        let mut next = refine_joint(&[(a, &ca), (b, &cb)]);
        let nb = next.pop().expect("two outputs");
        let na = next.pop().expect("two outputs");
        if na.histogram() != nb.histogram() {
            return Comparison { verdict: Verdict::Distinguished { iteration: it }, colors_a: na, colors_b: nb };
        }
        let stable = na.num_classes() == ca.num_classes() && nb.num_classes() == cb.num_classes();
        ca = na;
        cb = nb;
        if stable {
            break;
        }
    }
    let iteration = ca.iteration;
    Comparison { verdict: Verdict::Indistinguishable { iteration }, colors_a: ca, colors_b: cb }
}

type CellKey = (usize, Vec<usize>);

/// Exhaustive search for a vertex bijection that maps the cells of `a`
/// onto the cells of `b` rank by rank.
pub fn brute_force_isomorphic(a: &CombinatorialComplex, b: &CombinatorialComplex) -> Result<bool> {
    let n = a.vertex_count().max(b.vertex_count());
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(n));
    }
    if a.vertex_count() != b.vertex_count() || a.counts() != b.counts() {
        return Ok(false);
    }
    let n = a.vertex_count();
    let profile = |cc: &CombinatorialComplex| -> Vec<Vec<(usize, usize)>> {
        let mut p = vec![Vec::new(); n];
        for cell in cc.all_cells() {
            for &v in cell.vertices() {
                p[v].push((cell.rank(), cell.len()));
            }
        }
        p.into_iter().map(|mut x| {
            x.sort_unstable();
            x
        }).collect()
    };
    let (pa, pb) = (profile(a), profile(b));
    let mut sa = pa.clone();
    let mut sb = pb.clone();
    sa.sort();
    sb.sort();
    if sa != sb {
        return Ok(false);
    }
    let targets: HashSet<CellKey> = b.all_cells().map(|c| (c.rank(), c.vertices().to_vec())).collect();
    // cells of `a` grouped by their largest vertex, checked once it is mapped
    let mut closing: Vec<Vec<CellKey>> = vec![Vec::new(); n];
    for cell in a.all_cells() {
        let last = *cell.vertices().last().expect("cells are nonempty");
        closing[last].push((cell.rank(), cell.vertices().to_vec()));
    }
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    Ok(extend(0, &mut map, &mut used, &pa, &pb, &closing, &targets))
}

fn extend(
    v: usize,
    map: &mut [usize],
    used: &mut [bool],
    pa: &[Vec<(usize, usize)>],
    pb: &[Vec<(usize, usize)>],
    closing: &[Vec<CellKey>],
    targets: &HashSet<CellKey>,
) -> bool {
    if v == map.len() {
        return true;
    }
    for w in 0..map.len() {
        if used[w] || pa[v] != pb[w] {
            continue;
        }
        map[v] = w;
        used[w] = true;
        let ok = closing[v].iter().all(|(rank, verts)| {
            let mut image: Vec<usize> = verts.iter().map(|&u| map[u]).collect();
            image.sort_unstable();
            targets.contains(&(*rank, image))
        });
        if ok && extend(v + 1, map, used, pa, pb, closing, targets) {
            return true;
        }
        used[w] = false;
        map[v] = usize::MAX;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::{lift, Graph, LiftMode};

    fn filled_triangle() -> CombinatorialComplex {
        lift(&Graph::complete(3), LiftMode::Simplicial, 6).unwrap()
    }

    #[test]
    fn initial_colors() {
        let c = init_colors(&filled_triangle());
        assert_eq!(c.colors, [vec![0; 3], vec![0; 3], vec![0]]);
        assert!(init_colors(&CombinatorialComplex::empty()).is_empty());
    }

    #[test]
    fn triangle_refinement() {
        let cc = filled_triangle();
        let one = refine_step(&cc, &init_colors(&cc));
        assert_eq!(one.num_classes(), 3);
        assert_eq!(one.classes_per_rank(), [1, 1, 1]);
        let stable = stable_colors(&cc);
        assert_eq!((stable.iteration, stable.num_classes()), (2, 3));
    }

    #[test]
    fn path_ends_differ_from_middle() {
        let cc = lift(&Graph::path(3), LiftMode::Graph, 6).unwrap();
        let one = refine_step(&cc, &init_colors(&cc));
        let c = &one.colors[0];
        assert_eq!(c[0], c[2]);
        assert_ne!(c[0], c[1]);
    }

    #[test]
    fn isolated_node_gets_its_own_color() {
        let cc = CombinatorialComplex::build(3, vec![(vec![0, 1], 1)]).unwrap();
        let one = refine_step(&cc, &init_colors(&cc));
        assert_ne!(one.colors[0][2], one.colors[0][0]);
        let single = CombinatorialComplex::build(1, vec![]).unwrap();
        let s = stable_colors(&single);
        assert_eq!((s.iteration, s.num_classes()), (1, 1));
    }

    #[test]
    fn lifting_separates_hexagon_from_triangles() {
        let c6 = Graph::cycle(6);
        let two_c3 = Graph::cycle(3).disjoint_union(&Graph::cycle(3));
        let g = |m| (lift(&c6, m, 6).unwrap(), lift(&two_c3, m, 6).unwrap());
        let (a, b) = g(LiftMode::Graph);
        assert!(!distinguish(&a, &b, None).verdict.is_distinguished());
        assert!(!brute_force_isomorphic(&a, &b).unwrap());
        let (a, b) = g(LiftMode::Cellular);
        let v = distinguish(&a, &b, None).verdict;
        assert!(v.is_distinguished() && v.iteration() <= 1);
        assert!(!brute_force_isomorphic(&a, &b).unwrap());
        let s = stable_colors(&a);
        assert_eq!(s.classes_per_rank(), [1, 1, 1]);
    }

    #[test]
    fn brute_force_examples() {
        let t = filled_triangle();
        assert!(brute_force_isomorphic(&t, &t.relabel(&[2, 0, 1]).unwrap()).unwrap());
        let hollow = lift(&Graph::complete(3), LiftMode::Graph, 6).unwrap();
        assert!(!brute_force_isomorphic(&t, &hollow).unwrap());
        let big = lift(&Graph::path(11), LiftMode::Graph, 6).unwrap();
        assert!(matches!(brute_force_isomorphic(&big, &big), Err(Error::TooLarge(11))));
    }
}
