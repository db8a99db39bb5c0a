//! Interaction graphs, qubit subsets, generator indexing and light cones.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng;

/// A subset `A` of qubits stored as a fixed-width multi-word bit vector.
///
/// The empty subset stands for the identity observable.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QubitSubset {
    n: usize,
    words: Vec<u64>,
}

impl QubitSubset {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn full(n: usize) -> Self {
        let mut s = Self::empty(n);
        for i in 0..n {
            s.insert(i);
        }
        s
    }

    pub fn singleton(n: usize, i: usize) -> Self {
        let mut s = Self::empty(n);
        s.insert(i);
        s
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(n: usize, indices: I) -> Result<Self> {
        let mut s = Self::empty(n);
        for i in indices {
            if i >= n {
                return Err(Error::InvalidObservable(format!(
                    "qubit {i} out of range for n = {n}"
                )));
            }
            s.insert(i);
        }
        Ok(s)
    }

    /// Builds a subset of at most 64 qubits from the low bits of `mask`.
    pub fn from_mask(n: usize, mask: u64) -> Self {
        debug_assert!(n >= 64 || mask >> n == 0);
        let mut s = Self::empty(n);
        if n > 0 {
            s.words[0] = mask;
        }
        s
    }

    /// Width of the bit vector (the qubit count it is defined over).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of qubits in the subset.
    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        i < self.n && (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn insert(&mut self, i: usize) {
        assert!(i < self.n, "qubit {i} out of range");
        self.words[i >> 6] |= 1 << (i & 63);
    }

    #[inline]
    pub fn remove(&mut self, i: usize) {
        if i < self.n {
            self.words[i >> 6] &= !(1 << (i & 63));
        }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// The low 64 bits, for subsets of small registers.
    pub fn mask(&self) -> u64 {
        self.words.first().copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &bits)| {
            let mut b = bits;
            std::iter::from_fn(move || {
                if b == 0 {
                    None
                } else {
                    let t = b.trailing_zeros() as usize;
                    b &= b - 1;
                    Some(w * 64 + t)
                }
            })
        })
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }

    pub fn union(&self, other: &Self) -> Self {
        let words = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| a | b)
            .collect();
        Self { n: self.n, words }
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let words = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| a & b)
            .collect();
        Self { n: self.n, words }
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }

    /// Parity of the bits of `row` selected by the subset (true = odd).
    #[inline]
    pub fn parity(&self, row: &[u64]) -> bool {
        let mut acc = 0u64;
        for (a, r) in self.words.iter().zip(row) {
            acc ^= a & r;
        }
        acc.count_ones() & 1 == 1
    }
}

impl fmt::Debug for QubitSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for QubitSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

impl Serialize for QubitSubset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_vec().serialize(s)
    }
}

/// Qubit count plus a set of two-qubit edges `(j, k)` with `j < k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl InteractionGraph {
    /// Validates and normalizes an edge list; edges are stored sorted.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("graph needs at least one qubit".into()));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut list = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(Error::Config(format!("self-loop on qubit {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::Config(format!(
                    "edge ({a},{b}) has an endpoint >= n = {n}"
                )));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::Config(format!("duplicate edge ({},{})", e.0, e.1)));
            }
            list.push(e);
        }
        list.sort_unstable();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &list {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Ok(Self {
            n,
            edges: list,
            neighbors,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.neighbors[q]
    }

    pub fn degree(&self, q: usize) -> usize {
        self.neighbors[q].len()
    }

    /// Position of edge `(a, b)` in the sorted edge list.
    pub fn edge_position(&self, a: usize, b: usize) -> Option<usize> {
        let e = (a.min(b), a.max(b));
        self.edges.binary_search(&e).ok()
    }

    /// Parses the text format: first line `n`, then one `j k` pair per line.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let n: usize = lines
            .next()
            .ok_or_else(|| Error::Config("empty graph file".into()))?
            .parse()
            .map_err(|e| Error::Config(format!("bad qubit count: {e}")))?;
        let mut edges = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let mut it = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<usize> {
                s.ok_or_else(|| Error::Config(format!("edge line {} is incomplete", lineno + 2)))?
                    .parse()
                    .map_err(|e| Error::Config(format!("edge line {}: {e}", lineno + 2)))
            };
            let j = parse(it.next())?;
            let k = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Config(format!(
                    "edge line {} has extra fields",
                    lineno + 2
                )));
            }
            edges.push((j, k));
        }
        Self::new(n, &edges)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.n);
        for &(a, b) in &self.edges {
            s.push_str(&format!("{a} {b}\n"));
        }
        s
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Graph families understood by [`make_graph`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    AllToAll,
    Ring,
    Edgeless,
    KRegular { degree: usize, seed: u64 },
    Explicit(Vec<(usize, usize)>),
}

pub fn make_graph(kind: &GraphKind, n: usize) -> Result<InteractionGraph> {
    match kind {
        GraphKind::AllToAll => {
            let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
            for a in 0..n {
                for b in a + 1..n {
                    edges.push((a, b));
                }
            }
            InteractionGraph::new(n, &edges)
        }
        GraphKind::Ring => {
            let edges: Vec<_> = match n {
                0 | 1 => vec![],
                2 => vec![(0, 1)],
                _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
            };
            InteractionGraph::new(n, &edges)
        }
        GraphKind::Edgeless => InteractionGraph::new(n, &[]),
        GraphKind::KRegular { degree, seed } => k_regular(n, *degree, *seed),
        GraphKind::Explicit(edges) => InteractionGraph::new(n, edges),
    }
}

fn k_regular(n: usize, k: usize, seed: u64) -> Result<InteractionGraph> {
    if k >= n || (k * n) % 2 == 1 {
        return Err(Error::Config(format!(
            "no {k}-regular graph on {n} vertices (need k < n and k*n even)"
        )));
    }
    if 2 * k > n {
        // Dense case: complement of a sparse regular graph.
        let sparse = k_regular(n, n - 1 - k, seed)?;
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if sparse.edge_position(a, b).is_none() {
                    edges.push((a, b));
                }
            }
        }
        return InteractionGraph::new(n, &edges);
    }
    let mut rng = rng::stream(seed, &[rng::TAG_GRAPH, n as u64, k as u64]);
    'restart: for _ in 0..10_000 {
        // Pairing model with immediate rejection of loops and multi-edges.
        let mut points: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, k)).collect();
        points.shuffle(&mut rng);
        let mut adj = vec![HashSet::new(); n];
        let mut edges = Vec::with_capacity(n * k / 2);
        while !points.is_empty() {
            let mut found = false;
            for _ in 0..50 {
                let i = rng.gen_range(0..points.len());
                let j = rng.gen_range(0..points.len());
                let (u, v) = (points[i], points[j]);
                if i != j && u != v && !adj[u].contains(&v) {
                    let (hi, lo) = (i.max(j), i.min(j));
                    points.swap_remove(hi);
                    points.swap_remove(lo);
                    adj[u].insert(v);
                    adj[v].insert(u);
                    edges.push((u, v));
                    found = true;
                    break;
                }
            }
            if !found {
                let feasible = points.iter().enumerate().any(|(i, &u)| {
                    points[i + 1..]
                        .iter()
                        .any(|&v| u != v && !adj[u].contains(&v))
                });
                if !feasible {
                    continue 'restart;
                }
            }
        }
        return InteractionGraph::new(n, &edges);
    }
    Err(Error::Config(format!(
        "failed to build a {k}-regular graph on {n} vertices"
    )))
}

/// A circuit generator: a single-qubit `X_j` or a two-qubit `X_j X_k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GeneratorLabel {
    Single(usize),
    Pair(usize, usize),
}

impl GeneratorLabel {
    pub fn anticommutes_with(&self, a: &QubitSubset) -> bool {
        match *self {
            GeneratorLabel::Single(j) => a.contains(j),
            GeneratorLabel::Pair(j, k) => a.contains(j) != a.contains(k),
        }
    }

    pub fn is_pair(&self) -> bool {
        matches!(self, GeneratorLabel::Pair(..))
    }
}

impl fmt::Display for GeneratorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorLabel::Single(j) => write!(f, "X{j}"),
            GeneratorLabel::Pair(j, k) => write!(f, "X{j}X{k}"),
        }
    }
}

/// Parameter ordering: all `n` singles, then the edges in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorIndex {
    n: usize,
    labels: Vec<GeneratorLabel>,
}

impl GeneratorIndex {
    pub fn from_graph(g: &InteractionGraph) -> Self {
        let mut labels: Vec<_> = (0..g.n()).map(GeneratorLabel::Single).collect();
        labels.extend(g.edges().iter().map(|&(a, b)| GeneratorLabel::Pair(a, b)));
        Self { n: g.n(), labels }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of parameters `m`.
    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[GeneratorLabel] {
        &self.labels
    }

    pub fn label(&self, pos: usize) -> GeneratorLabel {
        self.labels[pos]
    }

    pub fn position(&self, label: &GeneratorLabel) -> Option<usize> {
        match *label {
            GeneratorLabel::Single(j) => (j < self.n).then_some(j),
            GeneratorLabel::Pair(a, b) => {
                let key = GeneratorLabel::Pair(a.min(b), a.max(b));
                self.labels[self.n..]
                    .binary_search(&key)
                    .ok()
                    .map(|p| p + self.n)
            }
        }
    }

    pub fn is_pair(&self, pos: usize) -> bool {
        pos >= self.n
    }

    /// Checks that this index was built from `g`.
    pub fn check(&self, g: &InteractionGraph) -> Result<()> {
        check_dim(g.n(), self.n)?;
        check_dim(g.n() + g.edges().len(), self.m())
    }
}

/// Qubits outside `A` adjacent to at least one qubit of `A`.
pub fn external_neighborhood(g: &InteractionGraph, a: &QubitSubset) -> Result<QubitSubset> {
    check_dim(g.n(), a.n())?;
    let mut out = QubitSubset::empty(g.n());
    for j in a.iter() {
        for &k in g.neighbors(j) {
            if !a.contains(k) {
                out.insert(k);
            }
        }
    }
    Ok(out)
}

/// Effective light cone `d_A = |A| + |N_E(A)|`.
pub fn light_cone(g: &InteractionGraph, a: &QubitSubset) -> Result<usize> {
    check_dim(g.n(), a.n())?;
    if a.is_empty() {
        return Err(Error::InvalidObservable(
            "light cone of the empty subset is undefined".into(),
        ));
    }
    Ok(a.len() + external_neighborhood(g, a)?.len())
}

/// Generators whose X string anti-commutes with `Z_A`, in parameter order.
pub fn anticommuting_generators(
    g: &InteractionGraph,
    a: &QubitSubset,
) -> Result<Vec<GeneratorLabel>> {
    check_dim(g.n(), a.n())?;
    let mut out: Vec<_> = a.iter().map(GeneratorLabel::Single).collect();
    let mut pairs = Vec::new();
    for j in a.iter() {
        for &k in g.neighbors(j) {
            if !a.contains(k) {
                pairs.push(GeneratorLabel::Pair(j.min(k), j.max(k)));
            }
        }
    }
    pairs.sort_unstable();
    out.extend(pairs);
    Ok(out)
}

/// Anti-commuting generators of `A` with their parameter positions and supports.
///
/// `second` is `usize::MAX` for single-qubit generators.
#[derive(Clone, Debug)]
pub struct AntiSet {
    pub positions: Vec<usize>,
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

impl AntiSet {
    pub fn new(g: &InteractionGraph, a: &QubitSubset) -> Result<Self> {
        check_dim(g.n(), a.n())?;
        let labels = anticommuting_generators(g, a)?;
        let n = g.n();
        let mut s = AntiSet {
            positions: Vec::with_capacity(labels.len()),
            first: Vec::with_capacity(labels.len()),
            second: Vec::with_capacity(labels.len()),
        };
        for l in labels {
            match l {
                GeneratorLabel::Single(j) => {
                    s.positions.push(j);
                    s.first.push(j);
                    s.second.push(usize::MAX);
                }
                GeneratorLabel::Pair(j, k) => {
                    s.positions
                        .push(n + g.edge_position(j, k).expect("edge exists"));
                    s.first.push(j);
                    s.second.push(k);
                }
            }
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.positions.contains(&pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(n: usize, v: &[usize]) -> QubitSubset {
        QubitSubset::from_indices(n, v.iter().copied()).unwrap()
    }

    #[test]
    fn subset_basics() {
        let mut a = QubitSubset::empty(130);
        assert!(a.is_empty());
        a.insert(0);
        a.insert(64);
        a.insert(129);
        assert_eq!(a.len(), 3);
        assert_eq!(a.to_vec(), vec![0, 64, 129]);
        assert!(a.contains(64) && !a.contains(63));
        a.remove(64);
        assert_eq!(a.to_string(), "{0,129}");
        assert!(QubitSubset::from_indices(4, [4]).is_err());
        assert!(!a.parity(&[1u64 | (1 << 5), 0, 1 << 1]));
        assert!(a.parity(&[1u64 | (1 << 5), 0, 0]));
    }

    #[test]
    fn neighborhood_of_chain() {
        let g = InteractionGraph::new(5, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let a = set(5, &[1, 2]);
        assert_eq!(external_neighborhood(&g, &a).unwrap().to_vec(), vec![0, 3]);
        assert_eq!(light_cone(&g, &a).unwrap(), 4);
        assert!(external_neighborhood(&g, &QubitSubset::empty(5))
            .unwrap()
            .is_empty());
        assert!(matches!(
            light_cone(&g, &QubitSubset::empty(5)),
            Err(Error::InvalidObservable(_))
        ));
        assert!(matches!(
            external_neighborhood(&g, &QubitSubset::empty(4)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn light_cone_families() {
        let full = make_graph(&GraphKind::AllToAll, 7).unwrap();
        let none = make_graph(&GraphKind::Edgeless, 7).unwrap();
        for v in [&[0][..], &[1, 4], &[0, 2, 5, 6]] {
            let a = set(7, v);
            assert_eq!(light_cone(&full, &a).unwrap(), 7);
            assert_eq!(light_cone(&none, &a).unwrap(), v.len());
            assert!(external_neighborhood(&full, &a).unwrap().is_disjoint(&a));
        }
    }

    #[test]
    fn anticommuting_sets() {
        let g = InteractionGraph::new(2, &[(0, 1)]).unwrap();
        assert_eq!(
            anticommuting_generators(&g, &set(2, &[0])).unwrap(),
            vec![GeneratorLabel::Single(0), GeneratorLabel::Pair(0, 1)]
        );
        assert!(anticommuting_generators(&g, &QubitSubset::empty(2))
            .unwrap()
            .is_empty());
        let full = make_graph(&GraphKind::AllToAll, 6).unwrap();
        let all = anticommuting_generators(&full, &QubitSubset::full(6)).unwrap();
        assert_eq!(all.len(), 6);
        assert!(all.iter().all(|l| !l.is_pair()));
        for k in 1..=6 {
            let a = QubitSubset::from_indices(6, 0..k).unwrap();
            let got = anticommuting_generators(&full, &a).unwrap();
            assert_eq!(got.len(), k * (6 + 1 - k));
            let idx = GeneratorIndex::from_graph(&full);
            let brute: Vec<_> = idx
                .labels()
                .iter()
                .filter(|l| l.anticommutes_with(&a))
                .copied()
                .collect();
            assert_eq!(got, brute);
        }
    }

    #[test]
    fn generator_index_order() {
        let g = InteractionGraph::new(4, &[(2, 3), (0, 2), (1, 0)]).unwrap();
        let idx = GeneratorIndex::from_graph(&g);
        assert_eq!(idx.m(), 7);
        assert_eq!(idx.label(4), GeneratorLabel::Pair(0, 1));
        assert_eq!(idx.label(6), GeneratorLabel::Pair(2, 3));
        for (p, l) in idx.labels().iter().enumerate() {
            assert_eq!(idx.position(l), Some(p));
        }
        assert_eq!(idx.position(&GeneratorLabel::Pair(3, 2)), Some(6));
        assert_eq!(idx.position(&GeneratorLabel::Pair(1, 3)), None);
        let anti = AntiSet::new(&g, &set(4, &[0])).unwrap();
        assert_eq!(anti.positions, vec![0, 4, 5]);
    }

    #[test]
    fn graph_validation_and_text() {
        assert!(InteractionGraph::new(3, &[(1, 1)]).is_err());
        assert!(InteractionGraph::new(3, &[(0, 3)]).is_err());
        assert!(InteractionGraph::new(3, &[(0, 1), (1, 0)]).is_err());
        let g = make_graph(&GraphKind::Ring, 5).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 4), (1, 2), (2, 3), (3, 4)]);
        let back = InteractionGraph::from_text(&g.to_text()).unwrap();
        assert_eq!(back, g);
        let parsed = InteractionGraph::from_text("# comment\n3\n0 1\n\n1 2\n").unwrap();
        assert_eq!(parsed.edges().len(), 2);
        assert!(InteractionGraph::from_text("3\n0\n").is_err());
        assert_eq!(
            make_graph(&GraphKind::AllToAll, 4).unwrap().edges().len(),
            6
        );
    }

    #[test]
    fn k_regular_degrees() {
        for (n, k) in [(6, 2), (10, 3), (12, 5), (9, 6), (20, 4), (16, 15), (5, 0)] {
            let g = make_graph(&GraphKind::KRegular { degree: k, seed: 3 }, n).unwrap();
            assert!((0..n).all(|v| g.degree(v) == k), "n={n} k={k}");
            let again = make_graph(&GraphKind::KRegular { degree: k, seed: 3 }, n).unwrap();
            assert_eq!(g, again);
        }
        assert!(make_graph(&GraphKind::KRegular { degree: 3, seed: 0 }, 5).is_err());
        assert!(make_graph(&GraphKind::KRegular { degree: 5, seed: 0 }, 5).is_err());
    }

    #[test]
    fn k_regular_light_cone_bounds() {
        let n = 12;
        for k in [2, 3, 4] {
            let g = make_graph(
                &GraphKind::KRegular {
                    degree: k,
                    seed: 11,
                },
                n,
            )
            .unwrap();
            for mask in 1u64..(1 << n) {
                if mask.count_ones() > 4 {
                    continue;
                }
                let a = QubitSubset::from_mask(n, mask);
                let d = light_cone(&g, &a).unwrap();
                let s = a.len();
                assert!(s.max(k + 1) <= d && d <= n.min((k + 1) * s));
            }
        }
    }
}
