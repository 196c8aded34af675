//! Rooted labeled trees on `[n]`, the p-tree law and its samplers.
//!
//! Vertices are `0..n` internally; the JSON encoding is 1-based.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

/// Largest `n` accepted by [`enumerate`].
pub const MAX_ENUMERATE: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("size mismatch: tree has {tree} vertices, vector has {probs}")]
    SizeMismatch { tree: usize, probs: usize },
    #[error("enumeration is limited to n <= {MAX_ENUMERATE}, got {0}")]
    NTooLarge(usize),
    #[error("n must be at least 1")]
    Empty,
    #[error("probabilities must be positive, p[{index}] = {value}")]
    NonpositiveProb { index: usize, value: f64 },
    #[error("probabilities must be nonincreasing at index {0}")]
    UnsortedProb(usize),
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("sequence does not visit vertex {0}")]
    IncompleteSequence(usize),
    #[error("vertex {vertex} out of range for n = {n}")]
    VertexOutOfRange { vertex: usize, n: usize },
}

/// Probability vector on `[n]`, positive and nonincreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector {
    p: Vec<f64>,
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = TreeError;
    fn try_from(p: Vec<f64>) -> Result<Self, TreeError> {
        ProbVector::new(p)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.p
    }
}

/// Compensated summation.
pub(crate) fn neumaier(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self, TreeError> {
        if p.is_empty() {
            return Err(TreeError::Empty);
        }
        for (index, &value) in p.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(TreeError::NonpositiveProb { index, value });
            }
            if index > 0 && value > p[index - 1] {
                return Err(TreeError::UnsortedProb(index));
            }
        }
        let total = neumaier(p.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(TreeError::NotNormalized(total));
        }
        Ok(ProbVector { p })
    }

    pub fn uniform(n: usize) -> Result<Self, TreeError> {
        ProbVector::new(vec![1.0 / n as f64; n])
    }

    /// Normalizes and sorts arbitrary positive weights.
    pub fn from_weights(mut w: Vec<f64>) -> Result<Self, TreeError> {
        w.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = w.iter().sum();
        ProbVector::new(w.into_iter().map(|x| x / total).collect())
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, i: usize) -> f64 {
        self.p[i]
    }
}

/// Rooted tree on `0..n` given by a parent array.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "TreeJson", into = "TreeJson")]
pub struct RootedLabeledTree {
    root: usize,
    parent: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct TreeJson {
    n: usize,
    root: usize,
    parent: BTreeMap<String, usize>,
}

impl TryFrom<TreeJson> for RootedLabeledTree {
    type Error = TreeError;
    fn try_from(raw: TreeJson) -> Result<Self, TreeError> {
        let n = raw.n;
        let one_based = |v: usize| -> Result<usize, TreeError> {
            if v == 0 || v > n {
                Err(TreeError::VertexOutOfRange { vertex: v, n })
            } else {
                Ok(v - 1)
            }
        };
        let root = one_based(raw.root)?;
        let mut parent = vec![None; n];
        for (key, &par) in &raw.parent {
            let child: usize = key.trim().parse().map_err(|_| TreeError::InvalidTree(format!("bad vertex key {key:?}")))?;
            parent[one_based(child)?] = Some(one_based(par)?);
        }
        RootedLabeledTree::new(root, parent)
    }
}

impl From<RootedLabeledTree> for TreeJson {
    fn from(t: RootedLabeledTree) -> Self {
        let parent = t
            .parent
            .iter()
            .enumerate()
            .filter_map(|(v, p)| p.map(|p| ((v + 1).to_string(), p + 1)))
            .collect();
        TreeJson { n: t.n(), root: t.root + 1, parent }
    }
}

impl RootedLabeledTree {
    /// Validates that `parent` describes a tree rooted at `root`.
    pub fn new(root: usize, parent: Vec<Option<usize>>) -> Result<Self, TreeError> {
        let n = parent.len();
        if n == 0 {
            return Err(TreeError::Empty);
        }
        if root >= n {
            return Err(TreeError::VertexOutOfRange { vertex: root, n });
        }
        for (v, p) in parent.iter().enumerate() {
            match *p {
                None if v != root => return Err(TreeError::InvalidTree(format!("vertex {} has no parent", v + 1))),
                Some(_) if v == root => return Err(TreeError::InvalidTree("root has a parent".into())),
                Some(q) if q >= n => return Err(TreeError::VertexOutOfRange { vertex: q, n }),
                _ => {}
            }
        }
        // every vertex must reach the root
        let mut state = vec![0u8; n];
        state[root] = 2;
        for start in 0..n {
            let mut path = Vec::new();
            let mut v = start;
            while state[v] == 0 {
                state[v] = 1;
                path.push(v);
                v = parent[v].expect("checked above");
            }
            if state[v] == 1 {
                return Err(TreeError::InvalidTree("parent map has a cycle".into()));
            }
            for u in path {
                state[u] = 2;
            }
        }
        Ok(RootedLabeledTree { root, parent })
    }

    pub fn single() -> Self {
        RootedLabeledTree { root: 0, parent: vec![None] }
    }

    /// Roots an unrooted edge set at `root`.
    pub fn from_edges(n: usize, root: usize, edges: &[(usize, usize)]) -> Result<Self, TreeError> {
        if n == 0 {
            return Err(TreeError::Empty);
        }
        if edges.len() + 1 != n {
            return Err(TreeError::InvalidTree(format!("{} edges for {} vertices", edges.len(), n)));
        }
        let adj = adjacency(n, edges)?;
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        if root >= n {
            return Err(TreeError::VertexOutOfRange { vertex: root, n });
        }
        seen[root] = true;
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    parent[u] = Some(v);
                    stack.push(u);
                }
            }
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(TreeError::InvalidTree(format!("vertex {} unreachable", v + 1)));
        }
        Ok(RootedLabeledTree { root, parent })
    }

    pub fn n(&self) -> usize {
        self.parent.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    /// `D⁺_v`, the number of children of each vertex.
    pub fn child_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n()];
        for p in self.parent.iter().flatten() {
            c[*p] += 1;
        }
        c
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut c = vec![Vec::new(); self.n()];
        for (v, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                c[*p].push(v);
            }
        }
        c
    }

    /// Edges as `(child, parent)` pairs in vertex order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parent.iter().enumerate().filter_map(|(v, p)| p.map(|p| (v, p))).collect()
    }

    /// Undirected edge set with each pair stored as `(min, max)`.
    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges().into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect()
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n()];
        for (a, b) in self.edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![usize::MAX; self.n()];
        depth[self.root] = 0;
        for v in 0..self.n() {
            let mut path = Vec::new();
            let mut u = v;
            while depth[u] == usize::MAX {
                path.push(u);
                u = self.parent[u].expect("non-root has parent");
            }
            let mut d = depth[u];
            for &w in path.iter().rev() {
                d += 1;
                depth[w] = d;
            }
        }
        depth
    }
}

fn adjacency(n: usize, edges: &[(usize, usize)]) -> Result<Vec<Vec<usize>>, TreeError> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(TreeError::VertexOutOfRange { vertex: a.max(b), n });
        }
        adj[a].push(b);
        adj[b].push(a);
    }
    Ok(adj)
}

/// `π_p(t) = ∏ p_i^{D⁺_i(t)}`.
pub fn weight(t: &RootedLabeledTree, p: &ProbVector) -> Result<f64, TreeError> {
    if t.n() != p.len() {
        return Err(TreeError::SizeMismatch { tree: t.n(), probs: p.len() });
    }
    Ok(t.child_counts().iter().zip(p.as_slice()).map(|(&c, &pi)| pi.powi(c as i32)).product())
}

/// All `n^{n-1}` rooted trees on `[n]`, ordered by root and then by Prüfer
/// code in lexicographic order.
pub fn enumerate(n: usize) -> Result<Vec<RootedLabeledTree>, TreeError> {
    if n == 0 {
        return Err(TreeError::Empty);
    }
    if n > MAX_ENUMERATE {
        return Err(TreeError::NTooLarge(n));
    }
    if n == 1 {
        return Ok(vec![RootedLabeledTree::single()]);
    }
    let codes = n.pow(n as u32 - 2);
    let mut unrooted = Vec::with_capacity(codes);
    let mut code = vec![0usize; n - 2];
    for index in 0..codes {
        let mut x = index;
        for slot in code.iter_mut().rev() {
            *slot = x % n;
            x /= n;
        }
        unrooted.push(prufer_decode(n, &code));
    }
    let mut out = Vec::with_capacity(codes * n);
    for root in 0..n {
        for edges in &unrooted {
            out.push(RootedLabeledTree::from_edges(n, root, edges)?);
        }
    }
    Ok(out)
}

/// Decodes a Prüfer sequence of length `n - 2` into an edge list.
pub fn prufer_decode(n: usize, code: &[usize]) -> Vec<(usize, usize)> {
    debug_assert_eq!(code.len() + 2, n);
    let mut degree = vec![1usize; n];
    for &c in code {
        degree[c] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &c in code {
        let leaf = (0..n).find(|&v| degree[v] == 1).expect("a leaf always exists");
        edges.push((leaf, c));
        degree[leaf] -= 1;
        degree[c] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

/// Applies the birthday rule to an explicit sequence: the first entry is the
/// root, and each first visit hangs below the entry just before it.
pub fn tree_from_birthday_sequence(n: usize, seq: &[usize]) -> Result<RootedLabeledTree, TreeError> {
    if n == 0 || seq.is_empty() {
        return Err(TreeError::Empty);
    }
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    for (j, &y) in seq.iter().enumerate() {
        if y >= n {
            return Err(TreeError::VertexOutOfRange { vertex: y, n });
        }
        if !seen[y] {
            seen[y] = true;
            if j > 0 {
                parent[y] = Some(seq[j - 1]);
            }
        }
    }
    if let Some(v) = seen.iter().position(|s| !s) {
        return Err(TreeError::IncompleteSequence(v));
    }
    RootedLabeledTree::new(seq[0], parent)
}

/// Draws from `π_p` with the birthday construction.
///
/// Rather than generating the full i.i.d. sequence, the sampler jumps from
/// one first visit to the next. Given the visited set `S` after a new vertex
/// `v`, the entry preceding the next new vertex is `v` itself with
/// probability `1 - p(S)`, and otherwise a `p|_S` draw; the new vertex is a
/// `p|_{S^c}` draw. This has the same law as the plain sequence.
pub fn sample_ptree(p: &ProbVector, seed: u64) -> RootedLabeledTree {
    let mut rng = seed::rng(seed);
    sample_ptree_with(p, &mut rng)
}

pub fn sample_ptree_with<R: Rng + ?Sized>(p: &ProbVector, rng: &mut R) -> RootedLabeledTree {
    let n = p.len();
    let probs = p.as_slice();
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    let root = draw_restricted(probs, &seen, false, 1.0, rng);
    seen[root] = true;
    let mut mass_seen = probs[root];
    let mut last = root;
    for _ in 1..n {
        let anchor = if rng.random::<f64>() < mass_seen {
            draw_restricted(probs, &seen, true, mass_seen, rng)
        } else {
            last
        };
        let fresh = draw_restricted(probs, &seen, false, 1.0 - mass_seen, rng);
        parent[fresh] = Some(anchor);
        seen[fresh] = true;
        mass_seen += probs[fresh];
        last = fresh;
    }
    RootedLabeledTree { root, parent }
}

/// Draws from `p` restricted to vertices whose `seen` flag equals `inside`.
fn draw_restricted<R: Rng + ?Sized>(probs: &[f64], seen: &[bool], inside: bool, mass: f64, rng: &mut R) -> usize {
    let target = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    let mut last = None;
    for (v, &pv) in probs.iter().enumerate() {
        if seen[v] == inside {
            acc += pv;
            last = Some(v);
            if target < acc {
                return v;
            }
        }
    }
    last.expect("restricted set is nonempty")
}

/// Uniform random rooted tree on `[n]`, via a uniform Prüfer code.
pub fn sample_uniform_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> RootedLabeledTree {
    if n == 1 {
        return RootedLabeledTree::single();
    }
    let code: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
    let edges = prufer_decode(n, &code);
    RootedLabeledTree::from_edges(n, rng.random_range(0..n), &edges).expect("decoded codes are trees")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn p(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn large_uniform_is_normalized() {
        assert_eq!(ProbVector::uniform(1_000_000).unwrap().len(), 1_000_000);
    }

    #[test]
    fn weight_examples() {
        let t = RootedLabeledTree::new(0, vec![None, Some(0)]).unwrap();
        assert_eq!(weight(&t, &p(&[0.7, 0.3])).unwrap(), 0.7);
        let star = RootedLabeledTree::new(0, vec![None, Some(0), Some(0)]).unwrap();
        assert!((weight(&star, &p(&[0.5, 0.3, 0.2])).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(weight(&star, &p(&[0.7, 0.3])), Err(TreeError::SizeMismatch { .. })));
    }

    #[test]
    fn enumerate_counts_and_uniqueness() {
        assert_eq!(enumerate(1).unwrap().len(), 1);
        assert_eq!(enumerate(3).unwrap().len(), 9);
        for n in 1..=6 {
            let all = enumerate(n).unwrap();
            assert_eq!(all.len(), n.pow(n as u32 - 1));
            let distinct: BTreeSet<_> = all.iter().map(|t| (t.root(), t.edge_set())).collect();
            assert_eq!(distinct.len(), all.len());
        }
        assert_eq!(enumerate(8), Err(TreeError::NTooLarge(8)));
        let first = &enumerate(3).unwrap()[0];
        assert_eq!(first.root(), 0);
    }

    #[test]
    fn cayley_sum_small() {
        let all = enumerate(3).unwrap();
        let pv = p(&[0.5, 0.3, 0.2]);
        let total: f64 = all.iter().map(|t| weight(t, &pv).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn birthday_hand_trace() {
        // 1-based (2,2,1,3)
        let t = tree_from_birthday_sequence(3, &[1, 1, 0, 2]).unwrap();
        assert_eq!(t.root(), 1);
        assert_eq!(t.parent(0), Some(1));
        assert_eq!(t.parent(2), Some(0));
        assert_eq!(tree_from_birthday_sequence(3, &[1, 0]), Err(TreeError::IncompleteSequence(2)));
    }

    #[test]
    fn single_vertex_sample() {
        let t = sample_ptree(&p(&[1.0]), 3);
        assert_eq!(t, RootedLabeledTree::single());
    }

    #[test]
    fn sampler_matches_weights_n3_uniform() {
        let pv = ProbVector::uniform(3).unwrap();
        let all = enumerate(3).unwrap();
        let index: HashMap<_, _> = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut counts = vec![0u64; all.len()];
        let mut rng = seed::rng(11);
        let draws = 100_000;
        for _ in 0..draws {
            counts[index[&sample_ptree_with(&pv, &mut rng)]] += 1;
        }
        let probs: Vec<f64> = all.iter().map(|t| weight(t, &pv).unwrap()).collect();
        let pval = crate::stats::chi_square_gof(&counts, &probs).unwrap().p_value;
        assert!(pval > 1e-3, "p = {pval}");
    }

    #[test]
    fn json_is_one_based() {
        let t = RootedLabeledTree::new(1, vec![Some(1), None, Some(0)]).unwrap();
        let text = serde_json::to_string(&t).unwrap();
        assert_eq!(text, r#"{"n":3,"root":2,"parent":{"1":2,"3":1}}"#);
        let back: RootedLabeledTree = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<RootedLabeledTree>(r#"{"n":2,"root":1,"parent":{}}"#).is_err());
    }

    #[test]
    fn rejects_cycles() {
        assert!(RootedLabeledTree::new(0, vec![None, Some(2), Some(1)]).is_err());
    }

    proptest! {
        #[test]
        fn cayley_identity(n in 1usize..=6, raw in proptest::collection::vec(0.01f64..1.0, 6)) {
            let pv = ProbVector::from_weights(raw[..n].to_vec()).unwrap();
            let total: f64 = enumerate(n).unwrap().iter().map(|t| weight(t, &pv).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn sampler_is_deterministic(seed in any::<u64>(), n in 1usize..30) {
            let pv = ProbVector::uniform(n).unwrap();
            let a = sample_ptree(&pv, seed);
            prop_assert_eq!(a.n(), n);
            prop_assert_eq!(a.clone(), sample_ptree(&pv, seed));
            prop_assert_eq!(a.edges().len(), n - 1);
        }
    }
}
