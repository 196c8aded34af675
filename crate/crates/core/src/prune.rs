//! Vertex pruning of a labeled tree by independent exponential clocks, the
//! resulting cut tree, its traces, and record counts.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ptree::{ProbVector, RootedLabeledTree, TreeError};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PruneError {
    #[error("size mismatch: tree has {tree} vertices, other input has {other}")]
    SizeMismatch { tree: usize, other: usize },
    #[error("two vertices share removal time {0}")]
    TimeCollision(f64),
    #[error("cut tree or traces were not derived from this tree and order")]
    InconsistentInputs,
    #[error("u and v must differ")]
    SameVertex,
    #[error("vertex {0} out of range")]
    VertexOutOfRange(usize),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Removal times `E_v ~ Exp(p_v)` and the induced order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalOrder {
    times: Vec<f64>,
    order: Vec<usize>,
}

impl RemovalOrder {
    pub fn from_times(times: Vec<f64>) -> Result<Self, PruneError> {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        for w in order.windows(2) {
            if times[w[0]] == times[w[1]] {
                return Err(PruneError::TimeCollision(times[w[0]]));
            }
        }
        Ok(RemovalOrder { times, order })
    }

    /// Order given as a permutation; vertex `order[i]` gets time `i + 1`.
    pub fn from_permutation(order: &[usize]) -> Result<Self, PruneError> {
        let n = order.len();
        let mut times = vec![f64::NAN; n];
        for (i, &v) in order.iter().enumerate() {
            if v >= n || !times[v].is_nan() {
                return Err(PruneError::VertexOutOfRange(v));
            }
            times[v] = (i + 1) as f64;
        }
        RemovalOrder::from_times(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn time(&self, v: usize) -> f64 {
        self.times[v]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub fn sample_order(t: &RootedLabeledTree, p: &ProbVector, seed: u64) -> Result<RemovalOrder, PruneError> {
    sample_order_with(t, p, &mut seed::rng(seed))
}

pub fn sample_order_with<R: Rng + ?Sized>(
    t: &RootedLabeledTree,
    p: &ProbVector,
    rng: &mut R,
) -> Result<RemovalOrder, PruneError> {
    if t.n() != p.len() {
        return Err(PruneError::SizeMismatch { tree: t.n(), other: p.len() });
    }
    let times = p
        .as_slice()
        .iter()
        .map(|&rate| Exp::new(rate).expect("positive rate").sample(rng))
        .collect();
    RemovalOrder::from_times(times)
}

/// Cut tree of a pruning: the first removed vertex is the root, and the
/// subtrees above a vertex are the cut trees of the components its removal
/// creates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCutTree {
    pub tree: RootedLabeledTree,
}

impl DiscreteCutTree {
    pub fn n(&self) -> usize {
        self.tree.n()
    }

    /// Vertex set of the component from which `v` was removed, which is the
    /// vertex set of the subtree of `C` rooted at `v`.
    pub fn provenance(&self, v: usize) -> Vec<usize> {
        let children = self.tree.children();
        let mut out = vec![v];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&children[out[i]]);
            i += 1;
        }
        out.sort_unstable();
        out
    }
}

/// Traces of each vertex of `C`: one `(child, trace)` pair per child
/// subtree, ranked by decreasing subtree mass and then by smallest vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMap {
    traces: Vec<Vec<Trace>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    /// Root of the subtree of `C`, a child of the owning vertex.
    pub child: usize,
    /// The vertex of that subtree adjacent in `T` to the owning vertex.
    pub vertex: usize,
}

impl TraceMap {
    pub fn new(traces: Vec<Vec<Trace>>) -> Self {
        TraceMap { traces }
    }

    pub fn of(&self, v: usize) -> &[Trace] {
        &self.traces[v]
    }

    pub fn n(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.iter().all(|t| t.is_empty())
    }

    pub fn all(&self) -> &[Vec<Trace>] {
        &self.traces
    }
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Builds `C` and the raw trace pairs by adding vertices in reverse removal
/// order: when `v` is added, every already-present neighbour `u` lies in a
/// distinct component, whose last added vertex becomes a child of `v` with
/// trace `u`.
fn build(t: &RootedLabeledTree, ord: &RemovalOrder) -> Result<(RootedLabeledTree, Vec<Vec<Trace>>), PruneError> {
    let n = t.n();
    if ord.len() != n {
        return Err(PruneError::SizeMismatch { tree: n, other: ord.len() });
    }
    let adj = t.adjacency();
    let mut dsu = Dsu::new(n);
    let mut top: Vec<usize> = (0..n).collect();
    let mut added = vec![false; n];
    let mut parent = vec![None; n];
    let mut traces = vec![Vec::new(); n];
    for &v in ord.order().iter().rev() {
        added[v] = true;
        for &u in &adj[v] {
            if !added[u] {
                continue;
            }
            let r = dsu.find(u);
            let child = top[r];
            parent[child] = Some(v);
            traces[v].push(Trace { child, vertex: u });
            dsu.parent[r] = v;
        }
        let r = dsu.find(v);
        top[r] = v;
    }
    let root = ord.order()[0];
    Ok((RootedLabeledTree::new(root, parent)?, traces))
}

pub fn cut_tree(t: &RootedLabeledTree, ord: &RemovalOrder) -> Result<DiscreteCutTree, PruneError> {
    Ok(DiscreteCutTree { tree: build(t, ord)?.0 })
}

/// Traces of `c`, which must equal `cut_tree(t, ord)`.
pub fn traces(
    t: &RootedLabeledTree,
    ord: &RemovalOrder,
    c: &DiscreteCutTree,
    p: &ProbVector,
) -> Result<TraceMap, PruneError> {
    if p.len() != t.n() {
        return Err(PruneError::SizeMismatch { tree: t.n(), other: p.len() });
    }
    let (tree, mut raw) = build(t, ord)?;
    if tree != c.tree {
        return Err(PruneError::InconsistentInputs);
    }
    // subtree mass and smallest label for every vertex of C
    let n = t.n();
    let mut mass = p.as_slice().to_vec();
    let mut min_label: Vec<usize> = (0..n).collect();
    for &v in ord.order().iter().rev() {
        if let Some(q) = tree.parent(v) {
            mass[q] += mass[v];
            min_label[q] = min_label[q].min(min_label[v]);
        }
    }
    for list in raw.iter_mut() {
        list.sort_by(|a, b| mass[b.child].total_cmp(&mass[a.child]).then(min_label[a.child].cmp(&min_label[b.child])));
    }
    Ok(TraceMap { traces: raw })
}

/// Convenience: cut tree and traces in one pass.
pub fn prune(t: &RootedLabeledTree, ord: &RemovalOrder, p: &ProbVector) -> Result<(DiscreteCutTree, TraceMap), PruneError> {
    let c = cut_tree(t, ord)?;
    let tr = traces(t, ord, &c, p)?;
    Ok((c, tr))
}

/// Vertices `u` removed before every other vertex on the path `u ⋯ v`.
pub fn records(t: &RootedLabeledTree, ord: &RemovalOrder, v: usize) -> Result<Vec<usize>, PruneError> {
    let n = t.n();
    if v >= n {
        return Err(PruneError::VertexOutOfRange(v));
    }
    if ord.len() != n {
        return Err(PruneError::SizeMismatch { tree: n, other: ord.len() });
    }
    let adj = t.adjacency();
    let times = ord.times();
    let mut out = Vec::new();
    // (vertex, came_from, min time over the path from v up to but excluding vertex)
    let mut stack = vec![(v, usize::MAX, f64::INFINITY)];
    while let Some((x, from, before)) = stack.pop() {
        if times[x] < before {
            out.push(x);
        }
        let through = before.min(times[x]);
        for &y in &adj[x] {
            if y != from {
                stack.push((y, x, through));
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Number of records of `v`; equals the depth of `v` in the cut tree plus 1.
pub fn record_count(t: &RootedLabeledTree, ord: &RemovalOrder, v: usize) -> Result<usize, PruneError> {
    Ok(records(t, ord, v)?.len())
}

/// Records of `u` and of `v` removed strictly after the first removal on the
/// path `u ⋯ v`; equals their distance in the cut tree.
pub fn pair_record_distance(t: &RootedLabeledTree, ord: &RemovalOrder, u: usize, v: usize) -> Result<usize, PruneError> {
    if u == v {
        return Err(PruneError::SameVertex);
    }
    let path = tree_path(t, u, v)?;
    let tau = path.iter().map(|&x| ord.time(x)).fold(f64::INFINITY, f64::min);
    let after = |w: usize| -> Result<usize, PruneError> {
        Ok(records(t, ord, w)?.into_iter().filter(|&x| ord.time(x) > tau).count())
    };
    Ok(after(u)? + after(v)?)
}

/// Vertex sequence of the path from `u` to `v` in `t`.
pub fn tree_path(t: &RootedLabeledTree, u: usize, v: usize) -> Result<Vec<usize>, PruneError> {
    let n = t.n();
    if u >= n || v >= n {
        return Err(PruneError::VertexOutOfRange(u.max(v)));
    }
    let adj = t.adjacency();
    let mut prev = vec![usize::MAX; n];
    prev[u] = u;
    let mut queue = std::collections::VecDeque::from([u]);
    while let Some(x) = queue.pop_front() {
        if x == v {
            break;
        }
        for &y in &adj[x] {
            if prev[y] == usize::MAX {
                prev[y] = x;
                queue.push_back(y);
            }
        }
    }
    let mut path = vec![v];
    let mut x = v;
    while x != u {
        x = prev[x];
        path.push(x);
    }
    path.reverse();
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ptree::{sample_ptree_with, sample_uniform_tree};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    /// Path 1–2–3 in 1-based labels, rooted at 1.
    fn path3() -> RootedLabeledTree {
        RootedLabeledTree::new(0, vec![None, Some(0), Some(1)]).unwrap()
    }

    fn order(perm: &[usize]) -> RemovalOrder {
        RemovalOrder::from_permutation(perm).unwrap()
    }

    /// Recursive definition, used as an oracle for the union-find version.
    fn cut_tree_recursive(t: &RootedLabeledTree, ord: &RemovalOrder) -> Vec<Option<usize>> {
        let adj = t.adjacency();
        let mut parent = vec![None; t.n()];
        let mut stack: Vec<(Vec<usize>, Option<usize>)> = vec![((0..t.n()).collect(), None)];
        while let Some((comp, above)) = stack.pop() {
            let first = *comp.iter().min_by(|&&a, &&b| ord.time(a).total_cmp(&ord.time(b))).unwrap();
            parent[first] = above;
            let inside: std::collections::HashSet<usize> = comp.iter().copied().filter(|&x| x != first).collect();
            let mut seen = std::collections::HashSet::new();
            for &s in &inside {
                if seen.contains(&s) {
                    continue;
                }
                let mut part = vec![s];
                seen.insert(s);
                let mut i = 0;
                while i < part.len() {
                    for &y in &adj[part[i]] {
                        if inside.contains(&y) && seen.insert(y) {
                            part.push(y);
                        }
                    }
                    i += 1;
                }
                stack.push((part, Some(first)));
            }
        }
        parent
    }

    #[test]
    fn cut_tree_examples() {
        let c = cut_tree(&path3(), &order(&[1, 0, 2])).unwrap();
        assert_eq!(c.tree.root(), 1);
        assert_eq!(c.tree.parent(0), Some(1));
        assert_eq!(c.tree.parent(2), Some(1));

        let c = cut_tree(&path3(), &order(&[0, 1, 2])).unwrap();
        assert_eq!(c.tree.root(), 0);
        assert_eq!(c.tree.parent(1), Some(0));
        assert_eq!(c.tree.parent(2), Some(1));
        assert_eq!(c.provenance(1), vec![1, 2]);

        let single = cut_tree(&RootedLabeledTree::single(), &order(&[0])).unwrap();
        assert_eq!(single.tree, RootedLabeledTree::single());
    }

    #[test]
    fn trace_examples() {
        let p = ProbVector::uniform(3).unwrap();
        let ord = order(&[1, 0, 2]);
        let (_, tr) = prune(&path3(), &ord, &p).unwrap();
        let mut of2: Vec<usize> = tr.of(1).iter().map(|t| t.vertex).collect();
        of2.sort();
        assert_eq!(of2, vec![0, 2]);
        // equal masses: the subtree with the smaller label ranks first
        assert_eq!(tr.of(1)[0].vertex, 0);

        let ord = order(&[0, 1, 2]);
        let (_, tr) = prune(&path3(), &ord, &p).unwrap();
        assert_eq!(tr.of(0), &[Trace { child: 1, vertex: 1 }]);
        assert_eq!(tr.of(1), &[Trace { child: 2, vertex: 2 }]);

        let single = RootedLabeledTree::single();
        let (_, tr) = prune(&single, &order(&[0]), &ProbVector::uniform(1).unwrap()).unwrap();
        assert!(tr.is_empty());
    }

    #[test]
    fn traces_reject_foreign_cut_tree() {
        let p = ProbVector::uniform(3).unwrap();
        let c = cut_tree(&path3(), &order(&[0, 1, 2])).unwrap();
        assert_eq!(traces(&path3(), &order(&[1, 0, 2]), &c, &p), Err(PruneError::InconsistentInputs));
    }

    #[test]
    fn record_examples() {
        let t = path3();
        let ord = order(&[0, 1, 2]);
        assert_eq!(record_count(&t, &ord, 2).unwrap(), 3);
        assert_eq!(record_count(&t, &ord, 0).unwrap(), 1);
        let ord = order(&[1, 0, 2]);
        assert_eq!(pair_record_distance(&t, &ord, 0, 2).unwrap(), 2);
        assert_eq!(pair_record_distance(&t, &order(&[0, 1, 2]), 1, 2).unwrap(), 1);
        assert_eq!(pair_record_distance(&t, &ord, 1, 1), Err(PruneError::SameVertex));
    }

    #[test]
    fn order_examples() {
        let single = RootedLabeledTree::single();
        let ord = sample_order(&single, &ProbVector::uniform(1).unwrap(), 1).unwrap();
        assert_eq!(ord.order(), &[0]);

        let t = RootedLabeledTree::new(0, vec![None, Some(0)]).unwrap();
        let p = ProbVector::uniform(2).unwrap();
        assert_eq!(sample_order(&t, &p, 9), sample_order(&t, &p, 9));
        let mut rng = seed::rng(2);
        let draws = 100_000;
        let first = (0..draws).filter(|_| sample_order_with(&t, &p, &mut rng).unwrap().order()[0] == 0).count();
        let sd = (draws as f64 * 0.25).sqrt();
        assert!((first as f64 - draws as f64 / 2.0).abs() < 3.0 * sd);
    }

    #[test]
    fn degree_inequality_sometimes_strict() {
        let mut rng = seed::rng(4);
        let p = ProbVector::uniform(10).unwrap();
        let mut strict = false;
        for _ in 0..1000 {
            let t = sample_ptree_with(&p, &mut rng);
            let ord = sample_order_with(&t, &p, &mut rng).unwrap();
            let c = cut_tree(&t, &ord).unwrap();
            let deg_t: Vec<usize> = t.adjacency().iter().map(|a| a.len()).collect();
            let deg_c = c.tree.child_counts();
            for v in 0..10 {
                assert!(deg_t[v] >= deg_c[v]);
                strict |= deg_t[v] > deg_c[v];
            }
        }
        assert!(strict);
    }

    fn c_distance(c: &RootedLabeledTree, a: usize, b: usize) -> usize {
        let depth = c.depths();
        let (mut x, mut y) = (a, b);
        let mut d = 0;
        while x != y {
            if depth[x] >= depth[y] {
                x = c.parent(x).unwrap();
            } else {
                y = c.parent(y).unwrap();
            }
            d += 1;
        }
        d
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn union_find_matches_recursion(n in 1usize..25, s in any::<u64>()) {
            let mut rng = seed::rng(s);
            let t = sample_uniform_tree(n, &mut rng);
            let p = ProbVector::uniform(n).unwrap();
            let ord = sample_order_with(&t, &p, &mut rng).unwrap();
            let c = cut_tree(&t, &ord).unwrap();
            prop_assert_eq!(c.tree.parents(), &cut_tree_recursive(&t, &ord)[..]);
            prop_assert_eq!(c.tree.root(), ord.order()[0]);
            prop_assert_eq!(c.tree.child_counts().iter().sum::<usize>(), n - 1);
        }

        #[test]
        fn traces_are_adjacent_and_inside(n in 1usize..25, s in any::<u64>()) {
            let mut rng = seed::rng(s);
            let t = sample_uniform_tree(n, &mut rng);
            let p = ProbVector::from_weights((0..n).map(|_| rng.random::<f64>() + 0.01).collect()).unwrap();
            let ord = sample_order_with(&t, &p, &mut rng).unwrap();
            let (c, tr) = prune(&t, &ord, &p).unwrap();
            let edges = t.edge_set();
            let counts = c.tree.child_counts();
            for v in 0..n {
                prop_assert_eq!(tr.of(v).len(), counts[v]);
                for w in tr.of(v) {
                    prop_assert!(edges.contains(&(v.min(w.vertex), v.max(w.vertex))));
                    prop_assert!(c.provenance(w.child).contains(&w.vertex));
                }
            }
        }

        #[test]
        fn records_realize_cut_tree_distances(n in 2usize..20, s in any::<u64>()) {
            let mut rng = seed::rng(s);
            let t = sample_uniform_tree(n, &mut rng);
            let p = ProbVector::uniform(n).unwrap();
            let ord = sample_order_with(&t, &p, &mut rng).unwrap();
            let c = cut_tree(&t, &ord).unwrap();
            let depth = c.tree.depths();
            for v in 0..n {
                prop_assert_eq!(record_count(&t, &ord, v).unwrap(), depth[v] + 1);
                for u in (v + 1)..n {
                    prop_assert_eq!(pair_record_distance(&t, &ord, u, v).unwrap(), c_distance(&c.tree, u, v));
                }
            }
        }
    }
}
