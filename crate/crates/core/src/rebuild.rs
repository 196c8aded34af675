//! Recovering `T` from its cut tree and traces, and routing paths of `T`
//! through the cut tree.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prune::{DiscreteCutTree, TraceMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RebuildError {
    #[error("vertex {vertex} has {found} traces but {expected} children in the cut tree")]
    IncompleteTraces { vertex: usize, found: usize, expected: usize },
    #[error("trace edges do not form a tree")]
    ResultNotATree,
    #[error("w1 and w2 must differ")]
    SameVertex,
    #[error("vertex {0} out of range")]
    VertexOutOfRange(usize),
}

/// Tree on `0..n` without a distinguished root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnrootedTree {
    pub n: usize,
    /// Each edge stored as `(min, max)`.
    pub edges: BTreeSet<(usize, usize)>,
}

pub fn rebuild(c: &DiscreteCutTree, tr: &TraceMap) -> Result<UnrootedTree, RebuildError> {
    let n = c.n();
    if tr.n() != n {
        return Err(RebuildError::IncompleteTraces { vertex: tr.n().min(n), found: 0, expected: 1 });
    }
    let counts = c.tree.child_counts();
    let mut edges = BTreeSet::new();
    for v in 0..n {
        let list = tr.of(v);
        if list.len() != counts[v] {
            return Err(RebuildError::IncompleteTraces { vertex: v, found: list.len(), expected: counts[v] });
        }
        for t in list {
            if t.vertex >= n || t.vertex == v {
                return Err(RebuildError::ResultNotATree);
            }
            edges.insert((v.min(t.vertex), v.max(t.vertex)));
        }
    }
    if edges.len() + 1 != n || !connected(n, &edges) {
        return Err(RebuildError::ResultNotATree);
    }
    Ok(UnrootedTree { n, edges })
}

fn connected(n: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut stack = vec![0];
    let mut count = 1;
    while let Some(x) = stack.pop() {
        for &y in &adj[x] {
            if !seen[y] {
                seen[y] = true;
                count += 1;
                stack.push(y);
            }
        }
    }
    count == n
}

/// One node of the routing recursion. The address is a binary word; the
/// pair at address `w` is `(r_{w0}, r_{w1})`, with `r_0 = w1`, `r_1 = w2`
/// and `r_{u0} = r_u`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingStep {
    pub address: String,
    pub pair: (usize, usize),
    /// Most recent common ancestor of the pair in `C`.
    pub mrca: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Routing {
    /// Edges of the `T`-path in order from `w1` to `w2`.
    pub edges: Vec<(usize, usize)>,
    pub steps: Vec<RoutingStep>,
}

impl Routing {
    pub fn mrca_set(&self) -> BTreeSet<usize> {
        self.steps.iter().map(|s| s.mrca).collect()
    }
}

struct CutIndex<'a> {
    c: &'a DiscreteCutTree,
    depth: Vec<usize>,
}

impl CutIndex<'_> {
    fn mrca(&self, mut a: usize, mut b: usize) -> usize {
        while a != b {
            if self.depth[a] >= self.depth[b] {
                a = self.c.tree.parent(a).expect("non-root");
            } else {
                b = self.c.tree.parent(b).expect("non-root");
            }
        }
        a
    }

    /// Child of `b` in `C` whose subtree holds `x` (`x` strictly above `b`).
    fn branch_toward(&self, b: usize, mut x: usize) -> usize {
        while self.c.tree.parent(x) != Some(b) {
            x = self.c.tree.parent(x).expect("x lies above b");
        }
        x
    }
}

/// Path of `T` from `w1` to `w2` read off the cut tree and traces.
///
/// The recursion runs breadth-first over binary addresses: at address `w`
/// the pair `(a, b)` has mrca `m`; the trace of `m` toward `a` becomes
/// `r_{w01}` and the trace toward `b` becomes `r_{w11}`. A pair whose two
/// entries coincide is not expanded.
pub fn route_path(c: &DiscreteCutTree, tr: &TraceMap, w1: usize, w2: usize) -> Result<Routing, RebuildError> {
    let n = c.n();
    if w1 >= n || w2 >= n {
        return Err(RebuildError::VertexOutOfRange(w1.max(w2)));
    }
    if w1 == w2 {
        return Err(RebuildError::SameVertex);
    }
    let counts = c.tree.child_counts();
    for v in 0..n {
        if tr.of(v).len() != counts[v] {
            return Err(RebuildError::IncompleteTraces { vertex: v, found: tr.of(v).len(), expected: counts[v] });
        }
    }
    let idx = CutIndex { c, depth: c.tree.depths() };
    let trace = |m: usize, toward: usize| -> Result<usize, RebuildError> {
        let child = idx.branch_toward(m, toward);
        tr.of(m).iter().find(|t| t.child == child).map(|t| t.vertex).ok_or(RebuildError::ResultNotATree)
    };

    let mut steps = Vec::new();
    let mut edge_set = BTreeSet::new();
    let mut queue = VecDeque::from([(String::new(), w1, w2)]);
    while let Some((address, a, b)) = queue.pop_front() {
        if a == b {
            continue;
        }
        let m = idx.mrca(a, b);
        steps.push(RoutingStep { address: address.clone(), pair: (a, b), mrca: m });
        // side 0: from a to the trace of m toward a
        let x = if m == a { a } else { trace(m, a)? };
        let y = if m == b { b } else { trace(m, b)? };
        if x != m {
            edge_set.insert((x.min(m), x.max(m)));
        }
        if y != m {
            edge_set.insert((y.min(m), y.max(m)));
        }
        if steps.len() > n {
            return Err(RebuildError::ResultNotATree);
        }
        queue.push_back((format!("{address}0"), a, x));
        queue.push_back((format!("{address}1"), b, y));
    }
    let edges = order_path(w1, w2, &edge_set).ok_or(RebuildError::ResultNotATree)?;
    Ok(Routing { edges, steps })
}

fn order_path(w1: usize, w2: usize, edges: &BTreeSet<(usize, usize)>) -> Option<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(edges.len());
    let mut used = BTreeSet::new();
    let mut at = w1;
    while at != w2 {
        let &(a, b) = edges.iter().find(|&&(a, b)| (a == at || b == at) && !used.contains(&(a, b)))?;
        used.insert((a, b));
        let next = if a == at { b } else { a };
        out.push((at, next));
        at = next;
    }
    (used.len() == edges.len()).then_some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prune::{prune, sample_order_with, tree_path, RemovalOrder, Trace};
    use crate::ptree::{ProbVector, RootedLabeledTree};
    use crate::seed;
    use proptest::prelude::*;

    #[test]
    fn rebuild_path3() {
        let c = DiscreteCutTree { tree: RootedLabeledTree::new(1, vec![Some(1), None, Some(1)]).unwrap() };
        let tr = TraceMap::new(vec![vec![], vec![Trace { child: 0, vertex: 0 }, Trace { child: 2, vertex: 2 }], vec![]]);
        let t = rebuild(&c, &tr).unwrap();
        assert_eq!(t.edges, BTreeSet::from([(0, 1), (1, 2)]));

        let single = DiscreteCutTree { tree: RootedLabeledTree::single() };
        assert_eq!(rebuild(&single, &TraceMap::new(vec![vec![]])).unwrap().edges.len(), 0);

        let missing = TraceMap::new(vec![vec![], vec![Trace { child: 0, vertex: 0 }], vec![]]);
        assert!(matches!(rebuild(&c, &missing), Err(RebuildError::IncompleteTraces { vertex: 1, .. })));
        let cyclic = TraceMap::new(vec![vec![], vec![Trace { child: 0, vertex: 0 }, Trace { child: 2, vertex: 0 }], vec![]]);
        assert_eq!(rebuild(&c, &cyclic), Err(RebuildError::ResultNotATree));
    }

    /// The tree of the routing figure (1-based): edges 1–5, 1–4, 1–2,
    /// 4–7, 4–6, 6–3, with vertex 4 removed first, then 2, then 1.
    fn figure_instance() -> (RootedLabeledTree, RemovalOrder) {
        let edges = [(1, 5), (1, 4), (1, 2), (4, 7), (4, 6), (6, 3)].map(|(a, b)| (a - 1, b - 1));
        let t = RootedLabeledTree::from_edges(7, 0, &edges).unwrap();
        let ord = RemovalOrder::from_permutation(&[4, 2, 1, 6, 3, 5, 7].map(|v| v - 1)).unwrap();
        (t, ord)
    }

    #[test]
    fn figure_routing() {
        let (t, ord) = figure_instance();
        let (c, tr) = prune(&t, &ord, &ProbVector::uniform(7).unwrap()).unwrap();
        let r = route_path(&c, &tr, 4, 6).unwrap();
        let one_based: Vec<(usize, usize)> = r.edges.iter().map(|&(a, b)| (a + 1, b + 1)).collect();
        assert_eq!(one_based, vec![(5, 1), (1, 4), (4, 7)]);
        assert_eq!(r.steps[0].mrca, 3);
        let traces_of_4: BTreeSet<usize> = tr.of(3).iter().map(|t| t.vertex + 1).collect();
        assert!(traces_of_4.contains(&7) && traces_of_4.contains(&1));
        assert!(tr.of(0).iter().any(|t| t.vertex == 4));
        assert_eq!(route_path(&c, &tr, 2, 2), Err(RebuildError::SameVertex));
    }

    #[test]
    fn adjacent_pair_is_one_edge() {
        let (t, ord) = figure_instance();
        let (c, tr) = prune(&t, &ord, &ProbVector::uniform(7).unwrap()).unwrap();
        assert_eq!(route_path(&c, &tr, 5, 2).unwrap().edges, vec![(5, 2)]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn round_trip(n in 1usize..50, s in any::<u64>()) {
            let mut rng = seed::rng(s);
            let p = ProbVector::uniform(n).unwrap();
            let t = crate::ptree::sample_uniform_tree(n, &mut rng);
            let ord = sample_order_with(&t, &p, &mut rng).unwrap();
            let (c, tr) = prune(&t, &ord, &p).unwrap();
            prop_assert_eq!(rebuild(&c, &tr).unwrap().edges, t.edge_set());
        }

        #[test]
        fn routes_follow_tree_paths(n in 2usize..20, s in any::<u64>()) {
            let mut rng = seed::rng(s);
            let p = ProbVector::uniform(n).unwrap();
            let t = crate::ptree::sample_uniform_tree(n, &mut rng);
            let ord = sample_order_with(&t, &p, &mut rng).unwrap();
            let (c, tr) = prune(&t, &ord, &p).unwrap();
            for a in 0..n {
                for b in 0..n {
                    if a == b { continue; }
                    let r = route_path(&c, &tr, a, b).unwrap();
                    let path = tree_path(&t, a, b).unwrap();
                    let expected: Vec<(usize, usize)> = path.windows(2).map(|w| (w[0], w[1])).collect();
                    prop_assert_eq!(&r.edges, &expected);
                    // mrcas are the path vertices removed before some path neighbour
                    let on_path: BTreeSet<usize> = path.iter().enumerate().filter(|&(i, &x)| {
                        let later = |j: usize| ord.time(path[j]) > ord.time(x);
                        (i > 0 && later(i - 1)) || (i + 1 < path.len() && later(i + 1))
                    }).map(|(_, &x)| x).collect();
                    prop_assert_eq!(r.mrca_set(), on_path);
                }
            }
        }
    }
}
