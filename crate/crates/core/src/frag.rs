//! Poisson pruning of a skeleton restricted to the subtree spanned by `m`
//! tracked leaves, and the partition process it induces.
//!
//! Skeletal cuts fall on each edge of the spanned graph as a Poisson process
//! of rate `β · length`; each hub on it is removed at an independent
//! `Exp(θ)` time. Connectivity is read off a Kruskal-style tree built by
//! adding edges back in decreasing order of their first cut: an internal
//! node of that tree is a component, alive for all times before its own.

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::icrt::{Point, SkeletonTree};
use crate::params::ThetaSpec;
use crate::seed;

pub(crate) const NONE: usize = usize::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FragError {
    #[error("m = {m} exceeds the {leaves} leaves of the skeleton")]
    MTooLarge { m: usize, leaves: usize },
    #[error("need at least 2 tracked leaves, got {0}")]
    MTooSmall(usize),
    #[error("the spanned skeleton has no cut intensity")]
    EmptySkeleton,
    #[error("leaf {0} is not tracked")]
    UntrackedLeaf(usize),
    #[error("malformed history: {0}")]
    Malformed(String),
}

/// Hub carried by a node of the spanned graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HubMark {
    pub id: usize,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanNode {
    pub point: Point,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hub: Option<HubMark>,
    /// Index among the tracked leaves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracked: Option<usize>,
}

/// Piece `[start, start + length]` of a skeleton segment between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanEdge {
    pub lo: usize,
    pub hi: usize,
    pub segment: usize,
    pub start: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanGraph {
    pub nodes: Vec<SpanNode>,
    pub edges: Vec<SpanEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    /// Skeletal cut at distance `pos` from the `lo` end of an edge.
    Edge { edge: usize, pos: f64 },
    /// Removal of the hub sitting on a node.
    Hub { node: usize, hub: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutEvent {
    #[serde(rename = "t")]
    pub time: f64,
    #[serde(rename = "loc")]
    pub location: Location,
    /// Whether the event splits a block of tracked leaves.
    #[serde(default)]
    pub refining: bool,
}

impl CutEvent {
    pub fn is_hub(&self) -> bool {
        matches!(self.location, Location::Hub { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FragOptions {
    /// Keep generating skeletal cuts up to this time even after all tracked
    /// leaves are separated.
    pub horizon: Option<f64>,
}

/// Component tree: leaves are classes of graph elements that are never
/// disconnected, internal nodes are the unions performed at event times.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Krt {
    pub parent: Vec<usize>,
    pub time: Vec<f64>,
    pub tracked: Vec<u32>,
    pub event: Vec<usize>,
    pub children: Vec<Vec<usize>>,
    pub refining: Vec<bool>,
    /// KRT leaf holding each element.
    pub class_of: Vec<usize>,
}

/// Derived lookup structure of the spanned graph.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GraphIndex {
    /// Element of each node; hubs use ports instead and have `NONE`.
    pub node_elem: Vec<usize>,
    /// Element at the `lo` and `hi` ends of each edge.
    pub edge_elems: Vec<(usize, usize)>,
    pub ports: Vec<Vec<usize>>,
    pub incident: Vec<Vec<usize>>,
    pub n_elems: usize,
    pub tracked_node: Vec<usize>,
    pub root_parent_edge: Vec<usize>,
    pub depth: Vec<usize>,
    pub tin: Vec<usize>,
    pub tout: Vec<usize>,
    /// Skeletal cuts on each edge as `(pos, time)`, by position.
    pub edge_cuts: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "HistoryJson", try_from = "HistoryJson")]
pub struct FragHistory {
    m: usize,
    tracked_leaves: Vec<usize>,
    beta: f64,
    graph: SpanGraph,
    events: Vec<CutEvent>,
    horizon: Option<f64>,
    pub(crate) krt: Krt,
    pub(crate) index: GraphIndex,
    complete: bool,
    t_end: f64,
}

/// Selects `m` leaves of `sk` uniformly without replacement and prunes the
/// subtree they span.
pub fn simulate(sk: &SkeletonTree, spec: &ThetaSpec, m: usize, seed: u64) -> Result<FragHistory, FragError> {
    simulate_with(sk, spec, m, FragOptions::default(), &mut seed::rng(seed))
}

pub fn simulate_with<R: Rng + ?Sized>(
    sk: &SkeletonTree,
    spec: &ThetaSpec,
    m: usize,
    opts: FragOptions,
    rng: &mut R,
) -> Result<FragHistory, FragError> {
    let leaves = sk.leaf_count();
    if m > leaves {
        return Err(FragError::MTooLarge { m, leaves });
    }
    if m < 2 {
        return Err(FragError::MTooSmall(m));
    }
    let tracked: Vec<usize> = index::sample(rng, leaves, m).into_iter().collect();
    simulate_tracked(sk, spec, &tracked, opts, rng)
}

/// Prunes the subtree spanned by the given skeleton leaves.
pub fn simulate_tracked<R: Rng + ?Sized>(
    sk: &SkeletonTree,
    spec: &ThetaSpec,
    tracked: &[usize],
    opts: FragOptions,
    rng: &mut R,
) -> Result<FragHistory, FragError> {
    let m = tracked.len();
    if m < 2 {
        return Err(FragError::MTooSmall(m));
    }
    let graph = span_graph(sk, tracked);
    let beta = spec.beta();
    if beta == 0.0 && graph.nodes.iter().all(|n| n.hub.is_none()) {
        return Err(FragError::EmptySkeleton);
    }
    let mut events = Vec::new();
    for (e, edge) in graph.edges.iter().enumerate() {
        if beta > 0.0 {
            let t: f64 = Exp::new(beta * edge.length).expect("positive rate").sample(rng);
            events.push(CutEvent { time: t, location: Location::Edge { edge: e, pos: edge.length * rng.random::<f64>() }, refining: false });
        }
    }
    for (v, node) in graph.nodes.iter().enumerate() {
        if let Some(h) = node.hub {
            let t: f64 = Exp::new(h.theta).expect("positive theta").sample(rng);
            events.push(CutEvent { time: t, location: Location::Hub { node: v, hub: h.id }, refining: false });
        }
    }
    let first = FragHistory::from_parts(m, tracked.to_vec(), beta, graph, events, opts.horizon)?;
    let until = first.t_end.max(opts.horizon.unwrap_or(0.0));
    if beta == 0.0 {
        return Ok(first);
    }
    let FragHistory { graph, mut events, .. } = first;
    let mut extra = Vec::new();
    for ev in &events {
        if let Location::Edge { edge, .. } = ev.location {
            let len = graph.edges[edge].length;
            let gap = Exp::new(beta * len).expect("positive rate");
            let mut t = ev.time;
            loop {
                t += gap.sample(rng);
                if t > until {
                    break;
                }
                extra.push(CutEvent { time: t, location: Location::Edge { edge, pos: len * rng.random::<f64>() }, refining: false });
            }
        }
    }
    events.extend(extra);
    FragHistory::from_parts(m, tracked.to_vec(), beta, graph, events, opts.horizon)
}

/// Subtree of `sk` spanned by the given leaves, with degree-1 nodes that are
/// not tracked removed.
pub fn span_graph(sk: &SkeletonTree, tracked: &[usize]) -> SpanGraph {
    let k = sk.segment_count();
    let mut cover = vec![-1.0f64; k];
    for &leaf in tracked {
        let mut p = sk.leaf_point(leaf);
        loop {
            if cover[p.segment] >= p.offset {
                break;
            }
            cover[p.segment] = p.offset;
            match sk.segment_attach(p.segment) {
                Some(q) => p = q,
                None => break,
            }
        }
    }
    // marked offsets per covered segment
    let mut marks: Vec<Vec<f64>> = vec![Vec::new(); k];
    for s in 0..k {
        if cover[s] < 0.0 {
            continue;
        }
        marks[s].push(0.0);
        marks[s].push(cover[s]);
        for (o, _) in sk.hubs_on_segment(s) {
            if o > cover[s] {
                break;
            }
            marks[s].push(o);
        }
        if s > 0 {
            let p = sk.segment_attach(s).expect("attached");
            marks[p.segment].push(p.offset);
        }
    }
    let mut tracked_at: HashMap<(usize, u64), usize> = HashMap::new();
    for (i, &leaf) in tracked.iter().enumerate() {
        let p = sk.leaf_point(leaf);
        tracked_at.insert((p.segment, p.offset.to_bits()), i);
    }
    let hub_at: HashMap<(usize, u64), HubMark> =
        sk.hubs().iter().map(|h| ((h.point.segment, h.point.offset.to_bits()), HubMark { id: h.id, theta: h.theta })).collect();

    let canonical = |s: usize, o: f64| -> Point {
        if o == 0.0 && s > 0 {
            sk.segment_attach(s).expect("attached")
        } else {
            Point { segment: s, offset: o }
        }
    };
    let mut ids: HashMap<(usize, u64), usize> = HashMap::new();
    let mut nodes: Vec<SpanNode> = Vec::new();
    let mut node_of = |p: Point, nodes: &mut Vec<SpanNode>| -> usize {
        let key = (p.segment, p.offset.to_bits());
        *ids.entry(key).or_insert_with(|| {
            nodes.push(SpanNode { point: p, hub: hub_at.get(&key).copied(), tracked: tracked_at.get(&key).copied() });
            nodes.len() - 1
        })
    };
    let mut edges = Vec::new();
    for s in 0..k {
        let list = &mut marks[s];
        if list.is_empty() {
            continue;
        }
        list.sort_by(f64::total_cmp);
        list.dedup();
        let mut prev = node_of(canonical(s, list[0]), &mut nodes);
        for w in list.windows(2) {
            let next = node_of(canonical(s, w[1]), &mut nodes);
            edges.push(SpanEdge { lo: prev, hi: next, segment: s, start: w[0], length: w[1] - w[0] });
            prev = next;
        }
    }
    prune_dangling(nodes, edges)
}

fn prune_dangling(nodes: Vec<SpanNode>, edges: Vec<SpanEdge>) -> SpanGraph {
    let n = nodes.len();
    let mut incident = vec![Vec::new(); n];
    for (e, edge) in edges.iter().enumerate() {
        incident[edge.lo].push(e);
        incident[edge.hi].push(e);
    }
    let mut degree: Vec<usize> = incident.iter().map(|l| l.len()).collect();
    let mut node_alive = vec![true; n];
    let mut edge_alive = vec![true; edges.len()];
    let mut queue: Vec<usize> = (0..n).filter(|&v| degree[v] <= 1 && nodes[v].tracked.is_none()).collect();
    while let Some(v) = queue.pop() {
        if !node_alive[v] {
            continue;
        }
        node_alive[v] = false;
        for &e in &incident[v] {
            if edge_alive[e] {
                edge_alive[e] = false;
                let u = if edges[e].lo == v { edges[e].hi } else { edges[e].lo };
                degree[u] -= 1;
                if degree[u] <= 1 && nodes[u].tracked.is_none() && node_alive[u] {
                    queue.push(u);
                }
            }
        }
    }
    let mut remap = vec![NONE; n];
    let mut kept = Vec::new();
    for (v, node) in nodes.into_iter().enumerate() {
        if node_alive[v] {
            remap[v] = kept.len();
            kept.push(node);
        }
    }
    let edges = edges
        .into_iter()
        .zip(edge_alive)
        .filter(|(_, alive)| *alive)
        .map(|(mut e, _)| {
            e.lo = remap[e.lo];
            e.hi = remap[e.hi];
            e
        })
        .collect();
    SpanGraph { nodes: kept, edges }
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

impl GraphIndex {
    fn new(graph: &SpanGraph, m: usize) -> Result<Self, FragError> {
        let n = graph.nodes.len();
        let mut incident = vec![Vec::new(); n];
        for (e, edge) in graph.edges.iter().enumerate() {
            if edge.lo >= n || edge.hi >= n || edge.lo == edge.hi || !(edge.length > 0.0) {
                return Err(FragError::Malformed(format!("edge {e} is invalid")));
            }
            incident[edge.lo].push(e);
            incident[edge.hi].push(e);
        }
        if graph.edges.len() + 1 != n {
            return Err(FragError::Malformed("spanned graph is not a tree".into()));
        }
        let mut n_elems = 0;
        let mut node_elem = vec![NONE; n];
        let mut ports = vec![Vec::new(); n];
        for v in 0..n {
            if graph.nodes[v].hub.is_some() {
                ports[v] = (0..incident[v].len()).map(|i| n_elems + i).collect();
                n_elems += incident[v].len();
            } else {
                node_elem[v] = n_elems;
                n_elems += 1;
            }
        }
        let elem_at = |v: usize, e: usize| -> usize {
            if node_elem[v] != NONE {
                node_elem[v]
            } else {
                ports[v][incident[v].iter().position(|&x| x == e).expect("incident")]
            }
        };
        let edge_elems = graph.edges.iter().enumerate().map(|(e, edge)| (elem_at(edge.lo, e), elem_at(edge.hi, e))).collect();
        let mut tracked_node = vec![NONE; m];
        for (v, node) in graph.nodes.iter().enumerate() {
            if let Some(i) = node.tracked {
                if i >= m || tracked_node[i] != NONE || node.hub.is_some() {
                    return Err(FragError::Malformed(format!("bad tracked mark on node {v}")));
                }
                tracked_node[i] = v;
            }
        }
        if tracked_node.contains(&NONE) {
            return Err(FragError::Malformed("a tracked leaf has no node".into()));
        }
        // rooted structure for side queries
        let root = tracked_node[0];
        let mut root_parent_edge = vec![NONE; n];
        let mut depth = vec![0; n];
        let mut tin = vec![NONE; n];
        let mut tout = vec![0; n];
        let mut clock = 0;
        let mut stack = vec![(root, false)];
        while let Some((v, done)) = stack.pop() {
            if done {
                tout[v] = clock;
                continue;
            }
            tin[v] = clock;
            clock += 1;
            stack.push((v, true));
            for &e in &incident[v] {
                let edge = &graph.edges[e];
                let u = if edge.lo == v { edge.hi } else { edge.lo };
                if tin[u] == NONE {
                    root_parent_edge[u] = e;
                    depth[u] = depth[v] + 1;
                    stack.push((u, false));
                }
            }
        }
        if tin.contains(&NONE) {
            return Err(FragError::Malformed("spanned graph is disconnected".into()));
        }
        Ok(GraphIndex {
            node_elem,
            edge_elems,
            ports,
            incident,
            n_elems,
            tracked_node,
            root_parent_edge,
            depth,
            tin,
            tout,
            edge_cuts: vec![Vec::new(); graph.edges.len()],
        })
    }

    /// Whether `x` lies in the rooted subtree of `v`.
    pub fn in_subtree(&self, v: usize, x: usize) -> bool {
        self.tin[v] <= self.tin[x] && self.tin[x] < self.tout[v]
    }
}

impl FragHistory {
    /// Rebuilds the derived structures from stored data.
    pub fn from_parts(
        m: usize,
        tracked_leaves: Vec<usize>,
        beta: f64,
        graph: SpanGraph,
        mut events: Vec<CutEvent>,
        horizon: Option<f64>,
    ) -> Result<Self, FragError> {
        if m < 2 || tracked_leaves.len() != m {
            return Err(FragError::MTooSmall(m));
        }
        let mut index = GraphIndex::new(&graph, m)?;
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        for w in events.windows(2) {
            if w[0].time == w[1].time {
                return Err(FragError::Malformed(format!("two events at time {}", w[0].time)));
            }
        }
        let mut first_on_edge = vec![NONE; graph.edges.len()];
        let mut hub_seen = vec![false; graph.nodes.len()];
        for (i, ev) in events.iter().enumerate() {
            if !(ev.time > 0.0) || !ev.time.is_finite() {
                return Err(FragError::Malformed("event times must be positive".into()));
            }
            match ev.location {
                Location::Edge { edge, pos } => {
                    if edge >= graph.edges.len() || !(pos >= 0.0 && pos <= graph.edges[edge].length) {
                        return Err(FragError::Malformed(format!("event {i} has a bad location")));
                    }
                    if first_on_edge[edge] == NONE {
                        first_on_edge[edge] = i;
                    }
                    index.edge_cuts[edge].push((pos, ev.time));
                }
                Location::Hub { node, hub } => {
                    if node >= graph.nodes.len() || graph.nodes[node].hub.map(|h| h.id) != Some(hub) || hub_seen[node] {
                        return Err(FragError::Malformed(format!("event {i} has a bad hub")));
                    }
                    hub_seen[node] = true;
                }
            }
        }
        for cuts in index.edge_cuts.iter_mut() {
            cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let krt = build_krt(&graph, &index, &events, &first_on_edge);
        let mut complete = true;
        for leaf in 0..krt.class_of.iter().copied().max().map_or(0, |x| x + 1) {
            if krt.tracked[leaf] >= 2 {
                complete = false;
            }
        }
        let mut t_end: f64 = 0.0;
        for x in 0..krt.parent.len() {
            if krt.refining[x] {
                events[krt.event[x]].refining = true;
                t_end = t_end.max(krt.time[x]);
            }
        }
        Ok(FragHistory { m, tracked_leaves, beta, graph, events, horizon, krt, index, complete, t_end })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Skeleton leaf ids of the tracked leaves, in tracking order.
    pub fn tracked_leaves(&self) -> &[usize] {
        &self.tracked_leaves
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn graph(&self) -> &SpanGraph {
        &self.graph
    }

    pub fn events(&self) -> &[CutEvent] {
        &self.events
    }

    pub fn horizon(&self) -> Option<f64> {
        self.horizon
    }

    /// Whether every pair of tracked leaves is eventually separated.
    pub fn is_complete(&self) -> bool {
        self.complete
    }

    /// Time of the last refining event.
    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Total length of the spanned graph.
    pub fn spanned_length(&self) -> f64 {
        self.graph.edges.iter().map(|e| e.length).sum()
    }

    /// Skeleton point of an event location.
    pub fn location_point(&self, loc: Location) -> Point {
        match loc {
            Location::Edge { edge, pos } => {
                let e = &self.graph.edges[edge];
                Point { segment: e.segment, offset: e.start + pos }
            }
            Location::Hub { node, .. } => self.graph.nodes[node].point,
        }
    }

    pub(crate) fn leaf_class(&self, leaf: usize) -> usize {
        self.krt.class_of[self.index.node_elem[self.index.tracked_node[leaf]]]
    }

    /// Component of a KRT node at time `t`.
    pub(crate) fn comp_at(&self, mut x: usize, t: f64) -> usize {
        while self.krt.parent[x] != NONE && self.krt.time[self.krt.parent[x]] > t {
            x = self.krt.parent[x];
        }
        x
    }

    /// Fraction of tracked leaves sharing the block of `leaf` at time `t`.
    pub fn block_mass(&self, leaf: usize, t: f64) -> Result<f64, FragError> {
        if leaf >= self.m {
            return Err(FragError::UntrackedLeaf(leaf));
        }
        let c = self.comp_at(self.leaf_class(leaf), t);
        Ok(self.krt.tracked[c] as f64 / self.m as f64)
    }

    /// Partition of the tracked leaves at time `t`, blocks sorted.
    pub fn partition_at(&self, t: f64) -> Vec<Vec<usize>> {
        let mut blocks: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..self.m {
            blocks.entry(self.comp_at(self.leaf_class(i), t)).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = blocks.into_values().collect();
        out.sort();
        out
    }

    /// Refining splits in time order: `(event index, parent block, child
    /// blocks)`, each block given by its sorted tracked leaves.
    pub fn splits(&self) -> Vec<Split> {
        let mut leaves_below: Vec<Vec<usize>> = vec![Vec::new(); self.krt.parent.len()];
        for i in 0..self.m {
            let mut x = self.leaf_class(i);
            loop {
                leaves_below[x].push(i);
                if self.krt.parent[x] == NONE {
                    break;
                }
                x = self.krt.parent[x];
            }
        }
        let mut out: Vec<Split> = (0..self.krt.parent.len())
            .filter(|&x| self.krt.refining[x])
            .map(|x| Split {
                event: self.krt.event[x],
                time: self.krt.time[x],
                children: self.krt.children[x]
                    .iter()
                    .filter(|&&c| self.krt.tracked[c] > 0)
                    .map(|&c| leaves_below[c].clone())
                    .collect(),
            })
            .collect();
        out.sort_by(|a, b| a.time.total_cmp(&b.time));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub event: usize,
    pub time: f64,
    pub children: Vec<Vec<usize>>,
}

fn build_krt(graph: &SpanGraph, index: &GraphIndex, events: &[CutEvent], first_on_edge: &[usize]) -> Krt {
    let mut dsu = Dsu::new(index.n_elems);
    // edges that are never cut and hubs that are never removed glue elements
    // into permanent classes
    for (e, &(a, b)) in index.edge_elems.iter().enumerate() {
        if first_on_edge[e] == NONE {
            let (ra, rb) = (dsu.find(a), dsu.find(b));
            dsu.parent[ra] = rb;
        }
    }
    let removed: Vec<bool> = {
        let mut r = vec![false; graph.nodes.len()];
        for ev in events {
            if let Location::Hub { node, .. } = ev.location {
                r[node] = true;
            }
        }
        r
    };
    for (v, ports) in index.ports.iter().enumerate() {
        if !ports.is_empty() && !removed[v] {
            for w in ports.windows(2) {
                let (ra, rb) = (dsu.find(w[0]), dsu.find(w[1]));
                dsu.parent[ra] = rb;
            }
        }
    }
    let mut class_index = vec![NONE; index.n_elems];
    let mut class_of = vec![NONE; index.n_elems];
    let mut krt = Krt {
        parent: Vec::new(),
        time: Vec::new(),
        tracked: Vec::new(),
        event: Vec::new(),
        children: Vec::new(),
        refining: Vec::new(),
        class_of: Vec::new(),
    };
    for x in 0..index.n_elems {
        let r = dsu.find(x);
        if class_index[r] == NONE {
            class_index[r] = krt.parent.len();
            krt.parent.push(NONE);
            krt.time.push(f64::INFINITY);
            krt.tracked.push(0);
            krt.event.push(NONE);
            krt.children.push(Vec::new());
            krt.refining.push(false);
        }
        class_of[x] = class_index[r];
    }
    for &v in &index.tracked_node {
        krt.tracked[class_of[index.node_elem[v]]] += 1;
    }
    // second pass over classes: a fresh union-find whose roots point at KRT nodes
    let n_classes = krt.parent.len();
    let mut cdsu = Dsu::new(n_classes);
    let mut top: Vec<usize> = (0..n_classes).collect();
    for (i, ev) in events.iter().enumerate().rev() {
        let elems: Vec<usize> = match ev.location {
            Location::Edge { edge, .. } => {
                if first_on_edge[edge] != i {
                    continue;
                }
                let (a, b) = index.edge_elems[edge];
                vec![a, b]
            }
            Location::Hub { node, .. } => index.ports[node].clone(),
        };
        let mut roots: Vec<usize> = elems.iter().map(|&x| cdsu.find(class_of[x])).collect();
        roots.sort_unstable();
        roots.dedup();
        if roots.len() < 2 {
            continue;
        }
        let id = krt.parent.len();
        let children: Vec<usize> = roots.iter().map(|&r| top[r]).collect();
        let tracked: u32 = children.iter().map(|&c| krt.tracked[c]).sum();
        let refining = children.iter().filter(|&&c| krt.tracked[c] > 0).count() >= 2;
        for &c in &children {
            krt.parent[c] = id;
        }
        krt.parent.push(NONE);
        krt.time.push(ev.time);
        krt.tracked.push(tracked);
        krt.event.push(i);
        krt.children.push(children);
        krt.refining.push(refining);
        let r0 = roots[0];
        for &r in &roots[1..] {
            cdsu.parent[r] = r0;
        }
        top[r0] = id;
    }
    krt.class_of = class_of;
    krt
}

#[derive(Serialize, Deserialize)]
struct HistoryJson {
    m: usize,
    tracked_leaves: Vec<usize>,
    beta: f64,
    #[serde(default)]
    horizon: Option<f64>,
    graph: SpanGraph,
    events: Vec<CutEvent>,
    /// Output only: the refining splits.
    #[serde(default, skip_deserializing)]
    partitions: Vec<Split>,
}

impl From<FragHistory> for HistoryJson {
    fn from(h: FragHistory) -> Self {
        let partitions = h.splits();
        HistoryJson {
            m: h.m,
            tracked_leaves: h.tracked_leaves,
            beta: h.beta,
            horizon: h.horizon,
            graph: h.graph,
            events: h.events,
            partitions,
        }
    }
}

impl TryFrom<HistoryJson> for FragHistory {
    type Error = FragError;
    fn try_from(raw: HistoryJson) -> Result<Self, FragError> {
        FragHistory::from_parts(raw.m, raw.tracked_leaves, raw.beta, raw.graph, raw.events, raw.horizon)
    }
}
