//! Cut-tree analytics of a pruning history: the δ distances, the genealogy
//! of the tracked leaves, local times at hub cuts, routing integrals and
//! the reconstruction of path lengths from cut counts.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frag::{CutEvent, FragHistory, Location, NONE};
use crate::params::ThetaSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CutTreeError {
    #[error("history does not separate every pair of tracked leaves")]
    IncompleteHistory,
    #[error("genealogy has no node coming from a hub cut")]
    NoHubCuts,
    #[error("address {0:?} does not resolve in this history")]
    UnresolvedAddress(String),
    #[error("beta must be positive")]
    ZeroBeta,
    #[error("node {0} is not an internal node")]
    NodeNotInternal(usize),
    #[error("leaf {0} is not tracked")]
    UntrackedLeaf(usize),
    #[error("the two leaves must differ")]
    SameLeaf,
    #[error("t = {t} is past the simulated horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error(transparent)]
    Params(#[from] crate::params::ParamsError),
}

/// δ distances among the root (index 0 of `root`) and the tracked leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMatrix {
    m: usize,
    root: Vec<f64>,
    d: Vec<f64>,
    /// Time at which each leaf becomes a singleton.
    pub isolation: Vec<f64>,
    /// Heuristic size of the untracked tail cut off at isolation.
    pub bias_bound: Vec<f64>,
}

impl DeltaMatrix {
    pub fn m(&self) -> usize {
        self.m
    }

    /// δ(0, i).
    pub fn root_distance(&self, i: usize) -> f64 {
        self.root[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.m + j]
    }

    /// Largest violation of the four-point condition over all quadruples of
    /// points (root included), or over `limit` pseudo-random ones when the
    /// exhaustive count is larger.
    pub fn four_point_violation(&self, limit: usize) -> f64 {
        let n = self.m + 1;
        let dist = |a: usize, b: usize| -> f64 {
            match (a, b) {
                (0, 0) => 0.0,
                (0, x) | (x, 0) => self.root[x - 1],
                (x, y) => self.get(x - 1, y - 1),
            }
        };
        let check = |q: [usize; 4]| -> f64 {
            let [i, j, k, l] = q;
            let s = [dist(i, j) + dist(k, l), dist(i, k) + dist(j, l), dist(i, l) + dist(j, k)];
            let mut worst: f64 = 0.0;
            for a in 0..3 {
                let others = [s[(a + 1) % 3], s[(a + 2) % 3]];
                worst = worst.max(s[a] - others[0].max(others[1]));
            }
            worst
        };
        let mut worst: f64 = 0.0;
        if (n as f64).powi(4) / 24.0 <= limit as f64 {
            for i in 0..n {
                for j in i + 1..n {
                    for k in j + 1..n {
                        for l in k + 1..n {
                            worst = worst.max(check([i, j, k, l]));
                        }
                    }
                }
            }
        } else {
            let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
            let mut next = || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % n as u64) as usize
            };
            for _ in 0..limit {
                worst = worst.max(check([next(), next(), next(), next()]));
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub event: usize,
    pub time: f64,
    pub location: Location,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenNode {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Tracked leaves below the node.
    pub size: usize,
    /// Split time for internal nodes, isolation time for leaves.
    pub time: f64,
    pub height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    /// Smallest tracked leaf index below the node.
    pub min_leaf: usize,
}

impl GenNode {
    pub fn is_internal(&self) -> bool {
        self.leaf.is_none()
    }
}

/// Genealogy of the tracked leaves; the root is the first refining cut and
/// sits at height equal to its time (the stem from the origin is implicit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenealogyTree {
    m: usize,
    root: usize,
    nodes: Vec<GenNode>,
    leaf_node: Vec<usize>,
}

impl GenealogyTree {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn nodes(&self) -> &[GenNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &GenNode {
        &self.nodes[id]
    }

    pub fn leaf_node(&self, leaf: usize) -> usize {
        self.leaf_node[leaf]
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_internal()).count()
    }

    pub fn depth(&self, mut x: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes[x].parent {
            x = p;
            d += 1;
        }
        d
    }

    pub fn mrca(&self, a: usize, b: usize) -> usize {
        let (mut a, mut b) = (a, b);
        let (mut da, mut db) = (self.depth(a), self.depth(b));
        while da > db {
            a = self.nodes[a].parent.expect("deeper node has a parent");
            da -= 1;
        }
        while db > da {
            b = self.nodes[b].parent.expect("deeper node has a parent");
            db -= 1;
        }
        while a != b {
            a = self.nodes[a].parent.expect("not the root");
            b = self.nodes[b].parent.expect("not the root");
        }
        a
    }

    /// Internal nodes strictly between two leaves, mrca included.
    pub fn path_internal_nodes(&self, i: usize, j: usize) -> Vec<usize> {
        let (a, b) = (self.leaf_node[i], self.leaf_node[j]);
        let top = self.mrca(a, b);
        let mut out = Vec::new();
        for start in [a, b] {
            let mut x = self.nodes[start].parent;
            while let Some(y) = x {
                if y == top {
                    break;
                }
                out.push(y);
                x = self.nodes[y].parent;
            }
        }
        out.push(top);
        out
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = (self.leaf_node[i], self.leaf_node[j]);
        self.nodes[a].height + self.nodes[b].height - 2.0 * self.nodes[self.mrca(a, b)].height
    }
}

/// Mass estimate of a block of `size` tracked leaves, seen from one of
/// them: the fraction of the other `m - 1` leaves it holds.
pub fn block_weight(size: usize, m: usize) -> f64 {
    if size < 2 {
        0.0
    } else {
        (size - 1) as f64 / (m - 1) as f64
    }
}

fn require_complete(h: &FragHistory) -> Result<(), CutTreeError> {
    if h.is_complete() {
        Ok(())
    } else {
        Err(CutTreeError::IncompleteHistory)
    }
}

pub fn genealogy(h: &FragHistory) -> Result<GenealogyTree, CutTreeError> {
    require_complete(h)?;
    let krt = &h.krt;
    let n = krt.parent.len();
    let m = h.m();
    // nearest refining strict ancestor, filled top-down (parents have larger ids)
    let mut up = vec![NONE; n];
    for x in (0..n).rev() {
        let p = krt.parent[x];
        if p != NONE {
            up[x] = if krt.refining[p] { p } else { up[p] };
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&x| krt.refining[x]).collect();
    order.sort_by(|&a, &b| krt.time[a].total_cmp(&krt.time[b]));
    let mut gid = vec![NONE; n];
    let mut nodes: Vec<GenNode> = Vec::with_capacity(order.len() + m);
    let mut root = NONE;
    for &x in &order {
        let id = nodes.len();
        gid[x] = id;
        let ev = h.events()[krt.event[x]];
        let theta = match ev.location {
            Location::Hub { node, .. } => h.graph().nodes[node].hub.map(|hm| hm.theta),
            Location::Edge { .. } => None,
        };
        let size = krt.tracked[x] as usize;
        let (parent, height) = if up[x] == NONE {
            root = id;
            (None, ev.time * block_weight(size, m))
        } else {
            let p = gid[up[x]];
            let ph = nodes[p].height;
            nodes[p].children.push(id);
            (Some(p), ph + (ev.time - nodes[p].time) * block_weight(size, m))
        };
        nodes.push(GenNode {
            parent,
            children: Vec::new(),
            size,
            time: ev.time,
            height,
            leaf: None,
            provenance: Some(Provenance { event: krt.event[x], time: ev.time, location: ev.location, theta }),
            min_leaf: NONE,
        });
    }
    let mut leaf_node = vec![NONE; m];
    for i in 0..m {
        let p = gid[up[h.leaf_class(i)]];
        let id = nodes.len();
        leaf_node[i] = id;
        let (time, height) = (nodes[p].time, nodes[p].height);
        nodes[p].children.push(id);
        nodes.push(GenNode { parent: Some(p), children: Vec::new(), size: 1, time, height, leaf: Some(i), provenance: None, min_leaf: i });
    }
    // min_leaf bottom-up: internal nodes were created parents first
    for id in (0..nodes.len()).rev() {
        if let Some(p) = nodes[id].parent {
            nodes[p].min_leaf = nodes[p].min_leaf.min(nodes[id].min_leaf);
        }
    }
    Ok(GenealogyTree { m, root, nodes, leaf_node })
}

pub fn delta_matrix(h: &FragHistory) -> Result<DeltaMatrix, CutTreeError> {
    let g = genealogy(h)?;
    Ok(delta_from_genealogy(h, &g))
}

pub fn delta_from_genealogy(h: &FragHistory, g: &GenealogyTree) -> DeltaMatrix {
    let m = g.m();
    let root: Vec<f64> = (0..m).map(|i| g.node(g.leaf_node(i)).height).collect();
    let mut d = vec![0.0; m * m];
    // mrca heights by walking each leaf's ancestors once per row
    let mut mark = vec![NONE; g.nodes().len()];
    for i in 0..m {
        let mut x = Some(g.node(g.leaf_node(i)).parent.expect("leaf has a parent"));
        while let Some(y) = x {
            mark[y] = i;
            x = g.node(y).parent;
        }
        for j in i + 1..m {
            let mut y = g.node(g.leaf_node(j)).parent.expect("leaf has a parent");
            while mark[y] != i {
                y = g.node(y).parent.expect("common ancestor exists");
            }
            let v = root[i] + root[j] - 2.0 * g.node(y).height;
            d[i * m + j] = v;
            d[j * m + i] = v;
        }
    }
    let isolation = (0..m).map(|i| g.node(g.leaf_node(i)).time).collect();
    let bias_bound = (0..m).map(|i| pendant_bias(h, i)).collect();
    DeltaMatrix { m, root, d, isolation, bias_bound }
}

/// `(1/m) / rate` at which the pendant edge of a leaf is cut.
fn pendant_bias(h: &FragHistory, leaf: usize) -> f64 {
    let v = h.index.tracked_node[leaf];
    let mut rate = 0.0;
    for &e in &h.index.incident[v] {
        let edge = &h.graph().edges[e];
        rate += h.beta() * edge.length;
        let other = if edge.lo == v { edge.hi } else { edge.lo };
        if let Some(hub) = h.graph().nodes[other].hub {
            rate += hub.theta;
        }
    }
    if rate > 0.0 {
        1.0 / (h.m() as f64 * rate)
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiRow {
    pub node: usize,
    pub event: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hub: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub k: usize,
    pub degree: usize,
    pub estimate: f64,
}

/// Degree over `Ψ⁻¹(k)` of every internal node that lies on the subtree
/// spanned by the root and the first `k` tracked leaves, for each `k`.
pub fn phi_local_time_check(g: &GenealogyTree, spec: &ThetaSpec, k_schedule: &[usize]) -> Result<Vec<PhiRow>, CutTreeError> {
    let mut rows = Vec::new();
    let mut any_hub = false;
    for &k in k_schedule {
        let scale = spec.psi_inv(k as f64)?;
        for (id, node) in g.nodes().iter().enumerate() {
            let Some(prov) = &node.provenance else { continue };
            let hub = match prov.location {
                Location::Hub { hub, .. } => Some(hub),
                Location::Edge { .. } => None,
            };
            any_hub |= hub.is_some();
            let q = node.children.iter().filter(|&&c| g.node(c).min_leaf < k).count();
            if q == 0 {
                continue;
            }
            let degree = q + 1;
            rows.push(PhiRow { node: id, event: prov.event, hub, theta: prov.theta, k, degree, estimate: degree as f64 / scale });
        }
    }
    if !any_hub {
        return Err(CutTreeError::NoHubCuts);
    }
    Ok(rows)
}

/// Sum over the genealogy edges from the origin to `node` of edge length
/// over the mass carried above the edge.
pub fn tau_integral(g: &GenealogyTree, node: usize) -> Result<f64, CutTreeError> {
    if node >= g.nodes().len() || !g.node(node).is_internal() {
        return Err(CutTreeError::NodeNotInternal(node));
    }
    let mut total = 0.0;
    let mut x = node;
    loop {
        let n = g.node(x);
        let below = n.parent.map_or(0.0, |p| g.node(p).height);
        total += (n.height - below) / block_weight(n.size, g.m());
        match n.parent {
            Some(p) => x = p,
            None => break,
        }
    }
    Ok(total)
}

fn graph_path_edges(h: &FragHistory, i: usize, j: usize) -> Vec<usize> {
    let g = h.graph();
    let idx = &h.index;
    let (mut a, mut b) = (idx.tracked_node[i], idx.tracked_node[j]);
    let mut out = Vec::new();
    let up = |v: usize| -> (usize, usize) {
        let e = idx.root_parent_edge[v];
        let edge = &g.edges[e];
        (e, if edge.lo == v { edge.hi } else { edge.lo })
    };
    while idx.depth[a] > idx.depth[b] {
        let (e, p) = up(a);
        out.push(e);
        a = p;
    }
    while idx.depth[b] > idx.depth[a] {
        let (e, p) = up(b);
        out.push(e);
        b = p;
    }
    while a != b {
        let (e, p) = up(a);
        out.push(e);
        a = p;
        let (e, p) = up(b);
        out.push(e);
        b = p;
    }
    out
}

/// Length of the skeleton path between two tracked leaves.
pub fn tracked_distance(h: &FragHistory, i: usize, j: usize) -> f64 {
    graph_path_edges(h, i, j).iter().map(|&e| h.graph().edges[e].length).sum()
}

/// Number of skeletal cuts on the path between two tracked leaves before
/// time `t`, over `β t`.
pub fn brownian_reconstruct(h: &FragHistory, i: usize, j: usize, t: f64, beta: f64) -> Result<f64, CutTreeError> {
    if !(beta > 0.0) {
        return Err(CutTreeError::ZeroBeta);
    }
    for x in [i, j] {
        if x >= h.m() {
            return Err(CutTreeError::UntrackedLeaf(x));
        }
    }
    if i == j {
        return Err(CutTreeError::SameLeaf);
    }
    let horizon = h.t_end().max(h.horizon().unwrap_or(0.0));
    if t > horizon {
        return Err(CutTreeError::BeyondHorizon { t, horizon });
    }
    let path: std::collections::HashSet<usize> = graph_path_edges(h, i, j).into_iter().collect();
    let count = h
        .events()
        .iter()
        .take_while(|ev| ev.time < t)
        .filter(|ev| matches!(ev.location, Location::Edge { edge, .. } if path.contains(&edge)))
        .count();
    Ok(count as f64 / (beta * t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Block {
    Comp(usize),
    Empty(usize),
}

/// Piecewise-constant block of a point: `(start, block)` with the last piece
/// running forever.
type Timeline = Vec<(f64, Block)>;

/// A point of the skeleton followed through the pruning.
#[derive(Debug, Clone)]
struct Anchor {
    class: usize,
    created: f64,
    detach: f64,
    parent: Option<usize>,
    /// Edge and position for points created by a cut.
    on_edge: Option<(usize, f64)>,
    /// Node through which the point connects to the rest of its block.
    home: usize,
}

/// Resolves routing addresses for the pair of tracked leaves `(i, j)`.
pub struct Router<'a> {
    h: &'a FragHistory,
    anchors: Vec<Anchor>,
    timelines: Vec<Timeline>,
    by_address: HashMap<String, usize>,
    leaf_anchor: Vec<usize>,
    /// Separating event of each resolved pair address.
    pub separations: HashMap<String, CutEvent>,
}

impl<'a> Router<'a> {
    pub fn new(h: &'a FragHistory, i: usize, j: usize) -> Result<Self, CutTreeError> {
        require_complete(h)?;
        for x in [i, j] {
            if x >= h.m() {
                return Err(CutTreeError::UntrackedLeaf(x));
            }
        }
        if i == j {
            return Err(CutTreeError::SameLeaf);
        }
        let mut r = Router {
            h,
            anchors: Vec::new(),
            timelines: Vec::new(),
            by_address: HashMap::new(),
            leaf_anchor: vec![NONE; h.m()],
            separations: HashMap::new(),
        };
        let a = r.leaf(i);
        let b = r.leaf(j);
        r.by_address.insert("0".into(), a);
        r.by_address.insert("1".into(), b);
        Ok(r)
    }

    fn leaf(&mut self, k: usize) -> usize {
        if self.leaf_anchor[k] == NONE {
            let v = self.h.index.tracked_node[k];
            let anchor = Anchor { class: self.h.leaf_class(k), created: 0.0, detach: f64::INFINITY, parent: None, on_edge: None, home: v };
            self.leaf_anchor[k] = self.push(anchor);
        }
        self.leaf_anchor[k]
    }

    fn push(&mut self, a: Anchor) -> usize {
        let id = self.anchors.len();
        let mut tl: Timeline = match a.parent {
            Some(p) => clip(&self.timelines[p], a.created),
            None => Vec::new(),
        };
        let end = a.detach.max(a.created);
        if a.detach > a.created {
            self.chain(a.class, a.created, a.detach, &mut tl);
        }
        if end.is_finite() {
            tl.push((end, Block::Empty(id)));
        }
        self.anchors.push(a);
        self.timelines.push(tl);
        id
    }

    /// Components of a class over `[from, to)`.
    fn chain(&self, class: usize, from: f64, to: f64, out: &mut Timeline) {
        let krt = &self.h.krt;
        let mut ancestors = vec![class];
        let mut x = class;
        while krt.parent[x] != NONE {
            x = krt.parent[x];
            ancestors.push(x);
        }
        // component is ancestors[q] on [time(ancestors[q+1]), time(ancestors[q]))
        let mut start: f64 = 0.0;
        for q in (0..ancestors.len()).rev() {
            let stop = krt.time[ancestors[q]];
            let (lo, hi) = (start.max(from), stop.min(to));
            if lo < hi {
                out.push((lo, Block::Comp(ancestors[q])));
            }
            start = stop;
        }
    }

    fn mass(&self, b: Block) -> f64 {
        match b {
            Block::Comp(x) => block_weight(self.h.krt.tracked[x] as usize, self.h.m()),
            _ => 0.0,
        }
    }

    fn integral_from(&self, tl: &Timeline, tau: f64) -> f64 {
        let mut total = 0.0;
        for (n, &(start, b)) in tl.iter().enumerate() {
            let end = tl.get(n + 1).map_or(f64::INFINITY, |x| x.0);
            let len = end - start.max(tau);
            if len > 0.0 {
                let w = self.mass(b);
                if w > 0.0 {
                    total += w * len;
                }
            }
        }
        total
    }

    /// Anchor of address `u`.
    fn resolve(&mut self, u: &str) -> Result<usize, CutTreeError> {
        if let Some(&a) = self.by_address.get(u) {
            return Ok(a);
        }
        let unresolved = || CutTreeError::UnresolvedAddress(u.to_string());
        if u.len() < 2 || !u.bytes().all(|c| c == b'0' || c == b'1') {
            return Err(unresolved());
        }
        let (head, last) = u.split_at(u.len() - 1);
        let id = if last == "0" {
            self.resolve(head)?
        } else {
            let w = &head[..head.len() - 1];
            let toward = self.resolve(head)?;
            let ev = self.separation(w).ok_or_else(unresolved)?;
            self.trace(ev, toward).ok_or_else(unresolved)?
        };
        self.by_address.insert(u.to_string(), id);
        Ok(id)
    }

    /// Event separating the pair at address `w`.
    fn separation(&mut self, w: &str) -> Option<CutEvent> {
        if let Some(ev) = self.separations.get(w) {
            return Some(*ev);
        }
        let a = self.resolve(&format!("{w}0")).ok()?;
        let b = self.resolve(&format!("{w}1")).ok()?;
        let tau = first_difference(&self.timelines[a], &self.timelines[b])?;
        if tau <= self.anchors[a].created || tau <= self.anchors[b].created {
            return None;
        }
        let events = self.h.events();
        let pos = events.binary_search_by(|e| e.time.total_cmp(&tau)).ok()?;
        self.separations.insert(w.to_string(), events[pos]);
        Some(events[pos])
    }

    /// New point at the location of `ev`, on the side of anchor `toward`.
    fn trace(&mut self, ev: CutEvent, toward: usize) -> Option<usize> {
        let h = self.h;
        let idx = &h.index;
        let target = self.anchors[toward].clone();
        let anchor = match ev.location {
            Location::Edge { edge, pos } => {
                let e = &h.graph().edges[edge];
                let lo_side = match target.on_edge {
                    Some((f, p)) if f == edge => {
                        if p == pos {
                            return None;
                        }
                        p < pos
                    }
                    _ => {
                        let child_is_lo = idx.root_parent_edge[e.lo] == edge;
                        let child = if child_is_lo { e.lo } else { e.hi };
                        idx.in_subtree(child, target.home) == child_is_lo
                    }
                };
                let (node, elem) = if lo_side { (e.lo, idx.edge_elems[edge].0) } else { (e.hi, idx.edge_elems[edge].1) };
                let detach = idx.edge_cuts[edge]
                    .iter()
                    .filter(|&&(p, _)| if lo_side { p < pos } else { p > pos })
                    .map(|&(_, t)| t)
                    .fold(f64::INFINITY, f64::min);
                Anchor { class: h.krt.class_of[elem], created: ev.time, detach, parent: Some(toward), on_edge: Some((edge, pos)), home: node }
            }
            Location::Hub { node: v, .. } => {
                let incident = &idx.incident[v];
                let f = match target.on_edge {
                    Some((f, _)) if incident.contains(&f) => f,
                    _ => {
                        if target.home == v {
                            return None;
                        }
                        if idx.in_subtree(v, target.home) {
                            *incident.iter().find(|&&f| {
                                let e = &h.graph().edges[f];
                                let u = if e.lo == v { e.hi } else { e.lo };
                                idx.root_parent_edge[u] == f && idx.in_subtree(u, target.home)
                            })?
                        } else {
                            idx.root_parent_edge[v]
                        }
                    }
                };
                let e = &h.graph().edges[f];
                let (far, pos) = if e.lo == v { (e.hi, 0.0) } else { (e.lo, e.length) };
                let port = h.index.ports[v][incident.iter().position(|&x| x == f)?];
                Anchor { class: h.krt.class_of[port], created: ev.time, detach: f64::INFINITY, parent: Some(toward), on_edge: Some((f, pos)), home: far }
            }
        };
        Some(self.push(anchor))
    }

    /// `δ_u(k)` for each `k` in `kset`.
    pub fn delta(&mut self, u: &str, kset: &[usize]) -> Result<Vec<f64>, CutTreeError> {
        let y = self.resolve(u)?;
        let mut out = Vec::with_capacity(kset.len());
        for &k in kset {
            if k >= self.h.m() {
                return Err(CutTreeError::UntrackedLeaf(k));
            }
            let v = self.leaf(k);
            let value = match first_difference(&self.timelines[y], &self.timelines[v]) {
                None => 0.0,
                Some(tau) => self.integral_from(&self.timelines[y], tau) + self.integral_from(&self.timelines[v], tau),
            };
            out.push(value);
        }
        Ok(out)
    }

    /// Addresses of resolved pairs up to the given depth, breadth first,
    /// with their separating events.
    pub fn explore(&mut self, depth: usize) -> Vec<(String, CutEvent)> {
        let mut out = Vec::new();
        let mut level = vec![String::new()];
        for _ in 0..depth {
            let mut next = Vec::new();
            for w in level {
                if let Some(ev) = self.separation(&w) {
                    out.push((w.clone(), ev));
                    next.push(format!("{w}0"));
                    next.push(format!("{w}1"));
                }
            }
            level = next;
        }
        out
    }
}

fn clip(tl: &Timeline, until: f64) -> Timeline {
    tl.iter().copied().filter(|&(s, _)| s < until).collect()
}

fn first_difference(a: &Timeline, b: &Timeline) -> Option<f64> {
    let (mut i, mut j) = (0, 0);
    let mut t = 0.0;
    loop {
        if a[i].1 != b[j].1 {
            return Some(t);
        }
        let na = a.get(i + 1).map_or(f64::INFINITY, |x| x.0);
        let nb = b.get(j + 1).map_or(f64::INFINITY, |x| x.0);
        t = na.min(nb);
        if t.is_infinite() {
            return None;
        }
        if na == t {
            i += 1;
        }
        if nb == t {
            j += 1;
        }
    }
}

/// `δ_u(k)` for the routing between tracked leaves `i` and `j`.
pub fn routing_delta(h: &FragHistory, i: usize, j: usize, u: &str, kset: &[usize]) -> Result<Vec<f64>, CutTreeError> {
    Router::new(h, i, j)?.delta(u, kset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frag::{simulate, simulate_with, FragOptions};
    use crate::icrt::{build_line_breaking_with, Joint, SkeletonTree};
    use crate::seed;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn mixed() -> ThetaSpec {
        ThetaSpec::validate(0.5, vec![0.6, 0.5, 0.4, 0.3, 0.2], true).unwrap()
    }

    fn history(spec: &ThetaSpec, k: usize, m: usize, s: u64) -> FragHistory {
        let mut rng = seed::rng(s);
        let sk = build_line_breaking_with(spec, k, &mut rng).unwrap();
        simulate_with(&sk, spec, m, FragOptions::default(), &mut rng).unwrap()
    }

    /// δ(0, i) and δ(i, j) by stepping through the event times.
    fn brute_delta(h: &FragHistory, i: usize, j: Option<usize>) -> f64 {
        let mut times = vec![0.0];
        times.extend(h.events().iter().map(|e| e.time).filter(|&t| t <= h.t_end()));
        let together = |t: f64| j.map_or(true, |j| h.partition_at(t).iter().any(|b| b.contains(&i) && b.contains(&j)));
        let mut total = 0.0;
        for w in times.windows(2) {
            if together(w[0]) && j.is_some() {
                continue;
            }
            for x in std::iter::once(i).chain(j) {
                let size = (h.block_mass(x, w[0]).unwrap() * h.m() as f64).round();
                total += (size - 1.0) / (h.m() as f64 - 1.0) * (w[1] - w[0]);
            }
        }
        total
    }

    #[test]
    fn two_leaves_give_a_cherry() {
        let sk = SkeletonTree::from_parts(vec![2.0], vec![Joint::Uniform(1.0)], vec![], 0).unwrap();
        let h = simulate(&sk, &ThetaSpec::brownian(), 2, 3).unwrap();
        let g = genealogy(&h).unwrap();
        assert_eq!(g.internal_count(), 1);
        let root = g.node(g.root());
        assert_eq!(root.children.len(), 2);
        assert!(root.children.iter().all(|&c| g.node(c).leaf.is_some()));
        let d = delta_matrix(&h).unwrap();
        assert!((d.root_distance(0) - h.t_end()).abs() < 1e-12);
        assert!((d.get(0, 1) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn delta_matches_brute_force_integration() {
        for s in 0..8 {
            let h = history(&mixed(), 60, 15, s);
            let d = delta_matrix(&h).unwrap();
            for i in 0..15 {
                assert!((d.root_distance(i) - brute_delta(&h, i, None)).abs() < 1e-9);
                assert_eq!(d.get(i, i), 0.0);
                for j in 0..15 {
                    assert_eq!(d.get(i, j), d.get(j, i));
                    if i != j {
                        assert!((d.get(i, j) - brute_delta(&h, i, Some(j))).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn internal_nodes_are_refining_events() {
        let h = history(&mixed(), 100, 40, 9);
        let g = genealogy(&h).unwrap();
        assert_eq!(g.internal_count(), h.events().iter().filter(|e| e.refining).count());
        for node in g.nodes() {
            if let Some(p) = node.parent {
                assert!(g.node(p).height <= node.height);
                assert!(g.node(p).time < node.time || node.leaf.is_some());
            }
        }
    }

    #[test]
    fn incomplete_history_is_rejected() {
        // a pure-hub spec leaves leaves on a hub-free segment together forever
        let sk = SkeletonTree::from_parts(vec![2.0], vec![Joint::Uniform(1.0)], vec![], 1).unwrap();
        let spec = ThetaSpec::validate(0.0, vec![0.5], true).unwrap();
        assert!(simulate(&sk, &spec, 2, 1).is_err());
        let spec = ThetaSpec::validate(0.0, vec![0.5], true).unwrap();
        // leaves 1 and 2 meet at 0.5 on segment 0, away from the hub at 0.25
        let sk = SkeletonTree::from_parts(
            vec![1.0, 2.0],
            vec![Joint::Uniform(0.5), Joint::Uniform(0.5)],
            vec![crate::icrt::HubSeed { id: 0, theta: 0.5, first_point: 0.25 }],
            1,
        )
        .unwrap();
        let h = simulate(&sk, &spec, 3, 3).unwrap();
        assert!(!h.is_complete());
        assert_eq!(delta_matrix(&h).unwrap_err(), CutTreeError::IncompleteHistory);
        assert_eq!(genealogy(&h).unwrap_err(), CutTreeError::IncompleteHistory);
    }

    #[test]
    fn phi_rows() {
        let h = history(&mixed(), 200, 80, 4);
        let g = genealogy(&h).unwrap();
        let rows = phi_local_time_check(&g, &mixed(), &[20, 80]).unwrap();
        for row in &rows {
            if row.hub.is_none() {
                assert!(row.degree <= 3);
            }
            assert!((row.estimate - row.degree as f64 / mixed().psi_inv(row.k as f64).unwrap()).abs() < 1e-12);
        }
        let hb = history(&ThetaSpec::brownian(), 50, 20, 4);
        let gb = genealogy(&hb).unwrap();
        assert_eq!(phi_local_time_check(&gb, &ThetaSpec::brownian(), &[10]).unwrap_err(), CutTreeError::NoHubCuts);
    }

    #[test]
    fn tau_recovers_cut_times() {
        let h = history(&mixed(), 300, 120, 5);
        let g = genealogy(&h).unwrap();
        for (id, node) in g.nodes().iter().enumerate() {
            match node.provenance {
                Some(ref p) => {
                    let tau = tau_integral(&g, id).unwrap();
                    assert!((tau - p.time).abs() <= 1e-9 * p.time.max(1.0));
                    if let Some(parent) = node.parent {
                        assert!(tau_integral(&g, parent).unwrap() <= tau);
                    }
                }
                None => assert_eq!(tau_integral(&g, id), Err(CutTreeError::NodeNotInternal(id))),
            }
        }
    }

    #[test]
    fn brownian_counts() {
        let spec = ThetaSpec::brownian();
        let mut rng = seed::rng(12);
        let sk = build_line_breaking_with(&spec, 50, &mut rng).unwrap();
        let h = simulate_with(&sk, &spec, 5, FragOptions { horizon: Some(50.0) }, &mut rng).unwrap();
        assert_eq!(brownian_reconstruct(&h, 0, 1, 10.0, 0.0), Err(CutTreeError::ZeroBeta));
        assert_eq!(brownian_reconstruct(&h, 1, 1, 10.0, 1.0), Err(CutTreeError::SameLeaf));
        assert!(matches!(brownian_reconstruct(&h, 0, 1, 60.0, 1.0), Err(CutTreeError::BeyondHorizon { .. })));
        let first = h.splits()[0].time;
        assert_eq!(brownian_reconstruct(&h, 0, 1, first * 0.5, 1.0).unwrap(), 0.0);
        let est = brownian_reconstruct(&h, 0, 1, 50.0, 1.0).unwrap();
        assert!(est * 50.0 <= h.events().len() as f64);
        let d = tracked_distance(&h, 0, 1);
        let leaves = h.tracked_leaves();
        let want = sk.distance(sk.leaf_point(leaves[0]), sk.leaf_point(leaves[1]));
        assert!((d - want).abs() < 1e-9);
    }

    #[test]
    fn figure_free_routing_basics() {
        let h = history(&mixed(), 100, 30, 77);
        let d = delta_matrix(&h).unwrap();
        let mut r = Router::new(&h, 2, 7).unwrap();
        let all: Vec<usize> = (0..30).collect();
        let d0 = r.delta("0", &all).unwrap();
        let d1 = r.delta("1", &all).unwrap();
        for k in 0..30 {
            assert!((d0[k] - d.get(2, k)).abs() < 1e-9);
            assert!((d1[k] - d.get(7, k)).abs() < 1e-9);
        }
        assert!(matches!(r.delta("", &all), Err(CutTreeError::UnresolvedAddress(_))));
        assert!(matches!(r.delta("0x1", &all), Err(CutTreeError::UnresolvedAddress(_))));
        let first = r.explore(1);
        assert_eq!(first.len(), 1);
        let sep = h.splits().into_iter().find(|s| {
            s.children.iter().any(|b| b.contains(&2) && !b.contains(&7))
        });
        assert_eq!(first[0].1.time, sep.unwrap().time);
    }

    fn on_path(h: &FragHistory, i: usize, j: usize, ev: &CutEvent) -> bool {
        let path = graph_path_edges(h, i, j);
        match ev.location {
            Location::Edge { edge, .. } => path.contains(&edge),
            Location::Hub { node, .. } => {
                path.iter().any(|&e| h.graph().edges[e].lo == node || h.graph().edges[e].hi == node)
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn delta_is_a_tree_metric(s in any::<u64>(), m in 2usize..30) {
            let h = history(&mixed(), 60, m, s);
            let g = genealogy(&h).unwrap();
            let d = delta_from_genealogy(&h, &g);
            prop_assert!(d.four_point_violation(1_000_000) <= 1e-9);
            for i in 0..m {
                prop_assert!((d.root_distance(i) - g.node(g.leaf_node(i)).height).abs() <= 1e-9);
                for j in 0..m {
                    prop_assert!((d.get(i, j) - g.distance(i, j)).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn routing_integrals_are_consistent(s in any::<u64>(), m in 3usize..25) {
            let h = history(&mixed(), 80, m, s);
            let d = delta_matrix(&h).unwrap();
            let mut r = Router::new(&h, 0, m - 1).unwrap();
            let seps = r.explore(4);
            prop_assert!(!seps.is_empty());
            let all: Vec<usize> = (0..m).collect();
            for (w, ev) in &seps {
                prop_assert!(on_path(&h, 0, m - 1, ev), "cut at {w:?} is off the path");
                for q in ["0", "1"] {
                    let u = format!("{w}{q}1");
                    let Ok(du) = r.delta(&u, &all) else { continue };
                    for a in 0..m {
                        prop_assert!(du[a].is_finite() && du[a] >= 0.0);
                        for b in 0..m {
                            let tol = 1e-9;
                            prop_assert!((du[a] - du[b]).abs() <= d.get(a, b) + tol);
                            prop_assert!(d.get(a, b) <= du[a] + du[b] + tol);
                        }
                    }
                }
            }
            let first = &seps[0].1;
            prop_assert_eq!(first.time, h.events().iter().find(|e| on_path(&h, 0, m - 1, e)).unwrap().time);
        }
    }
}
