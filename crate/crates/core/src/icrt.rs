//! Line-breaking construction of the skeletons `R_k`, hub bookkeeping,
//! local-time estimates and hub-counting distance approximation.
//!
//! `R_k` is made of the segments `[η_j, η_{j+1}]`, `j = 0..k` with
//! `η_0 = 0`. Segment 0 hangs from the root; segment `j ≥ 1` is glued by its
//! start to the jointpoint `η*_j`. Points are addressed as
//! `(segment, offset)`, where offset 0 is the glued end.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{ParamsError, ThetaSpec};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IcrtError {
    #[error("k must be at least 1")]
    KZero,
    #[error("beta = 0 with no hubs gives no cutpoints")]
    EmptyIntensity,
    #[error("hub {0} is not a retained theta index")]
    UnknownHub(usize),
    #[error("hub {0} is not yet part of the skeleton")]
    AbsentHub(usize),
    #[error("skeleton has {0} leaves, need at least 2 distinct ones")]
    TooFewLeaves(usize),
    #[error("gamma_theta(eps) = 0; use the Brownian count instead")]
    GammaZero,
    #[error("malformed skeleton: {0}")]
    Malformed(String),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub segment: usize,
    pub offset: f64,
}

/// Jointpoint rule of a cutpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Joint {
    /// Cutpoint `U_j`, glued at `W_j` (a line coordinate).
    Uniform(f64),
    /// Cutpoint `ξ_{i,j}`, `j ≥ 2`, glued at the hub `B_i` (theta index).
    Hub(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hub {
    /// Index into the retained theta.
    pub id: usize,
    pub theta: f64,
    /// `ξ_{i,1}`, the line coordinate of `B_i`.
    pub first_point: f64,
    pub point: Point,
    /// Number of segments of `R_k` glued at `B_i`.
    pub glued: u32,
}

/// Degree of a hub in `R_k`; `Absent` plays the role of `-∞`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum HubDegree {
    Absent,
    Degree(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SkeletonJson", try_from = "SkeletonJson")]
pub struct SkeletonTree {
    cutpoints: Vec<f64>,
    joints: Vec<Joint>,
    n_theta: usize,
    hubs: Vec<Hub>,
    hub_index: HashMap<usize, usize>,
    /// Attach point of each segment (`None` for segment 0).
    attach: Vec<Option<Point>>,
    depth: Vec<u32>,
    /// Hubs lying on each segment as `(offset, position in hubs)`, sorted.
    hubs_on_segment: Vec<Vec<(f64, usize)>>,
}

/// Hub data as produced by the construction, before placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HubSeed {
    pub id: usize,
    pub theta: f64,
    pub first_point: f64,
}

#[derive(Clone, Copy)]
struct Arrival {
    time: f64,
    source: Source,
}

#[derive(Clone, Copy)]
enum Source {
    Brownian,
    HubFirst(usize),
    HubLater(usize),
}

impl PartialEq for Arrival {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Arrival {}
impl PartialOrd for Arrival {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Arrival {
    // reversed so that BinaryHeap pops the earliest arrival
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time)
    }
}

/// Builds `R_k` from the first `k` cutpoints.
///
/// The points `U_j` of the octant process have `U_j² β / 2` equal to the
/// arrival times of a unit Poisson process, with `W_j` uniform on
/// `[0, U_j]`. Hub `i` contributes its arrivals `ξ_{i,j}`, `j ≥ 2`, glued at
/// `ξ_{i,1}`. Builds for different `k` with the same seed are nested.
pub fn build_line_breaking(spec: &ThetaSpec, k: usize, seed: u64) -> Result<SkeletonTree, IcrtError> {
    build_line_breaking_with(spec, k, &mut seed::rng(seed))
}

pub fn build_line_breaking_with<R: Rng + ?Sized>(
    spec: &ThetaSpec,
    k: usize,
    rng: &mut R,
) -> Result<SkeletonTree, IcrtError> {
    if k == 0 {
        return Err(IcrtError::KZero);
    }
    let beta = spec.beta();
    let theta = spec.theta();
    if beta == 0.0 && theta.is_empty() {
        return Err(IcrtError::EmptyIntensity);
    }
    let mut heap: Vec<Arrival> = Vec::with_capacity(theta.len() + 1);
    let mut gamma = 0.0;
    if beta > 0.0 {
        gamma += <Exp1 as Distribution<f64>>::sample(&Exp1, rng);
        heap.push(Arrival { time: (2.0 * gamma / beta).sqrt(), source: Source::Brownian });
    }
    for (i, &th) in theta.iter().enumerate() {
        let t: f64 = Exp1.sample(rng);
        heap.push(Arrival { time: t / th, source: Source::HubFirst(i) });
    }
    let mut heap = BinaryHeap::from(heap);
    let mut cutpoints = Vec::with_capacity(k);
    let mut joints = Vec::with_capacity(k);
    let mut first_points: Vec<HubSeed> = Vec::new();
    while cutpoints.len() < k {
        let arrival = heap.pop().expect("an infinite source is always queued");
        match arrival.source {
            Source::Brownian => {
                let w = arrival.time * rng.random::<f64>();
                cutpoints.push(arrival.time);
                joints.push(Joint::Uniform(w));
                gamma += <Exp1 as Distribution<f64>>::sample(&Exp1, rng);
                heap.push(Arrival { time: (2.0 * gamma / beta).sqrt(), source: Source::Brownian });
            }
            Source::HubFirst(i) | Source::HubLater(i) => {
                if matches!(arrival.source, Source::HubFirst(_)) {
                    first_points.push(HubSeed { id: i, theta: theta[i], first_point: arrival.time });
                } else {
                    cutpoints.push(arrival.time);
                    joints.push(Joint::Hub(i));
                }
                let gap: f64 = Exp::new(theta[i]).expect("positive theta").sample(rng);
                heap.push(Arrival { time: arrival.time + gap, source: Source::HubLater(i) });
            }
        }
    }
    SkeletonTree::from_parts(cutpoints, joints, first_points, theta.len())
}

impl SkeletonTree {
    /// Assembles and validates a skeleton from its cutpoints, their joint
    /// rules and the first points of the hubs.
    pub fn from_parts(
        cutpoints: Vec<f64>,
        joints: Vec<Joint>,
        mut hub_seeds: Vec<HubSeed>,
        n_theta: usize,
    ) -> Result<Self, IcrtError> {
        let k = cutpoints.len();
        if k == 0 {
            return Err(IcrtError::KZero);
        }
        if joints.len() != k {
            return Err(IcrtError::Malformed(format!("{} joints for {} cutpoints", joints.len(), k)));
        }
        let mut prev = 0.0;
        for &c in &cutpoints {
            if !(c > prev) || !c.is_finite() {
                return Err(IcrtError::Malformed("cutpoints must be positive and increasing".into()));
            }
            prev = c;
        }
        let eta_k = cutpoints[k - 1];
        hub_seeds.retain(|h| h.first_point < eta_k);
        hub_seeds.sort_by_key(|h| h.id);
        let locate = |x: f64| -> Point {
            let s = cutpoints.partition_point(|&c| c <= x);
            let start = if s == 0 { 0.0 } else { cutpoints[s - 1] };
            Point { segment: s, offset: x - start }
        };
        let mut hubs = Vec::with_capacity(hub_seeds.len());
        let mut hub_index = HashMap::with_capacity(hub_seeds.len());
        let mut hubs_on_segment = vec![Vec::new(); k];
        for h in hub_seeds {
            if h.id >= n_theta {
                return Err(IcrtError::UnknownHub(h.id));
            }
            if !(h.first_point > 0.0) {
                return Err(IcrtError::Malformed(format!("hub {} has a nonpositive first point", h.id)));
            }
            if hub_index.insert(h.id, hubs.len()).is_some() {
                return Err(IcrtError::Malformed(format!("hub {} listed twice", h.id)));
            }
            let point = locate(h.first_point);
            hubs_on_segment[point.segment].push((point.offset, hubs.len()));
            hubs.push(Hub { id: h.id, theta: h.theta, first_point: h.first_point, point, glued: 0 });
        }
        for list in hubs_on_segment.iter_mut() {
            list.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let mut attach = vec![None; k];
        let mut depth = vec![0u32; k];
        for j in 1..k {
            let point = match joints[j - 1] {
                Joint::Uniform(w) => {
                    if !(w >= 0.0 && w < cutpoints[j - 1]) {
                        return Err(IcrtError::Malformed(format!("jointpoint of cutpoint {j} is not before it")));
                    }
                    locate(w)
                }
                Joint::Hub(i) => {
                    let &pos = hub_index.get(&i).ok_or(IcrtError::UnknownHub(i))?;
                    if !(hubs[pos].first_point < cutpoints[j - 1]) {
                        return Err(IcrtError::Malformed(format!("hub {i} glued before its first point")));
                    }
                    hubs[pos].glued += 1;
                    hubs[pos].point
                }
            };
            depth[j] = depth[point.segment] + 1;
            attach[j] = Some(point);
        }
        if let Joint::Uniform(w) = joints[k - 1] {
            if !(w >= 0.0 && w < eta_k) {
                return Err(IcrtError::Malformed("last jointpoint is not before its cutpoint".into()));
            }
        }
        Ok(SkeletonTree { cutpoints, joints, n_theta, hubs, hub_index, attach, depth, hubs_on_segment })
    }

    pub fn k(&self) -> usize {
        self.cutpoints.len()
    }

    /// `η_1 < … < η_k`.
    pub fn cutpoints(&self) -> &[f64] {
        &self.cutpoints
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    /// `η_j` with `η_0 = 0`.
    pub fn eta(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.cutpoints[j - 1]
        }
    }

    /// Line coordinate of the jointpoint `η*_j`, `j = 1..=k`.
    pub fn jointpoint(&self, j: usize) -> f64 {
        match self.joints[j - 1] {
            Joint::Uniform(w) => w,
            Joint::Hub(i) => self.hubs[self.hub_index[&i]].first_point,
        }
    }

    pub fn segment_count(&self) -> usize {
        self.cutpoints.len()
    }

    pub fn segment_length(&self, s: usize) -> f64 {
        self.eta(s + 1) - self.eta(s)
    }

    pub fn segment_attach(&self, s: usize) -> Option<Point> {
        self.attach[s]
    }

    pub fn total_length(&self) -> f64 {
        self.cutpoints[self.k() - 1]
    }

    /// Hubs present in `R_k`, ordered by theta index.
    pub fn hubs(&self) -> &[Hub] {
        &self.hubs
    }

    pub fn hub(&self, id: usize) -> Option<&Hub> {
        self.hub_index.get(&id).map(|&p| &self.hubs[p])
    }

    /// Hubs on segment `s` as `(offset, hub)`, by increasing offset.
    pub fn hubs_on_segment(&self, s: usize) -> impl Iterator<Item = (f64, &Hub)> {
        self.hubs_on_segment[s].iter().map(move |&(o, p)| (o, &self.hubs[p]))
    }

    pub fn leaf_count(&self) -> usize {
        self.k() + 1
    }

    /// Leaf 0 is the root; leaf `ℓ ≥ 1` is the far end of segment `ℓ - 1`.
    pub fn leaf_point(&self, leaf: usize) -> Point {
        if leaf == 0 {
            Point { segment: 0, offset: 0.0 }
        } else {
            Point { segment: leaf - 1, offset: self.segment_length(leaf - 1) }
        }
    }

    /// Pieces `(segment, lo, hi)` whose union is the path between `a` and `b`.
    pub fn path_pieces(&self, a: Point, b: Point) -> Vec<(usize, f64, f64)> {
        let mut pieces = Vec::new();
        let (mut x, mut y) = (a, b);
        while x.segment != y.segment {
            let climb_x = self.depth[x.segment] >= self.depth[y.segment];
            let p = if climb_x { &mut x } else { &mut y };
            pieces.push((p.segment, 0.0, p.offset));
            *p = self.attach[p.segment].expect("segments above 0 are attached");
        }
        pieces.push((x.segment, x.offset.min(y.offset), x.offset.max(y.offset)));
        pieces
    }

    pub fn distance(&self, a: Point, b: Point) -> f64 {
        self.path_pieces(a, b).iter().map(|&(_, lo, hi)| hi - lo).sum()
    }

    /// Hubs on the path between `a` and `b` (endpoints included, which for
    /// leaves makes no difference).
    pub fn hubs_on_path(&self, a: Point, b: Point) -> Vec<&Hub> {
        let mut out = Vec::new();
        for (s, lo, hi) in self.path_pieces(a, b) {
            let list = &self.hubs_on_segment[s];
            let start = list.partition_point(|&(o, _)| o < lo);
            for &(o, p) in &list[start..] {
                if o > hi {
                    break;
                }
                out.push(&self.hubs[p]);
            }
        }
        out.sort_by_key(|h| h.id);
        out.dedup_by_key(|h| h.id);
        out
    }

    pub fn hub_degree(&self, id: usize) -> Result<HubDegree, IcrtError> {
        if id >= self.n_theta {
            return Err(IcrtError::UnknownHub(id));
        }
        Ok(match self.hub(id) {
            None => HubDegree::Absent,
            Some(h) => HubDegree::Degree(2 + h.glued),
        })
    }
}

/// `deg(B_i, R_k) / Ψ⁻¹(k)`.
pub fn local_time_estimate(sk: &SkeletonTree, spec: &ThetaSpec, id: usize) -> Result<f64, IcrtError> {
    match sk.hub_degree(id)? {
        HubDegree::Absent => Err(IcrtError::AbsentHub(id)),
        HubDegree::Degree(d) => Ok(d as f64 / spec.psi_inv(sk.k() as f64)?),
    }
}

/// `η_{k-1} / Ψ⁻¹(k)`.
pub fn eta_ratio(sk: &SkeletonTree, spec: &ThetaSpec) -> Result<f64, IcrtError> {
    if sk.k() < 2 {
        return Err(IcrtError::TooFewLeaves(sk.leaf_count()));
    }
    Ok(sk.eta(sk.k() - 1) / spec.psi_inv(sk.k() as f64)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafPair {
    pub leaves: (usize, usize),
    pub points: (Point, Point),
    pub distance: f64,
    /// `(hub id, theta)` for each hub on the path.
    pub hubs: Vec<(usize, f64)>,
}

pub fn sample_leaf_pair(sk: &SkeletonTree, seed: u64) -> Result<LeafPair, IcrtError> {
    sample_leaf_pair_with(sk, &mut seed::rng(seed))
}

/// Two distinct uniform leaves of `R_k` with their distance and path hubs.
pub fn sample_leaf_pair_with<R: Rng + ?Sized>(sk: &SkeletonTree, rng: &mut R) -> Result<LeafPair, IcrtError> {
    let n = sk.leaf_count();
    if n < 3 {
        return Err(IcrtError::TooFewLeaves(n));
    }
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    Ok(leaf_pair(sk, a, b))
}

pub fn leaf_pair(sk: &SkeletonTree, a: usize, b: usize) -> LeafPair {
    let (pa, pb) = (sk.leaf_point(a), sk.leaf_point(b));
    LeafPair {
        leaves: (a, b),
        points: (pa, pb),
        distance: sk.distance(pa, pb),
        hubs: sk.hubs_on_path(pa, pb).into_iter().map(|h| (h.id, h.theta)).collect(),
    }
}

/// `#{path hubs with θ > ε} / γ_θ(ε)`.
pub fn approx_distance(hubs_on_path: &[(usize, f64)], spec: &ThetaSpec, eps: f64) -> Result<f64, IcrtError> {
    let gamma = spec.gamma_theta(eps)?;
    if gamma == 0.0 {
        return Err(IcrtError::GammaZero);
    }
    Ok(hubs_on_path.iter().filter(|&&(_, th)| th > eps).count() as f64 / gamma)
}

#[derive(Serialize, Deserialize)]
struct SkeletonJson {
    cutpoints: Vec<f64>,
    joints: Vec<Joint>,
    n_theta: usize,
    hubs: Vec<HubJson>,
    #[serde(default, skip_deserializing)]
    segments: Vec<SegmentJson>,
}

#[derive(Serialize, Deserialize)]
struct HubJson {
    id: usize,
    theta: f64,
    first_point: f64,
}

#[derive(Serialize)]
struct SegmentJson {
    id: usize,
    length: f64,
    attach: Option<Point>,
}

impl From<SkeletonTree> for SkeletonJson {
    fn from(sk: SkeletonTree) -> Self {
        let segments = (0..sk.k())
            .map(|s| SegmentJson { id: s, length: sk.segment_length(s), attach: sk.attach[s] })
            .collect();
        SkeletonJson {
            hubs: sk.hubs.iter().map(|h| HubJson { id: h.id, theta: h.theta, first_point: h.first_point }).collect(),
            cutpoints: sk.cutpoints,
            joints: sk.joints,
            n_theta: sk.n_theta,
            segments,
        }
    }
}

impl TryFrom<SkeletonJson> for SkeletonTree {
    type Error = IcrtError;
    fn try_from(raw: SkeletonJson) -> Result<Self, IcrtError> {
        let seeds = raw.hubs.into_iter().map(|h| HubSeed { id: h.id, theta: h.theta, first_point: h.first_point }).collect();
        SkeletonTree::from_parts(raw.cutpoints, raw.joints, seeds, raw.n_theta)
    }
}
