//! File formats of the command-line tool. Vertex and leaf ids in files are
//! 1-based; the library is 0-based.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use icrt_core::frag::{CutEvent, Location};
use icrt_core::prune::Trace;
use icrt_core::{DiscreteCutTree, RootedLabeledTree, TraceMap, UnrootedTree};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| anyhow!("parse error in {}: {e}", path.display()))
}

pub fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

pub fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceJson {
    pub child: usize,
    pub vertex: usize,
}

/// Output of `prune`, also the input of `rebuild` and `route`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneFile {
    pub order: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut_tree: Option<RootedLabeledTree>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<BTreeMap<usize, Vec<TraceJson>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<BTreeMap<usize, usize>>,
}

pub fn traces_to_json(tr: &TraceMap) -> BTreeMap<usize, Vec<TraceJson>> {
    tr.all()
        .iter()
        .enumerate()
        .filter(|(_, list)| !list.is_empty())
        .map(|(v, list)| (v + 1, list.iter().map(|t| TraceJson { child: t.child + 1, vertex: t.vertex + 1 }).collect()))
        .collect()
}

impl PruneFile {
    pub fn cut_tree_and_traces(&self) -> Result<(DiscreteCutTree, TraceMap)> {
        let tree = self.cut_tree.clone().ok_or_else(|| anyhow!("input has no cut_tree"))?;
        let traces = self.traces.as_ref().ok_or_else(|| anyhow!("input has no traces"))?;
        let n = tree.n();
        let mut all = vec![Vec::new(); n];
        for (&v, list) in traces {
            if v == 0 || v > n {
                bail!("trace owner {v} out of range 1..={n}");
            }
            for t in list {
                if t.child == 0 || t.child > n || t.vertex == 0 || t.vertex > n {
                    bail!("trace of {v} out of range");
                }
                all[v - 1].push(Trace { child: t.child - 1, vertex: t.vertex - 1 });
            }
        }
        Ok((DiscreteCutTree { tree }, TraceMap::new(all)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnrootedJson {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

impl From<&UnrootedTree> for UnrootedJson {
    fn from(u: &UnrootedTree) -> Self {
        UnrootedJson { n: u.n, edges: u.edges.iter().map(|&(a, b)| (a + 1, b + 1)).collect() }
    }
}

/// Edge list with columns `vertex,parent`; the root has an empty parent.
pub fn tree_to_csv(t: &RootedLabeledTree) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["vertex", "parent"])?;
    for v in 0..t.n() {
        let parent = t.parent(v).map(|p| (p + 1).to_string()).unwrap_or_default();
        w.write_record([(v + 1).to_string(), parent])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn tree_from_csv(text: &str) -> Result<RootedLabeledTree> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| anyhow!("parse error: {e}"))?;
        let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let v: usize = field(0).parse().map_err(|_| anyhow!("parse error at line {}: bad vertex", line + 2))?;
        let p = match field(1) {
            "" => None,
            s => Some(s.parse::<usize>().map_err(|_| anyhow!("parse error at line {}: bad parent", line + 2))?),
        };
        rows.push((v, p));
    }
    let n = rows.len();
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    let mut root = None;
    for (v, p) in rows {
        if v == 0 || v > n || seen[v - 1] {
            bail!("vertex {v} is out of range or repeated");
        }
        seen[v - 1] = true;
        match p {
            None if root.is_none() => root = Some(v - 1),
            None => bail!("more than one root"),
            Some(p) if p == 0 || p > n => bail!("parent {p} out of range"),
            Some(p) => parent[v - 1] = Some(p - 1),
        }
    }
    let root = root.ok_or_else(|| anyhow!("no root row"))?;
    Ok(RootedLabeledTree::new(root, parent)?)
}

#[derive(Deserialize)]
struct EventsOnly {
    events: Vec<CutEvent>,
}

/// Event table of a history file. Graph positions are dropped; the skeleton
/// point of each cut is kept.
pub fn history_events_csv(text: &str) -> Result<String> {
    let h: EventsOnly = serde_json::from_str(text).map_err(|e| anyhow!("parse error: {e}"))?;
    let mut w = csv::Writer::from_writer(Vec::with_capacity(h.events.len() * 48));
    w.write_record(["t", "kind", "edge", "pos", "hub", "node", "refining"])?;
    for ev in &h.events {
        let rec = match ev.location {
            Location::Edge { edge, pos } => {
                [ev.time.to_string(), "skeletal".into(), edge.to_string(), pos.to_string(), String::new(), String::new(), ev.refining.to_string()]
            }
            Location::Hub { node, hub } => {
                [ev.time.to_string(), "hub".into(), String::new(), String::new(), (hub + 1).to_string(), node.to_string(), ev.refining.to_string()]
            }
        };
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
