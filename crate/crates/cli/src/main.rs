mod formats;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use icrt_core::cuttree::{self, Router};
use icrt_core::frag::{self, FragHistory, FragOptions};
use icrt_core::icrt::{self, SkeletonTree};
use icrt_core::suites::{self, SuiteConfig, SuiteError};
use icrt_core::{prune, ptree, rebuild, seed, ProbVector, RootedLabeledTree, ThetaSpec};

use formats::{read_json, write_json, write_text, PruneFile, UnrootedJson};

#[derive(Parser)]
#[command(name = "icrt", version, about = "Simulate p-trees, ICRTs, their pruning and cut trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the skeleton R_k by line breaking.
    Build {
        #[arg(long, conflicts_with = "brownian")]
        spec: Option<PathBuf>,
        #[arg(long)]
        brownian: bool,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample or enumerate p-trees.
    Ptree {
        #[command(subcommand)]
        action: PtreeAction,
    },
    /// Prune a tree with exponential clocks and build its cut tree.
    Prune {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        p: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "cut-tree,traces,records")]
        emit: Vec<PruneEmit>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recover the original tree from a cut tree and its traces.
    Rebuild {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Route between two vertices using only the cut tree and traces.
    Route {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        from: usize,
        #[arg(long)]
        to: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prune a skeleton restricted to m tracked leaves.
    Frag {
        #[arg(long)]
        skeleton: PathBuf,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cut-tree analytics of a pruning history.
    Cuttree {
        #[arg(long)]
        hist: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "delta,genealogy")]
        emit: Vec<CutEmit>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        k_schedule: Vec<usize>,
        /// Routing pair (1-based tracked leaves) for `routing`.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        pair: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an acceptance suite; exits 0 iff every claim passes.
    Verify {
        suite: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20_240_917)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Append report lines to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Convert between file formats.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        format: String,
    },
}

#[derive(Subcommand)]
enum PtreeAction {
    Sample {
        #[arg(long, conflicts_with = "n")]
        p: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Enumerate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PruneEmit {
    CutTree,
    Traces,
    Records,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CutEmit {
    Delta,
    Genealogy,
    PhiCheck,
    Routing,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if matches!(e.downcast_ref::<SuiteError>(), Some(SuiteError::UnknownSuite(_))) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn load_p(path: Option<&Path>, n: usize) -> Result<ProbVector> {
    match path {
        Some(p) => {
            let v: ProbVector = read_json(p)?;
            if v.len() != n {
                bail!("p has {} entries but the tree has {n} vertices", v.len());
            }
            Ok(v)
        }
        None => Ok(ProbVector::uniform(n)?),
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Build { spec, brownian, k, seed, out } => {
            let spec = match (spec, brownian) {
                (Some(p), _) => read_json::<ThetaSpec>(&p)?,
                (None, true) => ThetaSpec::brownian(),
                (None, false) => bail!("pass --spec or --brownian"),
            };
            let sk = icrt::build_line_breaking(&spec, k, seed)?;
            write_json(out.as_deref(), &sk)?;
        }
        Command::Ptree { action } => match action {
            PtreeAction::Sample { p, n, seed, out } => {
                let p = match (p, n) {
                    (Some(p), _) => read_json::<ProbVector>(&p)?,
                    (None, Some(n)) => ProbVector::uniform(n)?,
                    (None, None) => bail!("pass --p or --n"),
                };
                write_json(out.as_deref(), &ptree::sample_ptree(&p, seed))?;
            }
            PtreeAction::Enumerate { n, p, out } => {
                let p = p.map(|path| load_p(Some(&path), n)).transpose()?;
                #[derive(Serialize)]
                struct Entry {
                    tree: RootedLabeledTree,
                    #[serde(skip_serializing_if = "Option::is_none")]
                    weight: Option<f64>,
                }
                let entries = ptree::enumerate(n)?
                    .into_iter()
                    .map(|t| {
                        let weight = p.as_ref().map(|p| ptree::weight(&t, p)).transpose()?;
                        Ok(Entry { tree: t, weight })
                    })
                    .collect::<Result<Vec<_>>>()?;
                write_json(out.as_deref(), &entries)?;
            }
        },
        Command::Prune { tree, p, seed, emit, out } => {
            let t: RootedLabeledTree = read_json(&tree)?;
            let p = load_p(p.as_deref(), t.n())?;
            let ord = prune::sample_order(&t, &p, seed)?;
            let (c, tr) = prune::prune(&t, &ord, &p)?;
            let mut file = PruneFile { order: ord.order().iter().map(|v| v + 1).collect(), ..Default::default() };
            if emit.contains(&PruneEmit::CutTree) {
                file.cut_tree = Some(c.tree.clone());
            }
            if emit.contains(&PruneEmit::Traces) {
                file.traces = Some(formats::traces_to_json(&tr));
            }
            if emit.contains(&PruneEmit::Records) {
                file.records = Some(
                    (0..t.n()).map(|v| Ok((v + 1, prune::record_count(&t, &ord, v)?))).collect::<Result<_>>()?,
                );
            }
            write_json(out.as_deref(), &file)?;
        }
        Command::Rebuild { input, out } => {
            let file: PruneFile = read_json(&input)?;
            let (c, tr) = file.cut_tree_and_traces()?;
            let u = rebuild::rebuild(&c, &tr)?;
            write_json(out.as_deref(), &UnrootedJson::from(&u))?;
        }
        Command::Route { input, from, to, out } => {
            let file: PruneFile = read_json(&input)?;
            let (c, tr) = file.cut_tree_and_traces()?;
            if from == 0 || to == 0 {
                bail!("vertices are numbered from 1");
            }
            let r = rebuild::route_path(&c, &tr, from - 1, to - 1)?;
            #[derive(Serialize)]
            struct Step {
                address: String,
                pair: (usize, usize),
                mrca: usize,
            }
            #[derive(Serialize)]
            struct RouteJson {
                edges: Vec<(usize, usize)>,
                steps: Vec<Step>,
            }
            let json = RouteJson {
                edges: r.edges.iter().map(|&(a, b)| (a + 1, b + 1)).collect(),
                steps: r
                    .steps
                    .iter()
                    .map(|s| Step { address: s.address.clone(), pair: (s.pair.0 + 1, s.pair.1 + 1), mrca: s.mrca + 1 })
                    .collect(),
            };
            write_json(out.as_deref(), &json)?;
        }
        Command::Frag { skeleton, spec, m, seed, horizon, out } => {
            let sk: SkeletonTree = read_json(&skeleton)?;
            let spec = match spec {
                Some(p) => read_json::<ThetaSpec>(&p)?,
                None => ThetaSpec::brownian(),
            };
            let h = frag::simulate_with(&sk, &spec, m, FragOptions { horizon }, &mut seed::rng(seed))?;
            write_json(out.as_deref(), &h)?;
        }
        Command::Cuttree { hist, emit, spec, k_schedule, pair, depth, out } => {
            let h: FragHistory = read_json(&hist)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            emit_cuttree(&h, &emit, spec.as_deref(), &k_schedule, &pair, depth, &out)?;
        }
        Command::Verify { suite, config, seed, out, csv } => {
            let cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    SuiteConfig::from_json(&text)?
                }
                None => SuiteConfig::default(),
            };
            let reports = suites::run_suite(&suite, &cfg, seed)?;
            for r in &reports {
                eprintln!("[{}] {}: {} = {} ({})", if r.pass { "PASS" } else { "FAIL" }, r.suite, r.claim, r.statistic, r.threshold);
            }
            if let Some(path) = csv {
                append_csv(&path, &reports)?;
            }
            write_json(out.as_deref(), &reports)?;
            if !reports.iter().all(|r| r.pass) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Convert { input, out, format } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let converted = match format.as_str() {
                "tree-csv" => {
                    let t: RootedLabeledTree = serde_json::from_str(&text).map_err(|e| anyhow!("parse error: {e}"))?;
                    formats::tree_to_csv(&t)?
                }
                "tree-json" => serde_json::to_string_pretty(&formats::tree_from_csv(&text)?)?,
                "events-csv" => formats::history_events_csv(&text)?,
                other => bail!("unknown format {other:?} (expected tree-csv, tree-json or events-csv)"),
            };
            write_text(out.as_deref(), converted.trim_end())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn append_csv(path: &Path, reports: &[suites::Report]) -> Result<()> {
    let fresh = !path.exists();
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn emit_cuttree(
    h: &FragHistory,
    emit: &[CutEmit],
    spec: Option<&Path>,
    k_schedule: &[usize],
    pair: &[usize],
    depth: usize,
    out: &Path,
) -> Result<()> {
    let g = cuttree::genealogy(h)?;
    let m = h.m();
    if emit.contains(&CutEmit::Delta) {
        let d = cuttree::delta_from_genealogy(h, &g);
        let mut w = csv::Writer::from_path(out.join("delta.csv"))?;
        let mut header = vec!["id".to_string(), "0".to_string()];
        header.extend((1..=m).map(|i| i.to_string()));
        w.write_record(&header)?;
        let mut row = vec!["0".to_string(), "0".to_string()];
        row.extend((0..m).map(|i| d.root_distance(i).to_string()));
        w.write_record(&row)?;
        for i in 0..m {
            let mut row = vec![(i + 1).to_string(), d.root_distance(i).to_string()];
            row.extend((0..m).map(|j| d.get(i, j).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(out.join("delta_meta.csv"))?;
        w.write_record(["leaf", "isolation", "bias_bound"])?;
        for i in 0..m {
            w.write_record([(i + 1).to_string(), d.isolation[i].to_string(), d.bias_bound[i].to_string()])?;
        }
        w.flush()?;
    }
    if emit.contains(&CutEmit::Genealogy) {
        std::fs::write(out.join("genealogy.json"), serde_json::to_string_pretty(&g)?)?;
    }
    if emit.contains(&CutEmit::PhiCheck) {
        let spec: ThetaSpec = read_json(spec.ok_or_else(|| anyhow!("phi-check needs --spec"))?)?;
        let schedule = if k_schedule.is_empty() { vec![m] } else { k_schedule.to_vec() };
        let rows = cuttree::phi_local_time_check(&g, &spec, &schedule)?;
        let mut w = csv::Writer::from_path(out.join("phi.csv"))?;
        w.write_record(["node", "event", "hub", "theta", "k", "degree", "estimate"])?;
        for r in rows {
            let opt = |x: Option<String>| x.unwrap_or_default();
            w.write_record([
                r.node.to_string(),
                r.event.to_string(),
                opt(r.hub.map(|x| (x + 1).to_string())),
                opt(r.theta.map(|x| x.to_string())),
                r.k.to_string(),
                r.degree.to_string(),
                r.estimate.to_string(),
            ])?;
        }
        w.flush()?;
    }
    if emit.contains(&CutEmit::Routing) {
        let (i, j) = match pair {
            [a, b] if *a >= 1 && *b >= 1 => (a - 1, b - 1),
            [] => (0, 1),
            _ => bail!("--pair takes two 1-based leaves"),
        };
        let mut router = Router::new(h, i, j)?;
        let all: Vec<usize> = (0..m).collect();
        let mut w = csv::Writer::from_path(out.join("routing.csv"))?;
        let mut header = vec!["address".to_string(), "t".to_string()];
        header.extend((1..=m).map(|k| format!("delta_{k}")));
        w.write_record(&header)?;
        for (addr, ev) in router.explore(depth) {
            for q in ['0', '1'] {
                let u = format!("{addr}{q}1");
                if let Ok(values) = router.delta(&u, &all) {
                    let mut row = vec![u, ev.time.to_string()];
                    row.extend(values.iter().map(|v| v.to_string()));
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
    }
    Ok(())
}
