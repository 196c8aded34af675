//! Acceptance suites: each runs a Monte Carlo experiment at a configured
//! scale and reports one or more pass/fail lines.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cuttree::{self, Router};
use crate::frag::{self, FragHistory, FragOptions};
use crate::icrt;
use crate::params::ThetaSpec;
use crate::prune::{self, RemovalOrder};
use crate::ptree::{self, neumaier, ProbVector, RootedLabeledTree};
use crate::rebuild;
use crate::seed::{self, SimRng};
use crate::stats;

pub const SUITES: [&str; 12] = [
    "cayley",
    "cuttree-law",
    "roundtrip",
    "records",
    "localtime",
    "eta",
    "distapprox",
    "delta-vs-d",
    "fourpoint",
    "phi",
    "brownian",
    "tau",
];

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("unknown suite {0:?}")]
    UnknownSuite(String),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("suite {suite} could not run: {reason}")]
    Failed { suite: String, reason: String },
}

/// Scale overrides; unset fields keep the acceptance defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub replicas: Option<u64>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub m: Option<usize>,
}

impl SuiteConfig {
    pub fn from_json(text: &str) -> Result<Self, SuiteError> {
        let cfg: SuiteConfig = serde_json::from_str(text).map_err(|e| SuiteError::BadConfig(e.to_string()))?;
        if cfg.replicas == Some(0) || cfg.k == Some(0) || cfg.m.is_some_and(|m| m < 2) {
            return Err(SuiteError::BadConfig("replicas and k must be positive, m at least 2".into()));
        }
        Ok(cfg)
    }

    fn replicas(&self, default: u64) -> u64 {
        self.replicas.unwrap_or(default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub criterion: u8,
    pub suite: String,
    pub claim: String,
    pub statistic: f64,
    pub threshold: String,
    pub pass: bool,
    pub seed: u64,
}

/// Worker count from `ICRT_WORKERS`, if set to a positive integer.
pub fn workers() -> Option<usize> {
    std::env::var("ICRT_WORKERS").ok()?.parse().ok().filter(|&n| n > 0)
}

pub fn run_suite(name: &str, cfg: &SuiteConfig, seed: u64) -> Result<Vec<Report>, SuiteError> {
    if !SUITES.contains(&name) {
        return Err(SuiteError::UnknownSuite(name.to_string()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| fail(name, e))?;
    pool.install(|| match name {
        "cayley" => cayley(seed),
        "cuttree-law" => cuttree_law(cfg, seed),
        "roundtrip" => roundtrip(cfg, seed),
        "records" => records(cfg, seed),
        "localtime" => localtime(cfg, seed),
        "eta" => eta(cfg, seed),
        "distapprox" => distapprox(cfg, seed),
        "delta-vs-d" => delta_vs_d(cfg, seed),
        "fourpoint" => fourpoint(cfg, seed),
        "phi" => phi(cfg, seed),
        "brownian" => brownian(cfg, seed),
        "tau" => tau(cfg, seed),
        _ => unreachable!(),
    })
}

fn fail(suite: &str, e: impl std::fmt::Display) -> SuiteError {
    SuiteError::Failed { suite: suite.to_string(), reason: e.to_string() }
}

fn report(criterion: u8, suite: &str, seed: u64, claim: &str, statistic: f64, threshold: &str, pass: bool) -> Report {
    Report { criterion, suite: suite.into(), claim: claim.into(), statistic, threshold: threshold.into(), pass, seed }
}

/// Runs `f` on replicas `0..n` in parallel, results in replica order.
fn replicate<T: Send>(seed: u64, n: u64, f: impl Fn(&mut SimRng) -> T + Sync) -> Vec<T> {
    (0..n).into_par_iter().map(|i| f(&mut seed::replica_rng(seed, i))).collect()
}

/// Compensated sum.
fn random_p<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ProbVector {
    ProbVector::from_weights((0..n).map(|_| rng.random::<f64>() + 0.05).collect()).expect("positive weights")
}

fn cayley(seed: u64) -> Result<Vec<Report>, SuiteError> {
    let mut rng = seed::rng(seed);
    let mut worst: f64 = 0.0;
    for n in 2..=6 {
        let trees = ptree::enumerate(n).map_err(|e| fail("cayley", e))?;
        for _ in 0..5 {
            let p = random_p(n, &mut rng);
            let total = neumaier(trees.iter().map(|t| ptree::weight(t, &p).expect("matching size")));
            worst = worst.max((total - 1.0).abs());
        }
    }
    Ok(vec![report(1, "cayley", seed, "p-tree weights sum to 1 for n = 2..6", worst, "< 1e-12", worst < 1e-12)])
}

fn cuttree_law(cfg: &SuiteConfig, seed: u64) -> Result<Vec<Report>, SuiteError> {
    let p = ProbVector::new(vec![0.4, 0.3, 0.2, 0.1]).map_err(|e| fail("cuttree-law", e))?;
    let trees = ptree::enumerate(4).map_err(|e| fail("cuttree-law", e))?;
    let index: HashMap<(usize, Vec<Option<usize>>), usize> =
        trees.iter().enumerate().map(|(i, t)| ((t.root(), t.parents().to_vec()), i)).collect();
    let hits = replicate(seed, cfg.replicas(200_000), |rng| {
        let t = ptree::sample_ptree_with(&p, rng);
        let ord = prune::sample_order_with(&t, &p, rng).expect("matching size");
        let c = prune::cut_tree(&t, &ord).expect("valid order");
        index[&(c.tree.root(), c.tree.parents().to_vec())]
    });
    let mut counts = vec![0u64; trees.len()];
    for h in hits {
        counts[h] += 1;
    }
    let probs: Vec<f64> = trees.iter().map(|t| ptree::weight(t, &p).expect("matching size")).collect();
    let pv = stats::chi_square_gof(&counts, &probs).map_err(|e| fail("cuttree-law", e))?.p_value;
    Ok(vec![report(2, "cuttree-law", seed, "cut tree of a p-tree is a p-tree (n = 4)", pv, "p > 1e-3", pv > 1e-3)])
}

/// Instance `i` shared by the round-trip and record suites.
fn discrete_instance(rng: &mut SimRng, max_n: usize) -> (RootedLabeledTree, ProbVector, RemovalOrder) {
    let n = rng.random_range(1..=max_n);
    let p = random_p(n, rng);
    let t = ptree::sample_ptree_with(&p, rng);
    let ord = prune::sample_order_with(&t, &p, rng).expect("matching size");
    (t, p, ord)
}

fn roundtrip(cfg: &SuiteConfig, seed: u64) -> Result<Vec<Report>, SuiteError> {
    let failures: usize = replicate(seed, cfg.replicas(10_000), |rng| {
        let (t, p, ord) = discrete_instance(rng, 50);
        let ok = prune::prune(&t, &ord, &p)
            .ok()
            .and_then(|(c, tr)| rebuild::rebuild(&c, &tr).ok())
            .is_some_and(|u| u.edges == t.edge_set());
        usize::from(!ok)
    })
    .into_iter()
    .sum();
    let mut out = vec![report(
        3,
        "roundtrip",
        seed,
        "rebuild(cut tree, traces) recovers the tree",
        failures as f64,
        "== 0 failures",
        failures == 0,
    )];
    let route_seed = seed::child_seed(seed, 5);
    let bad: usize = replicate(route_seed, cfg.replicas(1_000).min(1_000), |rng| {
        let n = rng.random_range(2..=30);
        let p = random_p(n, rng);
        let t = ptree::sample_ptree_with(&p, rng);
        let ord = prune::sample_order_with(&t, &p, rng).expect("matching size");
        let (c, tr) = prune::prune(&t, &ord, &p).expect("valid instance");
        let mut bad = 0;
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let path = prune::tree_path(&t, a, b).expect("in range");
                let want: Vec<(usize, usize)> = path.windows(2).map(|w| (w[0], w[1])).collect();
                match rebuild::route_path(&c, &tr, a, b) {
                    Ok(r) if r.edges == want => {}
                    _ => bad += 1,
                }
            }
        }
        bad
    })
    .into_iter()
    .sum();
    let figure_ok = figure_route().unwrap_or(false);
    out.push(report(
        5,
        "roundtrip",
        seed,
        "route_path matches BFS paths; figure instance routes 5-1-4-7",
        bad as f64,
        "== 0 mismatches and figure instance exact",
        bad == 0 && figure_ok,
    ));
    Ok(out)
}

fn figure_route() -> Option<bool> {
    let edges = [(1, 5), (1, 4), (1, 2), (4, 7), (4, 6), (6, 3)].map(|(a, b)| (a - 1, b - 1));
    let t = RootedLabeledTree::from_edges(7, 0, &edges).ok()?;
    let ord = RemovalOrder::from_permutation(&[4, 2, 1, 6, 3, 5, 7].map(|v| v - 1)).ok()?;
    let (c, tr) = prune::prune(&t, &ord, &ProbVector::uniform(7).ok()?).ok()?;
    let r = rebuild::route_path(&c, &tr, 4, 6).ok()?;
    Some(r.edges == vec![(4, 0), (0, 3), (3, 6)])
}

fn records(cfg: &SuiteConfig, seed: u64) -> Result<Vec<Report>, SuiteError> {
    // same instances as the round-trip suite
    let results = replicate(seed, cfg.replicas(10_000), |rng| {
        let (t, p, ord) = discrete_instance(rng, 50);
        let (c, _) = prune::prune(&t, &ord, &p).expect("valid instance");
        let n = t.n();
        let tree_deg: Vec<usize> = t.adjacency().iter().map(|a| a.len()).collect();
        let cut_children = c.tree.child_counts();
        let mut ok = (0..n).all(|v| tree_deg[v] >= cut_children[v]);
        let strict = (0..n).any(|v| tree_deg[v] > cut_children[v]);
        let depth = c.tree.depths();
        for v in 0..n {
            ok &= prune::record_count(&t, &ord, v).ok() == Some(depth[v] + 1);
        }
        let dist = |a: usize, b: usize| -> usize {
            let (mut a, mut b) = (a, b);
            let mut d = 0;
            while depth[a] > depth[b] {
                a = c.tree.parent(a).expect("not the root");
                d += 1;
            }
            while depth[b] > depth[a] {
                b = c.tree.parent(b).expect("not the root");
                d += 1;
            }
            while a != b {
                a = c.tree.parent(a).expect("not the root");
                b = c.tree.parent(b).expect("not the root");
                d += 2;
            }
            d
        };
        let pairs: Vec<(usize, usize)> = if n <= 20 {
            (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect()
        } else {
            (0..60).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).filter(|(a, b)| a != b).collect()
        };
        for (a, b) in pairs {
            ok &= prune::pair_record_distance(&t, &ord, a, b).ok() == Some(dist(a, b));
        }
        (ok, strict)
    });
    let failures = results.iter().filter(|r| !r.0).count();
    let strict = results.iter().filter(|r| r.1).count();
    Ok(vec![report(
        4,
        "records",
        seed,
        "degree inequality and record identities hold exactly; some inequality is strict",
        failures as f64,
        "== 0 failures and >= 1 strict instance",
        failures == 0 && strict > 0,
    )])
}

/// Hub-rich family used by the skeleton suites.
pub fn hub_rich(beta: f64) -> ThetaSpec {
    ThetaSpec::power_law(beta, 200_000, 0.6, true).expect("valid power law")
}

fn localtime(cfg: &SuiteConfig, seed: u64) -> Result<Vec<Report>, SuiteError> {
    let spec = hub_rich(0.0);
    let k = cfg.k.unwrap_or(100_000);
    let theta1 = spec.theta()[0];
    let runs = replicate(seed, cfg.replicas(30), |rng| {
        let sk = icrt::build_line_breaking_with(&spec, k, rng)?;
        let lt = icrt::local_time_estimate(&sk, &spec, 0)?;
        Ok::<_, icrt::IcrtError>(((lt / theta1 - 1.0).abs(), icrt::eta_ratio(&sk, &spec)?))
    });
    let runs: Vec<(f64, f64)> = runs.into_iter().collect::<Result<_, _>>().map_err(|e| fail("localtime", e))?;
    let lt = stats::median(&runs.iter().map(|r| r.0).collect::<Vec<_>>());
    let er = stats::median(&runs.iter().map(|r| r.1).collect::<Vec<_>>());
    Ok(vec![
        report(7, "localtime", seed, "median |deg(B1)/psi_inv(k)/theta1 - 1|", lt, "< 0.2", lt < 0.2),
        report(8, "localtime", seed, "median eta_(k-1)/psi_inv(k)", er, "in [0.9, 1.1]", (0.9..=1.1).contains(&er)),
    ])
}

fn eta(cfg: &SuiteConfig, seed: u64) -> Result<Vec<Report>, SuiteError> {
    let specs = [("brownian", ThetaSpec::brownian()), ("hub-rich", ThetaSpec::power_law(0.0, 1000, 0.6, true).expect("valid"))];
    let mut out = Vec::new();
    for (i, (label, spec)) in specs.iter().enumerate() {
        let sample = replicate(seed::child_seed(seed, i as u64), cfg.replicas(10_000), |rng| {
            icrt::build_line_breaking_with(spec, 1, rng).map(|sk| sk.eta(1))
        });
        let sample: Vec<f64> = sample.into_iter().collect::<Result<_, _>>().map_err(|e| fail("eta", e))?;
        let pv = stats::ks_one_sample(&sample, |t| 1.0 - (-spec.first_cut_log_survival(t)).exp())
            .map_err(|e| fail("eta", e))?
            .p_value;
        out.push(report(6, "eta", seed, &format!("eta_1 law, {label} spec (KS)"), pv, "p > 1e-3", pv > 1e-3));
    }
    Ok(out)
}

fn distapprox(cfg: &SuiteConfig, seed: u64) -> Result<Vec<Report>, SuiteError> {
    let spec = hub_rich(0.0);
    let k = cfg.k.unwrap_or(100_000);
    let eps1 = spec.eps_for_gamma(50.0, 1.0).ok_or_else(|| fail("distapprox", "gamma never reaches 50"))?;
    let gamma1 = spec.gamma_theta(eps1).map_err(|e| fail("distapprox", e))?;
    let eps2 = spec.eps_for_gamma(2.0 * gamma1, eps1).ok_or_else(|| fail("distapprox", "gamma cannot double"))?;
    let errs = replicate(seed, cfg.replicas(50), |rng| {
        let sk = icrt::build_line_breaking_with(&spec, k, rng)?;
        let pair = icrt::sample_leaf_pair_with(&sk, rng)?;
        let e1 = (icrt::approx_distance(&pair.hubs, &spec, eps1)? / pair.distance - 1.0).abs();
        let e2 = (icrt::approx_distance(&pair.hubs, &spec, eps2)? / pair.distance - 1.0).abs();
        Ok::<_, icrt::IcrtError>((e1, e2))
    });
    let errs: Vec<(f64, f64)> = errs.into_iter().collect::<Result<_, _>>().map_err(|e| fail("distapprox", e))?;
    let m1 = stats::median(&errs.iter().map(|e| e.0).collect::<Vec<_>>());
    let m2 = stats::median(&errs.iter().map(|e| e.1).collect::<Vec<_>>());
    Ok(vec![
        report(9, "distapprox", seed, &format!("median relative error at gamma = {gamma1:.1}"), m1, "< 0.15", m1 < 0.15),
        report(9, "distapprox", seed, "median relative error after gamma doubles", m2, &format!("< {m1:.4}"), m2 < m1),
    ])
}

fn delta_vs_d(cfg: &SuiteConfig, seed: u64) -> Result<Vec<Report>, SuiteError> {
    let spec = ThetaSpec::brownian();
    let k = cfg.k.unwrap_or(10_000);
    let m = cfg.m.unwrap_or(200);
    let pairs = replicate(seed, cfg.replicas(500), |rng| {
        let sk = icrt::build_line_breaking_with(&spec, k, rng).map_err(|e| e.to_string())?;
        let h = frag::simulate_with(&sk, &spec, m, FragOptions::default(), rng).map_err(|e| e.to_string())?;
        let d = cuttree::delta_matrix(&h).map_err(|e| e.to_string())?;
        let other = icrt::build_line_breaking_with(&spec, k, rng).map_err(|e| e.to_string())?;
        let dist = icrt::sample_leaf_pair_with(&other, rng).map_err(|e| e.to_string())?.distance;
        Ok::<_, String>((d.root_distance(0), dist))
    });
    let pairs: Vec<(f64, f64)> = pairs.into_iter().collect::<Result<_, _>>().map_err(|e| fail("delta-vs-d", e))?;
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let pv = stats::ks_two_sample(&a, &b).map_err(|e| fail("delta-vs-d", e))?.p_value;
    Ok(vec![report(10, "delta-vs-d", seed, "delta(0,1) has the law of a skeleton distance (KS)", pv, "p > 1e-3", pv > 1e-3)])
}

fn mixed_spec() -> ThetaSpec {
    ThetaSpec::validate(0.5, vec![0.6, 0.5, 0.4, 0.3, 0.2], true).expect("valid spec")
}

fn history(spec: &ThetaSpec, k: usize, m: usize, rng: &mut SimRng, opts: FragOptions) -> Result<FragHistory, String> {
    let sk = icrt::build_line_breaking_with(spec, k, rng).map_err(|e| e.to_string())?;
    frag::simulate_with(&sk, spec, m, opts, rng).map_err(|e| e.to_string())
}

fn fourpoint(cfg: &SuiteConfig, seed: u64) -> Result<Vec<Report>, SuiteError> {
    let m = cfg.m.unwrap_or(200);
    let k = cfg.k.unwrap_or(2_000);
    let specs = [mixed_spec(), ThetaSpec::brownian()];
    let worst = replicate(seed, cfg.replicas(40), |rng| {
        let spec = &specs[rng.random_range(0..2)];
        let h = history(spec, k, m, rng, FragOptions::default())?;
        let g = cuttree::genealogy(&h).map_err(|e| e.to_string())?;
        let d = cuttree::delta_from_genealogy(&h, &g);
        let heights = (0..m).map(|i| (d.root_distance(i) - g.node(g.leaf_node(i)).height).abs()).fold(0.0, f64::max);
        Ok::<_, String>(d.four_point_violation(2_000_000).max(heights))
    });
    let worst: Vec<f64> = worst.into_iter().collect::<Result<_, _>>().map_err(|e| fail("fourpoint", e))?;
    let w = worst.iter().copied().fold(0.0, f64::max);
    let mut out = vec![report(11, "fourpoint", seed, "four-point condition and leaf heights", w, "<= 1e-9", w <= 1e-9)];

    // routing integrals between tracked leaves 0 and 1
    let m = cfg.m.unwrap_or(100);
    let checks = replicate(seed::child_seed(seed, 15), cfg.replicas(20), |rng| {
        let h = history(&mixed_spec(), k, m, rng, FragOptions::default())?;
        let d = cuttree::delta_matrix(&h).map_err(|e| e.to_string())?;
        let mut router = Router::new(&h, 0, 1).map_err(|e| e.to_string())?;
        let all: Vec<usize> = (0..m).collect();
        let (mut tested, mut bad) = (0usize, 0usize);
        for (w, _) in router.explore(4) {
            for q in ['0', '1'] {
                let Ok(du) = router.delta(&format!("{w}{q}1"), &all) else { continue };
                tested += 1;
                let mut ok = du.iter().all(|x| x.is_finite() && *x >= 0.0);
                for a in 0..m {
                    for b in a + 1..m {
                        let tol = 1e-9 + d.bias_bound[a] + d.bias_bound[b];
                        ok &= (du[a] - du[b]).abs() <= d.get(a, b) + tol && d.get(a, b) <= du[a] + du[b] + tol;
                    }
                }
                bad += usize::from(!ok);
            }
        }
        Ok::<_, String>((tested, bad))
    });
    let checks: Vec<(usize, usize)> = checks.into_iter().collect::<Result<_, _>>().map_err(|e| fail("fourpoint", e))?;
    let tested: usize = checks.iter().map(|c| c.0).sum();
    let bad: usize = checks.iter().map(|c| c.1).sum();
    out.push(report(
        15,
        "fourpoint",
        seed,
        &format!("routing integrals satisfy (A1) and (A3) on {tested} addresses"),
        bad as f64,
        "== 0 violations over > 0 addresses",
        bad == 0 && tested > 0,
    ));
    Ok(out)
}

fn phi(cfg: &SuiteConfig, seed: u64) -> Result<Vec<Report>, SuiteError> {
    let spec = hub_rich(0.01);
    let m = cfg.m.unwrap_or(10_000);
    let k = cfg.k.unwrap_or(2 * m);
    let small = (m / 10).max(2);
    let theta = spec.theta();
    let runs = replicate(seed, cfg.replicas(30), |rng| {
        let h = history(&spec, k, m, rng, FragOptions::default())?;
        let g = cuttree::genealogy(&h).map_err(|e| e.to_string())?;
        let rows = cuttree::phi_local_time_check(&g, &spec, &[small, m]).map_err(|e| e.to_string())?;
        let mut top = [0.0f64; 3];
        let mut binary = [0.0f64; 2];
        for row in rows {
            let slot = usize::from(row.k == m);
            match row.hub {
                Some(id) if id < 3 && row.k == m => top[id] = row.estimate,
                None => binary[slot] = binary[slot].max(row.estimate),
                _ => {}
            }
        }
        Ok::<_, String>((top, binary))
    });
    let runs: Vec<([f64; 3], [f64; 2])> = runs.into_iter().collect::<Result<_, _>>().map_err(|e| fail("phi", e))?;
    let ratio = stats::median(&runs.iter().map(|r| r.0[0] / theta[0]).collect::<Vec<_>>());
    let bin_small = runs.iter().map(|r| r.1[0]).fold(0.0, f64::max);
    let bin_large = runs.iter().map(|r| r.1[1]).fold(0.0, f64::max);
    let ranked = runs.iter().filter(|r| r.0[0] > r.0[1] && r.0[1] > r.0[2]).count() as f64 / runs.len() as f64;
    Ok(vec![
        report(12, "phi", seed, "median top-hub estimate / theta1", ratio, "in [0.7, 1.3]", (0.7..=1.3).contains(&ratio)),
        report(
            12,
            "phi",
            seed,
            "largest binary-cut estimate (shrinks with k)",
            bin_large,
            &format!("< 0.1 theta1 and < {bin_small:.4}"),
            bin_large < 0.1 * theta[0] && bin_large < bin_small,
        ),
        report(12, "phi", seed, "fraction of replicas ranking the top 3 hubs correctly", ranked, ">= 0.9", ranked >= 0.9),
    ])
}

fn brownian(cfg: &SuiteConfig, seed: u64) -> Result<Vec<Report>, SuiteError> {
    let spec = ThetaSpec::brownian();
    let t = 400.0;
    let m = cfg.m.unwrap_or(10);
    let k = cfg.k.unwrap_or(200);
    let runs = replicate(seed, cfg.replicas(1_000), |rng| {
        let h = history(&spec, k, m, rng, FragOptions { horizon: Some(t) })?;
        let mut best = (0, 1, f64::INFINITY);
        for i in 0..m {
            for j in i + 1..m {
                let d = cuttree::tracked_distance(&h, i, j);
                if (d - 1.0).abs() < (best.2 - 1.0).abs() {
                    best = (i, j, d);
                }
            }
        }
        let est = cuttree::brownian_reconstruct(&h, best.0, best.1, t, spec.beta()).map_err(|e| e.to_string())?;
        Ok::<_, String>((est, best.2))
    });
    let runs: Vec<(f64, f64)> = runs.into_iter().collect::<Result<_, _>>().map_err(|e| fail("brownian", e))?;
    let rel = stats::median(&runs.iter().map(|(e, d)| ((e - d) / d).abs()).collect::<Vec<_>>());
    let resid: Vec<f64> = runs.iter().map(|(e, d)| e - d).collect();
    let n = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / n;
    let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let z = mean / (sd / n.sqrt());
    Ok(vec![
        report(13, "brownian", seed, "median relative error of cut-count distance", rel, "< 0.1", rel < 0.1),
        report(13, "brownian", seed, "standardized mean error of cut-count distance", z, "|z| <= 3", z.abs() <= 3.0),
    ])
}

fn tau(cfg: &SuiteConfig, seed: u64) -> Result<Vec<Report>, SuiteError> {
    let m = cfg.m.unwrap_or(500);
    let k = cfg.k.unwrap_or(5_000);
    let meds = replicate(seed, cfg.replicas(30), |rng| {
        let h = history(&mixed_spec(), k, m, rng, FragOptions::default())?;
        let g = cuttree::genealogy(&h).map_err(|e| e.to_string())?;
        let mut errs = Vec::new();
        for (id, node) in g.nodes().iter().enumerate() {
            if node.is_internal() && g.depth(id) >= 3 {
                let tau = cuttree::tau_integral(&g, id).map_err(|e| e.to_string())?;
                errs.push((tau / node.time - 1.0).abs());
            }
        }
        Ok::<_, String>(if errs.is_empty() { f64::INFINITY } else { stats::median(&errs) })
    });
    let meds: Vec<f64> = meds.into_iter().collect::<Result<_, _>>().map_err(|e| fail("tau", e))?;
    let med = stats::median(&meds);
    Ok(vec![report(14, "tau", seed, "median relative error of tau at depth >= 3", med, "< 0.2", med < 0.2)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite() {
        assert!(matches!(run_suite("nope", &SuiteConfig::default(), 1), Err(SuiteError::UnknownSuite(_))));
    }

    #[test]
    fn config_parsing() {
        assert_eq!(SuiteConfig::from_json("{}").unwrap(), SuiteConfig::default());
        assert_eq!(SuiteConfig::from_json(r#"{"replicas": 5}"#).unwrap().replicas, Some(5));
        assert!(matches!(SuiteConfig::from_json(r#"{"reps": 5}"#), Err(SuiteError::BadConfig(_))));
        assert!(matches!(SuiteConfig::from_json(r#"{"m": 1}"#), Err(SuiteError::BadConfig(_))));
    }

    #[test]
    fn small_runs_are_deterministic() {
        let cfg = SuiteConfig { replicas: Some(40), k: Some(300), m: Some(20) };
        for name in ["cayley", "roundtrip", "records", "fourpoint", "tau"] {
            let a = run_suite(name, &cfg, 9).unwrap();
            let b = run_suite(name, &cfg, 9).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            assert!(a.iter().all(|r| r.seed == 9));
        }
    }

    #[test]
    fn compensated_sum() {
        let v = vec![1.0, 1e-16, 1e-16, -1.0];
        assert_eq!(neumaier(v.into_iter()), 2e-16);
    }
}
