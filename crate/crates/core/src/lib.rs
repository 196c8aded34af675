//! Simulation of inhomogeneous continuum random trees, their Poisson
//! pruning and cut trees, together with the discrete p-tree models.

pub mod cuttree;
pub mod frag;
pub mod icrt;
pub mod params;
pub mod prune;
pub mod ptree;
pub mod rebuild;
pub mod seed;
pub mod stats;
pub mod suites;

pub use params::ThetaSpec;
pub use prune::{DiscreteCutTree, RemovalOrder, TraceMap};
pub use ptree::{ProbVector, RootedLabeledTree};
pub use rebuild::UnrootedTree;
