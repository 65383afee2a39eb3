//! Leakage-safe small-sample regression benchmark.
//!
//! Three model families share one train/test split, one cross-validation
//! protocol and one metrics harness:
//!
//! - tuned classical baselines ([`linmodels`], [`trees`]),
//! - ridge regression on Stein-divergence distances to SPD prototypes ([`spd`]),
//! - simulated quantum fidelity-kernel regressors ([`qkernel`]).
//!
//! Every data-dependent transform is fitted on training rows only and
//! records a fingerprint of those rows ([`util::index_hash`]) so a run can be
//! audited for leakage after the fact.

pub mod bench;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod linmodels;
pub mod preprocess;
pub mod qkernel;
pub mod spd;
pub mod trees;
pub mod util;

pub use error::{Error, Result};
