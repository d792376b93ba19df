//! Online learning with long-term constraints: a primal-dual meta-algorithm
//! built from pluggable regret minimizers, with environments, an offline
//! oracle, repeated-auction instances and an experiment harness.

// Negated comparisons double as NaN rejection; index loops mirror matrix notation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod environments;
pub mod auctions;
pub mod error;
pub mod harness;
pub mod lagrangian;
pub mod meta;
pub mod oracle;
pub mod policy;
pub mod rm;
pub mod simplex;

pub use environments::{
    AdversarySpec, Environment, GenerationMode, InstanceEnv, InstanceSpec, Regime, Round, Scenario,
};
pub use error::{Error, Result};
pub use lagrangian::{lagrangian_value, DualDomain, DualPlayer, RoundRealization};
pub use meta::{
    err_bound, estimate_rho, run_algorithm, AlgorithmSpec, m_threshold, run_known_rho, run_unknown_rho, MetaConfig, Phase,
    RoundRecord, RunTrace,
};
pub use oracle::{saddle_check, solve_opt, solve_rho_adversarial, solve_rho_stochastic, OracleSolution};
pub use policy::{PolicyBank, PrimalShape};
pub use rm::{FeedbackMode, RegretMinimizer, RmRange};
pub use auctions::{AuctionConfig, AuctionType, ValueProcess};
pub use harness::{certify_bounds, run_experiment, RunConfig, RunSettings, Summary};
