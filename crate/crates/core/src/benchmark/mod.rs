//! Reference problems with known answers.

pub mod instances;
pub mod lqg;

pub use instances::{
    bsde_exponential, bsde_martingale, lq_scalar, problem_by_name, quadratic_toy, PROBLEM_NAMES,
    TOY_OPTIMUM,
};
pub use lqg::{
    oracle_policy_fit, riccati_oracle, LqgSpec, Observation, OracleFit, OracleLaw, RiccatiOracle,
};
