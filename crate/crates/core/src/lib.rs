pub mod benchmark;
pub mod bsde;
pub mod cli;
pub mod error;
pub mod filter;
pub mod hamiltonian;
pub mod optimize;
pub mod par;
pub mod policy;
pub mod problem;
pub mod simulate;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
