pub mod ansatz;
pub mod cli;
pub mod config;
pub mod error;
pub mod exact;
pub mod fssa;
pub mod hamiltonian;
pub mod observables;
pub mod sampler;
pub mod sr;
pub mod timing;
pub mod training;
pub mod vit;

pub use error::{Error, Result};
