//! Differentially-private federated training of a hybrid quantum-classical
//! binary classifier, simulated on an exact 4-qubit statevector.

pub mod error;
pub mod statevector;
pub mod vqc;

pub use error::{Error, Result};
pub mod model;
pub mod rng;
pub mod accountant;
pub mod dp_sgd;
pub mod federation;
pub mod harness;
