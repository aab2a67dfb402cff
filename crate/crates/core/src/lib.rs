pub mod dense;
pub mod error;
pub mod gf;
pub mod io;
pub mod krylov;
pub mod models;
pub mod moments;
pub mod noise;
pub mod pauli;
pub mod quad;
pub mod rng;
pub mod statevector;
pub mod texpand;
pub mod trotter;

pub use error::{Error, Result};
