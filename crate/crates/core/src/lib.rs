//! Distributed ("team") MMSE precoding simulator for cell-free massive MIMO.
//!
//! The library models a network of `L` multi-antenna transmitters jointly
//! serving `K` single-antenna receivers under per-transmitter channel
//! knowledge constraints. It provides:
//!
//! * channel and estimation-error models ([`channel`]),
//! * long-term statistics estimation ([`stats`]),
//! * the full set of distributed precoding schemes ([`precoding`]),
//! * duality-based rate evaluation ([`rates`]),
//! * stationarity-residual diagnostics and suboptimality bounds
//!   ([`diagnostics`]),
//! * a deterministic batch experiment runner ([`experiment`]).

pub mod channel;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod precoding;
pub mod rates;
pub mod rng;
pub(crate) mod serde_mat;
pub mod stats;

pub use error::{Error, Result};
