//! Constructive approximation networks: exact network IR, triangulation spikes,
//! ReLU gadgets, Taylor coefficient codecs, end-to-end builders, periodic-activation
//! lookups and a rate-measurement harness.

pub mod builders;
pub mod codec;
pub mod error;
pub mod eval;
pub mod fourier;
pub mod gadgets;
pub mod harness;
pub mod net;
pub mod oracle;
pub mod partition;
pub mod scalar;
pub mod serialize;

pub use error::{Error, Result};
pub use net::{Activation, GraphBuilder, Lin, Network, Params, SigmaSpec};
pub use scalar::{BigFloat, ExactScalar, Mode, Rational};
