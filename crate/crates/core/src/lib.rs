//! Connectedness of high-dimensional panels under a factor-augmented sparse VAR.
//!
//! The panel is split into a low-rank common component driven by a few
//! factors and a sparse idiosyncratic VAR. Generalized forecast error variance
//! decompositions of the joint model give system-wide connectedness, split
//! into the part due to common (market) shocks and the part due to
//! idiosyncratic shocks, in the time domain and on frequency bands.

pub mod bootstrap;
pub mod connectedness;
pub mod error;
pub mod factor;
pub mod ingest;
pub mod linalg;
pub mod pipeline;
pub mod precision;
pub mod registry;
pub mod sim;
pub mod sparsevar;
pub mod spectral;

pub use error::{Error, Result};
