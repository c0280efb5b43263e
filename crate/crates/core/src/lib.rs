//! Digital staining of optic nerve head OCT B-scans.
//!
//! A B-scan is optionally passed through adaptive compensation, then every
//! pixel is classified into one of six tissue classes by a small CNN that
//! looks at the 50×50 patch centered on it. The crate covers the whole
//! pipeline: synthetic phantoms and PNG/manifest I/O ([`dataset`]),
//! compensation ([`compensation`]), the layer kernels ([`tensor`]), the
//! network and its training ([`network`]), whole-image staining
//! ([`staining`]), agreement metrics ([`metrics`]) and the `onhs` command
//! line ([`cli`]).

pub mod cli;
pub mod compensation;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod network;
pub mod raster;
pub mod seed;
pub mod staining;
pub mod tensor;

pub use error::{Error, Result};
