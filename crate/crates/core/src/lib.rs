//! Data-driven predictive control from time-domain (Hankel) or
//! frequency-domain (sampled spectra / FRF) data, with the supporting
//! closed-loop identification and receding-horizon simulation pipeline.

pub mod error;
pub mod freqdomain;
pub mod frf;
pub mod lti;
pub mod numcore;
pub mod ocp;
pub mod signals;
pub mod simloop;

pub use error::{Error, Result};
