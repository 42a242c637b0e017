//! Multi-region MFD traffic simulation with a rolling-horizon system optimum,
//! logit user equilibrium and neural congestion pricing.

pub mod config;
pub mod demand;
pub mod dso;
pub mod error;
pub mod io;
pub mod lp;
pub mod metrics;
pub mod mfd;
pub mod network;
pub mod pipeline;
pub mod plant;
pub mod pricing;
pub mod qdue;
pub mod rng;

pub use config::{Scenario, ScenarioConfig};
pub use error::{Error, ErrorKind, Result};
pub use pipeline::{Pipeline, Stage};
