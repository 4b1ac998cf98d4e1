//! Campaign runner for the CPT simulator: TOML configuration, CSV and SVG
//! outputs with a run manifest.

pub mod campaigns;
pub mod config;
pub mod error;
pub mod svg;

pub use campaigns::{run, write_outputs, Report};
pub use config::{CampaignKind, RunConfig};
pub use error::CliError;
