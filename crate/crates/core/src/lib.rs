//! Sector-level food-security and poverty proxies from mobile phone records.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! - [`ingest`] streams call detail records, airtime top-ups, the tower map and
//!   household survey tables into typed records.
//! - [`features`] derives per-user home sector, top-up statistics and social
//!   diversity.
//! - [`aggregate`] groups users by home sector into the mobile variable matrix.
//! - [`survey`] computes FCS, CSI and MPI and the sector means of survey variables.
//! - [`correlation`] builds the mobile x survey Pearson matrix with p-values,
//!   Fisher confidence intervals and a shuffled-sector null.
//! - [`model`] fits polynomial-basis least-squares proxies.
//! - [`temporal`] produces rolling-window top-up series per sector.
//! - [`synth`] generates a seeded synthetic dataset with planted relations and
//!   checks pipeline outputs against it.
//! - [`pipeline`] wires everything behind the `foodsec` command.

// `!(a < b)` is used on purpose so NaN lands on the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod config;
pub mod correlation;
pub mod error;
pub mod features;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod survey;
pub mod synth;
pub mod table;
pub mod temporal;

pub use error::{Error, Result, RowError};
pub use table::{Cell, SectorMatrix};
