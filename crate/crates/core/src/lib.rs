//! Sandpiper: a self-hostable workbench for AI-assisted qualitative coding of
//! conversational transcripts.
//!
//! The crate is organised as a pipeline:
//!
//! * [`ingest`] normalizes raw transcripts into canonical [`model::Session`]s.
//! * [`deid`] detects PII and replaces it with realistic surrogates, then
//!   produces a report for human verification.
//! * [`schema`] validates model replies against a researcher-defined
//!   [`model::CodingSchema`] and renders feedback for re-prompting.
//! * [`gateway`] talks to any OpenAI-compatible chat-completion endpoint, and
//!   ships a scripted mock for offline use.
//! * [`orchestrator`] runs the call / validate / feedback / retry loop over a
//!   bounded worker pool and persists only conforming annotations.
//! * [`evalengine`] computes agreement, Cohen's kappa, precision/recall and
//!   confusion matrices over run-sets.
//! * [`store`] is the embedded document store.
//! * [`app`] ties the modules together; [`api`] and the `sandpiper` binary
//!   are thin front doors over it.

pub mod api;
pub mod app;
pub mod cli;
pub mod config;
pub mod deid;
pub mod evalengine;
pub mod gateway;
pub mod ingest;
pub mod model;
pub mod orchestrator;
pub mod schema;
pub mod store;

pub use app::{Workbench, WorkbenchError};
pub use model::*;
