//! Heart-rate analysis agent built on `pulse-core`: a recording store,
//! batch evaluation against the ECG reference, an LLM-driven orchestrator,
//! and the HTTP service and CLI around them.

pub mod config;
pub mod datastore;
pub mod llm;
pub mod orchestrator;
pub mod report;
pub mod service;
pub mod synth;
