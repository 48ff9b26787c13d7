//! Verifiable-claim detection with retrieved, scored web evidence.
//!
//! The pipeline extracts entities from a claim, searches the web for each
//! one, scores the snippets by embedding relevance and source credibility,
//! keeps the top K by a weighted combination, and asks a language model
//! whether the claim is VERIFIABLE or NON-VERIFIABLE. Five baseline
//! strategies and an evaluation harness share the same machinery.
//!
//! Every external service goes through [`gateway::Gateway`], which can
//! record responses to a fixture cache and replay them without network
//! access.

pub mod config;
pub mod decision;
pub mod digest;
pub mod evaluation;
pub mod extraction;
pub mod gateway;
pub mod model;
pub mod pipeline;
pub mod retrieval;
pub mod scoring;
pub mod structured;
