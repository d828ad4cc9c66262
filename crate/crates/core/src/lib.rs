//! Energy measurement for LLM inference: power sampling, per-response energy
//! integration, dataset collection, text features, and the statistics that
//! relate them.

pub mod analysis;
pub mod cli;
pub mod dataset;
pub mod energy;
pub mod llm;
pub mod power;
pub mod textfeat;
