//! Evolutionary search over a forest of phylogenetic trees of candidate
//! algorithms, driven by language-model agents and scored by a sandboxed
//! executor.

pub mod elite_pool;
pub mod executor;
pub mod features;
pub mod forest;
pub mod orchestrator;
pub mod pruning;
pub mod sampling;
pub mod agents;
pub mod testbed;
