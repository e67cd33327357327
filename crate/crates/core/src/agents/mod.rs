//! The four agents (next-step policy, modifier, designer, summarizer) over a
//! pluggable completion backend. Agents only return values; committing them
//! to the forest is the orchestrator's job.

mod backend;
mod context;
mod designer;
mod http;
mod modify;
mod next_step;
mod summarizer;

use thiserror::Error;

use crate::executor::ExecError;

pub use backend::{
    AgentBackends, AgentRole, BackendError, CompletionBackend, CompletionRequest, RecordingBackend, ReplayBackend,
    ReplayEntry, ReplayMode, ScriptedBackend,
};
pub use context::{
    build_context, estimate_tokens, extract_fenced, fenced, select_mode, Context, ContextLimits, ContextSources,
    EliteExemplar, FocalState, Mode, ModeSignals, ModeThresholds, ModificationDigest, SiblingDigest, SummaryDigest,
    Target, TrajectoryView,
};
pub use designer::{design, design_prompt, median};
pub use http::{extract_content, HttpBackend, HttpConfig};
pub use modify::{
    modify, modify_prompt, normalized_line_distance, repair_prompt, validate_candidate, ModifyOutcome, ModifySettings,
    DEFAULT_DEBUG_RETRIES,
};
pub use next_step::{
    format_reminder, next_step, parse_proposal, system_prompt, Analysis, Proposal, ANALYSIS, DEFAULT_REASKS, DETAILED,
    HIGH_LEVEL,
};
pub use summarizer::{summarize, summary_prompt, PatternStats, Summary, SummaryStore, DEFAULT_SUMMARY_CAP, DUPLICATE_COSINE};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("unparseable reply after {attempts} attempt(s): {message}")]
    Format { attempts: u32, message: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
}
