//! Multi-agent legal reasoning over charge-specific rules.
//!
//! The crate decomposes a charge's rule into sub-tasks, judges each sub-task
//! with a role-assigned agent, and combines the findings under a
//! presumption-of-innocence conjunction. A trial loop with self-reflection
//! retries wrong judgments, successful and corrected trajectories are
//! distilled into a reusable insight knowledge base, and an oracle adapter
//! answers knowledge gaps the rule text cannot settle. Everything runs
//! against a pluggable completion backend; a deterministic scripted backend
//! over a synthetic rule-world makes the whole pipeline testable offline.

pub mod domain;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod http_backend;
pub mod judgment;
pub mod kb;
pub mod oracle;
pub mod planner;
pub mod scripted;
pub mod synthetic;
pub mod trainer;

pub use domain::{
    CaseOutcome, CaseRecord, ChargeQuery, FactDescription, Finding, LegalRule, Role, SubAnswer,
    SubTask, SubTaskSet, Trajectory, Verdict,
};
pub use embedding::{cosine_similarity, Embedder, EmbeddingVector, TrigramEmbedder};
pub use error::{Error, Result};
pub use eval::{
    compare_ablations, load_cases, render_text_table, save_cases, AblationInputs,
    AblationReportSet, CostLedger, EvalConfig, EvalHarness, EvalReport, Exemplars, MalrFlags,
    Strategy, StrategySpec,
};
pub use gateway::{
    Backend, CallRecorder, CompletionRecord, CompletionRequest, CompletionResult, Decoding,
    PromptTemplate, RecordingBackend, TemplateLibrary,
};
pub use http_backend::{HttpBackend, HttpBackendConfig, HttpEmbedder, DEFAULT_CREDENTIAL_ENV};
pub use judgment::{
    combine, parse_finding, AgentSpec, InsightMode, JudgmentContext, JudgmentEngine,
};
pub use kb::{transfer_insights, Insight, InsightIdAllocator, InsightKB, InsightSource, RuleKB};
pub use oracle::{
    gather_feedback, generate_question, select_fact_check_subtasks, ConsoleOracle,
    FeedbackOracle, HttpOracle, KnowledgeFeedback, OracleAdapter, ScriptedOracle,
};
pub use planner::{load_subtasks, save_subtasks, Planner, PlannerConfig, SampleRef, SubTaskProposal};
pub use scripted::{ElementFlaw, ReflectorMode, ScriptedBackend, ScriptedMode};
pub use trainer::{
    save_training_report, Experience, ExperienceKind, Trainer, TrainerConfig, TrainingReport,
    TrainingUnit,
};
