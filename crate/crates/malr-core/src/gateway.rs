//! Single seam for prompt rendering and model completions.
//!
//! Every model call in the pipeline flows through a [`Backend`], so swapping
//! a real endpoint for the scripted rule-world backend (or wrapping either in
//! a [`RecordingBackend`] for cost accounting) never touches calling code.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use regex::Regex;

use crate::error::{Error, Result};

// ============================================================================
// Agent role preambles
// ============================================================================

/// Role-setting system texts for every agent in the pipeline.
///
/// The scripted backend dispatches on the distinctive phrase of each role, so
/// these are code constants rather than editable assets; the prompt bodies
/// around them stay fully configurable.
pub mod roles {
    pub const PLANNER: &str = "You are an auto-planner for legal questions. \
        Decompose the question into the distinct aspects the rule requires.";
    pub const CANONICALIZER: &str = "You are a label canonicalizer. \
        Merge aspect labels that are semantic duplicates.";
    pub const SUBTASK_JUDGE: &str = "You are a sub-task judge for one aspect of a criminal rule. \
        Assess only this aspect and finish with a structured ANSWER line.";
    pub const REFLECTOR: &str = "You are an aspect-level self-reflector. \
        Identify which aspect judgments were wrong and why.";
    pub const SINGLE_PASS_JUDGE: &str = "You are a single-pass legal judge. \
        Decide whether the fact satisfies the rule as a whole.";
    pub const ELEMENT_JUDGE: &str = "You are a rule-element judge. \
        Decide whether the fact satisfies one element of the rule.";
    pub const ELEMENT_LISTER: &str = "You are a legal analyst. \
        List the elements the rule requires, one per line.";
    pub const INSIGHT_PAIR: &str = "You are an insight drawer comparing an erroneous answer \
        with its corrected answer.";
    pub const INSIGHT_SUCCESS: &str = "You are an insight drawer reviewing a fully successful \
        reasoning trajectory.";
    pub const INSIGHT_TRANSFER: &str = "You are an insight drawer adapting insights from a \
        similar rule to a new rule.";
    pub const INSIGHT_DIRECT: &str = "You are an insight drawer reading a rule directly, \
        without prior experience.";
    pub const INSIGHT_FILTER: &str = "You are an insight filter. \
        Keep only useful, well-formed, non-redundant insights.";
    pub const FACT_CHECK_SELECTOR: &str = "You are a fact-check selector. \
        Pick the aspects whose judgment hinges on external knowledge.";
    pub const QUESTION_WRITER: &str = "You are a key-question writer. \
        Produce one precise question for a domain expert.";
}

// ============================================================================
// Prompt templates
// ============================================================================

/// A plain-text prompt body with named `{slot}` markers.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    name: String,
    body: String,
    required_slots: Vec<String>,
}

fn slot_marker_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z][a-z0-9_]*)\}").expect("static regex"))
}

impl PromptTemplate {
    /// Builds a template, verifying that every required slot actually occurs
    /// in the body.
    pub fn new(
        name: impl Into<String>,
        body: impl Into<String>,
        required_slots: &[&str],
    ) -> Result<Self> {
        let name = name.into();
        let body = body.into();
        for slot in required_slots {
            let marker = format!("{{{slot}}}");
            if !body.contains(&marker) {
                return Err(Error::InvalidTemplate {
                    name,
                    reason: format!("required slot `{slot}` does not appear in the body"),
                });
            }
        }
        Ok(Self {
            name,
            body,
            required_slots: required_slots.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn required_slots(&self) -> &[String] {
        &self.required_slots
    }

    /// Substitutes every `{slot}` marker from the bindings. Any marker left
    /// without a binding is an error naming that slot, so a prompt can never
    /// ship with an unresolved hole.
    pub fn render(&self, bindings: &HashMap<&str, String>) -> Result<String> {
        let mut missing: Option<String> = None;
        let rendered = slot_marker_regex().replace_all(&self.body, |caps: &regex::Captures| {
            let slot = &caps[1];
            match bindings.get(slot) {
                Some(value) => value.clone(),
                None => {
                    if missing.is_none() {
                        missing = Some(slot.to_string());
                    }
                    String::new()
                }
            }
        });
        if let Some(slot) = missing {
            return Err(Error::MissingSlot {
                template: self.name.clone(),
                slot,
            });
        }
        Ok(rendered.into_owned())
    }
}

/// Template name → required slots. Overrides loaded from disk are validated
/// against this registry so an edited asset cannot drop a slot the pipeline
/// depends on.
const TEMPLATE_REGISTRY: &[(&str, &[&str])] = &[
    ("planner", &["question", "rule", "fact"]),
    ("canonicalize", &["labels"]),
    (
        "subtask",
        &[
            "role",
            "aspect",
            "question",
            "rule",
            "fact",
            "insights",
            "feedback",
            "reflection",
        ],
    ),
    (
        "reflect",
        &["charge", "target_role", "expected", "rule", "fact", "findings"],
    ),
    (
        "insight_pair",
        &["charge", "aspect", "rule", "error_answer", "success_answer"],
    ),
    (
        "insight_success",
        &["golden_charge", "confusing_charge", "rule", "findings"],
    ),
    ("insight_filter", &["charge", "insights"]),
    ("insight_transfer", &["charge", "rule", "insights"]),
    ("insight_direct", &["charge", "rule"]),
    ("fact_check_select", &["insights"]),
    ("key_question", &["aspect", "fact", "insights"]),
    ("baseline_zs_cot", &["question", "rule", "fact"]),
    ("baseline_lrp", &["question", "rule", "fact"]),
    ("baseline_fs_prompt", &["exemplars", "question", "rule", "fact"]),
    ("baseline_fs_cot", &["exemplars", "question", "rule", "fact"]),
    ("col_decompose", &["rule"]),
    ("col_element", &["element", "rule", "fact"]),
    ("exemplar_positive", &[]),
    ("exemplar_negative", &[]),
];

const EMBEDDED_TEMPLATES: &[(&str, &str)] = &[
    ("planner", include_str!("../templates/planner.txt")),
    ("canonicalize", include_str!("../templates/canonicalize.txt")),
    ("subtask", include_str!("../templates/subtask.txt")),
    ("reflect", include_str!("../templates/reflect.txt")),
    ("insight_pair", include_str!("../templates/insight_pair.txt")),
    (
        "insight_success",
        include_str!("../templates/insight_success.txt"),
    ),
    (
        "insight_filter",
        include_str!("../templates/insight_filter.txt"),
    ),
    (
        "insight_transfer",
        include_str!("../templates/insight_transfer.txt"),
    ),
    (
        "insight_direct",
        include_str!("../templates/insight_direct.txt"),
    ),
    (
        "fact_check_select",
        include_str!("../templates/fact_check_select.txt"),
    ),
    ("key_question", include_str!("../templates/key_question.txt")),
    (
        "baseline_zs_cot",
        include_str!("../templates/baseline_zs_cot.txt"),
    ),
    ("baseline_lrp", include_str!("../templates/baseline_lrp.txt")),
    (
        "baseline_fs_prompt",
        include_str!("../templates/baseline_fs_prompt.txt"),
    ),
    (
        "baseline_fs_cot",
        include_str!("../templates/baseline_fs_cot.txt"),
    ),
    ("col_decompose", include_str!("../templates/col_decompose.txt")),
    ("col_element", include_str!("../templates/col_element.txt")),
    (
        "exemplar_positive",
        include_str!("../templates/exemplar_positive.txt"),
    ),
    (
        "exemplar_negative",
        include_str!("../templates/exemplar_negative.txt"),
    ),
];

fn registry_slots(name: &str) -> &'static [&'static str] {
    TEMPLATE_REGISTRY
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, slots)| *slots)
        .unwrap_or(&[])
}

/// All templates the pipeline renders from, keyed by name. Defaults are
/// compiled in; a templates directory can override any of them per file.
#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateLibrary {
    /// The built-in template set.
    pub fn embedded() -> Self {
        let mut templates = BTreeMap::new();
        for (name, body) in EMBEDDED_TEMPLATES {
            let template = PromptTemplate::new(*name, *body, registry_slots(name))
                .expect("embedded template satisfies its own registry");
            templates.insert(name.to_string(), template);
        }
        Self { templates }
    }

    /// Starts from the embedded set and replaces any template that has a
    /// `<name>.txt` file in the directory. Unknown file names become new
    /// templates with no required slots.
    pub fn with_overrides_dir(dir: &Path) -> Result<Self> {
        let mut library = Self::embedded();
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let mut paths: Vec<_> = entries
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(dir.display().to_string(), e))?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let body =
                fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            let template = PromptTemplate::new(stem, body, registry_slots(stem))?;
            library.templates.insert(stem.to_string(), template);
        }
        Ok(library)
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate> {
        self.templates.get(name).ok_or(Error::TemplateNotFound {
            name: name.to_string(),
        })
    }
}

// ============================================================================
// Completions
// ============================================================================

/// Decoding parameters for one completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoding {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }
}

/// A fully rendered prompt ready for a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub rendered_prompt: String,
    pub role_preamble: Option<String>,
    pub decoding: Decoding,
}

impl CompletionRequest {
    pub fn new(rendered_prompt: impl Into<String>) -> Self {
        Self {
            rendered_prompt: rendered_prompt.into(),
            role_preamble: None,
            decoding: Decoding::default(),
        }
    }

    #[must_use]
    pub fn with_role(mut self, preamble: impl Into<String>) -> Self {
        self.role_preamble = Some(preamble.into());
        self
    }

    #[must_use]
    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.decoding.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.decoding.temperature < 0.0 {
            return Err(Error::Validation(format!(
                "temperature {} is negative",
                self.decoding.temperature
            )));
        }
        Ok(())
    }
}

/// One completion plus its token accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub backend_id: String,
}

/// Whitespace token count used by the scripted backend's deterministic cost
/// accounting.
pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// A completion provider. Implementations must be reentrant: the evaluation
/// worker pool calls `complete` from several threads at once.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult>;
}

// ============================================================================
// Call recording
// ============================================================================

/// Token counts of one recorded completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompletionRecord {
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

/// Thread-safe accumulator for completion token counts. Totals are kept in
/// atomics; the raw per-call records stay available so a report's totals can
/// be re-derived independently.
#[derive(Debug, Default)]
pub struct CallRecorder {
    records: Mutex<Vec<CompletionRecord>>,
    prompt_total: AtomicU64,
    output_total: AtomicU64,
}

impl CallRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, result: &CompletionResult) {
        self.prompt_total
            .fetch_add(result.prompt_tokens, Ordering::Relaxed);
        self.output_total
            .fetch_add(result.output_tokens, Ordering::Relaxed);
        self.records
            .lock()
            .expect("recorder mutex poisoned")
            .push(CompletionRecord {
                prompt_tokens: result.prompt_tokens,
                output_tokens: result.output_tokens,
            });
    }

    pub fn total_prompt_tokens(&self) -> u64 {
        self.prompt_total.load(Ordering::Relaxed)
    }

    pub fn total_output_tokens(&self) -> u64 {
        self.output_total.load(Ordering::Relaxed)
    }

    pub fn completions(&self) -> u64 {
        self.records.lock().expect("recorder mutex poisoned").len() as u64
    }

    /// Snapshot of every recorded call, in recording order.
    pub fn records(&self) -> Vec<CompletionRecord> {
        self.records.lock().expect("recorder mutex poisoned").clone()
    }
}

/// Decorator that forwards to an inner backend and records every successful
/// completion's token counts.
pub struct RecordingBackend<'a> {
    inner: &'a dyn Backend,
    recorder: &'a CallRecorder,
}

impl<'a> RecordingBackend<'a> {
    pub fn new(inner: &'a dyn Backend, recorder: &'a CallRecorder) -> Self {
        Self { inner, recorder }
    }
}

impl Backend for RecordingBackend<'_> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult> {
        let result = self.inner.complete(request)?;
        self.recorder.record(&result);
        Ok(result)
    }
}
