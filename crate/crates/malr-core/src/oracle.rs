//! Knowledge feedback: decide which sub-tasks need fact-checking, write key
//! questions about the fact's specifics, and put them to a pluggable expert.
//!
//! The expert sits behind [`OracleAdapter`], so a domain-tuned model over
//! HTTP, a scripted test expert, and a human at the terminal are
//! interchangeable. [`FeedbackOracle`] fronts every adapter with a cache
//! keyed on exact question text: a repeated question never reaches the
//! adapter twice, and the cache lock is held across the adapter call so
//! concurrent identical questions collapse into one invocation.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::domain::{FactDescription, SubTask, SubTaskSet};
use crate::embedding::fnv1a64;
use crate::error::{Error, Result};
use crate::gateway::{roles, Backend, CompletionRequest, TemplateLibrary};
use crate::http_backend::{HttpBackend, HttpBackendConfig};
use crate::kb::Insight;
use crate::synthetic;

/// One answered key question, scoped to the sub-task that needed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeFeedback {
    pub id: String,
    pub subtask_id: String,
    pub question: String,
    pub answer: String,
    pub source: String,
}

pub trait OracleAdapter: Send + Sync {
    fn id(&self) -> &str;
    fn answer(&self, question: &str) -> Result<String>;
}

/// Test expert over the synthetic rule-world: an `[ASK key]` marker in the
/// question is answered affirmatively with the corresponding `[HINT key]`
/// marker, which is exactly the knowledge a flawed judge needs to correct
/// itself. Questions without a marker get a neutral answer.
pub struct ScriptedOracle;

impl OracleAdapter for ScriptedOracle {
    fn id(&self) -> &str {
        "scripted-oracle"
    }

    fn answer(&self, question: &str) -> Result<String> {
        let keys = synthetic::parse_asks(question);
        match keys.first() {
            Some(key) => Ok(format!(
                "Yes. The value described by the fact falls within the category the rule \
                 requires for the {key} aspect; judge it on the stated attribute alone. {}",
                synthetic::hint_marker(key)
            )),
            None => Ok("No external knowledge is needed to answer this question.".to_string()),
        }
    }
}

/// Domain-expert model spoken to over the same chat-completion protocol as
/// the main backend, at its own endpoint.
pub struct HttpOracle {
    backend: HttpBackend,
}

impl HttpOracle {
    pub fn new(config: HttpBackendConfig) -> Result<Self> {
        Ok(Self {
            backend: HttpBackend::new(config)?,
        })
    }
}

impl OracleAdapter for HttpOracle {
    fn id(&self) -> &str {
        "oracle-http"
    }

    fn answer(&self, question: &str) -> Result<String> {
        let request = CompletionRequest::new(question).with_role(
            "You are a legal knowledge expert. Answer the key question factually and concisely.",
        );
        Ok(self.backend.complete(&request)?.text)
    }
}

/// Human expert at the terminal: prints the question, reads one answer line.
/// Strictly single-consumer; an exhausted input stream is an error rather
/// than an empty answer.
pub struct ConsoleOracle<R: BufRead> {
    input: Mutex<R>,
}

impl<R: BufRead> ConsoleOracle<R> {
    pub fn new(input: R) -> Self {
        Self {
            input: Mutex::new(input),
        }
    }
}

impl<R: BufRead + Send> OracleAdapter for ConsoleOracle<R> {
    fn id(&self) -> &str {
        "oracle-console"
    }

    fn answer(&self, question: &str) -> Result<String> {
        eprintln!("[oracle] {question}");
        eprintln!("[oracle] answer> ");
        let mut line = String::new();
        let read = self
            .input
            .lock()
            .expect("console oracle lock poisoned")
            .read_line(&mut line)
            .map_err(|e| Error::Oracle {
                adapter: self.id().to_string(),
                message: format!("failed reading answer: {e}"),
            })?;
        let line = line.trim();
        if read == 0 || line.is_empty() {
            return Err(Error::ConsoleEndOfInput);
        }
        Ok(line.to_string())
    }
}

/// Caching front over an adapter. Invocation counting is exact: the count
/// equals the number of distinct question strings ever asked.
pub struct FeedbackOracle<'a> {
    adapter: &'a dyn OracleAdapter,
    cache: Mutex<BTreeMap<String, String>>,
    invocations: AtomicU64,
}

impl<'a> FeedbackOracle<'a> {
    pub fn new(adapter: &'a dyn OracleAdapter) -> Self {
        Self {
            adapter,
            cache: Mutex::new(BTreeMap::new()),
            invocations: AtomicU64::new(0),
        }
    }

    pub fn ask(&self, subtask_id: &str, question: &str) -> Result<KnowledgeFeedback> {
        let question = question.trim();
        if question.is_empty() {
            return Err(Error::Validation("oracle question must not be empty".into()));
        }
        let mut cache = self.cache.lock().expect("oracle cache lock poisoned");
        let answer = match cache.get(question) {
            Some(answer) => answer.clone(),
            None => {
                let answer = self.adapter.answer(question)?;
                if answer.trim().is_empty() {
                    return Err(Error::Oracle {
                        adapter: self.adapter.id().to_string(),
                        message: "adapter returned an empty answer".into(),
                    });
                }
                self.invocations.fetch_add(1, Ordering::SeqCst);
                cache.insert(question.to_string(), answer.clone());
                answer
            }
        };
        Ok(KnowledgeFeedback {
            id: format!("fb-{:016x}", fnv1a64(question.as_bytes())),
            subtask_id: subtask_id.to_string(),
            question: question.to_string(),
            answer,
            source: self.adapter.id().to_string(),
        })
    }

    /// Number of adapter calls actually performed (cache misses).
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn adapter_id(&self) -> &str {
        self.adapter.id()
    }
}

/// Asks the model which sub-tasks' judgments hinge on external knowledge,
/// based on the insight texts. Sub-tasks without insights cannot be selected;
/// with no insights at all the answer is trivially empty and no call is made.
pub fn select_fact_check_subtasks(
    backend: &dyn Backend,
    templates: &TemplateLibrary,
    insights: &BTreeMap<String, Vec<Insight>>,
    set: &SubTaskSet,
) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    for task in set.tasks() {
        for insight in insights.get(&task.id).map(Vec::as_slice).unwrap_or(&[]) {
            lines.push(format!("- [{}] {}", task.id, insight.text));
        }
    }
    if lines.is_empty() {
        return Ok(Vec::new());
    }
    let template = templates.get("fact_check_select")?;
    let mut bindings = std::collections::HashMap::new();
    bindings.insert("insights", lines.join("\n"));
    let prompt = template.render(&bindings)?;
    let request = CompletionRequest::new(&prompt).with_role(roles::FACT_CHECK_SELECTOR);
    let result = backend.complete(&request)?;

    let mut selected = Vec::new();
    for line in result.text.lines() {
        let Some(id) = line.trim().strip_prefix("CHECK:") else {
            continue;
        };
        let id = id.trim();
        if set.get(id).is_none() {
            return Err(Error::ModelOutput {
                agent: "fact-check-selector".into(),
                reason: format!("selected unknown sub-task id `{id}`"),
                raw: result.text.clone(),
            });
        }
        if !selected.contains(&id.to_string()) {
            selected.push(id.to_string());
        }
    }
    Ok(selected)
}

/// Writes one key question about the fact's specifics for a sub-task that
/// was selected for fact-checking.
pub fn generate_question(
    backend: &dyn Backend,
    templates: &TemplateLibrary,
    subtask: &SubTask,
    fact: &FactDescription,
    insights: &[Insight],
) -> Result<String> {
    let listing = if insights.is_empty() {
        "(none)".to_string()
    } else {
        insights
            .iter()
            .map(|insight| format!("- {}", insight.text))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let template = templates.get("key_question")?;
    let mut bindings = std::collections::HashMap::new();
    bindings.insert("aspect", subtask.label.clone());
    bindings.insert("fact", fact.text.clone());
    bindings.insert("insights", listing);
    let prompt = template.render(&bindings)?;
    let request = CompletionRequest::new(&prompt).with_role(roles::QUESTION_WRITER);
    let result = backend.complete(&request)?;
    let question = result.text.trim().to_string();
    if question.is_empty() {
        return Err(Error::ModelOutput {
            agent: "key-question-writer".into(),
            reason: "question writer produced empty output".into(),
            raw: result.text,
        });
    }
    Ok(question)
}

/// Full knowledge-feedback pass for one charge: select the fact-check-worthy
/// sub-tasks, write one key question each, and ask the expert. The result
/// feeds the per-sub-task `feedback` slot of the judgment context.
pub fn gather_feedback(
    backend: &dyn Backend,
    templates: &TemplateLibrary,
    oracle: &FeedbackOracle<'_>,
    fact: &FactDescription,
    set: &SubTaskSet,
    insights: &BTreeMap<String, Vec<Insight>>,
) -> Result<BTreeMap<String, Vec<KnowledgeFeedback>>> {
    let selected = select_fact_check_subtasks(backend, templates, insights, set)?;
    let mut feedback = BTreeMap::new();
    for task in set.tasks() {
        if !selected.contains(&task.id) {
            continue;
        }
        let bucket = insights.get(&task.id).map(Vec::as_slice).unwrap_or(&[]);
        let question = generate_question(backend, templates, task, fact, bucket)?;
        let answered = oracle.ask(&task.id, &question)?;
        feedback.insert(task.id.clone(), vec![answered]);
    }
    Ok(feedback)
}
