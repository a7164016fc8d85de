//! Dataset ingestion, baseline strategies, full-pipeline evaluation, and
//! cost accounting.
//!
//! Five baselines answer each charge query with one completion (chain of
//! logic decomposes the rule first and judges element-wise); the `malr`
//! strategy runs the planned sub-task agents with optional insights and
//! knowledge feedback. Every strategy produces the same report shape: joint
//! accuracy over cases, golden-accept and confusing-reject rates over
//! queries, a per-pair breakdown, per-case outcomes, and a token ledger.
//!
//! An unparseable model verdict counts as a wrong prediction and is flagged
//! in the outcome; dropping such cases would silently inflate accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    charge_question, validate_case, CaseRecord, ChargeQuery, FactDescription, Finding, LegalRule,
    SubTask, SubTaskSet,
};
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::gateway::{
    roles, Backend, CallRecorder, CompletionRequest, RecordingBackend, TemplateLibrary,
};
use crate::judgment::{combine, parse_finding, InsightMode, JudgmentContext, JudgmentEngine};
use crate::kb::{self, transfer_insights, Insight, InsightIdAllocator, InsightKB, InsightSource, RuleKB};
use crate::oracle::{gather_feedback, FeedbackOracle};
use crate::planner::parse_enumerated_labels;
use crate::trainer::{Trainer, TrainerConfig, TrainingUnit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    ZsCot,
    Lrp,
    FsPrompt,
    FsCot,
    ChainOfLogic,
    Malr,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::ZsCot,
        Strategy::Lrp,
        Strategy::FsPrompt,
        Strategy::FsCot,
        Strategy::ChainOfLogic,
        Strategy::Malr,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::ZsCot => "zs_cot",
            Strategy::Lrp => "lrp",
            Strategy::FsPrompt => "fs_prompt",
            Strategy::FsCot => "fs_cot",
            Strategy::ChainOfLogic => "chain_of_logic",
            Strategy::Malr => "malr",
        }
    }

    pub fn needs_exemplars(&self) -> bool {
        matches!(self, Strategy::FsPrompt | Strategy::FsCot)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|strategy| strategy.name() == s)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown strategy `{s}`; expected one of zs_cot, lrp, fs_prompt, fs_cot, \
                     chain_of_logic, malr"
                ))
            })
    }
}

/// Augmentation switches for the `malr` strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MalrFlags {
    pub use_insights: bool,
    pub use_feedback: bool,
    pub insight_mode: InsightMode,
}

impl MalrFlags {
    pub fn full() -> Self {
        Self {
            use_insights: true,
            use_feedback: true,
            insight_mode: InsightMode::Trained,
        }
    }

    pub fn bare() -> Self {
        Self {
            use_insights: false,
            use_feedback: false,
            insight_mode: InsightMode::None,
        }
    }
}

impl Default for MalrFlags {
    fn default() -> Self {
        Self::full()
    }
}

/// One positive and one negative solved demonstration for the few-shot
/// baselines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exemplars {
    pub positive: String,
    pub negative: String,
}

impl Exemplars {
    /// The demonstrations shipped with the template set.
    pub fn from_templates(templates: &TemplateLibrary) -> Result<Self> {
        let empty = std::collections::HashMap::new();
        Ok(Self {
            positive: templates.get("exemplar_positive")?.render(&empty)?,
            negative: templates.get("exemplar_negative")?.render(&empty)?,
        })
    }

    fn block(&self) -> String {
        format!("{}\n\n{}", self.positive.trim(), self.negative.trim())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySpec {
    pub strategy: Strategy,
    pub malr_flags: MalrFlags,
    pub exemplars: Option<Exemplars>,
}

impl StrategySpec {
    pub fn baseline(strategy: Strategy) -> Self {
        Self {
            strategy,
            malr_flags: MalrFlags::bare(),
            exemplars: None,
        }
    }

    pub fn few_shot(strategy: Strategy, exemplars: Exemplars) -> Self {
        Self {
            strategy,
            malr_flags: MalrFlags::bare(),
            exemplars: Some(exemplars),
        }
    }

    pub fn malr(flags: MalrFlags) -> Self {
        Self {
            strategy: Strategy::Malr,
            malr_flags: flags,
            exemplars: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategy.needs_exemplars() != self.exemplars.is_some() {
            return Err(Error::Validation(format!(
                "strategy `{}` {} exemplars",
                self.strategy,
                if self.strategy.needs_exemplars() {
                    "requires"
                } else {
                    "does not take"
                }
            )));
        }
        Ok(())
    }
}

/// Token and call accounting for one evaluation run. Wall time is kept for
/// display but excluded from serialized reports so runs stay byte-comparable.
#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct CostLedger {
    pub total_prompt_tokens: u64,
    pub total_output_tokens: u64,
    pub completions: u64,
    pub per_case_mean_tokens: f64,
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

impl CostLedger {
    fn from_recorder(recorder: &CallRecorder, case_count: usize, wall_time_seconds: f64) -> Self {
        let total_prompt_tokens = recorder.total_prompt_tokens();
        let total_output_tokens = recorder.total_output_tokens();
        let per_case_mean_tokens = if case_count == 0 {
            0.0
        } else {
            (total_prompt_tokens + total_output_tokens) as f64 / case_count as f64
        };
        Self {
            total_prompt_tokens,
            total_output_tokens,
            completions: recorder.completions(),
            per_case_mean_tokens,
            wall_time_seconds,
        }
    }
}

/// One query's result inside a case outcome. `parse_flagged` marks a verdict
/// that could not be parsed from the model output; such queries are never
/// counted as correct.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct QueryOutcome {
    pub charge_name: String,
    pub expected_guilty: bool,
    pub judged_guilty: bool,
    pub parse_flagged: bool,
    pub correct: bool,
}

impl QueryOutcome {
    fn new(query: &ChargeQuery, judged_guilty: bool, parse_flagged: bool) -> Self {
        Self {
            charge_name: query.charge_name.clone(),
            expected_guilty: query.expected_guilty,
            judged_guilty,
            parse_flagged,
            correct: !parse_flagged && judged_guilty == query.expected_guilty,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct CaseEvalOutcome {
    pub case_id: String,
    pub pair_tag: Option<String>,
    pub queries: Vec<QueryOutcome>,
    pub y_correct: bool,
}

/// Evaluation results for one strategy over one dataset. Rates are absent
/// when their denominator is empty (an innocent-only dataset has no
/// expected-guilty queries, for example).
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EvalReport {
    pub strategy: String,
    pub dataset_id: String,
    pub joint_accuracy: Option<f64>,
    pub golden_accept_rate: Option<f64>,
    pub confusing_reject_rate: Option<f64>,
    pub per_pair: BTreeMap<String, f64>,
    pub cost: CostLedger,
    pub per_case_outcomes: Vec<CaseEvalOutcome>,
}

impl EvalReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut body = serde_json::to_string_pretty(self).map_err(|e| Error::DataFormat {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        body.push('\n');
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

fn fmt_rate(rate: Option<f64>) -> String {
    match rate {
        Some(value) => format!("{value:.4}"),
        None => "n/a".to_string(),
    }
}

/// Plain-text summary: one row per report, then a per-pair accuracy matrix.
pub fn render_text_table(reports: &[&EvalReport]) -> String {
    let mut out = String::new();
    let name_width = reports
        .iter()
        .map(|r| r.strategy.len())
        .chain(["strategy".len()])
        .max()
        .unwrap_or(8);
    out.push_str(&format!(
        "{:<name_width$}  {:>8}  {:>13}  {:>16}  {:>6}  {:>15}  {:>11}\n",
        "strategy", "joint", "golden_accept", "confusing_reject", "cases", "mean_tokens", "completions"
    ));
    for report in reports {
        out.push_str(&format!(
            "{:<name_width$}  {:>8}  {:>13}  {:>16}  {:>6}  {:>15.1}  {:>11}\n",
            report.strategy,
            fmt_rate(report.joint_accuracy),
            fmt_rate(report.golden_accept_rate),
            fmt_rate(report.confusing_reject_rate),
            report.per_case_outcomes.len(),
            report.cost.per_case_mean_tokens,
            report.cost.completions,
        ));
    }

    let mut pairs = BTreeSet::new();
    for report in reports {
        pairs.extend(report.per_pair.keys().cloned());
    }
    if !pairs.is_empty() {
        out.push('\n');
        let pair_width = pairs.iter().map(String::len).chain(["pair".len()]).max().unwrap_or(4);
        out.push_str(&format!("{:<pair_width$}", "pair"));
        for report in reports {
            out.push_str(&format!("  {:>name_width$}", report.strategy));
        }
        out.push('\n');
        for pair in &pairs {
            out.push_str(&format!("{pair:<pair_width$}"));
            for report in reports {
                let cell = report
                    .per_pair
                    .get(pair)
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "n/a".to_string());
                out.push_str(&format!("  {cell:>name_width$}"));
            }
            out.push('\n');
        }
    }
    out
}

/// On-disk form of one case record: one JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
struct CaseRecordWire {
    id: String,
    fact: String,
    queries: Vec<ChargeQuery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pair_tag: Option<String>,
}

/// Reads a case file and validates every record against the rule KB. All
/// validation failures are collected and reported together, each with its
/// line number; any failure aborts the load.
pub fn load_cases(path: &Path, rules: &RuleKB) -> Result<Vec<CaseRecord>> {
    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for (line_no, line) in kb::read_lines(path)? {
        let wire: CaseRecordWire = kb::parse_line(path, line_no, &line)?;
        let record = CaseRecord {
            fact: FactDescription {
                case_id: wire.id,
                text: wire.fact,
            },
            queries: wire.queries,
            pair_tag: wire.pair_tag,
        };
        for violation in validate_case(&record, rules) {
            failures.push(format!(
                "{}:{line_no}: case `{}`: {violation}",
                path.display(),
                record.fact.case_id
            ));
        }
        cases.push(record);
    }
    if !failures.is_empty() {
        return Err(Error::Validation(failures.join("\n")));
    }
    Ok(cases)
}

pub fn save_cases(path: &Path, cases: &[CaseRecord]) -> Result<()> {
    kb::write_jsonl(
        path,
        cases.iter().map(|case| CaseRecordWire {
            id: case.fact.case_id.clone(),
            fact: case.fact.text.clone(),
            queries: case.queries.clone(),
            pair_tag: case.pair_tag.clone(),
        }),
    )
}

/// Everything an evaluation run may need beyond the dataset and strategy.
/// The sub-task set, insight KB, embedder, and oracle are only required when
/// the strategy actually uses them.
pub struct EvalConfig<'a> {
    pub dataset_id: String,
    pub worker_pool_size: usize,
    pub rules: &'a RuleKB,
    pub set: Option<&'a SubTaskSet>,
    pub kb: Option<&'a InsightKB>,
    pub embedder: Option<&'a dyn Embedder>,
    pub oracle: Option<&'a FeedbackOracle<'a>>,
}

impl<'a> EvalConfig<'a> {
    pub fn baseline(dataset_id: impl Into<String>, rules: &'a RuleKB) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            worker_pool_size: 4,
            rules,
            set: None,
            kb: None,
            embedder: None,
            oracle: None,
        }
    }
}

struct EvaluatedCase {
    outcome: CaseEvalOutcome,
}

pub struct EvalHarness<'a> {
    backend: &'a dyn Backend,
    templates: &'a TemplateLibrary,
}

impl<'a> EvalHarness<'a> {
    pub fn new(backend: &'a dyn Backend, templates: &'a TemplateLibrary) -> Self {
        Self { backend, templates }
    }

    /// Answers one charge query with a baseline strategy. The flag reports an
    /// unparseable verdict; the caller counts such queries as wrong.
    pub fn baseline_judge(
        &self,
        spec: &StrategySpec,
        fact: &FactDescription,
        rule: &LegalRule,
    ) -> Result<(bool, bool)> {
        self.baseline_judge_on(self.backend, spec, fact, rule)
    }

    fn baseline_judge_on(
        &self,
        backend: &dyn Backend,
        spec: &StrategySpec,
        fact: &FactDescription,
        rule: &LegalRule,
    ) -> Result<(bool, bool)> {
        spec.validate()?;
        match spec.strategy {
            Strategy::Malr => Err(Error::Validation(
                "malr is not a baseline; use evaluate with the malr strategy".into(),
            )),
            Strategy::ChainOfLogic => self.chain_of_logic_judge(backend, fact, rule),
            Strategy::ZsCot | Strategy::Lrp | Strategy::FsPrompt | Strategy::FsCot => {
                let template_name = match spec.strategy {
                    Strategy::ZsCot => "baseline_zs_cot",
                    Strategy::Lrp => "baseline_lrp",
                    Strategy::FsPrompt => "baseline_fs_prompt",
                    Strategy::FsCot => "baseline_fs_cot",
                    _ => unreachable!(),
                };
                let template = self.templates.get(template_name)?;
                let mut bindings = std::collections::HashMap::new();
                bindings.insert("question", charge_question(&rule.charge_name));
                bindings.insert("rule", rule.text.clone());
                bindings.insert("fact", fact.text.clone());
                if let Some(exemplars) = &spec.exemplars {
                    bindings.insert("exemplars", exemplars.block());
                }
                let prompt = template.render(&bindings)?;
                let request =
                    CompletionRequest::new(&prompt).with_role(roles::SINGLE_PASS_JUDGE);
                let result = backend.complete(&request)?;
                let (finding, _, flagged) = parse_finding(&result.text);
                Ok((finding == Finding::Satisfied, flagged))
            }
        }
    }

    /// Chain-of-logic baseline: decompose the rule into elements, judge each
    /// element separately, and combine under the same conjunction as the full
    /// pipeline. An empty decomposition is an unparseable verdict.
    fn chain_of_logic_judge(
        &self,
        backend: &dyn Backend,
        fact: &FactDescription,
        rule: &LegalRule,
    ) -> Result<(bool, bool)> {
        let template = self.templates.get("col_decompose")?;
        let mut bindings = std::collections::HashMap::new();
        bindings.insert("rule", rule.text.clone());
        let prompt = template.render(&bindings)?;
        let request = CompletionRequest::new(&prompt).with_role(roles::ELEMENT_LISTER);
        let listing = backend.complete(&request)?;

        let mut labels = Vec::new();
        for label in parse_enumerated_labels(&listing.text) {
            if !labels.contains(&label) {
                labels.push(label);
            }
        }
        if labels.is_empty() {
            return Ok((false, true));
        }
        let tasks = labels
            .iter()
            .map(|label| SubTask::new(label.clone(), 1.0))
            .collect::<Result<Vec<_>>>()?;
        let set = SubTaskSet::new(tasks)?;

        let element_template = self.templates.get("col_element")?;
        let mut answers = Vec::with_capacity(set.len());
        let mut any_flagged = false;
        for task in set.tasks() {
            let mut bindings = std::collections::HashMap::new();
            bindings.insert("element", task.label.clone());
            bindings.insert("rule", rule.text.clone());
            bindings.insert("fact", fact.text.clone());
            let prompt = element_template.render(&bindings)?;
            let request = CompletionRequest::new(&prompt).with_role(roles::ELEMENT_JUDGE);
            let result = backend.complete(&request)?;
            let (finding, rationale, flagged) = parse_finding(&result.text);
            any_flagged |= flagged;
            let mut answer = crate::domain::SubAnswer::new(&task.id, finding);
            answer.rationale = rationale;
            answers.push(answer);
        }
        let verdict = combine(&set, &answers)?;
        Ok((verdict.guilty, any_flagged))
    }

    /// Resolves the per-sub-task insights for one charge according to the
    /// insight mode: the trained bucket when present, nearest-rule transfer
    /// when the charge is untrained, or direct generation from the rule text
    /// alone.
    pub fn resolve_insights(
        &self,
        backend: &dyn Backend,
        flags: &MalrFlags,
        config: &EvalConfig<'_>,
        set: &SubTaskSet,
        charge_name: &str,
        allocator: &mut InsightIdAllocator,
    ) -> Result<BTreeMap<String, Vec<Insight>>> {
        let rule = config.rules.get_rule(charge_name)?;
        let insights = match flags.insight_mode {
            InsightMode::None => Vec::new(),
            InsightMode::Trained => {
                let kb = config.kb.ok_or_else(|| {
                    Error::Validation(
                        "trained insight mode needs an insight KB in the eval config".into(),
                    )
                })?;
                if kb.has_charge(charge_name) {
                    kb.charge_insights(charge_name).into_iter().cloned().collect()
                } else {
                    let embedder = config.embedder.ok_or_else(|| {
                        Error::Validation(
                            "insight transfer for an untrained charge needs an embedder".into(),
                        )
                    })?;
                    transfer_insights(
                        backend,
                        self.templates,
                        embedder,
                        kb,
                        config.rules,
                        rule,
                        set,
                        allocator,
                    )?
                }
            }
            InsightMode::Direct => self.draw_direct_insights(backend, rule, set, allocator)?,
        };
        let mut by_subtask: BTreeMap<String, Vec<Insight>> = BTreeMap::new();
        for insight in insights {
            by_subtask
                .entry(insight.subtask_id.clone())
                .or_default()
                .push(insight);
        }
        Ok(by_subtask)
    }

    /// Generates insights for a rule from its text alone, with no experience
    /// store involved.
    fn draw_direct_insights(
        &self,
        backend: &dyn Backend,
        rule: &LegalRule,
        set: &SubTaskSet,
        allocator: &mut InsightIdAllocator,
    ) -> Result<Vec<Insight>> {
        let template = self.templates.get("insight_direct")?;
        let mut bindings = std::collections::HashMap::new();
        bindings.insert("charge", rule.charge_name.clone());
        bindings.insert("rule", rule.text.clone());
        let prompt = template.render(&bindings)?;
        let request = CompletionRequest::new(&prompt).with_role(roles::INSIGHT_DIRECT);
        let result = backend.complete(&request)?;
        let mut insights = Vec::new();
        for (label, text) in kb::parse_insight_lines(&result.text, "insight-drawer-direct")? {
            let Some(task) = set.by_label(&label) else {
                return Err(Error::ModelOutput {
                    agent: "insight-drawer-direct".into(),
                    reason: format!("output names unknown aspect `{label}`"),
                    raw: result.text.clone(),
                });
            };
            insights.push(Insight {
                id: allocator.next_id(&rule.charge_name, &task.id, InsightSource::Direct),
                charge_name: rule.charge_name.clone(),
                subtask_id: task.id.clone(),
                text,
                source: InsightSource::Direct,
                origin_charge: None,
            });
        }
        Ok(insights)
    }

    /// Runs one strategy over the dataset and aggregates the report. Cases
    /// are evaluated on a bounded worker pool; aggregation sorts by case id
    /// so the report does not depend on completion order.
    pub fn evaluate(
        &self,
        cases: &[CaseRecord],
        spec: &StrategySpec,
        config: &EvalConfig<'_>,
    ) -> Result<EvalReport> {
        spec.validate()?;
        if cases.is_empty() {
            return Err(Error::Validation("evaluation dataset is empty".into()));
        }
        if config.worker_pool_size == 0 {
            return Err(Error::Validation("worker pool size must be at least 1".into()));
        }
        let started = Instant::now();
        let recorder = CallRecorder::new();
        let recording = RecordingBackend::new(self.backend, &recorder);

        let malr_set = if spec.strategy == Strategy::Malr {
            Some(config.set.ok_or_else(|| {
                Error::Validation("the malr strategy needs a planned sub-task set".into())
            })?)
        } else {
            None
        };
        if spec.strategy == Strategy::Malr
            && spec.malr_flags.use_feedback
            && config.oracle.is_none()
        {
            return Err(Error::Validation(
                "knowledge feedback needs an oracle in the eval config".into(),
            ));
        }

        // Insights are charge-level, not case-level, so they are resolved
        // once up front; the per-case workers then only read this map.
        let mut charge_insights: BTreeMap<String, BTreeMap<String, Vec<Insight>>> =
            BTreeMap::new();
        if spec.strategy == Strategy::Malr && spec.malr_flags.use_insights {
            let set = malr_set.expect("set checked above");
            let mut allocator = match config.kb {
                Some(kb) => InsightIdAllocator::seeded_from(kb),
                None => InsightIdAllocator::new(),
            };
            let charges: BTreeSet<&str> = cases
                .iter()
                .flat_map(|case| case.queries.iter().map(|q| q.charge_name.as_str()))
                .collect();
            for charge in charges {
                let resolved = self.resolve_insights(
                    &recording,
                    &spec.malr_flags,
                    config,
                    set,
                    charge,
                    &mut allocator,
                )?;
                charge_insights.insert(charge.to_string(), resolved);
            }
        }

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.worker_pool_size)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        let evaluated: Result<Vec<EvaluatedCase>> = pool.install(|| {
            cases
                .par_iter()
                .map(|case| self.evaluate_case(&recording, case, spec, config, &charge_insights))
                .collect()
        });
        let mut evaluated = evaluated?;
        evaluated.sort_by(|a, b| a.outcome.case_id.cmp(&b.outcome.case_id));

        let outcomes: Vec<CaseEvalOutcome> =
            evaluated.into_iter().map(|case| case.outcome).collect();
        let joint = mean(outcomes.iter().map(|o| o.y_correct as u32 as f64));
        let golden_accept = mean(
            outcomes
                .iter()
                .flat_map(|o| &o.queries)
                .filter(|q| q.expected_guilty)
                .map(|q| (q.judged_guilty && !q.parse_flagged) as u32 as f64),
        );
        let confusing_reject = mean(
            outcomes
                .iter()
                .flat_map(|o| &o.queries)
                .filter(|q| !q.expected_guilty)
                .map(|q| (!q.judged_guilty && !q.parse_flagged) as u32 as f64),
        );
        let mut per_pair = BTreeMap::new();
        let mut pair_counts: BTreeMap<String, (u32, u32)> = BTreeMap::new();
        for outcome in &outcomes {
            if let Some(tag) = &outcome.pair_tag {
                let entry = pair_counts.entry(tag.clone()).or_default();
                entry.0 += outcome.y_correct as u32;
                entry.1 += 1;
            }
        }
        for (tag, (correct, total)) in pair_counts {
            per_pair.insert(tag, f64::from(correct) / f64::from(total));
        }

        let cost =
            CostLedger::from_recorder(&recorder, cases.len(), started.elapsed().as_secs_f64());
        Ok(EvalReport {
            strategy: spec.strategy.name().to_string(),
            dataset_id: config.dataset_id.clone(),
            joint_accuracy: joint,
            golden_accept_rate: golden_accept,
            confusing_reject_rate: confusing_reject,
            per_pair,
            cost,
            per_case_outcomes: outcomes,
        })
    }

    fn evaluate_case(
        &self,
        backend: &dyn Backend,
        case: &CaseRecord,
        spec: &StrategySpec,
        config: &EvalConfig<'_>,
        charge_insights: &BTreeMap<String, BTreeMap<String, Vec<Insight>>>,
    ) -> Result<EvaluatedCase> {
        let queries = match spec.strategy {
            Strategy::Malr => {
                let set = config.set.expect("checked in evaluate");
                let engine = JudgmentEngine::new(backend, self.templates);
                let flags = spec.malr_flags;
                let outcome = engine.predict_case(case, config.rules, set, |charge| {
                    let insights = charge_insights.get(charge).cloned().unwrap_or_default();
                    let feedback = if flags.use_feedback {
                        let oracle = config.oracle.expect("checked in evaluate");
                        gather_feedback(
                            backend,
                            self.templates,
                            oracle,
                            &case.fact,
                            set,
                            &insights,
                        )?
                    } else {
                        BTreeMap::new()
                    };
                    Ok(JudgmentContext {
                        use_insights: flags.use_insights,
                        use_feedback: flags.use_feedback,
                        insight_mode: flags.insight_mode,
                        insights,
                        feedback,
                    })
                })?;
                case.queries
                    .iter()
                    .zip(&outcome.per_query_verdicts)
                    .map(|(query, (_, verdict))| QueryOutcome::new(query, verdict.guilty, false))
                    .collect::<Vec<_>>()
            }
            _ => {
                let mut queries = Vec::with_capacity(case.queries.len());
                for query in &case.queries {
                    let rule = config.rules.get_rule(&query.charge_name)?;
                    let (guilty, flagged) =
                        self.baseline_judge_on(backend, spec, &case.fact, rule)?;
                    queries.push(QueryOutcome::new(query, guilty, flagged));
                }
                queries
            }
        };
        let y_correct = queries.iter().all(|q| q.correct);
        Ok(EvaluatedCase {
            outcome: CaseEvalOutcome {
                case_id: case.fact.case_id.clone(),
                pair_tag: case.pair_tag.clone(),
                queries,
                y_correct,
            },
        })
    }
}

/// The MALR variants compared by the ablation suite, each evaluated over the
/// same dataset. Trainer-flag variants retrain the insight KB with the
/// corresponding stage disabled and are evaluated with feedback off so the
/// comparison isolates the knowledge-base difference.
#[derive(Debug)]
pub struct AblationReportSet {
    pub full: EvalReport,
    pub wo_ask: EvalReport,
    pub wo_insight: EvalReport,
    pub direct: EvalReport,
    pub wo_e_success: EvalReport,
    pub wo_e_esp: EvalReport,
    pub wo_filtering: EvalReport,
}

impl AblationReportSet {
    pub fn labeled_reports(&self) -> Vec<&EvalReport> {
        vec![
            &self.full,
            &self.wo_ask,
            &self.wo_insight,
            &self.direct,
            &self.wo_e_success,
            &self.wo_e_esp,
            &self.wo_filtering,
        ]
    }

    pub fn render_text_table(&self) -> String {
        render_text_table(&self.labeled_reports())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Wire<'a> {
            full: &'a EvalReport,
            wo_ask: &'a EvalReport,
            wo_insight: &'a EvalReport,
            direct: &'a EvalReport,
            wo_e_success: &'a EvalReport,
            wo_e_esp: &'a EvalReport,
            wo_filtering: &'a EvalReport,
        }
        let wire = Wire {
            full: &self.full,
            wo_ask: &self.wo_ask,
            wo_insight: &self.wo_insight,
            direct: &self.direct,
            wo_e_success: &self.wo_e_success,
            wo_e_esp: &self.wo_e_esp,
            wo_filtering: &self.wo_filtering,
        };
        let mut body = serde_json::to_string_pretty(&wire).map_err(|e| Error::DataFormat {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        body.push('\n');
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

/// Inputs shared by every run of the ablation suite.
pub struct AblationInputs<'a> {
    pub train_cases: &'a [CaseRecord],
    pub rules: &'a RuleKB,
    pub set: &'a SubTaskSet,
    pub embedder: &'a dyn Embedder,
    pub oracle: &'a FeedbackOracle<'a>,
    pub dataset_id: String,
    pub worker_pool_size: usize,
}

/// Trains the insight KB under each trainer-flag variant, then evaluates the
/// MALR strategy once per augmentation variant over the same dataset.
pub fn compare_ablations(
    harness: &EvalHarness<'_>,
    eval_cases: &[CaseRecord],
    inputs: &AblationInputs<'_>,
) -> Result<AblationReportSet> {
    let units = TrainingUnit::units_from_cases(inputs.train_cases);
    let train = |mutate: fn(&mut TrainerConfig)| -> Result<InsightKB> {
        let mut config = TrainerConfig::new(units.clone());
        mutate(&mut config);
        let trainer = Trainer::new(harness.backend, harness.templates, config)?;
        let (kb, _) = trainer.run_training(inputs.train_cases, inputs.rules, inputs.set)?;
        Ok(kb)
    };
    let kb_full = train(|_| {})?;
    let kb_wo_success = train(|c| c.enable_success_experience = false)?;
    let kb_wo_esp = train(|c| c.enable_esp_experience = false)?;
    let kb_wo_filtering = train(|c| c.enable_filtering = false)?;

    let run = |label: &str, flags: MalrFlags, kb: Option<&InsightKB>| -> Result<EvalReport> {
        let config = EvalConfig {
            dataset_id: inputs.dataset_id.clone(),
            worker_pool_size: inputs.worker_pool_size,
            rules: inputs.rules,
            set: Some(inputs.set),
            kb,
            embedder: Some(inputs.embedder),
            oracle: flags.use_feedback.then_some(inputs.oracle),
        };
        let mut report = harness.evaluate(eval_cases, &StrategySpec::malr(flags), &config)?;
        report.strategy = label.to_string();
        Ok(report)
    };

    let trained_no_ask = MalrFlags {
        use_insights: true,
        use_feedback: false,
        insight_mode: InsightMode::Trained,
    };
    Ok(AblationReportSet {
        full: run("malr", MalrFlags::full(), Some(&kb_full))?,
        wo_ask: run("malr_wo_ask", trained_no_ask, Some(&kb_full))?,
        wo_insight: run(
            "malr_wo_insight",
            MalrFlags {
                use_insights: false,
                use_feedback: true,
                insight_mode: InsightMode::None,
            },
            None,
        )?,
        direct: run(
            "malr_direct",
            MalrFlags {
                use_insights: true,
                use_feedback: false,
                insight_mode: InsightMode::Direct,
            },
            None,
        )?,
        wo_e_success: run("malr_wo_e_success", trained_no_ask, Some(&kb_wo_success))?,
        wo_e_esp: run("malr_wo_e_esp", trained_no_ask, Some(&kb_wo_esp))?,
        wo_filtering: run("malr_wo_filtering", trained_no_ask, Some(&kb_wo_filtering))?,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0u32;
    for value in values {
        sum += value;
        count += 1;
    }
    (count > 0).then(|| sum / f64::from(count))
}
