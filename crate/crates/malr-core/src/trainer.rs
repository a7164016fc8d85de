//! Experience gaining and insight drawing.
//!
//! Each training unit pairs a golden charge with its confusing partner over
//! one sample case. Both charges are judged, the verdicts are checked against
//! ground truth, and failed roles go through aspect-level self-reflection and
//! a bounded retry loop: at most `max_trials` rounds per unit, with only the
//! aspects the reflector named re-answered and everything else carried over.
//! First-trial successes become success experiences; later successes keep
//! their failed predecessor as an error-success pair experience; units that
//! never succeed are reported unresolved and store nothing.
//!
//! Drawing turns experiences into if-then insights: error-success pairs are
//! contrasted per changed aspect under the rule that was misjudged, success
//! experiences are distilled from the whole trajectory pair. All insights
//! from a unit are keyed to the unit's golden (training) charge, and a
//! per-charge filter pass removes redundant ones before the single commit
//! into the knowledge base.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::Serialize;

use crate::domain::{
    CaseRecord, FactDescription, LegalRule, Role, SubAnswer, SubTaskSet, Trajectory,
};
use crate::error::{Error, Result};
use crate::gateway::{roles, Backend, CompletionRequest, TemplateLibrary};
use crate::judgment::{combine, AgentSpec, JudgmentContext, JudgmentEngine};
use crate::kb::{self, Insight, InsightIdAllocator, InsightKB, InsightSource, RuleKB};

/// One training step: a golden charge, its confusing partner, and the sample
/// case both are judged against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingUnit {
    pub golden_charge: String,
    pub confusing_charge: String,
    pub case_id: String,
}

impl TrainingUnit {
    /// One unit per paired training case: the first query is the golden
    /// charge, the second the confusing one. Single-query records have no
    /// confusing partner and are skipped.
    pub fn units_from_cases(cases: &[CaseRecord]) -> Vec<TrainingUnit> {
        cases
            .iter()
            .filter_map(|case| {
                let golden = case.queries.first()?;
                let confusing = case.queries.get(1)?;
                (golden.expected_guilty && !confusing.expected_guilty).then(|| TrainingUnit {
                    golden_charge: golden.charge_name.clone(),
                    confusing_charge: confusing.charge_name.clone(),
                    case_id: case.fact.case_id.clone(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub max_trials: u32,
    pub units: Vec<TrainingUnit>,
    pub enable_success_experience: bool,
    pub enable_esp_experience: bool,
    pub enable_filtering: bool,
}

impl TrainerConfig {
    pub const DEFAULT_MAX_TRIALS: u32 = 2;

    pub fn new(units: Vec<TrainingUnit>) -> Self {
        Self {
            max_trials: Self::DEFAULT_MAX_TRIALS,
            units,
            enable_success_experience: true,
            enable_esp_experience: true,
            enable_filtering: true,
        }
    }

    #[must_use]
    pub fn with_max_trials(mut self, max_trials: u32) -> Self {
        self.max_trials = max_trials;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_trials == 0 {
            return Err(Error::Config("max_trials must be at least 1".into()));
        }
        if self.units.is_empty() {
            return Err(Error::Config("training needs at least one unit".into()));
        }
        Ok(())
    }
}

/// Which roles of a trial round came out wrong against ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialEvaluation {
    pub success: bool,
    pub wrong_roles: Vec<Role>,
}

/// Output of the aspect-level self-reflector for one failed trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReflectionReport {
    pub error_subtask_ids: Vec<String>,
    pub reasons: BTreeMap<String, String>,
    pub target_role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperienceKind {
    Success,
    ErrorSuccessPair,
}

/// One resolved training unit's trajectories. Success experiences hold only
/// the first-trial pair; error-success pairs additionally keep the failed
/// trial that preceded the corrected one.
#[derive(Debug, Clone)]
pub struct Experience {
    pub kind: ExperienceKind,
    pub charge_name: String,
    pub confusing_name: String,
    pub case_id: String,
    pub success_trajectories: (Trajectory, Trajectory),
    pub failed_trajectories: Option<(Trajectory, Trajectory)>,
    pub reflection: Option<ReflectionReport>,
}

impl Experience {
    pub fn validate(&self) -> Result<()> {
        let (gc, cc) = &self.success_trajectories;
        match self.kind {
            ExperienceKind::Success => {
                if gc.trial_index != 1 || cc.trial_index != 1 {
                    return Err(Error::Validation(format!(
                        "success experience for `{}` must come from trial 1",
                        self.charge_name
                    )));
                }
                if self.failed_trajectories.is_some() {
                    return Err(Error::Validation(format!(
                        "success experience for `{}` must not carry failed trajectories",
                        self.charge_name
                    )));
                }
            }
            ExperienceKind::ErrorSuccessPair => {
                if gc.trial_index <= 1 && cc.trial_index <= 1 {
                    return Err(Error::Validation(format!(
                        "error-success experience for `{}` must come from a retry trial",
                        self.charge_name
                    )));
                }
                if self.failed_trajectories.is_none() {
                    return Err(Error::Validation(format!(
                        "error-success experience for `{}` needs its failed trajectories",
                        self.charge_name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// An erroneous answer contrasted with its corrected counterpart for one
/// sub-task.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSuccessPair {
    pub subtask_id: String,
    pub error_answer: SubAnswer,
    pub success_answer: SubAnswer,
}

impl ErrorSuccessPair {
    pub fn new(error_answer: SubAnswer, success_answer: SubAnswer) -> Result<Self> {
        if error_answer.subtask_id != success_answer.subtask_id {
            return Err(Error::Validation(format!(
                "pair mixes sub-tasks `{}` and `{}`",
                error_answer.subtask_id, success_answer.subtask_id
            )));
        }
        if error_answer.finding == success_answer.finding {
            return Err(Error::Validation(format!(
                "pair for `{}` has identical findings on both sides",
                error_answer.subtask_id
            )));
        }
        Ok(Self {
            subtask_id: error_answer.subtask_id.clone(),
            error_answer,
            success_answer,
        })
    }
}

/// How one unit ended: the experience if it resolved, and at which trial.
#[derive(Debug, Clone)]
pub struct UnitOutcome {
    pub unit: TrainingUnit,
    pub resolved_at_trial: Option<u32>,
    pub experience: Option<Experience>,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct UnitSummary {
    pub case_id: String,
    pub confusing_charge: String,
    pub resolved_at_trial: Option<u32>,
    pub experience_kind: Option<ExperienceKind>,
}

#[derive(Debug, Clone, Default, Serialize, PartialEq, Eq)]
pub struct ChargeTrainingSummary {
    pub units: Vec<UnitSummary>,
    pub insights_written: usize,
    pub unresolved: usize,
}

#[derive(Debug, Clone, Default, Serialize, PartialEq, Eq)]
pub struct TrainingTotals {
    pub units: usize,
    pub resolved: usize,
    pub unresolved: usize,
    pub experiences_success: usize,
    pub experiences_error_success_pair: usize,
    pub insights_written: usize,
}

/// Structured training report, keyed by golden charge.
#[derive(Debug, Clone, Default, Serialize, PartialEq, Eq)]
pub struct TrainingReport {
    pub charges: BTreeMap<String, ChargeTrainingSummary>,
    pub totals: TrainingTotals,
}

pub struct Trainer<'a> {
    engine: JudgmentEngine<'a>,
    backend: &'a dyn Backend,
    templates: &'a TemplateLibrary,
    config: TrainerConfig,
    evaluate_counts: Mutex<BTreeMap<String, u32>>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        backend: &'a dyn Backend,
        templates: &'a TemplateLibrary,
        config: TrainerConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            engine: JudgmentEngine::new(backend, templates),
            backend,
            templates,
            config,
            evaluate_counts: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    /// Trial rounds evaluated per unit, keyed `case_id::golden_charge`. Test
    /// hook for the trial-budget invariant.
    pub fn evaluate_counts(&self) -> BTreeMap<String, u32> {
        self.evaluate_counts
            .lock()
            .expect("evaluate counter lock poisoned")
            .clone()
    }

    /// Checks one trial round against ground truth: success iff the golden
    /// charge came out guilty and the confusing one did not.
    pub fn evaluate_trial(
        &self,
        set: &SubTaskSet,
        golden: &Trajectory,
        confusing: &Trajectory,
    ) -> Result<TrialEvaluation> {
        let golden_verdict = combine(set, golden.answers())?;
        let confusing_verdict = combine(set, confusing.answers())?;
        let mut wrong_roles = Vec::new();
        if !golden_verdict.guilty {
            wrong_roles.push(Role::Golden);
        }
        if confusing_verdict.guilty {
            wrong_roles.push(Role::Confusing);
        }
        Ok(TrialEvaluation {
            success: wrong_roles.is_empty(),
            wrong_roles,
        })
    }

    /// One self-reflection call over a failed trajectory, parsed into the
    /// erroneous aspects and one reason each.
    pub fn reflect(
        &self,
        trajectory: &Trajectory,
        rule: &LegalRule,
        fact: &FactDescription,
        set: &SubTaskSet,
    ) -> Result<ReflectionReport> {
        let expected = if trajectory.role.expected_guilty() {
            "guilty"
        } else {
            "not guilty"
        };
        let template = self.templates.get("reflect")?;
        let mut bindings = std::collections::HashMap::new();
        bindings.insert("charge", trajectory.charge_name.clone());
        bindings.insert("target_role", trajectory.role.to_string());
        bindings.insert("expected", expected.to_string());
        bindings.insert("rule", rule.text.clone());
        bindings.insert("fact", fact.text.clone());
        bindings.insert("findings", findings_lines(set, trajectory));
        let prompt = template.render(&bindings)?;
        let request = CompletionRequest::new(&prompt).with_role(roles::REFLECTOR);
        let result = self.backend.complete(&request)?;

        let mut error_subtask_ids = Vec::new();
        let mut reasons = BTreeMap::new();
        for line in result.text.lines() {
            let Some(rest) = line.trim().strip_prefix("ERROR:") else {
                continue;
            };
            let Some((label, reason)) = rest.split_once('|') else {
                return Err(Error::ModelOutput {
                    agent: "self-reflector".into(),
                    reason: "ERROR line is missing the `|` separator".into(),
                    raw: result.text.clone(),
                });
            };
            let label = label.trim();
            let Some(task) = set.by_label(label) else {
                return Err(Error::Validation(format!(
                    "self-reflector named `{label}`, which is not in the sub-task set"
                )));
            };
            if !error_subtask_ids.contains(&task.id) {
                error_subtask_ids.push(task.id.clone());
                reasons.insert(task.id.clone(), reason.trim().to_string());
            }
        }
        if error_subtask_ids.is_empty() {
            return Err(Error::ModelOutput {
                agent: "self-reflector".into(),
                reason: "reflection names no erroneous aspect".into(),
                raw: result.text,
            });
        }
        Ok(ReflectionReport {
            error_subtask_ids,
            reasons,
            target_role: trajectory.role,
        })
    }

    /// Re-answers only the aspects the reflection named, injecting the reason
    /// into the agent's reflection slot; every other answer is carried over.
    pub fn retry_subtasks(
        &self,
        trajectory: &Trajectory,
        report: &ReflectionReport,
        rule: &LegalRule,
        fact: &FactDescription,
        set: &SubTaskSet,
    ) -> Result<Trajectory> {
        if trajectory.trial_index >= self.config.max_trials {
            return Err(Error::TrialBudget {
                charge: trajectory.charge_name.clone(),
                max_trials: self.config.max_trials,
            });
        }
        let ctx = JudgmentContext::bare();
        let mut next = trajectory.clone().carried_into_next_trial();
        for subtask_id in &report.error_subtask_ids {
            let task = set.get(subtask_id).ok_or_else(|| {
                Error::Validation(format!("reflection names unknown sub-task `{subtask_id}`"))
            })?;
            let agent = AgentSpec::for_subtask(task);
            let reason = report.reasons.get(subtask_id).map(String::as_str);
            let answer = self.engine.answer_subtask(&agent, rule, fact, &ctx, reason)?;
            next.replace_answer(answer)?;
        }
        Ok(next)
    }

    /// Runs the bounded trial loop for one unit.
    pub fn gain_experience_unit(
        &self,
        unit: &TrainingUnit,
        cases: &[CaseRecord],
        rules: &RuleKB,
        set: &SubTaskSet,
    ) -> Result<UnitOutcome> {
        let case = cases
            .iter()
            .find(|c| c.fact.case_id == unit.case_id)
            .ok_or_else(|| {
                Error::Validation(format!("training case `{}` not found", unit.case_id))
            })?;
        let golden_rule = rules.get_rule(&unit.golden_charge)?;
        let confusing_rule = rules.get_rule(&unit.confusing_charge)?;
        let ctx = JudgmentContext::bare();

        let (_, mut golden) = self.engine.judge_charge(
            &case.fact,
            golden_rule,
            set,
            &ctx,
            Role::Golden,
            1,
        )?;
        let (_, mut confusing) = self.engine.judge_charge(
            &case.fact,
            confusing_rule,
            set,
            &ctx,
            Role::Confusing,
            1,
        )?;
        let mut last_failed: Option<(Trajectory, Trajectory)> = None;
        let mut last_reflection: Option<ReflectionReport> = None;

        loop {
            self.count_evaluation(unit);
            let evaluation = self.evaluate_trial(set, &golden, &confusing)?;
            if evaluation.success {
                let trial = golden.trial_index.max(confusing.trial_index);
                let kind = if trial == 1 {
                    ExperienceKind::Success
                } else {
                    ExperienceKind::ErrorSuccessPair
                };
                let experience = Experience {
                    kind,
                    charge_name: unit.golden_charge.clone(),
                    confusing_name: unit.confusing_charge.clone(),
                    case_id: unit.case_id.clone(),
                    success_trajectories: (golden, confusing),
                    failed_trajectories: match kind {
                        ExperienceKind::Success => None,
                        ExperienceKind::ErrorSuccessPair => last_failed,
                    },
                    reflection: last_reflection,
                };
                experience.validate()?;
                return Ok(UnitOutcome {
                    unit: unit.clone(),
                    resolved_at_trial: Some(trial),
                    experience: Some(experience),
                });
            }
            if golden.trial_index >= self.config.max_trials {
                return Ok(UnitOutcome {
                    unit: unit.clone(),
                    resolved_at_trial: None,
                    experience: None,
                });
            }

            last_failed = Some((golden.clone(), confusing.clone()));
            let mut next_golden = None;
            let mut next_confusing = None;
            for role in &evaluation.wrong_roles {
                let (trajectory, rule) = match role {
                    Role::Golden => (&golden, golden_rule),
                    Role::Confusing => (&confusing, confusing_rule),
                };
                // A reflection the loop cannot parse leaves the unit
                // unresolved rather than aborting the whole run; transport
                // failures still propagate.
                let report = match self.reflect(trajectory, rule, &case.fact, set) {
                    Ok(report) => report,
                    Err(Error::ModelOutput { .. }) => {
                        return Ok(UnitOutcome {
                            unit: unit.clone(),
                            resolved_at_trial: None,
                            experience: None,
                        });
                    }
                    Err(other) => return Err(other),
                };
                let retried = self.retry_subtasks(trajectory, &report, rule, &case.fact, set)?;
                match role {
                    Role::Golden => next_golden = Some(retried),
                    Role::Confusing => next_confusing = Some(retried),
                }
                last_reflection = Some(report);
            }
            golden = next_golden.unwrap_or_else(|| golden.carried_into_next_trial());
            confusing = next_confusing.unwrap_or_else(|| confusing.carried_into_next_trial());
        }
    }

    /// Trial loops for every configured unit. Returns the stored experiences
    /// and the golden charges of units that never succeeded.
    pub fn gain_experience(
        &self,
        cases: &[CaseRecord],
        rules: &RuleKB,
        set: &SubTaskSet,
    ) -> Result<(Vec<Experience>, Vec<String>)> {
        let outcomes = self.unit_outcomes(cases, rules, set)?;
        let mut experiences = Vec::new();
        let mut unresolved = Vec::new();
        for outcome in outcomes {
            match outcome.experience {
                Some(experience) => experiences.push(experience),
                None => unresolved.push(outcome.unit.golden_charge),
            }
        }
        Ok((experiences, unresolved))
    }

    fn unit_outcomes(
        &self,
        cases: &[CaseRecord],
        rules: &RuleKB,
        set: &SubTaskSet,
    ) -> Result<Vec<UnitOutcome>> {
        self.config.validate()?;
        let mut outcomes = Vec::with_capacity(self.config.units.len());
        for unit in &self.config.units {
            let outcome = self
                .gain_experience_unit(unit, cases, rules, set)
                .map_err(|e| match e {
                    Error::Validation(message) => Error::Validation(format!(
                        "training `{}` against `{}`: {message}",
                        unit.golden_charge, unit.confusing_charge
                    )),
                    other => other,
                })?;
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }

    /// The per-sub-task error-success pairs of one experience: exactly the
    /// sub-tasks whose finding changed between the failed and the corrected
    /// trajectory, for each role.
    pub fn pairs_from_experience(experience: &Experience) -> Result<Vec<(Role, ErrorSuccessPair)>> {
        if experience.kind != ExperienceKind::ErrorSuccessPair {
            return Err(Error::Validation(
                "pairs can only be constructed from error-success experiences".into(),
            ));
        }
        let Some((failed_gc, failed_cc)) = &experience.failed_trajectories else {
            return Err(Error::Validation(
                "error-success experience is missing its failed trajectories".into(),
            ));
        };
        let (success_gc, success_cc) = &experience.success_trajectories;
        let mut pairs = Vec::new();
        for (role, failed, success) in [
            (Role::Golden, failed_gc, success_gc),
            (Role::Confusing, failed_cc, success_cc),
        ] {
            for failed_answer in failed.answers() {
                let Some(success_answer) = success.answer_for(&failed_answer.subtask_id) else {
                    continue;
                };
                if failed_answer.finding != success_answer.finding {
                    pairs.push((
                        role,
                        ErrorSuccessPair::new(failed_answer.clone(), success_answer.clone())?,
                    ));
                }
            }
        }
        Ok(pairs)
    }

    /// Draws one if-then insight from a contrasted pair. The rule shown to
    /// the drawer is the one that was misjudged; the insight is stored under
    /// the unit's golden charge.
    pub fn draw_insight_from_pair(
        &self,
        pair: &ErrorSuccessPair,
        erring_rule: &LegalRule,
        storage_charge: &str,
        set: &SubTaskSet,
        allocator: &mut InsightIdAllocator,
    ) -> Result<Insight> {
        let task = set.get(&pair.subtask_id).ok_or_else(|| {
            Error::Validation(format!("pair references unknown sub-task `{}`", pair.subtask_id))
        })?;
        let template = self.templates.get("insight_pair")?;
        let mut bindings = std::collections::HashMap::new();
        bindings.insert("charge", erring_rule.charge_name.clone());
        bindings.insert("aspect", task.label.clone());
        bindings.insert("rule", erring_rule.text.clone());
        bindings.insert(
            "error_answer",
            format!("{} — {}", pair.error_answer.finding, pair.error_answer.rationale),
        );
        bindings.insert(
            "success_answer",
            format!("{} — {}", pair.success_answer.finding, pair.success_answer.rationale),
        );
        let prompt = template.render(&bindings)?;
        let request = CompletionRequest::new(&prompt).with_role(roles::INSIGHT_PAIR);
        let result = self.backend.complete(&request)?;
        let text = result.text.trim().to_string();
        if !has_if_then_structure(&text) {
            return Err(Error::ModelOutput {
                agent: "insight-drawer-pair".into(),
                reason: "insight lacks if-then structure".into(),
                raw: result.text,
            });
        }
        Ok(Insight {
            id: allocator.next_id(storage_charge, &task.id, InsightSource::ErrorSuccessPair),
            charge_name: storage_charge.to_string(),
            subtask_id: task.id.clone(),
            text,
            source: InsightSource::ErrorSuccessPair,
            origin_charge: None,
        })
    }

    /// Distills a whole success experience into per-aspect insights.
    pub fn draw_insight_from_success(
        &self,
        experience: &Experience,
        rules: &RuleKB,
        set: &SubTaskSet,
        allocator: &mut InsightIdAllocator,
    ) -> Result<Vec<Insight>> {
        if experience.kind != ExperienceKind::Success {
            return Err(Error::Validation(
                "whole-trajectory drawing applies only to success experiences".into(),
            ));
        }
        let golden_rule = rules.get_rule(&experience.charge_name)?;
        let (golden, confusing) = &experience.success_trajectories;
        let findings = [
            tagged_findings_lines(set, golden, "golden"),
            tagged_findings_lines(set, confusing, "confusing"),
        ]
        .join("\n");
        let template = self.templates.get("insight_success")?;
        let mut bindings = std::collections::HashMap::new();
        bindings.insert("golden_charge", experience.charge_name.clone());
        bindings.insert("confusing_charge", experience.confusing_name.clone());
        bindings.insert("rule", golden_rule.text.clone());
        bindings.insert("findings", findings);
        let prompt = template.render(&bindings)?;
        let request = CompletionRequest::new(&prompt).with_role(roles::INSIGHT_SUCCESS);
        let result = self.backend.complete(&request)?;

        let parsed = kb::parse_insight_lines(&result.text, "insight-drawer-success")?;
        if parsed.is_empty() {
            return Err(Error::ModelOutput {
                agent: "insight-drawer-success".into(),
                reason: "success drawing produced no INSIGHT lines".into(),
                raw: result.text,
            });
        }
        let mut insights = Vec::new();
        for (label, text) in parsed {
            let Some(task) = set.by_label(&label) else {
                return Err(Error::ModelOutput {
                    agent: "insight-drawer-success".into(),
                    reason: format!("output names unknown aspect `{label}`"),
                    raw: String::new(),
                });
            };
            insights.push(Insight {
                id: allocator.next_id(&experience.charge_name, &task.id, InsightSource::Success),
                charge_name: experience.charge_name.clone(),
                subtask_id: task.id.clone(),
                text,
                source: InsightSource::Success,
                origin_charge: None,
            });
        }
        Ok(insights)
    }

    /// One filter call over a charge's accumulated insights. The result is a
    /// subset of the input in input order; an empty bucket skips the call.
    pub fn filter_insights(&self, charge_name: &str, bucket: Vec<Insight>) -> Result<Vec<Insight>> {
        if bucket.is_empty() {
            return Ok(bucket);
        }
        let listing = bucket
            .iter()
            .map(|insight| format!("- {} :: {}", insight.id, insight.text))
            .collect::<Vec<_>>()
            .join("\n");
        let template = self.templates.get("insight_filter")?;
        let mut bindings = std::collections::HashMap::new();
        bindings.insert("charge", charge_name.to_string());
        bindings.insert("insights", listing);
        let prompt = template.render(&bindings)?;
        let request = CompletionRequest::new(&prompt).with_role(roles::INSIGHT_FILTER);
        let result = self.backend.complete(&request)?;

        let mut kept_ids = Vec::new();
        for line in result.text.lines() {
            let Some(id) = line.trim().strip_prefix("KEEP:") else {
                continue;
            };
            let id = id.trim().to_string();
            if !bucket.iter().any(|insight| insight.id == id) {
                return Err(Error::ModelOutput {
                    agent: "insight-filter".into(),
                    reason: format!("filter kept unknown insight id `{id}`"),
                    raw: result.text.clone(),
                });
            }
            if !kept_ids.contains(&id) {
                kept_ids.push(id);
            }
        }
        Ok(bucket
            .into_iter()
            .filter(|insight| kept_ids.contains(&insight.id))
            .collect())
    }

    /// Full training pass: experience gaining, gated drawing, per-charge
    /// filtering, and a single commit into a fresh insight KB.
    pub fn run_training(
        &self,
        cases: &[CaseRecord],
        rules: &RuleKB,
        set: &SubTaskSet,
    ) -> Result<(InsightKB, TrainingReport)> {
        let outcomes = self.unit_outcomes(cases, rules, set)?;
        let mut allocator = InsightIdAllocator::new();
        let mut staged: BTreeMap<String, Vec<Insight>> = BTreeMap::new();
        let mut report = TrainingReport::default();

        for outcome in &outcomes {
            let summary = report
                .charges
                .entry(outcome.unit.golden_charge.clone())
                .or_default();
            summary.units.push(UnitSummary {
                case_id: outcome.unit.case_id.clone(),
                confusing_charge: outcome.unit.confusing_charge.clone(),
                resolved_at_trial: outcome.resolved_at_trial,
                experience_kind: outcome.experience.as_ref().map(|e| e.kind),
            });
            report.totals.units += 1;
            match &outcome.experience {
                Some(experience) => {
                    report.totals.resolved += 1;
                    match experience.kind {
                        ExperienceKind::Success => report.totals.experiences_success += 1,
                        ExperienceKind::ErrorSuccessPair => {
                            report.totals.experiences_error_success_pair += 1;
                        }
                    }
                }
                None => {
                    report.totals.unresolved += 1;
                    summary.unresolved += 1;
                }
            }
        }

        for outcome in &outcomes {
            let Some(experience) = &outcome.experience else {
                continue;
            };
            let drawn = match experience.kind {
                ExperienceKind::ErrorSuccessPair if self.config.enable_esp_experience => {
                    let mut drawn = Vec::new();
                    for (role, pair) in Self::pairs_from_experience(experience)? {
                        let erring_charge = match role {
                            Role::Golden => &experience.charge_name,
                            Role::Confusing => &experience.confusing_name,
                        };
                        let erring_rule = rules.get_rule(erring_charge)?;
                        drawn.push(self.draw_insight_from_pair(
                            &pair,
                            erring_rule,
                            &experience.charge_name,
                            set,
                            &mut allocator,
                        )?);
                    }
                    drawn
                }
                ExperienceKind::Success if self.config.enable_success_experience => {
                    self.draw_insight_from_success(experience, rules, set, &mut allocator)?
                }
                _ => Vec::new(),
            };
            staged
                .entry(experience.charge_name.clone())
                .or_default()
                .extend(drawn);
        }

        let mut kb = InsightKB::new();
        for (charge_name, bucket) in staged {
            let kept = if self.config.enable_filtering {
                self.filter_insights(&charge_name, bucket)?
            } else {
                bucket
            };
            let written = kept.len();
            for insight in kept {
                kb.put_insight(insight)?;
            }
            if let Some(summary) = report.charges.get_mut(&charge_name) {
                summary.insights_written = written;
            }
            report.totals.insights_written += written;
        }
        Ok((kb, report))
    }

    fn count_evaluation(&self, unit: &TrainingUnit) {
        let key = format!("{}::{}", unit.case_id, unit.golden_charge);
        *self
            .evaluate_counts
            .lock()
            .expect("evaluate counter lock poisoned")
            .entry(key)
            .or_insert(0) += 1;
    }
}

pub fn save_training_report(report: &TrainingReport, path: &std::path::Path) -> Result<()> {
    let mut body = serde_json::to_string_pretty(report).map_err(|e| Error::DataFormat {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    body.push('\n');
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn findings_lines(set: &SubTaskSet, trajectory: &Trajectory) -> String {
    set.tasks()
        .iter()
        .filter_map(|task| {
            trajectory
                .answer_for(&task.id)
                .map(|answer| format!("- {}: {}", task.label, answer.finding))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn tagged_findings_lines(set: &SubTaskSet, trajectory: &Trajectory, tag: &str) -> String {
    set.tasks()
        .iter()
        .filter_map(|task| {
            trajectory
                .answer_for(&task.id)
                .map(|answer| format!("- [{tag}] {}: {}", task.label, answer.finding))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn has_if_then_structure(text: &str) -> bool {
    let lowered = text.to_lowercase();
    let has_word =
        |word: &str| lowered.split(|c: char| !c.is_alphanumeric()).any(|w| w == word);
    has_word("if") && has_word("then")
}
