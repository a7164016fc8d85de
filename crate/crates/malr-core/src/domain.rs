//! Shared value types for the charge-prediction pipeline.
//!
//! Everything here is an immutable value after construction, safe to share
//! across worker threads. Serialization of persisted artifacts lives in the
//! `kb` and `eval` modules; these types only define the shapes.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::RuleKB;

/// A concise natural-language description of one legal case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactDescription {
    pub case_id: String,
    pub text: String,
}

impl FactDescription {
    pub fn new(case_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let case_id = case_id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Validation(format!(
                "fact text for case `{case_id}` is empty"
            )));
        }
        Ok(Self { case_id, text })
    }
}

/// The definition of one criminal charge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegalRule {
    /// Canonical charge label; the lookup key of the rule KB.
    #[serde(rename = "name")]
    pub charge_name: String,
    /// Full rule definition text.
    #[serde(rename = "rule")]
    pub text: String,
    /// Optional source citation.
    pub article_ref: Option<String>,
}

impl LegalRule {
    pub fn new(charge_name: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let charge_name = charge_name.into();
        let text = text.into();
        if charge_name.trim().is_empty() {
            return Err(Error::Validation("rule has an empty charge name".into()));
        }
        if text.trim().is_empty() {
            return Err(Error::Validation(format!(
                "rule text for charge `{charge_name}` is empty"
            )));
        }
        Ok(Self {
            charge_name,
            text,
            article_ref: None,
        })
    }

    #[must_use]
    pub fn with_article_ref(mut self, article_ref: impl Into<String>) -> Self {
        self.article_ref = Some(article_ref.into());
        self
    }
}

/// One charge to judge for a case, with the verdict the label expects.
///
/// Golden charges expect `true`; confusing charges and the similar charge of
/// an innocent case expect `false`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargeQuery {
    #[serde(rename = "charge")]
    pub charge_name: String,
    #[serde(rename = "expected")]
    pub expected_guilty: bool,
}

/// A case fact plus the ordered list of charges to judge against it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseRecord {
    pub fact: FactDescription,
    pub queries: Vec<ChargeQuery>,
    /// Label of the confusing-charge pair this case belongs to, for
    /// per-pair breakdown reporting.
    pub pair_tag: Option<String>,
}

impl CaseRecord {
    /// The first query expecting a guilty verdict, if any (absent for
    /// innocent-style records).
    pub fn golden_query(&self) -> Option<&ChargeQuery> {
        self.queries.iter().find(|q| q.expected_guilty)
    }

    /// The first query expecting a not-guilty verdict, if any.
    pub fn confusing_query(&self) -> Option<&ChargeQuery> {
        self.queries.iter().find(|q| !q.expected_guilty)
    }
}

/// One violation found while validating an externally supplied case record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyFact,
    NoQueries,
    UnknownCharge(String),
    DuplicateCharge(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyFact => write!(f, "empty fact"),
            Violation::NoQueries => write!(f, "record has no charge queries"),
            Violation::UnknownCharge(c) => write!(f, "unknown charge `{c}`"),
            Violation::DuplicateCharge(c) => write!(f, "duplicate charge `{c}`"),
        }
    }
}

/// Checks an externally constructed record against the rule KB. Returns the
/// full violation list instead of failing on the first problem so a loader
/// can report everything at once.
pub fn validate_case(record: &CaseRecord, rules: &RuleKB) -> Vec<Violation> {
    let mut violations = Vec::new();
    if record.fact.text.trim().is_empty() {
        violations.push(Violation::EmptyFact);
    }
    if record.queries.is_empty() {
        violations.push(Violation::NoQueries);
    }
    let mut seen = BTreeSet::new();
    for query in &record.queries {
        if !seen.insert(query.charge_name.as_str()) {
            violations.push(Violation::DuplicateCharge(query.charge_name.clone()));
        }
        if rules.get_rule(&query.charge_name).is_err() {
            violations.push(Violation::UnknownCharge(query.charge_name.clone()));
        }
    }
    violations
}

/// One rule aspect produced by the planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTask {
    /// Stable identifier, derived from the label.
    pub id: String,
    /// Short canonical name, e.g. "Subject".
    pub label: String,
    /// One-sentence scope of the aspect.
    pub description: String,
    /// Fraction of training samples that proposed this aspect.
    pub probability: f64,
}

impl SubTask {
    pub fn new(label: impl Into<String>, probability: f64) -> Result<Self> {
        let label = label.into();
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::Validation(format!(
                "sub-task `{label}` probability {probability} outside [0,1]"
            )));
        }
        if label.trim().is_empty() {
            return Err(Error::Validation("sub-task label is empty".into()));
        }
        let id = slug(&label);
        let description = format!("Whether the fact satisfies the {label} aspect of the rule.");
        Ok(Self {
            id,
            label,
            description,
            probability,
        })
    }
}

/// Standard phrasing of the yes/no question every judgment answers for a
/// charge. Shared by the planner and the judgment engine so prompts stay
/// consistent across stages.
pub fn charge_question(charge_name: &str) -> String {
    format!("Does the fact described below constitute the charge of {charge_name}?")
}

/// Lowercases a label and collapses non-alphanumeric runs into hyphens,
/// producing the stable sub-task id.
pub fn slug(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    let mut pending_sep = false;
    for ch in label.trim().chars() {
        if ch.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('-');
            }
            pending_sep = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

/// The ordered, validated set of sub-tasks produced by planning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SubTask>", into = "Vec<SubTask>")]
pub struct SubTaskSet {
    tasks: Vec<SubTask>,
}

impl SubTaskSet {
    pub fn new(tasks: Vec<SubTask>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for task in &tasks {
            if !seen.insert(task.id.as_str()) {
                return Err(Error::DuplicateId(task.id.clone()));
            }
        }
        Ok(Self { tasks })
    }

    pub fn tasks(&self) -> &[SubTask] {
        &self.tasks
    }

    pub fn get(&self, id: &str) -> Option<&SubTask> {
        self.tasks.iter().find(|t| t.id == id)
    }

    /// Resolves a label (case-insensitively, via its slug) to the sub-task.
    pub fn by_label(&self, label: &str) -> Option<&SubTask> {
        let wanted = slug(label);
        self.tasks.iter().find(|t| t.id == wanted)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

impl TryFrom<Vec<SubTask>> for SubTaskSet {
    type Error = Error;

    fn try_from(tasks: Vec<SubTask>) -> Result<Self> {
        SubTaskSet::new(tasks)
    }
}

impl From<SubTaskSet> for Vec<SubTask> {
    fn from(set: SubTaskSet) -> Self {
        set.tasks
    }
}

/// Tri-state outcome of judging one aspect. `Uncertain` exists so ambiguity
/// can trigger the fact-checking path instead of being silently coerced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finding {
    Satisfied,
    NotSatisfied,
    Uncertain,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Finding::Satisfied => "satisfied",
            Finding::NotSatisfied => "not_satisfied",
            Finding::Uncertain => "uncertain",
        };
        write!(f, "{s}")
    }
}

/// One sub-task agent's answer for one aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubAnswer {
    pub subtask_id: String,
    pub finding: Finding,
    pub rationale: String,
    pub used_insight_ids: Vec<String>,
    pub used_feedback_ids: Vec<String>,
    /// Set when the completion had no parseable answer and the finding fell
    /// back to `Uncertain`.
    pub parse_flagged: bool,
}

impl SubAnswer {
    pub fn new(subtask_id: impl Into<String>, finding: Finding) -> Self {
        Self {
            subtask_id: subtask_id.into(),
            finding,
            rationale: String::new(),
            used_insight_ids: Vec::new(),
            used_feedback_ids: Vec::new(),
            parse_flagged: false,
        }
    }

    #[must_use]
    pub fn with_rationale(mut self, rationale: impl Into<String>) -> Self {
        self.rationale = rationale.into();
        self
    }
}

/// Which side of a confusing-charge pair a trajectory judges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Golden,
    Confusing,
}

impl Role {
    /// The verdict the ground truth expects for this role.
    pub fn expected_guilty(self) -> bool {
        matches!(self, Role::Golden)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Golden => write!(f, "golden"),
            Role::Confusing => write!(f, "confusing"),
        }
    }
}

/// The ordered per-aspect findings for one (case, charge) at one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub charge_name: String,
    pub role: Role,
    /// 1-based trial number within the training loop.
    pub trial_index: u32,
    answers: Vec<SubAnswer>,
}

impl Trajectory {
    /// Builds a trajectory, rejecting answer lists that do not line up
    /// one-to-one with the active sub-task set.
    pub fn new(
        charge_name: impl Into<String>,
        role: Role,
        trial_index: u32,
        answers: Vec<SubAnswer>,
        subtasks: &SubTaskSet,
    ) -> Result<Self> {
        let charge_name = charge_name.into();
        if trial_index == 0 {
            return Err(Error::Validation(format!(
                "trajectory for `{charge_name}` has trial_index 0; trials are 1-based"
            )));
        }
        if answers.len() != subtasks.len() {
            return Err(Error::Validation(format!(
                "trajectory for `{charge_name}` has {} answers for {} sub-tasks",
                answers.len(),
                subtasks.len()
            )));
        }
        for (answer, task) in answers.iter().zip(subtasks.tasks()) {
            if answer.subtask_id != task.id {
                return Err(Error::Validation(format!(
                    "trajectory for `{charge_name}` answers `{}` where sub-task `{}` was expected",
                    answer.subtask_id, task.id
                )));
            }
        }
        Ok(Self {
            charge_name,
            role,
            trial_index,
            answers,
        })
    }

    pub fn answers(&self) -> &[SubAnswer] {
        &self.answers
    }

    pub fn answer_for(&self, subtask_id: &str) -> Option<&SubAnswer> {
        self.answers.iter().find(|a| a.subtask_id == subtask_id)
    }

    /// The same findings carried into the next trial round unchanged; used
    /// when the other role of a pair was retried but this one was already
    /// correct.
    #[must_use]
    pub fn carried_into_next_trial(mut self) -> Self {
        self.trial_index += 1;
        self
    }

    /// Replaces the answer for one sub-task, keeping order intact.
    pub(crate) fn replace_answer(&mut self, answer: SubAnswer) -> Result<()> {
        match self
            .answers
            .iter_mut()
            .find(|a| a.subtask_id == answer.subtask_id)
        {
            Some(slot) => {
                *slot = answer;
                Ok(())
            }
            None => Err(Error::Validation(format!(
                "no sub-task `{}` in trajectory for `{}`",
                answer.subtask_id, self.charge_name
            ))),
        }
    }
}

/// The verdict for one charge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub guilty: bool,
    /// Names the first non-satisfied aspect when not guilty.
    pub rationale: String,
}

/// The outcome of judging every query of one case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub per_query_verdicts: Vec<(String, Verdict)>,
    pub y_correct: bool,
}

impl CaseOutcome {
    /// Combines per-query verdicts into the case-level outcome: correct iff
    /// every verdict matches its query's expected flag.
    pub fn from_verdicts(case: &CaseRecord, verdicts: Vec<(String, Verdict)>) -> Result<Self> {
        if verdicts.len() != case.queries.len() {
            return Err(Error::Validation(format!(
                "case `{}` has {} queries but {} verdicts",
                case.fact.case_id,
                case.queries.len(),
                verdicts.len()
            )));
        }
        let y_correct = case
            .queries
            .iter()
            .zip(&verdicts)
            .all(|(query, (charge, verdict))| {
                charge == &query.charge_name && verdict.guilty == query.expected_guilty
            });
        Ok(Self {
            case_id: case.fact.case_id.clone(),
            per_query_verdicts: verdicts,
            y_correct,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_query_record() -> CaseRecord {
        CaseRecord {
            fact: FactDescription::new("case-1", "the defendant did the thing").unwrap(),
            queries: vec![
                ChargeQuery {
                    charge_name: "alpha".into(),
                    expected_guilty: true,
                },
                ChargeQuery {
                    charge_name: "beta".into(),
                    expected_guilty: false,
                },
            ],
            pair_tag: Some("alpha-vs-beta".into()),
        }
    }

    fn small_rule_kb() -> RuleKB {
        RuleKB::from_rules(vec![
            LegalRule::new("alpha", "rule alpha").unwrap(),
            LegalRule::new("beta", "rule beta").unwrap(),
        ])
        .unwrap()
    }

    fn four_subtasks() -> SubTaskSet {
        SubTaskSet::new(vec![
            SubTask::new("Subject", 1.0).unwrap(),
            SubTask::new("Mental", 1.0).unwrap(),
            SubTask::new("Object", 1.0).unwrap(),
            SubTask::new("Conduct", 1.0).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn test_fact_rejects_blank_text() {
        assert!(FactDescription::new("c", "   ").is_err());
        assert!(FactDescription::new("c", "something happened").is_ok());
    }

    #[test]
    fn test_validate_case_well_formed() {
        let record = two_query_record();
        assert!(validate_case(&record, &small_rule_kb()).is_empty());
    }

    #[test]
    fn test_validate_case_unknown_charge() {
        let mut record = two_query_record();
        record.queries[1].charge_name = "gamma".into();
        let violations = validate_case(&record, &small_rule_kb());
        assert_eq!(violations, vec![Violation::UnknownCharge("gamma".into())]);
    }

    #[test]
    fn test_validate_case_empty_fact_and_duplicate_charge() {
        let mut record = two_query_record();
        record.fact.text = "  ".into();
        record.queries[1].charge_name = "alpha".into();
        let violations = validate_case(&record, &small_rule_kb());
        assert!(violations.contains(&Violation::EmptyFact));
        assert!(violations.contains(&Violation::DuplicateCharge("alpha".into())));
    }

    #[test]
    fn test_slug_normalizes_labels() {
        assert_eq!(slug("Subject"), "subject");
        assert_eq!(slug("  Mental State "), "mental-state");
        assert_eq!(slug("Object/Target"), "object-target");
    }

    #[test]
    fn test_subtask_set_rejects_duplicate_ids() {
        let err = SubTaskSet::new(vec![
            SubTask::new("Subject", 1.0).unwrap(),
            SubTask::new("subject", 0.9).unwrap(),
        ]);
        assert!(matches!(err, Err(Error::DuplicateId(id)) if id == "subject"));
    }

    #[test]
    fn test_subtask_probability_bounds() {
        assert!(SubTask::new("Subject", 1.1).is_err());
        assert!(SubTask::new("Subject", -0.1).is_err());
    }

    #[test]
    fn test_trajectory_rejects_missing_and_misordered_answers() {
        let set = four_subtasks();
        let short = vec![SubAnswer::new("subject", Finding::Satisfied)];
        assert!(Trajectory::new("alpha", Role::Golden, 1, short, &set).is_err());

        let misordered = vec![
            SubAnswer::new("mental", Finding::Satisfied),
            SubAnswer::new("subject", Finding::Satisfied),
            SubAnswer::new("object", Finding::Satisfied),
            SubAnswer::new("conduct", Finding::Satisfied),
        ];
        assert!(Trajectory::new("alpha", Role::Golden, 1, misordered, &set).is_err());

        let duplicated = vec![
            SubAnswer::new("subject", Finding::Satisfied),
            SubAnswer::new("subject", Finding::Satisfied),
            SubAnswer::new("object", Finding::Satisfied),
            SubAnswer::new("conduct", Finding::Satisfied),
        ];
        assert!(Trajectory::new("alpha", Role::Golden, 1, duplicated, &set).is_err());
    }

    #[test]
    fn test_trajectory_accepts_complete_ordered_answers() {
        let set = four_subtasks();
        let answers = set
            .tasks()
            .iter()
            .map(|t| SubAnswer::new(&t.id, Finding::Satisfied))
            .collect();
        let t = Trajectory::new("alpha", Role::Golden, 1, answers, &set).unwrap();
        assert_eq!(t.answers().len(), 4);
        assert_eq!(t.carried_into_next_trial().trial_index, 2);
    }

    // Brute-force check of the case-level conjunction: for every possible
    // verdict assignment over the queries, y_correct must equal the AND of
    // per-query matches.
    #[test]
    fn test_y_correct_matches_conjunction_over_all_assignments() {
        let record = two_query_record();
        for bits in 0..4u32 {
            let verdicts: Vec<(String, Verdict)> = record
                .queries
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    (
                        q.charge_name.clone(),
                        Verdict {
                            guilty: bits & (1 << i) != 0,
                            rationale: String::new(),
                        },
                    )
                })
                .collect();
            let expected = record
                .queries
                .iter()
                .zip(&verdicts)
                .all(|(q, (_, v))| v.guilty == q.expected_guilty);
            let outcome = CaseOutcome::from_verdicts(&record, verdicts).unwrap();
            assert_eq!(outcome.y_correct, expected, "assignment {bits:02b}");
        }
    }

    #[test]
    fn test_y_correct_single_query_innocent_record() {
        let record = CaseRecord {
            fact: FactDescription::new("case-i", "nothing criminal").unwrap(),
            queries: vec![ChargeQuery {
                charge_name: "alpha".into(),
                expected_guilty: false,
            }],
            pair_tag: None,
        };
        for guilty in [false, true] {
            let outcome = CaseOutcome::from_verdicts(
                &record,
                vec![(
                    "alpha".into(),
                    Verdict {
                        guilty,
                        rationale: String::new(),
                    },
                )],
            )
            .unwrap();
            assert_eq!(outcome.y_correct, !guilty);
        }
    }
}
