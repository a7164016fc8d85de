//! Per-aspect judgment and verdict combination.
//!
//! One agent is assigned to each sub-task of the active set; each agent sees
//! the rule, the fact, and (when enabled) the aspect's insights, knowledge
//! feedback, and any reflection note from an earlier trial, and returns a
//! tri-state finding. The combiner is a conjunction under presumption of
//! innocence: guilt requires every aspect satisfied, and an uncertain finding
//! defeats guilt exactly like a failed one. Unparseable agent output is never
//! guessed into a verdict; it becomes an uncertain finding with a parse flag
//! that the evaluation layer surfaces.

use std::collections::BTreeMap;

use crate::domain::{
    charge_question, CaseOutcome, CaseRecord, FactDescription, Finding, LegalRule, Role, SubAnswer,
    SubTask, SubTaskSet, Trajectory, Verdict,
};
use crate::error::{Error, Result};
use crate::gateway::{Backend, CompletionRequest, TemplateLibrary};
use crate::kb::{Insight, RuleKB};
use crate::oracle::KnowledgeFeedback;

/// Where a judgment's insights come from. `Trained` reads the insight KB
/// (directly or via transfer), `Direct` uses insights generated from the rule
/// text alone at judgment time, `None` disables them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InsightMode {
    Trained,
    Direct,
    #[default]
    None,
}

/// Everything situational an agent may use beyond the rule and fact:
/// per-sub-task insights and knowledge feedback, plus the flags saying which
/// of those channels is active.
#[derive(Debug, Clone, Default)]
pub struct JudgmentContext {
    pub use_insights: bool,
    pub use_feedback: bool,
    pub insight_mode: InsightMode,
    pub insights: BTreeMap<String, Vec<Insight>>,
    pub feedback: BTreeMap<String, Vec<KnowledgeFeedback>>,
}

impl JudgmentContext {
    /// Context with every augmentation channel off: bare sub-task judgment.
    pub fn bare() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_insights && self.insights.values().any(|v| !v.is_empty()) {
            return Err(Error::Validation(
                "insights provided while use_insights is off".into(),
            ));
        }
        if !self.use_feedback && self.feedback.values().any(|v| !v.is_empty()) {
            return Err(Error::Validation(
                "feedback provided while use_feedback is off".into(),
            ));
        }
        if matches!(self.insight_mode, InsightMode::None) && self.use_insights {
            return Err(Error::Validation(
                "use_insights requires an insight mode other than none".into(),
            ));
        }
        Ok(())
    }

    fn insights_for(&self, subtask_id: &str) -> &[Insight] {
        if !self.use_insights {
            return &[];
        }
        self.insights
            .get(subtask_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    fn feedback_for(&self, subtask_id: &str) -> &[KnowledgeFeedback] {
        if !self.use_feedback {
            return &[];
        }
        self.feedback
            .get(subtask_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

/// The role-assigned agent responsible for one sub-task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentSpec {
    pub subtask_id: String,
    pub label: String,
    pub role_preamble: String,
    pub template_name: String,
}

impl AgentSpec {
    pub fn for_subtask(task: &SubTask) -> Self {
        Self {
            subtask_id: task.id.clone(),
            label: task.label.clone(),
            role_preamble: format!(
                "You are a sub-task judge responsible only for the {} aspect of a criminal \
                 charge. Assess nothing else.",
                task.label
            ),
            template_name: "subtask".to_string(),
        }
    }
}

/// Parses an agent completion into a tri-state finding. The last structured
/// `ANSWER:` line wins; without one, the last sentence is scanned for verdict
/// keywords; with neither, the finding is uncertain and flagged.
pub fn parse_finding(raw: &str) -> (Finding, String, bool) {
    let rationale = raw.trim().to_string();
    let mut structured = None;
    for line in raw.lines() {
        let line = line.trim();
        if let Some(rest) = strip_prefix_ci(line, "ANSWER:") {
            let value = rest.trim().to_uppercase();
            if value.starts_with("YES") {
                structured = Some(Finding::Satisfied);
            } else if value.starts_with("NO") && !value.starts_with("NOT") {
                structured = Some(Finding::NotSatisfied);
            } else if value.starts_with("UNCERTAIN") {
                structured = Some(Finding::Uncertain);
            }
        }
    }
    if let Some(finding) = structured {
        return (finding, rationale, false);
    }
    if let Some(finding) = keyword_scan(last_sentence(raw)) {
        return (finding, rationale, false);
    }
    (Finding::Uncertain, rationale, true)
}

fn strip_prefix_ci<'t>(text: &'t str, prefix: &str) -> Option<&'t str> {
    if text.len() >= prefix.len() && text[..prefix.len()].eq_ignore_ascii_case(prefix) {
        Some(&text[prefix.len()..])
    } else {
        None
    }
}

fn last_sentence(raw: &str) -> &str {
    raw.split_terminator(['.', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .last()
        .unwrap_or("")
}

fn keyword_scan(sentence: &str) -> Option<Finding> {
    let lowered = sentence.to_lowercase();
    let has_word = |word: &str| {
        lowered
            .split(|c: char| !c.is_alphanumeric())
            .any(|w| w == word)
    };
    if lowered.contains("uncertain") || lowered.contains("unclear") || lowered.contains("cannot determine") {
        return Some(Finding::Uncertain);
    }
    if lowered.contains("not satisfied")
        || lowered.contains("not met")
        || lowered.contains("not guilty")
        || has_word("no")
    {
        return Some(Finding::NotSatisfied);
    }
    if lowered.contains("satisfied") || lowered.contains("met") || has_word("guilty") || has_word("yes") {
        return Some(Finding::Satisfied);
    }
    None
}

/// Conjunction under presumption of innocence over a complete answer set.
/// `answers` must cover the sub-task set exactly; the rationale names the
/// first aspect (in set order) that is not satisfied.
pub fn combine(set: &SubTaskSet, answers: &[SubAnswer]) -> Result<Verdict> {
    if answers.len() != set.len() {
        return Err(Error::Validation(format!(
            "combine requires one answer per sub-task: got {}, expected {}",
            answers.len(),
            set.len()
        )));
    }
    let mut first_unmet: Option<(&SubTask, Finding)> = None;
    for task in set.tasks() {
        let answer = answers
            .iter()
            .find(|a| a.subtask_id == task.id)
            .ok_or_else(|| {
                Error::Validation(format!("no answer for sub-task `{}`", task.id))
            })?;
        if answer.finding != Finding::Satisfied && first_unmet.is_none() {
            first_unmet = Some((task, answer.finding));
        }
    }
    Ok(match first_unmet {
        None => Verdict {
            guilty: true,
            rationale: "Every aspect of the rule is satisfied by the facts.".to_string(),
        },
        Some((task, finding)) => Verdict {
            guilty: false,
            rationale: format!(
                "The {} aspect is {finding}; under the presumption of innocence the charge \
                 does not hold.",
                task.label
            ),
        },
    })
}

pub struct JudgmentEngine<'a> {
    backend: &'a dyn Backend,
    templates: &'a TemplateLibrary,
}

impl<'a> JudgmentEngine<'a> {
    pub fn new(backend: &'a dyn Backend, templates: &'a TemplateLibrary) -> Self {
        Self { backend, templates }
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend
    }

    pub fn templates(&self) -> &TemplateLibrary {
        self.templates
    }

    /// One agent call for one sub-task. `reflection` carries the note from a
    /// failed earlier trial when the trainer retries this aspect.
    pub fn answer_subtask(
        &self,
        agent: &AgentSpec,
        rule: &LegalRule,
        fact: &FactDescription,
        ctx: &JudgmentContext,
        reflection: Option<&str>,
    ) -> Result<SubAnswer> {
        ctx.validate()?;
        let insights = ctx.insights_for(&agent.subtask_id);
        let feedback = ctx.feedback_for(&agent.subtask_id);
        let insight_text = if insights.is_empty() {
            "(none)".to_string()
        } else {
            insights
                .iter()
                .map(|i| format!("- {}", i.text))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let feedback_text = if feedback.is_empty() {
            "(none)".to_string()
        } else {
            feedback
                .iter()
                .map(|f| format!("- Q: {} A: {}", f.question, f.answer))
                .collect::<Vec<_>>()
                .join("\n")
        };

        let template = self.templates.get(&agent.template_name)?;
        let mut bindings = std::collections::HashMap::new();
        bindings.insert("role", agent.role_preamble.clone());
        bindings.insert("aspect", agent.label.clone());
        bindings.insert("question", charge_question(&rule.charge_name));
        bindings.insert("rule", rule.text.clone());
        bindings.insert("fact", fact.text.clone());
        bindings.insert("insights", insight_text);
        bindings.insert("feedback", feedback_text);
        bindings.insert("reflection", reflection.unwrap_or("(none)").to_string());
        let prompt = template.render(&bindings)?;
        let request = CompletionRequest::new(&prompt).with_role(&agent.role_preamble);
        let result = self.backend.complete(&request)?;

        let (finding, rationale, flagged) = parse_finding(&result.text);
        let mut answer = SubAnswer::new(&agent.subtask_id, finding).with_rationale(rationale);
        answer.used_insight_ids = insights.iter().map(|i| i.id.clone()).collect();
        answer.used_feedback_ids = feedback.iter().map(|f| f.id.clone()).collect();
        answer.parse_flagged = flagged;
        Ok(answer)
    }

    /// Judges one charge: one agent per sub-task in set order, then the
    /// combiner. A backend failure aborts the charge with the count of
    /// completed aspects attached.
    pub fn judge_charge(
        &self,
        fact: &FactDescription,
        rule: &LegalRule,
        set: &SubTaskSet,
        ctx: &JudgmentContext,
        role: Role,
        trial_index: u32,
    ) -> Result<(Verdict, Trajectory)> {
        ctx.validate()?;
        let mut answers = Vec::with_capacity(set.len());
        for task in set.tasks() {
            let agent = AgentSpec::for_subtask(task);
            match self.answer_subtask(&agent, rule, fact, ctx, None) {
                Ok(answer) => answers.push(answer),
                Err(source) => {
                    return Err(Error::JudgmentAborted {
                        charge: rule.charge_name.clone(),
                        completed: answers.len(),
                        source: Box::new(source),
                    });
                }
            }
        }
        let verdict = combine(set, &answers)?;
        let trajectory = Trajectory::new(&rule.charge_name, role, trial_index, answers, set)?;
        Ok((verdict, trajectory))
    }

    /// Judges every query of a case and reduces to the case-level outcome.
    /// `ctx_for` supplies the judgment context for each charge, since
    /// insights and feedback are charge-specific.
    pub fn predict_case(
        &self,
        case: &CaseRecord,
        rules: &RuleKB,
        set: &SubTaskSet,
        mut ctx_for: impl FnMut(&str) -> Result<JudgmentContext>,
    ) -> Result<CaseOutcome> {
        let mut verdicts = Vec::with_capacity(case.queries.len());
        for query in &case.queries {
            let rule = rules.get_rule(&query.charge_name)?;
            let ctx = ctx_for(&query.charge_name)?;
            let role = if query.expected_guilty {
                Role::Golden
            } else {
                Role::Confusing
            };
            let (verdict, _) = self.judge_charge(&case.fact, rule, set, &ctx, role, 1)?;
            verdicts.push((query.charge_name.clone(), verdict));
        }
        CaseOutcome::from_verdicts(case, verdicts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CallRecorder, CompletionResult, RecordingBackend};
    use crate::kb::InsightSource;
    use crate::scripted::{ElementFlaw, ScriptedBackend};
    use crate::synthetic;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct FixedBackend(&'static str);

    impl Backend for FixedBackend {
        fn id(&self) -> &str {
            "fixed"
        }

        fn complete(&self, _request: &CompletionRequest) -> Result<CompletionResult> {
            Ok(CompletionResult {
                text: self.0.to_string(),
                prompt_tokens: 0,
                output_tokens: 0,
                backend_id: "fixed".into(),
            })
        }
    }

    /// Fails every call after the first `succeed` ones.
    struct FailAfter {
        succeed: usize,
        calls: AtomicUsize,
    }

    impl Backend for FailAfter {
        fn id(&self) -> &str {
            "fail-after"
        }

        fn complete(&self, _request: &CompletionRequest) -> Result<CompletionResult> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.succeed {
                Ok(CompletionResult {
                    text: "ANSWER: YES".into(),
                    prompt_tokens: 1,
                    output_tokens: 1,
                    backend_id: "fail-after".into(),
                })
            } else {
                Err(Error::Backend {
                    backend: "fail-after".into(),
                    message: "synthetic outage".into(),
                })
            }
        }
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

    fn corpus_fixture() -> (crate::synthetic::SyntheticCorpus, RuleKB, SubTaskSet) {
        let corpus = synthetic::generate_corpus();
        let rules = RuleKB::from_rules(corpus.rules.clone()).unwrap();
        (corpus, rules, four_subtasks())
    }

    #[test]
    fn test_parse_finding_structured_lines() {
        assert_eq!(parse_finding("reasoning...\nANSWER: YES").0, Finding::Satisfied);
        assert_eq!(parse_finding("reasoning...\nANSWER: NO").0, Finding::NotSatisfied);
        assert_eq!(parse_finding("answer: uncertain").0, Finding::Uncertain);
        assert!(!parse_finding("answer: uncertain").2);
        // The last structured line wins.
        let (finding, _, flagged) = parse_finding("ANSWER: YES\nrevised view\nANSWER: NO");
        assert_eq!(finding, Finding::NotSatisfied);
        assert!(!flagged);
    }

    #[test]
    fn test_parse_finding_keyword_fallback_and_flag() {
        let (finding, _, flagged) = parse_finding("On balance, the element is not satisfied.");
        assert_eq!(finding, Finding::NotSatisfied);
        assert!(!flagged);
        let (finding, _, flagged) = parse_finding("All requirements appear satisfied.");
        assert_eq!(finding, Finding::Satisfied);
        assert!(!flagged);
        let (finding, rationale, flagged) = parse_finding("A rambling note about the statute.");
        assert_eq!(finding, Finding::Uncertain);
        assert!(flagged);
        assert!(rationale.contains("rambling"));
    }

    #[test]
    fn test_answer_subtask_perfect_and_affirmative() {
        let (corpus, rules, set) = corpus_fixture();
        let templates = TemplateLibrary::embedded();
        let rule = rules.get_rule("SYN-P1-A").unwrap();
        let golden_case = corpus
            .train_cases
            .iter()
            .find(|c| c.fact.case_id == "train-SYN-P1-A-1")
            .unwrap();
        let agent = AgentSpec::for_subtask(set.get("subject").unwrap());

        let perfect = ScriptedBackend::perfect();
        let engine = JudgmentEngine::new(&perfect, &templates);
        let answer = engine
            .answer_subtask(&agent, rule, &golden_case.fact, &JudgmentContext::bare(), None)
            .unwrap();
        assert_eq!(answer.finding, Finding::Satisfied);
        assert!(!answer.parse_flagged);

        // The same fact violates the partner rule's subject element, but the
        // affirmative backend says satisfied anyway.
        let partner = rules.get_rule("SYN-P1-B").unwrap();
        let affirmative = ScriptedBackend::affirmative();
        let engine = JudgmentEngine::new(&affirmative, &templates);
        let answer = engine
            .answer_subtask(&agent, partner, &golden_case.fact, &JudgmentContext::bare(), None)
            .unwrap();
        assert_eq!(answer.finding, Finding::Satisfied);
    }

    #[test]
    fn test_answer_subtask_unparseable_output_flags_uncertain() {
        let backend = FixedBackend("I find this question quite difficult to evaluate");
        let templates = TemplateLibrary::embedded();
        let engine = JudgmentEngine::new(&backend, &templates);
        let set = four_subtasks();
        let agent = AgentSpec::for_subtask(set.get("subject").unwrap());
        let rule = LegalRule::new("c", "rule").unwrap();
        let fact = FactDescription::new("case-1", "fact").unwrap();
        let answer = engine
            .answer_subtask(&agent, &rule, &fact, &JudgmentContext::bare(), None)
            .unwrap();
        assert_eq!(answer.finding, Finding::Uncertain);
        assert!(answer.parse_flagged);
    }

    #[test]
    fn test_combine_matches_exhaustive_tristate_oracle() {
        let set = four_subtasks();
        let states = [Finding::Satisfied, Finding::NotSatisfied, Finding::Uncertain];
        let ids: Vec<&str> = set.tasks().iter().map(|t| t.id.as_str()).collect();
        for code in 0..3usize.pow(4) {
            let mut rest = code;
            let mut answers = Vec::new();
            let mut findings = Vec::new();
            for id in &ids {
                let finding = states[rest % 3];
                rest /= 3;
                findings.push(finding);
                answers.push(SubAnswer::new(*id, finding));
            }
            let verdict = combine(&set, &answers).unwrap();
            let expected_guilty = findings.iter().all(|f| *f == Finding::Satisfied);
            assert_eq!(verdict.guilty, expected_guilty, "assignment {findings:?}");
            if !expected_guilty {
                let first = set
                    .tasks()
                    .iter()
                    .zip(&findings)
                    .find(|(_, f)| **f != Finding::Satisfied)
                    .map(|(t, _)| t.label.clone())
                    .unwrap();
                assert!(
                    verdict.rationale.contains(&first),
                    "rationale `{}` must name `{first}`",
                    verdict.rationale
                );
            }
        }
    }

    #[test]
    fn test_combine_rejects_incomplete_or_misaligned_answers() {
        let set = four_subtasks();
        let short = vec![SubAnswer::new("subject", Finding::Satisfied)];
        assert!(combine(&set, &short).is_err());
        let wrong_ids = vec![
            SubAnswer::new("subject", Finding::Satisfied),
            SubAnswer::new("mental", Finding::Satisfied),
            SubAnswer::new("object", Finding::Satisfied),
            SubAnswer::new("intruder", Finding::Satisfied),
        ];
        assert!(combine(&set, &wrong_ids).is_err());
    }

    #[test]
    fn test_judge_charge_golden_guilty_confusing_not() {
        let (corpus, rules, set) = corpus_fixture();
        let templates = TemplateLibrary::embedded();
        let backend = ScriptedBackend::perfect();
        let engine = JudgmentEngine::new(&backend, &templates);
        let case = corpus
            .train_cases
            .iter()
            .find(|c| c.fact.case_id == "train-SYN-P1-A-1")
            .unwrap();

        let golden_rule = rules.get_rule("SYN-P1-A").unwrap();
        let (verdict, trajectory) = engine
            .judge_charge(&case.fact, golden_rule, &set, &JudgmentContext::bare(), Role::Golden, 1)
            .unwrap();
        assert!(verdict.guilty);
        assert_eq!(trajectory.answers().len(), 4);

        let confusing_rule = rules.get_rule("SYN-P1-B").unwrap();
        let (verdict, _) = engine
            .judge_charge(&case.fact, confusing_rule, &set, &JudgmentContext::bare(), Role::Confusing, 1)
            .unwrap();
        assert!(!verdict.guilty);
        assert!(verdict.rationale.contains("Subject"), "{}", verdict.rationale);

        let affirmative = ScriptedBackend::affirmative();
        let engine = JudgmentEngine::new(&affirmative, &templates);
        let (verdict, _) = engine
            .judge_charge(&case.fact, confusing_rule, &set, &JudgmentContext::bare(), Role::Confusing, 1)
            .unwrap();
        assert!(verdict.guilty, "the acceptance bias judges the confusing charge guilty");
    }

    #[test]
    fn test_judge_charge_backend_failure_reports_partial_progress() {
        let backend = FailAfter {
            succeed: 2,
            calls: AtomicUsize::new(0),
        };
        let templates = TemplateLibrary::embedded();
        let engine = JudgmentEngine::new(&backend, &templates);
        let set = four_subtasks();
        let rule = LegalRule::new("charge-x", "rule").unwrap();
        let fact = FactDescription::new("case-1", "fact").unwrap();
        let err = engine
            .judge_charge(&fact, &rule, &set, &JudgmentContext::bare(), Role::Golden, 1)
            .unwrap_err();
        match &err {
            Error::JudgmentAborted { charge, completed, .. } => {
                assert_eq!(charge, "charge-x");
                assert_eq!(*completed, 2);
            }
            other => panic!("expected aborted judgment, got {other}"),
        }
        assert!(err.is_backend_failure());
    }

    #[test]
    fn test_bare_context_makes_exactly_one_call_per_subtask() {
        let (corpus, rules, set) = corpus_fixture();
        let templates = TemplateLibrary::embedded();
        let scripted = ScriptedBackend::perfect();
        let recorder = CallRecorder::new();
        let backend = RecordingBackend::new(&scripted, &recorder);
        let engine = JudgmentEngine::new(&backend, &templates);
        let case = &corpus.train_cases[0];
        let rule = rules.get_rule("SYN-P1-A").unwrap();
        engine
            .judge_charge(&case.fact, rule, &set, &JudgmentContext::bare(), Role::Golden, 1)
            .unwrap();
        assert_eq!(recorder.completions(), set.len() as u64);
    }

    #[test]
    fn test_context_invariants_are_enforced() {
        let mut ctx = JudgmentContext::bare();
        ctx.insights.insert(
            "subject".into(),
            vec![Insight {
                id: "i1".into(),
                charge_name: "c".into(),
                subtask_id: "subject".into(),
                text: "If x, then y.".into(),
                source: InsightSource::Success,
                origin_charge: None,
            }],
        );
        assert!(ctx.validate().is_err());
        ctx.use_insights = true;
        assert!(ctx.validate().is_err(), "mode none with use_insights on");
        ctx.insight_mode = InsightMode::Trained;
        assert!(ctx.validate().is_ok());
    }

    #[test]
    fn test_insights_with_hints_fix_a_flawed_judge() {
        let (corpus, rules, set) = corpus_fixture();
        let templates = TemplateLibrary::embedded();
        let flawed = ScriptedBackend::flawed(ElementFlaw::parse("subject=state_functionary").unwrap());
        let engine = JudgmentEngine::new(&flawed, &templates);
        let case = corpus
            .train_cases
            .iter()
            .find(|c| c.fact.case_id == "train-SYN-P1-A-1")
            .unwrap();
        let rule = rules.get_rule("SYN-P1-A").unwrap();

        let (verdict, trajectory) = engine
            .judge_charge(&case.fact, rule, &set, &JudgmentContext::bare(), Role::Golden, 1)
            .unwrap();
        assert!(!verdict.guilty, "the planted flaw breaks the golden judgment");
        assert_eq!(
            trajectory.answer_for("subject").unwrap().finding,
            Finding::NotSatisfied
        );

        let mut ctx = JudgmentContext::bare();
        ctx.use_insights = true;
        ctx.insight_mode = InsightMode::Trained;
        ctx.insights.insert(
            "subject".into(),
            vec![Insight {
                id: "SYN-P1-A#subject#pair#1".into(),
                charge_name: "SYN-P1-A".into(),
                subtask_id: "subject".into(),
                text: format!(
                    "If the fact's subject attribute equals state_functionary, then the Subject \
                     aspect is satisfied. {}",
                    synthetic::hint_marker("subject")
                ),
                source: InsightSource::ErrorSuccessPair,
                origin_charge: None,
            }],
        );
        let (verdict, trajectory) = engine
            .judge_charge(&case.fact, rule, &set, &ctx, Role::Golden, 1)
            .unwrap();
        assert!(verdict.guilty, "the hint-bearing insight corrects the flaw");
        let answer = trajectory.answer_for("subject").unwrap();
        assert_eq!(answer.used_insight_ids, vec!["SYN-P1-A#subject#pair#1".to_string()]);
    }

    #[test]
    fn test_predict_case_paired_and_innocent_records() {
        let (corpus, rules, set) = corpus_fixture();
        let templates = TemplateLibrary::embedded();
        let backend = ScriptedBackend::perfect();
        let engine = JudgmentEngine::new(&backend, &templates);

        let paired = &corpus.eval_cases[0];
        let outcome = engine
            .predict_case(paired, &rules, &set, |_| Ok(JudgmentContext::bare()))
            .unwrap();
        assert!(outcome.y_correct);
        assert_eq!(outcome.per_query_verdicts.len(), 2);

        let innocent = &corpus.innocent_cases[0];
        let outcome = engine
            .predict_case(innocent, &rules, &set, |_| Ok(JudgmentContext::bare()))
            .unwrap();
        assert!(outcome.y_correct);
        assert_eq!(outcome.per_query_verdicts.len(), 1);
        assert!(!outcome.per_query_verdicts[0].1.guilty);

        let affirmative = ScriptedBackend::affirmative();
        let engine = JudgmentEngine::new(&affirmative, &templates);
        let outcome = engine
            .predict_case(paired, &rules, &set, |_| Ok(JudgmentContext::bare()))
            .unwrap();
        assert!(!outcome.y_correct, "guilty on the confusing charge breaks the conjunction");

        let missing = CaseRecord {
            fact: FactDescription::new("case-z", "fact").unwrap(),
            queries: vec![crate::domain::ChargeQuery {
                charge_name: "NO-SUCH-CHARGE".into(),
                expected_guilty: true,
            }],
            pair_tag: None,
        };
        assert!(matches!(
            engine
                .predict_case(&missing, &rules, &set, |_| Ok(JudgmentContext::bare()))
                .unwrap_err(),
            Error::UnknownCharge(_)
        ));
    }
}
