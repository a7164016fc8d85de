//! Sub-task planning: propose candidate aspects per training sample, merge
//! semantic duplicates, and keep the aspects that recur often enough.
//!
//! Planning runs once over a small training sample and its output is reused
//! for every later judgment, so the expensive decomposition is amortized
//! instead of repeated per case. The frequency threshold ζ keeps an aspect
//! when at least that fraction of samples proposed it; the comparison is
//! non-strict, so a count hitting ζ exactly stays in.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::domain::{charge_question, CaseRecord, FactDescription, LegalRule, SubTask, SubTaskSet};
use crate::error::{Error, Result};
use crate::gateway::{roles, Backend, CompletionRequest, TemplateLibrary};
use crate::kb::{self, RuleKB};

/// One raw sub-task label as proposed for one training sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubTaskProposal {
    pub raw_label: String,
    pub source_sample_id: String,
}

/// A (case, charge) pair the planner decomposes during training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRef {
    pub case_id: String,
    pub charge_name: String,
}

#[derive(Debug, Clone)]
pub struct PlannerConfig {
    pub zeta: f64,
    pub sample_refs: Vec<SampleRef>,
}

impl PlannerConfig {
    pub const DEFAULT_ZETA: f64 = 0.8;

    pub fn new(zeta: f64) -> Result<Self> {
        if !(zeta > 0.0 && zeta <= 1.0) {
            return Err(Error::Config(format!(
                "zeta must be in (0, 1], got {zeta}"
            )));
        }
        Ok(Self {
            zeta,
            sample_refs: Vec::new(),
        })
    }

    #[must_use]
    pub fn with_samples(mut self, sample_refs: Vec<SampleRef>) -> Self {
        self.sample_refs = sample_refs;
        self
    }

    /// One sample per case, using the case's first (training) charge.
    pub fn samples_from_cases(cases: &[CaseRecord]) -> Vec<SampleRef> {
        cases
            .iter()
            .filter_map(|case| {
                case.queries.first().map(|query| SampleRef {
                    case_id: case.fact.case_id.clone(),
                    charge_name: query.charge_name.clone(),
                })
            })
            .collect()
    }
}

pub struct Planner<'a> {
    backend: &'a dyn Backend,
    templates: &'a TemplateLibrary,
}

impl<'a> Planner<'a> {
    pub fn new(backend: &'a dyn Backend, templates: &'a TemplateLibrary) -> Self {
        Self { backend, templates }
    }

    /// Asks the model to decompose one charge question into sub-tasks and
    /// parses its enumerated list, preserving model order.
    pub fn propose_subtasks(
        &self,
        question: &str,
        rule: &LegalRule,
        fact: &FactDescription,
    ) -> Result<Vec<SubTaskProposal>> {
        let template = self.templates.get("planner")?;
        let mut bindings = HashMap::new();
        bindings.insert("question", question.to_string());
        bindings.insert("rule", rule.text.clone());
        bindings.insert("fact", fact.text.clone());
        let prompt = template.render(&bindings)?;
        let request = CompletionRequest::new(&prompt).with_role(roles::PLANNER);
        let result = self.backend.complete(&request)?;

        let proposals: Vec<SubTaskProposal> = parse_enumerated_labels(&result.text)
            .into_iter()
            .map(|raw_label| SubTaskProposal {
                raw_label,
                source_sample_id: fact.case_id.clone(),
            })
            .collect();
        if proposals.is_empty() {
            return Err(Error::ModelOutput {
                agent: "auto-planner".into(),
                reason: format!(
                    "sample {}: output contains no enumerated sub-task list",
                    fact.case_id
                ),
                raw: result.text,
            });
        }
        Ok(proposals)
    }

    /// Merges raw labels via one canonicalization call, computes per-label
    /// sample frequencies, and keeps labels with probability ≥ `zeta`.
    ///
    /// Frequency counts distinct samples, not proposal multiplicity: a sample
    /// proposing the same aspect twice still contributes one membership.
    pub fn consolidate(
        &self,
        proposals: &[SubTaskProposal],
        sample_count: usize,
        zeta: f64,
    ) -> Result<SubTaskSet> {
        let frequencies = self.label_frequencies(proposals, sample_count)?;
        keep_above_threshold(&frequencies, zeta)
    }

    /// Canonical label → fraction of samples proposing it, for every label
    /// regardless of the threshold. One canonicalization call.
    pub fn label_frequencies(
        &self,
        proposals: &[SubTaskProposal],
        sample_count: usize,
    ) -> Result<BTreeMap<String, f64>> {
        if proposals.is_empty() {
            return Err(Error::Validation("no sub-task proposals to consolidate".into()));
        }
        if sample_count == 0 {
            return Err(Error::Validation("sample_count must be at least 1".into()));
        }
        let canonical_map = self.canonicalize_labels(proposals)?;

        let mut memberships: BTreeSet<(String, String)> = BTreeSet::new();
        for proposal in proposals {
            let canonical = canonical_map
                .get(&proposal.raw_label)
                .cloned()
                .unwrap_or_else(|| proposal.raw_label.clone());
            memberships.insert((canonical, proposal.source_sample_id.clone()));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for (canonical, _) in memberships {
            *counts.entry(canonical).or_insert(0) += 1;
        }
        Ok(counts
            .into_iter()
            .map(|(label, count)| (label, count as f64 / sample_count as f64))
            .collect())
    }

    /// Full planning pass: one proposal call per training sample, then one
    /// consolidation.
    pub fn plan(
        &self,
        config: &PlannerConfig,
        cases: &[CaseRecord],
        rules: &RuleKB,
    ) -> Result<SubTaskSet> {
        Ok(self.plan_with_frequencies(config, cases, rules)?.0)
    }

    /// Like [`Planner::plan`] but also returns the full frequency table, so
    /// callers can report which labels fell below the threshold.
    pub fn plan_with_frequencies(
        &self,
        config: &PlannerConfig,
        cases: &[CaseRecord],
        rules: &RuleKB,
    ) -> Result<(SubTaskSet, BTreeMap<String, f64>)> {
        if config.sample_refs.is_empty() {
            return Err(Error::Validation(
                "planner needs at least one training sample".into(),
            ));
        }
        let mut proposals = Vec::new();
        for sample in &config.sample_refs {
            let case = cases
                .iter()
                .find(|c| c.fact.case_id == sample.case_id)
                .ok_or_else(|| {
                    Error::Validation(format!("sample case `{}` not found", sample.case_id))
                })?;
            let rule = rules.get_rule(&sample.charge_name)?;
            let question = charge_question(&sample.charge_name);
            proposals.extend(self.propose_subtasks(&question, rule, &case.fact)?);
        }
        let frequencies = self.label_frequencies(&proposals, config.sample_refs.len())?;
        let set = keep_above_threshold(&frequencies, config.zeta)?;
        Ok((set, frequencies))
    }

    /// One model call mapping every distinct raw label to its canonical form.
    /// Labels the model leaves unmapped canonicalize to themselves.
    fn canonicalize_labels(&self, proposals: &[SubTaskProposal]) -> Result<BTreeMap<String, String>> {
        let mut distinct = Vec::new();
        for proposal in proposals {
            if !distinct.contains(&proposal.raw_label) {
                distinct.push(proposal.raw_label.clone());
            }
        }
        let listing = distinct
            .iter()
            .map(|raw| format!("- {raw}"))
            .collect::<Vec<_>>()
            .join("\n");
        let template = self.templates.get("canonicalize")?;
        let mut bindings = HashMap::new();
        bindings.insert("labels", listing);
        let prompt = template.render(&bindings)?;
        let request = CompletionRequest::new(&prompt).with_role(roles::CANONICALIZER);
        let result = self.backend.complete(&request)?;

        let mut map = BTreeMap::new();
        for line in result.text.lines() {
            if let Some((raw, canonical)) = line.split_once("=>") {
                let raw = raw.trim();
                let canonical = canonical.trim();
                if !raw.is_empty() && !canonical.is_empty() {
                    map.insert(raw.to_string(), canonical.to_string());
                }
            }
        }
        Ok(map)
    }
}

/// Builds the kept sub-task set from a frequency table: labels at or above
/// the threshold, ordered by descending probability then label.
fn keep_above_threshold(frequencies: &BTreeMap<String, f64>, zeta: f64) -> Result<SubTaskSet> {
    let mut kept = Vec::new();
    for (label, probability) in frequencies {
        if *probability >= zeta {
            kept.push(SubTask::new(label.clone(), *probability)?);
        }
    }
    kept.sort_by(|a, b| {
        b.probability
            .partial_cmp(&a.probability)
            .expect("probabilities are finite")
            .then_with(|| a.label.cmp(&b.label))
    });
    SubTaskSet::new(kept)
}

/// Extracts labels from numbered (`1.` / `2)`) or bulleted (`-` / `*`) lines.
pub(crate) fn parse_enumerated_labels(raw: &str) -> Vec<String> {
    let mut labels = Vec::new();
    for line in raw.lines() {
        let trimmed = line.trim();
        let body = trimmed
            .strip_prefix('-')
            .or_else(|| trimmed.strip_prefix('*'))
            .map(str::to_string)
            .or_else(|| {
                let digits = trimmed.chars().take_while(char::is_ascii_digit).count();
                if digits == 0 {
                    return None;
                }
                let rest = &trimmed[digits..];
                rest.strip_prefix('.')
                    .or_else(|| rest.strip_prefix(')'))
                    .map(str::to_string)
            });
        if let Some(body) = body {
            let label = body.trim().trim_end_matches('.').trim();
            if !label.is_empty() {
                labels.push(label.to_string());
            }
        }
    }
    labels
}

pub fn save_subtasks(set: &SubTaskSet, path: &Path) -> Result<()> {
    kb::write_jsonl(path, set.tasks().iter())
}

pub fn load_subtasks(path: &Path) -> Result<SubTaskSet> {
    let mut tasks = Vec::new();
    for (line_no, line) in kb::read_lines(path)? {
        tasks.push(kb::parse_line::<SubTask>(path, line_no, &line)?);
    }
    SubTaskSet::new(tasks).map_err(|e| Error::DataFormat {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })
}
