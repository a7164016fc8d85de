//! Rule and insight knowledge bases.
//!
//! Rules are keyed by charge name. Insights are keyed by charge, then by
//! sub-task, and every insight carries a KB-wide unique id so filtering and
//! reporting can reference individual records. Both stores persist as JSONL,
//! one record per line, which keeps diffs line-stable and lets a partially
//! corrupt file fail with an exact line number.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{LegalRule, SubTaskSet};
use crate::embedding::{cosine_similarity, Embedder};
use crate::error::{Error, Result};
use crate::gateway::{roles, Backend, CompletionRequest, TemplateLibrary};

// ============================================================================
// Rule store
// ============================================================================

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleKB {
    rules: BTreeMap<String, LegalRule>,
}

impl RuleKB {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rules(rules: Vec<LegalRule>) -> Result<Self> {
        let mut kb = Self::new();
        for rule in rules {
            kb.insert(rule)?;
        }
        Ok(kb)
    }

    pub fn insert(&mut self, rule: LegalRule) -> Result<()> {
        if self.rules.contains_key(&rule.charge_name) {
            return Err(Error::DuplicateId(rule.charge_name));
        }
        self.rules.insert(rule.charge_name.clone(), rule);
        Ok(())
    }

    pub fn get_rule(&self, charge_name: &str) -> Result<&LegalRule> {
        self.rules
            .get(charge_name)
            .ok_or_else(|| Error::UnknownCharge(charge_name.to_string()))
    }

    pub fn contains(&self, charge_name: &str) -> bool {
        self.rules.contains_key(charge_name)
    }

    pub fn charges(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(String::as_str)
    }

    pub fn rules(&self) -> impl Iterator<Item = &LegalRule> {
        self.rules.values()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let mut kb = Self::new();
        for (line_no, line) in read_lines(path)? {
            let rule: LegalRule = parse_line(path, line_no, &line)?;
            kb.insert(rule).map_err(|e| Error::DataFormat {
                path: path.display().to_string(),
                line: line_no,
                message: e.to_string(),
            })?;
        }
        Ok(kb)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        write_jsonl(path, self.rules.values())
    }
}

// ============================================================================
// Insights
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsightSource {
    Success,
    ErrorSuccessPair,
    Transfer,
    Direct,
}

impl InsightSource {
    fn id_tag(self) -> &'static str {
        match self {
            Self::Success => "success",
            Self::ErrorSuccessPair => "pair",
            Self::Transfer => "transfer",
            Self::Direct => "direct",
        }
    }
}

/// One reusable piece of rule understanding, scoped to a charge and one of
/// its sub-tasks. `origin_charge` records the trained neighbor a transferred
/// insight was adapted from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Insight {
    pub id: String,
    pub charge_name: String,
    pub subtask_id: String,
    pub text: String,
    pub source: InsightSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_charge: Option<String>,
}

/// Hands out ids of the form `{charge}#{subtask}#{source}#{seq}` with an
/// independent sequence per prefix, so re-running a drawing stage appends
/// instead of colliding.
#[derive(Debug, Default)]
pub struct InsightIdAllocator {
    counters: BTreeMap<String, u32>,
}

impl InsightIdAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Continues numbering after the ids already present in `kb`. Ids that do
    /// not follow the allocator's format are ignored here; a genuine clash
    /// still surfaces as a duplicate-id error on insertion.
    pub fn seeded_from(kb: &InsightKB) -> Self {
        let mut allocator = Self::new();
        for insight in kb.iter() {
            if let Some((prefix, seq)) = insight.id.rsplit_once('#') {
                if let Ok(seq) = seq.parse::<u32>() {
                    let entry = allocator.counters.entry(prefix.to_string()).or_insert(0);
                    *entry = (*entry).max(seq);
                }
            }
        }
        allocator
    }

    pub fn next_id(&mut self, charge_name: &str, subtask_id: &str, source: InsightSource) -> String {
        let prefix = format!("{charge_name}#{subtask_id}#{}", source.id_tag());
        let counter = self.counters.entry(prefix.clone()).or_insert(0);
        *counter += 1;
        format!("{prefix}#{counter}")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InsightKB {
    buckets: BTreeMap<String, BTreeMap<String, Vec<Insight>>>,
    ids: BTreeSet<String>,
}

impl InsightKB {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_insight(&mut self, insight: Insight) -> Result<()> {
        if insight.id.is_empty()
            || insight.charge_name.is_empty()
            || insight.subtask_id.is_empty()
            || insight.text.trim().is_empty()
        {
            return Err(Error::Validation(format!(
                "insight `{}` has an empty id, charge, sub-task, or text",
                insight.id
            )));
        }
        if !self.ids.insert(insight.id.clone()) {
            return Err(Error::DuplicateId(insight.id));
        }
        self.buckets
            .entry(insight.charge_name.clone())
            .or_default()
            .entry(insight.subtask_id.clone())
            .or_default()
            .push(insight);
        Ok(())
    }

    /// Insights for one charge/sub-task bucket, in insertion order.
    pub fn get_insights(&self, charge_name: &str, subtask_id: &str) -> &[Insight] {
        self.buckets
            .get(charge_name)
            .and_then(|by_subtask| by_subtask.get(subtask_id))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// All of a charge's insights, ordered by sub-task id then insertion.
    pub fn charge_insights(&self, charge_name: &str) -> Vec<&Insight> {
        self.buckets
            .get(charge_name)
            .map(|by_subtask| by_subtask.values().flatten().collect())
            .unwrap_or_default()
    }

    pub fn has_charge(&self, charge_name: &str) -> bool {
        self.buckets
            .get(charge_name)
            .is_some_and(|by_subtask| by_subtask.values().any(|v| !v.is_empty()))
    }

    pub fn charges(&self) -> impl Iterator<Item = &str> {
        self.buckets
            .iter()
            .filter(|(_, by_subtask)| by_subtask.values().any(|v| !v.is_empty()))
            .map(|(charge, _)| charge.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Insight> {
        self.buckets
            .values()
            .flat_map(|by_subtask| by_subtask.values().flatten())
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let mut kb = Self::new();
        for (line_no, line) in read_lines(path)? {
            let insight: Insight = parse_line(path, line_no, &line)?;
            kb.put_insight(insight).map_err(|e| Error::DataFormat {
                path: path.display().to_string(),
                line: line_no,
                message: e.to_string(),
            })?;
        }
        Ok(kb)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        write_jsonl(path, self.iter())
    }
}

// ============================================================================
// Transfer to unseen rules
// ============================================================================

/// Adapts the insights of the most similar trained rule to an unseen one.
///
/// Candidates are the charges that both have insights and are present in the
/// rule store; the neighbor is the candidate whose rule text has the highest
/// cosine similarity to the target's, ties resolved toward the
/// lexicographically smallest charge name. The returned insights are keyed to
/// the target charge with `source = Transfer`.
pub fn transfer_insights(
    backend: &dyn Backend,
    templates: &TemplateLibrary,
    embedder: &dyn Embedder,
    kb: &InsightKB,
    rules: &RuleKB,
    target: &LegalRule,
    set: &SubTaskSet,
    allocator: &mut InsightIdAllocator,
) -> Result<Vec<Insight>> {
    let neighbor = nearest_trained_charge(embedder, kb, rules, target)?;
    let neighbor_lines = kb
        .charge_insights(&neighbor)
        .iter()
        .map(|insight| {
            let label = set
                .get(&insight.subtask_id)
                .map(|task| task.label.clone())
                .unwrap_or_else(|| insight.subtask_id.clone());
            format!("- ({label}) {}", insight.text)
        })
        .collect::<Vec<_>>()
        .join("\n");

    let template = templates.get("insight_transfer")?;
    let mut bindings = std::collections::HashMap::new();
    bindings.insert("charge", target.charge_name.clone());
    bindings.insert("rule", target.text.clone());
    bindings.insert("insights", neighbor_lines);
    let prompt = template.render(&bindings)?;
    let request = CompletionRequest::new(&prompt).with_role(roles::INSIGHT_TRANSFER);
    let result = backend.complete(&request)?;

    let mut transferred = Vec::new();
    for (label, text) in parse_insight_lines(&result.text, "insight-transfer")? {
        let Some(task) = set.by_label(&label) else {
            return Err(Error::ModelOutput {
                agent: "insight-transfer".into(),
                reason: format!("output names unknown aspect `{label}`"),
                raw: result.text.clone(),
            });
        };
        let id = allocator.next_id(&target.charge_name, &task.id, InsightSource::Transfer);
        transferred.push(Insight {
            id,
            charge_name: target.charge_name.clone(),
            subtask_id: task.id.clone(),
            text,
            source: InsightSource::Transfer,
            origin_charge: Some(neighbor.clone()),
        });
    }
    Ok(transferred)
}

/// Top-1 trained neighbor by rule-text cosine similarity.
pub fn nearest_trained_charge(
    embedder: &dyn Embedder,
    kb: &InsightKB,
    rules: &RuleKB,
    target: &LegalRule,
) -> Result<String> {
    let target_vec = embedder.embed(&target.text)?;
    let mut best: Option<(f64, String)> = None;
    for charge in kb.charges() {
        if charge == target.charge_name || !rules.contains(charge) {
            continue;
        }
        let candidate = rules.get_rule(charge)?;
        let similarity = cosine_similarity(&target_vec, &embedder.embed(&candidate.text)?)?;
        let better = match &best {
            None => true,
            Some((best_sim, _)) => similarity > *best_sim,
        };
        if better {
            best = Some((similarity, charge.to_string()));
        }
    }
    best.map(|(_, charge)| charge).ok_or_else(|| {
        Error::Validation("insight KB has no trained charge usable as a transfer neighbor".into())
    })
}

/// Parses `INSIGHT {Label} | {text}` lines out of a drawer's output. Lines
/// without the prefix are commentary and skipped; a malformed prefixed line
/// is a model-output error.
pub(crate) fn parse_insight_lines(raw: &str, agent: &str) -> Result<Vec<(String, String)>> {
    let mut parsed = Vec::new();
    for line in raw.lines() {
        let line = line.trim();
        let Some(rest) = line.strip_prefix("INSIGHT ") else {
            continue;
        };
        let Some((label, text)) = rest.split_once('|') else {
            return Err(Error::ModelOutput {
                agent: agent.into(),
                reason: "INSIGHT line is missing the `|` separator".into(),
                raw: raw.to_string(),
            });
        };
        let label = label.trim();
        let text = text.trim();
        if label.is_empty() || text.is_empty() {
            return Err(Error::ModelOutput {
                agent: agent.into(),
                reason: "INSIGHT line has an empty label or body".into(),
                raw: raw.to_string(),
            });
        }
        parsed.push((label.to_string(), text.to_string()));
    }
    Ok(parsed)
}

// ============================================================================
// JSONL plumbing
// ============================================================================

pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push((index + 1, line));
    }
    Ok(lines)
}

pub(crate) fn parse_line<T: serde::de::DeserializeOwned>(
    path: &Path,
    line_no: usize,
    line: &str,
) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::DataFormat {
        path: path.display().to_string(),
        line: line_no,
        message: e.to_string(),
    })
}

pub(crate) fn write_jsonl<T: Serialize>(
    path: &Path,
    records: impl Iterator<Item = T>,
) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    for record in records {
        let line = serde_json::to_string(&record).map_err(|e| Error::DataFormat {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        file.write_all(line.as_bytes())
            .and_then(|()| file.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
