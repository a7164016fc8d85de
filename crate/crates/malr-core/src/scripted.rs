//! Deterministic scripted backend over the synthetic rule-world.
//!
//! The backend dispatches on the distinctive phrase of the request's role
//! preamble (see [`crate::gateway::roles`]) and answers by exact predicate
//! evaluation over the `[ELEM]`/`[ATTR]` markers found in the rendered
//! prompt. Three behaviour modes exist for judgment-type roles:
//!
//! * perfect — every aspect judged truthfully;
//! * affirmative — every judgment answers yes, reproducing the acceptance
//!   bias the framework exists to overcome;
//! * flawed — one named element is answered wrongly unless the prompt carries
//!   a `[HINT key]` marker for it (from a reflection note, an insight, or
//!   knowledge feedback), which exercises the retry and insight paths.
//!
//! The backend holds no mutable state, so concurrent calls are safe and two
//! identical requests always produce byte-identical output.

use regex::Regex;
use std::sync::OnceLock;

use crate::domain::slug;
use crate::error::{Error, Result};
use crate::gateway::{whitespace_tokens, Backend, CompletionRequest, CompletionResult};
use crate::synthetic::{
    ask_marker, capitalize, check_marker, hint_marker, is_knowledge_value, parse_elements,
    parse_hints,
};

/// Which element the flawed mode errs on. With `value` set, only rules whose
/// marker carries that exact required value are affected; without it, every
/// rule's element of that key is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementFlaw {
    pub key: String,
    pub value: Option<String>,
}

impl ElementFlaw {
    /// Parses `"subject"` or `"subject=state_functionary"`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec.is_empty() {
            return Err(Error::Config("empty element-flaw spec".into()));
        }
        match spec.split_once('=') {
            Some((key, value)) if !key.is_empty() && !value.is_empty() => Ok(Self {
                key: key.to_string(),
                value: Some(value.to_string()),
            }),
            Some(_) => Err(Error::Config(format!("malformed element-flaw spec `{spec}`"))),
            None => Ok(Self {
                key: spec.to_string(),
                value: None,
            }),
        }
    }

    fn applies(&self, key: &str, required_value: Option<&str>) -> bool {
        key == self.key
            && match &self.value {
                Some(v) => required_value == Some(v.as_str()),
                None => true,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptedMode {
    Perfect,
    Affirmative,
    Flawed(ElementFlaw),
}

/// How the scripted self-reflector behaves: truthful, or misleading (names an
/// aspect that was actually judged correctly), which makes flawed charges
/// unresolvable and exercises the trial budget path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReflectorMode {
    Accurate,
    WrongAspect,
}

pub struct ScriptedBackend {
    mode: ScriptedMode,
    reflector_mode: ReflectorMode,
    id: String,
}

impl ScriptedBackend {
    pub fn new(mode: ScriptedMode) -> Self {
        let id = match &mode {
            ScriptedMode::Perfect => "scripted-perfect".to_string(),
            ScriptedMode::Affirmative => "scripted-affirmative".to_string(),
            ScriptedMode::Flawed(flaw) => match &flaw.value {
                Some(v) => format!("scripted-flawed-{}={}", flaw.key, v),
                None => format!("scripted-flawed-{}", flaw.key),
            },
        };
        Self {
            mode,
            reflector_mode: ReflectorMode::Accurate,
            id,
        }
    }

    pub fn perfect() -> Self {
        Self::new(ScriptedMode::Perfect)
    }

    pub fn affirmative() -> Self {
        Self::new(ScriptedMode::Affirmative)
    }

    pub fn flawed(flaw: ElementFlaw) -> Self {
        Self::new(ScriptedMode::Flawed(flaw))
    }

    #[must_use]
    pub fn with_reflector_mode(mut self, mode: ReflectorMode) -> Self {
        self.reflector_mode = mode;
        self
    }

    /// Truthful evaluation of one element: the fact's attribute must equal
    /// the rule's required value.
    fn truth(prompt: &str, key: &str) -> bool {
        let required = crate::synthetic::element_value(prompt, key);
        match required {
            Some(required) => {
                crate::synthetic::attribute_value(prompt, key).as_deref() == Some(&required)
            }
            None => false,
        }
    }

    /// One aspect's answer after applying the backend mode. A `[HINT key]`
    /// marker anywhere in the prompt suppresses the planted flaw for that key.
    fn judge_key(&self, prompt: &str, key: &str) -> bool {
        match &self.mode {
            ScriptedMode::Affirmative => true,
            ScriptedMode::Perfect => Self::truth(prompt, key),
            ScriptedMode::Flawed(flaw) => {
                let truth = Self::truth(prompt, key);
                let required = crate::synthetic::element_value(prompt, key);
                let hinted = parse_hints(prompt).iter().any(|h| h == key);
                if flaw.applies(key, required.as_deref()) && !hinted {
                    !truth
                } else {
                    truth
                }
            }
        }
    }

    fn respond_aspect_list(prompt: &str) -> String {
        let elements = parse_elements(prompt);
        if elements.is_empty() {
            return "No aspects could be identified in this rule.".to_string();
        }
        elements
            .iter()
            .enumerate()
            .map(|(i, (key, _))| format!("{}. {}", i + 1, capitalize(key)))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn respond_canonicalize(prompt: &str) -> String {
        let mut lines = Vec::new();
        for raw in dash_items(prompt) {
            let lowered = raw.to_lowercase();
            lines.push(format!("{raw} => {}", capitalize(&lowered)));
        }
        if lines.is_empty() {
            return "No labels were provided.".to_string();
        }
        lines.join("\n")
    }

    fn respond_judgment(&self, prompt: &str, header: &str) -> Result<String> {
        if matches!(self.mode, ScriptedMode::Affirmative) {
            return Ok(
                "The requirement is met by the facts as described. ANSWER: YES".to_string(),
            );
        }
        let label = header_line(prompt, header).ok_or_else(|| Error::Backend {
            backend: "scripted".into(),
            message: format!("judgment prompt has no `{header}:` line"),
        })?;
        let key = slug(&label);
        let answer = self.judge_key(prompt, &key);
        Ok(if answer {
            format!("The fact's {key} attribute matches the rule requirement. ANSWER: YES")
        } else {
            format!("The fact's {key} attribute does not match the rule requirement. ANSWER: NO")
        })
    }

    fn respond_single_pass(&self, prompt: &str) -> String {
        if matches!(self.mode, ScriptedMode::Affirmative) {
            return "Reviewing the rule against the facts, the charge appears made out. ANSWER: YES"
                .to_string();
        }
        let elements = parse_elements(prompt);
        let all_met = !elements.is_empty()
            && elements.iter().all(|(key, _)| self.judge_key(prompt, key));
        if all_met {
            "Every requirement of the rule is present in the facts. ANSWER: YES".to_string()
        } else {
            "At least one requirement of the rule is absent from the facts. ANSWER: NO".to_string()
        }
    }

    fn respond_reflection(&self, prompt: &str) -> String {
        let findings = finding_lines(prompt);
        let mut wrong = Vec::new();
        let mut correct = Vec::new();
        for (label, stated) in &findings {
            let key = slug(label);
            let truth = Self::truth(prompt, &key);
            let truthful_finding = if truth { "satisfied" } else { "not_satisfied" };
            if stated == truthful_finding {
                correct.push((label.clone(), key));
            } else {
                wrong.push((label.clone(), key));
            }
        }
        let picked = match self.reflector_mode {
            ReflectorMode::Accurate => wrong,
            ReflectorMode::WrongAspect => correct.into_iter().take(1).collect(),
        };
        if picked.is_empty() {
            return "Every aspect assessment looks consistent with the facts.".to_string();
        }
        picked
            .iter()
            .map(|(label, key)| {
                format!(
                    "ERROR: {label} | The {label} assessment contradicts the fact attributes; \
                     compare the fact's {key} directly against the rule requirement. {}",
                    hint_marker(key)
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn respond_insight_pair(prompt: &str) -> Result<String> {
        let charge = header_line(prompt, "Charge").unwrap_or_else(|| "the charge".to_string());
        let label = header_line(prompt, "Aspect").ok_or_else(|| Error::Backend {
            backend: "scripted".into(),
            message: "insight-pair prompt has no `Aspect:` line".into(),
        })?;
        let key = slug(&label);
        let value = crate::synthetic::element_value(prompt, &key);
        Ok(match value {
            Some(value) => {
                let mut text = format!(
                    "If the fact's {key} attribute equals {value}, then the {label} aspect of \
                     {charge} is satisfied; if it differs or is absent, then the aspect is not \
                     satisfied. {}",
                    hint_marker(&key)
                );
                if is_knowledge_value(&value) {
                    text.push(' ');
                    text.push_str(&check_marker(&key));
                }
                text
            }
            None => format!(
                "If the rule states a {key} requirement, then verify it against the fact before \
                 judging the {label} aspect. {}",
                hint_marker(&key)
            ),
        })
    }

    fn respond_insight_success(prompt: &str) -> String {
        let findings = tagged_finding_lines(prompt);
        let mut decisive = Vec::new();
        for (label, golden_finding) in findings.iter().filter_map(|(tag, l, f)| {
            (tag == "golden").then_some((l.clone(), f.clone()))
        }) {
            let confusing_finding = findings
                .iter()
                .find(|(tag, l, _)| tag == "confusing" && *l == label)
                .map(|(_, _, f)| f.clone());
            if confusing_finding.is_some_and(|f| f != golden_finding) {
                decisive.push(label);
            }
        }
        let mut lines = Vec::new();
        for label in decisive {
            let key = slug(&label);
            let Some(value) = crate::synthetic::element_value(prompt, &key) else {
                continue;
            };
            let mut note = format!(
                "If the fact's {key} attribute equals {value}, then the {label} aspect is \
                 satisfied; otherwise the aspect fails."
            );
            if is_knowledge_value(&value) {
                note.push(' ');
                note.push_str(&check_marker(&key));
            }
            lines.push(format!("INSIGHT {label} | {note}"));
        }
        if lines.is_empty() {
            return "No decisive aspect separates the two findings.".to_string();
        }
        lines.join("\n")
    }

    fn respond_insight_transfer(prompt: &str) -> String {
        let mut lines = Vec::new();
        for (label, text) in labeled_items(prompt) {
            let key = slug(&label);
            let Some(value) = crate::synthetic::element_value(prompt, &key) else {
                continue;
            };
            let mut note = format!(
                "If the fact's {key} attribute equals {value}, then the {label} aspect is \
                 satisfied; otherwise it is not."
            );
            if text.contains(&hint_marker(&key)) {
                note.push(' ');
                note.push_str(&hint_marker(&key));
            }
            if text.contains(&check_marker(&key)) {
                note.push(' ');
                note.push_str(&check_marker(&key));
            }
            lines.push(format!("INSIGHT {label} | {note}"));
        }
        if lines.is_empty() {
            return "No neighbor insights could be adapted.".to_string();
        }
        lines.join("\n")
    }

    fn respond_insight_direct(prompt: &str) -> String {
        let elements = parse_elements(prompt);
        if elements.is_empty() {
            return "No aspects could be identified in this rule.".to_string();
        }
        elements
            .iter()
            .map(|(key, _)| {
                let label = capitalize(key);
                format!(
                    "INSIGHT {label} | If the rule's stated requirements appear in the fact, \
                     then the {label} aspect is satisfied."
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn respond_filter(prompt: &str) -> String {
        let mut kept = Vec::new();
        let mut seen_texts: Vec<String> = Vec::new();
        for (id, text) in id_items(prompt) {
            let lowered = text.to_lowercase();
            let well_formed = has_word(&lowered, "if") && has_word(&lowered, "then");
            let duplicate = seen_texts.iter().any(|t| *t == text);
            if well_formed && !duplicate {
                seen_texts.push(text);
                kept.push(format!("KEEP: {id}"));
            }
        }
        if kept.is_empty() {
            return "Nothing worth keeping.".to_string();
        }
        kept.join("\n")
    }

    fn respond_fact_check_select(prompt: &str) -> String {
        let mut picked = Vec::new();
        for (id, text) in bracket_items(prompt) {
            if text.contains("[CHECK ") && !picked.contains(&id) {
                picked.push(id);
            }
        }
        if picked.is_empty() {
            return "NOTHING TO CHECK".to_string();
        }
        picked
            .iter()
            .map(|id| format!("CHECK: {id}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn respond_key_question(prompt: &str) -> Result<String> {
        let label = header_line(prompt, "Aspect").ok_or_else(|| Error::Backend {
            backend: "scripted".into(),
            message: "key-question prompt has no `Aspect:` line".into(),
        })?;
        let key = slug(&label);
        let value = crate::synthetic::attribute_value(prompt, &key)
            .unwrap_or_else(|| "unknown".to_string());
        Ok(format!(
            "Is '{value}' within the category the rule requires for the {label} aspect? {}",
            ask_marker(&key)
        ))
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult> {
        request.validate()?;
        let preamble = request.role_preamble.as_deref().unwrap_or("");
        let prompt = &request.rendered_prompt;
        let text = if preamble.contains("auto-planner") || preamble.contains("legal analyst") {
            Self::respond_aspect_list(prompt)
        } else if preamble.contains("label canonicalizer") {
            Self::respond_canonicalize(prompt)
        } else if preamble.contains("sub-task judge") {
            self.respond_judgment(prompt, "Aspect")?
        } else if preamble.contains("rule-element judge") {
            self.respond_judgment(prompt, "Element")?
        } else if preamble.contains("single-pass legal judge") {
            self.respond_single_pass(prompt)
        } else if preamble.contains("self-reflector") {
            self.respond_reflection(prompt)
        } else if preamble.contains("insight drawer comparing") {
            Self::respond_insight_pair(prompt)?
        } else if preamble.contains("insight drawer reviewing") {
            Self::respond_insight_success(prompt)
        } else if preamble.contains("insight drawer adapting") {
            Self::respond_insight_transfer(prompt)
        } else if preamble.contains("insight drawer reading") {
            Self::respond_insight_direct(prompt)
        } else if preamble.contains("insight filter") {
            Self::respond_filter(prompt)
        } else if preamble.contains("fact-check selector") {
            Self::respond_fact_check_select(prompt)
        } else if preamble.contains("key-question writer") {
            Self::respond_key_question(prompt)?
        } else {
            return Err(Error::Backend {
                backend: self.id.clone(),
                message: format!("no scripted behaviour for role preamble `{preamble}`"),
            });
        };
        let prompt_tokens =
            whitespace_tokens(preamble) + whitespace_tokens(prompt);
        let output_tokens = whitespace_tokens(&text);
        Ok(CompletionResult {
            text,
            prompt_tokens,
            output_tokens,
            backend_id: self.id.clone(),
        })
    }
}

// ============================================================================
// Prompt-shape parsers
// ============================================================================

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^([A-Za-z -]+):[ \t]*(.+)$").expect("static regex"))
}

/// First `Header: value` line with the given header name.
fn header_line(prompt: &str, header: &str) -> Option<String> {
    header_re()
        .captures_iter(prompt)
        .find(|c| c[1].trim() == header)
        .map(|c| c[2].trim().to_string())
}

/// Items of the form `- text`.
fn dash_items(prompt: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?m)^- (.+)$").expect("static regex"));
    re.captures_iter(prompt)
        .map(|c| c[1].trim().to_string())
        .filter(|s| !s.is_empty() && !s.starts_with('[') && !s.contains("::") && !s.starts_with('('))
        .collect()
}

/// Items of the form `- Label: finding`.
fn finding_lines(prompt: &str) -> Vec<(String, String)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?m)^- ([^:\[\]]+): (satisfied|not_satisfied|uncertain)$")
            .expect("static regex")
    });
    re.captures_iter(prompt)
        .map(|c| (c[1].trim().to_string(), c[2].to_string()))
        .collect()
}

/// Items of the form `- [tag] Label: finding`.
fn tagged_finding_lines(prompt: &str) -> Vec<(String, String, String)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?m)^- \[(golden|confusing)\] ([^:]+): (satisfied|not_satisfied|uncertain)$")
            .expect("static regex")
    });
    re.captures_iter(prompt)
        .map(|c| (c[1].to_string(), c[2].trim().to_string(), c[3].to_string()))
        .collect()
}

/// Items of the form `- id :: text`.
fn id_items(prompt: &str) -> Vec<(String, String)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?m)^- (\S+) :: (.+)$").expect("static regex"));
    re.captures_iter(prompt)
        .map(|c| (c[1].to_string(), c[2].trim().to_string()))
        .collect()
}

/// Items of the form `- [id] text`.
fn bracket_items(prompt: &str) -> Vec<(String, String)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?m)^- \[([^\]]+)\] (.+)$").expect("static regex"));
    re.captures_iter(prompt)
        .map(|c| (c[1].to_string(), c[2].trim().to_string()))
        .collect()
}

/// Items of the form `- (Label) text`.
fn labeled_items(prompt: &str) -> Vec<(String, String)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?m)^- \(([^)]+)\) (.+)$").expect("static regex"));
    re.captures_iter(prompt)
        .map(|c| (c[1].trim().to_string(), c[2].trim().to_string()))
        .collect()
}

fn has_word(text: &str, word: &str) -> bool {
    text.split(|c: char| !c.is_alphanumeric())
        .any(|w| w == word)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::roles;

    fn request(role: &str, prompt: &str) -> CompletionRequest {
        CompletionRequest::new(prompt).with_role(role)
    }

    const RULE: &str = "A charge holds when all elements are present. \
        [ELEM subject=state_functionary] [ELEM mental=intent] \
        [ELEM object=public_funds] [ELEM conduct=diversion]";
    const MATCHING_FACT: &str = "The defendant acted as described. \
        [ATTR subject=state_functionary] [ATTR mental=intent] \
        [ATTR object=public_funds] [ATTR conduct=diversion]";
    const OFF_SUBJECT_FACT: &str = "The defendant acted as described. \
        [ATTR subject=company_manager] [ATTR mental=intent] \
        [ATTR object=public_funds] [ATTR conduct=diversion]";

    #[test]
    fn test_planner_lists_one_aspect_per_element() {
        let backend = ScriptedBackend::perfect();
        let prompt = format!("Question: q\nRule: {RULE}\nFact: {MATCHING_FACT}");
        let result = backend.complete(&request(roles::PLANNER, &prompt)).unwrap();
        assert_eq!(result.text, "1. Subject\n2. Mental\n3. Object\n4. Conduct");
    }

    #[test]
    fn test_identical_calls_are_byte_identical() {
        let backend = ScriptedBackend::perfect();
        let prompt = format!("Aspect: Subject\nRule: {RULE}\nFact: {MATCHING_FACT}");
        let req = request(roles::SUBTASK_JUDGE, &prompt);
        let first = backend.complete(&req).unwrap();
        let second = backend.complete(&req).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.prompt_tokens, whitespace_tokens(roles::SUBTASK_JUDGE) + whitespace_tokens(&prompt));
        assert_eq!(first.output_tokens, whitespace_tokens(&first.text));
    }

    #[test]
    fn test_perfect_judge_matches_predicate() {
        let backend = ScriptedBackend::perfect();
        let sat = format!("Aspect: Subject\nRule: {RULE}\nFact: {MATCHING_FACT}");
        let unsat = format!("Aspect: Subject\nRule: {RULE}\nFact: {OFF_SUBJECT_FACT}");
        assert!(backend
            .complete(&request(roles::SUBTASK_JUDGE, &sat))
            .unwrap()
            .text
            .ends_with("ANSWER: YES"));
        assert!(backend
            .complete(&request(roles::SUBTASK_JUDGE, &unsat))
            .unwrap()
            .text
            .ends_with("ANSWER: NO"));
    }

    #[test]
    fn test_affirmative_judge_always_says_yes() {
        let backend = ScriptedBackend::affirmative();
        let unsat = format!("Aspect: Subject\nRule: {RULE}\nFact: {OFF_SUBJECT_FACT}");
        assert!(backend
            .complete(&request(roles::SUBTASK_JUDGE, &unsat))
            .unwrap()
            .text
            .ends_with("ANSWER: YES"));
        let single = format!("Rule: {RULE}\nFact: {OFF_SUBJECT_FACT}");
        assert!(backend
            .complete(&request(roles::SINGLE_PASS_JUDGE, &single))
            .unwrap()
            .text
            .ends_with("ANSWER: YES"));
    }

    #[test]
    fn test_flawed_judge_errs_until_hinted() {
        let flaw = ElementFlaw::parse("subject=state_functionary").unwrap();
        let backend = ScriptedBackend::flawed(flaw);
        let base = format!("Aspect: Subject\nRule: {RULE}\nFact: {MATCHING_FACT}");
        assert!(backend
            .complete(&request(roles::SUBTASK_JUDGE, &base))
            .unwrap()
            .text
            .ends_with("ANSWER: NO"));
        let hinted = format!("{base}\nReflection: re-check it. [HINT subject]");
        assert!(backend
            .complete(&request(roles::SUBTASK_JUDGE, &hinted))
            .unwrap()
            .text
            .ends_with("ANSWER: YES"));
        // The flaw names a specific required value, so other rules are unaffected.
        let other_rule = RULE.replace("state_functionary", "company_manager");
        let other = format!("Aspect: Subject\nRule: {other_rule}\nFact: {OFF_SUBJECT_FACT}");
        assert!(backend
            .complete(&request(roles::SUBTASK_JUDGE, &other))
            .unwrap()
            .text
            .ends_with("ANSWER: YES"),
            "the company_manager rule is outside the flaw's scope, so truth wins");
    }

    #[test]
    fn test_flaw_without_value_hits_every_rule() {
        let backend = ScriptedBackend::flawed(ElementFlaw::parse("mental").unwrap());
        let prompt = format!("Aspect: Mental\nRule: {RULE}\nFact: {MATCHING_FACT}");
        assert!(backend
            .complete(&request(roles::SUBTASK_JUDGE, &prompt))
            .unwrap()
            .text
            .ends_with("ANSWER: NO"));
    }

    #[test]
    fn test_single_pass_judge_is_element_conjunction() {
        let backend = ScriptedBackend::perfect();
        let sat = format!("Rule: {RULE}\nFact: {MATCHING_FACT}");
        let unsat = format!("Rule: {RULE}\nFact: {OFF_SUBJECT_FACT}");
        assert!(backend
            .complete(&request(roles::SINGLE_PASS_JUDGE, &sat))
            .unwrap()
            .text
            .ends_with("ANSWER: YES"));
        assert!(backend
            .complete(&request(roles::SINGLE_PASS_JUDGE, &unsat))
            .unwrap()
            .text
            .ends_with("ANSWER: NO"));
    }

    #[test]
    fn test_reflector_names_the_mismatched_aspect() {
        let backend = ScriptedBackend::perfect();
        let prompt = format!(
            "Charge: c\nRole under review: golden\nExpected verdict: guilty\n\
             Rule: {RULE}\nFact: {MATCHING_FACT}\nFindings:\n\
             - Subject: not_satisfied\n- Mental: satisfied\n- Object: satisfied\n- Conduct: satisfied"
        );
        let text = backend
            .complete(&request(roles::REFLECTOR, &prompt))
            .unwrap()
            .text;
        assert!(text.starts_with("ERROR: Subject |"), "{text}");
        assert!(text.contains("[HINT subject]"));
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn test_wrong_aspect_reflector_names_a_correct_aspect() {
        let backend =
            ScriptedBackend::perfect().with_reflector_mode(ReflectorMode::WrongAspect);
        let prompt = format!(
            "Rule: {RULE}\nFact: {MATCHING_FACT}\nFindings:\n\
             - Subject: not_satisfied\n- Mental: satisfied\n- Object: satisfied\n- Conduct: satisfied"
        );
        let text = backend
            .complete(&request(roles::REFLECTOR, &prompt))
            .unwrap()
            .text;
        assert!(text.starts_with("ERROR: Mental |"), "{text}");
    }

    #[test]
    fn test_insight_pair_response_carries_hint_and_check() {
        let backend = ScriptedBackend::perfect();
        let prompt = format!(
            "Charge: SYN-P1-A\nAspect: Subject\nRule: {RULE}\nErroneous answer: no\nCorrected answer: yes"
        );
        let text = backend
            .complete(&request(roles::INSIGHT_PAIR, &prompt))
            .unwrap()
            .text;
        let lowered = text.to_lowercase();
        assert!(has_word(&lowered, "if") && has_word(&lowered, "then"), "{text}");
        assert!(text.contains("[HINT subject]"));
        assert!(text.contains("[CHECK subject]"), "state_functionary is knowledge-dependent");
    }

    #[test]
    fn test_insight_success_emits_one_note_per_decisive_aspect() {
        let backend = ScriptedBackend::perfect();
        let prompt = format!(
            "Golden charge: g\nConfusing charge: c\nRule: {RULE}\nFindings:\n\
             - [golden] Subject: satisfied\n- [golden] Mental: satisfied\n\
             - [confusing] Subject: not_satisfied\n- [confusing] Mental: satisfied"
        );
        let text = backend
            .complete(&request(roles::INSIGHT_SUCCESS, &prompt))
            .unwrap()
            .text;
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("INSIGHT Subject |"), "{text}");
    }

    #[test]
    fn test_filter_keeps_first_of_exact_duplicates_and_drops_malformed() {
        let backend = ScriptedBackend::perfect();
        let prompt = "Insights:\n\
            - a1 :: If x, then y.\n\
            - a2 :: If x, then y.\n\
            - a3 :: totally freeform note\n\
            - a4 :: If p, then q.";
        let text = backend
            .complete(&request(roles::INSIGHT_FILTER, prompt))
            .unwrap()
            .text;
        assert_eq!(text, "KEEP: a1\nKEEP: a4");
    }

    #[test]
    fn test_fact_check_selector_keys_on_check_marker() {
        let backend = ScriptedBackend::perfect();
        let prompt = "- [subject] If the subject is a public official, then it counts. [CHECK subject]\n\
                      - [mental] If intent is shown, then it counts.";
        let text = backend
            .complete(&request(roles::FACT_CHECK_SELECTOR, prompt))
            .unwrap()
            .text;
        assert_eq!(text, "CHECK: subject");
        let none = backend
            .complete(&request(
                roles::FACT_CHECK_SELECTOR,
                "- [mental] If intent is shown, then it counts.",
            ))
            .unwrap()
            .text;
        assert_eq!(none, "NOTHING TO CHECK");
    }

    #[test]
    fn test_key_question_mentions_fact_value_and_ask_marker() {
        let backend = ScriptedBackend::perfect();
        let prompt = format!("Aspect: Subject\nFact: {MATCHING_FACT}\nInsights:\n- note");
        let text = backend
            .complete(&request(roles::QUESTION_WRITER, &prompt))
            .unwrap()
            .text;
        assert!(text.contains("state_functionary"), "{text}");
        assert!(text.contains("[ASK subject]"));
    }

    #[test]
    fn test_unknown_role_is_a_backend_error() {
        let backend = ScriptedBackend::perfect();
        let err = backend
            .complete(&request("You are a mystery agent.", "prompt"))
            .unwrap_err();
        assert!(err.is_backend_failure());
    }

    #[test]
    fn test_flaw_spec_parsing() {
        assert_eq!(
            ElementFlaw::parse("subject").unwrap(),
            ElementFlaw { key: "subject".into(), value: None }
        );
        assert_eq!(
            ElementFlaw::parse("subject=state_functionary").unwrap(),
            ElementFlaw {
                key: "subject".into(),
                value: Some("state_functionary".into())
            }
        );
        assert!(ElementFlaw::parse("").is_err());
        assert!(ElementFlaw::parse("subject=").is_err());
    }
}
