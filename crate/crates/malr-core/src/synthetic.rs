//! Synthetic rule-world: machine-readable rules, facts, and corpora.
//!
//! Rules carry `[ELEM key=value]` markers and facts carry `[ATTR key=value]`
//! markers, so the scripted backend can judge any aspect by exact predicate
//! evaluation. Three more markers ride inside generated prose: `[HINT key]`
//! (reflection or insight guidance for one aspect), `[CHECK key]` (the aspect
//! hinges on external knowledge), and `[ASK key]` (a key question about the
//! aspect). The generated corpus mirrors the training regime of the real
//! task: 8 confusing-charge pairs, 16 charges, two cases per charge.

use regex::Regex;
use std::sync::OnceLock;

use crate::domain::{CaseRecord, ChargeQuery, FactDescription, LegalRule};

/// The four canonical element keys every synthetic rule uses, in rule order.
pub const ELEMENT_KEYS: [&str; 4] = ["subject", "mental", "object", "conduct"];

/// Element values whose assessment depends on external knowledge; insights
/// about them get a `[CHECK key]` marker so the fact-check selector fires.
pub const KNOWLEDGE_VALUES: [&str; 1] = ["state_functionary"];

pub fn is_knowledge_value(value: &str) -> bool {
    KNOWLEDGE_VALUES.contains(&value)
}

fn marker_regex(tag: &str) -> Regex {
    Regex::new(&format!(
        r"\[{tag} ([a-z][a-z0-9_]*)=([a-z0-9][a-z0-9_]*)\]"
    ))
    .expect("static regex")
}

fn key_marker_regex(tag: &str) -> Regex {
    Regex::new(&format!(r"\[{tag} ([a-z][a-z0-9_]*)\]")).expect("static regex")
}

fn elem_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| marker_regex("ELEM"))
}

fn attr_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| marker_regex("ATTR"))
}

fn hint_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| key_marker_regex("HINT"))
}

fn check_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| key_marker_regex("CHECK"))
}

fn ask_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| key_marker_regex("ASK"))
}

fn parse_pairs(re: &Regex, text: &str) -> Vec<(String, String)> {
    re.captures_iter(text)
        .map(|c| (c[1].to_string(), c[2].to_string()))
        .collect()
}

fn parse_keys(re: &Regex, text: &str) -> Vec<String> {
    re.captures_iter(text).map(|c| c[1].to_string()).collect()
}

/// `[ELEM key=value]` markers in rule-text order.
pub fn parse_elements(text: &str) -> Vec<(String, String)> {
    parse_pairs(elem_re(), text)
}

/// `[ATTR key=value]` markers in fact-text order.
pub fn parse_attributes(text: &str) -> Vec<(String, String)> {
    parse_pairs(attr_re(), text)
}

pub fn parse_hints(text: &str) -> Vec<String> {
    parse_keys(hint_re(), text)
}

pub fn parse_checks(text: &str) -> Vec<String> {
    parse_keys(check_re(), text)
}

pub fn parse_asks(text: &str) -> Vec<String> {
    parse_keys(ask_re(), text)
}

pub fn hint_marker(key: &str) -> String {
    format!("[HINT {key}]")
}

pub fn check_marker(key: &str) -> String {
    format!("[CHECK {key}]")
}

pub fn ask_marker(key: &str) -> String {
    format!("[ASK {key}]")
}

/// The rule's required value for one element key.
pub fn element_value(text: &str, key: &str) -> Option<String> {
    parse_elements(text)
        .into_iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
}

/// The fact's stated value for one element key.
pub fn attribute_value(text: &str, key: &str) -> Option<String> {
    parse_attributes(text)
        .into_iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
}

/// Uppercases the first character, the display form of an element key.
pub fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

// ============================================================================
// Corpus generation
// ============================================================================

const PAIR_COUNT: usize = 8;
const CASES_PER_CHARGE: usize = 2;

/// A deterministic synthetic dataset: rules for 8 confusing-charge pairs and
/// two cases per charge for both training and evaluation.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub rules: Vec<LegalRule>,
    pub train_cases: Vec<CaseRecord>,
    pub eval_cases: Vec<CaseRecord>,
    pub innocent_cases: Vec<CaseRecord>,
}

fn pair_tag(pair: usize) -> String {
    format!("SYN-P{pair}")
}

fn charge_name(pair: usize, side: char) -> String {
    format!("SYN-P{pair}-{side}")
}

/// Element values for one charge. Within a pair, exactly one key differs.
fn charge_elements(pair: usize, side: char) -> Vec<(String, String)> {
    let differing_key = ELEMENT_KEYS[(pair - 1) % ELEMENT_KEYS.len()];
    ELEMENT_KEYS
        .iter()
        .map(|&key| {
            let value = if key == differing_key {
                if pair == 1 && key == "subject" {
                    // The flagship pair contrasts a knowledge-dependent
                    // subject category, mirroring the state-functionary
                    // distinction real confusing pairs hinge on.
                    match side {
                        'a' => "state_functionary".to_string(),
                        _ => "company_manager".to_string(),
                    }
                } else {
                    format!("{key}_kind_p{pair}{side}")
                }
            } else {
                format!("{key}_shared_p{pair}")
            };
            (key.to_string(), value)
        })
        .collect()
}

fn rule_for(pair: usize, side: char) -> LegalRule {
    let name = charge_name(pair, side.to_ascii_uppercase());
    let elements = charge_elements(pair, side);
    let markers: Vec<String> = elements
        .iter()
        .map(|(k, v)| format!("[ELEM {k}={v}]"))
        .collect();
    let text = format!(
        "A charge of {name} holds only when every element below is present in the facts. {}",
        markers.join(" ")
    );
    LegalRule::new(name, text)
        .expect("generated rule is non-empty")
        .with_article_ref(format!("Synthetic Code art. {pair}-{side}"))
}

fn case_for(pair: usize, side: char, index: usize, split: &str) -> CaseRecord {
    let golden = charge_name(pair, side.to_ascii_uppercase());
    let partner_side = if side == 'a' { 'b' } else { 'a' };
    let confusing = charge_name(pair, partner_side.to_ascii_uppercase());
    let elements = charge_elements(pair, side);
    let markers: Vec<String> = elements
        .iter()
        .map(|(k, v)| format!("[ATTR {k}={v}]"))
        .collect();
    let case_id = format!("{split}-{golden}-{index}");
    let text = format!(
        "{} record {index} concerning {golden}. The defendant's situation matches the profile below. {}",
        capitalize(split),
        markers.join(" ")
    );
    CaseRecord {
        fact: FactDescription::new(case_id, text).expect("generated fact is non-empty"),
        queries: vec![
            ChargeQuery {
                charge_name: golden,
                expected_guilty: true,
            },
            ChargeQuery {
                charge_name: confusing,
                expected_guilty: false,
            },
        ],
        pair_tag: Some(pair_tag(pair)),
    }
}

/// An innocent-style record: a single query against a similar charge, with
/// one attribute off so the expected verdict is not guilty.
fn innocent_case_for(pair: usize, index: usize) -> CaseRecord {
    let charge = charge_name(pair, 'A');
    let mut elements = charge_elements(pair, 'a');
    // Break the conduct element so no synthetic rule is satisfied.
    for (key, value) in &mut elements {
        if key == "conduct" {
            *value = "lawful_everyday_activity".to_string();
        }
    }
    let markers: Vec<String> = elements
        .iter()
        .map(|(k, v)| format!("[ATTR {k}={v}]"))
        .collect();
    let case_id = format!("innocent-{pair}-{index}");
    let text = format!(
        "Innocent record {index} screened against {charge}. Nothing unlawful occurred. {}",
        markers.join(" ")
    );
    CaseRecord {
        fact: FactDescription::new(case_id, text).expect("generated fact is non-empty"),
        queries: vec![ChargeQuery {
            charge_name: charge,
            expected_guilty: false,
        }],
        pair_tag: Some(pair_tag(pair)),
    }
}

/// Builds the full deterministic corpus. Calling this twice yields equal
/// values, so fixtures generated from it are reproducible byte for byte.
pub fn generate_corpus() -> SyntheticCorpus {
    let mut rules = Vec::new();
    let mut train_cases = Vec::new();
    let mut eval_cases = Vec::new();
    for pair in 1..=PAIR_COUNT {
        for side in ['a', 'b'] {
            rules.push(rule_for(pair, side));
            for index in 1..=CASES_PER_CHARGE {
                train_cases.push(case_for(pair, side, index, "train"));
                eval_cases.push(case_for(pair, side, index, "eval"));
            }
        }
    }
    let innocent_cases = vec![
        innocent_case_for(2, 1),
        innocent_case_for(3, 1),
        innocent_case_for(5, 1),
        innocent_case_for(7, 1),
    ];
    SyntheticCorpus {
        rules,
        train_cases,
        eval_cases,
        innocent_cases,
    }
}
