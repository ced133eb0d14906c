//! Versioned prompt templates.
//!
//! Every prompt carries a fenced block tagged `facts` holding a compact JSON
//! [`PromptPayload`]. The prose around it is for the model; the block lets
//! mock providers and reviewers recover exactly what the prompt asserted.

use std::collections::BTreeSet;
use std::fmt::Write;

use bear_core::{render_facts_text, AnalysisFacts, AsPath, Asn, EventType, Prefix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::request::{CompletionRequest, Stage};

pub const TEMPLATE_VERSION: u32 = 1;
pub const FACTS_TAG: &str = "facts";
pub const ANSWER_PREFIX: &str = "ANSWER:";
pub const RECOMMENDATIONS_HEADER: &str = "RECOMMENDATIONS:";
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;

const SYSTEM_ANALYST: &str = "You are a BGP operations analyst. You read routing tables \
collected from BGP route collectors and explain routing anomalies precisely. Base every \
statement on the data provided.";

const SYSTEM_GENERATOR: &str = "You design realistic BGP anomaly scenarios for testing \
anomaly explanation systems. Reply with JSON only.";

/// Questions the describe stage must answer for every peer.
pub const DESCRIBE_QUESTIONS: [&str; 5] = [
    "For each peer, did its route to the target prefix change between the before and after tables?",
    "For each changed route, is the final hop (origin AS) different from before?",
    "Did any peer start carrying a more-specific prefix of the target that it lacked before?",
    "For each such more-specific route, how does its AS path differ from the same peer's route to the target?",
    "Is the origin AS of that more-specific route one of the target's historical origins?",
];

/// (AS path, destination) pairs shown before the data.
pub const DESTINATION_EXAMPLES: [(&[u32], u32); 4] = [
    (&[4608, 1221, 4637, 15169], 15169),
    (&[3356, 2914, 13335], 13335),
    (&[174, 6939, 6939, 32934], 32934),
    (&[64500], 64500),
];

const HIJACK_DEFINITION: &str = "BGP hijack: an AS originates a prefix, or a more-specific \
sub-prefix of it, that it is not entitled to originate. Affected AS paths now end at a \
destination AS that never originated the prefix in the historical data.";

const LEAK_DEFINITION: &str = "BGP route leak: an AS re-announces a route it learned from one \
neighbor to others in violation of routing policy. Affected AS paths keep the legitimate \
destination AS but now traverse a transit AS that did not appear on routes to the prefix \
before; that AS is the leaker.";

const SUBTLETY_NOTE: &str = "Important: the anomaly may be visible in only a single AS path, or \
only on a sub-prefix of the target prefix, while every other path looks normal. A single \
changed path or a newly announced sub-prefix is sufficient evidence. Use the sub-prefix \
labels when the anomalous routes are for a more-specific prefix of the target.";

/// Machine-readable content of a prompt.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facts: Option<AnalysisFacts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<EventType>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reports: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthContext>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_candidates: Option<SeedContext>,
}

/// Inputs for drafting a synthetic event description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthContext {
    pub target_prefix: Prefix,
    pub historical_origins: BTreeSet<Asn>,
    /// Paths to the target prefix just before the event.
    pub paths: Vec<AsPath>,
    /// ASNs the offender must not reuse.
    pub reserved_asns: BTreeSet<Asn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_type: Option<EventType>,
}

/// Candidate prefixes and RIB dump times for picking an event seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedContext {
    pub prefixes: Vec<Prefix>,
    pub dump_timestamps: Vec<u64>,
}

/// Everything a stage template may draw on. Unused fields are ignored.
#[derive(Debug, Clone, Default)]
pub struct PromptContext {
    /// Tabular JSON of the history/before/after snapshots.
    pub tables: Option<String>,
    pub facts: Option<AnalysisFacts>,
    pub change_report: Option<String>,
    pub reports: Vec<String>,
    pub label: Option<EventType>,
    pub consensus: Option<String>,
    pub synth: Option<SynthContext>,
    pub seed_candidates: Option<SeedContext>,
    /// Validation feedback for a repair round.
    pub repair_note: Option<String>,
    /// Stage default when absent.
    pub temperature: Option<f64>,
    pub seed: Option<u64>,
    pub max_output_tokens: Option<u32>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("{stage} prompt is missing `{field}`")]
    MissingField { stage: Stage, field: &'static str },
    #[error("no `{0}` block found in prompt")]
    MissingBlock(&'static str),
    #[error("malformed `{tag}` block: {message}")]
    MalformedBlock { tag: &'static str, message: String },
    #[error("reply does not end with an `ANSWER: <label>` line")]
    MissingAnswer,
    #[error("unrecognized answer label `{0}`")]
    UnknownLabel(String),
}

fn need<'a, T>(stage: Stage, field: &'static str, v: Option<&'a T>) -> Result<&'a T, PromptError> {
    v.ok_or(PromptError::MissingField { stage, field })
}

fn need_reports(stage: Stage, reports: &[String]) -> Result<(), PromptError> {
    if reports.is_empty() {
        Err(PromptError::MissingField {
            stage,
            field: "reports",
        })
    } else {
        Ok(())
    }
}

/// The facts with unchanged routes dropped. Classification and offender
/// attribution depend only on changed routes, so this is lossless for them.
pub fn compact_facts(facts: &AnalysisFacts) -> AnalysisFacts {
    AnalysisFacts {
        facts: facts.changed().cloned().collect(),
        ..facts.clone()
    }
}

pub fn embed_block(out: &mut String, tag: &str, json: &str) {
    let _ = write!(out, "```{tag}\n{json}\n```\n");
}

/// Body of the first fenced block tagged `tag`.
pub fn extract_block<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("```{tag}\n");
    let start = text.find(&open)? + open.len();
    let len = text[start..].find("\n```")?;
    Some(&text[start..start + len])
}

pub fn payload_of(request: &CompletionRequest) -> Result<PromptPayload, PromptError> {
    let body = extract_block(&request.user_text, FACTS_TAG).ok_or(PromptError::MissingBlock(FACTS_TAG))?;
    serde_json::from_str(body).map_err(|e| PromptError::MalformedBlock {
        tag: FACTS_TAG,
        message: e.to_string(),
    })
}

/// JSON object in a reply: a fenced `json` block if present, else the span
/// from the first `{` to the last `}`.
pub fn extract_json(text: &str) -> Option<&str> {
    if let Some(body) = extract_block(text, "json") {
        return Some(body.trim());
    }
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

fn label_list() -> String {
    EventType::ALL
        .iter()
        .map(|e| e.label())
        .collect::<Vec<_>>()
        .join(", ")
}

fn fmt_hops(hops: &[u32]) -> String {
    hops.iter().map(u32::to_string).collect::<Vec<_>>().join(", ")
}

pub fn build_prompt(stage: Stage, ctx: &PromptContext) -> Result<CompletionRequest, PromptError> {
    let mut payload = PromptPayload::default();
    let mut user = String::new();
    let system = match stage {
        Stage::Describe => {
            let tables = need(stage, "tables", ctx.tables.as_ref())?;
            let facts = need(stage, "facts", ctx.facts.as_ref())?;
            let _ = writeln!(
                user,
                "Target prefix: {}\n\nThe BGP data below holds three routing tables in the form \
                 {{prefix: {{collector: {{peer: [AS path]}}}}}}: `history` is the last RIB dump \
                 before the event, `before` is the table just before the event starts and \
                 `after` is the table just after it starts. Compare `after` with `before`, using \
                 `history` as the reference for normal routing.\n",
                facts.target_prefix
            );
            user.push_str("The destination of an AS path is its last AS. Examples:\n");
            for (hops, dest) in DESTINATION_EXAMPLES {
                let _ = writeln!(user, "- AS path [{}] -> destination AS{dest}", fmt_hops(hops));
            }
            user.push_str("\nBGP data:\n");
            embed_block(&mut user, "tables", tables);
            user.push_str("\nAnswer these questions for every peer and collector:\n");
            for (i, q) in DESCRIBE_QUESTIONS.iter().enumerate() {
                let _ = writeln!(user, "{}. {q}", i + 1);
            }
            user.push_str(
                "\nName the collector, the peer, the old and new AS paths and the old and new \
                 destination AS for each change. If nothing changed, say so.\n\nPrecomputed facts:\n",
            );
            payload.facts = Some(facts.clone());
            SYSTEM_ANALYST
        }
        Stage::Classify => {
            let report = need(stage, "change_report", ctx.change_report.as_ref())?;
            let facts = need(stage, "facts", ctx.facts.as_ref())?;
            let _ = write!(
                user,
                "Target prefix: {}\n\nDefinitions:\n- {HIJACK_DEFINITION}\n- {LEAK_DEFINITION}\n\n\
                 {SUBTLETY_NOTE}\n\nAS path change report:\n{report}\n\n\
                 Decide which event this is. Explain briefly, then finish with exactly one line \
                 `{ANSWER_PREFIX} <label>` where <label> is one of: {}.\n\nPrecomputed facts:\n",
                facts.target_prefix,
                label_list()
            );
            payload.facts = Some(compact_facts(facts));
            SYSTEM_ANALYST
        }
        Stage::Consensus => {
            need_reports(stage, &ctx.reports)?;
            let label = *need(stage, "label", ctx.label.as_ref())?;
            let _ = writeln!(
                user,
                "Below are {} independent AS path change reports for the same event. The majority \
                 classification is: {}.\nWrite one consolidated change report that keeps only \
                 statements supported by the majority of the reports and consistent with that \
                 classification.\n",
                ctx.reports.len(),
                label.label()
            );
            for (i, r) in ctx.reports.iter().enumerate() {
                let _ = writeln!(user, "Report {}:\n{r}\n", i + 1);
            }
            user.push_str("Machine-readable copy:\n");
            payload.reports = ctx.reports.clone();
            payload.label = Some(label);
            SYSTEM_ANALYST
        }
        Stage::FinalReport => {
            let consensus = need(stage, "consensus", ctx.consensus.as_ref())?;
            let label = *need(stage, "label", ctx.label.as_ref())?;
            let facts = need(stage, "facts", ctx.facts.as_ref())?;
            let _ = write!(
                user,
                "Target prefix: {}\nClassification: {}\n\nConsolidated AS path change report:\n\
                 {consensus}\n\nWrite an incident report for network operators. Cover the event \
                 type, the affected prefixes including any sub-prefix, the offending AS, the \
                 observed path changes and how many peers observed them. Then write a line \
                 `{RECOMMENDATIONS_HEADER}` followed by one recommended action per line, each \
                 starting with `- `.\n\nPrecomputed facts:\n",
                facts.target_prefix,
                label.label()
            );
            payload.facts = Some(compact_facts(facts));
            payload.label = Some(label);
            payload.consensus = Some(consensus.clone());
            SYSTEM_ANALYST
        }
        Stage::SynthDescription => {
            let synth = need(stage, "synth", ctx.synth.as_ref())?;
            let _ = writeln!(
                user,
                "Target prefix: {}\nLegitimate origin AS: {}\n\nExample AS paths to the target \
                 prefix:",
                synth.target_prefix,
                synth.historical_origins.iter().map(|a| format!("AS{a}")).collect::<Vec<_>>().join(", ")
            );
            for p in synth.paths.iter().take(8) {
                let _ = writeln!(user, "- [{}]", fmt_hops(&p.hops().iter().map(|a| a.get()).collect::<Vec<_>>()));
            }
            let _ = write!(
                user,
                "\nInvent one hypothetical anomaly against this prefix. {}\
                 Reply with a JSON object with fields:\n\
                 - event_type: one of hijack, sub_prefix_hijack, route_leak, sub_prefix_route_leak\n\
                 - sub_prefix: a more-specific prefix of the target for sub-prefix events, else null\n\
                 - offender: the hijacker or leaker ASN, not present in the data above\n\
                 - sample_paths: for hijacks, several AS path examples each ending with the \
                 offender; for route leaks, exactly one AS path starting with the leaker and ending \
                 with the legitimate origin\n\
                 - detection_pct: share of peers that observe the event, between 0.1 and 0.9\n\n\
                 Scenario constraints:\n",
                match synth.required_type {
                    Some(t) => format!("The event type must be {}. ", t.label()),
                    None => "Choose the event type at random. ".to_string(),
                }
            );
            payload.synth = Some(synth.clone());
            SYSTEM_GENERATOR
        }
        Stage::SynthSeed => {
            let seeds = need(stage, "seed_candidates", ctx.seed_candidates.as_ref())?;
            let _ = write!(
                user,
                "Pick one IP prefix from the {} candidates and one Unix timestamp that falls at \
                 least 8 hours plus 5 minutes after one of the {} RIB dump times and less than 16 \
                 hours after it. Reply with a JSON object {{\"prefix\": \"<cidr>\", \
                 \"timestamp\": <seconds>}}.\n\nCandidates:\n",
                seeds.prefixes.len(),
                seeds.dump_timestamps.len()
            );
            payload.seed_candidates = Some(seeds.clone());
            SYSTEM_GENERATOR
        }
        Stage::Summarize => {
            need_reports(stage, &ctx.reports)?;
            let _ = writeln!(
                user,
                "Merge the following {} partial reports, each covering part of the routing data \
                 for one event, into a single report. Focus on information relevant to the BGP \
                 anomaly and drop repeated statements. Finish with exactly one line \
                 `{ANSWER_PREFIX} <label>` naming the anomaly type ({}).\n",
                ctx.reports.len(),
                label_list()
            );
            for (i, r) in ctx.reports.iter().enumerate() {
                let _ = writeln!(user, "Partial report {}:\n{r}\n", i + 1);
            }
            user.push_str("Machine-readable copy:\n");
            payload.reports = ctx.reports.clone();
            SYSTEM_ANALYST
        }
    };
    let json = serde_json::to_string(&payload).expect("payload serializes");
    embed_block(&mut user, FACTS_TAG, &json);
    if let Some(note) = &ctx.repair_note {
        let _ = write!(user, "\nYour previous reply was rejected: {note}\nReply again, fixing the problem.\n");
    }
    Ok(CompletionRequest {
        stage,
        template_version: TEMPLATE_VERSION,
        system_text: system.to_string(),
        user_text: user,
        temperature: ctx.temperature.unwrap_or(stage.default_temperature()),
        max_output_tokens: ctx.max_output_tokens.unwrap_or(DEFAULT_MAX_OUTPUT_TOKENS),
        seed: ctx.seed,
    })
}

/// Label from the mandatory final `ANSWER:` line. Earlier text is ignored.
pub fn parse_answer(text: &str) -> Result<EventType, PromptError> {
    let last = text
        .lines()
        .map(str::trim)
        .rfind(|l| !l.is_empty())
        .ok_or(PromptError::MissingAnswer)?;
    let rest = last
        .get(..ANSWER_PREFIX.len())
        .filter(|head| head.eq_ignore_ascii_case(ANSWER_PREFIX))
        .map(|_| &last[ANSWER_PREFIX.len()..])
        .ok_or(PromptError::MissingAnswer)?;
    rest.parse()
        .map_err(|_| PromptError::UnknownLabel(rest.trim().to_string()))
}

/// Narrative and recommendations of a final-report reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportText {
    pub narrative: String,
    pub recommendations: Vec<String>,
}

pub fn parse_report(text: &str) -> ReportText {
    let mut narrative = Vec::new();
    let mut recommendations = Vec::new();
    let mut in_recs = false;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.eq_ignore_ascii_case(RECOMMENDATIONS_HEADER) {
            in_recs = true;
        } else if in_recs {
            if let Some(item) = trimmed.strip_prefix("- ") {
                recommendations.push(item.trim().to_string());
            } else if !trimmed.is_empty() {
                narrative.push(line);
            }
        } else {
            narrative.push(line);
        }
    }
    ReportText {
        narrative: narrative.join("\n").trim().to_string(),
        recommendations,
    }
}

/// Text a faithful model would give for the describe stage.
pub fn reference_change_report(facts: &AnalysisFacts) -> String {
    render_facts_text(facts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bear_core::{analyze_changes, EventSpec, RouteSnapshot, SnapshotTriple};

    fn facts() -> AnalysisFacts {
        let p: Prefix = "10.0.0.0/8".parse().unwrap();
        let mut before = RouteSnapshot::new(0);
        before.insert(p, "rrc00", AsPath::from_u32s(&[3356, 15169]).unwrap());
        before.insert(p, "rrc01", AsPath::from_u32s(&[174, 15169]).unwrap());
        let mut after = before.clone();
        after.insert(p, "rrc00", AsPath::from_u32s(&[3356, 64500]).unwrap());
        analyze_changes(&SnapshotTriple {
            spec: EventSpec::new(p, 100_000, None, None).unwrap(),
            history: before.clone(),
            before,
            after,
        })
        .unwrap()
    }

    fn ctx() -> PromptContext {
        PromptContext {
            tables: Some("{}".into()),
            facts: Some(facts()),
            change_report: Some("report".into()),
            reports: vec!["a".into(), "b".into()],
            label: Some(EventType::Hijack),
            consensus: Some("consensus".into()),
            ..Default::default()
        }
    }

    #[test]
    fn describe_includes_questions_and_examples() {
        let r = build_prompt(Stage::Describe, &ctx()).unwrap();
        assert!(r.user_text.contains("did its route to the target prefix change"));
        for q in DESCRIBE_QUESTIONS {
            assert!(r.user_text.contains(q));
        }
        assert!(r.user_text.matches("-> destination AS").count() >= 3);
        assert!(r.user_text.contains("[4608, 1221, 4637, 15169] -> destination AS15169"));
        assert_eq!(r.temperature, 1.0);
        assert_eq!(payload_of(&r).unwrap().facts, Some(facts()));
    }

    #[test]
    fn classify_includes_both_definitions() {
        let r = build_prompt(Stage::Classify, &ctx()).unwrap();
        assert!(r.user_text.contains("BGP hijack:"));
        assert!(r.user_text.contains("BGP route leak:"));
        assert!(r.user_text.contains("sub-prefix"));
        assert!(r.user_text.contains("single AS path"));
        let embedded = payload_of(&r).unwrap().facts.unwrap();
        assert_eq!(embedded.facts.len(), 1);
    }

    #[test]
    fn missing_fields_are_named() {
        let err = build_prompt(Stage::Describe, &PromptContext::default()).unwrap_err();
        assert_eq!(err.to_string(), "describe prompt is missing `tables`");
        let err = build_prompt(Stage::Summarize, &PromptContext::default()).unwrap_err();
        assert!(err.to_string().contains("`reports`"));
        let err = build_prompt(Stage::FinalReport, &PromptContext { consensus: Some("c".into()), ..Default::default() })
            .unwrap_err();
        assert!(err.to_string().contains("`label`"));
    }

    #[test]
    fn assembly_is_deterministic() {
        for stage in [Stage::Describe, Stage::Classify, Stage::Consensus, Stage::FinalReport, Stage::Summarize] {
            assert_eq!(build_prompt(stage, &ctx()).unwrap(), build_prompt(stage, &ctx()).unwrap());
        }
    }

    #[test]
    fn answer_line_is_strict() {
        assert_eq!(parse_answer("reasoning\nANSWER: sub-prefix hijack\n").unwrap(), EventType::SubPrefixHijack);
        assert_eq!(parse_answer("answer: route leak").unwrap(), EventType::RouteLeak);
        assert_eq!(parse_answer("ANSWER: hijack\nmore text"), Err(PromptError::MissingAnswer));
        assert_eq!(parse_answer("it is a hijack"), Err(PromptError::MissingAnswer));
        assert!(matches!(parse_answer("ANSWER: outage"), Err(PromptError::UnknownLabel(_))));
        assert_eq!(parse_answer(""), Err(PromptError::MissingAnswer));
    }

    #[test]
    fn report_sections_split() {
        let r = parse_report("Line one.\nLine two.\nRECOMMENDATIONS:\n- Do a\n- Do b\n");
        assert_eq!(r.narrative, "Line one.\nLine two.");
        assert_eq!(r.recommendations, vec!["Do a", "Do b"]);
        assert!(parse_report("just text").recommendations.is_empty());
    }

    #[test]
    fn json_extraction() {
        assert_eq!(extract_json("here ```json\n{\"a\":1}\n``` ok"), Some("{\"a\":1}"));
        assert_eq!(extract_json("x {\"a\":{}} y"), Some("{\"a\":{}}"));
        assert_eq!(extract_json("nothing"), None);
    }
}
