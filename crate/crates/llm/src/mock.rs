//! Deterministic offline providers.
//!
//! [`PerfectMock`] answers every stage from the payload block embedded in
//! the prompt, so it reproduces the rule-based analysis exactly.
//! [`NoisyMock`] corrupts describe and classify answers with a fixed,
//! seed-derived probability. [`ScriptedProvider`] replays canned replies.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt::Write;
use std::sync::Mutex;

use bear_core::{classify, detection_rate, identify_offender, AnalysisFacts, Asn, EventType};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::prompt::{
    parse_answer, payload_of, reference_change_report, PromptPayload, SeedContext, SynthContext,
    ANSWER_PREFIX, RECOMMENDATIONS_HEADER,
};
use crate::provider::Provider;
use crate::request::{CompletionRequest, CompletionResult, Stage};
use crate::tokens::TokenEstimator;
use crate::LlmError;

/// Offender ASNs drawn by the mock come from the private-use range.
pub const MOCK_OFFENDER_RANGE: std::ops::RangeInclusive<u32> = 64512..=65534;

const RIB_INTERVAL: u64 = 28_800;

fn metered(request: &CompletionRequest, text: String) -> CompletionResult {
    let est = TokenEstimator::default();
    CompletionResult {
        input_tokens: request.estimated_input_tokens(&est),
        output_tokens: est.estimate(&text),
        text,
    }
}

fn request_rng(request: &CompletionRequest) -> ChaCha8Rng {
    let seed = request.seed.unwrap_or_else(|| {
        let d = Sha256::digest(request.digest().as_bytes());
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    });
    ChaCha8Rng::seed_from_u64(seed)
}

fn required<T>(value: Option<T>, stage: Stage, field: &str) -> Result<T, LlmError> {
    value.ok_or_else(|| LlmError::Malformed(format!("{stage} payload lacks `{field}`")))
}

#[derive(Debug, Default, Clone, Copy)]
pub struct PerfectMock;

impl PerfectMock {
    pub fn new() -> Self {
        PerfectMock
    }

    pub fn respond(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let payload = payload_of(request)?;
        let stage = request.stage;
        Ok(match stage {
            Stage::Describe => reference_change_report(&required(payload.facts, stage, "facts")?),
            Stage::Classify => classify_reply(&required(payload.facts, stage, "facts")?),
            Stage::Consensus => most_frequent(&payload.reports)
                .ok_or_else(|| LlmError::Malformed("consensus payload has no reports".into()))?
                .to_string(),
            Stage::FinalReport => final_report(&payload)?,
            Stage::SynthDescription => {
                draft_description(&required(payload.synth, stage, "synth")?, &mut request_rng(request))
            }
            Stage::SynthSeed => pick_seed_reply(
                &required(payload.seed_candidates, stage, "seed_candidates")?,
                &mut request_rng(request),
            )?,
            Stage::Summarize => merge_reports(&payload.reports),
        })
    }
}

impl Provider for PerfectMock {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        Ok(metered(request, self.respond(request)?))
    }

    fn name(&self) -> &str {
        "perfect-mock"
    }
}

fn classify_reply(facts: &AnalysisFacts) -> String {
    let label = classify(facts);
    let mut text = String::new();
    match identify_offender(facts, label) {
        Ok(asn) if label.is_hijack() => {
            let _ = writeln!(text, "Affected paths now end at AS{asn}, which never originated the prefix.");
        }
        Ok(asn) => {
            let _ = writeln!(text, "Affected paths keep their origin but now traverse AS{asn}.");
        }
        Err(_) => text.push_str("No path change introduces a new origin or transit AS.\n"),
    }
    if label.is_sub_prefix() {
        text.push_str("The anomalous routes are for a more-specific sub-prefix.\n");
    }
    let _ = write!(text, "{ANSWER_PREFIX} {}", label.label());
    text
}

/// Most frequent entry; ties go to the earliest.
fn most_frequent(items: &[String]) -> Option<&str> {
    let mut counts: Vec<(&str, usize)> = Vec::new();
    for item in items {
        match counts.iter_mut().find(|(s, _)| *s == item.as_str()) {
            Some((_, n)) => *n += 1,
            None => counts.push((item, 1)),
        }
    }
    let mut best: Option<(&str, usize)> = None;
    for (s, n) in counts {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((s, n));
        }
    }
    best.map(|(s, _)| s)
}

fn final_report(payload: &PromptPayload) -> Result<String, LlmError> {
    let stage = Stage::FinalReport;
    let facts = required(payload.facts.as_ref(), stage, "facts")?;
    let label = required(payload.label, stage, "label")?;
    let consensus = required(payload.consensus.as_ref(), stage, "consensus")?;
    let target = facts.target_prefix;
    let mut out = String::new();
    if label == EventType::NoAnomalyObserved {
        let _ = writeln!(
            out,
            "No evidence of a hijack or route leak was found for {target} in the collected data."
        );
        let _ = writeln!(out, "\nPath changes:\n{}", consensus.trim_end());
        let _ = write!(
            out,
            "\n{RECOMMENDATIONS_HEADER}\n- Keep monitoring {target} with the current collectors.\n"
        );
        return Ok(out);
    }
    let _ = writeln!(out, "Event type: {} affecting {target}.", label.label());
    let sub = facts.evidence_sub_prefix(label);
    if let Some(sub) = sub {
        let _ = writeln!(out, "The anomalous routes are for sub-prefix {sub} of {target}.");
    }
    let offender = identify_offender(facts, label).ok();
    match offender {
        Some(asn) if label.is_hijack() => {
            let _ = writeln!(out, "Offending AS: AS{asn} originated routes it does not legitimately hold.");
        }
        Some(asn) => {
            let _ = writeln!(out, "Offending AS: AS{asn} leaked the route as an unexpected transit AS.");
        }
        None => out.push_str("Offending AS: not identified.\n"),
    }
    let _ = writeln!(
        out,
        "{} of {} peers observed anomalous routes ({:.1}% detection).",
        facts.affected_peer_count,
        facts.total_peer_count,
        detection_rate(facts) * 100.0
    );
    if let Some(origins) = facts.historical_origins.get(&target) {
        let list: Vec<String> = origins.iter().map(|a| format!("AS{a}")).collect();
        let _ = writeln!(out, "Legitimate origin: {}.", list.join(", "));
    }
    let _ = writeln!(out, "\nPath changes:\n{}", consensus.trim_end());
    let _ = writeln!(out, "\n{RECOMMENDATIONS_HEADER}");
    let who = offender.map_or("the offending AS".to_string(), |a| format!("AS{a}"));
    let announced = sub.unwrap_or(target);
    if label.is_hijack() {
        let _ = writeln!(out, "- Contact {who} and its upstream providers to withdraw the announcement of {announced}.");
        if let Some(sub) = sub {
            let _ = writeln!(out, "- Announce {sub} from the legitimate origin to compete with the hijacked more-specific route.");
        }
        let _ = writeln!(out, "- Publish or verify RPKI ROAs for {target} with a maximum length that excludes unauthorized more-specifics.");
    } else {
        let _ = writeln!(out, "- Contact {who} to stop re-announcing routes for {announced} to its providers and peers.");
        let _ = writeln!(out, "- Ask the neighbors of {who} to apply prefix and AS-path filters on sessions with it.");
    }
    out.push_str("- Keep monitoring the collectors until all peers return to the historical routes.\n");
    Ok(out)
}

fn draft_description(ctx: &SynthContext, rng: &mut ChaCha8Rng) -> String {
    let sub_prefix = ctx.target_prefix.child(false);
    let choices: Vec<EventType> = match ctx.required_type {
        Some(t) => vec![t],
        None => EventType::ANOMALIES
            .into_iter()
            .filter(|t| sub_prefix.is_some() || !t.is_sub_prefix())
            .collect(),
    };
    let event_type = *choices.choose(rng).expect("at least one event type");
    let span = MOCK_OFFENDER_RANGE.end() - MOCK_OFFENDER_RANGE.start() + 1;
    let start = rng.random_range(0..span);
    // Walks the range once; a fully reserved range yields a reserved ASN,
    // which validation then rejects.
    let offender = (0..span)
        .map(|i| MOCK_OFFENDER_RANGE.start() + (start + i) % span)
        .find(|o| !ctx.reserved_asns.iter().any(|a| a.get() == *o))
        .unwrap_or(MOCK_OFFENDER_RANGE.start() + start);
    let detection_pct = f64::from(rng.random_range(1..=9u32)) / 10.0;
    let transit: Vec<u32> = ctx
        .paths
        .iter()
        .flat_map(|p| p.hops()[..p.len() - 1].iter().map(|a| a.get()))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let sample_paths: Vec<Vec<u32>> = if event_type.is_hijack() {
        let n = rng.random_range(2..=4);
        (0..n)
            .filter_map(|_| {
                let lead = ctx.paths.choose(rng)?.peer().get();
                let mut sample = vec![lead];
                for _ in 0..rng.random_range(0..=2) {
                    if let Some(&hop) = transit.choose(rng) {
                        sample.push(hop);
                    }
                }
                sample.push(offender);
                Some(sample)
            })
            .collect()
    } else {
        ctx.paths
            .choose(rng)
            .map(|p| {
                let hops: Vec<u32> = p.hops().iter().map(|a| a.get()).collect();
                let first = 1.min(hops.len() - 1);
                let cut = rng.random_range(first..hops.len());
                let mut sample = vec![offender];
                sample.extend_from_slice(&hops[cut..]);
                vec![sample]
            })
            .unwrap_or_default()
    };
    json!({
        "event_type": event_type,
        "sub_prefix": if event_type.is_sub_prefix() { sub_prefix.map(|p| p.to_string()) } else { None },
        "offender": offender,
        "sample_paths": sample_paths,
        "detection_pct": detection_pct,
    })
    .to_string()
}

fn pick_seed_reply(ctx: &SeedContext, rng: &mut ChaCha8Rng) -> Result<String, LlmError> {
    let prefix = ctx
        .prefixes
        .choose(rng)
        .ok_or_else(|| LlmError::Malformed("no candidate prefixes".into()))?;
    let dump = ctx
        .dump_timestamps
        .choose(rng)
        .ok_or_else(|| LlmError::Malformed("no RIB dump timestamps".into()))?;
    let t = dump + RIB_INTERVAL + rng.random_range(300..RIB_INTERVAL - 300);
    Ok(json!({ "prefix": prefix.to_string(), "timestamp": t }).to_string())
}

/// Union of the reports' lines without repeats, then the most frequent
/// anomaly label among their answer lines.
fn merge_reports(reports: &[String]) -> String {
    let mut seen = HashSet::new();
    let mut lines = Vec::new();
    let mut votes: BTreeMap<EventType, usize> = BTreeMap::new();
    for report in reports {
        for line in report.lines() {
            if line.trim().is_empty() {
                continue;
            }
            if let Ok(label) = parse_answer(line) {
                if label != EventType::NoAnomalyObserved {
                    *votes.entry(label).or_default() += 1;
                }
                continue;
            }
            if seen.insert(line) {
                lines.push(line);
            }
        }
    }
    let mut label = EventType::NoAnomalyObserved;
    let mut best = 0;
    for (l, n) in votes {
        if n > best {
            best = n;
            label = l;
        }
    }
    let mut out = lines.join("\n");
    let _ = write!(out, "\n{ANSWER_PREFIX} {}", label.label());
    out
}

/// Wraps [`PerfectMock`]; at temperature > 0, each describe or classify
/// reply is corrupted with probability `error_rate`. The draw is a pure
/// function of (seed, request digest).
#[derive(Debug, Clone)]
pub struct NoisyMock {
    error_rate: f64,
    seed: u64,
    inner: PerfectMock,
}

impl NoisyMock {
    pub fn new(error_rate: f64, seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&error_rate), "error_rate outside [0, 1]");
        NoisyMock {
            error_rate,
            seed,
            inner: PerfectMock,
        }
    }

    /// (uniform value in [0, 1), independent selector).
    fn draws(&self, request: &CompletionRequest) -> (f64, u64) {
        let mut h = Sha256::new();
        h.update(b"noisy-mock");
        h.update(self.seed.to_le_bytes());
        h.update(request.digest().as_bytes());
        let d = h.finalize();
        let a = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        let b = u64::from_le_bytes(d[8..16].try_into().expect("8 bytes"));
        ((a >> 11) as f64 / (1u64 << 53) as f64, b)
    }

    /// Whether this request's reply is corrupted.
    pub fn corrupts(&self, request: &CompletionRequest) -> bool {
        request.temperature > 0.0
            && matches!(request.stage, Stage::Describe | Stage::Classify)
            && self.draws(request).0 < self.error_rate
    }

    pub fn respond(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let text = self.inner.respond(request)?;
        if !self.corrupts(request) {
            return Ok(text);
        }
        let selector = self.draws(request).1;
        Ok(match request.stage {
            Stage::Classify => {
                let truth = parse_answer(&text)?;
                let others: Vec<EventType> = EventType::ALL.into_iter().filter(|e| *e != truth).collect();
                let wrong = others[(selector % others.len() as u64) as usize];
                format!("Judging from the path changes.\n{ANSWER_PREFIX} {}", wrong.label())
            }
            _ => {
                let facts = payload_of(request)?.facts;
                let misread: Option<Asn> = facts.as_ref().and_then(|f| {
                    f.changed()
                        .filter_map(|c| c.after_path.as_ref())
                        .find(|p| p.len() >= 2)
                        .map(|p| p.hops()[p.len() - 2])
                });
                match misread {
                    Some(asn) => format!("{text}Destination of the changed routes: AS{asn}.\n"),
                    None => format!("{text}Some peers appear to have changed paths.\n"),
                }
            }
        })
    }
}

impl Provider for NoisyMock {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        Ok(metered(request, self.respond(request)?))
    }

    fn name(&self) -> &str {
        "noisy-mock"
    }
}

/// Replies from a fixed queue, in order. Records every request it sees.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    replies: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedProvider {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedProvider {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            seen: Mutex::default(),
        }
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.seen.lock().expect("lock").clone()
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("lock").len()
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        self.seen.lock().expect("lock").push(request.clone());
        let text = self
            .replies
            .lock()
            .expect("lock")
            .pop_front()
            .ok_or_else(|| LlmError::Transport {
                attempts: 1,
                message: "script exhausted".into(),
            })?;
        Ok(metered(request, text))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{build_prompt, PromptContext};
    use bear_core::{analyze_changes, AsPath, EventSpec, Prefix, RouteSnapshot, SnapshotTriple};

    fn hijack_facts() -> AnalysisFacts {
        let p: Prefix = "10.0.0.0/8".parse().unwrap();
        let mut before = RouteSnapshot::new(0);
        before.insert(p, "rrc00", AsPath::from_u32s(&[3356, 2914, 15169]).unwrap());
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

    fn classify_request(seed: u64) -> CompletionRequest {
        build_prompt(
            Stage::Classify,
            &PromptContext {
                change_report: Some("changes".into()),
                facts: Some(hijack_facts()),
                seed: Some(seed),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn perfect_mock_classifies_from_facts() {
        let r = PerfectMock.complete(&classify_request(1)).unwrap();
        assert_eq!(parse_answer(&r.text).unwrap(), EventType::Hijack);
        assert_eq!(r, PerfectMock.complete(&classify_request(1)).unwrap());
        assert!(r.text.contains("AS64500"));
    }

    #[test]
    fn noisy_mock_at_full_rate_is_always_wrong() {
        let noisy = NoisyMock::new(1.0, 11);
        for seed in 0..50 {
            let text = noisy.respond(&classify_request(seed)).unwrap();
            assert_ne!(parse_answer(&text).unwrap(), EventType::Hijack);
            assert_eq!(text, noisy.respond(&classify_request(seed)).unwrap());
        }
    }

    #[test]
    fn noisy_mock_spares_cold_and_non_sampled_stages() {
        let noisy = NoisyMock::new(1.0, 0);
        let mut req = classify_request(1);
        req.temperature = 0.0;
        assert_eq!(parse_answer(&noisy.respond(&req).unwrap()).unwrap(), EventType::Hijack);
    }

    #[test]
    fn wrong_labels_are_spread_over_alternatives() {
        let noisy = NoisyMock::new(1.0, 3);
        let mut counts: BTreeMap<EventType, usize> = BTreeMap::new();
        for seed in 0..800 {
            *counts.entry(parse_answer(&noisy.respond(&classify_request(seed)).unwrap()).unwrap()).or_default() += 1;
        }
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&n| (140..=260).contains(&n)), "{counts:?}");
    }

    #[test]
    fn consensus_picks_most_frequent_report() {
        let reports: Vec<String> = ["a", "b", "b", "c", "a", "b"].iter().map(|s| s.to_string()).collect();
        assert_eq!(most_frequent(&reports), Some("b"));
        assert_eq!(most_frequent(&reports[..2]), Some("a"));
    }

    #[test]
    fn merge_keeps_anomaly_label_and_dedupes() {
        let merged = merge_reports(&[
            "x\ny\nANSWER: no anomaly".into(),
            "y\nz\nANSWER: route leak".into(),
            "ANSWER: no anomaly".into(),
        ]);
        assert_eq!(merged, "x\ny\nz\nANSWER: route leak");
    }

    #[test]
    fn scripted_provider_replays_in_order() {
        let p = ScriptedProvider::new(["one", "two"]);
        assert_eq!(p.complete(&classify_request(0)).unwrap().text, "one");
        assert_eq!(p.complete(&classify_request(0)).unwrap().text, "two");
        assert!(p.complete(&classify_request(0)).is_err());
        assert_eq!(p.requests().len(), 3);
    }
}
