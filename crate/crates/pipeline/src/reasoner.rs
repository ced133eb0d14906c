//! The explanation pipeline: describe and classify N times, vote,
//! consolidate the change reports, then write the final report.

use std::collections::{BTreeMap, BTreeSet};

use bear_core::{
    analyze_changes, identify_offender, AnalysisError, AnalysisFacts, Asn, EventType, Prefix,
    SnapshotTriple,
};
use bear_llm::prompt::ANSWER_PREFIX;
use bear_llm::{
    build_prompt, parse_answer, parse_report, Gateway, LlmError, PromptContext, PromptError, Stage,
    TokenEstimator, Usage,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partition::{
    hierarchical_summarize, plan_partition, segment_triples, PlanError, SummarizationPlan,
};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    /// One more describe/classify run; a remaining tie is inconclusive.
    #[default]
    ExtraRound,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfConsistencyConfig {
    pub n_runs: usize,
    pub tie_policy: TiePolicy,
}

impl Default for SelfConsistencyConfig {
    fn default() -> Self {
        SelfConsistencyConfig {
            n_runs: 5,
            tie_policy: TiePolicy::ExtraRound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub consistency: SelfConsistencyConfig,
    pub seed: u64,
    /// Events whose tables exceed this estimate take the segmented path.
    pub token_limit: Option<u64>,
    pub batch_size: usize,
    pub estimator: TokenEstimator,
    /// Run independent provider calls on the rayon pool.
    pub parallel: bool,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            consistency: SelfConsistencyConfig::default(),
            seed: 0,
            token_limit: None,
            batch_size: 5,
            estimator: TokenEstimator::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSource {
    Run(usize),
    Consensus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeReportText {
    pub text: String,
    pub source_run: ReportSource,
}

/// Structured explanation of one event.
///
/// `conclusive == false` implies `missing_collectors` is non-empty and a
/// recommendation asks for more collector data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub event_type: EventType,
    pub target_prefix: Prefix,
    pub sub_prefix: Option<Prefix>,
    pub offender: Option<Asn>,
    pub affected_peers: usize,
    pub detection_rate: f64,
    pub narrative: String,
    pub recommendations: Vec<String>,
    pub conclusive: bool,
    pub missing_collectors: Vec<String>,
}

impl AnomalyReport {
    pub fn recommends_collection(&self) -> bool {
        self.recommendations
            .iter()
            .any(|r| r.to_ascii_lowercase().contains("collect"))
    }
}

/// A report plus what it took to produce it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplainOutcome {
    pub report: AnomalyReport,
    pub usage: Usage,
    /// Every classify label, in run order, including any extra round.
    pub labels: Vec<EventType>,
    pub plan: Option<SummarizationPlan>,
}

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error("{stage} stage{}: {source}", run.map(|r| format!(" (run {r})")).unwrap_or_default())]
    Provider {
        stage: Stage,
        run: Option<usize>,
        #[source]
        source: LlmError,
    },
    #[error("classify stage (run {run}): unparseable label after retry: {source}")]
    ClassificationParse {
        run: usize,
        #[source]
        source: PromptError,
    },
    #[error("summarize stage (level {level}, batch {batch}): {source}")]
    Summarize {
        level: usize,
        batch: usize,
        #[source]
        source: LlmError,
    },
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
    #[error("partition: {0}")]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Vote {
    Winner(EventType),
    /// Labels sharing the top count, ascending.
    Tied(Vec<EventType>),
}

/// Plurality label. Order of `labels` does not matter.
pub fn vote(labels: &[EventType]) -> Vote {
    let mut counts: BTreeMap<EventType, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(*l).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let leaders: Vec<EventType> = counts
        .into_iter()
        .filter(|(_, n)| *n == top)
        .map(|(l, _)| l)
        .collect();
    match leaders.as_slice() {
        [one] => Vote::Winner(*one),
        _ => Vote::Tied(leaders),
    }
}

fn complete(
    gateway: &Gateway,
    stage: Stage,
    run: Option<usize>,
    ctx: &PromptContext,
) -> Result<String, ReasonerError> {
    let wrap = |source| ReasonerError::Provider { stage, run, source };
    let request = build_prompt(stage, ctx).map_err(|e| wrap(e.into()))?;
    gateway.complete(&request).map(|r| r.text).map_err(wrap)
}

pub fn describe_changes(
    triple: &SnapshotTriple,
    facts: &AnalysisFacts,
    gateway: &Gateway,
    run_seed: u64,
    run: usize,
) -> Result<ChangeReportText, ReasonerError> {
    let ctx = PromptContext {
        tables: Some(triple.to_tabular_json()),
        facts: Some(facts.clone()),
        seed: Some(run_seed),
        ..Default::default()
    };
    Ok(ChangeReportText {
        text: complete(gateway, Stage::Describe, Some(run), &ctx)?,
        source_run: ReportSource::Run(run),
    })
}

/// One classify call; an unparseable answer is discarded and retried once
/// under a derived seed.
pub fn classify_event(
    report: &ChangeReportText,
    facts: &AnalysisFacts,
    gateway: &Gateway,
    run_seed: u64,
    run: usize,
) -> Result<EventType, ReasonerError> {
    let mut ctx = PromptContext {
        change_report: Some(report.text.clone()),
        facts: Some(facts.clone()),
        seed: Some(run_seed),
        ..Default::default()
    };
    let first = parse_answer(&complete(gateway, Stage::Classify, Some(run), &ctx)?);
    if let Ok(label) = first {
        return Ok(label);
    }
    ctx.seed = Some(derive_seed(run_seed, "classify-retry", 1));
    parse_answer(&complete(gateway, Stage::Classify, Some(run), &ctx)?)
        .map_err(|source| ReasonerError::ClassificationParse { run, source })
}

/// A single report passes through unchanged; otherwise one cold call keeps
/// the statements consistent with the majority label.
pub fn synthesize_consensus(
    reports: &[ChangeReportText],
    majority: EventType,
    gateway: &Gateway,
) -> Result<ChangeReportText, ReasonerError> {
    if let [only] = reports {
        return Ok(only.clone());
    }
    let ctx = PromptContext {
        reports: reports.iter().map(|r| r.text.clone()).collect(),
        label: Some(majority),
        ..Default::default()
    };
    Ok(ChangeReportText {
        text: complete(gateway, Stage::Consensus, None, &ctx)?,
        source_run: ReportSource::Consensus,
    })
}

/// Final report call; offender, sub-prefix and coverage come from `facts`.
pub fn generate_report(
    triple: &SnapshotTriple,
    facts: &AnalysisFacts,
    consensus: &ChangeReportText,
    label: EventType,
    gateway: &Gateway,
) -> Result<AnomalyReport, ReasonerError> {
    let ctx = PromptContext {
        consensus: Some(consensus.text.clone()),
        label: Some(label),
        facts: Some(facts.clone()),
        ..Default::default()
    };
    let text = complete(gateway, Stage::FinalReport, None, &ctx)?;
    let parsed = parse_report(&text);
    let anomaly = label != EventType::NoAnomalyObserved;
    let mut recommendations = parsed.recommendations;
    if recommendations.is_empty() {
        recommendations.push(format!("Keep monitoring {} for further routing changes.", triple.spec.prefix));
    }
    Ok(AnomalyReport {
        event_type: label,
        target_prefix: triple.spec.prefix,
        sub_prefix: if label.is_sub_prefix() {
            facts.evidence_sub_prefix(label)
        } else {
            None
        },
        offender: identify_offender(facts, label).ok(),
        affected_peers: if anomaly { facts.affected_peer_count } else { 0 },
        detection_rate: if anomaly { bear_core::detection_rate(facts) } else { 0.0 },
        narrative: parsed.narrative,
        recommendations,
        conclusive: true,
        missing_collectors: Vec::new(),
    })
}

/// Turns `report` into an inconclusive one naming `missing` collectors.
fn mark_inconclusive(report: &mut AnomalyReport, missing: Vec<String>, reason: &str) {
    report.event_type = EventType::NoAnomalyObserved;
    report.sub_prefix = None;
    report.offender = None;
    report.affected_peers = 0;
    report.detection_rate = 0.0;
    report.conclusive = false;
    report.narrative = format!("Inconclusive: {reason}\n\n{}", report.narrative);
    if !report.recommends_collection() {
        report.recommendations.push(format!(
            "Collect additional BGP data from collectors {} (present in the historical RIB dump) and rerun the analysis.",
            missing.join(", ")
        ));
    }
    report.missing_collectors = missing;
}

fn run_all<T: Send>(
    parallel: bool,
    n: usize,
    f: impl Fn(usize) -> Result<T, ReasonerError> + Sync + Send,
) -> Result<Vec<T>, ReasonerError> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

fn run_seed(config: &ExplainConfig, run: usize) -> u64 {
    derive_seed(config.seed, "run", run as u64)
}

/// Everything after the change reports exist: vote, consensus, report.
fn conclude(
    triple: &SnapshotTriple,
    facts: &AnalysisFacts,
    gateway: &Gateway,
    config: &ExplainConfig,
    mut runs: Vec<(ChangeReportText, EventType)>,
    extra: impl FnOnce(usize) -> Result<(ChangeReportText, EventType), ReasonerError>,
    missing_hint: &[String],
) -> Result<(AnomalyReport, Vec<EventType>), ReasonerError> {
    let labels = |runs: &[(ChangeReportText, EventType)]| runs.iter().map(|(_, l)| *l).collect::<Vec<_>>();
    let mut decided = match vote(&labels(&runs)) {
        Vote::Winner(l) => Some(l),
        Vote::Tied(_) => None,
    };
    if decided.is_none() && config.consistency.tie_policy == TiePolicy::ExtraRound {
        runs.push(extra(runs.len())?);
        if let Vote::Winner(l) = vote(&labels(&runs)) {
            decided = Some(l);
        }
    }
    let label = decided.unwrap_or(EventType::NoAnomalyObserved);
    let reports: Vec<ChangeReportText> = {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        // Identical reports from a shared summary collapse to one.
        for (r, _) in &runs {
            if matches!(r.source_run, ReportSource::Consensus) && !seen.insert(r.text.clone()) {
                continue;
            }
            out.push(r.clone());
        }
        out
    };
    let consensus = synthesize_consensus(&reports, label, gateway)?;
    let mut report = generate_report(triple, facts, &consensus, label, gateway)?;
    let all_labels = labels(&runs);
    if decided.is_none() {
        let missing = if missing_hint.is_empty() {
            triple.history.collectors().into_iter().collect()
        } else {
            missing_hint.to_vec()
        };
        let tally: Vec<&str> = all_labels.iter().map(|l| l.label()).collect();
        mark_inconclusive(
            &mut report,
            missing,
            &format!("the classification runs disagreed ({}).", tally.join(", ")),
        );
    }
    Ok((report, all_labels))
}

fn explain_facts(
    triple: &SnapshotTriple,
    facts: &AnalysisFacts,
    gateway: &Gateway,
    config: &ExplainConfig,
    missing_hint: &[String],
) -> Result<(AnomalyReport, Vec<EventType>, Option<SummarizationPlan>), ReasonerError> {
    if let Some(limit) = config.token_limit {
        let tokens = config.estimator.estimate(&triple.to_tabular_json());
        if tokens > config.estimator.budget(limit) {
            return explain_oversized(triple, facts, gateway, config, limit, missing_hint);
        }
    }
    let one_run = |run: usize| -> Result<(ChangeReportText, EventType), ReasonerError> {
        let seed = run_seed(config, run);
        let report = describe_changes(triple, facts, gateway, seed, run)?;
        let label = classify_event(&report, facts, gateway, seed, run)?;
        Ok((report, label))
    };
    let runs = run_all(config.parallel, config.consistency.n_runs.max(1), one_run)?;
    let (report, labels) = conclude(triple, facts, gateway, config, runs, one_run, missing_hint)?;
    Ok((report, labels, None))
}

/// Segments the event, describes each segment, merges the segment reports
/// hierarchically and classifies the merged report N times.
fn explain_oversized(
    triple: &SnapshotTriple,
    facts: &AnalysisFacts,
    gateway: &Gateway,
    config: &ExplainConfig,
    limit: u64,
    missing_hint: &[String],
) -> Result<(AnomalyReport, Vec<EventType>, Option<SummarizationPlan>), ReasonerError> {
    let mut plan = plan_partition(triple, limit, &config.estimator, config.batch_size)?;
    let segments = segment_triples(triple, plan.segment_axis);
    let segment_report = |i: usize| -> Result<Option<String>, ReasonerError> {
        let (_, segment) = &segments[i];
        let seg_facts = match analyze_changes(segment) {
            Ok(f) => f,
            Err(AnalysisError::NoData) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let seed = derive_seed(config.seed, "segment", i as u64);
        let report = describe_changes(segment, &seg_facts, gateway, seed, i)?;
        let label = classify_event(&report, &seg_facts, gateway, seed, i)?;
        Ok(Some(format!("{}\n{ANSWER_PREFIX} {}", report.text.trim_end(), label.label())))
    };
    let reports: Vec<String> = run_all(config.parallel, segments.len(), segment_report)?
        .into_iter()
        .flatten()
        .collect();
    let shuffle_seed = derive_seed(config.seed, "summarize", 0);
    let (summary, sizes) =
        hierarchical_summarize(&reports, config.batch_size, gateway, shuffle_seed, config.parallel)?;
    plan.segment_count = reports.len();
    plan.level_sizes = sizes;
    plan.levels = plan.level_sizes.len();
    plan.shuffle_seed = Some(shuffle_seed);

    let summary = ChangeReportText {
        text: summary,
        source_run: ReportSource::Consensus,
    };
    let one_run = |run: usize| -> Result<(ChangeReportText, EventType), ReasonerError> {
        let label = classify_event(&summary, facts, gateway, run_seed(config, run), run)?;
        Ok((summary.clone(), label))
    };
    let runs = run_all(config.parallel, config.consistency.n_runs.max(1), one_run)?;
    let (report, labels) = conclude(triple, facts, gateway, config, runs, one_run, missing_hint)?;
    Ok((report, labels, Some(plan)))
}

/// Full pipeline over `triple`. Usage is metered on a fork of `gateway`.
pub fn explain(
    triple: &SnapshotTriple,
    gateway: &Gateway,
    config: &ExplainConfig,
) -> Result<ExplainOutcome, ReasonerError> {
    let gw = gateway.fork();
    let facts = analyze_changes(triple)?;
    let (report, labels, plan) = explain_facts(triple, &facts, &gw, config, &[])?;
    Ok(ExplainOutcome {
        report,
        usage: gw.usage(),
        labels,
        plan,
    })
}

/// Pipeline over before/after snapshots restricted to `selected`
/// collectors, with the full history kept in `subset.history`.
///
/// Without anomaly evidence among the selected collectors the report is
/// inconclusive and names the history collectors that were not selected.
pub fn explain_partial(
    subset: &SnapshotTriple,
    selected: &BTreeSet<String>,
    gateway: &Gateway,
    config: &ExplainConfig,
) -> Result<ExplainOutcome, ReasonerError> {
    let gw = gateway.fork();
    let facts = analyze_changes(subset)?;
    let missing: Vec<String> = subset
        .history
        .collectors()
        .into_iter()
        .filter(|c| !selected.contains(c))
        .collect();
    let (mut report, labels, plan) = explain_facts(subset, &facts, &gw, config, &missing)?;
    let has_evidence = facts.facts.iter().any(|f| f.evidence.is_some());
    if !has_evidence && !missing.is_empty() && report.conclusive {
        mark_inconclusive(
            &mut report,
            missing,
            "no anomalous AS path change is visible from the selected collectors.",
        );
    }
    Ok(ExplainOutcome {
        report,
        usage: gw.usage(),
        labels,
        plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use EventType::*;

    #[test]
    fn plurality_and_ties() {
        assert_eq!(vote(&[Hijack, Hijack, Hijack, RouteLeak, RouteLeak]), Vote::Winner(Hijack));
        assert_eq!(vote(&[Hijack]), Vote::Winner(Hijack));
        assert_eq!(vote(&[Hijack, RouteLeak]), Vote::Tied(vec![Hijack, RouteLeak]));
        assert_eq!(vote(&[]), Vote::Tied(vec![]));
    }

    #[test]
    fn provider_errors_name_stage_and_run() {
        let e = ReasonerError::Provider {
            stage: Stage::Describe,
            run: Some(2),
            source: LlmError::Config("x".into()),
        };
        assert_eq!(e.to_string(), "describe stage (run 2): provider configuration: x");
    }
}
