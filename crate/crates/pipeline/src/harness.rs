//! Collector-subsetting sweeps, corpus statistics and experiment output.

use std::collections::BTreeSet;
use std::io::Write;

use bear_core::{EventType, SnapshotTriple};
use bear_llm::{Gateway, ProviderConfig, TokenEstimator};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixtures::LabeledEvent;
use crate::reasoner::{explain_partial, ExplainConfig};
use crate::seeds::derive_seed;

/// Sweep points used when none are configured.
pub const DEFAULT_FRACTIONS: [f64; 5] = [0.04, 0.08, 0.16, 0.33, 1.0];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("collector fraction {0} is outside (0, 1]")]
    Fraction(f64),
    #[error("selection resolves to no collectors")]
    EmptySelection,
    #[error("unknown collectors: {0:?}")]
    UnknownCollectors(Vec<String>),
    #[error("batch size must be at least 2, got {0}")]
    BatchSize(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no sweep seeds configured")]
    NoSeeds,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub provider: ProviderConfig,
    pub explain: ExplainConfig,
    pub seeds: Vec<u64>,
    pub fractions: Vec<f64>,
    /// Upper bound on events explained concurrently.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            provider: ProviderConfig::default(),
            explain: ExplainConfig::default(),
            seeds: vec![0],
            fractions: DEFAULT_FRACTIONS.to_vec(),
            workers: std::thread::available_parallelism().map_or(4, |n| n.get()),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        for &f in &self.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(HarnessError::Fraction(f));
            }
        }
        if self.explain.batch_size < 2 {
            return Err(HarnessError::BatchSize(self.explain.batch_size));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::NoSeeds);
        }
        Ok(())
    }
}

/// `max(1, round(fraction × total))`, capped at `total`.
pub fn collector_count(fraction: f64, total: usize) -> usize {
    ((fraction * total as f64).round() as usize).max(1).min(total)
}

/// Which collectors to keep.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Fraction(f64),
    Explicit(BTreeSet<String>),
}

/// Resolves `selection` against the history collectors of `triple`.
pub fn select_collectors(
    triple: &SnapshotTriple,
    selection: &Selection,
    seed: u64,
) -> Result<BTreeSet<String>, HarnessError> {
    let all: Vec<String> = triple.history.collectors().union(&triple.collectors()).cloned().collect();
    let chosen: BTreeSet<String> = match selection {
        Selection::Fraction(f) => {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(HarnessError::Fraction(*f));
            }
            if all.is_empty() {
                return Err(HarnessError::EmptySelection);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            all.choose_multiple(&mut rng, collector_count(*f, all.len())).cloned().collect()
        }
        Selection::Explicit(names) => {
            let unknown: Vec<String> = names.iter().filter(|n| !all.contains(n)).cloned().collect();
            if !unknown.is_empty() {
                return Err(HarnessError::UnknownCollectors(unknown));
            }
            names.clone()
        }
    };
    if chosen.is_empty() {
        return Err(HarnessError::EmptySelection);
    }
    Ok(chosen)
}

/// Before and after restricted to `selected`; history untouched.
pub fn subset_collectors(triple: &SnapshotTriple, selected: &BTreeSet<String>) -> SnapshotTriple {
    SnapshotTriple {
        spec: triple.spec.clone(),
        history: triple.history.clone(),
        before: triple.before.restrict_collectors(selected),
        after: triple.after.restrict_collectors(selected),
    }
}

/// True iff some affected key lies in a selected collector.
pub fn presence_flag(event: &LabeledEvent, selected: &BTreeSet<String>) -> bool {
    event.affected_keys.iter().any(|k| selected.contains(&k.collector))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub event_id: String,
    pub collector_fraction: f64,
    pub seed: u64,
    pub selected_collectors: usize,
    pub presence: bool,
    pub conclusive: bool,
    pub correct: bool,
    pub expected: EventType,
    pub predicted: Option<EventType>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Metrics for one (fraction, seed) pass over the corpus, or their mean
/// over seeds when produced by [`aggregate_by_fraction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub collector_fraction: f64,
    pub seed: Option<u64>,
    pub presence_ratio: f64,
    pub accuracy: f64,
    pub avg_input_tokens: f64,
    pub avg_output_tokens: f64,
    pub failures: usize,
    pub per_event_rows: Vec<EventRow>,
}

fn run_event(
    event: &LabeledEvent,
    fraction: f64,
    seed: u64,
    gateway: &Gateway,
    explain: &ExplainConfig,
) -> EventRow {
    let mut row = EventRow {
        event_id: event.id.clone(),
        collector_fraction: fraction,
        seed,
        selected_collectors: 0,
        presence: false,
        conclusive: false,
        correct: false,
        expected: event.event_type,
        predicted: None,
        input_tokens: 0,
        output_tokens: 0,
        failure: None,
    };
    let select_seed = derive_seed(seed, &format!("select:{}", event.id), fraction.to_bits());
    let selected = match select_collectors(&event.triple, &Selection::Fraction(fraction), select_seed) {
        Ok(s) => s,
        Err(e) => {
            row.failure = Some(e.to_string());
            return row;
        }
    };
    row.selected_collectors = selected.len();
    row.presence = presence_flag(event, &selected);
    let subset = subset_collectors(&event.triple, &selected);
    let config = ExplainConfig {
        seed: derive_seed(seed, &event.id, 0),
        parallel: false,
        ..explain.clone()
    };
    match explain_partial(&subset, &selected, gateway, &config) {
        Ok(outcome) => {
            let r = &outcome.report;
            row.conclusive = r.conclusive;
            row.predicted = Some(r.event_type);
            row.input_tokens = outcome.usage.input_tokens;
            row.output_tokens = outcome.usage.output_tokens;
            row.correct = if row.presence {
                r.conclusive && r.event_type == event.event_type
            } else {
                !r.conclusive && !r.missing_collectors.is_empty() && r.recommends_collection()
            };
        }
        Err(e) => row.failure = Some(e.to_string()),
    }
    row
}

fn summarize(fraction: f64, seed: Option<u64>, rows: Vec<EventRow>) -> ExperimentResult {
    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&EventRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    ExperimentResult {
        collector_fraction: fraction,
        seed,
        presence_ratio: mean(&|r| f64::from(u8::from(r.presence))),
        accuracy: mean(&|r| f64::from(u8::from(r.correct && r.failure.is_none()))),
        avg_input_tokens: mean(&|r| r.input_tokens as f64),
        avg_output_tokens: mean(&|r| r.output_tokens as f64),
        failures: rows.iter().filter(|r| r.failure.is_some()).count(),
        per_event_rows: rows,
    }
}

/// One result per (fraction, seed), in configuration order. Event failures
/// are recorded on their rows and count against accuracy.
pub fn run_sweep(
    corpus: &[LabeledEvent],
    gateway: &Gateway,
    config: &RunConfig,
) -> Result<Vec<ExperimentResult>, HarnessError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(HarnessError::EmptyCorpus);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .expect("thread pool");
    let mut results = Vec::new();
    for &fraction in &config.fractions {
        for &seed in &config.seeds {
            let rows: Vec<EventRow> = pool.install(|| {
                corpus
                    .par_iter()
                    .map(|e| run_event(e, fraction, seed, gateway, &config.explain))
                    .collect()
            });
            results.push(summarize(fraction, Some(seed), rows));
        }
    }
    Ok(results)
}

/// Means over seeds, one entry per fraction in first-seen order.
pub fn aggregate_by_fraction(results: &[ExperimentResult]) -> Vec<ExperimentResult> {
    let mut fractions: Vec<f64> = Vec::new();
    for r in results {
        if !fractions.contains(&r.collector_fraction) {
            fractions.push(r.collector_fraction);
        }
    }
    fractions
        .into_iter()
        .map(|f| {
            let group: Vec<&ExperimentResult> = results.iter().filter(|r| r.collector_fraction == f).collect();
            let n = group.len() as f64;
            let mean = |g: &dyn Fn(&ExperimentResult) -> f64| group.iter().map(|r| g(r)).sum::<f64>() / n;
            ExperimentResult {
                collector_fraction: f,
                seed: None,
                presence_ratio: mean(&|r| r.presence_ratio),
                accuracy: mean(&|r| r.accuracy),
                avg_input_tokens: mean(&|r| r.avg_input_tokens),
                avg_output_tokens: mean(&|r| r.avg_output_tokens),
                failures: group.iter().map(|r| r.failures).sum(),
                per_event_rows: group.iter().flat_map(|r| r.per_event_rows.iter().cloned()).collect(),
            }
        })
        .collect()
}

/// `fraction,presence_ratio,accuracy,avg_input_tokens,avg_output_tokens`
/// with one line per fraction, averaged over seeds.
pub fn write_csv<W: Write>(results: &[ExperimentResult], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fraction", "presence_ratio", "accuracy", "avg_input_tokens", "avg_output_tokens"])?;
    for r in aggregate_by_fraction(results) {
        w.write_record([
            r.collector_fraction.to_string(),
            format!("{:.4}", r.presence_ratio),
            format!("{:.4}", r.accuracy),
            format!("{:.1}", r.avg_input_tokens),
            format!("{:.1}", r.avg_output_tokens),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per line for every event row.
pub fn write_rows<W: Write>(results: &[ExperimentResult], mut out: W) -> Result<(), HarnessError> {
    for r in results {
        for row in &r.per_event_rows {
            serde_json::to_writer(&mut out, row).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStats {
    pub id: String,
    pub prefixes: usize,
    /// Routes over history, before and after.
    pub as_paths: usize,
    pub peers: usize,
    pub collectors: usize,
    pub estimated_tokens: u64,
    pub oversized: bool,
}

/// Per-event sizes. `oversized` marks events whose tables exceed the
/// budget derived from `token_limit`.
pub fn corpus_stats(
    corpus: &[(String, &SnapshotTriple)],
    token_limit: u64,
    estimator: &TokenEstimator,
) -> Vec<EventStats> {
    corpus
        .iter()
        .map(|(id, t)| {
            let mut prefixes: BTreeSet<_> = t.history.prefixes().copied().collect();
            prefixes.extend(t.before.prefixes().copied());
            prefixes.extend(t.after.prefixes().copied());
            let mut peers = t.history.peers();
            peers.extend(t.before.peers());
            peers.extend(t.after.peers());
            let tokens = estimator.estimate(&t.to_tabular_json());
            EventStats {
                id: id.clone(),
                prefixes: prefixes.len(),
                as_paths: t.history.route_count() + t.before.route_count() + t.after.route_count(),
                peers: peers.len(),
                collectors: t.history.collectors().union(&t.collectors()).count(),
                estimated_tokens: tokens,
                oversized: tokens > estimator.budget(token_limit),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_to_collector_count() {
        assert_eq!(collector_count(0.04, 24), 1);
        assert_eq!(collector_count(0.08, 24), 2);
        assert_eq!(collector_count(0.16, 24), 4);
        assert_eq!(collector_count(1.0 / 3.0, 24), 8);
        assert_eq!(collector_count(0.33, 24), 8);
        assert_eq!(collector_count(1.0, 24), 24);
        assert_eq!(collector_count(0.01, 24), 1);
    }

    #[test]
    fn config_validation() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_ok());
        c.fractions.push(0.0);
        assert!(matches!(c.validate(), Err(HarnessError::Fraction(_))));
        c.fractions.pop();
        c.explain.batch_size = 1;
        assert!(matches!(c.validate(), Err(HarnessError::BatchSize(1))));
    }

    #[test]
    fn empty_corpus_stats_are_empty() {
        assert!(corpus_stats(&[], 1000, &TokenEstimator::default()).is_empty());
    }
}
