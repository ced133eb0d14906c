//! Splitting oversized events into segments and summarizing segment reports
//! level by level.

use std::collections::BTreeMap;

use bear_core::{Prefix, RouteSnapshot, SnapshotTriple};
use bear_llm::{build_prompt, Gateway, PromptContext, Stage, TokenEstimator};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reasoner::ReasonerError;
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentAxis {
    Collector,
    Peer,
}

impl SegmentAxis {
    fn key(self, collector: &str, peer: bear_core::Asn) -> String {
        match self {
            SegmentAxis::Collector => collector.to_string(),
            SegmentAxis::Peer => format!("AS{peer}"),
        }
    }
}

/// How an oversized event is split and reduced.
///
/// `level_sizes[0] = ceil(segment_count / batch_size)`, each later entry is
/// `ceil(previous / batch_size)`, the last entry is 1 and `levels` is the
/// number of entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarizationPlan {
    pub segment_axis: SegmentAxis,
    pub segment_count: usize,
    pub batch_size: usize,
    pub level_sizes: Vec<usize>,
    pub levels: usize,
    pub largest_segment_tokens: u64,
    pub token_budget: u64,
    /// Seed of the random batch assignment, once summarization has run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle_seed: Option<u64>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("event fits the token budget ({tokens} <= {budget}); no partition needed")]
    NotNeeded { tokens: u64, budget: u64 },
    #[error("no partition fits the budget of {budget} tokens; largest segment {segment} ({axis:?} axis) needs {tokens}")]
    Infeasible {
        axis: SegmentAxis,
        segment: String,
        tokens: u64,
        budget: u64,
    },
    #[error("batch size must be at least 2, got {0}")]
    BatchSize(usize),
    #[error("nothing to summarize")]
    Empty,
}

/// `[ceil(m/x), ceil(ceil(m/x)/x), ..., 1]`.
pub fn level_sizes(m: usize, x: usize) -> Result<Vec<usize>, PlanError> {
    if x < 2 {
        return Err(PlanError::BatchSize(x));
    }
    if m == 0 {
        return Err(PlanError::Empty);
    }
    let mut sizes = Vec::new();
    let mut n = m;
    loop {
        n = n.div_ceil(x);
        sizes.push(n);
        if n == 1 {
            return Ok(sizes);
        }
    }
}

fn digits(mut n: u64) -> usize {
    let mut d = 1;
    while n >= 10 {
        n /= 10;
        d += 1;
    }
    d
}

/// Per segment: prefix -> collector -> (peer entries, bytes of peer entries).
type Layout<'a> = BTreeMap<String, BTreeMap<Prefix, BTreeMap<&'a str, (usize, usize)>>>;

fn snapshot_layout<'a>(snapshot: &'a RouteSnapshot, axis: SegmentAxis) -> Layout<'a> {
    let mut layout: Layout<'a> = BTreeMap::new();
    for (prefix, collectors) in snapshot.routes() {
        for (collector, peers) in collectors {
            for (peer, path) in peers {
                let hops = path.hops();
                let path_bytes = 2 + hops.len() - 1 + hops.iter().map(|a| digits(a.get().into())).sum::<usize>();
                let entry = layout
                    .entry(axis.key(collector, *peer))
                    .or_default()
                    .entry(*prefix)
                    .or_default()
                    .entry(collector.as_str())
                    .or_default();
                entry.0 += 1;
                entry.1 += digits(peer.get().into()) + 3 + path_bytes;
            }
        }
    }
    layout
}

fn snapshot_bytes(timestamp: u64, prefixes: Option<&BTreeMap<Prefix, BTreeMap<&str, (usize, usize)>>>) -> usize {
    let mut body = 0;
    if let Some(prefixes) = prefixes {
        body += prefixes.len().saturating_sub(1);
        for (prefix, collectors) in prefixes {
            body += prefix.to_string().len() + 5 + collectors.len().saturating_sub(1);
            for (collector, (n, bytes)) in collectors {
                body += collector.len() + 5 + n.saturating_sub(1) + bytes;
            }
        }
    }
    26 + digits(timestamp) + body
}

/// Estimated tokens of each segment's tabular JSON, as produced by
/// [`segment_triples`].
pub fn segment_tokens(
    triple: &SnapshotTriple,
    axis: SegmentAxis,
    estimator: &TokenEstimator,
) -> BTreeMap<String, u64> {
    let snapshots = [&triple.history, &triple.before, &triple.after];
    let layouts: Vec<Layout<'_>> = snapshots.iter().map(|s| snapshot_layout(s, axis)).collect();
    let keys: std::collections::BTreeSet<&String> = layouts.iter().flat_map(|l| l.keys()).collect();
    keys.into_iter()
        .map(|key| {
            let bytes = 31 + snapshots
                .iter()
                .zip(&layouts)
                .map(|(s, l)| snapshot_bytes(s.timestamp, l.get(key)))
                .sum::<usize>();
            (key.clone(), estimator.estimate_len(bytes))
        })
        .collect()
}

/// One sub-triple per collector or per peer ASN, holding only that
/// segment's routes.
pub fn segment_triples(triple: &SnapshotTriple, axis: SegmentAxis) -> Vec<(String, SnapshotTriple)> {
    let mut segments: BTreeMap<String, SnapshotTriple> = BTreeMap::new();
    let empty = |t: &SnapshotTriple| SnapshotTriple {
        spec: t.spec.clone(),
        history: RouteSnapshot::new(t.history.timestamp),
        before: RouteSnapshot::new(t.before.timestamp),
        after: RouteSnapshot::new(t.after.timestamp),
    };
    for which in 0..3 {
        let source = [&triple.history, &triple.before, &triple.after][which];
        for (key, path) in source.iter() {
            let seg = segments
                .entry(axis.key(&key.collector, key.peer))
                .or_insert_with(|| empty(triple));
            let target = [&mut seg.history, &mut seg.before, &mut seg.after];
            let [h, b, a] = target;
            let snap = match which {
                0 => h,
                1 => b,
                _ => a,
            };
            snap.insert(key.prefix, &key.collector, path.clone());
        }
    }
    segments.into_iter().collect()
}

/// Picks the axis with the fewest segments that all fit the budget
/// (`token_limit` less the estimator's margin). Ties go to the collector axis.
pub fn plan_partition(
    triple: &SnapshotTriple,
    token_limit: u64,
    estimator: &TokenEstimator,
    batch_size: usize,
) -> Result<SummarizationPlan, PlanError> {
    let budget = estimator.budget(token_limit);
    let tokens = estimator.estimate(&triple.to_tabular_json());
    if tokens <= budget {
        return Err(PlanError::NotNeeded { tokens, budget });
    }
    let mut best: Option<(SegmentAxis, usize, u64)> = None;
    let mut largest: Option<(SegmentAxis, String, u64)> = None;
    for axis in [SegmentAxis::Collector, SegmentAxis::Peer] {
        let sizes = segment_tokens(triple, axis, estimator);
        let (seg, max) = sizes
            .iter()
            .max_by_key(|(_, t)| **t)
            .map(|(k, t)| (k.clone(), *t))
            .ok_or(PlanError::Empty)?;
        if max <= budget {
            if best.is_none_or(|(_, n, _)| sizes.len() < n) {
                best = Some((axis, sizes.len(), max));
            }
        } else {
            largest = Some((axis, seg, max));
        }
    }
    let (axis, count, max) = match best {
        Some(b) => b,
        None => {
            let (axis, segment, tokens) = largest.expect("an infeasible axis was recorded");
            return Err(PlanError::Infeasible {
                axis,
                segment,
                tokens,
                budget,
            });
        }
    };
    let level_sizes = level_sizes(count, batch_size)?;
    Ok(SummarizationPlan {
        segment_axis: axis,
        segment_count: count,
        batch_size,
        levels: level_sizes.len(),
        level_sizes,
        largest_segment_tokens: max,
        token_budget: budget,
        shuffle_seed: None,
    })
}

/// Reduces `reports` to one by summarizing random batches of `x`, level by
/// level. Returns the final text and the realized level sizes.
pub fn hierarchical_summarize(
    reports: &[String],
    x: usize,
    gateway: &Gateway,
    seed: u64,
    parallel: bool,
) -> Result<(String, Vec<usize>), ReasonerError> {
    if x < 2 {
        return Err(PlanError::BatchSize(x).into());
    }
    if reports.is_empty() {
        return Err(PlanError::Empty.into());
    }
    let mut level: Vec<String> = reports.to_vec();
    let mut sizes = Vec::new();
    for depth in 0.. {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "summary-level", depth));
        level.shuffle(&mut rng);
        let batches: Vec<(usize, &[String])> = level.chunks(x).enumerate().collect();
        let summarize = |&(b, batch): &(usize, &[String])| -> Result<String, ReasonerError> {
            let wrap = |source| ReasonerError::Summarize {
                level: depth as usize,
                batch: b,
                source,
            };
            let ctx = PromptContext {
                reports: batch.to_vec(),
                seed: Some(derive_seed(seed, &format!("summary-batch-{depth}"), b as u64)),
                ..Default::default()
            };
            let request = build_prompt(Stage::Summarize, &ctx).map_err(|e| wrap(e.into()))?;
            gateway.complete(&request).map(|r| r.text).map_err(wrap)
        };
        let next: Result<Vec<String>, ReasonerError> = if parallel {
            batches.par_iter().map(summarize).collect()
        } else {
            batches.iter().map(summarize).collect()
        };
        level = next?;
        sizes.push(level.len());
        if level.len() == 1 {
            break;
        }
    }
    Ok((level.pop().expect("one report remains"), sizes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_arithmetic() {
        assert_eq!(level_sizes(576, 5).unwrap(), vec![116, 24, 5, 1]);
        assert_eq!(level_sizes(5, 5).unwrap(), vec![1]);
        assert_eq!(level_sizes(6, 5).unwrap(), vec![2, 1]);
        assert_eq!(level_sizes(1, 2).unwrap(), vec![1]);
        assert_eq!(level_sizes(3, 1), Err(PlanError::BatchSize(1)));
        assert_eq!(level_sizes(0, 3), Err(PlanError::Empty));
    }
}
