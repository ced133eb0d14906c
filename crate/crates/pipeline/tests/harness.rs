use std::collections::BTreeSet;
use std::sync::Arc;

use bear_llm::{Gateway, PerfectMock, ScriptedProvider, TokenEstimator};
use bear_pipeline::harness::*;
use bear_pipeline::{labeled_fixtures, oversized_fixture};
use proptest::prelude::*;

fn perfect() -> Gateway {
    Gateway::new(Arc::new(PerfectMock::new()))
}

fn config(fractions: &[f64], seeds: std::ops::Range<u64>) -> RunConfig {
    RunConfig {
        fractions: fractions.to_vec(),
        seeds: seeds.collect(),
        workers: 4,
        ..Default::default()
    }
}

#[test]
fn full_fraction_sees_everything() {
    let corpus = labeled_fixtures();
    let results = run_sweep(&corpus, &perfect(), &config(&[1.0], 0..3)).unwrap();
    assert_eq!(results.len(), 3);
    for r in &results {
        assert_eq!(r.presence_ratio, 1.0);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.per_event_rows.len(), corpus.len());
        assert!(r.avg_input_tokens > 0.0);
    }
}

#[test]
fn small_fractions_are_correct_either_way() {
    let corpus = labeled_fixtures();
    let results = run_sweep(&corpus, &perfect(), &config(&[0.17, 0.5], 0..10)).unwrap();
    let mut saw_absent = false;
    for r in &results {
        assert_eq!(r.accuracy, 1.0, "fraction {} seed {:?}", r.collector_fraction, r.seed);
        for row in &r.per_event_rows {
            assert_eq!(row.presence, row.conclusive);
            saw_absent |= !row.presence;
        }
    }
    assert!(saw_absent);
}

#[test]
fn provider_failures_are_recorded_not_fatal() {
    let corpus = labeled_fixtures();
    let broken = Gateway::new(Arc::new(ScriptedProvider::new(Vec::<String>::new())));
    let results = run_sweep(&corpus, &broken, &config(&[1.0], 0..1)).unwrap();
    assert_eq!(results[0].failures, corpus.len());
    assert_eq!(results[0].accuracy, 0.0);
    assert!(results[0].per_event_rows.iter().all(|r| r.failure.as_deref().is_some_and(|f| f.contains("describe stage"))));
}

#[test]
fn csv_and_rows_have_expected_shape() {
    let corpus = labeled_fixtures();
    let results = run_sweep(&corpus, &perfect(), &config(&[0.5, 1.0], 0..2)).unwrap();
    let mut csv = Vec::new();
    write_csv(&results, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "fraction,presence_ratio,accuracy,avg_input_tokens,avg_output_tokens");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("1,1.0000,1.0000,"));

    let mut rows = Vec::new();
    write_rows(&results, &mut rows).unwrap();
    let rows = String::from_utf8(rows).unwrap();
    assert_eq!(rows.lines().count(), 4 * corpus.len());
    for line in rows.lines() {
        let row: EventRow = serde_json::from_str(line).unwrap();
        assert!(row.correct);
    }
}

#[test]
fn sweep_is_reproducible() {
    let corpus = labeled_fixtures();
    let a = run_sweep(&corpus, &perfect(), &config(&[0.33], 0..4)).unwrap();
    let b = run_sweep(&corpus, &perfect(), &RunConfig { workers: 1, ..config(&[0.33], 0..4) }).unwrap();
    assert_eq!(a, b);
}

#[test]
fn selection_errors() {
    let f = &labeled_fixtures()[0];
    assert!(matches!(
        select_collectors(&f.triple, &Selection::Fraction(0.0), 0),
        Err(HarnessError::Fraction(_))
    ));
    assert!(matches!(
        select_collectors(&f.triple, &Selection::Explicit(BTreeSet::new()), 0),
        Err(HarnessError::EmptySelection)
    ));
    assert!(matches!(
        select_collectors(&f.triple, &Selection::Explicit(["nope".to_string()].into()), 0),
        Err(HarnessError::UnknownCollectors(_))
    ));
    let all = select_collectors(&f.triple, &Selection::Fraction(1.0), 0).unwrap();
    assert_eq!(subset_collectors(&f.triple, &all), f.triple);
    assert!(run_sweep(&[], &perfect(), &RunConfig::default()).is_err());
}

#[test]
fn stats_flag_oversized_events() {
    let small = labeled_fixtures().remove(0);
    let big = oversized_fixture(24, 24, 8);
    let corpus = vec![(small.id.clone(), &small.triple), (big.id.clone(), &big.triple)];
    let stats = corpus_stats(&corpus, 128_000, &TokenEstimator::default());
    assert!(!stats[0].oversized);
    assert!(stats[1].oversized);
    assert_eq!(stats[0].prefixes, 1);
    assert_eq!(stats[1].peers, 576);
    assert_eq!(stats[1].as_paths, 3 * 576 * 8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn subsetting_keeps_history_bytes(fraction in 0.01f64..=1.0, seed in any::<u64>(), idx in 0usize..4) {
        let f = &labeled_fixtures()[idx];
        let selected = select_collectors(&f.triple, &Selection::Fraction(fraction), seed).unwrap();
        prop_assert_eq!(selected.len(), collector_count(fraction, 6));
        let subset = subset_collectors(&f.triple, &selected);
        prop_assert_eq!(subset.history.to_json(), f.triple.history.to_json());
        prop_assert!(subset.before.collectors().is_subset(&selected));
        prop_assert!(subset.after.collectors().is_subset(&selected));
        prop_assert_eq!(presence_flag(f, &selected), f.affected_keys.iter().any(|k| selected.contains(&k.collector)));
    }
}
