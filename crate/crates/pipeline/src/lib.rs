//! Explanation pipeline over snapshot triples, synthetic event generation
//! and the collector-subsetting experiment harness.

pub mod feed;
pub mod fixtures;
pub mod harness;
pub mod partition;
pub mod reasoner;
pub mod render;
pub mod seeds;
pub mod synth;

pub use fixtures::{labeled_fixtures, oversized_fixture, LabeledEvent};
pub use harness::{run_sweep, ExperimentResult, RunConfig};
pub use partition::{level_sizes, plan_partition, SegmentAxis, SummarizationPlan};
pub use reasoner::{explain, explain_partial, AnomalyReport, ExplainConfig, ExplainOutcome, ReasonerError};
pub use render::render_report;
pub use synth::{generate_corpus, generate_event, SyntheticEvent, SyntheticEventDescription};
