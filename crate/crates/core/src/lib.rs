//! Core data model and deterministic analysis for BGP anomaly events.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: ASNs, prefixes, AS paths, routing snapshots and event specs.
//! - [`elem`]: the line-oriented collector record format and its reader.
//! - [`snapshot`]: replay of RIB dumps and updates into the history, before
//!   and after snapshots surrounding an event.
//! - [`analysis`]: per-peer change facts, event classification, offender
//!   identification and the textual rendering of those facts.

pub mod analysis;
pub mod elem;
pub mod model;
pub mod snapshot;

mod render;

pub use analysis::{
    analyze_changes, classify, detection_rate, identify_offender, AnalysisError, AnalysisFacts,
    ChangeFact, EventType, Evidence,
};
pub use elem::{BgpElem, ElemError, IngestStats, RecordType};
pub use model::{
    path_delta, prefix_relation, AsPath, Asn, EventSpec, ModelError, PathDelta, Prefix,
    PrefixRelation, RouteKey, RouteSnapshot,
};
pub use render::render_facts_text;
pub use snapshot::{
    apply_elem, build_after, build_before, build_history, build_triple, collect_related_prefixes,
    history_timestamp, ApplyOutcome, BuildError, ElemSource, ReplayStats, SnapshotTriple,
};
