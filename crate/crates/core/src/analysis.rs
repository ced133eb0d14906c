//! Deterministic analysis of a snapshot triple.
//!
//! Every (prefix, collector, peer) present before or after the event yields
//! one [`ChangeFact`]. Each changed fact is scored against the reference
//! paths for its prefix, which are the history and before snapshots. A
//! prefix with no reference paths of its own (a freshly announced
//! more-specific) inherits the reference of its closest covering prefix.
//!
//! - an after-path whose origin is outside the reference origin set is
//!   [`Evidence::ForeignOrigin`];
//! - otherwise, an after-path carrying ASNs absent from every reference path
//!   is [`Evidence::NovelTransit`], attributed to the novel ASN nearest the
//!   origin whose origin-side suffix already existed.
//!
//! Foreign origins classify as a hijack, novel transit as a route leak, and
//! either becomes the sub-prefix variant when all evidence sits on
//! more-specifics of the target while the target itself is quiet.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{path_delta, AsPath, Asn, PathDelta, Prefix, RouteKey, RouteSnapshot};
use crate::snapshot::SnapshotTriple;

/// Bumped whenever the rule set below changes meaning.
pub const RULESET_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("before and after snapshots are both empty")]
    NoData,
    #[error("no affected routes support a {0} classification")]
    InconsistentClassification(EventType),
    #[error("no offender exists when no anomaly is observed")]
    NoAnomaly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Hijack,
    SubPrefixHijack,
    RouteLeak,
    SubPrefixRouteLeak,
    NoAnomalyObserved,
}

impl EventType {
    pub const ALL: [EventType; 5] = [
        EventType::Hijack,
        EventType::SubPrefixHijack,
        EventType::RouteLeak,
        EventType::SubPrefixRouteLeak,
        EventType::NoAnomalyObserved,
    ];

    pub const ANOMALIES: [EventType; 4] = [
        EventType::Hijack,
        EventType::SubPrefixHijack,
        EventType::RouteLeak,
        EventType::SubPrefixRouteLeak,
    ];

    /// The label used in prompts and answer lines.
    pub fn label(self) -> &'static str {
        match self {
            EventType::Hijack => "hijack",
            EventType::SubPrefixHijack => "sub-prefix hijack",
            EventType::RouteLeak => "route leak",
            EventType::SubPrefixRouteLeak => "sub-prefix route leak",
            EventType::NoAnomalyObserved => "no anomaly",
        }
    }

    pub fn is_hijack(self) -> bool {
        matches!(self, EventType::Hijack | EventType::SubPrefixHijack)
    }

    pub fn is_leak(self) -> bool {
        matches!(self, EventType::RouteLeak | EventType::SubPrefixRouteLeak)
    }

    pub fn is_sub_prefix(self) -> bool {
        matches!(self, EventType::SubPrefixHijack | EventType::SubPrefixRouteLeak)
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EventType {
    type Err = String;

    /// Accepts the prompt labels as well as the snake_case names, ignoring
    /// case, surrounding punctuation and `-`/`_`/space differences.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .trim_matches(|c: char| !c.is_alphanumeric())
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        let t = match norm.as_str() {
            "hijack" | "bgphijack" => EventType::Hijack,
            "subprefixhijack" | "bgpsubprefixhijack" => EventType::SubPrefixHijack,
            "routeleak" | "bgprouteleak" => EventType::RouteLeak,
            "subprefixrouteleak" | "bgpsubprefixrouteleak" => EventType::SubPrefixRouteLeak,
            "noanomaly" | "noanomalyobserved" | "none" => EventType::NoAnomalyObserved,
            _ => return Err(format!("unknown event type `{s}`")),
        };
        Ok(t)
    }
}

/// Why a changed route looks anomalous, if it does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    #[default]
    None,
    ForeignOrigin { origin: Asn },
    NovelTransit { leaker: Asn },
}

impl Evidence {
    pub fn is_some(&self) -> bool {
        !matches!(self, Evidence::None)
    }

    fn suspect(&self) -> Option<Asn> {
        match *self {
            Evidence::None => None,
            Evidence::ForeignOrigin { origin } => Some(origin),
            Evidence::NovelTransit { leaker } => Some(leaker),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeFact {
    pub prefix: Prefix,
    pub collector: String,
    pub peer: Asn,
    pub delta: PathDelta,
    pub is_sub_prefix: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub before_path: Option<AsPath>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_path: Option<AsPath>,
    /// For more-specific prefixes: the after path compared with the same
    /// peer's path to the target prefix before the event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vs_target: Option<PathDelta>,
    #[serde(default)]
    pub evidence: Evidence,
}

impl ChangeFact {
    pub fn key(&self) -> RouteKey {
        RouteKey {
            prefix: self.prefix,
            collector: self.collector.clone(),
            peer: self.peer,
        }
    }

    fn peer_key(&self) -> (&str, Asn) {
        (self.collector.as_str(), self.peer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisFacts {
    pub ruleset: u32,
    pub target_prefix: Prefix,
    pub facts: Vec<ChangeFact>,
    pub historical_origins: BTreeMap<Prefix, BTreeSet<Asn>>,
    pub affected_peer_count: usize,
    pub total_peer_count: usize,
}

impl AnalysisFacts {
    pub fn changed(&self) -> impl Iterator<Item = &ChangeFact> {
        self.facts.iter().filter(|f| f.delta.changed)
    }

    /// Keys whose facts support the classified event.
    pub fn affected_keys(&self) -> BTreeSet<RouteKey> {
        let (_, triggering) = triggering_facts(self);
        triggering.into_iter().map(ChangeFact::key).collect()
    }

    /// Collectors holding at least one fact that supports the classified event.
    pub fn affected_collectors(&self) -> BTreeSet<String> {
        let (_, triggering) = triggering_facts(self);
        triggering.into_iter().map(|f| f.collector.clone()).collect()
    }

    /// The more-specific prefix carrying the evidence, for sub-prefix events.
    pub fn evidence_sub_prefix(&self, event: EventType) -> Option<Prefix> {
        let mut counts: BTreeMap<Prefix, usize> = BTreeMap::new();
        for fact in facts_for(self, event) {
            if fact.is_sub_prefix {
                *counts.entry(fact.prefix).or_default() += 1;
            }
        }
        plurality(counts)
    }
}

#[derive(Default)]
struct Reference {
    origins: BTreeSet<Asn>,
    asns: BTreeSet<Asn>,
    suffixes: HashSet<Vec<Asn>>,
}

impl Reference {
    fn add(&mut self, path: &AsPath) {
        self.origins.insert(path.origin());
        self.asns.extend(path.hops().iter().copied());
        for start in 0..path.len() {
            self.suffixes.insert(path.hops()[start..].to_vec());
        }
    }

    fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    fn evidence(&self, after: &AsPath) -> Evidence {
        if !self.origins.contains(&after.origin()) {
            return Evidence::ForeignOrigin {
                origin: after.origin(),
            };
        }
        let hops = after.hops();
        let novel = |a: &Asn| !self.asns.contains(a);
        let mut fallback = None;
        for i in (0..hops.len()).rev() {
            if !novel(&hops[i]) {
                continue;
            }
            fallback.get_or_insert(hops[i]);
            if i + 1 < hops.len() && self.suffixes.contains(&hops[i + 1..]) {
                return Evidence::NovelTransit { leaker: hops[i] };
            }
        }
        match fallback {
            Some(leaker) => Evidence::NovelTransit { leaker },
            None => Evidence::None,
        }
    }
}

fn own_references(snapshots: [&RouteSnapshot; 2]) -> BTreeMap<Prefix, Reference> {
    let mut refs: BTreeMap<Prefix, Reference> = BTreeMap::new();
    for snapshot in snapshots {
        for (key, path) in snapshot.iter() {
            refs.entry(key.prefix).or_default().add(path);
        }
    }
    refs
}

/// Reference for `prefix`, falling back to the most specific covering prefix.
fn reference_for<'a>(refs: &'a BTreeMap<Prefix, Reference>, prefix: &Prefix) -> Option<&'a Reference> {
    if let Some(r) = refs.get(prefix).filter(|r| !r.is_empty()) {
        return Some(r);
    }
    refs.iter()
        .filter(|(p, r)| !r.is_empty() && p.contains(prefix) && *p != prefix)
        .max_by_key(|(p, _)| p.len())
        .map(|(_, r)| r)
}

/// Builds one fact per route key present before or after the event.
pub fn analyze_changes(triple: &SnapshotTriple) -> Result<AnalysisFacts, AnalysisError> {
    let (before, after) = (&triple.before, &triple.after);
    if before.is_empty() && after.is_empty() {
        return Err(AnalysisError::NoData);
    }
    let target = triple.spec.prefix;
    let refs = own_references([&triple.history, before]);
    let empty = Reference::default();

    let keys: BTreeSet<RouteKey> = before.iter().chain(after.iter()).map(|(k, _)| k).collect();
    let mut facts = Vec::with_capacity(keys.len());
    let mut historical_origins = BTreeMap::new();
    for key in keys {
        let old = before.get_key(&key);
        let new = after.get_key(&key);
        let delta = path_delta(old, new).expect("key present in at least one snapshot");
        let reference = reference_for(&refs, &key.prefix).unwrap_or(&empty);
        historical_origins
            .entry(key.prefix)
            .or_insert_with(|| reference.origins.clone());
        let is_sub_prefix = key.prefix.is_more_specific_than(&target);
        let vs_target = match (is_sub_prefix, new) {
            (true, Some(new)) => before
                .get(&target, &key.collector, key.peer)
                .map(|t| path_delta(Some(t), Some(new)).expect("both present")),
            _ => None,
        };
        let evidence = match new {
            Some(new) if delta.changed => reference.evidence(new),
            _ => Evidence::None,
        };
        facts.push(ChangeFact {
            prefix: key.prefix,
            collector: key.collector,
            peer: key.peer,
            delta,
            is_sub_prefix,
            before_path: old.cloned(),
            after_path: new.cloned(),
            vs_target,
            evidence,
        });
    }

    let mut out = AnalysisFacts {
        ruleset: RULESET_VERSION,
        target_prefix: target,
        facts,
        historical_origins,
        affected_peer_count: 0,
        total_peer_count: 0,
    };
    let (_, triggering) = triggering_facts(&out);
    let affected: BTreeSet<(&str, Asn)> = triggering.iter().map(|f| f.peer_key()).collect();
    let mut total: BTreeSet<(&str, Asn)> = out
        .facts
        .iter()
        .filter(|f| f.prefix == target)
        .map(ChangeFact::peer_key)
        .collect();
    total.extend(affected.iter().copied());
    let (affected, total) = (affected.len(), total.len());
    out.affected_peer_count = affected;
    out.total_peer_count = total;
    Ok(out)
}

fn facts_for(facts: &AnalysisFacts, event: EventType) -> Vec<&ChangeFact> {
    facts
        .facts
        .iter()
        .filter(|f| match (event, f.evidence) {
            (EventType::Hijack, Evidence::ForeignOrigin { .. }) => true,
            (EventType::SubPrefixHijack, Evidence::ForeignOrigin { .. }) => f.is_sub_prefix,
            (EventType::RouteLeak, Evidence::NovelTransit { .. }) => true,
            (EventType::SubPrefixRouteLeak, Evidence::NovelTransit { .. }) => f.is_sub_prefix,
            _ => false,
        })
        .collect()
}

fn triggering_facts(facts: &AnalysisFacts) -> (EventType, Vec<&ChangeFact>) {
    let target_quiet = facts
        .facts
        .iter()
        .filter(|f| !f.is_sub_prefix)
        .all(|f| !f.evidence.is_some());
    for (plain, sub) in [
        (EventType::Hijack, EventType::SubPrefixHijack),
        (EventType::RouteLeak, EventType::SubPrefixRouteLeak),
    ] {
        let hits = facts_for(facts, plain);
        if hits.is_empty() {
            continue;
        }
        let event = if target_quiet && hits.iter().all(|f| f.is_sub_prefix) {
            sub
        } else {
            plain
        };
        return (event, hits);
    }
    (EventType::NoAnomalyObserved, Vec::new())
}

pub fn classify(facts: &AnalysisFacts) -> EventType {
    triggering_facts(facts).0
}

fn plurality<K: Ord + Copy>(counts: BTreeMap<K, usize>) -> Option<K> {
    // Iteration is ascending, so `>` keeps the lowest key on ties.
    let mut best: Option<(K, usize)> = None;
    for (k, n) in counts {
        if best.map_or(true, |(_, b)| n > b) {
            best = Some((k, n));
        }
    }
    best.map(|(k, _)| k)
}

/// The AS most often implicated by the facts supporting `event`; ties go to
/// the lowest ASN.
pub fn identify_offender(facts: &AnalysisFacts, event: EventType) -> Result<Asn, AnalysisError> {
    if event == EventType::NoAnomalyObserved {
        return Err(AnalysisError::NoAnomaly);
    }
    let mut counts: BTreeMap<Asn, usize> = BTreeMap::new();
    for fact in facts_for(facts, event) {
        if let Some(asn) = fact.evidence.suspect() {
            *counts.entry(asn).or_default() += 1;
        }
    }
    plurality(counts).ok_or(AnalysisError::InconsistentClassification(event))
}

/// Share of peers affected by the event; 0 when no peer holds the target.
pub fn detection_rate(facts: &AnalysisFacts) -> f64 {
    if facts.total_peer_count == 0 {
        0.0
    } else {
        facts.affected_peer_count as f64 / facts.total_peer_count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EventSpec;

    fn p(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    fn path(h: &[u32]) -> AsPath {
        AsPath::from_u32s(h).unwrap()
    }

    fn asn(v: u32) -> Asn {
        Asn::new(v).unwrap()
    }

    const TARGET: &str = "10.0.0.0/8";

    /// Ten peers on rrc00, each reaching AS15169 via AS2914.
    fn base() -> RouteSnapshot {
        let mut s = RouteSnapshot::new(0);
        for peer in 1..=10u32 {
            s.insert(p(TARGET), "rrc00", path(&[100 + peer, 2914, 15169]));
        }
        s
    }

    fn triple(after: RouteSnapshot) -> SnapshotTriple {
        SnapshotTriple {
            spec: EventSpec::new(p(TARGET), 100_000, None, None).unwrap(),
            history: base(),
            before: base(),
            after,
        }
    }

    #[test]
    fn identical_snapshots_show_nothing() {
        let facts = analyze_changes(&triple(base())).unwrap();
        assert_eq!(facts.facts.len(), 10);
        assert!(facts.facts.iter().all(|f| !f.delta.changed));
        assert_eq!(facts.affected_peer_count, 0);
        assert_eq!(facts.total_peer_count, 10);
        assert_eq!(classify(&facts), EventType::NoAnomalyObserved);
        assert_eq!(detection_rate(&facts), 0.0);
        assert_eq!(
            identify_offender(&facts, EventType::NoAnomalyObserved),
            Err(AnalysisError::NoAnomaly)
        );
    }

    #[test]
    fn empty_snapshots_are_an_error() {
        let mut t = triple(RouteSnapshot::new(0));
        t.before = RouteSnapshot::new(0);
        assert_eq!(analyze_changes(&t), Err(AnalysisError::NoData));
    }

    #[test]
    fn origin_flip_is_a_hijack() {
        let mut after = base();
        after.insert(p(TARGET), "rrc00", path(&[101, 2914, 64500]));
        let facts = analyze_changes(&triple(after)).unwrap();
        let flipped: Vec<_> = facts.changed().collect();
        assert_eq!(flipped.len(), 1);
        assert!(flipped[0].delta.origin_changed);
        assert_eq!(facts.affected_peer_count, 1);
        assert_eq!(classify(&facts), EventType::Hijack);
        assert_eq!(identify_offender(&facts, EventType::Hijack), Ok(asn(64500)));
        assert!((detection_rate(&facts) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn plurality_picks_most_frequent_origin() {
        let mut after = base();
        for peer in [101, 102, 103] {
            after.insert(p(TARGET), "rrc00", path(&[peer, 64500]));
        }
        after.insert(p(TARGET), "rrc00", path(&[104, 64510]));
        let facts = analyze_changes(&triple(after)).unwrap();
        assert_eq!(identify_offender(&facts, EventType::Hijack), Ok(asn(64500)));
        assert_eq!(facts.affected_peer_count, 4);
    }

    #[test]
    fn sub_prefix_with_foreign_origin() {
        let sub = p("10.0.0.0/9");
        let mut after = base();
        after.insert(sub, "rrc00", path(&[101, 174, 64500]));
        after.insert(sub, "rrc00", path(&[102, 2914, 15169]));
        let facts = analyze_changes(&triple(after)).unwrap();
        let appeared: Vec<_> = facts.facts.iter().filter(|f| f.prefix == sub).collect();
        assert!(appeared.iter().all(|f| f.delta.appeared && f.is_sub_prefix));
        let vs = appeared[0].vs_target.as_ref().unwrap();
        assert!(vs.changed && vs.origin_changed);
        assert_eq!(classify(&facts), EventType::SubPrefixHijack);
        assert_eq!(facts.affected_peer_count, 1);
        assert_eq!(facts.total_peer_count, 10);
        assert_eq!(facts.evidence_sub_prefix(EventType::SubPrefixHijack), Some(sub));
        assert_eq!(
            identify_offender(&facts, EventType::SubPrefixHijack),
            Ok(asn(64500))
        );
    }

    #[test]
    fn novel_transit_with_preserved_origin_is_a_leak() {
        let mut after = base();
        after.insert(p(TARGET), "rrc00", path(&[101, 64501, 2914, 15169]));
        after.insert(p(TARGET), "rrc00", path(&[102, 64501, 2914, 15169]));
        let facts = analyze_changes(&triple(after)).unwrap();
        assert_eq!(classify(&facts), EventType::RouteLeak);
        assert_eq!(identify_offender(&facts, EventType::RouteLeak), Ok(asn(64501)));
        assert_eq!(
            identify_offender(&facts, EventType::Hijack),
            Err(AnalysisError::InconsistentClassification(EventType::Hijack))
        );
    }

    #[test]
    fn leaker_is_adjacent_to_the_known_suffix() {
        // 64502 is novel too but its suffix [64501, 2914, 15169] never existed.
        let mut after = base();
        after.insert(p(TARGET), "rrc00", path(&[101, 64502, 64501, 2914, 15169]));
        let facts = analyze_changes(&triple(after)).unwrap();
        assert_eq!(identify_offender(&facts, EventType::RouteLeak), Ok(asn(64501)));
    }

    #[test]
    fn reroute_through_known_asns_is_not_anomalous() {
        let mut history = base();
        history.insert(p(TARGET), "rrc01", path(&[201, 3356, 15169]));
        let mut t = triple(base());
        t.history = history;
        t.after.insert(p(TARGET), "rrc00", path(&[101, 3356, 15169]));
        let facts = analyze_changes(&t).unwrap();
        assert_eq!(facts.changed().count(), 1);
        assert_eq!(classify(&facts), EventType::NoAnomalyObserved);
    }

    #[test]
    fn withdrawal_alone_is_not_anomalous() {
        let mut after = base();
        after.remove(&p(TARGET), "rrc00", asn(101));
        let facts = analyze_changes(&triple(after)).unwrap();
        assert!(facts.facts.iter().any(|f| f.delta.withdrawn));
        assert_eq!(classify(&facts), EventType::NoAnomalyObserved);
    }

    #[test]
    fn anycast_origins_are_a_set() {
        let mut history = base();
        history.insert(p(TARGET), "rrc01", path(&[201, 3356, 8075]));
        let mut t = triple(base());
        t.history = history;
        t.after.insert(p(TARGET), "rrc00", path(&[101, 3356, 8075]));
        let facts = analyze_changes(&t).unwrap();
        assert_eq!(classify(&facts), EventType::NoAnomalyObserved);
        assert_eq!(
            facts.historical_origins[&p(TARGET)],
            BTreeSet::from([asn(8075), asn(15169)])
        );
    }

    #[test]
    fn sub_prefix_leak() {
        let sub = p("10.0.0.0/9");
        let mut after = base();
        for peer in 1..=10u32 {
            after.insert(sub, "rrc00", path(&[100 + peer, 2914, 15169]));
        }
        after.insert(sub, "rrc00", path(&[101, 64501, 2914, 15169]));
        let facts = analyze_changes(&triple(after)).unwrap();
        assert_eq!(classify(&facts), EventType::SubPrefixRouteLeak);
        assert_eq!(facts.affected_peer_count, 1);
        assert_eq!(
            identify_offender(&facts, EventType::SubPrefixRouteLeak),
            Ok(asn(64501))
        );
    }

    #[test]
    fn event_type_labels_parse() {
        for t in EventType::ALL {
            assert_eq!(t.label().parse::<EventType>(), Ok(t));
            let snake = serde_json::to_string(&t).unwrap();
            assert_eq!(snake.trim_matches('"').parse::<EventType>(), Ok(t));
        }
        assert_eq!("BGP Hijack.".parse::<EventType>(), Ok(EventType::Hijack));
        assert!("maybe".parse::<EventType>().is_err());
    }
}
