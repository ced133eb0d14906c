//! Hand-built labeled events and an oversized event for exercising the
//! segmented path.

use std::collections::BTreeSet;

use bear_core::{AsPath, Asn, EventSpec, EventType, Prefix, RouteKey, RouteSnapshot, SnapshotTriple};

use crate::synth::SyntheticEvent;

/// An event with known type, offender and affected keys.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEvent {
    pub id: String,
    pub triple: SnapshotTriple,
    pub event_type: EventType,
    pub offender: Option<Asn>,
    pub affected_keys: BTreeSet<RouteKey>,
}

impl From<&SyntheticEvent> for LabeledEvent {
    fn from(e: &SyntheticEvent) -> Self {
        LabeledEvent {
            id: e.id.clone(),
            triple: e.triple.clone(),
            event_type: e.truth.event_type,
            offender: Some(e.truth.offender),
            affected_keys: e.affected_keys.clone(),
        }
    }
}

fn p(s: &str) -> Prefix {
    s.parse().expect("fixture prefix")
}

fn path(h: &[u32]) -> AsPath {
    AsPath::from_u32s(h).expect("fixture path")
}

const DUMP: u64 = 1_685_001_600;
const START: u64 = DUMP + 28_800 + 3_600;

/// Six collectors with two peers each, all routing `prefix` to `origin`.
fn baseline(prefix: Prefix, origin: u32) -> RouteSnapshot {
    let mut s = RouteSnapshot::new(DUMP);
    for c in 0..6u32 {
        for j in 0..2u32 {
            let peer = 3_000 + c * 10 + j;
            let transit = [2_914, 3_356, 1_299][(c + j) as usize % 3];
            s.insert(prefix, &format!("rrc{c:02}"), path(&[peer, transit, origin]));
        }
    }
    s
}

fn assemble(
    id: &str,
    target: Prefix,
    origin: u32,
    event_type: EventType,
    offender: u32,
    mutate: impl Fn(&mut RouteSnapshot, &str, Asn, &AsPath) -> Option<RouteKey>,
) -> LabeledEvent {
    let history = baseline(target, origin);
    let mut before = history.clone();
    before.timestamp = START;
    let mut after = before.clone();
    after.timestamp = START + 300;
    let mut keys = BTreeSet::new();
    let routes: Vec<((String, Asn), AsPath)> = before
        .prefix_routes(&target)
        .map(|((c, peer), p)| ((c.to_string(), peer), p.clone()))
        .collect();
    for ((c, peer), old) in routes {
        // First four collectors see the event.
        if c.as_str() < "rrc04" {
            keys.extend(mutate(&mut after, &c, peer, &old));
        }
    }
    LabeledEvent {
        id: id.to_string(),
        triple: SnapshotTriple {
            spec: EventSpec::new(target, START, None, Some(id.to_string())).expect("open-ended"),
            history,
            before,
            after,
        },
        event_type,
        offender: Some(Asn::new(offender).expect("non-zero")),
        affected_keys: keys,
    }
}

/// Hijack, sub-prefix hijack, route leak and sub-prefix route leak.
pub fn labeled_fixtures() -> Vec<LabeledEvent> {
    let target = p("198.51.100.0/22");
    let sub = p("198.51.100.0/24");
    let victim = 15_169;
    let key = |prefix: Prefix, c: &str, peer: Asn| RouteKey {
        prefix,
        collector: c.to_string(),
        peer,
    };
    vec![
        assemble("fixture-hijack", target, victim, EventType::Hijack, 64_666, |after, c, peer, _| {
            after.insert(target, c, path(&[peer.get(), 6_939, 64_666]));
            Some(key(target, c, peer))
        }),
        assemble(
            "fixture-sub-prefix-hijack",
            target,
            victim,
            EventType::SubPrefixHijack,
            64_667,
            |after, c, peer, _| {
                after.insert(sub, c, path(&[peer.get(), 64_667]));
                Some(key(sub, c, peer))
            },
        ),
        assemble("fixture-leak", target, victim, EventType::RouteLeak, 64_668, |after, c, peer, old| {
            let mut hops = vec![peer.get(), 64_668];
            hops.extend(old.hops()[1..].iter().map(|a| a.get()));
            after.insert(target, c, path(&hops));
            Some(key(target, c, peer))
        }),
        assemble(
            "fixture-sub-prefix-leak",
            target,
            victim,
            EventType::SubPrefixRouteLeak,
            64_669,
            |after, c, peer, _| {
                after.insert(sub, c, path(&[peer.get(), 64_669, victim]));
                Some(key(sub, c, peer))
            },
        ),
    ]
}

/// `collectors × peers_per_collector` distinct peers, each routing
/// `prefixes` /24s over a four-hop path. The first collector's peers see a
/// hijack of the first prefix.
pub fn oversized_fixture(collectors: usize, peers_per_collector: usize, prefixes: usize) -> LabeledEvent {
    let target = p("203.0.113.0/24");
    let others: Vec<Prefix> = (0..prefixes.saturating_sub(1))
        .map(|i| p(&format!("100.{}.{}.0/24", 64 + i / 256, i % 256)))
        .collect();
    let mut before = RouteSnapshot::new(START);
    for c in 0..collectors {
        let name = format!("rrc{c:02}");
        for j in 0..peers_per_collector {
            let peer = 100_000 + (c * peers_per_collector + j) as u32;
            let transit = 2_000 + (j % 7) as u32;
            before.insert(target, &name, path(&[peer, transit, 3_356, 64_496]));
            for (i, other) in others.iter().enumerate() {
                before.insert(*other, &name, path(&[peer, transit, 1_299, 70_000 + i as u32]));
            }
        }
    }
    let mut history = before.clone();
    history.timestamp = DUMP;
    let mut after = before.clone();
    after.timestamp = START + 300;
    let mut keys = BTreeSet::new();
    let first: Vec<(String, Asn)> = before
        .prefix_routes(&target)
        .filter(|((c, _), _)| *c == "rrc00")
        .map(|((c, peer), _)| (c.to_string(), peer))
        .collect();
    for (c, peer) in first {
        after.insert(target, &c, path(&[peer.get(), 174, 64_999]));
        keys.insert(RouteKey {
            prefix: target,
            collector: c,
            peer,
        });
    }
    LabeledEvent {
        id: "fixture-oversized".into(),
        triple: SnapshotTriple {
            spec: EventSpec::new(target, START, None, Some("fixture-oversized".into())).expect("open-ended"),
            history,
            before,
            after,
        },
        event_type: EventType::Hijack,
        offender: Some(Asn::new(64_999).expect("non-zero")),
        affected_keys: keys,
    }
}
