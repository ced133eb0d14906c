use std::collections::BTreeSet;
use std::fmt::Write;

use crate::analysis::{AnalysisFacts, ChangeFact, Evidence};
use crate::model::{AsPath, Asn, PathDelta, Prefix};

pub const NO_CHANGES: &str = "No AS path changes observed.";

fn fmt_path(path: &AsPath) -> String {
    format!("[{}]", path.hops().iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", "))
}

fn fmt_asns(asns: &BTreeSet<Asn>) -> String {
    asns.iter().map(|a| format!("AS{a}")).collect::<Vec<_>>().join(", ")
}

fn destination(old: &AsPath, new: &AsPath) -> String {
    if old.origin() == new.origin() {
        format!("destination unchanged (AS{})", new.origin())
    } else {
        format!("destination changed from AS{} to AS{}", old.origin(), new.origin())
    }
}

fn describe(fact: &ChangeFact, target: &Prefix) -> String {
    let mut line = format!("peer AS{}: ", fact.peer);
    match (&fact.before_path, &fact.after_path) {
        (Some(old), None) => {
            let _ = write!(line, "path {} withdrawn", fmt_path(old));
        }
        (None, Some(new)) if fact.is_sub_prefix => {
            let _ = write!(
                line,
                "new sub-prefix {} path {} appeared with destination AS{}",
                fact.prefix,
                fmt_path(new),
                new.origin()
            );
            match &fact.vs_target {
                Some(PathDelta { changed: false, .. }) => {
                    let _ = write!(line, "; identical to the same peer's path to {target}");
                }
                Some(vs) => {
                    let _ = write!(
                        line,
                        "; differs from the same peer's path to {target} ({})",
                        if vs.origin_changed {
                            "destination changed"
                        } else {
                            "destination unchanged"
                        }
                    );
                }
                None => {
                    let _ = write!(line, "; the peer has no path to {target}");
                }
            }
        }
        (None, Some(new)) => {
            let _ = write!(
                line,
                "new path {} appeared with destination AS{}",
                fmt_path(new),
                new.origin()
            );
        }
        (Some(old), Some(new)) => {
            let _ = write!(
                line,
                "path changed from {} to {}; {}",
                fmt_path(old),
                fmt_path(new),
                destination(old, new)
            );
        }
        (None, None) => unreachable!("facts always carry a path"),
    }
    match fact.evidence {
        Evidence::None => {}
        Evidence::ForeignOrigin { origin } => {
            let _ = write!(line, "; AS{origin} is not a historical origin of this prefix");
        }
        Evidence::NovelTransit { .. } => {
            let novel: BTreeSet<Asn> = fact.delta.introduced_asns.iter().copied().collect();
            let _ = write!(line, "; path introduces {} not seen historically", fmt_asns(&novel));
        }
    }
    line
}

/// Plain-text answers to the change questions, grouped by prefix then
/// collector. Output is fully determined by `facts`.
pub fn render_facts_text(facts: &AnalysisFacts) -> String {
    let target = facts.target_prefix;
    let mut out = String::new();
    let _ = writeln!(out, "Target prefix: {target}");
    let _ = writeln!(
        out,
        "Routes compared: {}; peers holding the target prefix: {}",
        facts.facts.len(),
        facts.total_peer_count
    );
    for (prefix, origins) in &facts.historical_origins {
        let _ = writeln!(out, "Historical origins for {prefix}: {}", fmt_asns(origins));
    }

    let changed: Vec<&ChangeFact> = facts.changed().collect();
    if changed.is_empty() {
        out.push_str(NO_CHANGES);
        out.push('\n');
        return out;
    }
    let _ = writeln!(
        out,
        "Routes with changes: {}; peers with anomalous changes: {}",
        changed.len(),
        facts.affected_peer_count
    );

    let mut current: Option<(&Prefix, &str)> = None;
    for fact in changed {
        if current.map(|(p, _)| p) != Some(&fact.prefix) {
            let kind = if fact.prefix == target {
                "target prefix".to_string()
            } else if fact.is_sub_prefix {
                format!("sub-prefix of {target}")
            } else {
                format!("covering prefix of {target}")
            };
            let _ = writeln!(out, "\n[{}] ({kind})", fact.prefix);
            current = None;
        }
        if current.map(|(_, c)| c) != Some(fact.collector.as_str()) {
            let _ = writeln!(out, "  collector {}:", fact.collector);
        }
        current = Some((&fact.prefix, fact.collector.as_str()));
        let _ = writeln!(out, "    {}", describe(fact, &target));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::analyze_changes;
    use crate::model::{EventSpec, RouteSnapshot};
    use crate::snapshot::SnapshotTriple;

    fn p(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    fn path(h: &[u32]) -> AsPath {
        AsPath::from_u32s(h).unwrap()
    }

    fn triple(after_edit: impl FnOnce(&mut RouteSnapshot)) -> SnapshotTriple {
        let mut before = RouteSnapshot::new(0);
        before.insert(p("10.0.0.0/8"), "rrc00", path(&[3356, 2914, 15169]));
        before.insert(p("10.0.0.0/8"), "rrc01", path(&[174, 15169]));
        let mut after = before.clone();
        after_edit(&mut after);
        SnapshotTriple {
            spec: EventSpec::new(p("10.0.0.0/8"), 100_000, None, None).unwrap(),
            history: before.clone(),
            before,
            after,
        }
    }

    #[test]
    fn unchanged_facts_use_fixed_sentence() {
        let facts = analyze_changes(&triple(|_| {})).unwrap();
        let text = render_facts_text(&facts);
        assert!(text.contains("No AS path changes observed."));
    }

    #[test]
    fn origin_change_names_everything() {
        let facts = analyze_changes(&triple(|a| {
            a.insert(p("10.0.0.0/8"), "rrc01", path(&[174, 9002, 64500]));
        }))
        .unwrap();
        let text = render_facts_text(&facts);
        assert!(text.contains("collector rrc01"));
        assert!(text.contains("peer AS174"));
        assert!(text.contains("destination changed from AS15169 to AS64500"));
        assert_eq!(text, render_facts_text(&facts));
    }

    #[test]
    fn sub_prefix_appearance_is_described() {
        let facts = analyze_changes(&triple(|a| {
            a.insert(p("10.0.0.0/9"), "rrc00", path(&[3356, 64500]));
        }))
        .unwrap();
        let text = render_facts_text(&facts);
        assert!(text.contains("10.0.0.0/9"));
        assert!(text.contains("new sub-prefix"));
        assert!(text.contains("differs from the same peer's path to 10.0.0.0/8"));
    }
}
