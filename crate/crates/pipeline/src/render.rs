//! Markdown rendering of anomaly reports.

use std::fmt::Write;

use bear_core::EventType;

use crate::reasoner::AnomalyReport;

pub const SECTIONS: [&str; 8] = [
    "Summary",
    "Event Type",
    "Affected Prefixes",
    "Path Changes",
    "Offending AS",
    "Detection Coverage",
    "Recommended Actions",
    "Data Completeness",
];

fn type_name(t: EventType) -> &'static str {
    match t {
        EventType::Hijack => "BGP hijack",
        EventType::SubPrefixHijack => "BGP sub-prefix hijack",
        EventType::RouteLeak => "BGP route leak",
        EventType::SubPrefixRouteLeak => "BGP sub-prefix route leak",
        EventType::NoAnomalyObserved => "No anomaly observed",
    }
}

/// Deterministic markdown with one `##` heading per entry of [`SECTIONS`].
///
/// The narrative's first paragraph is the summary; later paragraphs go
/// under Path Changes.
pub fn render_report(report: &AnomalyReport) -> String {
    let mut paragraphs = report
        .narrative
        .split("\n\n")
        .map(str::trim)
        .filter(|p| !p.is_empty());
    let summary = paragraphs.next().unwrap_or("No narrative was produced.");
    let rest: Vec<&str> = paragraphs.collect();

    let mut out = format!("# BGP event report: {}\n", report.target_prefix);
    let mut section = |title: &str, body: &str| {
        let _ = write!(out, "\n## {title}\n\n{}\n", body.trim_end());
    };
    section(SECTIONS[0], summary);
    section(
        SECTIONS[1],
        &format!("{} (`{}`)", type_name(report.event_type), report.event_type.label()),
    );
    let mut prefixes = format!("- Target prefix: {}", report.target_prefix);
    if let Some(sub) = report.sub_prefix {
        let _ = write!(prefixes, "\n- Sub-prefix: {sub}");
    }
    section(SECTIONS[2], &prefixes);
    section(
        SECTIONS[3],
        &if rest.is_empty() {
            "No path changes reported.".to_string()
        } else {
            rest.join("\n\n")
        },
    );
    section(
        SECTIONS[4],
        &report
            .offender
            .map_or_else(|| "None identified.".to_string(), |a| format!("AS{a}")),
    );
    section(
        SECTIONS[5],
        &format!(
            "{} affected peers; detection rate {:.1}%.",
            report.affected_peers,
            report.detection_rate * 100.0
        ),
    );
    let actions: Vec<String> = report.recommendations.iter().map(|r| format!("- {r}")).collect();
    section(
        SECTIONS[6],
        &if actions.is_empty() {
            "None.".to_string()
        } else {
            actions.join("\n")
        },
    );
    let completeness = if report.conclusive {
        "Conclusive: the available collector data supports this explanation.".to_string()
    } else {
        let missing: Vec<String> = report.missing_collectors.iter().map(|c| format!("- {c}")).collect();
        let ask = report
            .recommendations
            .iter()
            .find(|r| r.to_ascii_lowercase().contains("collect"))
            .cloned()
            .unwrap_or_else(|| "Collect data from the collectors listed above.".to_string());
        format!(
            "Inconclusive: the selected data does not show the event.\n\nMissing collectors:\n{}\n\n{ask}",
            missing.join("\n")
        )
    };
    section(SECTIONS[7], &completeness);
    out
}
