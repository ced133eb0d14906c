//! Reconstruction of the routing snapshots around an event.
//!
//! Three snapshots are produced for an event starting at `t`:
//!
//! - history: the RIB dump at `floor((t - 8h) / 8h) * 8h`, one path per
//!   (prefix, collector, peer);
//! - before: history plus every update in `[history.timestamp, t - 300)`;
//! - after: before plus every update in `[t - 300, t + 300)`, or in
//!   `[t - 300, end - 1]` when the event ends earlier than `t + 300`.
//!
//! Updates are folded in timestamp order; records sharing a timestamp keep
//! their input order. Related more- and less-specific prefixes are replayed
//! alongside the target prefix.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::elem::{BgpElem, ElemError, IngestStats, RecordType};
use crate::model::{prefix_relation, EventSpec, ModelError, Prefix, PrefixRelation, RouteSnapshot};

/// Interval between RIB dumps, in seconds.
pub const RIB_INTERVAL: u64 = 8 * 3600;
/// Margin around the event start used for the update windows, in seconds.
pub const UPDATE_MARGIN: u64 = 5 * 60;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("event time {0} is earlier than one RIB interval after the epoch")]
    TimestampTooEarly(u64),
    #[error("no RIB records found at {0}")]
    MissingDump(u64),
    #[error("{record:?} record cannot be replayed as an update")]
    UnexpectedRecord { record: RecordType },
    #[error("update at {timestamp} lies outside the replay window {window}")]
    OutsideWindow { timestamp: u64, window: UpdateWindow },
    #[error("event end {end} is not after start {start}")]
    InvalidEnd { start: u64, end: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Elem(#[from] ElemError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Document { path: String, message: String },
}

/// Largest multiple of the RIB interval not after `t - 8h`.
pub fn history_timestamp(t: u64) -> Result<u64, BuildError> {
    if t < RIB_INTERVAL {
        return Err(BuildError::TimestampTooEarly(t));
    }
    Ok((t - RIB_INTERVAL) / RIB_INTERVAL * RIB_INTERVAL)
}

/// A replay window over update timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UpdateWindow {
    pub start: u64,
    pub end: u64,
    pub end_inclusive: bool,
}

impl UpdateWindow {
    pub fn contains(&self, ts: u64) -> bool {
        ts >= self.start && if self.end_inclusive { ts <= self.end } else { ts < self.end }
    }

    /// Exclusive upper bound of the window.
    pub fn end_exclusive(&self) -> u64 {
        if self.end_inclusive {
            self.end + 1
        } else {
            self.end
        }
    }

    pub fn before_event(history_ts: u64, t: u64) -> UpdateWindow {
        UpdateWindow {
            start: history_ts,
            end: t.saturating_sub(UPDATE_MARGIN),
            end_inclusive: false,
        }
    }

    pub fn after_event(t: u64, end: Option<u64>) -> Result<UpdateWindow, BuildError> {
        let start = t.saturating_sub(UPDATE_MARGIN);
        match end {
            Some(end) if end <= t => Err(BuildError::InvalidEnd { start: t, end }),
            Some(end) if end - 1 < t + UPDATE_MARGIN => Ok(UpdateWindow {
                start,
                end: end - 1,
                end_inclusive: true,
            }),
            _ => Ok(UpdateWindow {
                start,
                end: t + UPDATE_MARGIN,
                end_inclusive: false,
            }),
        }
    }
}

impl std::fmt::Display for UpdateWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let close = if self.end_inclusive { ']' } else { ')' };
        write!(f, "[{}, {}{}", self.start, self.end, close)
    }
}

/// Counters for replay events that are tolerated rather than rejected.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReplayStats {
    pub announcements: usize,
    pub duplicate_announcements: usize,
    pub withdrawals: usize,
    pub missing_withdrawals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyOutcome {
    Inserted,
    Replaced,
    Duplicate,
    Removed,
    MissingWithdraw,
}

/// Applies one announcement or withdrawal to `snapshot`.
pub fn apply_elem(
    snapshot: &mut RouteSnapshot,
    elem: &BgpElem,
    stats: &mut ReplayStats,
) -> Result<ApplyOutcome, BuildError> {
    match elem.record_type {
        RecordType::Rib => Err(BuildError::UnexpectedRecord {
            record: RecordType::Rib,
        }),
        RecordType::Announce => {
            let path = elem
                .path
                .clone()
                .ok_or(ElemError::MissingPath(elem.record_type.as_char()))?;
            stats.announcements += 1;
            match snapshot.insert(elem.prefix, &elem.collector, path) {
                None => Ok(ApplyOutcome::Inserted),
                Some(old) if Some(&old) == elem.path.as_ref() => {
                    stats.duplicate_announcements += 1;
                    Ok(ApplyOutcome::Duplicate)
                }
                Some(_) => Ok(ApplyOutcome::Replaced),
            }
        }
        RecordType::Withdraw => {
            match snapshot.remove(&elem.prefix, &elem.collector, elem.peer) {
                Some(_) => {
                    stats.withdrawals += 1;
                    Ok(ApplyOutcome::Removed)
                }
                None => {
                    stats.missing_withdrawals += 1;
                    Ok(ApplyOutcome::MissingWithdraw)
                }
            }
        }
    }
}

/// A timestamp-ordered collection of elems.
#[derive(Debug, Clone, Default)]
pub struct ElemSource {
    elems: Vec<BgpElem>,
}

impl ElemSource {
    /// Sorts by timestamp, keeping input order among equal timestamps.
    pub fn new(mut elems: Vec<BgpElem>) -> Self {
        elems.sort_by_key(|e| e.timestamp);
        ElemSource { elems }
    }

    pub fn from_files<P: AsRef<Path>>(paths: &[P]) -> Result<(Self, IngestStats), BuildError> {
        let mut all = Vec::new();
        let mut stats = IngestStats::default();
        for path in paths {
            let path = path.as_ref();
            let file = fs::File::open(path).map_err(|source| BuildError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let (elems, s) = crate::elem::read_elems(io::BufReader::new(file))?;
            stats.records += s.records;
            stats.rejected_as_set += s.rejected_as_set;
            stats.rejected_peer_mismatch += s.rejected_peer_mismatch;
            all.extend(elems);
        }
        Ok((ElemSource::new(all), stats))
    }

    pub fn elems(&self) -> &[BgpElem] {
        &self.elems
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    /// Every prefix observed in the feed.
    pub fn prefixes(&self) -> BTreeSet<Prefix> {
        self.elems.iter().map(|e| e.prefix).collect()
    }

    /// Distinct timestamps carrying RIB records.
    pub fn rib_timestamps(&self) -> BTreeSet<u64> {
        self.elems
            .iter()
            .filter(|e| e.record_type == RecordType::Rib)
            .map(|e| e.timestamp)
            .collect()
    }

    pub fn has_rib(&self, prefix: &Prefix, ts: u64) -> bool {
        self.elems
            .iter()
            .any(|e| e.record_type == RecordType::Rib && e.timestamp == ts && e.prefix == *prefix)
    }

    pub fn restrict_prefixes(&self, keep: &BTreeSet<Prefix>) -> ElemSource {
        ElemSource {
            elems: self
                .elems
                .iter()
                .filter(|e| keep.contains(&e.prefix))
                .cloned()
                .collect(),
        }
    }

    /// Announcements and withdrawals inside `window`.
    pub fn updates_in(&self, window: &UpdateWindow) -> ElemSource {
        ElemSource {
            elems: self
                .elems
                .iter()
                .filter(|e| e.record_type != RecordType::Rib && window.contains(e.timestamp))
                .cloned()
                .collect(),
        }
    }
}

/// The RIB dump at `ts`, restricted to `prefixes`. Later records for the
/// same (prefix, collector, peer) replace earlier ones.
pub fn build_history(
    source: &ElemSource,
    prefixes: &BTreeSet<Prefix>,
    ts: u64,
) -> Result<RouteSnapshot, BuildError> {
    let mut snapshot = RouteSnapshot::new(ts);
    let mut seen = 0usize;
    for elem in source.elems() {
        if elem.record_type != RecordType::Rib || elem.timestamp != ts {
            continue;
        }
        if !prefixes.contains(&elem.prefix) {
            continue;
        }
        if let Some(path) = &elem.path {
            snapshot.insert(elem.prefix, &elem.collector, path.clone());
            seen += 1;
        }
    }
    if seen == 0 {
        return Err(BuildError::MissingDump(ts));
    }
    Ok(snapshot)
}

fn replay(
    base: &RouteSnapshot,
    source: &ElemSource,
    window: UpdateWindow,
    stats: &mut ReplayStats,
) -> Result<RouteSnapshot, BuildError> {
    let mut snapshot = base.clone();
    snapshot.timestamp = window.end_exclusive();
    for elem in source.elems() {
        if !window.contains(elem.timestamp) {
            return Err(BuildError::OutsideWindow {
                timestamp: elem.timestamp,
                window,
            });
        }
        apply_elem(&mut snapshot, elem, stats)?;
    }
    Ok(snapshot)
}

/// Replays updates from `[history.timestamp, t - 300)` on top of `history`.
pub fn build_before(
    history: &RouteSnapshot,
    source: &ElemSource,
    t: u64,
    stats: &mut ReplayStats,
) -> Result<RouteSnapshot, BuildError> {
    replay(history, source, UpdateWindow::before_event(history.timestamp, t), stats)
}

/// Replays the updates around the event start on top of `before`.
pub fn build_after(
    before: &RouteSnapshot,
    source: &ElemSource,
    t: u64,
    end: Option<u64>,
    stats: &mut ReplayStats,
) -> Result<RouteSnapshot, BuildError> {
    replay(before, source, UpdateWindow::after_event(t, end)?, stats)
}

/// `ip` together with every observed prefix more or less specific than it.
pub fn collect_related_prefixes<'a>(
    index: impl IntoIterator<Item = &'a Prefix>,
    ip: &Prefix,
) -> BTreeSet<Prefix> {
    let mut out: BTreeSet<Prefix> = index
        .into_iter()
        .filter(|p| {
            matches!(
                prefix_relation(p, ip),
                PrefixRelation::AMoreSpecific | PrefixRelation::ALessSpecific
            )
        })
        .copied()
        .collect();
    out.insert(*ip);
    out
}

/// The three snapshots for one event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotTriple {
    pub spec: EventSpec,
    pub history: RouteSnapshot,
    pub before: RouteSnapshot,
    pub after: RouteSnapshot,
}

pub const EVENT_FILE: &str = "event.json";
pub const HISTORY_FILE: &str = "history.json";
pub const BEFORE_FILE: &str = "before.json";
pub const AFTER_FILE: &str = "after.json";

fn write_file(path: &Path, contents: &str) -> Result<(), BuildError> {
    fs::write(path, contents).map_err(|source| BuildError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String, BuildError> {
    fs::read_to_string(path).map_err(|source| BuildError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl SnapshotTriple {
    /// Serialized size of the three snapshots, used for token budgeting.
    pub fn to_tabular_json(&self) -> String {
        format!(
            "{{\"history\":{},\"before\":{},\"after\":{}}}",
            self.history.to_json(),
            self.before.to_json(),
            self.after.to_json()
        )
    }

    pub fn restrict_collectors(&self, keep: &BTreeSet<String>) -> SnapshotTriple {
        SnapshotTriple {
            spec: self.spec.clone(),
            history: self.history.restrict_collectors(keep),
            before: self.before.restrict_collectors(keep),
            after: self.after.restrict_collectors(keep),
        }
    }

    pub fn restrict_peers(&self, keep: &BTreeSet<crate::model::Asn>) -> SnapshotTriple {
        SnapshotTriple {
            spec: self.spec.clone(),
            history: self.history.restrict_peers(keep),
            before: self.before.restrict_peers(keep),
            after: self.after.restrict_peers(keep),
        }
    }

    /// Collectors present in any of the three snapshots.
    pub fn collectors(&self) -> BTreeSet<String> {
        let mut all = self.history.collectors();
        all.extend(self.before.collectors());
        all.extend(self.after.collectors());
        all
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), BuildError> {
        fs::create_dir_all(dir).map_err(|source| BuildError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let spec = serde_json::to_string_pretty(&self.spec).expect("spec serializes");
        write_file(&dir.join(EVENT_FILE), &spec)?;
        write_file(&dir.join(HISTORY_FILE), &self.history.to_json())?;
        write_file(&dir.join(BEFORE_FILE), &self.before.to_json())?;
        write_file(&dir.join(AFTER_FILE), &self.after.to_json())
    }

    pub fn read_dir(dir: &Path) -> Result<SnapshotTriple, BuildError> {
        let snapshot = |name: &str| -> Result<RouteSnapshot, BuildError> {
            let path = dir.join(name);
            RouteSnapshot::from_json(&read_file(&path)?).map_err(|e| BuildError::Document {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        };
        let spec_path = dir.join(EVENT_FILE);
        let spec: EventSpec =
            serde_json::from_str(&read_file(&spec_path)?).map_err(|e| BuildError::Document {
                path: spec_path.display().to_string(),
                message: e.to_string(),
            })?;
        Ok(SnapshotTriple {
            spec,
            history: snapshot(HISTORY_FILE)?,
            before: snapshot(BEFORE_FILE)?,
            after: snapshot(AFTER_FILE)?,
        })
    }
}

/// Builds history, before and after for `spec` from a raw feed.
pub fn build_triple(
    source: &ElemSource,
    spec: &EventSpec,
) -> Result<(SnapshotTriple, ReplayStats), BuildError> {
    let related = collect_related_prefixes(&source.prefixes(), &spec.prefix);
    let source = source.restrict_prefixes(&related);
    let history_ts = history_timestamp(spec.start)?;
    let mut history = build_history(&source, &related, history_ts)?;
    history.touch_prefix(spec.prefix);

    let mut stats = ReplayStats::default();
    let before_window = UpdateWindow::before_event(history_ts, spec.start);
    let before = build_before(&history, &source.updates_in(&before_window), spec.start, &mut stats)?;
    let after_window = UpdateWindow::after_event(spec.start, spec.end)?;
    let after = build_after(
        &before,
        &source.updates_in(&after_window),
        spec.start,
        spec.end,
        &mut stats,
    )?;
    Ok((
        SnapshotTriple {
            spec: spec.clone(),
            history,
            before,
            after,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AsPath, Asn};

    fn p(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    fn path(h: &[u32]) -> AsPath {
        AsPath::from_u32s(h).unwrap()
    }

    fn asn(v: u32) -> Asn {
        Asn::new(v).unwrap()
    }

    #[test]
    fn history_timestamp_examples() {
        assert_eq!(history_timestamp(28_800).unwrap(), 0);
        assert_eq!(history_timestamp(1_685_010_000).unwrap(), 1_684_972_800);
        assert_eq!(history_timestamp(1_684_972_800).unwrap(), 1_684_944_000);
        assert!(matches!(
            history_timestamp(28_799),
            Err(BuildError::TimestampTooEarly(28_799))
        ));
    }

    #[test]
    fn apply_elem_replaces_and_deletes() {
        let target = p("10.0.0.0/8");
        let mut stats = ReplayStats::default();
        let mut s = RouteSnapshot::new(0);
        s.insert(target, "rrc00", path(&[64500, 2, 3]));

        let out = apply_elem(
            &mut s,
            &BgpElem::announce(1, "rrc00", target, path(&[64500, 7, 3])),
            &mut stats,
        )
        .unwrap();
        assert_eq!(out, ApplyOutcome::Replaced);
        assert_eq!(s.get(&target, "rrc00", asn(64500)), Some(&path(&[64500, 7, 3])));

        let out = apply_elem(
            &mut s,
            &BgpElem::withdraw(2, "rrc00", asn(64500), target),
            &mut stats,
        )
        .unwrap();
        assert_eq!(out, ApplyOutcome::Removed);
        assert_eq!(s.to_json(), r#"{"timestamp":0,"routes":{"10.0.0.0/8":{"rrc00":{}}}}"#);
    }

    #[test]
    fn withdraw_of_missing_entry_is_counted() {
        let mut stats = ReplayStats::default();
        let mut s = RouteSnapshot::new(0);
        let out = apply_elem(
            &mut s,
            &BgpElem::withdraw(2, "rrc00", asn(64500), p("10.0.0.0/8")),
            &mut stats,
        )
        .unwrap();
        assert_eq!(out, ApplyOutcome::MissingWithdraw);
        assert_eq!(stats.missing_withdrawals, 1);
        assert_eq!(s, RouteSnapshot::new(0));
    }

    #[test]
    fn duplicate_announcements_are_idempotent() {
        let mut stats = ReplayStats::default();
        let mut s = RouteSnapshot::new(0);
        let e = BgpElem::announce(1, "rrc00", p("10.0.0.0/8"), path(&[1, 2]));
        apply_elem(&mut s, &e, &mut stats).unwrap();
        let snapshot = s.clone();
        assert_eq!(apply_elem(&mut s, &e, &mut stats).unwrap(), ApplyOutcome::Duplicate);
        assert_eq!(s, snapshot);
        assert_eq!(stats.duplicate_announcements, 1);
    }

    #[test]
    fn rib_records_are_not_updates() {
        let mut s = RouteSnapshot::new(0);
        let e = BgpElem::rib(1, "rrc00", p("10.0.0.0/8"), path(&[1, 2]));
        assert!(matches!(
            apply_elem(&mut s, &e, &mut ReplayStats::default()),
            Err(BuildError::UnexpectedRecord { .. })
        ));
    }

    #[test]
    fn history_keeps_last_rib_record() {
        let target = p("10.0.0.0/8");
        let prefixes = BTreeSet::from([target]);
        let source = ElemSource::new(vec![
            BgpElem::rib(100, "rrc00", target, path(&[1, 2, 3])),
            BgpElem::rib(100, "rrc00", target, path(&[1, 5, 3])),
            BgpElem::rib(100, "rrc00", target, path(&[7, 3])),
            BgpElem::rib(100, "rrc01", target, path(&[8, 3])),
            BgpElem::rib(200, "rrc01", target, path(&[8, 9, 3])),
        ]);
        let h = build_history(&source, &prefixes, 100).unwrap();
        assert_eq!(h.route_count(), 3);
        assert_eq!(h.get(&target, "rrc00", asn(1)), Some(&path(&[1, 5, 3])));
        assert_eq!(h.get(&target, "rrc01", asn(8)), Some(&path(&[8, 3])));

        assert!(matches!(
            build_history(&ElemSource::default(), &prefixes, 100),
            Err(BuildError::MissingDump(100))
        ));
    }

    #[test]
    fn before_window_is_half_open() {
        let target = p("10.0.0.0/8");
        let t = 100_000;
        let mut history = RouteSnapshot::new(history_timestamp(t).unwrap());
        history.insert(target, "rrc00", path(&[1, 2, 3]));
        let source = ElemSource::new(vec![
            BgpElem::announce(t - 301, "rrc00", target, path(&[1, 4, 3])),
            BgpElem::announce(t - 299, "rrc00", target, path(&[1, 5, 3])),
        ]);
        let window = UpdateWindow::before_event(history.timestamp, t);
        let updates = source.updates_in(&window);
        assert_eq!(updates.len(), 1);
        let mut stats = ReplayStats::default();
        let before = build_before(&history, &updates, t, &mut stats).unwrap();
        assert_eq!(before.get(&target, "rrc00", asn(1)), Some(&path(&[1, 4, 3])));
        assert_eq!(before.timestamp, t - 300);

        assert!(matches!(
            build_before(&history, &source, t, &mut stats),
            Err(BuildError::OutsideWindow { .. })
        ));

        let unchanged = build_before(&history, &ElemSource::default(), t, &mut stats).unwrap();
        assert_eq!(unchanged.routes(), history.routes());
    }

    #[test]
    fn after_window_bounds() {
        let t = 100_000;
        let w = UpdateWindow::after_event(t, None).unwrap();
        assert!(w.contains(t + 299) && !w.contains(t + 300) && w.contains(t - 300));

        let w = UpdateWindow::after_event(t, Some(t + 100)).unwrap();
        assert!(w.end_inclusive);
        assert_eq!(w.end, t + 99);
        assert!(w.contains(t + 99) && !w.contains(t + 100));

        let w = UpdateWindow::after_event(t, Some(t + 301)).unwrap();
        assert!(!w.end_inclusive && w.end == t + 300);

        assert!(matches!(
            UpdateWindow::after_event(t, Some(t)),
            Err(BuildError::InvalidEnd { .. })
        ));
    }

    #[test]
    fn related_prefixes() {
        let ip = p("10.0.0.0/8");
        let index = [p("10.0.0.0/9"), p("11.0.0.0/8"), ip];
        assert_eq!(
            collect_related_prefixes(&index, &ip),
            BTreeSet::from([ip, p("10.0.0.0/9")])
        );
        assert_eq!(collect_related_prefixes(&[ip], &ip), BTreeSet::from([ip]));
        let with_default = [p("0.0.0.0/0")];
        assert!(collect_related_prefixes(&with_default, &ip).contains(&p("0.0.0.0/0")));
    }

    #[test]
    fn triple_from_feed() {
        let target = p("10.0.0.0/8");
        let t = 1_685_010_000;
        let hist_ts = history_timestamp(t).unwrap();
        let source = ElemSource::new(vec![
            BgpElem::rib(hist_ts, "rrc00", target, path(&[1, 2, 3])),
            BgpElem::rib(hist_ts, "rrc00", p("10.0.0.0/9"), path(&[1, 2, 3])),
            BgpElem::rib(hist_ts, "rrc00", p("11.0.0.0/8"), path(&[1, 2, 4])),
            BgpElem::announce(hist_ts + 10, "rrc00", target, path(&[1, 5, 3])),
            BgpElem::rib(hist_ts + RIB_INTERVAL, "rrc00", target, path(&[1, 9, 3])),
            BgpElem::announce(t + 10, "rrc00", p("10.0.0.0/9"), path(&[1, 66])),
            BgpElem::announce(t + 400, "rrc00", target, path(&[1, 77])),
        ]);
        let spec = EventSpec::new(target, t, None, None).unwrap();
        let (triple, _) = build_triple(&source, &spec).unwrap();
        assert_eq!(triple.history.timestamp, hist_ts);
        assert!(!triple.history.has_prefix(&p("11.0.0.0/8")));
        assert_eq!(triple.before.get(&target, "rrc00", asn(1)), Some(&path(&[1, 5, 3])));
        assert_eq!(
            triple.after.get(&p("10.0.0.0/9"), "rrc00", asn(1)),
            Some(&path(&[1, 66]))
        );
        assert_eq!(triple.after.get(&target, "rrc00", asn(1)), Some(&path(&[1, 5, 3])));

        let dir = tempfile::tempdir().unwrap();
        triple.write_dir(dir.path()).unwrap();
        assert_eq!(SnapshotTriple::read_dir(dir.path()).unwrap(), triple);
    }
}
