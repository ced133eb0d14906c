//! Collector records in the `|`-separated elem text format.
//!
//! One record per line:
//!
//! ```text
//! <A|W|R>|<timestamp>|<collector>|<peer asn>|<prefix>|<space separated AS path>
//! ```
//!
//! The path field is empty for withdrawals. Paths carrying AS_SET or
//! confederation segments (`{...}` / `(...)`) are rejected and counted rather
//! than failing the whole file, as are records whose path does not start with
//! the peer ASN.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AsPath, Asn, ModelError, Prefix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecordType {
    Announce,
    Withdraw,
    Rib,
}

impl RecordType {
    pub fn as_char(self) -> char {
        match self {
            RecordType::Announce => 'A',
            RecordType::Withdraw => 'W',
            RecordType::Rib => 'R',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BgpElem {
    pub record_type: RecordType,
    pub timestamp: u64,
    pub collector: String,
    pub peer: Asn,
    pub prefix: Prefix,
    /// Present for announcements and RIB entries, absent for withdrawals.
    pub path: Option<AsPath>,
}

#[derive(Debug, Error)]
pub enum ElemError {
    #[error("expected 6 `|`-separated fields, found {0}")]
    FieldCount(usize),
    #[error("unknown record type `{0}`")]
    RecordType(String),
    #[error("invalid timestamp `{0}`")]
    Timestamp(String),
    #[error("invalid collector name `{0}`")]
    Collector(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("withdrawal carries an AS path")]
    PathOnWithdraw,
    #[error("{0} record without an AS path")]
    MissingPath(char),
    #[error("AS path contains set or confederation segments")]
    AsSet,
    #[error("path first hop {first} differs from peer {peer}")]
    PeerMismatch { peer: Asn, first: Asn },
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<ElemError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ElemError {
    /// Errors that reject a single record without invalidating the feed.
    pub fn is_skippable(&self) -> bool {
        matches!(self, ElemError::AsSet | ElemError::PeerMismatch { .. })
    }
}

impl BgpElem {
    pub fn announce(ts: u64, collector: &str, prefix: Prefix, path: AsPath) -> Self {
        BgpElem {
            record_type: RecordType::Announce,
            timestamp: ts,
            collector: collector.to_string(),
            peer: path.peer(),
            prefix,
            path: Some(path),
        }
    }

    pub fn rib(ts: u64, collector: &str, prefix: Prefix, path: AsPath) -> Self {
        BgpElem {
            record_type: RecordType::Rib,
            ..BgpElem::announce(ts, collector, prefix, path)
        }
    }

    pub fn withdraw(ts: u64, collector: &str, peer: Asn, prefix: Prefix) -> Self {
        BgpElem {
            record_type: RecordType::Withdraw,
            timestamp: ts,
            collector: collector.to_string(),
            peer,
            prefix,
            path: None,
        }
    }

    pub fn parse_line(line: &str) -> Result<Self, ElemError> {
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 6 {
            return Err(ElemError::FieldCount(fields.len()));
        }
        let record_type = match fields[0] {
            "A" => RecordType::Announce,
            "W" => RecordType::Withdraw,
            "R" => RecordType::Rib,
            other => return Err(ElemError::RecordType(other.to_string())),
        };
        let timestamp = fields[1]
            .parse()
            .map_err(|_| ElemError::Timestamp(fields[1].to_string()))?;
        let collector = fields[2];
        if collector.is_empty() || collector.chars().any(char::is_whitespace) {
            return Err(ElemError::Collector(collector.to_string()));
        }
        let peer: Asn = fields[3].parse()?;
        let prefix: Prefix = fields[4].parse()?;
        let raw_path = fields[5].trim();
        let path = match record_type {
            RecordType::Withdraw => {
                if !raw_path.is_empty() {
                    return Err(ElemError::PathOnWithdraw);
                }
                None
            }
            _ => {
                if raw_path.is_empty() {
                    return Err(ElemError::MissingPath(record_type.as_char()));
                }
                if raw_path.contains(['{', '}', '(', ')', '[', ']']) {
                    return Err(ElemError::AsSet);
                }
                let path: AsPath = raw_path.parse()?;
                if path.peer() != peer {
                    return Err(ElemError::PeerMismatch {
                        peer,
                        first: path.peer(),
                    });
                }
                Some(path)
            }
        };
        Ok(BgpElem {
            record_type,
            timestamp,
            collector: collector.to_string(),
            peer,
            prefix,
            path,
        })
    }
}

impl fmt::Display for BgpElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|{}|{}|{}|{}|",
            self.record_type.as_char(),
            self.timestamp,
            self.collector,
            self.peer,
            self.prefix
        )?;
        if let Some(path) = &self.path {
            write!(f, "{path}")?;
        }
        Ok(())
    }
}

/// Counters collected while reading an elem feed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub records: usize,
    pub rejected_as_set: usize,
    pub rejected_peer_mismatch: usize,
}

/// Reads every record from `reader`. Blank lines and `#` comments are ignored.
pub fn read_elems<R: BufRead>(reader: R) -> Result<(Vec<BgpElem>, IngestStats), ElemError> {
    let mut stats = IngestStats::default();
    let mut elems = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match BgpElem::parse_line(trimmed) {
            Ok(elem) => {
                stats.records += 1;
                elems.push(elem);
            }
            Err(ElemError::AsSet) => stats.rejected_as_set += 1,
            Err(ElemError::PeerMismatch { .. }) => stats.rejected_peer_mismatch += 1,
            Err(e) => {
                return Err(ElemError::Line {
                    line: idx + 1,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok((elems, stats))
}

pub fn write_elems<'a, W: Write>(
    mut writer: W,
    elems: impl IntoIterator<Item = &'a BgpElem>,
) -> std::io::Result<()> {
    for elem in elems {
        writeln!(writer, "{elem}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_each_record_type() {
        let a = BgpElem::parse_line("A|1684972800|rrc00|64500|10.0.0.0/8|64500 2 3").unwrap();
        assert_eq!(a.record_type, RecordType::Announce);
        assert_eq!(a.path.as_ref().unwrap().origin().get(), 3);

        let w = BgpElem::parse_line("W|1684972801|rrc00|64500|10.0.0.0/8|").unwrap();
        assert_eq!(w.record_type, RecordType::Withdraw);
        assert!(w.path.is_none());

        let r = BgpElem::parse_line("R|0|route-views2|174|2001:db8::/32|174 3356").unwrap();
        assert_eq!(r.record_type, RecordType::Rib);
        assert_eq!(r.to_string(), "R|0|route-views2|174|2001:db8::/32|174 3356");
        assert_eq!(w.to_string(), "W|1684972801|rrc00|64500|10.0.0.0/8|");
    }

    #[test]
    fn rejects_malformed_records() {
        assert!(matches!(
            BgpElem::parse_line("A|1|rrc00|64500|10.0.0.0/8"),
            Err(ElemError::FieldCount(5))
        ));
        assert!(matches!(
            BgpElem::parse_line("X|1|rrc00|64500|10.0.0.0/8|64500"),
            Err(ElemError::RecordType(_))
        ));
        assert!(matches!(
            BgpElem::parse_line("A|-1|rrc00|64500|10.0.0.0/8|64500"),
            Err(ElemError::Timestamp(_))
        ));
        assert!(matches!(
            BgpElem::parse_line("A|1|rrc00|64500|10.0.0.0/8|"),
            Err(ElemError::MissingPath('A'))
        ));
        assert!(matches!(
            BgpElem::parse_line("W|1|rrc00|64500|10.0.0.0/8|64500"),
            Err(ElemError::PathOnWithdraw)
        ));
        assert!(BgpElem::parse_line("A|1|rrc00|64500|10.0.0.1/8|64500").is_err());
    }

    #[test]
    fn reader_counts_skippable_rejections() {
        let text = "\
# comment
A|10|rrc00|64500|10.0.0.0/8|64500 {1,2}
A|11|rrc00|64500|10.0.0.0/8|7 2 3

R|12|rrc00|64500|10.0.0.0/8|64500 2 3
";
        let (elems, stats) = read_elems(text.as_bytes()).unwrap();
        assert_eq!(elems.len(), 1);
        assert_eq!(stats.rejected_as_set, 1);
        assert_eq!(stats.rejected_peer_mismatch, 1);

        let err = read_elems("A|x|rrc00|1|10.0.0.0/8|1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 1:"));
    }
}
