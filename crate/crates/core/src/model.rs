//! Domain vocabulary shared by every stage of the pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("AS number must be non-zero")]
    ZeroAsn,
    #[error("invalid AS number `{0}`")]
    InvalidAsn(String),
    #[error("invalid prefix `{0}`")]
    InvalidPrefix(String),
    #[error("prefix `{0}` has host bits set beyond its mask")]
    NonCanonicalPrefix(String),
    #[error("AS path must contain at least one hop")]
    EmptyPath,
    #[error("path {path} stored under peer {peer} does not start with that peer")]
    PeerMismatch { peer: Asn, path: AsPath },
    #[error("event end {end} must be after start {start}")]
    InvalidEventWindow { start: u64, end: u64 },
    #[error("cannot compare two absent paths")]
    EmptyComparison,
    #[error("invalid snapshot document: {0}")]
    Document(String),
}

/// A 32-bit autonomous system number. Zero is reserved and rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Asn(u32);

impl Asn {
    pub fn new(value: u32) -> Result<Self, ModelError> {
        if value == 0 {
            Err(ModelError::ZeroAsn)
        } else {
            Ok(Asn(value))
        }
    }

    pub const fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for Asn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Asn {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix("AS").unwrap_or(s);
        let value: u32 = digits
            .parse()
            .map_err(|_| ModelError::InvalidAsn(s.to_string()))?;
        Asn::new(value)
    }
}

impl TryFrom<u32> for Asn {
    type Error = ModelError;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        Asn::new(value)
    }
}

impl Serialize for Asn {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u32(self.0)
    }
}

impl<'de> Deserialize<'de> for Asn {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = u32::deserialize(deserializer)?;
        Asn::new(value).map_err(de::Error::custom)
    }
}

/// An IPv4 or IPv6 network in canonical form: every bit past the mask is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prefix {
    addr: IpAddr,
    len: u8,
}

/// How two prefixes relate by containment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixRelation {
    Equal,
    AMoreSpecific,
    ALessSpecific,
    Disjoint,
}

fn net_mask(len: u8, width: u8) -> u128 {
    if len == 0 {
        return 0;
    }
    let ones = if len == 128 {
        u128::MAX
    } else {
        (1u128 << len) - 1
    };
    ones << (width - len)
}

fn addr_bits(addr: IpAddr) -> (u128, u8) {
    match addr {
        IpAddr::V4(a) => (u32::from(a) as u128, 32),
        IpAddr::V6(a) => (u128::from(a), 128),
    }
}

fn bits_to_addr(bits: u128, width: u8) -> IpAddr {
    if width == 32 {
        IpAddr::V4(Ipv4Addr::from(bits as u32))
    } else {
        IpAddr::V6(Ipv6Addr::from(bits))
    }
}

impl Prefix {
    /// Builds a prefix, rejecting masks that are too long or addresses with
    /// host bits set.
    pub fn new(addr: IpAddr, len: u8) -> Result<Self, ModelError> {
        let (bits, width) = addr_bits(addr);
        if len > width {
            return Err(ModelError::InvalidPrefix(format!("{addr}/{len}")));
        }
        if bits & !net_mask(len, width) != 0 {
            return Err(ModelError::NonCanonicalPrefix(format!("{addr}/{len}")));
        }
        Ok(Prefix { addr, len })
    }

    /// Builds a prefix, clearing any host bits.
    pub fn truncating(addr: IpAddr, len: u8) -> Result<Self, ModelError> {
        let (bits, width) = addr_bits(addr);
        if len > width {
            return Err(ModelError::InvalidPrefix(format!("{addr}/{len}")));
        }
        let addr = bits_to_addr(bits & net_mask(len, width), width);
        Ok(Prefix { addr, len })
    }

    pub fn addr(&self) -> IpAddr {
        self.addr
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_ipv4(&self) -> bool {
        self.addr.is_ipv4()
    }

    pub fn max_len(&self) -> u8 {
        if self.is_ipv4() {
            32
        } else {
            128
        }
    }

    /// True when `other` lies inside this network (including equality).
    pub fn contains(&self, other: &Prefix) -> bool {
        if self.is_ipv4() != other.is_ipv4() || self.len > other.len {
            return false;
        }
        let (a, width) = addr_bits(self.addr);
        let (b, _) = addr_bits(other.addr);
        let mask = net_mask(self.len, width);
        a & mask == b & mask
    }

    /// True when this prefix is strictly more specific than `other`.
    pub fn is_more_specific_than(&self, other: &Prefix) -> bool {
        self.len > other.len && other.contains(self)
    }

    /// One of the two halves one bit longer than this prefix.
    pub fn child(&self, high: bool) -> Option<Prefix> {
        if self.len >= self.max_len() {
            return None;
        }
        let (bits, width) = addr_bits(self.addr);
        let bit = if high { 1u128 << (width - self.len - 1) } else { 0 };
        Some(Prefix {
            addr: bits_to_addr(bits | bit, width),
            len: self.len + 1,
        })
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.len)
    }
}

impl FromStr for Prefix {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = s
            .split_once('/')
            .ok_or_else(|| ModelError::InvalidPrefix(s.to_string()))?;
        let addr: IpAddr = addr
            .parse()
            .map_err(|_| ModelError::InvalidPrefix(s.to_string()))?;
        let len: u8 = len
            .parse()
            .map_err(|_| ModelError::InvalidPrefix(s.to_string()))?;
        Prefix::new(addr, len)
    }
}

impl Serialize for Prefix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prefix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Containment relation of `a` with respect to `b`. Mixed families are disjoint.
pub fn prefix_relation(a: &Prefix, b: &Prefix) -> PrefixRelation {
    if a == b {
        PrefixRelation::Equal
    } else if b.contains(a) {
        PrefixRelation::AMoreSpecific
    } else if a.contains(b) {
        PrefixRelation::ALessSpecific
    } else {
        PrefixRelation::Disjoint
    }
}

/// Ordered AS hops, announcing peer first and origin last.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AsPath(Vec<Asn>);

impl AsPath {
    pub fn new(hops: Vec<Asn>) -> Result<Self, ModelError> {
        if hops.is_empty() {
            Err(ModelError::EmptyPath)
        } else {
            Ok(AsPath(hops))
        }
    }

    /// Convenience constructor for literal paths; zero hops are rejected.
    pub fn from_u32s(hops: &[u32]) -> Result<Self, ModelError> {
        hops.iter()
            .map(|&h| Asn::new(h))
            .collect::<Result<Vec<_>, _>>()
            .and_then(AsPath::new)
    }

    pub fn hops(&self) -> &[Asn] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn peer(&self) -> Asn {
        self.0[0]
    }

    /// The destination AS, i.e. the last hop.
    pub fn origin(&self) -> Asn {
        self.0[self.0.len() - 1]
    }

    pub fn contains(&self, asn: Asn) -> bool {
        self.0.contains(&asn)
    }

    pub fn map_asns(&self, mut f: impl FnMut(Asn) -> Asn) -> AsPath {
        AsPath(self.0.iter().map(|&a| f(a)).collect())
    }
}

impl fmt::Display for AsPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, hop) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{hop}")?;
        }
        Ok(())
    }
}

impl FromStr for AsPath {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split_whitespace()
            .map(str::parse)
            .collect::<Result<Vec<Asn>, _>>()
            .and_then(AsPath::new)
    }
}

impl Serialize for AsPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AsPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let hops = Vec::<Asn>::deserialize(deserializer)?;
        AsPath::new(hops).map_err(de::Error::custom)
    }
}

/// Result of comparing the path a peer held before and after an event.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PathDelta {
    pub changed: bool,
    pub origin_changed: bool,
    pub introduced_asns: BTreeSet<Asn>,
    pub withdrawn: bool,
    pub appeared: bool,
}

pub fn path_delta(old: Option<&AsPath>, new: Option<&AsPath>) -> Result<PathDelta, ModelError> {
    match (old, new) {
        (None, None) => Err(ModelError::EmptyComparison),
        (Some(_), None) => Ok(PathDelta {
            changed: true,
            withdrawn: true,
            ..PathDelta::default()
        }),
        (None, Some(new)) => Ok(PathDelta {
            changed: true,
            appeared: true,
            introduced_asns: new.hops().iter().copied().collect(),
            ..PathDelta::default()
        }),
        (Some(old), Some(new)) => Ok(PathDelta {
            changed: old != new,
            origin_changed: old.origin() != new.origin(),
            introduced_asns: new
                .hops()
                .iter()
                .copied()
                .filter(|a| !old.contains(*a))
                .collect(),
            withdrawn: false,
            appeared: false,
        }),
    }
}

/// Identifies one route entry: a peer's path to a prefix as seen by a collector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RouteKey {
    pub prefix: Prefix,
    pub collector: String,
    pub peer: Asn,
}

pub type PeerRoutes = BTreeMap<Asn, AsPath>;
pub type CollectorRoutes = BTreeMap<String, PeerRoutes>;

/// Per-prefix routing table: prefix -> collector -> peer -> AS path.
///
/// Collector and prefix entries may be present with no routes underneath;
/// that records that the collector was observed for the prefix.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawSnapshot")]
pub struct RouteSnapshot {
    pub timestamp: u64,
    routes: BTreeMap<Prefix, CollectorRoutes>,
}

#[derive(Deserialize)]
struct RawSnapshot {
    timestamp: u64,
    routes: BTreeMap<Prefix, CollectorRoutes>,
}

impl TryFrom<RawSnapshot> for RouteSnapshot {
    type Error = ModelError;

    fn try_from(raw: RawSnapshot) -> Result<Self, Self::Error> {
        for collectors in raw.routes.values() {
            for peers in collectors.values() {
                for (peer, path) in peers {
                    if path.peer() != *peer {
                        return Err(ModelError::PeerMismatch {
                            peer: *peer,
                            path: path.clone(),
                        });
                    }
                }
            }
        }
        Ok(RouteSnapshot {
            timestamp: raw.timestamp,
            routes: raw.routes,
        })
    }
}

impl RouteSnapshot {
    pub fn new(timestamp: u64) -> Self {
        RouteSnapshot {
            timestamp,
            routes: BTreeMap::new(),
        }
    }

    pub fn routes(&self) -> &BTreeMap<Prefix, CollectorRoutes> {
        &self.routes
    }

    pub fn get(&self, prefix: &Prefix, collector: &str, peer: Asn) -> Option<&AsPath> {
        self.routes.get(prefix)?.get(collector)?.get(&peer)
    }

    pub fn get_key(&self, key: &RouteKey) -> Option<&AsPath> {
        self.get(&key.prefix, &key.collector, key.peer)
    }

    /// Stores `path` under its own first hop, returning the path it replaced.
    pub fn insert(&mut self, prefix: Prefix, collector: &str, path: AsPath) -> Option<AsPath> {
        self.routes
            .entry(prefix)
            .or_default()
            .entry(collector.to_string())
            .or_default()
            .insert(path.peer(), path)
    }

    pub fn remove(&mut self, prefix: &Prefix, collector: &str, peer: Asn) -> Option<AsPath> {
        self.routes.get_mut(prefix)?.get_mut(collector)?.remove(&peer)
    }

    /// Registers a prefix with no routes, if not already present.
    pub fn touch_prefix(&mut self, prefix: Prefix) {
        self.routes.entry(prefix).or_default();
    }

    pub fn prefixes(&self) -> impl Iterator<Item = &Prefix> {
        self.routes.keys()
    }

    pub fn has_prefix(&self, prefix: &Prefix) -> bool {
        self.routes.contains_key(prefix)
    }

    /// All stored routes in key order.
    pub fn iter(&self) -> impl Iterator<Item = (RouteKey, &AsPath)> + '_ {
        self.routes.iter().flat_map(|(prefix, collectors)| {
            collectors.iter().flat_map(move |(collector, peers)| {
                peers.iter().map(move |(peer, path)| {
                    (
                        RouteKey {
                            prefix: *prefix,
                            collector: collector.clone(),
                            peer: *peer,
                        },
                        path,
                    )
                })
            })
        })
    }

    /// Routes for a single prefix as ((collector, peer), path).
    pub fn prefix_routes<'a>(
        &'a self,
        prefix: &Prefix,
    ) -> impl Iterator<Item = ((&'a str, Asn), &'a AsPath)> + 'a {
        self.routes.get(prefix).into_iter().flat_map(|collectors| {
            collectors.iter().flat_map(|(collector, peers)| {
                peers
                    .iter()
                    .map(move |(peer, path)| ((collector.as_str(), *peer), path))
            })
        })
    }

    pub fn route_count(&self) -> usize {
        self.routes
            .values()
            .flat_map(|c| c.values())
            .map(|p| p.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.route_count() == 0
    }

    pub fn collectors(&self) -> BTreeSet<String> {
        self.routes
            .values()
            .flat_map(|c| c.keys().cloned())
            .collect()
    }

    /// Distinct peer ASNs across every collector and prefix.
    pub fn peers(&self) -> BTreeSet<Asn> {
        self.routes
            .values()
            .flat_map(|c| c.values())
            .flat_map(|p| p.keys().copied())
            .collect()
    }

    /// Keeps only the entries for the given collectors.
    pub fn restrict_collectors(&self, keep: &BTreeSet<String>) -> RouteSnapshot {
        let routes = self
            .routes
            .iter()
            .map(|(prefix, collectors)| {
                let kept = collectors
                    .iter()
                    .filter(|(c, _)| keep.contains(*c))
                    .map(|(c, p)| (c.clone(), p.clone()))
                    .collect();
                (*prefix, kept)
            })
            .collect();
        RouteSnapshot {
            timestamp: self.timestamp,
            routes,
        }
    }

    /// Keeps only routes announced by the given peers.
    pub fn restrict_peers(&self, keep: &BTreeSet<Asn>) -> RouteSnapshot {
        let routes = self
            .routes
            .iter()
            .map(|(prefix, collectors)| {
                let kept = collectors
                    .iter()
                    .filter_map(|(c, peers)| {
                        let peers: PeerRoutes = peers
                            .iter()
                            .filter(|(p, _)| keep.contains(*p))
                            .map(|(p, path)| (*p, path.clone()))
                            .collect();
                        (!peers.is_empty()).then(|| (c.clone(), peers))
                    })
                    .collect();
                (*prefix, kept)
            })
            .collect();
        RouteSnapshot {
            timestamp: self.timestamp,
            routes,
        }
    }

    /// Applies an ASN relabeling to every peer key and path hop.
    pub fn map_asns(&self, mut f: impl FnMut(Asn) -> Asn) -> RouteSnapshot {
        let routes = self
            .routes
            .iter()
            .map(|(prefix, collectors)| {
                let collectors = collectors
                    .iter()
                    .map(|(c, peers)| {
                        let peers = peers
                            .iter()
                            .map(|(p, path)| (f(*p), path.map_asns(&mut f)))
                            .collect();
                        (c.clone(), peers)
                    })
                    .collect();
                (*prefix, collectors)
            })
            .collect();
        RouteSnapshot {
            timestamp: self.timestamp,
            routes,
        }
    }

    /// Every ASN referenced by this snapshot.
    pub fn asns(&self) -> BTreeSet<Asn> {
        self.iter()
            .flat_map(|(_, path)| path.hops().iter().copied())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Document(e.to_string()))
    }
}

/// A detected event: target prefix plus start (and optional end) time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawEventSpec")]
pub struct EventSpec {
    pub prefix: Prefix,
    pub start: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Deserialize)]
struct RawEventSpec {
    prefix: Prefix,
    start: u64,
    #[serde(default)]
    end: Option<u64>,
    #[serde(default)]
    name: Option<String>,
}

impl TryFrom<RawEventSpec> for EventSpec {
    type Error = ModelError;

    fn try_from(raw: RawEventSpec) -> Result<Self, Self::Error> {
        EventSpec::new(raw.prefix, raw.start, raw.end, raw.name)
    }
}

impl EventSpec {
    pub fn new(
        prefix: Prefix,
        start: u64,
        end: Option<u64>,
        name: Option<String>,
    ) -> Result<Self, ModelError> {
        if let Some(end) = end {
            if end <= start {
                return Err(ModelError::InvalidEventWindow { start, end });
            }
        }
        Ok(EventSpec {
            prefix,
            start,
            end,
            name,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    fn path(h: &[u32]) -> AsPath {
        AsPath::from_u32s(h).unwrap()
    }

    fn asns(v: &[u32]) -> BTreeSet<Asn> {
        v.iter().map(|&a| Asn::new(a).unwrap()).collect()
    }

    #[test]
    fn origin_is_last_hop() {
        assert_eq!(path(&[4608, 1221, 4637, 15169]).origin().get(), 15169);
        assert_eq!(path(&[64500]).origin().get(), 64500);
        assert_eq!(path(&[10, 20, 20, 30]).origin().get(), 30);
    }

    #[test]
    fn rejects_zero_asn_and_empty_path() {
        assert_eq!(Asn::new(0), Err(ModelError::ZeroAsn));
        assert_eq!(AsPath::new(vec![]), Err(ModelError::EmptyPath));
        assert!("".parse::<AsPath>().is_err());
        assert!("1 0 3".parse::<AsPath>().is_err());
    }

    #[test]
    fn prefix_parsing_enforces_canonical_form() {
        assert!("10.0.0.1/8".parse::<Prefix>().is_err());
        assert!("10.0.0.0/33".parse::<Prefix>().is_err());
        assert!("2001:db8::/129".parse::<Prefix>().is_err());
        assert!("10.0.0.0".parse::<Prefix>().is_err());
        assert_eq!(p("2001:db8::/32").to_string(), "2001:db8::/32");
        let t = Prefix::truncating("10.1.2.3".parse().unwrap(), 8).unwrap();
        assert_eq!(t, p("10.0.0.0/8"));
    }

    #[test]
    fn prefix_relations() {
        use PrefixRelation::*;
        assert_eq!(prefix_relation(&p("10.0.0.0/9"), &p("10.0.0.0/8")), AMoreSpecific);
        assert_eq!(prefix_relation(&p("10.0.0.0/8"), &p("10.0.0.0/9")), ALessSpecific);
        assert_eq!(prefix_relation(&p("10.0.0.0/8"), &p("10.0.0.0/8")), Equal);
        assert_eq!(prefix_relation(&p("10.128.0.0/9"), &p("11.0.0.0/8")), Disjoint);
        assert_eq!(prefix_relation(&p("0.0.0.0/0"), &p("10.0.0.0/8")), ALessSpecific);
        assert_eq!(prefix_relation(&p("::/0"), &p("10.0.0.0/8")), Disjoint);
    }

    #[test]
    fn children_split_the_range() {
        let t = p("10.0.0.0/8");
        assert_eq!(t.child(false), Some(p("10.0.0.0/9")));
        assert_eq!(t.child(true), Some(p("10.128.0.0/9")));
        assert_eq!(p("10.0.0.1/32").child(false), None);
    }

    #[test]
    fn path_delta_cases() {
        let same = path_delta(Some(&path(&[1, 2, 3])), Some(&path(&[1, 2, 3]))).unwrap();
        assert!(!same.changed);
        assert!(!same.origin_changed);

        let hijack =
            path_delta(Some(&path(&[1, 2, 15169])), Some(&path(&[1, 9, 64500]))).unwrap();
        assert!(hijack.changed && hijack.origin_changed);
        assert_eq!(hijack.introduced_asns, asns(&[9, 64500]));

        let gone = path_delta(Some(&path(&[1, 2, 15169])), None).unwrap();
        assert!(gone.withdrawn && gone.changed && !gone.appeared);

        let new = path_delta(None, Some(&path(&[1, 2]))).unwrap();
        assert!(new.appeared && new.changed);

        assert_eq!(path_delta(None, None), Err(ModelError::EmptyComparison));
    }

    #[test]
    fn snapshot_document_shape() {
        let mut s = RouteSnapshot::new(1_684_972_800);
        s.insert(p("10.0.0.0/8"), "rrc00", path(&[64500, 2, 3]));
        assert_eq!(
            s.to_json(),
            r#"{"timestamp":1684972800,"routes":{"10.0.0.0/8":{"rrc00":{"64500":[64500,2,3]}}}}"#
        );
        assert_eq!(RouteSnapshot::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn snapshot_document_rejects_mismatched_peer() {
        let doc = r#"{"timestamp":0,"routes":{"10.0.0.0/8":{"rrc00":{"7":[64500,2,3]}}}}"#;
        assert!(RouteSnapshot::from_json(doc).is_err());
        let doc = r#"{"timestamp":0,"routes":{"10.0.0.1/8":{}}}"#;
        assert!(RouteSnapshot::from_json(doc).is_err());
    }

    #[test]
    fn event_spec_requires_end_after_start() {
        assert!(EventSpec::new(p("10.0.0.0/8"), 100, Some(100), None).is_err());
        let doc = r#"{"prefix":"10.0.0.0/8","start":100,"end":50}"#;
        assert!(serde_json::from_str::<EventSpec>(doc).is_err());
        let ok: EventSpec =
            serde_json::from_str(r#"{"prefix":"10.0.0.0/8","start":100}"#).unwrap();
        assert_eq!(ok.end, None);
    }
}
