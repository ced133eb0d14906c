//! Seeded generator of collector feeds: periodic RIB dumps plus update churn
//! between them. Used as the substrate for synthetic events.

use std::collections::BTreeMap;

use bear_core::{AsPath, Asn, BgpElem, ElemSource, Prefix};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seeds::derive_seed;

/// Seconds between RIB dumps.
pub const DUMP_INTERVAL: u64 = 28_800;

/// Prefix whose origin alternates between two ASes.
pub const MOAS_PREFIX: &str = "10.254.0.0/16";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedConfig {
    pub seed: u64,
    pub collectors: usize,
    pub min_peers: usize,
    pub max_peers: usize,
    pub prefixes: usize,
    pub dumps: usize,
    /// Aligned to [`DUMP_INTERVAL`].
    pub start: u64,
    /// Share of routes re-announced over a new transit per interval.
    pub churn: f64,
}

impl Default for FeedConfig {
    fn default() -> Self {
        FeedConfig {
            seed: 7,
            collectors: 24,
            min_peers: 2,
            max_peers: 4,
            prefixes: 16,
            dumps: 4,
            start: 1_684_972_800,
            churn: 0.02,
        }
    }
}

impl FeedConfig {
    pub fn dump_timestamps(&self) -> Vec<u64> {
        (0..self.dumps as u64).map(|d| self.start + d * DUMP_INTERVAL).collect()
    }

    /// Updates run to one interval past the last dump.
    pub fn end(&self) -> u64 {
        self.start + self.dumps as u64 * DUMP_INTERVAL
    }
}

fn asn(v: u32) -> Asn {
    Asn::new(v).expect("generated ASNs are non-zero")
}

fn prefix(text: &str) -> Prefix {
    text.parse().expect("generated prefixes are canonical")
}

struct Announced {
    prefix: Prefix,
    origins: Vec<Asn>,
}

/// One /16 per index; every fourth gains a high-quarter /18 and every fourth
/// (offset by one) sits in the high half of a covering /15. No announced
/// prefix has its low-half child announced.
fn announced_prefixes(n: usize, rng: &mut ChaCha8Rng) -> Vec<Announced> {
    let mut out = Vec::new();
    for i in 0..n.min(126) {
        let origin = asn(20_000 + rng.random_range(0..20_000));
        let octet = if i % 4 == 2 { 2 * i + 1 } else { 2 * i };
        let base = prefix(&format!("10.{octet}.0.0/16"));
        out.push(Announced {
            prefix: base,
            origins: vec![origin],
        });
        match i % 4 {
            1 => out.push(Announced {
                prefix: prefix(&format!("10.{}.192.0/18", 2 * i)),
                origins: vec![origin],
            }),
            2 => out.push(Announced {
                prefix: prefix(&format!("10.{}.0.0/15", 2 * i)),
                origins: vec![origin],
            }),
            _ => {}
        }
    }
    out.push(Announced {
        prefix: prefix(MOAS_PREFIX),
        origins: vec![asn(39_001), asn(39_002)],
    });
    out
}

fn route(peer: Asn, transit: &[Asn], origin: Asn, rng: &mut ChaCha8Rng) -> AsPath {
    let mut hops = vec![peer];
    for _ in 0..rng.random_range(1..=2) {
        let t = *transit.choose(rng).expect("transit pool is non-empty");
        if !hops.contains(&t) {
            hops.push(t);
        }
    }
    hops.push(origin);
    AsPath::new(hops).expect("non-empty")
}

/// Deterministic feed for `config`. Peer ASNs lie in 1000..10000, transits
/// in 10000..20000 and origins in 20000..40000.
pub fn generate_feed(config: &FeedConfig) -> ElemSource {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "feed", 0));
    let transit: Vec<Asn> = (0..40).map(|i| asn(10_000 + i * 211)).collect();
    let prefixes = announced_prefixes(config.prefixes, &mut rng);
    let mut sessions: Vec<(String, Asn)> = Vec::new();
    for c in 0..config.collectors {
        let name = format!("rrc{c:02}");
        let n = rng.random_range(config.min_peers..=config.max_peers.max(config.min_peers));
        let mut peers: Vec<u32> = Vec::new();
        while peers.len() < n {
            let p = rng.random_range(1_000..10_000);
            if !peers.contains(&p) {
                peers.push(p);
            }
        }
        sessions.extend(peers.into_iter().map(|p| (name.clone(), asn(p))));
    }

    // (prefix index, session index) -> current path
    let mut state: BTreeMap<(usize, usize), AsPath> = BTreeMap::new();
    for (pi, p) in prefixes.iter().enumerate() {
        for (si, (_, peer)) in sessions.iter().enumerate() {
            let origin = p.origins[si % p.origins.len()];
            state.insert((pi, si), route(*peer, &transit, origin, &mut rng));
        }
    }

    let mut elems = Vec::new();
    for dump in config.dump_timestamps() {
        for (&(pi, si), path) in &state {
            elems.push(BgpElem::rib(dump, &sessions[si].0, prefixes[pi].prefix, path.clone()));
        }
        let keys: Vec<(usize, usize)> = state.keys().copied().collect();
        for key in keys {
            let (pi, si) = key;
            let p = &prefixes[pi];
            let (collector, peer) = &sessions[si];
            let moas = p.origins.len() > 1;
            if !moas && !rng.random_bool(config.churn.clamp(0.0, 1.0)) {
                continue;
            }
            let ts = dump + rng.random_range(1..DUMP_INTERVAL);
            if moas {
                // Each interval flips the origin for half of the sessions.
                if rng.random_bool(0.5) {
                    let current = state[&key].origin();
                    let other = *p.origins.iter().find(|o| **o != current).expect("two origins");
                    let path = route(*peer, &transit, other, &mut rng);
                    elems.push(BgpElem::announce(ts, collector, p.prefix, path.clone()));
                    state.insert(key, path);
                }
                continue;
            }
            let path = route(*peer, &transit, state[&key].origin(), &mut rng);
            if rng.random_bool(0.25) {
                // Brief outage before the new path settles.
                elems.push(BgpElem::withdraw(ts, collector, *peer, p.prefix));
                let back = (ts + rng.random_range(30..600)).min(dump + DUMP_INTERVAL - 1);
                elems.push(BgpElem::announce(back.max(ts), collector, p.prefix, path.clone()));
            } else {
                elems.push(BgpElem::announce(ts, collector, p.prefix, path.clone()));
            }
            state.insert(key, path);
        }
    }
    ElemSource::new(elems)
}
