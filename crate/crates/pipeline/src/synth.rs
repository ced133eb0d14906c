//! Labeled synthetic events: seed selection, consistency check, an event
//! description drafted by the model, and a direct mutation of the after
//! snapshot. Also ASN/timestamp anonymization of labeled events.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use bear_core::{
    build_triple, history_timestamp, AsPath, Asn, BuildError, ElemSource, EventSpec, EventType,
    Prefix, RouteKey, RouteSnapshot, SnapshotTriple,
};
use bear_llm::prompt::{extract_json, SeedContext, SynthContext};
use bear_llm::{build_prompt, Gateway, LlmError, PromptContext, Stage};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feed::DUMP_INTERVAL;
use crate::seeds::derive_seed;

pub const TRUTH_FILE: &str = "truth.json";

/// Order of event types when a corpus is balanced: hijack and leak
/// families alternate.
pub const BALANCED_ORDER: [EventType; 4] = [
    EventType::Hijack,
    EventType::RouteLeak,
    EventType::SubPrefixHijack,
    EventType::SubPrefixRouteLeak,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEventDescription {
    pub event_type: EventType,
    #[serde(default)]
    pub sub_prefix: Option<Prefix>,
    pub offender: Asn,
    pub sample_paths: Vec<AsPath>,
    pub detection_pct: f64,
}

/// A generated event with its ground truth. `affected_keys` are exactly the
/// keys whose path differs between the (sub-prefix duplicated) before
/// snapshot and after.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEvent {
    pub id: String,
    pub spec: EventSpec,
    pub triple: SnapshotTriple,
    pub truth: SyntheticEventDescription,
    pub affected_keys: BTreeSet<RouteKey>,
}

/// Contents of `truth.json`.
#[derive(Serialize, Deserialize)]
struct TruthFile {
    id: String,
    spec: EventSpec,
    truth: SyntheticEventDescription,
    affected_keys: BTreeSet<RouteKey>,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no buildable prefix/timestamp pair after {attempts} attempts")]
    NoSeed { attempts: usize },
    #[error("invalid description: {0}")]
    Invalid(String),
    #[error("description still invalid after repair: {0}")]
    RepairFailed(String),
    #[error("{0}")]
    Mutation(String),
    #[error("event generation gave up after {attempts} attempts; last error: {last}")]
    Exhausted { attempts: usize, last: String },
    #[error("{stage} stage: {source}")]
    Provider {
        stage: Stage,
        #[source]
        source: LlmError,
    },
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedMode {
    #[default]
    Rng,
    Gateway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed_mode: SeedMode,
    pub seed_retries: usize,
    pub event_attempts: usize,
    pub churn_threshold: f64,
    /// Hops of the old path kept ahead of a leak sample.
    pub retained_hops: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed_mode: SeedMode::Rng,
            seed_retries: 32,
            event_attempts: 16,
            churn_threshold: 0.05,
            retained_hops: 1,
        }
    }
}

/// A picked event seed and how many candidates were rejected on the way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PickedSeed {
    pub prefix: Prefix,
    pub timestamp: u64,
    pub retries: usize,
}

#[derive(Deserialize)]
struct SeedReply {
    prefix: String,
    timestamp: u64,
}

fn buildable(source: &ElemSource, prefix: &Prefix, t: u64, last: u64) -> bool {
    t + 300 <= last && history_timestamp(t).is_ok_and(|h| source.has_rib(prefix, h))
}

/// Picks a prefix and an event time whose history dump exists and whose
/// after window is covered by the feed.
pub fn pick_seed(
    source: &ElemSource,
    gateway: Option<&Gateway>,
    mode: SeedMode,
    seed: u64,
    max_retries: usize,
) -> Result<PickedSeed, SynthError> {
    let prefixes: Vec<Prefix> = source.prefixes().into_iter().collect();
    let dumps: Vec<u64> = source.rib_timestamps().into_iter().collect();
    let last = source.elems().last().map_or(0, |e| e.timestamp) + 1;
    for attempt in 0..=max_retries {
        let attempt_seed = derive_seed(seed, "pick-seed", attempt as u64);
        let candidate = match (mode, gateway) {
            (SeedMode::Gateway, Some(gw)) => {
                let ctx = PromptContext {
                    seed_candidates: Some(SeedContext {
                        prefixes: prefixes.clone(),
                        dump_timestamps: dumps.clone(),
                    }),
                    seed: Some(attempt_seed),
                    ..Default::default()
                };
                let request = build_prompt(Stage::SynthSeed, &ctx).map_err(|e| SynthError::Provider {
                    stage: Stage::SynthSeed,
                    source: e.into(),
                })?;
                let text = gw
                    .complete(&request)
                    .map_err(|source| SynthError::Provider {
                        stage: Stage::SynthSeed,
                        source,
                    })?
                    .text;
                extract_json(&text)
                    .and_then(|j| serde_json::from_str::<SeedReply>(j).ok())
                    .and_then(|r| r.prefix.parse::<Prefix>().ok().map(|p| (p, r.timestamp)))
            }
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed);
                match (prefixes.choose(&mut rng), dumps.choose(&mut rng)) {
                    (Some(p), Some(d)) => {
                        Some((*p, d + DUMP_INTERVAL + rng.random_range(300..DUMP_INTERVAL - 300)))
                    }
                    _ => None,
                }
            }
        };
        if let Some((prefix, timestamp)) = candidate {
            if buildable(source, &prefix, timestamp, last) {
                return Ok(PickedSeed {
                    prefix,
                    timestamp,
                    retries: attempt,
                });
            }
        }
    }
    Err(SynthError::NoSeed {
        attempts: max_retries + 1,
    })
}

/// True iff origins agree on every key present in both snapshots and the
/// share of keys whose path differs (or exists on one side only) is at most
/// `threshold`.
pub fn consistency_check(history: &RouteSnapshot, before: &RouteSnapshot, threshold: f64) -> bool {
    let h: BTreeMap<RouteKey, &AsPath> = history.iter().collect();
    let b: BTreeMap<RouteKey, &AsPath> = before.iter().collect();
    let mut union = 0usize;
    let mut changed = 0usize;
    for (key, hp) in &h {
        union += 1;
        match b.get(key) {
            Some(bp) if bp.origin() != hp.origin() => return false,
            Some(bp) if bp == hp => {}
            _ => changed += 1,
        }
    }
    for key in b.keys() {
        if !h.contains_key(key) {
            union += 1;
            changed += 1;
        }
    }
    union == 0 || changed as f64 / union as f64 <= threshold
}

fn origins_of(snapshots: &[&RouteSnapshot], prefix: &Prefix) -> BTreeSet<Asn> {
    snapshots
        .iter()
        .flat_map(|s| s.prefix_routes(prefix).map(|(_, p)| p.origin()))
        .collect()
}

/// Checks a description against the event rules for `target`.
pub fn validate_description(
    desc: &SyntheticEventDescription,
    ctx: &SynthContext,
    before: &RouteSnapshot,
) -> Result<(), SynthError> {
    let bad = |m: String| Err(SynthError::Invalid(m));
    if desc.event_type == EventType::NoAnomalyObserved {
        return bad("event_type must be an anomaly".into());
    }
    if let Some(required) = ctx.required_type {
        if desc.event_type != required {
            return bad(format!("event_type must be {}", required.label()));
        }
    }
    if ctx.reserved_asns.contains(&desc.offender) {
        return bad(format!("offender AS{} already appears in the routing data", desc.offender));
    }
    if !(desc.detection_pct > 0.0 && desc.detection_pct <= 1.0) {
        return bad(format!("detection_pct {} is outside (0, 1]", desc.detection_pct));
    }
    match (desc.event_type.is_sub_prefix(), desc.sub_prefix) {
        (true, None) => return bad("sub-prefix events need a sub_prefix".into()),
        (false, Some(_)) => return bad("only sub-prefix events carry a sub_prefix".into()),
        (true, Some(sub)) => {
            if !sub.is_more_specific_than(&ctx.target_prefix) {
                return bad(format!("{sub} is not strictly inside {}", ctx.target_prefix));
            }
            if before.has_prefix(&sub) {
                return bad(format!("{sub} is already routed"));
            }
        }
        (false, None) => {}
    }
    if desc.event_type.is_hijack() {
        if desc.sample_paths.is_empty() {
            return bad("hijack needs at least one sample path".into());
        }
        for p in &desc.sample_paths {
            if p.len() < 2 || p.origin() != desc.offender {
                return bad(format!("hijack sample [{p}] must have two or more hops and end with the offender"));
            }
        }
    } else {
        let [p] = desc.sample_paths.as_slice() else {
            return bad(format!(
                "leak needs exactly one sample path, got {}",
                desc.sample_paths.len()
            ));
        };
        if p.len() < 2 || p.peer() != desc.offender {
            return bad(format!("leak sample [{p}] must start with the offender"));
        }
        if !ctx.historical_origins.contains(&p.origin()) {
            return bad(format!("leak sample [{p}] must end at a historical origin"));
        }
    }
    Ok(())
}

fn draft(gateway: &Gateway, ctx: &PromptContext) -> Result<Option<SyntheticEventDescription>, SynthError> {
    let wrap = |source| SynthError::Provider {
        stage: Stage::SynthDescription,
        source,
    };
    let request = build_prompt(Stage::SynthDescription, ctx).map_err(|e| wrap(e.into()))?;
    let text = gateway.complete(&request).map_err(wrap)?.text;
    Ok(extract_json(&text).and_then(|j| serde_json::from_str(j).ok()))
}

/// Asks the model for an event description; a failing draft gets one repair
/// round with the validation error attached.
pub fn generate_description(
    triple: &SnapshotTriple,
    gateway: &Gateway,
    seed: u64,
    required_type: Option<EventType>,
) -> Result<SyntheticEventDescription, SynthError> {
    let target = triple.spec.prefix;
    let paths: Vec<AsPath> = triple.before.prefix_routes(&target).map(|(_, p)| p.clone()).collect();
    if paths.is_empty() {
        return Err(SynthError::Invalid(format!("{target} has no routes before the event")));
    }
    let synth = SynthContext {
        target_prefix: target,
        historical_origins: origins_of(&[&triple.history, &triple.before], &target),
        paths,
        reserved_asns: triple.history.asns().union(&triple.before.asns()).copied().collect(),
        required_type,
    };
    let mut ctx = PromptContext {
        synth: Some(synth.clone()),
        seed: Some(seed),
        ..Default::default()
    };
    let check = |d: Option<SyntheticEventDescription>| match d {
        Some(d) => validate_description(&d, &synth, &triple.before).map(|_| d),
        None => Err(SynthError::Invalid("reply holds no description JSON".into())),
    };
    match check(draft(gateway, &ctx)?) {
        Ok(d) => Ok(d),
        Err(first) => {
            ctx.repair_note = Some(first.to_string());
            ctx.seed = Some(derive_seed(seed, "repair", 1));
            check(draft(gateway, &ctx)?).map_err(|e| SynthError::RepairFailed(e.to_string()))
        }
    }
}

/// Copies every route of `target` under `sub`.
pub fn duplicate_to_subprefix(
    before: &RouteSnapshot,
    target: &Prefix,
    sub: &Prefix,
) -> Result<RouteSnapshot, SynthError> {
    if !sub.is_more_specific_than(target) {
        return Err(SynthError::Mutation(format!("{sub} is not strictly inside {target}")));
    }
    if before.has_prefix(sub) {
        return Err(SynthError::Mutation(format!("{sub} is already present")));
    }
    let mut out = before.clone();
    out.touch_prefix(*sub);
    for ((collector, _), path) in before.prefix_routes(target) {
        out.insert(*sub, collector, path.clone());
    }
    Ok(out)
}

/// Rewrites a sampled share of the routes to the mutated prefix.
///
/// Hijack: `[peer] ++ sample interior ++ [offender]`. Leak: the first
/// `retained_hops` of the old path, then the sample. Returns the new after
/// snapshot (timestamp unchanged) and the rewritten keys.
pub fn mutate_after(
    base: &RouteSnapshot,
    target: &Prefix,
    desc: &SyntheticEventDescription,
    seed: u64,
    retained_hops: usize,
) -> Result<(RouteSnapshot, BTreeSet<RouteKey>), SynthError> {
    let prefix = desc.sub_prefix.unwrap_or(*target);
    let eligible: Vec<((String, Asn), AsPath)> = base
        .prefix_routes(&prefix)
        .map(|((c, p), path)| ((c.to_string(), p), path.clone()))
        .collect();
    if eligible.is_empty() {
        return Err(SynthError::Mutation(format!("no peer holds a route to {prefix}")));
    }
    let n = eligible.len();
    let count = ((desc.detection_pct * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "mutate", 0));
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, n, count).into_vec();
    picked.sort_unstable();

    let mut after = base.clone();
    let mut keys = BTreeSet::new();
    for (i, idx) in picked.into_iter().enumerate() {
        let ((collector, peer), old) = &eligible[idx];
        let hops: Vec<Asn> = if desc.event_type.is_hijack() {
            let sample = &desc.sample_paths[i % desc.sample_paths.len()];
            let interior = &sample.hops()[1..sample.len() - 1];
            std::iter::once(*peer)
                .chain(interior.iter().copied())
                .chain(std::iter::once(desc.offender))
                .collect()
        } else {
            let sample = &desc.sample_paths[0];
            if sample.origin() != old.origin() {
                return Err(SynthError::Mutation(format!(
                    "leak sample ends at AS{} but {collector}/AS{peer} routes to AS{}",
                    sample.origin(),
                    old.origin()
                )));
            }
            let keep = retained_hops.clamp(1, old.len() - 1);
            old.hops()[..keep].iter().chain(sample.hops()).copied().collect()
        };
        let path = AsPath::new(hops).expect("mutated paths keep the peer hop");
        after.insert(prefix, collector, path);
        keys.insert(RouteKey {
            prefix,
            collector: collector.clone(),
            peer: *peer,
        });
    }
    Ok((after, keys))
}

/// Full workflow for one event: seed, build, consistency check, describe,
/// mutate. Each failed attempt moves on to a fresh derived seed.
pub fn generate_event(
    source: &ElemSource,
    gateway: &Gateway,
    id: &str,
    seed: u64,
    required_type: Option<EventType>,
    config: &SynthConfig,
) -> Result<SyntheticEvent, SynthError> {
    let mut last = String::from("no attempt made");
    for attempt in 0..config.event_attempts.max(1) {
        let attempt_seed = derive_seed(seed, "event-attempt", attempt as u64);
        match try_event(source, gateway, id, attempt_seed, required_type, config) {
            Ok(event) => return Ok(event),
            Err(e @ SynthError::Provider { .. }) => return Err(e),
            Err(e) => {
                log::debug!("{id}: attempt {attempt} rejected: {e}");
                last = e.to_string();
            }
        }
    }
    Err(SynthError::Exhausted {
        attempts: config.event_attempts.max(1),
        last,
    })
}

fn try_event(
    source: &ElemSource,
    gateway: &Gateway,
    id: &str,
    seed: u64,
    required_type: Option<EventType>,
    config: &SynthConfig,
) -> Result<SyntheticEvent, SynthError> {
    let picked = pick_seed(source, Some(gateway), config.seed_mode, seed, config.seed_retries)?;
    let spec = EventSpec::new(picked.prefix, picked.timestamp, None, Some(id.to_string()))
        .expect("open-ended spec");
    let (built, _) = build_triple(source, &spec)?;
    if !consistency_check(&built.history, &built.before, config.churn_threshold) {
        return Err(SynthError::Invalid("history and before paths are inconsistent".into()));
    }
    let truth = generate_description(&built, gateway, derive_seed(seed, "describe", 0), required_type)?;
    let base = match truth.sub_prefix {
        Some(sub) => duplicate_to_subprefix(&built.before, &spec.prefix, &sub)?,
        None => built.before.clone(),
    };
    let (mut after, affected_keys) =
        mutate_after(&base, &spec.prefix, &truth, derive_seed(seed, "peers", 0), config.retained_hops)?;
    after.timestamp = spec.start + 300;
    Ok(SyntheticEvent {
        id: id.to_string(),
        spec: spec.clone(),
        triple: SnapshotTriple {
            spec,
            history: built.history,
            before: built.before,
            after,
        },
        truth,
        affected_keys,
    })
}

/// `count` events with ids `synth-001`.. and seeds derived from `seed`.
/// With `balance`, types cycle through [`BALANCED_ORDER`].
pub fn generate_corpus(
    source: &ElemSource,
    gateway: &Gateway,
    count: usize,
    balance: bool,
    seed: u64,
    config: &SynthConfig,
) -> Vec<Result<SyntheticEvent, SynthError>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let id = format!("synth-{:03}", i + 1);
            let required = balance.then(|| BALANCED_ORDER[i % BALANCED_ORDER.len()]);
            generate_event(source, gateway, &id, derive_seed(seed, "event", i as u64 + 1), required, config)
        })
        .collect()
}

/// A seeded ASN relabeling plus a timestamp shift.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anonymization {
    pub asn_map: BTreeMap<Asn, Asn>,
    pub time_shift: u64,
}

/// Relabeled ASNs are drawn from the private 32-bit range.
pub const ANON_ASN_RANGE: std::ops::RangeInclusive<u32> = 4_200_000_000..=4_294_967_294;

impl Anonymization {
    /// Bijection over `asns` and a shift of `28800 × U[1, 10000]` seconds,
    /// which keeps RIB-dump alignment.
    pub fn new(asns: &BTreeSet<Asn>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "anonymize", 0));
        let mut used = HashSet::new();
        let mut fresh: Vec<Asn> = Vec::with_capacity(asns.len());
        while fresh.len() < asns.len() {
            let v = rng.random_range(ANON_ASN_RANGE);
            if used.insert(v) {
                fresh.push(Asn::new(v).expect("range excludes zero"));
            }
        }
        fresh.shuffle(&mut rng);
        Anonymization {
            asn_map: asns.iter().copied().zip(fresh).collect(),
            time_shift: DUMP_INTERVAL * rng.random_range(1..=10_000u64),
        }
    }

    pub fn asn(&self, a: Asn) -> Asn {
        self.asn_map.get(&a).copied().unwrap_or(a)
    }

    pub fn path(&self, p: &AsPath) -> AsPath {
        p.map_asns(|a| self.asn(a))
    }

    pub fn spec(&self, spec: &EventSpec) -> EventSpec {
        EventSpec {
            start: spec.start + self.time_shift,
            end: spec.end.map(|e| e + self.time_shift),
            ..spec.clone()
        }
    }

    fn snapshot(&self, s: &RouteSnapshot) -> RouteSnapshot {
        let mut out = s.map_asns(|a| self.asn(a));
        out.timestamp += self.time_shift;
        out
    }

    pub fn triple(&self, t: &SnapshotTriple) -> SnapshotTriple {
        SnapshotTriple {
            spec: self.spec(&t.spec),
            history: self.snapshot(&t.history),
            before: self.snapshot(&t.before),
            after: self.snapshot(&t.after),
        }
    }

    pub fn key(&self, k: &RouteKey) -> RouteKey {
        RouteKey {
            peer: self.asn(k.peer),
            ..k.clone()
        }
    }
}

fn triple_asns(t: &SnapshotTriple) -> BTreeSet<Asn> {
    let mut all = t.history.asns();
    all.extend(t.before.asns());
    all.extend(t.after.asns());
    all
}

/// Anonymizes a bare triple; the returned mapping relabels any labels.
pub fn anonymize_triple(triple: &SnapshotTriple, seed: u64) -> (SnapshotTriple, Anonymization) {
    let anon = Anonymization::new(&triple_asns(triple), seed);
    (anon.triple(triple), anon)
}

/// Applies one relabeling consistently to the snapshots and the truth.
pub fn anonymize(event: &SyntheticEvent, seed: u64) -> (SyntheticEvent, Anonymization) {
    let mut asns = triple_asns(&event.triple);
    asns.insert(event.truth.offender);
    asns.extend(event.truth.sample_paths.iter().flat_map(|p| p.hops().iter().copied()));
    let anon = Anonymization::new(&asns, seed);
    let triple = anon.triple(&event.triple);
    let out = SyntheticEvent {
        id: event.id.clone(),
        spec: triple.spec.clone(),
        truth: SyntheticEventDescription {
            offender: anon.asn(event.truth.offender),
            sample_paths: event.truth.sample_paths.iter().map(|p| anon.path(p)).collect(),
            ..event.truth.clone()
        },
        affected_keys: event.affected_keys.iter().map(|k| anon.key(k)).collect(),
        triple,
    };
    (out, anon)
}

impl SyntheticEvent {
    /// Writes the snapshot triple plus `truth.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SynthError> {
        self.triple.write_dir(dir)?;
        let path = dir.join(TRUTH_FILE);
        let file = TruthFile {
            id: self.id.clone(),
            spec: self.spec.clone(),
            truth: self.truth.clone(),
            affected_keys: self.affected_keys.clone(),
        };
        let text = serde_json::to_string_pretty(&file).expect("truth serializes");
        fs::write(&path, text + "\n").map_err(|e| SynthError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read_dir(dir: &Path) -> Result<Self, SynthError> {
        let triple = SnapshotTriple::read_dir(dir)?;
        let path = dir.join(TRUTH_FILE);
        let io = |message: String| SynthError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(&path).map_err(|e| io(e.to_string()))?;
        let file: TruthFile = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
        Ok(SyntheticEvent {
            id: file.id,
            spec: file.spec,
            triple,
            truth: file.truth,
            affected_keys: file.affected_keys,
        })
    }
}
