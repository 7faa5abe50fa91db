//! Merges identifier observations into channel entities.
//!
//! Every capture contributes a claimed identifier (from its URL) and any
//! identifiers embedded in the page. Identifiers seen together in one capture
//! are joined with a disjoint-set union; embedded channel IDs are the hard
//! evidence that ties usernames, custom names and handles together.
//!
//! A username (or other name) that appears alongside two or more distinct
//! channel IDs has been reassigned. Its captures are split between the
//! claiming IDs: a capture carrying an ID goes to that ID, any other goes to
//! the claim whose evidence is nearest in time (the lexicographically smaller
//! ID on a tie). For two non-interleaved claims this is a split at the
//! midpoint between the last evidence of one and the first of the other.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cdx::{normalize_url, SnapshotRef};
use crate::extract::ExtractionRow;
use crate::identifiers::{attribute_short_path, parse_channel_url, ChannelIdentifier, Family, ShortPathAttribution};
use crate::timestamp::Timestamp;

/// One capture as seen by the linker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkInput {
    pub url: String,
    pub timestamp: Timestamp,
    /// Identifier the capture URL addresses.
    pub claimed: Option<ChannelIdentifier>,
    /// Identifiers found in the page.
    pub embedded: Vec<ChannelIdentifier>,
    /// Subscriber count and its exactness, when extracted.
    pub subs: Option<(u64, bool)>,
}

/// Classifies a capture URL, resolving bare short paths by capture year.
pub fn claim_from_url(url: &str, year: i32) -> (Option<ChannelIdentifier>, Option<ShortPathAttribution>) {
    let Some(id) = parse_channel_url(url) else {
        return (None, None);
    };
    if id.family != Family::VanityUsername {
        return (Some(id), None);
    }
    let attribution = attribute_short_path(year);
    let id = match attribution {
        ShortPathAttribution::Custom => ChannelIdentifier::new(Family::CustomName, &id.value).ok(),
        ShortPathAttribution::Vanity | ShortPathAttribution::Ambiguous => Some(id),
    };
    (id, Some(attribution))
}

impl LinkInput {
    pub fn from_snapshot(r: &SnapshotRef) -> Self {
        LinkInput {
            url: r.original_url.clone(),
            timestamp: r.timestamp.clone(),
            claimed: claim_from_url(&r.original_url, r.timestamp.year()).0,
            embedded: Vec::new(),
            subs: None,
        }
    }

    pub fn from_row(row: &ExtractionRow) -> Self {
        let mut embedded = Vec::new();
        let mut add = |family, v: &Option<String>| {
            if let Some(id) = v.as_deref().and_then(|v| ChannelIdentifier::new(family, v).ok()) {
                embedded.push(id);
            }
        };
        add(Family::ChannelId, &row.channel_id);
        add(Family::Username, &row.username);
        add(Family::Handle, &row.handle);
        LinkInput {
            url: row.url.clone(),
            timestamp: row.timestamp.clone(),
            claimed: claim_from_url(&row.url, row.timestamp.year()).0,
            embedded,
            subs: Some((row.subs, row.subs_exact)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IdentifierSpan {
    /// Namespace-qualified identifier, e.g. `user:smosh`.
    pub node: String,
    pub first_seen: Timestamp,
    pub last_seen: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChannelEntity {
    /// The channel ID when known, else the best name node (`user:` before
    /// `custom:` before `handle:`, then lexicographic).
    pub key: String,
    pub channel_id: Option<String>,
    pub identifiers: Vec<IdentifierSpan>,
    pub capture_count: u64,
    pub first_capture: Option<Timestamp>,
    pub last_capture: Option<Timestamp>,
}

impl ChannelEntity {
    pub fn identifier_nodes(&self) -> Vec<&str> {
        self.identifiers.iter().map(|s| s.node.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LinkConflict {
    pub identifier: String,
    /// Claiming entity keys with the first evidence timestamp of each.
    pub claimed_keys: Vec<(String, Timestamp)>,
}

/// A capture assigned to an entity; feeds the time-series store.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    pub key: String,
    pub timestamp: Timestamp,
    pub url: String,
    pub subs: Option<u64>,
    pub subs_exact: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LinkStats {
    pub input_captures: u64,
    pub duplicate_captures: u64,
    /// Captures with no identifier at all.
    pub unattributed: u64,
    pub short_path_vanity: u64,
    pub short_path_custom: u64,
    pub short_path_ambiguous: u64,
    /// Joins refused because both sides already held different channel IDs.
    pub rejected_edges: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Linkage {
    pub entities: Vec<ChannelEntity>,
    pub conflicts: Vec<LinkConflict>,
    pub attributions: Vec<Attribution>,
    pub stats: LinkStats,
}

impl Linkage {
    pub fn lower_bound_channels(&self) -> usize {
        lower_bound_channels(&self.entities)
    }
}

/// Entities holding a channel ID; a lower bound on distinct channels.
pub fn lower_bound_channels(entities: &[ChannelEntity]) -> usize {
    entities.iter().filter(|e| e.channel_id.is_some()).count()
}

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
    /// Channel ID node held by each root.
    id: Vec<Option<u32>>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            id: vec![None; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    /// Returns false when the two sets hold different channel IDs.
    fn union(&mut self, a: u32, b: u32) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return true;
        }
        let (ia, ib) = (self.id[ra as usize], self.id[rb as usize]);
        if let (Some(x), Some(y)) = (ia, ib) {
            if x != y {
                return false;
            }
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        self.id[big as usize] = ia.or(ib);
        true
    }
}

#[derive(Default)]
struct Interner {
    ids: HashMap<String, u32>,
    names: Vec<String>,
}

impl Interner {
    fn get(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.ids.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.ids.insert(name.to_string(), i);
        self.names.push(name.to_string());
        i
    }
}

const SPLIT_MARK: char = '@';

fn is_id_node(name: &str) -> bool {
    name.starts_with("channel:")
}

fn base_node(name: &str) -> &str {
    // Sub-nodes look like `user:abc@channel:UC...`; handles never contain '@'.
    match name.find(SPLIT_MARK) {
        Some(p) if name[p + 1..].starts_with("channel:") => &name[..p],
        _ => name,
    }
}

fn namespace_rank(node: &str) -> u8 {
    match node.split(':').next() {
        Some("user") => 0,
        Some("custom") => 1,
        Some("handle") => 2,
        _ => 3,
    }
}

struct Capture {
    url: String,
    timestamp: Timestamp,
    secs: i64,
    claimed: Option<u32>,
    ids: Vec<u32>,
    others: Vec<u32>,
    subs: Option<(u64, bool)>,
}

/// Links captures into entities. Output is independent of input order.
pub fn link(inputs: &[LinkInput]) -> Linkage {
    let mut stats = LinkStats {
        input_captures: inputs.len() as u64,
        ..Default::default()
    };

    // Canonical order, then drop repeated (url, timestamp) pairs.
    let mut order: Vec<(String, &LinkInput)> = inputs.iter().map(|i| (normalize_url(&i.url), i)).collect();
    order.sort_unstable_by(|(ua, a), (ub, b)| {
        (ua, &a.timestamp, &a.claimed, &a.embedded, &a.subs, &a.url).cmp(&(
            ub,
            &b.timestamp,
            &b.claimed,
            &b.embedded,
            &b.subs,
            &b.url,
        ))
    });
    order.dedup_by(|(ub, b), (ua, a)| {
        let dup = ua == ub && a.timestamp == b.timestamp;
        if dup {
            stats.duplicate_captures += 1;
        }
        dup
    });

    let mut names = Interner::default();
    let mut captures = Vec::with_capacity(order.len());
    for (_, input) in &order {
        // A bare short path is claimed as vanity or custom name; only those
        // (or no claim at all) need the URL looked at again.
        let short_path = match input.claimed.as_ref().map(|c| c.family) {
            Some(Family::VanityUsername) => true,
            None | Some(Family::CustomName) => {
                parse_channel_url(&input.url).is_some_and(|c| c.family == Family::VanityUsername)
            }
            Some(_) => false,
        };
        if short_path {
            match attribute_short_path(input.timestamp.year()) {
                ShortPathAttribution::Vanity => stats.short_path_vanity += 1,
                ShortPathAttribution::Custom => stats.short_path_custom += 1,
                ShortPathAttribution::Ambiguous => stats.short_path_ambiguous += 1,
            }
        }
        let claimed = input.claimed.as_ref().map(|c| names.get(&c.node_key()));
        let mut ids = BTreeSet::new();
        let mut others = BTreeSet::new();
        for id in input.claimed.iter().chain(&input.embedded) {
            let n = names.get(&id.node_key());
            if id.family == Family::ChannelId {
                ids.insert(n);
            } else {
                others.insert(n);
            }
        }
        captures.push(Capture {
            url: input.url.clone(),
            timestamp: input.timestamp.clone(),
            secs: input.timestamp.epoch_seconds(),
            claimed,
            ids: ids.into_iter().collect(),
            others: others.into_iter().collect(),
            subs: input.subs,
        });
    }

    // Evidence of each name node for each channel ID it appears with.
    let mut evidence: HashMap<u32, HashMap<u32, Vec<i64>>> = HashMap::new();
    for c in &captures {
        for &o in &c.others {
            for &i in &c.ids {
                evidence.entry(o).or_default().entry(i).or_default().push(c.secs);
            }
        }
    }
    let mut conflicts = Vec::new();
    let mut conflicted: HashMap<u32, Vec<(String, Vec<i64>)>> = HashMap::new();
    for (&node, claims) in &evidence {
        if claims.len() < 2 {
            continue;
        }
        let mut claims: Vec<(String, Vec<i64>)> = claims
            .iter()
            .map(|(&k, v)| {
                let mut v = v.clone();
                v.sort_unstable();
                (names.names[k as usize].clone(), v)
            })
            .collect();
        claims.sort();
        conflicts.push(LinkConflict {
            identifier: names.names[node as usize].clone(),
            claimed_keys: claims
                .iter()
                .map(|(k, v)| {
                    let key = k.trim_start_matches("channel:").to_string();
                    (key, Timestamp::from_epoch_seconds(v[0]).expect("evidence timestamp"))
                })
                .collect(),
        });
        conflicted.insert(node, claims);
    }

    // Replace conflicted name nodes by per-claim sub-nodes.
    let nearest_claim = |claims: &[(String, Vec<i64>)], secs: i64| -> String {
        claims
            .iter()
            .map(|(k, ev)| {
                let p = ev.partition_point(|&e| e < secs);
                let d = [p.checked_sub(1), Some(p)]
                    .into_iter()
                    .flatten()
                    .filter_map(|i| ev.get(i))
                    .map(|e| (e - secs).abs())
                    .min()
                    .unwrap_or(i64::MAX);
                (d, k)
            })
            .min()
            .map(|(_, k)| k.clone())
            .expect("conflicts have claims")
    };
    if !conflicted.is_empty() {
        for c in &mut captures {
            let rename = |n: u32, names: &mut Interner, c_ids: &[u32], secs: i64| -> u32 {
                let Some(claims) = conflicted.get(&n) else { return n };
                let claim = c_ids
                    .iter()
                    .map(|&i| names.names[i as usize].clone())
                    .find(|k| claims.iter().any(|(ck, _)| ck == k))
                    .unwrap_or_else(|| nearest_claim(claims, secs));
                let sub = format!("{}{SPLIT_MARK}{claim}", names.names[n as usize]);
                names.get(&sub)
            };
            let ids = c.ids.clone();
            c.claimed = c.claimed.map(|n| rename(n, &mut names, &ids, c.secs));
            c.others = c.others.iter().map(|&n| rename(n, &mut names, &ids, c.secs)).collect();
        }
    }
    conflicts.sort_by(|a, b| a.identifier.cmp(&b.identifier));

    // Star edges from each capture's anchor, in canonical name order.
    let mut edges: HashMap<(u32, u32), i64> = HashMap::new();
    let mut anchors = Vec::with_capacity(captures.len());
    for c in &captures {
        let anchor = c
            .claimed
            .or_else(|| c.ids.first().copied())
            .or_else(|| c.others.first().copied());
        anchors.push(anchor);
        let Some(a) = anchor else {
            stats.unattributed += 1;
            continue;
        };
        for &n in c.ids.iter().chain(&c.others) {
            if n == a {
                continue;
            }
            let (x, y) = if names.names[a as usize] <= names.names[n as usize] {
                (a, n)
            } else {
                (n, a)
            };
            let e = edges.entry((x, y)).or_insert(c.secs);
            *e = (*e).min(c.secs);
        }
    }
    let mut edges: Vec<(u32, u32, i64)> = edges.into_iter().map(|((x, y), t)| (x, y, t)).collect();
    edges.sort_unstable_by(|a, b| {
        let key = |e: &(u32, u32, i64)| (names.names[e.0 as usize].as_str(), names.names[e.1 as usize].as_str());
        key(a).cmp(&key(b))
    });

    let n = names.names.len();
    let mut dsu = DisjointSet::new(n);
    for (i, name) in names.names.iter().enumerate() {
        if is_id_node(name) {
            dsu.id[i] = Some(i as u32);
        }
    }
    let mut rejected: BTreeMap<String, BTreeMap<String, i64>> = BTreeMap::new();
    for &(x, y, secs) in &edges {
        let (rx, ry) = (dsu.find(x), dsu.find(y));
        let (ix, iy) = (dsu.id[rx as usize], dsu.id[ry as usize]);
        if !dsu.union(x, y) {
            stats.rejected_edges += 1;
            let ident = if is_id_node(&names.names[x as usize]) { y } else { x };
            let entry = rejected
                .entry(base_node(&names.names[ident as usize]).to_string())
                .or_default();
            for id in [ix, iy].into_iter().flatten() {
                let k = names.names[id as usize].trim_start_matches("channel:").to_string();
                let t = entry.entry(k).or_insert(secs);
                *t = (*t).min(secs);
            }
        }
    }
    for (identifier, claims) in rejected {
        if conflicts.iter().any(|c| c.identifier == identifier) {
            continue;
        }
        conflicts.push(LinkConflict {
            identifier,
            claimed_keys: claims
                .into_iter()
                .map(|(k, s)| (k, Timestamp::from_epoch_seconds(s).expect("edge timestamp")))
                .collect(),
        });
    }
    conflicts.sort_by(|a, b| a.identifier.cmp(&b.identifier));

    // Group nodes into components.
    let roots: Vec<u32> = (0..n as u32).map(|i| dsu.find(i)).collect();
    // Nodes replaced by split sub-nodes no longer occur in any capture.
    let mut live = vec![false; n];
    for c in &captures {
        for &node in c.claimed.iter().chain(&c.ids).chain(&c.others) {
            live[node as usize] = true;
        }
    }
    let mut members: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (i, &r) in roots.iter().enumerate() {
        if live[i] {
            members.entry(r).or_default().push(i as u32);
        }
    }
    let mut key_of_root: HashMap<u32, String> = HashMap::new();
    let mut entities: BTreeMap<String, ChannelEntity> = BTreeMap::new();
    let mut used: HashMap<String, usize> = HashMap::new();
    let mut by_key: Vec<(String, u32)> = Vec::new();
    for (&root, nodes) in &members {
        let key = match dsu.id[root as usize] {
            Some(i) => names.names[i as usize]["channel:".len()..].to_string(),
            None => nodes
                .iter()
                .map(|&i| base_node(&names.names[i as usize]))
                .min_by(|a, b| (namespace_rank(a), *a).cmp(&(namespace_rank(b), *b)))
                .expect("component is non-empty")
                .to_string(),
        };
        by_key.push((key, root));
    }
    // A name can head two components only when a split sub-node was cut off
    // from its ID; suffix repeats so keys stay unique.
    by_key.sort();
    for (key, root) in by_key {
        let count = used.entry(key.clone()).or_insert(0);
        let unique = if *count == 0 {
            key.clone()
        } else {
            format!("{key}~{count}")
        };
        *count += 1;
        key_of_root.insert(root, unique.clone());
        let channel_id = dsu.id[root as usize].map(|i| names.names[i as usize]["channel:".len()..].to_string());
        entities.insert(
            unique.clone(),
            ChannelEntity {
                key: unique,
                channel_id,
                identifiers: Vec::new(),
                capture_count: 0,
                first_capture: None,
                last_capture: None,
            },
        );
    }

    // Span of each (entity root, base name), as capture indices.
    let mut base_of: Vec<u32> = Vec::with_capacity(n);
    for i in 0..n {
        let base = base_node(&names.names[i]).to_string();
        base_of.push(names.get(&base));
    }
    let mut spans: HashMap<(u32, u32), (usize, usize)> = HashMap::new();
    let mut attributions = Vec::with_capacity(captures.len());
    for (ci, (c, anchor)) in captures.iter().zip(&anchors).enumerate() {
        let Some(a) = anchor else { continue };
        let key = &key_of_root[&roots[*a as usize]];
        let e = entities.get_mut(key).expect("entity exists");
        e.capture_count += 1;
        if e.first_capture.as_ref().is_none_or(|t| c.timestamp < *t) {
            e.first_capture = Some(c.timestamp.clone());
        }
        if e.last_capture.as_ref().is_none_or(|t| c.timestamp > *t) {
            e.last_capture = Some(c.timestamp.clone());
        }
        for &node in c.claimed.iter().chain(&c.ids).chain(&c.others) {
            let span = spans
                .entry((roots[node as usize], base_of[node as usize]))
                .or_insert((ci, ci));
            if c.timestamp < captures[span.0].timestamp {
                span.0 = ci;
            }
            if c.timestamp > captures[span.1].timestamp {
                span.1 = ci;
            }
        }
        attributions.push(Attribution {
            key: key.clone(),
            timestamp: c.timestamp.clone(),
            url: c.url.clone(),
            subs: c.subs.map(|s| s.0),
            subs_exact: c.subs.map(|s| s.1),
        });
    }
    for ((root, base), (first, last)) in spans {
        if let Some(e) = entities.get_mut(&key_of_root[&root]) {
            e.identifiers.push(IdentifierSpan {
                node: names.names[base as usize].clone(),
                first_seen: captures[first].timestamp.clone(),
                last_seen: captures[last].timestamp.clone(),
            });
        }
    }
    for e in entities.values_mut() {
        e.identifiers.sort_by(|a, b| a.node.cmp(&b.node));
    }
    attributions.sort_unstable_by(|a, b| (&a.key, &a.timestamp, &a.url).cmp(&(&b.key, &b.timestamp, &b.url)));

    Linkage {
        entities: entities.into_values().collect(),
        conflicts,
        attributions,
        stats,
    }
}

/// Census CSV: `key,identifiers,first_capture,last_capture,capture_count`.
pub fn write_census_csv<W: Write>(out: W, entities: &[ChannelEntity]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["key", "identifiers", "first_capture", "last_capture", "capture_count"])?;
    for e in entities {
        w.write_record([
            e.key.as_str(),
            &e.identifier_nodes().join(";"),
            e.first_capture.as_ref().map_or("", Timestamp::as_str),
            e.last_capture.as_ref().map_or("", Timestamp::as_str),
            &e.capture_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Conflicts CSV, one row per claim: `identifier,claimed_key,first_evidence`.
pub fn write_conflicts_csv<W: Write>(out: W, conflicts: &[LinkConflict]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["identifier", "claimed_key", "first_evidence"])?;
    for c in conflicts {
        for (key, ts) in &c.claimed_keys {
            w.write_record([c.identifier.as_str(), key, ts.as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}
