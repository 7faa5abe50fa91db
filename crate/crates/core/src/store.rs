//! On-disk census and subscriber time series.
//!
//! Layout of a store directory:
//!
//! ```text
//! census.csv              key,identifiers,first_capture,last_capture,capture_count
//! conflicts.csv           identifier,claimed_key,first_evidence
//! keys.idx                key<TAB>shard, sorted by key
//! series/shard-XX.csv     key,timestamp,subs,subs_exact,source_url (16 shards)
//! quarantine.csv          ingested rows whose key is not in the census
//! tombstones.txt          keys removed on request; ignored at load
//! ```
//!
//! Every file is rewritten whole and renamed into place, so readers only
//! ever see complete files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil;
use crate::identifiers::{parse_channel_url, ChannelIdentifier, Family, Namespace};
use crate::linker::{self, ChannelEntity, LinkConflict};
use crate::timestamp::{Timestamp, TimestampError};

pub const SHARDS: u64 = 16;
pub const CENSUS_FILE: &str = "census.csv";
pub const CONFLICTS_FILE: &str = "conflicts.csv";
pub const KEYS_FILE: &str = "keys.idx";
pub const QUARANTINE_FILE: &str = "quarantine.csv";
pub const TOMBSTONES_FILE: &str = "tombstones.txt";
const SERIES_HEADER: [&str; 5] = ["key", "timestamp", "subs", "subs_exact", "source_url"];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("{file}: {reason}")]
    Format { file: String, reason: String },
    #[error("unknown channel {0:?}")]
    NotFound(String),
    #[error("channel {0} has no subscriber data")]
    NoData(String),
    #[error("unknown family {given:?}; valid families: {valid}")]
    UnknownFamily { given: String, valid: String },
    #[error("bad timestamp: {0}")]
    Timestamp(#[from] TimestampError),
    #[error("sample size must be at least 1")]
    EmptySample,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusRow {
    pub key: String,
    pub identifiers: Vec<String>,
    pub first_capture: Option<Timestamp>,
    pub last_capture: Option<Timestamp>,
    pub capture_count: u64,
}

impl From<&ChannelEntity> for CensusRow {
    fn from(e: &ChannelEntity) -> Self {
        CensusRow {
            key: e.key.clone(),
            identifiers: e.identifier_nodes().into_iter().map(str::to_string).collect(),
            first_capture: e.first_capture.clone(),
            last_capture: e.last_capture.clone(),
            capture_count: e.capture_count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub timestamp: Timestamp,
    pub subs: u64,
    pub exact: bool,
    pub source_url: String,
}

/// Points strictly increasing in timestamp.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TimeSeries {
    pub points: Vec<SeriesPoint>,
}

impl TimeSeries {
    /// Inserts keeping order. On a timestamp collision the exact point wins;
    /// between two of equal exactness the one already present stays.
    /// Returns true when the series changed.
    pub fn insert(&mut self, p: SeriesPoint) -> bool {
        match self.points.binary_search_by(|q| q.timestamp.cmp(&p.timestamp)) {
            Ok(i) => {
                if p.exact && !self.points[i].exact {
                    self.points[i] = p;
                    true
                } else {
                    false
                }
            }
            Err(i) => {
                self.points.insert(i, p);
                true
            }
        }
    }
}

/// One row to ingest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestRow {
    pub key: String,
    pub timestamp: Timestamp,
    pub subs: u64,
    pub subs_exact: bool,
    pub source_url: String,
}

impl IngestRow {
    fn point(&self) -> SeriesPoint {
        SeriesPoint {
            timestamp: self.timestamp.clone(),
            subs: self.subs,
            exact: self.subs_exact,
            source_url: self.source_url.clone(),
        }
    }
}

impl TryFrom<&linker::Attribution> for IngestRow {
    type Error = ();
    fn try_from(a: &linker::Attribution) -> Result<Self, ()> {
        Ok(IngestRow {
            key: a.key.clone(),
            timestamp: a.timestamp.clone(),
            subs: a.subs.ok_or(())?,
            subs_exact: a.subs_exact.unwrap_or(false),
            source_url: a.url.clone(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub rows: u64,
    pub added: u64,
    /// Rows that were already present or lost a timestamp collision.
    pub unchanged: u64,
    pub quarantined: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QueryResult {
    pub key: String,
    pub requested: String,
    pub matched: Timestamp,
    pub subs: u64,
    pub exact: bool,
    pub distance_seconds: i64,
    pub source_url: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SampleRow {
    pub key: String,
    /// Site-relative URL of the identifier the sample was drawn by.
    pub url: String,
    pub identifiers: Vec<String>,
    pub capture_count: u64,
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x100000001b3)
    })
}

pub fn shard_of(key: &str) -> u64 {
    fnv1a(key.as_bytes()) % SHARDS
}

fn shard_file(shard: u64) -> String {
    format!("series/shard-{shard:02x}.csv")
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    census: BTreeMap<String, CensusRow>,
    series: BTreeMap<String, TimeSeries>,
    tombstones: BTreeSet<String>,
    quarantine: BTreeSet<(String, String, u64, bool, String, String)>,
    /// Identifier node to census keys holding it.
    by_node: HashMap<String, Vec<String>>,
}

fn bad(file: &str, reason: impl ToString) -> StoreError {
    StoreError::Format {
        file: file.to_string(),
        reason: reason.to_string(),
    }
}

fn opt_ts(s: &str, file: &str) -> Result<Option<Timestamp>, StoreError> {
    if s.is_empty() {
        Ok(None)
    } else {
        Timestamp::parse(s).map(Some).map_err(|e| bad(file, e))
    }
}

impl Store {
    /// Creates (or replaces) a store from linked entities.
    pub fn create(
        root: impl Into<PathBuf>,
        entities: &[ChannelEntity],
        conflicts: &[LinkConflict],
    ) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("series"))?;
        let mut conflicts_csv = Vec::new();
        linker::write_conflicts_csv(&mut conflicts_csv, conflicts)?;
        fsutil::write_atomic(&root.join(CONFLICTS_FILE), &conflicts_csv)?;
        let mut store = Store {
            root,
            census: entities.iter().map(|e| (e.key.clone(), CensusRow::from(e))).collect(),
            series: BTreeMap::new(),
            tombstones: BTreeSet::new(),
            quarantine: BTreeSet::new(),
            by_node: HashMap::new(),
        };
        store.reindex();
        store.save()?;
        Ok(store)
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let tombstones: BTreeSet<String> = match fs::read_to_string(root.join(TOMBSTONES_FILE)) {
            Ok(text) => text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeSet::new(),
            Err(e) => return Err(e.into()),
        };

        let mut census = BTreeMap::new();
        let mut rdr = csv::Reader::from_path(root.join(CENSUS_FILE))?;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(bad(CENSUS_FILE, format!("expected 5 fields, got {}", rec.len())));
            }
            let row = CensusRow {
                key: rec[0].to_string(),
                identifiers: rec[1]
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
                first_capture: opt_ts(&rec[2], CENSUS_FILE)?,
                last_capture: opt_ts(&rec[3], CENSUS_FILE)?,
                capture_count: rec[4].parse().map_err(|e| bad(CENSUS_FILE, e))?,
            };
            if !tombstones.contains(&row.key) {
                census.insert(row.key.clone(), row);
            }
        }

        let mut series: BTreeMap<String, TimeSeries> = BTreeMap::new();
        for shard in 0..SHARDS {
            let path = root.join(shard_file(shard));
            if !path.exists() {
                continue;
            }
            for row in read_series_csv(fs::File::open(&path)?)? {
                if tombstones.contains(&row.key) {
                    continue;
                }
                series.entry(row.key.clone()).or_default().insert(row.point());
            }
        }

        let mut quarantine = BTreeSet::new();
        let qpath = root.join(QUARANTINE_FILE);
        if qpath.exists() {
            let mut rdr = csv::Reader::from_path(&qpath)?;
            for rec in rdr.records() {
                let rec = rec?;
                if rec.len() != 6 {
                    return Err(bad(QUARANTINE_FILE, "expected 6 fields"));
                }
                quarantine.insert((
                    rec[0].to_string(),
                    rec[1].to_string(),
                    rec[2].parse().map_err(|e| bad(QUARANTINE_FILE, e))?,
                    rec[3] == *"true",
                    rec[4].to_string(),
                    rec[5].to_string(),
                ));
            }
        }

        let mut store = Store {
            root,
            census,
            series,
            tombstones,
            quarantine,
            by_node: HashMap::new(),
        };
        store.reindex();
        Ok(store)
    }

    fn reindex(&mut self) {
        self.by_node.clear();
        for row in self.census.values() {
            for node in &row.identifiers {
                self.by_node.entry(node.clone()).or_default().push(row.key.clone());
            }
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn census(&self) -> impl Iterator<Item = &CensusRow> {
        self.census.values()
    }

    pub fn census_len(&self) -> usize {
        self.census.len()
    }

    pub fn series(&self, key: &str) -> Option<&TimeSeries> {
        self.series.get(key)
    }

    pub fn keys_with_series(&self) -> impl Iterator<Item = &String> {
        self.series.keys()
    }

    pub fn quarantined(&self) -> usize {
        self.quarantine.len()
    }

    /// Adds a key to the tombstone list and drops its data.
    pub fn tombstone(&mut self, key: &str) -> Result<(), StoreError> {
        self.tombstones.insert(key.to_string());
        self.census.remove(key);
        self.series.remove(key);
        self.reindex();
        let mut text = String::new();
        for k in &self.tombstones {
            text.push_str(k);
            text.push('\n');
        }
        fsutil::write_atomic(&self.root.join(TOMBSTONES_FILE), text.as_bytes())?;
        self.save()
    }

    /// Merges rows into the series; rows for keys missing from the census
    /// are quarantined. Call [`Store::save`] to persist.
    pub fn ingest<'a>(&mut self, rows: impl IntoIterator<Item = &'a IngestRow>) -> IngestReport {
        let mut report = IngestReport::default();
        for row in rows {
            report.rows += 1;
            if !self.census.contains_key(&row.key) {
                let reason = if self.tombstones.contains(&row.key) {
                    "tombstoned"
                } else {
                    "unknown key"
                };
                self.quarantine.insert((
                    row.key.clone(),
                    row.timestamp.as_str().to_string(),
                    row.subs,
                    row.subs_exact,
                    row.source_url.clone(),
                    reason.to_string(),
                ));
                report.quarantined += 1;
                continue;
            }
            if self.series.entry(row.key.clone()).or_default().insert(row.point()) {
                report.added += 1;
            } else {
                report.unchanged += 1;
            }
        }
        report
    }

    /// Rewrites every store file from memory.
    pub fn save(&self) -> Result<(), StoreError> {
        fs::create_dir_all(self.root.join("series"))?;
        let mut census = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut census);
            w.write_record(["key", "identifiers", "first_capture", "last_capture", "capture_count"])?;
            for r in self.census.values() {
                w.write_record([
                    r.key.as_str(),
                    &r.identifiers.join(";"),
                    r.first_capture.as_ref().map_or("", Timestamp::as_str),
                    r.last_capture.as_ref().map_or("", Timestamp::as_str),
                    &r.capture_count.to_string(),
                ])?;
            }
            w.flush()?;
        }
        fsutil::write_atomic(&self.root.join(CENSUS_FILE), &census)?;

        let mut shards: Vec<csv::Writer<Vec<u8>>> = (0..SHARDS)
            .map(|_| {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(SERIES_HEADER).map(|_| w)
            })
            .collect::<Result<_, _>>()?;
        let mut index = String::new();
        for key in self.census.keys() {
            index.push_str(&format!("{key}\t{:02x}\n", shard_of(key)));
        }
        for (key, s) in &self.series {
            let w = &mut shards[shard_of(key) as usize];
            for p in &s.points {
                w.write_record([
                    key.as_str(),
                    p.timestamp.as_str(),
                    &p.subs.to_string(),
                    if p.exact { "true" } else { "false" },
                    &p.source_url,
                ])?;
            }
        }
        for (i, w) in shards.into_iter().enumerate() {
            let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
            fsutil::write_atomic(&self.root.join(shard_file(i as u64)), &bytes)?;
        }
        fsutil::write_atomic(&self.root.join(KEYS_FILE), index.as_bytes())?;

        if !self.quarantine.is_empty() {
            let mut q = csv::Writer::from_writer(Vec::new());
            q.write_record(["key", "timestamp", "subs", "subs_exact", "source_url", "reason"])?;
            for (k, t, s, e, u, r) in &self.quarantine {
                q.write_record([k.as_str(), t, &s.to_string(), if *e { "true" } else { "false" }, u, r])?;
            }
            let bytes = q.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
            fsutil::write_atomic(&self.root.join(QUARANTINE_FILE), &bytes)?;
        }
        Ok(())
    }

    /// All series points as ingestable rows, sorted by key then timestamp.
    pub fn export(&self) -> Vec<IngestRow> {
        self.series
            .iter()
            .flat_map(|(key, s)| {
                s.points.iter().map(move |p| IngestRow {
                    key: key.clone(),
                    timestamp: p.timestamp.clone(),
                    subs: p.subs,
                    subs_exact: p.exact,
                    source_url: p.source_url.clone(),
                })
            })
            .collect()
    }

    /// Census keys a channel reference resolves to: a census key, an
    /// identifier node (`user:smosh`) or a channel URL.
    pub fn resolve(&self, query: &str) -> Vec<String> {
        let q = query.trim();
        if self.census.contains_key(q) {
            return vec![q.to_string()];
        }
        let node = if let Some(id) = parse_channel_url(q) {
            Some(id.node_key())
        } else if let Ok(id) = q.parse::<ChannelIdentifier>() {
            Some(id.node_key())
        } else {
            let (ns, value) = q.split_once(':').unwrap_or(("", q));
            let family = match ns {
                "user" => Some(Family::Username),
                "custom" => Some(Family::CustomName),
                "handle" => Some(Family::Handle),
                "channel" => Some(Family::ChannelId),
                _ => None,
            };
            family
                .and_then(|f| ChannelIdentifier::new(f, value).ok())
                .map(|id| id.node_key())
        };
        let mut keys = node.and_then(|n| self.by_node.get(&n).cloned()).unwrap_or_default();
        keys.sort();
        keys.dedup();
        keys
    }

    /// The stored point nearest to the start of the `closest` interval
    /// (`"201301"` means 2013-01-01 00:00:00). Ties go to the earlier point;
    /// across several matching entities, to the smaller key.
    pub fn fetch_closest(&self, query: &str, closest: &str) -> Result<QueryResult, StoreError> {
        let target = Timestamp::from_prefix(closest)?;
        let t = target.epoch_seconds();
        let keys = self.resolve(query);
        if keys.is_empty() {
            return Err(StoreError::NotFound(query.to_string()));
        }
        let mut best: Option<(i64, i64, &String, &SeriesPoint)> = None;
        for key in &keys {
            let Some(s) = self.series.get(key) else { continue };
            for p in &s.points {
                let secs = p.timestamp.epoch_seconds();
                let cand = ((secs - t).abs(), secs, key, p);
                if best.as_ref().is_none_or(|b| (cand.0, cand.1, cand.2) < (b.0, b.1, b.2)) {
                    best = Some(cand);
                }
            }
        }
        let (distance, _, key, p) = best.ok_or_else(|| StoreError::NoData(keys.join(",")))?;
        Ok(QueryResult {
            key: key.clone(),
            requested: closest.to_string(),
            matched: p.timestamp.clone(),
            subs: p.subs,
            exact: p.exact,
            distance_seconds: distance,
            source_url: p.source_url.clone(),
        })
    }

    /// Uniform sample without replacement of census rows holding an
    /// identifier of the `by` family (all rows when `by` is `None`).
    pub fn sample(&self, n: usize, by: Option<&str>, seed: u64) -> Result<Vec<SampleRow>, StoreError> {
        if n == 0 {
            return Err(StoreError::EmptySample);
        }
        let family = by
            .map(|b| {
                b.parse::<Family>().map_err(|_| StoreError::UnknownFamily {
                    given: b.to_string(),
                    valid: Family::PRIORITY.iter().map(|f| f.name()).collect::<Vec<_>>().join(", "),
                })
            })
            .transpose()?;
        let pool: Vec<(&CensusRow, String)> = self
            .census
            .values()
            .filter_map(|row| {
                let url = match family {
                    None => row_url(row, None),
                    Some(f) => row_url(row, Some(f.namespace())),
                }?;
                Some((row, url))
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = index::sample(&mut rng, pool.len(), n.min(pool.len()));
        Ok(picks
            .into_iter()
            .map(|i| {
                let (row, url) = &pool[i];
                SampleRow {
                    key: row.key.clone(),
                    url: url.clone(),
                    identifiers: row.identifiers.clone(),
                    capture_count: row.capture_count,
                }
            })
            .collect())
    }
}

fn node_url(node: &str) -> Option<String> {
    let (ns, value) = node.split_once(':')?;
    Some(match ns {
        "user" => format!("/user/{value}"),
        "custom" => format!("/c/{value}"),
        "handle" => format!("/@{value}"),
        "channel" => format!("/channel/{value}"),
        _ => return None,
    })
}

/// URL of the row's first identifier in `ns`, or of its key.
fn row_url(row: &CensusRow, ns: Option<Namespace>) -> Option<String> {
    match ns {
        Some(ns) => {
            let prefix = format!("{}:", ns.tag());
            row.identifiers
                .iter()
                .find(|n| n.starts_with(&prefix))
                .and_then(|n| node_url(n))
        }
        None => {
            if row.key.starts_with("UC") {
                Some(format!("/channel/{}", row.key))
            } else {
                node_url(&row.key).or_else(|| row.identifiers.first().and_then(|n| node_url(n)))
            }
        }
    }
}

pub fn read_series_csv<R: std::io::Read>(input: R) -> Result<Vec<IngestRow>, StoreError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(bad("series", format!("expected 5 fields, got {}", rec.len())));
        }
        out.push(IngestRow {
            key: rec[0].to_string(),
            timestamp: Timestamp::parse(&rec[1]).map_err(|e| bad("series", e))?,
            subs: rec[2].parse().map_err(|e| bad("series", e))?,
            subs_exact: match &rec[3] {
                "true" | "1" => true,
                "false" | "0" => false,
                other => return Err(bad("series", format!("bad subs_exact {other:?}"))),
            },
            source_url: rec[4].to_string(),
        });
    }
    Ok(out)
}

pub fn write_series_csv<W: Write>(out: W, rows: &[IngestRow]) -> Result<(), StoreError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SERIES_HEADER)?;
    for r in rows {
        w.write_record([
            r.key.as_str(),
            r.timestamp.as_str(),
            &r.subs.to_string(),
            if r.subs_exact { "true" } else { "false" },
            &r.source_url,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads attribution JSONL (as written by the linker) into ingest rows,
/// skipping captures without a subscriber count.
pub fn read_attributions_jsonl<R: BufRead>(input: R) -> Result<Vec<IngestRow>, StoreError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let a: linker::Attribution =
            serde_json::from_str(&line).map_err(|e| bad("attributions", format!("line {}: {e}", i + 1)))?;
        if let Ok(row) = IngestRow::try_from(&a) {
            out.push(row);
        }
    }
    Ok(out)
}

/// Capture counts in descending order with 1-based ranks.
pub fn rank_frequency(counts: impl IntoIterator<Item = u64>) -> Vec<(usize, u64)> {
    let mut v: Vec<u64> = counts.into_iter().collect();
    v.sort_unstable_by(|a, b| b.cmp(a));
    v.into_iter().enumerate().map(|(i, c)| (i + 1, c)).collect()
}
