#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use archive_census::cdx::{SnapshotRef, Status};
use archive_census::cohorts::CohortCapture;
use archive_census::linker::LinkInput;
use archive_census::{ChannelIdentifier, Family, Timestamp};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn acensus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acensus"))
        .args(args)
        .env_remove("AC_CDX_ENDPOINT")
        .env_remove("AC_CACHE_DIR")
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn acensus")
}

/// Runs a subcommand and returns stdout, panicking with stderr on failure.
pub fn run_ok(args: &[&str]) -> String {
    let out = acensus(args);
    assert!(
        out.status.success(),
        "acensus {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

pub struct PipelineRun {
    pub dir: PathBuf,
    pub store: PathBuf,
    /// JSON summary printed by `fetch`.
    pub fetch_summary: serde_json::Value,
}

/// enumerate, fetch from fixtures, extract, link and ingest the bundled
/// corpus into `dir`. The replay base points at a closed local port, so any
/// attempt to go to the network would surface as a fetch error.
pub fn run_pipeline(dir: &Path) -> PipelineRun {
    let corpus = fixtures().join("corpus");
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let index = corpus.join("index.cdx");
    run_ok(&[
        "enumerate",
        "--index",
        index.to_str().unwrap(),
        "--prefix",
        "youtube.com/user/",
        "--prefix",
        "youtube.com/profile?user=",
        "--prefix",
        "youtube.com/channel/",
        "--prefix",
        "youtube.com/c/",
        "--prefix",
        "youtube.com/@",
        "--from",
        "2005",
        "--to",
        "2023",
        "-o",
        &p("rows.csv"),
    ]);
    let out = acensus(&[
        "fetch",
        "--input",
        &p("rows.csv"),
        "--cache-dir",
        &p("cache"),
        "--fixtures",
        corpus.to_str().unwrap(),
        "--replay-base",
        "http://127.0.0.1:9",
        "--workers",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let summary_line = stderr
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("fetch summary");
    let fetch_summary: serde_json::Value = serde_json::from_str(summary_line).unwrap();
    run_ok(&["extract", "--cache-dir", &p("cache"), "-o", &p("extracted.jsonl")]);
    run_ok(&[
        "link",
        "--input",
        &p("extracted.jsonl"),
        "--rows",
        &p("rows.csv"),
        "--store",
        &p("store"),
    ]);
    run_ok(&["ingest", "--store", &p("store")]);
    PipelineRun {
        dir: dir.to_path_buf(),
        store: dir.join("store"),
        fetch_summary,
    }
}

pub fn ts(s: &str) -> Timestamp {
    Timestamp::parse(s).unwrap()
}

pub fn snap(url: &str, t: &str) -> SnapshotRef {
    SnapshotRef {
        original_url: url.to_string(),
        timestamp: ts(t),
        status: Status::Code(200),
        digest: "-".into(),
        mime: "text/html".into(),
    }
}

fn stamp(year: i32, month: u32, day: u32, salt: u32) -> Timestamp {
    ts(&format!(
        "{year:04}{month:02}{day:02}{:02}{:02}{:02}",
        salt % 24,
        (salt / 24) % 60,
        (salt / 1440) % 60
    ))
}

/// `n` distinct period slots (year, first month of the period) drawn from the
/// year range.
fn pick_periods<R: Rng>(rng: &mut R, years: (i32, i32), months_per_period: u32, n: usize) -> Vec<(i32, u32)> {
    let mut slots: Vec<(i32, u32)> = (years.0..=years.1)
        .flat_map(|y| (0..12 / months_per_period).map(move |p| (y, 1 + p * months_per_period)))
        .collect();
    slots.shuffle(rng);
    slots.truncate(n);
    slots
}

/// Adds captures for one channel: one or more per chosen period, all within
/// the period.
#[allow(clippy::too_many_arguments)]
fn add_channel<R: Rng>(
    rng: &mut R,
    out: &mut Vec<CohortCapture>,
    key: &str,
    family: Family,
    url: &str,
    periods: &[(i32, u32)],
    months_per_period: u32,
    per_period: std::ops::RangeInclusive<u32>,
) {
    for &(y, m0) in periods {
        for _ in 0..rng.random_range(per_period.clone()) {
            let salt = rng.random_range(0..86_400);
            out.push(CohortCapture {
                key: key.to_string(),
                family,
                timestamp: stamp(
                    y,
                    m0 + rng.random_range(0..months_per_period),
                    rng.random_range(1..=28),
                    salt,
                ),
                url: url.to_string(),
                subs: Some(rng.random_range(0..5_000_000)),
                subs_exact: Some(true),
            });
        }
    }
}

/// Quarterly 2006-2013 username captures for a first cohort at 1:1000 scale:
/// 100 channels in 10 quarters, 150 in 4, 600 in 2 and 198 in 1 make
/// 2,998 period captures over 1,048 channels. Lower-ranked single-quarter
/// channels, channel-ID captures and out-of-range years are mixed in and
/// must not be selected.
pub fn quarterly_cohort_fixture<R: Rng>(rng: &mut R) -> Vec<CohortCapture> {
    let mut out = Vec::new();
    let tiers: [(&str, usize, usize, std::ops::RangeInclusive<u32>); 5] = [
        ("a", 100, 10, 1..=3),
        ("b", 150, 4, 1..=2),
        ("c", 600, 2, 1..=2),
        ("d", 198, 1, 2..=3),
        ("z", 400, 1, 1..=1),
    ];
    for (tier, count, quarters, per) in tiers {
        for i in 0..count {
            let name = format!("{tier}{i:04}");
            let periods = pick_periods(rng, (2006, 2013), 3, quarters);
            let (family, url) = if rng.random_bool(0.2) {
                (
                    Family::LegacyUsername,
                    format!("http://www.youtube.com/profile?user={name}"),
                )
            } else {
                (Family::Username, format!("http://www.youtube.com/user/{name}"))
            };
            add_channel(
                rng,
                &mut out,
                &format!("user:{name}"),
                family,
                &url,
                &periods,
                3,
                per.clone(),
            );
        }
    }
    // channel-ID captures of otherwise unknown channels: excluded by family
    for i in 0..300 {
        let id = format!("UC{i:022}");
        let periods = pick_periods(rng, (2012, 2013), 3, 8);
        add_channel(
            rng,
            &mut out,
            &id,
            Family::ChannelId,
            &format!("https://www.youtube.com/channel/{id}"),
            &periods,
            3,
            1..=1,
        );
    }
    // out-of-range years: excluded
    for i in 0..50 {
        let name = format!("late{i:03}");
        let periods = pick_periods(rng, (2014, 2016), 3, 12);
        add_channel(
            rng,
            &mut out,
            &format!("user:{name}"),
            Family::Username,
            &format!("http://www.youtube.com/user/{name}"),
            &periods,
            3,
            1..=1,
        );
    }
    out.shuffle(rng);
    out
}

/// Monthly 2014-2016 captures for a second cohort at 1:1000 scale:
/// username tier 16 x 9 + 232 x 8 = 2,000 months over 248 channels, channel-ID
/// tier 52 x 5 + 185 x 4 = 1,000 months over 237 channels, 36 channels in both
/// (union 449).
pub fn monthly_cohort_fixture<R: Rng>(rng: &mut R) -> Vec<CohortCapture> {
    let mut out = Vec::new();
    let mut user_keys = Vec::new();
    for (count, months) in [(16, 9), (232, 8), (120, 3)] {
        for _ in 0..count {
            let i = user_keys.len();
            let key = format!("chan{i:04}");
            let periods = pick_periods(rng, (2014, 2016), 1, months);
            add_channel(
                rng,
                &mut out,
                &key,
                Family::Username,
                &format!("https://www.youtube.com/user/m{i:04}"),
                &periods,
                1,
                1..=2,
            );
            user_keys.push((key, months));
        }
    }
    // 36 of the top username channels also appear in the ID tier
    let shared: Vec<String> = user_keys[..248]
        .choose_multiple(rng, 36)
        .map(|(k, _)| k.clone())
        .collect();
    let mut id_keys: Vec<String> = shared.clone();
    id_keys.extend((0..(237 - 36) + 90).map(|i| format!("idonly{i:04}")));
    let tiers = [(52usize, 5usize), (185, 4), (90, 2)];
    let mut at = 0;
    for (count, months) in tiers {
        for key in &id_keys[at..at + count] {
            let id = format!("UC{:022}", at);
            let periods = pick_periods(rng, (2014, 2016), 1, months);
            add_channel(
                rng,
                &mut out,
                key,
                Family::ChannelId,
                &format!("https://www.youtube.com/channel/{id}"),
                &periods,
                1,
                1..=2,
            );
            at += 1;
        }
    }
    out.shuffle(rng);
    out
}

/// Brute-force ranking straight from timestamp strings: (key, distinct
/// periods, captures), ordered by periods, then captures, then key.
pub fn brute_force_ranking(captures: &[CohortCapture], monthly: bool) -> Vec<(String, usize, u64)> {
    let mut by: BTreeMap<&str, (BTreeSet<String>, u64)> = BTreeMap::new();
    for c in captures {
        let s = c.timestamp.as_str();
        let month: u32 = s[4..6].parse().unwrap();
        let label = if monthly {
            s[..6].to_string()
        } else {
            format!("{}-{}", &s[..4], (month - 1) / 3)
        };
        let e = by.entry(&c.key).or_default();
        e.0.insert(label);
        e.1 += 1;
    }
    let mut v: Vec<(String, usize, u64)> = by.into_iter().map(|(k, (p, n))| (k.to_string(), p.len(), n)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));
    v
}

/// A random identifier graph given as captures. Channels hold at most one
/// channel ID and cross-channel references are only added when they cannot
/// put two IDs in one component, so plain connected components are the
/// expected partition.
pub struct IdGraph {
    pub inputs: Vec<LinkInput>,
    /// Undirected edges between node names, as the oracle sees them.
    pub edges: Vec<(String, String)>,
    pub nodes: BTreeSet<String>,
}

fn node_name(id: &ChannelIdentifier) -> String {
    let tag = match id.family {
        Family::ChannelId => "channel",
        Family::CustomName => "custom",
        Family::Handle => "handle",
        _ => "user",
    };
    format!("{tag}:{}", id.value)
}

fn url_of(id: &ChannelIdentifier) -> String {
    match id.family {
        Family::ChannelId => format!("https://www.youtube.com/channel/{}", id.value),
        Family::CustomName => format!("https://www.youtube.com/c/{}", id.value),
        Family::Handle => format!("https://www.youtube.com/@{}", id.value),
        _ => format!("http://www.youtube.com/user/{}", id.value),
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

pub fn random_id_graph<R: Rng>(rng: &mut R, target_nodes: usize) -> IdGraph {
    let mut channels: Vec<Vec<ChannelIdentifier>> = Vec::new();
    let mut has_id: Vec<bool> = Vec::new();
    let mut counter = 0usize;
    let mut total = 0;
    while total < target_nodes {
        let mut ids = Vec::new();
        let mut next = |family: Family, ids: &mut Vec<ChannelIdentifier>| {
            counter += 1;
            let value = match family {
                Family::ChannelId => format!("UC{counter:022}"),
                Family::CustomName => format!("c{counter}"),
                Family::Handle => format!("h{counter:03}"),
                _ => format!("u{counter}"),
            };
            ids.push(ChannelIdentifier::new(family, &value).unwrap());
        };
        let with_id = rng.random_bool(0.6);
        if with_id {
            next(Family::ChannelId, &mut ids);
        }
        for _ in 0..rng.random_range(1..=3) {
            next(Family::Username, &mut ids);
        }
        for _ in 0..rng.random_range(0..=1) {
            next(Family::CustomName, &mut ids);
        }
        if rng.random_bool(0.3) {
            next(Family::Handle, &mut ids);
        }
        total += ids.len();
        channels.push(ids);
        has_id.push(with_id);
    }

    let mut parent: Vec<usize> = (0..channels.len()).collect();
    let mut group_has_id = has_id.clone();
    let mut inputs = Vec::new();
    let mut edges = Vec::new();
    let mut nodes = BTreeSet::new();
    let mut clock = 0i64;
    let base = ts("20060101000000").epoch_seconds();
    for c in 0..channels.len() {
        let n = channels[c].len();
        for _ in 0..(n * 3 / 2).max(1) {
            let claimed = channels[c].choose(rng).unwrap().clone();
            let k = rng.random_range(0..=2);
            let mut embedded: Vec<ChannelIdentifier> = channels[c].choose_multiple(rng, k).cloned().collect();
            if rng.random_bool(0.05) {
                let other = rng.random_range(0..channels.len());
                let (ra, rb) = (find(&mut parent, c), find(&mut parent, other));
                if ra != rb && !(group_has_id[ra] && group_has_id[rb]) {
                    parent[ra] = rb;
                    group_has_id[rb] |= group_has_id[ra];
                    embedded.push(channels[other].choose(rng).unwrap().clone());
                } else if ra == rb {
                    embedded.push(channels[other].choose(rng).unwrap().clone());
                }
            }
            clock += 61;
            let a = node_name(&claimed);
            nodes.insert(a.clone());
            for e in &embedded {
                let b = node_name(e);
                nodes.insert(b.clone());
                edges.push((a.clone(), b));
            }
            inputs.push(LinkInput {
                url: url_of(&claimed),
                timestamp: Timestamp::from_epoch_seconds(base + clock).unwrap(),
                claimed: Some(claimed),
                embedded,
                subs: None,
            });
        }
    }
    IdGraph { inputs, edges, nodes }
}

/// Connected components by breadth-first search.
pub fn bfs_components(nodes: &BTreeSet<String>, edges: &[(String, String)]) -> BTreeSet<BTreeSet<String>> {
    let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
    for (a, b) in edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut out = BTreeSet::new();
    for n in nodes {
        if seen.contains(n.as_str()) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut q = VecDeque::from([n.as_str()]);
        seen.insert(n);
        while let Some(x) = q.pop_front() {
            comp.insert(x.to_string());
            for &y in adj.get(x).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(y) {
                    q.push_back(y);
                }
            }
        }
        out.insert(comp);
    }
    out
}

pub fn entity_partition(entities: &[archive_census::linker::ChannelEntity]) -> BTreeSet<BTreeSet<String>> {
    entities
        .iter()
        .map(|e| e.identifier_nodes().into_iter().map(str::to_string).collect())
        .collect()
}

/// Pairwise form of the correlation coefficient:
/// `Σ_ij (x_i - x_j)(y_i - y_j) / sqrt(Σ_ij (x_i - x_j)² Σ_ij (y_i - y_j)²)`.
pub fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in 0..x.len() {
            let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    sxy / (sxx * syy).sqrt()
}

/// Rank of each value as 1 + (number smaller) + (ties - 1) / 2.
pub fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let less = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn naive_spearman(x: &[f64], y: &[f64]) -> f64 {
    naive_pearson(&naive_ranks(x), &naive_ranks(y))
}
