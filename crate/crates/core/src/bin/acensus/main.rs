use std::collections::{BTreeMap, HashMap, HashSet};
use std::error::Error;
use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use archive_census::cdx::{
    self, count_by_format_year_with, EnumerationCursor, EnumerationQuery, FileIndex, RemoteIndex, SnapshotRef,
};
use archive_census::cohorts::{build_cohort, CohortCapture, CohortSpec};
use archive_census::extract::{extract_batch, ExtractOptions, ExtractionRow};
use archive_census::fetcher::{BodySource, Cache, FetchPolicy, Fetcher, FixtureSet, Outcome, DEFAULT_REPLAY_BASE};
use archive_census::http::{Backoff, HostThrottle, UreqTransport};
use archive_census::linker::{claim_from_url, link, LinkInput};
use archive_census::par::Execution;
use archive_census::stats::{
    estimate_coverage, fit_many, stratified_sample, stratum_index, summarize_strata, topk_overlap, RankedEntry,
    SeMethod, StratumPlan, STRATA,
};
use archive_census::store::{self, read_attributions_jsonl, read_series_csv, Store};
use archive_census::Timestamp;

type Res<T = ()> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "acensus", version, about = "Channel census from web-archive captures")]
struct Cli {
    /// Run batch stages on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// List index rows under one or more URL prefixes.
    Enumerate(EnumerateArgs),
    /// Count enumerated rows per identifier family and year.
    CountFormats(CountArgs),
    /// Download archived pages into the local cache.
    Fetch(FetchArgs),
    /// Pull subscriber counts and identifiers out of cached pages.
    Extract(ExtractArgs),
    /// Merge identifiers into channel entities and create a store.
    Link(LinkArgs),
    /// Add subscriber observations to a store.
    Ingest(IngestArgs),
    /// Subscriber count of a channel nearest to a date.
    Query(QueryArgs),
    /// Uniform sample of census channels.
    Sample(SampleArgs),
    /// Channels ordered by capture count.
    RankFrequency(RankArgs),
    /// Build a budgeted per-period cohort.
    Cohort(CohortArgs),
    /// Per-stratum sample plan for the video coverage estimate.
    StratifiedSample(StratArgs),
    /// Weighted videos-per-channel estimate with a 95% interval.
    EstimateCoverage(CoverageArgs),
    /// Compare top-k subscriber lists against reference lists.
    Validate(ValidateArgs),
    /// Fit logistic growth curves to subscriber series.
    FitGrowth(GrowthArgs),
}

#[derive(Args)]
struct OutArg {
    /// Output file (stdout when omitted).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Host-qualified prefix, e.g. youtube.com/user/. Repeatable.
    #[arg(long, required = true)]
    prefix: Vec<String>,
    #[arg(long, default_value_t = 2005)]
    from: i32,
    #[arg(long, default_value_t = 2023)]
    to: i32,
    /// Local index file (plain CDX or JSON rows, optionally gzipped).
    #[arg(long, conflicts_with = "cdx_endpoint")]
    index: Option<PathBuf>,
    #[arg(long, env = "AC_CDX_ENDPOINT")]
    cdx_endpoint: Option<String>,
    /// Accepted HTTP statuses.
    #[arg(long, value_delimiter = ',', default_value = "200")]
    status: Vec<u16>,
    #[arg(long, default_value_t = cdx::DEFAULT_PAGE_SIZE)]
    page_size: usize,
    /// Remote requests per second.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Directory for per-prefix resume cursors.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct CountArgs {
    /// Enumerated rows CSV.
    #[arg(long)]
    input: PathBuf,
    /// One `family,year,count` line per cell instead of a year pivot.
    #[arg(long)]
    long: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct FetchArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, env = "AC_CACHE_DIR")]
    cache_dir: PathBuf,
    /// Serve bodies from a fixture directory; never opens a socket.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    rate: f64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value = DEFAULT_REPLAY_BASE)]
    replay_base: String,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long, env = "AC_CACHE_DIR")]
    cache_dir: PathBuf,
    /// Restrict to the rows of this CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Also emit descriptions and keywords.
    #[arg(long)]
    with_text: bool,
    /// Fall back to the timestamp's era when no layout marker matches.
    #[arg(long)]
    lenient_era: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct LinkArgs {
    /// Extraction JSONL.
    #[arg(long)]
    input: PathBuf,
    /// Enumerated rows; captures that were not extracted are linked by URL.
    #[arg(long)]
    rows: Option<PathBuf>,
    #[arg(long)]
    store: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    store: PathBuf,
    /// Attribution JSONL or series CSV (defaults to the store's attributions).
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    store: PathBuf,
    /// Census key, identifier node or channel URL.
    #[arg(long)]
    channel: String,
    /// Date prefix, e.g. 201301.
    #[arg(long)]
    closest: String,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    n: usize,
    /// Identifier family to sample by.
    #[arg(long)]
    by: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    store: PathBuf,
    /// Rank a uniform sample of this many channels instead of all.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct CohortArgs {
    /// TOML cohort spec.
    #[arg(long)]
    spec: PathBuf,
    /// Attribution JSONL (defaults to the store's).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Where to write the per-group report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct StratArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value_t = 2000)]
    per_stratum: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct CoverageArgs {
    #[arg(long)]
    store: PathBuf,
    /// CSV `key,video_count` for sampled channels.
    #[arg(long)]
    videos: PathBuf,
    /// Population size the interval is scaled to (census size by default).
    #[arg(long)]
    known_ids: Option<u64>,
    /// SE feeding the interval: standard or between-strata.
    #[arg(long, default_value = "standard")]
    method: String,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct ValidateArgs {
    /// Our list as CSV `rank,key,subs`.
    #[arg(long, conflicts_with = "store")]
    ours: Option<PathBuf>,
    /// Build our list from the store, taking each channel's count nearest `--date`.
    #[arg(long, requires = "date")]
    store: Option<PathBuf>,
    #[arg(long)]
    date: Option<String>,
    /// Reference list CSV `rank,key,subs`.
    #[arg(long, required = true, num_args = 1..)]
    reference: Vec<PathBuf>,
    #[arg(long, default_value_t = 500)]
    k: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct GrowthArgs {
    /// Series CSV `key,timestamp,subs,subs_exact,source_url`.
    #[arg(long, required = true, num_args = 1..)]
    series: Vec<PathBuf>,
    /// Only fit these keys.
    #[arg(long)]
    key: Vec<String>,
    /// Residuals CSV for plotting.
    #[arg(long)]
    residuals: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

fn writer(out: &OutArg) -> Res<Box<dyn Write>> {
    Ok(match &out.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p)?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_rows(path: &Path) -> Res<Vec<SnapshotRef>> {
    Ok(cdx::read_rows_csv(archive_census::fsutil::open_maybe_gz(path)?)?)
}

fn write_jsonl<T: Serialize>(w: &mut dyn Write, items: impl IntoIterator<Item = T>) -> Res {
    for item in items {
        serde_json::to_writer(&mut *w, &item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn cmd_enumerate(a: EnumerateArgs) -> Res {
    let file_index = a.index.as_ref().map(FileIndex::new);
    let mut rows = Vec::new();
    for prefix in &a.prefix {
        let mut q = EnumerationQuery::new(prefix.clone(), a.from, a.to);
        q.status_filter = a.status.iter().copied().collect();
        q.page_size = a.page_size;
        let stem = a.checkpoint_dir.as_ref().map(|d| {
            let name: String = prefix
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
                .collect();
            d.join(name)
        });
        let cursor_path = stem.as_ref().map(|s| s.with_extension("cursor.json"));
        // Rows emitted before the cursor, so a resumed run still outputs them.
        let done_path = stem.as_ref().map(|s| s.with_extension("rows.csv"));
        let cursor = match &cursor_path {
            Some(p) => EnumerationCursor::load(p)?.unwrap_or_default(),
            None => EnumerationCursor::default(),
        };
        if let Some(dir) = &a.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
        }
        let n0 = rows.len();
        if let Some(p) = done_path.as_ref().filter(|p| p.exists()) {
            rows.extend(read_rows(p)?);
        }
        let result = if let Some(index) = &file_index {
            drain(
                cdx::Enumeration::resume(q, index, cursor)?,
                cursor_path.as_deref(),
                &mut rows,
            )
        } else if let Some(endpoint) = &a.cdx_endpoint {
            let source = RemoteIndex::new(
                endpoint.clone(),
                Arc::new(UreqTransport::new(Duration::from_secs(60))),
                HostThrottle::new(a.rate),
                Backoff::default(),
            );
            drain(
                cdx::Enumeration::resume(q, source, cursor)?,
                cursor_path.as_deref(),
                &mut rows,
            )
        } else {
            return Err("either --index or --cdx-endpoint (AC_CDX_ENDPOINT) is required".into());
        };
        if let Some(p) = &done_path {
            let mut w = BufWriter::new(File::create(p)?);
            cdx::write_rows_csv(&mut w, &rows[n0..], true)?;
            w.flush()?;
        }
        result?;
        info!("{prefix}: {} rows", rows.len() - n0);
    }
    if a.prefix.len() > 1 {
        rows.sort_by_key(|r| r.key());
        rows.dedup_by_key(|r| r.key());
    }
    let mut w = writer(&a.out)?;
    cdx::write_rows_csv(&mut w, &rows, true)?;
    w.flush()?;
    Ok(())
}

/// Pulls every row of an enumeration into `rows`, checkpointing after each
/// page when `cursor_path` is set.
fn drain<S: cdx::IndexSource>(e: cdx::Enumeration<S>, cursor_path: Option<&Path>, rows: &mut Vec<SnapshotRef>) -> Res {
    let mut e = match cursor_path {
        Some(p) => e.with_checkpoint(p),
        None => e,
    };
    for r in &mut e {
        rows.push(r?);
    }
    info!("{:?}", e.stats());
    Ok(())
}

fn cmd_count(a: CountArgs, exec: Execution) -> Res {
    let rows = read_rows(&a.input)?;
    let counts = count_by_format_year_with(exec, &rows);
    let mut w = writer(&a.out)?;
    if a.long {
        counts.write_long_csv(&mut w)?;
    } else {
        counts.write_pivot_csv(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Default)]
struct FetchSummary {
    requested: usize,
    ok: usize,
    redirect_divergence: usize,
    error: usize,
    /// Uncached body reads, from fixtures or the network.
    body_reads: usize,
    network_requests: usize,
}

fn cmd_fetch(a: FetchArgs) -> Res {
    let refs = read_rows(&a.input)?;
    let cache = Cache::open(&a.cache_dir)?;
    let offline = a.fixtures.is_some();
    let source = match &a.fixtures {
        Some(dir) => BodySource::Fixtures(FixtureSet::open(dir)?),
        None => BodySource::Remote(Arc::new(UreqTransport::new(Duration::from_secs(60)))),
    };
    let policy = FetchPolicy {
        replay_base: a.replay_base,
        rate: a.rate,
        workers: a.workers.max(1),
        ..FetchPolicy::default()
    };
    let fetcher = Fetcher::new(cache, source, policy);
    let records = fetcher.fetch_all(&refs)?;
    let mut s = FetchSummary {
        requested: refs.len(),
        body_reads: fetcher.request_count(),
        network_requests: if offline { 0 } else { fetcher.request_count() },
        ..Default::default()
    };
    for r in &records {
        match r.outcome {
            Outcome::Ok => s.ok += 1,
            Outcome::RedirectDivergence => s.redirect_divergence += 1,
            Outcome::Error => s.error += 1,
        }
    }
    eprintln!("{}", serde_json::to_string(&s)?);
    Ok(())
}

fn cmd_extract(a: ExtractArgs, exec: Execution) -> Res {
    let cache = Cache::open(&a.cache_dir)?;
    let wanted: Option<HashSet<(String, String)>> = match &a.input {
        Some(p) => Some(read_rows(p)?.iter().map(SnapshotRef::key).collect()),
        None => None,
    };
    let mut recs: Vec<_> = cache
        .records()
        .filter(|r| r.outcome == Outcome::Ok && r.body_path.is_some())
        .filter(|r| wanted.as_ref().is_none_or(|w| w.contains(&r.snapshot.key())))
        .collect();
    recs.sort_by_key(|r| r.snapshot.key());
    let mut pages = Vec::with_capacity(recs.len());
    for r in recs {
        pages.push((r.snapshot.clone(), cache.read_body(r)?));
    }
    let opts = ExtractOptions {
        lenient_era: a.lenient_era,
        ..ExtractOptions::default()
    };
    let results = extract_batch(exec, &pages, &opts);
    let mut w = writer(&a.out)?;
    let mut failed = 0usize;
    for ((r, _), res) in pages.iter().zip(results) {
        match res {
            Ok(f) => write_jsonl(&mut w, [ExtractionRow::new(r, &f, a.with_text)])?,
            Err(e) => {
                failed += 1;
                warn!("{} {}: {e}", r.original_url, r.timestamp.as_str());
            }
        }
    }
    w.flush()?;
    eprintln!("extracted {} of {} pages", pages.len() - failed, pages.len());
    Ok(())
}

fn read_extractions(path: &Path) -> Res<Vec<ExtractionRow>> {
    let mut out = Vec::new();
    for (i, line) in archive_census::fsutil::open_maybe_gz(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?);
    }
    Ok(out)
}

const ATTRIBUTIONS_FILE: &str = "attributions.jsonl";

fn cmd_link(a: LinkArgs) -> Res {
    let extracted = read_extractions(&a.input)?;
    let mut inputs: Vec<LinkInput> = extracted.iter().map(LinkInput::from_row).collect();
    if let Some(rows) = &a.rows {
        let seen: HashSet<(String, String)> = extracted
            .iter()
            .map(|r| (cdx::normalize_url(&r.url), r.timestamp.as_str().to_string()))
            .collect();
        inputs.extend(
            read_rows(rows)?
                .iter()
                .filter(|r| !seen.contains(&r.key()))
                .map(LinkInput::from_snapshot),
        );
    }
    let linkage = link(&inputs);
    Store::create(&a.store, &linkage.entities, &linkage.conflicts)?;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &linkage.attributions)?;
    archive_census::fsutil::write_atomic(&a.store.join(ATTRIBUTIONS_FILE), &buf)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        entities: usize,
        with_channel_id: usize,
        conflicts: usize,
        stats: &'a archive_census::linker::LinkStats,
    }
    eprintln!(
        "{}",
        serde_json::to_string(&Summary {
            entities: linkage.entities.len(),
            with_channel_id: linkage.lower_bound_channels(),
            conflicts: linkage.conflicts.len(),
            stats: &linkage.stats,
        })?
    );
    Ok(())
}

fn cmd_ingest(a: IngestArgs) -> Res {
    let mut st = Store::open(&a.store)?;
    let input = a.input.unwrap_or_else(|| a.store.join(ATTRIBUTIONS_FILE));
    let rows = if input.extension().is_some_and(|e| e == "csv") {
        read_series_csv(archive_census::fsutil::open_maybe_gz(&input)?)?
    } else {
        read_attributions_jsonl(archive_census::fsutil::open_maybe_gz(&input)?)?
    };
    let report = st.ingest(&rows);
    st.save()?;
    eprintln!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_query(a: QueryArgs) -> Res {
    let st = Store::open(&a.store)?;
    let r = st.fetch_closest(&a.channel, &a.closest)?;
    println!("{}", serde_json::to_string(&r)?);
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Res {
    let st = Store::open(&a.store)?;
    let rows = st.sample(a.n, a.by.as_deref(), a.seed)?;
    let mut w = csv::Writer::from_writer(writer(&a.out)?);
    w.write_record(["key", "url", "identifiers", "capture_count"])?;
    for r in rows {
        w.write_record([r.key, r.url, r.identifiers.join(";"), r.capture_count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_rank(a: RankArgs) -> Res {
    let st = Store::open(&a.store)?;
    let counts: Vec<u64> = match a.sample {
        Some(n) => {
            let keys: HashSet<String> = st.sample(n, None, a.seed)?.into_iter().map(|r| r.key).collect();
            st.census()
                .filter(|r| keys.contains(&r.key))
                .map(|r| r.capture_count)
                .collect()
        }
        None => st.census().map(|r| r.capture_count).collect(),
    };
    let mut w = csv::Writer::from_writer(writer(&a.out)?);
    w.write_record(["rank", "capture_count"])?;
    for (rank, c) in store::rank_frequency(counts) {
        w.write_record([rank.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_cohort(a: CohortArgs) -> Res {
    let spec = CohortSpec::from_toml(&std::fs::read_to_string(&a.spec)?)?;
    let input = match (&a.input, &a.store) {
        (Some(p), _) => p.clone(),
        (None, Some(s)) => s.join(ATTRIBUTIONS_FILE),
        (None, None) => return Err("--input or --store is required".into()),
    };
    let mut captures = Vec::new();
    for line in archive_census::fsutil::open_maybe_gz(&input)?.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at: archive_census::linker::Attribution = serde_json::from_str(&line)?;
        let Some(id) = claim_from_url(&at.url, at.timestamp.year()).0 else {
            continue;
        };
        captures.push(CohortCapture {
            key: at.key,
            family: id.family,
            timestamp: at.timestamp,
            url: at.url,
            subs: at.subs,
            subs_exact: at.subs_exact,
        });
    }
    let result = build_cohort(&spec, &captures)?;
    #[derive(Serialize)]
    struct Line<'a> {
        group: &'a str,
        key: &'a str,
        period: &'a str,
        timestamp: &'a str,
        subs: Option<u64>,
        url: &'a str,
    }
    let mut w = writer(&a.out)?;
    write_jsonl(
        &mut w,
        result.rows.iter().map(|r| Line {
            group: &r.group,
            key: &r.key,
            period: &r.period,
            timestamp: r.timestamp.as_str(),
            subs: r.subs,
            url: &r.url,
        }),
    )?;
    w.flush()?;
    #[derive(Serialize)]
    struct Report<'a> {
        groups: &'a [archive_census::cohorts::GroupReport],
        union_channels: usize,
        mean_captures_per_channel: f64,
    }
    let report = serde_json::to_string_pretty(&Report {
        groups: &result.groups,
        union_channels: result.union_channels,
        mean_captures_per_channel: result.mean_captures_per_channel,
    })?;
    match &a.report {
        Some(p) => std::fs::write(p, report + "\n")?,
        None => eprintln!("{report}"),
    }
    Ok(())
}

fn capture_counts(st: &Store) -> Vec<(String, u64)> {
    st.census().map(|r| (r.key.clone(), r.capture_count)).collect()
}

fn cmd_strat(a: StratArgs) -> Res {
    let st = Store::open(&a.store)?;
    let plan = stratified_sample(&capture_counts(&st), a.per_stratum, a.seed);
    let mut w = csv::Writer::from_writer(writer(&a.out)?);
    w.write_record(["stratum", "population", "key"])?;
    for p in &plan {
        for k in &p.keys {
            w.write_record([p.index.to_string(), p.population.to_string(), k.clone()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_coverage(a: CoverageArgs) -> Res {
    let st = Store::open(&a.store)?;
    let method = match a.method.as_str() {
        "standard" => SeMethod::Standard,
        "between-strata" | "between_strata" => SeMethod::BetweenStrata,
        other => return Err(format!("unknown --method {other:?} (standard, between-strata)").into()),
    };
    let mut videos = HashMap::new();
    let mut rdr = csv::Reader::from_reader(archive_census::fsutil::open_maybe_gz(&a.videos)?);
    for rec in rdr.records() {
        let rec = rec?;
        videos.insert(rec[0].to_string(), rec[1].trim().parse::<f64>()?);
    }
    // Population from the census; the sample is whatever keys have a count.
    let mut plan: Vec<StratumPlan> = (0..STRATA)
        .map(|index| StratumPlan {
            index,
            population: 0,
            keys: Vec::new(),
        })
        .collect();
    for (key, c) in capture_counts(&st) {
        if let Some(i) = stratum_index(c) {
            let p = &mut plan[i as usize];
            p.population += 1;
            if videos.contains_key(&key) {
                p.keys.push(key);
            }
        }
    }
    let strata = summarize_strata(&plan, &videos);
    let known = a.known_ids.unwrap_or(st.census_len() as u64);
    let report = estimate_coverage(&strata, known, method)?;
    let mut w = writer(&a.out)?;
    #[derive(Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        report: &'a archive_census::stats::CoverageReport,
        strata: &'a [archive_census::stats::StratumSummary],
    }
    serde_json::to_writer_pretty(
        &mut w,
        &Out {
            report: &report,
            strata: &strata,
        },
    )?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_ranked(path: &Path) -> Res<Vec<RankedEntry>> {
    let mut rdr = csv::Reader::from_reader(archive_census::fsutil::open_maybe_gz(path)?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(format!("{}: expected rank,key,subs", path.display()).into());
        }
        out.push(RankedEntry {
            key: rec[1].to_string(),
            subs: rec[2].trim().parse()?,
        });
    }
    Ok(out)
}

fn cmd_validate(a: ValidateArgs) -> Res {
    let ours = match (&a.ours, &a.store, &a.date) {
        (Some(p), _, _) => read_ranked(p)?,
        (None, Some(s), Some(date)) => {
            let st = Store::open(s)?;
            let keys: Vec<String> = st.keys_with_series().cloned().collect();
            keys.iter()
                .filter_map(|k| st.fetch_closest(k, date).ok())
                .map(|q| RankedEntry {
                    key: q.key,
                    subs: q.subs as f64,
                })
                .collect()
        }
        _ => return Err("--ours or --store with --date is required".into()),
    };
    let mut w = csv::Writer::from_writer(writer(&a.out)?);
    w.write_record(["reference", "k", "overlap", "spearman", "pearson"])?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for r in &a.reference {
        let o = topk_overlap(&ours, &read_ranked(r)?, a.k);
        w.write_record([
            r.display().to_string(),
            o.k.to_string(),
            o.count.to_string(),
            fmt(o.spearman),
            fmt(o.pearson),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_growth(a: GrowthArgs, exec: Execution) -> Res {
    let only: HashSet<&str> = a.key.iter().map(String::as_str).collect();
    let mut by: BTreeMap<String, Vec<(Timestamp, u64)>> = BTreeMap::new();
    for p in &a.series {
        for r in read_series_csv(archive_census::fsutil::open_maybe_gz(p)?)? {
            if only.is_empty() || only.contains(r.key.as_str()) {
                by.entry(r.key).or_default().push((r.timestamp, r.subs));
            }
        }
    }
    let keys: Vec<&String> = by.keys().collect();
    let series: Vec<Vec<(f64, f64)>> = by
        .values()
        .map(|v| v.iter().map(|(t, s)| (t.epoch_days(), *s as f64)).collect())
        .collect();
    let fits = fit_many(exec, &series);
    let mut w = writer(&a.out)?;
    let mut res = match &a.residuals {
        Some(p) => {
            let mut c = csv::Writer::from_path(p)?;
            c.write_record(["key", "day", "observed", "fitted", "residual"])?;
            Some(c)
        }
        None => None,
    };
    for ((key, pts), fit) in keys.iter().zip(&series).zip(fits) {
        match fit {
            Ok(f) => {
                writeln!(w, "{}", serde_json::json!({ "key": key, "fit": f }))?;
                if let Some(c) = res.as_mut() {
                    for (t, y, fv, r) in f.residuals(pts) {
                        c.write_record([
                            key.to_string(),
                            format!("{t:.6}"),
                            y.to_string(),
                            format!("{fv:.3}"),
                            format!("{r:.3}"),
                        ])?;
                    }
                }
            }
            Err(e) => {
                warn!("{key}: {e}");
                writeln!(w, "{}", serde_json::json!({ "key": key, "error": e.to_string() }))?;
            }
        }
    }
    w.flush()?;
    if let Some(mut c) = res {
        c.flush()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::auto()
    };
    let result = match cli.cmd {
        Cmd::Enumerate(a) => cmd_enumerate(a),
        Cmd::CountFormats(a) => cmd_count(a, exec),
        Cmd::Fetch(a) => cmd_fetch(a),
        Cmd::Extract(a) => cmd_extract(a, exec),
        Cmd::Link(a) => cmd_link(a),
        Cmd::Ingest(a) => cmd_ingest(a),
        Cmd::Query(a) => cmd_query(a),
        Cmd::Sample(a) => cmd_sample(a),
        Cmd::RankFrequency(a) => cmd_rank(a),
        Cmd::Cohort(a) => cmd_cohort(a),
        Cmd::StratifiedSample(a) => cmd_strat(a),
        Cmd::EstimateCoverage(a) => cmd_coverage(a),
        Cmd::Validate(a) => cmd_validate(a),
        Cmd::FitGrowth(a) => cmd_growth(a, exec),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("acensus: {e}");
            ExitCode::FAILURE
        }
    }
}
