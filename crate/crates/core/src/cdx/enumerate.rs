use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

use log::{debug, warn};
use once_cell::sync::OnceCell;
use serde::{Deserialize, Serialize};

use super::{is_header_line, normalize_prefix, normalize_url, parse_index_line, CdxError, IndexFormat, SnapshotRef};
use crate::fsutil;
use crate::http::{Backoff, HostThrottle, Transport, TransportError};

pub const DEFAULT_PAGE_SIZE: usize = 3000;

/// What to enumerate: every capture under `prefix` in `year_range` whose
/// status is in `status_filter`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationQuery {
    /// Host-qualified prefix such as `youtube.com/user/`.
    pub prefix: String,
    pub year_range: (i32, i32),
    pub status_filter: BTreeSet<u16>,
    pub page_size: usize,
}

impl EnumerationQuery {
    pub fn new(prefix: impl Into<String>, from_year: i32, to_year: i32) -> Self {
        EnumerationQuery {
            prefix: prefix.into(),
            year_range: (from_year, to_year),
            status_filter: BTreeSet::from([200]),
            page_size: DEFAULT_PAGE_SIZE,
        }
    }

    pub fn validate(&self) -> Result<(), CdxError> {
        if self.year_range.0 > self.year_range.1 {
            return Err(CdxError::Query(format!(
                "year range {}..={} is empty",
                self.year_range.0, self.year_range.1
            )));
        }
        if self.page_size == 0 {
            return Err(CdxError::Query("page size must be at least 1".into()));
        }
        if self.prefix.trim().is_empty() {
            return Err(CdxError::Query("prefix must not be empty".into()));
        }
        Ok(())
    }

    fn accepts(&self, row: &SnapshotRef, prefix: &str, stats: &mut EnumerationStats) -> bool {
        if !normalize_url(&row.original_url).starts_with(prefix) {
            stats.filtered_prefix += 1;
            return false;
        }
        let year = row.timestamp.year();
        if year < self.year_range.0 || year > self.year_range.1 {
            stats.filtered_year += 1;
            return false;
        }
        if !row.status.code().is_some_and(|c| self.status_filter.contains(&c)) {
            stats.filtered_status += 1;
            return false;
        }
        true
    }

    /// Stable textual identity of the query, stored in resume cursors.
    pub fn fingerprint(&self) -> String {
        let statuses: Vec<String> = self.status_filter.iter().map(u16::to_string).collect();
        format!(
            "{}|{}-{}|{}|{}",
            normalize_prefix(&self.prefix),
            self.year_range.0,
            self.year_range.1,
            statuses.join(","),
            self.page_size
        )
    }
}

/// Resume point: the next page to request and the last key emitted before
/// it, so a resumed run neither repeats nor skips rows.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationCursor {
    pub query: String,
    pub next_page: usize,
    pub last_key: Option<(String, String)>,
}

impl EnumerationCursor {
    pub fn load(path: &Path) -> std::io::Result<Option<Self>> {
        match std::fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let bytes = serde_json::to_vec_pretty(self).expect("cursor serializes");
        fsutil::write_atomic(path, &bytes)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EnumerationStats {
    pub pages: usize,
    pub rows_read: usize,
    pub malformed: usize,
    pub filtered_prefix: usize,
    pub filtered_year: usize,
    pub filtered_status: usize,
    pub duplicates: usize,
    pub emitted: usize,
}

/// One page of parsed rows plus the count of lines that failed to parse.
#[derive(Clone, Debug, Default)]
pub struct Page {
    pub rows: Vec<SnapshotRef>,
    pub malformed: usize,
}

/// Anything that can hand out index pages.
pub trait IndexSource {
    /// Page `page` (0-based), or `None` past the last page.
    fn page(&self, query: &EnumerationQuery, page: usize) -> Result<Option<Page>, TransportError>;
}

impl<S: IndexSource + ?Sized> IndexSource for &S {
    fn page(&self, query: &EnumerationQuery, page: usize) -> Result<Option<Page>, TransportError> {
        (**self).page(query, page)
    }
}

impl<S: IndexSource + ?Sized> IndexSource for Box<S> {
    fn page(&self, query: &EnumerationQuery, page: usize) -> Result<Option<Page>, TransportError> {
        (**self).page(query, page)
    }
}

fn parse_lines<'a>(lines: impl Iterator<Item = (usize, &'a str)>) -> Page {
    let mut page = Page::default();
    for (line_no, line) in lines {
        if line.trim().is_empty() || is_header_line(line) || matches!(line.trim(), "[" | "]" | "[]") {
            continue;
        }
        match parse_index_line(line, IndexFormat::sniff(line)) {
            Ok(r) => page.rows.push(r),
            Err(reason) => {
                warn!("skipping malformed index row at line {line_no}: {reason}");
                page.malformed += 1;
            }
        }
    }
    page
}

/// A local index file (plain CDX or JSON rows, optionally gzipped). The file
/// is parsed once and sorted by `(normalized url, timestamp)`; pages are
/// slices of that order.
pub struct FileIndex {
    path: PathBuf,
    loaded: OnceCell<Page>,
}

impl FileIndex {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileIndex {
            path: path.into(),
            loaded: OnceCell::new(),
        }
    }

    fn load(&self) -> Result<&Page, TransportError> {
        self.loaded.get_or_try_init(|| {
            let bytes = fsutil::read_maybe_gz(&self.path).map_err(|e| TransportError::Io {
                url: self.path.display().to_string(),
                reason: e.to_string(),
            })?;
            let text = String::from_utf8_lossy(&bytes);
            let mut page = parse_lines(text.lines().enumerate().map(|(i, l)| (i + 1, l)));
            page.rows.sort_by_cached_key(|r| r.key());
            Ok(page)
        })
    }
}

impl IndexSource for FileIndex {
    fn page(&self, query: &EnumerationQuery, page: usize) -> Result<Option<Page>, TransportError> {
        let all = self.load()?;
        let start = page.saturating_mul(query.page_size);
        if start >= all.rows.len() && !(page == 0 && all.malformed > 0) {
            return Ok(None);
        }
        let end = (start + query.page_size).min(all.rows.len());
        Ok(Some(Page {
            rows: all.rows.get(start..end).map(<[_]>::to_vec).unwrap_or_default(),
            malformed: if page == 0 { all.malformed } else { 0 },
        }))
    }
}

/// A CDX-style HTTP endpoint queried with `page`/`pageSize` pagination.
pub struct RemoteIndex {
    endpoint: String,
    transport: Arc<dyn Transport>,
    throttle: HostThrottle,
    backoff: Backoff,
}

impl RemoteIndex {
    pub fn new(
        endpoint: impl Into<String>,
        transport: Arc<dyn Transport>,
        throttle: HostThrottle,
        backoff: Backoff,
    ) -> Self {
        RemoteIndex {
            endpoint: endpoint.into(),
            transport,
            throttle,
            backoff,
        }
    }

    pub fn page_url(&self, query: &EnumerationQuery, page: usize) -> String {
        let statuses: Vec<String> = query.status_filter.iter().map(u16::to_string).collect();
        let filter = if statuses.len() == 1 {
            format!("statuscode:{}", statuses[0])
        } else {
            format!("statuscode:({})", statuses.join("|"))
        };
        let enc = |s: &str| percent_encoding::utf8_percent_encode(s, percent_encoding::NON_ALPHANUMERIC).to_string();
        format!(
            "{}?url={}&matchType=prefix&from={}&to={}&filter={}&page={}&pageSize={}&output=json",
            self.endpoint.trim_end_matches('/'),
            enc(&query.prefix),
            query.year_range.0,
            query.year_range.1,
            enc(&filter),
            page,
            query.page_size,
        )
    }
}

fn retryable_status(status: u16) -> bool {
    status >= 500 || status == 429
}

impl IndexSource for RemoteIndex {
    fn page(&self, query: &EnumerationQuery, page: usize) -> Result<Option<Page>, TransportError> {
        let url = self.page_url(query, page);
        let mut last_err = None;
        for attempt in 0..self.backoff.max_attempts.max(1) {
            if attempt > 0 {
                thread::sleep(self.backoff.delay(attempt - 1));
            }
            debug!("index page {page} attempt {attempt}: {url}");
            match self.throttle.with_host(&url, || self.transport.get(&url)) {
                Ok(resp) if resp.status == 200 => {
                    let text = String::from_utf8_lossy(&resp.body);
                    let parsed = parse_lines(text.lines().enumerate().map(|(i, l)| (i + 1, l)));
                    if parsed.rows.is_empty() && parsed.malformed == 0 {
                        return Ok(None);
                    }
                    let mut parsed = parsed;
                    parsed.rows.sort_by_cached_key(|r| r.key());
                    return Ok(Some(parsed));
                }
                Ok(resp) if retryable_status(resp.status) => {
                    last_err = Some(TransportError::Io {
                        url: url.clone(),
                        reason: format!("HTTP {}", resp.status),
                    });
                }
                Ok(resp) => {
                    return Err(TransportError::Io {
                        url,
                        reason: format!("HTTP {}", resp.status),
                    })
                }
                Err(e @ TransportError::Offline { .. }) => return Err(e),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }
}

/// Streaming enumeration over an [`IndexSource`]. Yields accepted, deduped
/// rows in page order; a transport failure yields one error carrying the
/// resume cursor and ends the stream.
pub struct Enumeration<S> {
    query: EnumerationQuery,
    prefix: String,
    source: S,
    cursor: EnumerationCursor,
    buffer: std::vec::IntoIter<SnapshotRef>,
    seen: HashSet<(String, String)>,
    stats: EnumerationStats,
    checkpoint: Option<PathBuf>,
    done: bool,
}

/// Starts an enumeration from the first page.
pub fn enumerate<S: IndexSource>(query: EnumerationQuery, source: S) -> Result<Enumeration<S>, CdxError> {
    let cursor = EnumerationCursor {
        query: query.fingerprint(),
        ..Default::default()
    };
    Enumeration::resume(query, source, cursor)
}

impl<S: IndexSource> Enumeration<S> {
    /// Continues from a cursor returned by an earlier, interrupted run.
    pub fn resume(query: EnumerationQuery, source: S, cursor: EnumerationCursor) -> Result<Self, CdxError> {
        query.validate()?;
        if !cursor.query.is_empty() && cursor.query != query.fingerprint() {
            return Err(CdxError::Query(format!(
                "cursor was written for query {:?}, not {:?}",
                cursor.query,
                query.fingerprint()
            )));
        }
        let cursor = EnumerationCursor {
            query: query.fingerprint(),
            ..cursor
        };
        Ok(Enumeration {
            prefix: normalize_prefix(&query.prefix),
            query,
            source,
            cursor,
            buffer: Vec::new().into_iter(),
            seen: HashSet::new(),
            stats: EnumerationStats::default(),
            checkpoint: None,
            done: false,
        })
    }

    /// Persist the cursor to `path` after every page.
    pub fn with_checkpoint(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint = Some(path.into());
        self
    }

    pub fn cursor(&self) -> &EnumerationCursor {
        &self.cursor
    }

    pub fn stats(&self) -> &EnumerationStats {
        &self.stats
    }

    fn load_next_page(&mut self) -> Result<bool, CdxError> {
        let page = match self.source.page(&self.query, self.cursor.next_page) {
            Ok(Some(p)) => p,
            Ok(None) => return Ok(false),
            Err(source) => {
                return Err(CdxError::Transport {
                    cursor: Box::new(self.cursor.clone()),
                    source,
                })
            }
        };
        self.stats.pages += 1;
        self.stats.rows_read += page.rows.len();
        self.stats.malformed += page.malformed;
        let mut accepted = Vec::with_capacity(page.rows.len());
        for row in page.rows {
            if !self.query.accepts(&row, &self.prefix, &mut self.stats) {
                continue;
            }
            let key = row.key();
            if self.cursor.last_key.as_ref() == Some(&key) || !self.seen.insert(key.clone()) {
                self.stats.duplicates += 1;
                continue;
            }
            self.cursor.last_key = Some(key);
            accepted.push(row);
        }
        self.cursor.next_page += 1;
        self.stats.emitted += accepted.len();
        if let Some(path) = &self.checkpoint {
            self.cursor.save(path)?;
        }
        self.buffer = accepted.into_iter();
        Ok(true)
    }
}

impl<S: IndexSource> Iterator for Enumeration<S> {
    type Item = Result<SnapshotRef, CdxError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(row) = self.buffer.next() {
                return Some(Ok(row));
            }
            if self.done {
                return None;
            }
            match self.load_next_page() {
                Ok(true) => {}
                Ok(false) => {
                    self.done = true;
                    return None;
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }
}
