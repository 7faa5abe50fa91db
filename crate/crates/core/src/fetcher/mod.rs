//! Raw archived HTML retrieval with an on-disk cache.
//!
//! Bodies are addressed by a SHA-256 of the capture digest (or of
//! `url + timestamp` when the index row has none), gzip-compressed, and fanned
//! out into `bodies/ab/cd/<hash>.html.gz`. Every fetch result is appended to
//! `manifest.jsonl` in the cache root; the last line for a capture wins.

mod fixtures;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;

use flate2::write::GzEncoder;
use flate2::Compression;
use log::{debug, warn};
use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cdx::SnapshotRef;
use crate::fsutil;
use crate::http::{Backoff, HttpResponse, RateLimiter, Transport, TransportError};
use crate::timestamp::Timestamp;

pub use fixtures::FixtureSet;

pub const DEFAULT_REPLAY_BASE: &str = "https://web.archive.org";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("replay base URL must not be empty")]
    EmptyBase,
    #[error("cache I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("capture has no cached body")]
    NoBody,
}

/// Raw-content replay address: `{base}/web/{timestamp}id_/{original_url}`.
/// The `id_` flag asks the archive for the original bytes without its
/// navigation banner.
pub fn replay_url(r: &SnapshotRef, base: &str) -> Result<String, FetchError> {
    let base = base.trim().trim_end_matches('/');
    if base.is_empty() {
        return Err(FetchError::EmptyBase);
    }
    Ok(format!("{base}/web/{}id_/{}", r.timestamp, r.original_url))
}

static REPLAY_TS: Lazy<Regex> = Lazy::new(|| Regex::new(r"/web/(\d{14})(?:[a-z]{2}_)?/").expect("regex"));

fn replay_timestamp(url: &str) -> Option<Timestamp> {
    REPLAY_TS.captures(url).and_then(|c| Timestamp::parse(&c[1]).ok())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    RedirectDivergence,
    Error,
}

/// Result of one fetch attempt sequence for one capture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchRecord {
    #[serde(rename = "ref")]
    pub snapshot: SnapshotRef,
    /// Cache-relative body path; set whenever a body was stored.
    pub body_path: Option<String>,
    pub fetched_at: String,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landing_timestamp: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
}

impl FetchRecord {
    /// Same record with `fetched_at` blanked, for comparisons.
    pub fn without_time(&self) -> Self {
        FetchRecord {
            fetched_at: String::new(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct FetchPolicy {
    pub replay_base: String,
    /// Requests per second across all workers.
    pub rate: f64,
    pub workers: usize,
    pub backoff: Backoff,
    pub max_redirects: u32,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        FetchPolicy {
            replay_base: DEFAULT_REPLAY_BASE.to_string(),
            rate: 2.0,
            workers: 4,
            backoff: Backoff::default(),
            max_redirects: 3,
        }
    }
}

/// Where bodies come from on a cache miss.
pub enum BodySource {
    Remote(Arc<dyn Transport>),
    /// Offline: a directory of fixture pages; never opens a socket.
    Fixtures(FixtureSet),
}

type CacheKey = (String, String, String);

fn cache_key(r: &SnapshotRef) -> CacheKey {
    (
        r.original_url.clone(),
        r.timestamp.as_str().to_string(),
        r.digest.clone(),
    )
}

/// Hex SHA-256 naming the body file of a capture.
pub fn body_key(r: &SnapshotRef) -> String {
    let mut h = Sha256::new();
    match r.digest() {
        Some(d) => h.update(d.as_bytes()),
        None => {
            h.update(r.original_url.as_bytes());
            h.update(b"\n");
            h.update(r.timestamp.as_str().as_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn body_rel_path(key: &str) -> String {
    format!("bodies/{}/{}/{key}.html.gz", &key[0..2], &key[2..4])
}

/// The cache directory: body files plus the manifest index.
pub struct Cache {
    root: PathBuf,
    index: HashMap<CacheKey, FetchRecord>,
    order: Vec<CacheKey>,
}

impl Cache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, FetchError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut cache = Cache {
            root,
            index: HashMap::new(),
            order: Vec::new(),
        };
        let manifest = cache.root.join(MANIFEST_FILE);
        if manifest.exists() {
            let reader = BufReader::new(File::open(&manifest)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: FetchRecord = serde_json::from_str(&line).map_err(|e| FetchError::Manifest {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
                cache.remember(rec);
            }
        }
        Ok(cache)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn remember(&mut self, rec: FetchRecord) {
        let key = cache_key(&rec.snapshot);
        if self.index.insert(key.clone(), rec).is_none() {
            self.order.push(key);
        }
    }

    /// A usable cached record: outcome ok and the body file still present.
    pub fn lookup(&self, r: &SnapshotRef) -> Option<&FetchRecord> {
        self.index.get(&cache_key(r)).filter(|rec| {
            rec.outcome == Outcome::Ok && rec.body_path.as_ref().is_some_and(|p| self.root.join(p).is_file())
        })
    }

    /// Latest record per capture, in first-seen order.
    pub fn records(&self) -> impl Iterator<Item = &FetchRecord> {
        self.order.iter().filter_map(|k| self.index.get(k))
    }

    fn store_body(&self, key: &str, body: &[u8]) -> Result<String, FetchError> {
        let rel = body_rel_path(key);
        let mut enc = GzEncoder::new(Vec::with_capacity(body.len() / 4), Compression::default());
        enc.write_all(body)?;
        fsutil::write_atomic(&self.root.join(&rel), &enc.finish()?)?;
        Ok(rel)
    }

    /// Decompressed body of a record.
    pub fn read_body(&self, rec: &FetchRecord) -> Result<Vec<u8>, FetchError> {
        let rel = rec.body_path.as_ref().ok_or(FetchError::NoBody)?;
        Ok(fsutil::read_maybe_gz(&self.root.join(rel))?)
    }

    /// Appends to the manifest and updates the in-memory index.
    pub fn append(&mut self, rec: FetchRecord) -> Result<(), FetchError> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join(MANIFEST_FILE))?;
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        f.write_all(line.as_bytes())?;
        self.remember(rec);
        Ok(())
    }
}

/// Cached, rate-limited capture fetcher.
pub struct Fetcher {
    cache: Mutex<Cache>,
    source: BodySource,
    policy: FetchPolicy,
    limiter: RateLimiter,
    requests: AtomicUsize,
}

enum Attempt {
    Body { body: Vec<u8>, landing: Timestamp },
    Failed(String),
}

impl Fetcher {
    pub fn new(cache: Cache, source: BodySource, policy: FetchPolicy) -> Self {
        Fetcher {
            limiter: RateLimiter::new(policy.rate),
            cache: Mutex::new(cache),
            source,
            policy,
            requests: AtomicUsize::new(0),
        }
    }

    /// Number of network (or fixture) body reads issued so far.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn into_cache(self) -> Cache {
        self.cache.into_inner().expect("cache poisoned")
    }

    /// Fetches one capture, serving from cache when possible, and records
    /// the outcome in the manifest.
    pub fn fetch(&self, r: &SnapshotRef) -> Result<FetchRecord, FetchError> {
        if let Some(hit) = self.cached(r) {
            return Ok(hit);
        }
        let rec = self.fetch_uncached(r)?;
        self.cache.lock().expect("cache poisoned").append(rec.clone())?;
        Ok(rec)
    }

    fn cached(&self, r: &SnapshotRef) -> Option<FetchRecord> {
        self.cache.lock().expect("cache poisoned").lookup(r).cloned()
    }

    /// Fetches many captures on a bounded worker pool. Records are funneled
    /// to a single manifest writer. Output order follows `refs`.
    pub fn fetch_all(&self, refs: &[SnapshotRef]) -> Result<Vec<FetchRecord>, FetchError> {
        let workers = self.policy.workers.max(1).min(refs.len().max(1));
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<(usize, FetchRecord, bool)>();
        let mut out: Vec<Option<FetchRecord>> = vec![None; refs.len()];
        let mut first_err = None;
        thread::scope(|s| {
            for _ in 0..workers {
                let tx = tx.clone();
                let next = &next;
                s.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(r) = refs.get(i) else { break };
                    let result = match self.cached(r) {
                        Some(hit) => Ok((hit, false)),
                        None => self.fetch_uncached(r).map(|rec| (rec, true)),
                    };
                    match result {
                        Ok((rec, fresh)) => {
                            if tx.send((i, rec, fresh)).is_err() {
                                break;
                            }
                        }
                        Err(e) => {
                            warn!("fetch of {} failed: {e}", r.original_url);
                            break;
                        }
                    }
                });
            }
            drop(tx);
            for (i, rec, fresh) in rx {
                if fresh {
                    if let Err(e) = self.cache.lock().expect("cache poisoned").append(rec.clone()) {
                        first_err.get_or_insert(e);
                    }
                }
                out[i] = Some(rec);
            }
        });
        if let Some(e) = first_err {
            return Err(e);
        }
        out.into_iter()
            .map(|r| r.ok_or_else(|| FetchError::Io(std::io::Error::other("worker stopped early"))))
            .collect()
    }

    fn fetch_uncached(&self, r: &SnapshotRef) -> Result<FetchRecord, FetchError> {
        let mut attempts = 0;
        let attempt = match &self.source {
            BodySource::Fixtures(set) => {
                attempts = 1;
                self.requests.fetch_add(1, Ordering::SeqCst);
                match set.body(r) {
                    Ok(body) => Attempt::Body {
                        body,
                        landing: r.timestamp.clone(),
                    },
                    Err(e) => Attempt::Failed(e),
                }
            }
            BodySource::Remote(transport) => self.fetch_remote(transport.as_ref(), r, &mut attempts)?,
        };
        let fetched_at = chrono::Utc::now().to_rfc3339();
        let rec = match attempt {
            Attempt::Body { body, .. } if body.is_empty() => FetchRecord {
                snapshot: r.clone(),
                body_path: None,
                fetched_at,
                outcome: Outcome::Error,
                landing_timestamp: None,
                error: Some("empty body".into()),
                attempts,
            },
            Attempt::Body { body, landing } => {
                let rel = self
                    .cache
                    .lock()
                    .expect("cache poisoned")
                    .store_body(&body_key(r), &body)?;
                let diverged = landing != r.timestamp;
                FetchRecord {
                    snapshot: r.clone(),
                    body_path: Some(rel),
                    fetched_at,
                    outcome: if diverged {
                        Outcome::RedirectDivergence
                    } else {
                        Outcome::Ok
                    },
                    landing_timestamp: diverged.then_some(landing),
                    error: None,
                    attempts,
                }
            }
            Attempt::Failed(reason) => FetchRecord {
                snapshot: r.clone(),
                body_path: None,
                fetched_at,
                outcome: Outcome::Error,
                landing_timestamp: None,
                error: Some(reason),
                attempts,
            },
        };
        Ok(rec)
    }

    fn get_with_retry(&self, transport: &dyn Transport, url: &str, attempts: &mut u32) -> Result<HttpResponse, String> {
        let backoff = &self.policy.backoff;
        let mut last = String::new();
        for attempt in 0..backoff.max_attempts.max(1) {
            if attempt > 0 {
                thread::sleep(backoff.delay(attempt - 1));
            }
            self.limiter.acquire();
            self.requests.fetch_add(1, Ordering::SeqCst);
            *attempts += 1;
            match transport.get(url) {
                Ok(resp) if resp.status >= 500 || resp.status == 429 => {
                    debug!("{url}: HTTP {} (attempt {})", resp.status, attempt + 1);
                    last = format!("HTTP {}", resp.status);
                }
                Ok(resp) => return Ok(resp),
                Err(TransportError::Offline { url }) => return Err(format!("offline: {url}")),
                Err(e) => {
                    debug!("{url}: {e} (attempt {})", attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(format!("gave up after {attempts} attempts: {last}"))
    }

    fn fetch_remote(
        &self,
        transport: &dyn Transport,
        r: &SnapshotRef,
        attempts: &mut u32,
    ) -> Result<Attempt, FetchError> {
        let mut url = replay_url(r, &self.policy.replay_base)?;
        for _hop in 0..=self.policy.max_redirects {
            let resp = match self.get_with_retry(transport, &url, attempts) {
                Ok(resp) => resp,
                Err(reason) => return Ok(Attempt::Failed(reason)),
            };
            match resp.status {
                200 => {
                    let landing = replay_timestamp(&url).unwrap_or_else(|| r.timestamp.clone());
                    return Ok(Attempt::Body {
                        body: resp.body,
                        landing,
                    });
                }
                300..=399 => {
                    let Some(loc) = resp.location else {
                        return Ok(Attempt::Failed(format!("HTTP {} without Location", resp.status)));
                    };
                    url = resolve_location(&url, &loc);
                }
                status => return Ok(Attempt::Failed(format!("HTTP {status}"))),
            }
        }
        Ok(Attempt::Failed(format!(
            "more than {} redirects",
            self.policy.max_redirects
        )))
    }
}

fn resolve_location(current: &str, location: &str) -> String {
    if location.starts_with("http://") || location.starts_with("https://") {
        return location.to_string();
    }
    let (scheme, rest) = current.split_once("://").unwrap_or(("http", current));
    let host = rest.split('/').next().unwrap_or(rest);
    if location.starts_with('/') {
        format!("{scheme}://{host}{location}")
    } else {
        let dir = current.rsplit_once('/').map(|(d, _)| d).unwrap_or(current);
        format!("{dir}/{location}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdx::Status;
    use std::collections::VecDeque;

    fn snap(url: &str, ts: &str, digest: &str) -> SnapshotRef {
        SnapshotRef {
            original_url: url.into(),
            timestamp: Timestamp::parse(ts).unwrap(),
            status: Status::Code(200),
            digest: digest.into(),
            mime: "text/html".into(),
        }
    }

    /// Replays canned responses in order and counts calls.
    struct Scripted {
        responses: Mutex<VecDeque<Result<HttpResponse, TransportError>>>,
        calls: Mutex<Vec<String>>,
    }

    impl Scripted {
        fn new(responses: Vec<Result<HttpResponse, TransportError>>) -> Arc<Self> {
            Arc::new(Scripted {
                responses: Mutex::new(responses.into()),
                calls: Mutex::new(Vec::new()),
            })
        }
    }

    impl Transport for Scripted {
        fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
            self.calls.lock().unwrap().push(url.to_string());
            self.responses.lock().unwrap().pop_front().unwrap_or(Ok(HttpResponse {
                status: 404,
                location: None,
                body: vec![],
            }))
        }
    }

    fn ok(body: &str) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status: 200,
            location: None,
            body: body.as_bytes().to_vec(),
        })
    }

    fn status(code: u16) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status: code,
            location: None,
            body: vec![],
        })
    }

    fn policy() -> FetchPolicy {
        FetchPolicy {
            replay_base: "http://archive.test".into(),
            rate: 0.0,
            workers: 2,
            backoff: Backoff::immediate(4),
            max_redirects: 3,
        }
    }

    #[test]
    fn replay_url_template() {
        let r = snap("https://www.youtube.com/user/smosh", "20130115000000", "D");
        assert_eq!(
            replay_url(&r, "https://web.archive.org").unwrap(),
            "https://web.archive.org/web/20130115000000id_/https://www.youtube.com/user/smosh"
        );
        assert_eq!(
            replay_url(&r, "https://web.archive.org/").unwrap(),
            replay_url(&r, "https://web.archive.org").unwrap()
        );
        assert!(matches!(replay_url(&r, ""), Err(FetchError::EmptyBase)));
    }

    #[test]
    fn second_fetch_is_a_cache_hit() {
        let dir = tempfile::tempdir().unwrap();
        let t = Scripted::new(vec![ok("<html>hi</html>")]);
        let f = Fetcher::new(
            Cache::open(dir.path()).unwrap(),
            BodySource::Remote(t.clone()),
            policy(),
        );
        let r = snap("https://www.youtube.com/user/a", "20130115000000", "D1");
        let first = f.fetch(&r).unwrap();
        assert_eq!(first.outcome, Outcome::Ok);
        let calls = t.calls.lock().unwrap().len();
        let second = f.fetch(&r).unwrap();
        assert_eq!(t.calls.lock().unwrap().len(), calls);
        assert_eq!(first, second);
        let cache = f.into_cache();
        assert_eq!(cache.read_body(&second).unwrap(), b"<html>hi</html>");
        let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.lines().count(), 1);
    }

    #[test]
    fn retries_server_errors() {
        let dir = tempfile::tempdir().unwrap();
        let t = Scripted::new(vec![status(503), status(503), ok("<html>x</html>")]);
        let f = Fetcher::new(
            Cache::open(dir.path()).unwrap(),
            BodySource::Remote(t.clone()),
            policy(),
        );
        let rec = f
            .fetch(&snap("https://www.youtube.com/user/a", "20130115000000", "D1"))
            .unwrap();
        assert_eq!(rec.outcome, Outcome::Ok);
        assert_eq!(rec.attempts, 3);
    }

    #[test]
    fn not_found_is_not_retried() {
        let dir = tempfile::tempdir().unwrap();
        let t = Scripted::new(vec![status(404), ok("never")]);
        let f = Fetcher::new(
            Cache::open(dir.path()).unwrap(),
            BodySource::Remote(t.clone()),
            policy(),
        );
        let rec = f
            .fetch(&snap("https://www.youtube.com/user/a", "20130115000000", "D1"))
            .unwrap();
        assert_eq!(rec.outcome, Outcome::Error);
        assert_eq!(t.calls.lock().unwrap().len(), 1);
        assert!(rec.body_path.is_none());
    }

    #[test]
    fn redirect_to_other_timestamp_is_divergence() {
        let dir = tempfile::tempdir().unwrap();
        let t = Scripted::new(vec![
            Ok(HttpResponse {
                status: 302,
                location: Some("/web/20130116000000id_/https://www.youtube.com/user/a".into()),
                body: vec![],
            }),
            ok("<html>later</html>"),
        ]);
        let f = Fetcher::new(
            Cache::open(dir.path()).unwrap(),
            BodySource::Remote(t.clone()),
            policy(),
        );
        let rec = f
            .fetch(&snap("https://www.youtube.com/user/a", "20130115000000", "D1"))
            .unwrap();
        assert_eq!(rec.outcome, Outcome::RedirectDivergence);
        assert_eq!(rec.landing_timestamp.unwrap().as_str(), "20130116000000");
        assert_eq!(
            t.calls.lock().unwrap()[1],
            "http://archive.test/web/20130116000000id_/https://www.youtube.com/user/a"
        );
    }

    #[test]
    fn redirect_loop_gives_up() {
        let dir = tempfile::tempdir().unwrap();
        let hop = || {
            Ok(HttpResponse {
                status: 302,
                location: Some("/web/20130115000000id_/https://www.youtube.com/user/a".into()),
                body: vec![],
            })
        };
        let t = Scripted::new(vec![hop(), hop(), hop(), hop(), hop()]);
        let f = Fetcher::new(
            Cache::open(dir.path()).unwrap(),
            BodySource::Remote(t.clone()),
            policy(),
        );
        let rec = f
            .fetch(&snap("https://www.youtube.com/user/a", "20130115000000", "D1"))
            .unwrap();
        assert_eq!(rec.outcome, Outcome::Error);
        assert_eq!(t.calls.lock().unwrap().len(), 4);
    }

    #[test]
    fn errors_keep_earlier_bodies() {
        let dir = tempfile::tempdir().unwrap();
        let t = Scripted::new(vec![
            ok("<html>a</html>"),
            status(500),
            status(500),
            status(500),
            status(500),
        ]);
        let f = Fetcher::new(Cache::open(dir.path()).unwrap(), BodySource::Remote(t), policy());
        let a = f
            .fetch(&snap("https://www.youtube.com/user/a", "20130115000000", "D1"))
            .unwrap();
        let b = f
            .fetch(&snap("https://www.youtube.com/user/b", "20130115000000", "D2"))
            .unwrap();
        assert_eq!(b.outcome, Outcome::Error);
        let cache = f.into_cache();
        assert_eq!(cache.read_body(&a).unwrap(), b"<html>a</html>");
        let reopened = Cache::open(dir.path()).unwrap();
        assert!(reopened.lookup(&a.snapshot).is_some());
        assert_eq!(reopened.records().count(), 2);
    }

    #[test]
    fn body_key_fallback_without_digest() {
        let with = snap("https://www.youtube.com/user/a", "20130115000000", "D1");
        let without = snap("https://www.youtube.com/user/a", "20130115000000", "-");
        assert_ne!(body_key(&with), body_key(&without));
        assert_eq!(body_key(&without).len(), 64);
        assert!(body_rel_path(&body_key(&with)).starts_with(&format!(
            "bodies/{}/{}/",
            &body_key(&with)[..2],
            &body_key(&with)[2..4]
        )));
    }

    #[test]
    fn pool_matches_sequential() {
        let dir = tempfile::tempdir().unwrap();
        struct Echo;
        impl Transport for Echo {
            fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
                Ok(HttpResponse {
                    status: 200,
                    location: None,
                    body: url.as_bytes().to_vec(),
                })
            }
        }
        let refs: Vec<SnapshotRef> = (0..20)
            .map(|i| {
                snap(
                    &format!("https://www.youtube.com/user/u{i}"),
                    "20130115000000",
                    &format!("D{i}"),
                )
            })
            .collect();
        let f = Fetcher::new(
            Cache::open(dir.path()).unwrap(),
            BodySource::Remote(Arc::new(Echo)),
            policy(),
        );
        let recs = f.fetch_all(&refs).unwrap();
        assert_eq!(recs.len(), 20);
        for (r, rec) in refs.iter().zip(&recs) {
            assert_eq!(&rec.snapshot, r);
            assert_eq!(rec.outcome, Outcome::Ok);
        }
        let again = f.fetch_all(&refs).unwrap();
        assert_eq!(f.request_count(), 20);
        assert_eq!(
            recs.iter().map(FetchRecord::without_time).collect::<Vec<_>>(),
            again.iter().map(FetchRecord::without_time).collect::<Vec<_>>()
        );
    }
}
