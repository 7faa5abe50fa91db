//! Archive index (CDX) rows: parsing, normalization, enumeration by URL
//! prefix, and per-format accounting.

mod accounting;
mod enumerate;

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timestamp::Timestamp;

pub use accounting::{count_by_format_year, count_by_format_year_with, FormatYearCounts};
pub use enumerate::{
    enumerate, Enumeration, EnumerationCursor, EnumerationQuery, EnumerationStats, FileIndex, IndexSource, Page,
    RemoteIndex, DEFAULT_PAGE_SIZE,
};

#[derive(Debug, Error)]
pub enum CdxError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("invalid query: {0}")]
    Query(String),
    #[error("transport failure at page {}: {source}", cursor.next_page)]
    Transport {
        cursor: Box<EnumerationCursor>,
        #[source]
        source: crate::http::TransportError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// HTTP status of a capture; the index uses `-` when unknown (typically for
/// revisit records).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Status {
    Code(u16),
    Unknown,
}

impl Status {
    pub fn code(self) -> Option<u16> {
        match self {
            Status::Code(c) => Some(c),
            Status::Unknown => None,
        }
    }

    fn parse(raw: &str) -> Result<Self, String> {
        if raw == "-" {
            return Ok(Status::Unknown);
        }
        match raw.parse::<u16>() {
            Ok(c) if (100..=599).contains(&c) => Ok(Status::Code(c)),
            _ => Err(format!("status {raw:?} is not an HTTP status code")),
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Code(c) => write!(f, "{c}"),
            Status::Unknown => f.write_str("-"),
        }
    }
}

impl Serialize for Status {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Status {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Status::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// One index row: a capture of `original_url` at `timestamp`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRef {
    pub original_url: String,
    pub timestamp: Timestamp,
    pub status: Status,
    pub digest: String,
    pub mime: String,
}

impl SnapshotRef {
    /// Dedup/order key: normalized URL plus timestamp.
    pub fn key(&self) -> (String, String) {
        (normalize_url(&self.original_url), self.timestamp.as_str().to_string())
    }

    /// Digest, or `None` when the index left it blank.
    pub fn digest(&self) -> Option<&str> {
        let d = self.digest.trim();
        (!d.is_empty() && d != "-").then_some(d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum IndexFormat {
    /// Space-separated: urlkey timestamp original mimetype statuscode digest length
    #[default]
    CdxPlain,
    /// JSON array with the same seven fields, positionally.
    JsonArray,
}

impl IndexFormat {
    /// Guesses the format of a single line.
    pub fn sniff(line: &str) -> Self {
        if line.trim_start().starts_with('[') {
            IndexFormat::JsonArray
        } else {
            IndexFormat::CdxPlain
        }
    }
}

const FIELD_COUNT: usize = 7;

/// Parses one index line. Header rows of the JSON form are reported as
/// errors like any other non-data line; callers skip them with
/// [`is_header_line`].
pub fn parse_index_line(line: &str, format: IndexFormat) -> Result<SnapshotRef, String> {
    let line = line.trim();
    if line.is_empty() {
        return Err("empty line".into());
    }
    let fields: Vec<String> = match format {
        IndexFormat::CdxPlain => line.split_whitespace().map(str::to_string).collect(),
        IndexFormat::JsonArray => {
            // Rows of a whole-page array carry its outer brackets on the
            // first and last line.
            let trimmed = line.trim_end_matches(',');
            let trimmed = if trimmed.starts_with("[[") {
                &trimmed[1..]
            } else {
                trimmed
            };
            let trimmed = trimmed
                .strip_suffix("]]")
                .map_or(trimmed.to_string(), |t| format!("{t}]"));
            let values: Vec<serde_json::Value> =
                serde_json::from_str(&trimmed).map_err(|e| format!("bad JSON row: {e}"))?;
            values
                .into_iter()
                .map(|v| match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                })
                .collect()
        }
    };
    if fields.len() != FIELD_COUNT {
        return Err(format!("expected {FIELD_COUNT} fields, found {}", fields.len()));
    }
    let timestamp = Timestamp::parse(&fields[1]).map_err(|e| e.to_string())?;
    let status = Status::parse(&fields[4])?;
    Ok(SnapshotRef {
        original_url: fields[2].clone(),
        timestamp,
        status,
        digest: fields[5].clone(),
        mime: fields[3].clone(),
    })
}

pub fn is_header_line(line: &str) -> bool {
    let t = line.trim_start().trim_start_matches('[').trim_start();
    t.starts_with("\"urlkey\"") || t.starts_with("urlkey ")
}

/// Canonical form of a captured URL used for prefix matching and dedup:
/// scheme dropped, host lowercased without `www.` or a default port, and a
/// trailing `/` removed from non-root paths.
pub fn normalize_url(url: &str) -> String {
    normalize_inner(url, true)
}

/// Same as [`normalize_url`] but keeps a trailing slash, so `youtube.com/c/`
/// does not also match `youtube.com/c...`.
pub fn normalize_prefix(prefix: &str) -> String {
    normalize_inner(prefix, false)
}

fn normalize_inner(url: &str, strip_trailing: bool) -> String {
    let mut rest = url.trim();
    while let Some((scheme, r)) = rest.split_once("://") {
        if scheme.is_empty() || !scheme.bytes().all(|b| b.is_ascii_alphanumeric() || b"+.-".contains(&b)) {
            break;
        }
        rest = r;
    }
    let split = rest.find(['/', '?', '#']).unwrap_or(rest.len());
    let (host, tail) = rest.split_at(split);
    let mut host = host.to_ascii_lowercase();
    while let Some(h) = host.strip_suffix(":80").or_else(|| host.strip_suffix(":443")) {
        host = h.to_string();
    }
    let mut host = host.as_str();
    while let Some(h) = host.strip_prefix("www.") {
        host = h;
    }
    let tail = tail.split('#').next().unwrap_or("");
    let (path, query) = match tail.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (tail, None),
    };
    let path = match path.trim_end_matches('/') {
        "" if strip_trailing && !path.is_empty() => "/",
        trimmed if strip_trailing => trimmed,
        _ => path,
    };
    let mut out = format!("{host}{path}");
    if let Some(q) = query {
        out.push('?');
        out.push_str(q);
    }
    out
}

pub const CSV_HEADER: [&str; 5] = ["original_url", "timestamp", "status", "digest", "mime"];

/// Writes rows as CSV with header `original_url,timestamp,status,digest,mime`.
pub fn write_rows_csv<W: Write>(out: W, rows: &[SnapshotRef], with_header: bool) -> Result<(), CdxError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if with_header {
        w.write_record(CSV_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: Read>(input: R) -> Result<Vec<SnapshotRef>, CdxError> {
    let mut rdr = csv::Reader::from_reader(input);
    let rows = rdr.deserialize().collect::<Result<Vec<SnapshotRef>, _>>()?;
    Ok(rows)
}
