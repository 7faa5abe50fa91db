//! Field extraction from archived channel pages.
//!
//! [`detect_era`] picks the layout from structural markers, then the era's
//! rule list is tried field by field. Identifiers come from page metadata
//! only (canonical links, meta tags, bootstrap JSON), never from the URL the
//! capture was requested under.

pub mod availability;
mod count;
mod era;
mod rules;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cdx::SnapshotRef;
use crate::identifiers::{ChannelIdentifier, Family};
use crate::par::{self, Execution};
use crate::timestamp::Timestamp;

pub use count::{parse_count, parse_count_with, CountError, ParsedCount, SuffixTable};
pub use era::{detect_era, EraError, EraLabel, PageEra};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Era(#[from] EraError),
    #[error("no subscriber count on a {era} page")]
    MissingSubscribers { era: EraLabel },
    #[error("unparseable subscriber count: {0}")]
    BadCount(CountError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtractedFields {
    pub channel_id: Option<ChannelIdentifier>,
    pub username: Option<String>,
    pub handle: Option<String>,
    pub subscribers: Option<ParsedCount>,
    pub description: Option<String>,
    pub keywords: Option<Vec<String>>,
    pub total_views: Option<ParsedCount>,
    pub join_date: Option<NaiveDate>,
    pub era: PageEra,
    /// Every identifier found in metadata, including the ones above.
    pub embedded: Vec<ChannelIdentifier>,
}

#[derive(Clone, Debug, Default)]
pub struct ExtractOptions {
    pub suffixes: SuffixTable,
    /// Fall back to the timestamp-implied era when no marker matches.
    pub lenient_era: bool,
}

pub fn extract(html: &[u8], r: &SnapshotRef) -> Result<ExtractedFields, ExtractError> {
    extract_with(html, r, &ExtractOptions::default())
}

pub fn extract_with(html: &[u8], r: &SnapshotRef, opts: &ExtractOptions) -> Result<ExtractedFields, ExtractError> {
    let era = match detect_era(html, &r.timestamp) {
        Ok(era) => era,
        Err(EraError::NoMarkers { fallback }) if opts.lenient_era => PageEra {
            label: fallback,
            evidence: vec![format!("timestamp:{}", r.timestamp.year())],
        },
        Err(e) => return Err(e.into()),
    };
    let raw = String::from_utf8_lossy(html);
    let page = rules::Page::new(&raw);
    let rules = &rules::RULES[&era.label];

    let subs_text = page
        .first(&rules.subscribers)
        .ok_or(ExtractError::MissingSubscribers { era: era.label })?;
    let subscribers = count::parse_count_with(&subs_text, &opts.suffixes).map_err(ExtractError::BadCount)?;
    let total_views = page
        .first(&rules.views)
        .and_then(|t| count::parse_count_with(&t, &opts.suffixes).ok());
    let join_date = page.first(&rules.join_date).and_then(|t| parse_date(&t));
    let description = page.first(&rules.description);
    let keywords = page
        .first(&rules.keywords)
        .map(|k| split_keywords(&k))
        .filter(|k| !k.is_empty());

    let embedded = page.embedded_identifiers();
    let of = |families: &[Family]| embedded.iter().find(|id| families.contains(&id.family)).cloned();
    let channel_id = of(&[Family::ChannelId]);
    let username = of(&[Family::Username, Family::LegacyUsername, Family::VanityUsername]).map(|i| i.value);
    let handle = of(&[Family::Handle]).map(|i| i.value);

    Ok(ExtractedFields {
        channel_id,
        username,
        handle,
        subscribers: Some(subscribers),
        description,
        keywords,
        total_views,
        join_date,
        era,
        embedded,
    })
}

/// Parses dates like `Nov 19, 2005`, `November 19, 2005`, `19 November 2005`
/// or `2005-11-19`, tolerating a leading label such as `Joined`.
pub fn parse_date(text: &str) -> Option<NaiveDate> {
    let t = text.trim();
    let t = t
        .strip_prefix("Joined")
        .or_else(|| t.strip_prefix("joined"))
        .unwrap_or(t)
        .trim_start_matches(':')
        .trim();
    ["%b %d, %Y", "%B %d, %Y", "%d %B %Y", "%d %b %Y", "%Y-%m-%d"]
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(t, f).ok())
}

/// Comma-separated lists split on commas; otherwise whitespace-separated
/// with double quotes grouping multi-word keywords.
pub fn split_keywords(raw: &str) -> Vec<String> {
    if raw.contains(',') {
        return raw
            .split(',')
            .map(|s| s.trim().trim_matches('"').trim())
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
    }
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    for c in raw.chars() {
        match c {
            '"' => {
                if quoted && !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                quoted = !quoted;
            }
            c if c.is_whitespace() && !quoted => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// One line of extraction output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRow {
    pub url: String,
    pub timestamp: Timestamp,
    pub channel_id: Option<String>,
    pub username: Option<String>,
    pub handle: Option<String>,
    pub subs: u64,
    pub subs_exact: bool,
    pub era: EraLabel,
    pub views: Option<u64>,
    pub join_date: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<Vec<String>>,
}

impl ExtractionRow {
    pub fn new(r: &SnapshotRef, f: &ExtractedFields, with_text: bool) -> Self {
        let subs = f.subscribers.as_ref();
        ExtractionRow {
            url: r.original_url.clone(),
            timestamp: r.timestamp.clone(),
            channel_id: f.channel_id.as_ref().map(|c| c.value.clone()),
            username: f.username.clone(),
            handle: f.handle.clone(),
            subs: subs.map_or(0, |s| s.value),
            subs_exact: subs.is_some_and(|s| s.exact),
            era: f.era.label,
            views: f.total_views.as_ref().map(|v| v.value),
            join_date: f.join_date.map(|d| d.format("%Y-%m-%d").to_string()),
            description: if with_text { f.description.clone() } else { None },
            keywords: if with_text { f.keywords.clone() } else { None },
        }
    }
}

/// Extracts many pages; order follows `pages`.
pub fn extract_batch(
    exec: Execution,
    pages: &[(SnapshotRef, Vec<u8>)],
    opts: &ExtractOptions,
) -> Vec<Result<ExtractedFields, ExtractError>> {
    par::map(exec, pages, |(r, body)| extract_with(body, r, opts))
}
