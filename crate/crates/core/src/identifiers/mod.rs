//! Channel identifier grammar.
//!
//! Channels have been addressed through six URL shapes over the platform's
//! life: `/user/NAME`, the legacy `/profile?user=NAME`, bare vanity `/NAME`,
//! `/channel/UC…`, `/c/NAME` and `/@handle`. The prefix/pattern/years table is
//! shipped verbatim in `formats.tsv` and compiled once at first use.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use once_cell::sync::Lazy;
use percent_encoding::percent_decode_str;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The embedded format table, tab-separated with a header row.
pub const FORMAT_TABLE: &str = include_str!("formats.tsv");

/// Reserved top-level site paths, one per line, `#` comments allowed.
pub const RESERVED_PATHS: &str = include_str!("reserved_paths.txt");

/// Channel sub-pages that may follow a vanity name, e.g. `/smosh/videos`.
const CHANNEL_TABS: &[&str] = &[
    "about",
    "channels",
    "community",
    "discussion",
    "featured",
    "feed",
    "live",
    "playlists",
    "search",
    "shorts",
    "streams",
    "videos",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdentifierError {
    #[error("{family} value {value:?} does not match {pattern}")]
    Pattern {
        family: Family,
        value: String,
        pattern: String,
    },
    #[error("vanity value {0:?} collides with a reserved site path")]
    Reserved(String),
    #[error("unknown identifier family {0:?} (valid: {valid})", valid = Family::valid_names())]
    UnknownFamily(String),
    #[error("malformed identifier {0:?}, expected family:value")]
    Malformed(String),
}

/// Identifier family. Declaration order is the parse priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ChannelId,
    Username,
    LegacyUsername,
    CustomName,
    Handle,
    VanityUsername,
}

impl Family {
    /// Parse priority: channel IDs first, the bare-`/` vanity form last.
    pub const PRIORITY: [Family; 6] = [
        Family::ChannelId,
        Family::Username,
        Family::LegacyUsername,
        Family::CustomName,
        Family::Handle,
        Family::VanityUsername,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::ChannelId => "channel_id",
            Family::Username => "username",
            Family::LegacyUsername => "legacy_username",
            Family::CustomName => "custom_name",
            Family::Handle => "handle",
            Family::VanityUsername => "vanity_username",
        }
    }

    fn valid_names() -> String {
        Self::PRIORITY.iter().map(|f| f.name()).collect::<Vec<_>>().join(", ")
    }

    /// Name of the row in the format table describing this family.
    pub fn format_name(self) -> &'static str {
        match self {
            Family::ChannelId => "Channel ID",
            Family::Username => "Username",
            Family::LegacyUsername => "Legacy",
            Family::CustomName => "Custom Name",
            Family::Handle => "Handle",
            Family::VanityUsername => "Vanity",
        }
    }

    /// Username, legacy and vanity URLs all address the same username space.
    pub fn namespace(self) -> Namespace {
        match self {
            Family::ChannelId => Namespace::Channel,
            Family::Username | Family::LegacyUsername | Family::VanityUsername => Namespace::User,
            Family::CustomName => Namespace::Custom,
            Family::Handle => Namespace::Handle,
        }
    }

    pub fn case_sensitive(self) -> bool {
        self == Family::ChannelId
    }

    pub fn spec(self) -> &'static UrlFormatSpec {
        format_specs()
            .iter()
            .find(|s| s.family == self)
            .expect("every family has a spec row")
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = IdentifierError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lowered = s.trim().to_ascii_lowercase();
        Family::PRIORITY
            .into_iter()
            .find(|f| f.name() == lowered)
            .ok_or_else(|| IdentifierError::UnknownFamily(s.to_string()))
    }
}

/// Identifier namespaces; families sharing a namespace name the same thing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Namespace {
    Channel,
    User,
    Custom,
    Handle,
}

impl Namespace {
    pub fn tag(self) -> &'static str {
        match self {
            Namespace::Channel => "channel",
            Namespace::User => "user",
            Namespace::Custom => "custom",
            Namespace::Handle => "handle",
        }
    }
}

/// Inclusive year interval; an open end means "to present".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct YearRange {
    pub start: i32,
    pub end: Option<i32>,
}

impl YearRange {
    pub fn contains(&self, year: i32) -> bool {
        year >= self.start && self.end.is_none_or(|e| year <= e)
    }
}

/// One row of the format table.
#[derive(Debug)]
pub struct UrlFormatSpec {
    pub family: Family,
    pub format_name: String,
    pub path_prefix: String,
    pub value_pattern: String,
    pub time: String,
    pub active_range: YearRange,
    value_regex: Regex,
}

impl UrlFormatSpec {
    /// Whether `value` (the part after the prefix) satisfies the pattern.
    pub fn matches(&self, value: &str) -> bool {
        self.value_regex.is_match(value)
    }
}

fn parse_two_digit_year(s: &str) -> Option<i32> {
    let digits = s.strip_prefix('\'')?;
    digits.parse::<i32>().ok().map(|y| 2000 + y)
}

fn parse_time_column(time: &str) -> YearRange {
    let (start, end) = time.split_once('-').expect("time column is START-END");
    YearRange {
        start: parse_two_digit_year(start).expect("start year"),
        end: if end == "Pres" {
            None
        } else {
            Some(parse_two_digit_year(end).expect("end year"))
        },
    }
}

static SPECS: Lazy<Vec<UrlFormatSpec>> = Lazy::new(|| {
    FORMAT_TABLE
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            assert_eq!(cols.len(), 4, "format table row {line:?}");
            let family = Family::PRIORITY
                .into_iter()
                .find(|f| f.format_name() == cols[0])
                .expect("known format name");
            let flags = if family.case_sensitive() { "" } else { "(?i)" };
            let value_regex = Regex::new(&format!("{flags}^(?:{})$", cols[2])).expect("format regex");
            UrlFormatSpec {
                family,
                format_name: cols[0].to_string(),
                path_prefix: cols[1].to_string(),
                value_pattern: cols[2].to_string(),
                time: cols[3].to_string(),
                active_range: parse_time_column(cols[3]),
                value_regex,
            }
        })
        .collect()
});

static RESERVED: Lazy<HashSet<&'static str>> = Lazy::new(|| {
    RESERVED_PATHS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
});

/// Format specs in table order.
pub fn format_specs() -> &'static [UrlFormatSpec] {
    &SPECS
}

/// True when the first segment of `path` is a site path that cannot be a
/// vanity name (`/watch`, `/results`, …).
pub fn is_reserved_path(path: &str) -> bool {
    let path = path.split(['?', '#']).next().unwrap_or("");
    let first = path.trim_start_matches('/').split('/').next().unwrap_or("");
    RESERVED.contains(first.to_ascii_lowercase().as_str())
}

/// One channel identifier. Equality, ordering and hashing use only
/// `(family, value)`; `raw` records what the archive index contained.
#[derive(Clone, Debug)]
pub struct ChannelIdentifier {
    pub family: Family,
    pub value: String,
    pub raw: String,
}

impl PartialEq for ChannelIdentifier {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family && self.value == other.value
    }
}

impl Eq for ChannelIdentifier {}

impl Hash for ChannelIdentifier {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.family.hash(state);
        self.value.hash(state);
    }
}

impl PartialOrd for ChannelIdentifier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ChannelIdentifier {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.family, &self.value).cmp(&(other.family, &other.value))
    }
}

impl ChannelIdentifier {
    /// Validated, normalized identifier; `raw` is set to `value` as given.
    pub fn new(family: Family, value: &str) -> Result<Self, IdentifierError> {
        ChannelIdentifier {
            family,
            value: value.to_string(),
            raw: value.to_string(),
        }
        .normalize()
    }

    /// Lowercases case-insensitive families and checks the family pattern.
    /// Channel IDs are left untouched. `raw` is preserved.
    pub fn normalize(&self) -> Result<Self, IdentifierError> {
        let spec = self.family.spec();
        let value = if self.family.case_sensitive() {
            self.value.clone()
        } else {
            self.value.to_ascii_lowercase()
        };
        let tail = match self.family {
            Family::ChannelId => value.strip_prefix("UC"),
            _ => Some(value.as_str()),
        };
        if !tail.is_some_and(|t| spec.matches(t)) {
            return Err(IdentifierError::Pattern {
                family: self.family,
                value: self.value.clone(),
                pattern: format!("{}{}", spec.path_prefix, spec.value_pattern),
            });
        }
        if self.family == Family::VanityUsername && RESERVED.contains(value.as_str()) {
            return Err(IdentifierError::Reserved(value));
        }
        Ok(ChannelIdentifier {
            family: self.family,
            value,
            raw: self.raw.clone(),
        })
    }

    /// Canonical site-relative URL for this identifier.
    pub fn canonical_url(&self) -> String {
        match self.family {
            Family::ChannelId => format!("/channel/{}", self.value),
            Family::Username => format!("/user/{}", self.value),
            Family::LegacyUsername => format!("/profile?user={}", self.value),
            Family::CustomName => format!("/c/{}", self.value),
            Family::Handle => format!("/@{}", self.value),
            Family::VanityUsername => format!("/{}", self.value),
        }
    }

    /// Namespace-qualified node name used for linking, e.g. `user:smosh`.
    pub fn node_key(&self) -> String {
        format!("{}:{}", self.family.namespace().tag(), self.value)
    }
}

impl fmt::Display for ChannelIdentifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.family, self.value)
    }
}

impl FromStr for ChannelIdentifier {
    type Err = IdentifierError;
    /// Parses the `family:value` display form.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (family, value) = s
            .split_once(':')
            .ok_or_else(|| IdentifierError::Malformed(s.to_string()))?;
        ChannelIdentifier::new(family.parse()?, value)
    }
}

fn is_youtube_host(host: &str) -> bool {
    let host = host.rsplit('@').next().unwrap_or(host);
    let host = host.split(':').next().unwrap_or(host).to_ascii_lowercase();
    let host = host.trim_end_matches('.');
    host == "youtube.com" || host.ends_with(".youtube.com")
}

/// Splits off scheme and host. Returns the site-relative remainder, or `None`
/// when the host is not the platform's.
fn site_relative(url: &str) -> Option<&str> {
    let url = url.trim();
    let rest = if let Some((_, after)) = url.split_once("://") {
        after
    } else if let Some(after) = url.strip_prefix("//") {
        after
    } else if url.starts_with('/') {
        return Some(url);
    } else {
        url
    };
    let split = rest.find(['/', '?', '#']).unwrap_or(rest.len());
    let (host, tail) = rest.split_at(split);
    if !is_youtube_host(host) {
        return None;
    }
    Some(if tail.is_empty() { "/" } else { tail })
}

fn decode_once(s: &str) -> Option<String> {
    percent_decode_str(s).decode_utf8().ok().map(|c| c.into_owned())
}

fn query_param(query: &str, name: &str) -> Option<String> {
    query.split('&').find_map(|pair| {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        if k.eq_ignore_ascii_case(name) {
            decode_once(v)
        } else {
            None
        }
    })
}

fn identifier(family: Family, value: &str, raw: &str) -> Option<ChannelIdentifier> {
    ChannelIdentifier {
        family,
        value: value.to_string(),
        raw: raw.to_string(),
    }
    .normalize()
    .ok()
}

/// Classifies a channel URL. Accepts a full URL or a site-relative
/// path-plus-query. Trailing sub-pages (`/videos`, `/about`) and unrelated
/// query parameters are ignored. Never panics; non-channel URLs give `None`.
pub fn parse_channel_url(url: &str) -> Option<ChannelIdentifier> {
    let target = site_relative(url)?;
    let target = target.split('#').next().unwrap_or("");
    let (path, query) = target.split_once('?').unwrap_or((target, ""));
    let path = decode_once(path)?;
    let segments: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
    let first = *segments.first()?;
    let second = segments.get(1).copied();

    for family in Family::PRIORITY {
        match family {
            Family::ChannelId if first.eq_ignore_ascii_case("channel") => {
                return identifier(family, second?, url);
            }
            Family::Username if first.eq_ignore_ascii_case("user") => {
                return identifier(family, second?, url);
            }
            Family::LegacyUsername if first.eq_ignore_ascii_case("profile") => {
                let user = query_param(query, "user")?;
                return identifier(family, &user, url);
            }
            Family::CustomName if first.eq_ignore_ascii_case("c") => {
                return identifier(family, second?, url);
            }
            Family::Handle if first.starts_with('@') => {
                return identifier(family, &first[1..], url);
            }
            Family::VanityUsername => {
                if is_reserved_path(first) {
                    return None;
                }
                let tabs_ok = segments[1..]
                    .iter()
                    .all(|s| CHANNEL_TABS.contains(&s.to_ascii_lowercase().as_str()));
                if segments.len() > 2 || !tabs_ok {
                    return None;
                }
                return identifier(family, first, url);
            }
            _ => {}
        }
    }
    None
}

/// How a bare short path (`/name`) should be attributed given its capture
/// year: vanity usernames and custom names both used short paths in
/// different periods.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShortPathAttribution {
    Vanity,
    Custom,
    /// Capture year lies in neither family's active range.
    Ambiguous,
}

pub fn attribute_short_path(year: i32) -> ShortPathAttribution {
    let vanity = Family::VanityUsername.spec().active_range.contains(year);
    let custom = Family::CustomName.spec().active_range.contains(year);
    match (vanity, custom) {
        (true, false) => ShortPathAttribution::Vanity,
        (false, true) => ShortPathAttribution::Custom,
        _ => ShortPathAttribution::Ambiguous,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(family: Family, value: &str) -> ChannelIdentifier {
        ChannelIdentifier::new(family, value).unwrap()
    }

    #[test]
    fn table_rows_verbatim() {
        let rows: Vec<(String, String, String, String)> = format_specs()
            .iter()
            .map(|s| {
                (
                    s.format_name.clone(),
                    s.path_prefix.clone(),
                    s.value_pattern.clone(),
                    s.time.clone(),
                )
            })
            .collect();
        let expected = [
            ("Username", "/user/", "[A-Z0-9]{1,20}", "'06-'14"),
            ("Legacy", "/profile?user=", "[A-Z0-9]{1,20}", "'05-'06"),
            ("Vanity", "/", "[A-Z0-9]{1,20}", "'07-'13"),
            ("Channel ID", "/channel/UC", "[A-Za-z0-9_-]{22}", "'12-Pres"),
            ("Custom Name", "/c/", "[A-Z0-9]+", "'15-'21"),
            ("Handle", "/@", "[A-Z0-9-_]{3,30}", "'22-Pres"),
        ];
        assert_eq!(rows.len(), expected.len());
        for (got, want) in rows.iter().zip(expected) {
            assert_eq!((got.0.as_str(), got.1.as_str(), got.2.as_str(), got.3.as_str()), want);
        }
        assert_eq!(Family::Handle.spec().active_range, YearRange { start: 2022, end: None });
        assert_eq!(
            Family::LegacyUsername.spec().active_range,
            YearRange {
                start: 2005,
                end: Some(2006)
            }
        );
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_channel_url("/user/smosh"), Some(id(Family::Username, "smosh")));
        assert_eq!(
            parse_channel_url("/channel/UCaaaaaaaaaaaaaaaaaaaaaa"),
            Some(id(Family::ChannelId, "UCaaaaaaaaaaaaaaaaaaaaaa"))
        );
        assert_eq!(parse_channel_url("/watch?v=abc"), None);
        assert_eq!(
            parse_channel_url("/user/SMOSH/videos"),
            Some(id(Family::Username, "smosh"))
        );
    }

    #[test]
    fn full_urls_and_hosts() {
        let got = parse_channel_url("https://www.youtube.com/user/smosh?feature=guide").unwrap();
        assert_eq!(got, id(Family::Username, "smosh"));
        assert_eq!(got.raw, "https://www.youtube.com/user/smosh?feature=guide");
        assert_eq!(
            parse_channel_url("http://youtube.com:80/@Smosh"),
            Some(id(Family::Handle, "smosh"))
        );
        assert_eq!(parse_channel_url("https://example.com/user/smosh"), None);
        assert_eq!(
            parse_channel_url("http://www.youtube.com/profile?search=x&user=Smosh"),
            Some(id(Family::LegacyUsername, "smosh"))
        );
    }

    #[test]
    fn reserved_paths() {
        assert!(is_reserved_path("/watch"));
        assert!(!is_reserved_path("/smosh"));
        assert!(is_reserved_path("/results"));
        assert!(is_reserved_path("/Results?search_query=x"));
    }

    #[test]
    fn normalize_rules() {
        let upper = ChannelIdentifier {
            family: Family::Username,
            value: "SMOSH".into(),
            raw: "/user/SMOSH".into(),
        };
        let n = upper.normalize().unwrap();
        assert_eq!(n.value, "smosh");
        assert_eq!(n.raw, "/user/SMOSH");
        let cid = id(Family::ChannelId, "UCAbCdEfGhIjKlMnOpQrStUv");
        assert_eq!(cid.normalize().unwrap().value, "UCAbCdEfGhIjKlMnOpQrStUv");
        let err = ChannelIdentifier::new(Family::Handle, "AB").unwrap_err();
        assert!(matches!(
            err,
            IdentifierError::Pattern {
                family: Family::Handle,
                ..
            }
        ));
        assert!(err.to_string().contains("{3,30}"));
    }

    #[test]
    fn percent_decoding_applies_once() {
        assert_eq!(parse_channel_url("/user/sm%6Fsh"), Some(id(Family::Username, "smosh")));
        // %2536 decodes to "%36", which fails the username pattern
        assert_eq!(parse_channel_url("/user/sm%2536"), None);
        assert_eq!(parse_channel_url("/user/%C3%A9t%C3%A9"), None);
    }

    #[test]
    fn short_path_attribution() {
        assert_eq!(attribute_short_path(2009), ShortPathAttribution::Vanity);
        assert_eq!(attribute_short_path(2017), ShortPathAttribution::Custom);
        assert_eq!(attribute_short_path(2014), ShortPathAttribution::Ambiguous);
        assert_eq!(attribute_short_path(2023), ShortPathAttribution::Ambiguous);
    }

    #[test]
    fn display_round_trip() {
        let h = id(Family::Handle, "smosh_games");
        assert_eq!(h.to_string(), "handle:smosh_games");
        assert_eq!("handle:smosh_games".parse::<ChannelIdentifier>().unwrap(), h);
        assert!("nope:smosh".parse::<ChannelIdentifier>().is_err());
        assert!("bogus"
            .parse::<Family>()
            .unwrap_err()
            .to_string()
            .contains("channel_id"));
    }
}
