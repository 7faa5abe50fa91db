//! Per-era extraction strategies. Each field has an ordered list of
//! strategies; the first one yielding non-empty text wins.

use std::collections::HashMap;

use once_cell::sync::Lazy;
use regex::Regex;
use scraper::{ElementRef, Html, Selector};

use super::era::EraLabel;
use crate::identifiers::{parse_channel_url, ChannelIdentifier, Family};

pub(crate) enum Strategy {
    /// Text content of the first element matching a CSS selector.
    Text(Selector),
    /// Attribute of the first element matching a CSS selector.
    Attr(Selector, &'static str),
    /// Value cell of a `.stat-entry` whose label contains the needle.
    Stat(&'static str),
    /// First capture group of a regex over the raw markup.
    Pattern(Regex),
    /// A JSON string stored under `"key":`, either directly or as the first
    /// `simpleText` / `content` / `label` inside an object value.
    Json(&'static str),
}

#[derive(Default)]
pub(crate) struct EraRules {
    pub subscribers: Vec<Strategy>,
    pub views: Vec<Strategy>,
    pub join_date: Vec<Strategy>,
    pub description: Vec<Strategy>,
    pub keywords: Vec<Strategy>,
}

fn sel(css: &str) -> Selector {
    Selector::parse(css).unwrap_or_else(|e| panic!("bad selector {css}: {e}"))
}

fn text(css: &str) -> Strategy {
    Strategy::Text(sel(css))
}

fn attr(css: &str, name: &'static str) -> Strategy {
    Strategy::Attr(sel(css), name)
}

fn pattern(re: &str) -> Strategy {
    Strategy::Pattern(Regex::new(re).expect("rule regex"))
}

pub(crate) static RULES: Lazy<HashMap<EraLabel, EraRules>> = Lazy::new(|| {
    let mut m = HashMap::new();
    m.insert(
        EraLabel::Early,
        EraRules {
            subscribers: vec![
                text("#profile-subscriber-count"),
                text(".profile-subscribers .profileValue"),
                pattern(r"(?is)Subscribers:\s*(?:<[^>]+>\s*)*([0-9][0-9,.\s]*)"),
            ],
            views: vec![
                text("#profile-channel-views"),
                pattern(r"(?is)Channel Views:\s*(?:<[^>]+>\s*)*([0-9][0-9,.\s]*)"),
            ],
            join_date: vec![
                text("#profile-join-date"),
                pattern(r"(?is)Joined:\s*(?:<[^>]+>\s*)*([A-Za-z]+ \d{1,2}, \d{4})"),
            ],
            description: vec![text("#profile_description"), attr("meta[name=description]", "content")],
            keywords: vec![],
        },
    );
    m.insert(
        EraLabel::Classic,
        EraRules {
            subscribers: vec![
                Strategy::Stat("subscriber"),
                text(".subscriber-count"),
                pattern(r"(?is)([0-9][0-9,.\s]*)\s*(?:<[^>]+>\s*)*subscribers"),
            ],
            views: vec![Strategy::Stat("view")],
            join_date: vec![Strategy::Stat("joined"), text(".joined-date")],
            description: vec![text(".channel-description"), attr("meta[name=description]", "content")],
            keywords: vec![attr("meta[name=keywords]", "content")],
        },
    );
    m.insert(
        EraLabel::OneChannel,
        EraRules {
            subscribers: vec![
                attr(
                    "span.yt-subscription-button-subscriber-count-branded-horizontal",
                    "title",
                ),
                text("span.yt-subscription-button-subscriber-count-branded-horizontal"),
                attr("[class*=yt-subscription-button-subscriber-count]", "title"),
                text("[class*=yt-subscription-button-subscriber-count]"),
            ],
            views: vec![text(".about-stats .view-count"), Strategy::Stat("view")],
            join_date: vec![text(".about-stats .joined-date"), Strategy::Stat("joined")],
            description: vec![attr("meta[name=description]", "content"), text(".about-description")],
            keywords: vec![attr("meta[name=keywords]", "content")],
        },
    );
    m.insert(
        EraLabel::Polymer,
        EraRules {
            subscribers: vec![
                Strategy::Json("subscriberCountText"),
                pattern(r#""content"\s*:\s*"([0-9][^"]*subscribers?)""#),
                text("#subscriber-count"),
            ],
            views: vec![],
            join_date: vec![],
            description: vec![
                pattern(r#""channelMetadataRenderer"\s*:\s*\{[^{}]*?"description"\s*:\s*("(?:[^"\\]|\\.)*")"#),
                attr("meta[name=description]", "content"),
            ],
            keywords: vec![
                pattern(r#""channelMetadataRenderer"\s*:\s*\{[^{}]*?"keywords"\s*:\s*("(?:[^"\\]|\\.)*")"#),
                attr("meta[name=keywords]", "content"),
            ],
        },
    );
    m
});

fn element_text(el: ElementRef<'_>) -> String {
    el.text()
        .collect::<Vec<_>>()
        .join(" ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Decodes a JSON string literal starting at `s[0] == '"'`.
fn json_string_at(s: &str) -> Option<String> {
    let bytes = s.as_bytes();
    if bytes.first() != Some(&b'"') {
        return None;
    }
    let mut i = 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'"' => return serde_json::from_str(&s[..=i]).ok(),
            _ => i += 1,
        }
    }
    None
}

fn decode_json_literal(captured: &str) -> String {
    if captured.starts_with('"') {
        json_string_at(captured).unwrap_or_else(|| captured.trim_matches('"').to_string())
    } else {
        captured.to_string()
    }
}

const JSON_TEXT_KEYS: [&str; 3] = ["\"simpleText\"", "\"content\"", "\"label\""];

fn json_value(raw: &str, key: &str) -> Option<String> {
    let needle = format!("\"{key}\"");
    let mut from = 0;
    while let Some(pos) = raw[from..].find(&needle) {
        let after = &raw[from + pos + needle.len()..];
        from += pos + needle.len();
        let after = after.trim_start();
        let Some(after) = after.strip_prefix(':') else { continue };
        let after = after.trim_start();
        if after.starts_with('"') {
            return json_string_at(after);
        }
        if after.starts_with('{') {
            let window = &after[..after.len().min(4000)];
            let hit = JSON_TEXT_KEYS
                .iter()
                .filter_map(|k| window.find(k).map(|p| (p, k.len())))
                .min();
            if let Some((p, len)) = hit {
                let v = window[p + len..].trim_start().strip_prefix(':')?.trim_start();
                return json_string_at(v);
            }
        }
    }
    None
}

pub(crate) struct Page<'a> {
    pub raw: &'a str,
    pub doc: Html,
}

impl<'a> Page<'a> {
    pub fn new(raw: &'a str) -> Self {
        Page {
            raw,
            doc: Html::parse_document(raw),
        }
    }

    fn apply(&self, s: &Strategy) -> Option<String> {
        let found = match s {
            Strategy::Text(sel) => self.doc.select(sel).next().map(element_text),
            Strategy::Attr(sel, name) => self
                .doc
                .select(sel)
                .find_map(|e| e.value().attr(name))
                .map(str::to_string),
            Strategy::Stat(needle) => {
                static ENTRY: Lazy<Selector> = Lazy::new(|| sel(".stat-entry"));
                static NAME: Lazy<Selector> = Lazy::new(|| sel(".stat-name"));
                static VALUE: Lazy<Selector> = Lazy::new(|| sel(".stat-value"));
                self.doc.select(&ENTRY).find_map(|entry| {
                    let name = entry.select(&NAME).next().map(element_text)?;
                    if name.to_lowercase().contains(needle) {
                        entry.select(&VALUE).next().map(element_text)
                    } else {
                        None
                    }
                })
            }
            Strategy::Pattern(re) => re
                .captures(self.raw)
                .and_then(|c| c.get(1))
                .map(|m| decode_json_literal(m.as_str())),
            Strategy::Json(key) => json_value(self.raw, key),
        };
        found.map(|s| s.trim().to_string()).filter(|s| !s.is_empty())
    }

    pub fn first(&self, strategies: &[Strategy]) -> Option<String> {
        strategies.iter().find_map(|s| self.apply(s))
    }

    /// Identifiers embedded in page metadata, in a fixed source order.
    pub fn embedded_identifiers(&self) -> Vec<ChannelIdentifier> {
        static URL_SOURCES: Lazy<Vec<(Selector, &'static str)>> = Lazy::new(|| {
            vec![
                (sel("link[rel=canonical]"), "href"),
                (sel("meta[property='og:url']"), "content"),
                (sel("link[rel=alternate]"), "href"),
            ]
        });
        static ID_SOURCES: Lazy<Vec<(Selector, &'static str)>> = Lazy::new(|| {
            vec![
                (sel("meta[itemprop=channelId]"), "content"),
                (sel("[data-channel-external-id]"), "data-channel-external-id"),
            ]
        });
        static JSON_URLS: Lazy<Regex> =
            Lazy::new(|| Regex::new(r#""(?:vanityChannelUrl|channelUrl|ownerUrls)"\s*:\s*\[?\s*"([^"]+)""#).unwrap());
        static JSON_IDS: Lazy<Regex> =
            Lazy::new(|| Regex::new(r#""externalId"\s*:\s*"(UC[A-Za-z0-9_-]{22})""#).unwrap());

        let mut out: Vec<ChannelIdentifier> = Vec::new();
        let mut push = |id: ChannelIdentifier| {
            if !out.contains(&id) {
                out.push(id);
            }
        };
        for (selector, name) in ID_SOURCES.iter() {
            for el in self.doc.select(selector) {
                if let Some(v) = el.value().attr(name) {
                    if let Ok(id) = ChannelIdentifier::new(Family::ChannelId, v.trim()) {
                        push(id);
                    }
                }
            }
        }
        for c in JSON_IDS.captures_iter(self.raw) {
            if let Ok(id) = ChannelIdentifier::new(Family::ChannelId, &c[1]) {
                push(id);
            }
        }
        let absolute = |u: &str| {
            if u.starts_with('/') {
                format!("https://www.youtube.com{u}")
            } else {
                u.to_string()
            }
        };
        for (selector, name) in URL_SOURCES.iter() {
            for el in self.doc.select(selector) {
                if let Some(id) = el.value().attr(name).and_then(|u| parse_channel_url(&absolute(u))) {
                    push(id);
                }
            }
        }
        for c in JSON_URLS.captures_iter(self.raw) {
            if let Some(id) = parse_channel_url(&absolute(&c[1])) {
                push(id);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_lookup_forms() {
        let raw = r#"{"subscriberCountText":{"accessibility":{"accessibilityData":{"label":"25.1 million subscribers"}},"simpleText":"25.1M subscribers"}}"#;
        assert_eq!(
            json_value(raw, "subscriberCountText").as_deref(),
            Some("25.1 million subscribers")
        );
        let raw = r#"{"title": "x", "subscriberCountText" : "1.2M subscribers"}"#;
        assert_eq!(
            json_value(raw, "subscriberCountText").as_deref(),
            Some("1.2M subscribers")
        );
        assert_eq!(json_value(raw, "missing"), None);
        assert_eq!(json_string_at(r#""a\"bé" tail"#).as_deref(), Some("a\"bé"));
    }

    #[test]
    fn stat_entries() {
        let page = Page::new(
            r#"<div class="stat-entry"><span class="stat-value">12</span><span class="stat-name">videos</span></div>
               <div class="stat-entry"><span class="stat-value">6,561,257</span><span class="stat-name">subscribers</span></div>"#,
        );
        assert_eq!(
            page.first(&[Strategy::Stat("subscriber")]).as_deref(),
            Some("6,561,257")
        );
        assert_eq!(page.first(&[Strategy::Stat("joined")]), None);
    }

    #[test]
    fn identifiers_from_metadata() {
        let page = Page::new(
            r#"<head><link rel="canonical" href="/user/Smosh"><meta itemprop="channelId" content="UCY30JRSgfhYXA6i6xX1erWg"></head>"#,
        );
        let ids = page.embedded_identifiers();
        assert_eq!(ids.len(), 2);
        assert_eq!(ids[0].family, Family::ChannelId);
        assert_eq!(ids[1].family, Family::Username);
    }
}
