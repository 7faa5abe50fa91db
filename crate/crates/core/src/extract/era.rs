use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timestamp::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EraLabel {
    #[serde(rename = "early_2006_2009")]
    Early,
    #[serde(rename = "classic_2010_2012")]
    Classic,
    #[serde(rename = "one_channel_2013_2016")]
    OneChannel,
    #[serde(rename = "polymer_2017_2023")]
    Polymer,
}

impl EraLabel {
    pub const ALL: [EraLabel; 4] = [
        EraLabel::Early,
        EraLabel::Classic,
        EraLabel::OneChannel,
        EraLabel::Polymer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EraLabel::Early => "early_2006_2009",
            EraLabel::Classic => "classic_2010_2012",
            EraLabel::OneChannel => "one_channel_2013_2016",
            EraLabel::Polymer => "polymer_2017_2023",
        }
    }

    /// The layout a capture from `year` would normally have.
    pub fn for_year(year: i32) -> Self {
        match year {
            ..=2009 => EraLabel::Early,
            2010..=2012 => EraLabel::Classic,
            2013..=2016 => EraLabel::OneChannel,
            _ => EraLabel::Polymer,
        }
    }

    fn ordinal(self) -> i32 {
        self as i32
    }

    /// Literal substrings whose presence identifies the layout.
    pub fn markers(self) -> &'static [&'static str] {
        match self {
            EraLabel::Early => &[
                r#"id="profile-info-box""#,
                r#"class="profileTitleLinks""#,
                r#"id="channel_base""#,
            ],
            EraLabel::Classic => &[r#"id="channel-body""#, r#"class="stat-entry""#, "data-swf-config"],
            EraLabel::OneChannel => &[
                r#"id="c4-primary-header-contents""#,
                "branded-page-v2",
                "yt-subscription-button-subscriber-count",
            ],
            EraLabel::Polymer => &["ytInitialData", "<ytd-app", "ytcfg.set("],
        }
    }
}

impl fmt::Display for EraLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EraLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        EraLabel::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown era {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PageEra {
    pub label: EraLabel,
    /// Every marker found in the page, as `era:marker`.
    pub evidence: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EraError {
    #[error("empty body")]
    EmptyBody,
    #[error("no layout markers found (timestamp suggests {fallback})")]
    NoMarkers { fallback: EraLabel },
}

/// Picks the layout era from structural markers. When markers of several
/// eras are present, the era closest to the one implied by the capture
/// timestamp wins (earlier on a distance tie).
pub fn detect_era(html: &[u8], timestamp: &Timestamp) -> Result<PageEra, EraError> {
    if html.iter().all(u8::is_ascii_whitespace) {
        return Err(EraError::EmptyBody);
    }
    let text = String::from_utf8_lossy(html);
    let implied = EraLabel::for_year(timestamp.year());
    let mut evidence = Vec::new();
    let mut matched = Vec::new();
    for era in EraLabel::ALL {
        let before = evidence.len();
        for m in era.markers() {
            if text.contains(m) {
                evidence.push(format!("{}:{m}", era.name()));
            }
        }
        if evidence.len() > before {
            matched.push(era);
        }
    }
    let label = matched
        .iter()
        .copied()
        .min_by_key(|e| ((e.ordinal() - implied.ordinal()).abs(), e.ordinal()))
        .ok_or(EraError::NoMarkers { fallback: implied })?;
    Ok(PageEra { label, evidence })
}
