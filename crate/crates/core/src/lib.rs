//! Longitudinal census of video-platform channels rebuilt from web-archive
//! captures.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`identifiers`] classifies channel URLs into identifier families.
//! 2. [`cdx`] enumerates archive index rows for a URL prefix.
//! 3. [`fetcher`] retrieves raw archived HTML into a local cache.
//! 4. [`extract`] detects the page layout era and pulls out subscriber counts
//!    and embedded identifiers.
//! 5. [`linker`] merges identifiers into canonical channel entities.
//! 6. [`store`] persists the census and per-channel time series and answers
//!    `sample` / `fetch_closest` queries.
//! 7. [`cohorts`] and [`stats`] build budgeted cohorts, coverage estimates,
//!    validation metrics and growth fits.

pub mod cdx;
pub mod cohorts;
pub mod extract;
pub mod fetcher;
pub mod fsutil;
pub mod http;
pub mod identifiers;
pub mod linker;
pub mod par;
pub mod stats;
pub mod store;
pub mod timestamp;

pub use identifiers::{parse_channel_url, ChannelIdentifier, Family};
pub use timestamp::Timestamp;
