//! Fourteen-digit archive timestamps (`YYYYMMDDhhmmss`, UTC).

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const MIN_YEAR: i32 = 1996;
pub const MAX_YEAR: i32 = 2100;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimestampError {
    #[error("timestamp {0:?} is not 14 ASCII digits")]
    Shape(String),
    #[error("timestamp {0:?} is not a valid calendar instant")]
    Calendar(String),
    #[error("timestamp {0:?} has year outside {MIN_YEAR}..={MAX_YEAR}")]
    Year(String),
    #[error("timestamp prefix {0:?} must be 4 to 14 digits of even length")]
    Prefix(String),
}

/// Calendar instant of 14 ASCII digits, if valid.
fn fields(raw: &str) -> Option<NaiveDateTime> {
    let n = |a: usize, b: usize| raw[a..b].parse::<u32>().ok();
    NaiveDate::from_ymd_opt(n(0, 4)? as i32, n(4, 6)?, n(6, 8)?)?.and_hms_opt(n(8, 10)?, n(10, 12)?, n(12, 14)?)
}

/// A validated archive capture instant.
///
/// The original string is kept verbatim so that stored files round-trip
/// bit-exactly; it is parsed to seconds only for distance arithmetic.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(String);

impl Timestamp {
    pub fn parse(raw: &str) -> Result<Self, TimestampError> {
        if raw.len() != 14 || !raw.bytes().all(|b| b.is_ascii_digit()) {
            return Err(TimestampError::Shape(raw.to_string()));
        }
        let dt = fields(raw).ok_or_else(|| TimestampError::Calendar(raw.to_string()))?;
        if !(MIN_YEAR..=MAX_YEAR).contains(&dt.year()) {
            return Err(TimestampError::Year(raw.to_string()));
        }
        Ok(Timestamp(raw.to_string()))
    }

    /// Right-pads a prefix such as `"201301"` with the start of the interval
    /// it names (`"20130101000000"`).
    pub fn from_prefix(prefix: &str) -> Result<Self, TimestampError> {
        let ok_len = (4..=14).contains(&prefix.len()) && prefix.len().is_multiple_of(2);
        if !ok_len || !prefix.bytes().all(|b| b.is_ascii_digit()) {
            return Err(TimestampError::Prefix(prefix.to_string()));
        }
        const START: &str = "00000101000000";
        let mut padded = prefix.to_string();
        padded.push_str(&START[prefix.len()..]);
        Self::parse(&padded)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn datetime(&self) -> NaiveDateTime {
        fields(&self.0).expect("validated timestamp")
    }

    pub fn year(&self) -> i32 {
        self.0[..4].parse().expect("validated timestamp")
    }

    pub fn month(&self) -> u32 {
        self.0[4..6].parse().expect("validated timestamp")
    }

    /// Calendar quarter, 1..=4.
    pub fn quarter(&self) -> u32 {
        (self.month() - 1) / 3 + 1
    }

    pub fn epoch_seconds(&self) -> i64 {
        self.datetime().and_utc().timestamp()
    }

    pub fn epoch_days(&self) -> f64 {
        self.epoch_seconds() as f64 / 86_400.0
    }

    pub fn date(&self) -> NaiveDate {
        self.datetime().date()
    }

    pub fn from_epoch_seconds(secs: i64) -> Result<Self, TimestampError> {
        let dt = chrono::DateTime::from_timestamp(secs, 0).ok_or_else(|| TimestampError::Calendar(secs.to_string()))?;
        Self::parse(&dt.format("%Y%m%d%H%M%S").to_string())
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Timestamp {
    type Err = TimestampError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Timestamp::parse(&raw).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let ts = Timestamp::parse("20130115000000").unwrap();
        assert_eq!(ts.year(), 2013);
        assert_eq!(ts.quarter(), 1);
        assert!(Timestamp::parse("2013011500000").is_err());
        assert!(Timestamp::parse("20130230000000").is_err());
        assert!(Timestamp::parse("19950101000000").is_err());
        assert!(Timestamp::parse("2013011500000a").is_err());
    }

    #[test]
    fn prefix_pads_to_interval_start() {
        assert_eq!(Timestamp::from_prefix("201301").unwrap().as_str(), "20130101000000");
        assert_eq!(Timestamp::from_prefix("2013").unwrap().as_str(), "20130101000000");
        assert_eq!(Timestamp::from_prefix("2013011512").unwrap().as_str(), "20130115120000");
        assert!(Timestamp::from_prefix("20131").is_err());
        assert!(Timestamp::from_prefix("201313").is_err());
    }

    #[test]
    fn epoch_round_trip() {
        let ts = Timestamp::parse("20200229123456").unwrap();
        assert_eq!(Timestamp::from_epoch_seconds(ts.epoch_seconds()).unwrap(), ts);
    }
}
