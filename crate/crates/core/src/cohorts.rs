//! Budgeted cohorts: rank channels by how many distinct periods they were
//! captured in, then take one capture per period down the ranking until a
//! capture budget is met.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identifiers::Family;
use crate::timestamp::{Timestamp, TimestampError};

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("group budgets sum to {sum}, total_budget is {total}")]
    BudgetMismatch { sum: u64, total: u64 },
    #[error("cohort spec has no groups")]
    NoGroups,
    #[error("group {0:?} lists no families")]
    EmptyGroup(String),
    #[error("year range {0}..={1} is empty")]
    Years(i32, i32),
    #[error("spec: {0}")]
    Parse(String),
    #[error(transparent)]
    Timestamp(#[from] TimestampError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Quarterly,
    Monthly,
}

impl FromStr for Period {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quarterly" | "quarter" | "q" => Ok(Period::Quarterly),
            "monthly" | "month" | "m" => Ok(Period::Monthly),
            other => Err(format!("unknown period {other:?} (quarterly, monthly)")),
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Period::Quarterly => "quarterly",
            Period::Monthly => "monthly",
        })
    }
}

/// `2013Q1` or `2015-07`.
pub fn period_label(timestamp: &str, period: Period) -> Result<String, TimestampError> {
    let ts = Timestamp::parse(timestamp)?;
    Ok(label_of(&ts, period))
}

fn label_of(ts: &Timestamp, period: Period) -> String {
    match period {
        Period::Quarterly => format!("{}Q{}", ts.year(), ts.quarter()),
        Period::Monthly => format!("{}-{:02}", ts.year(), ts.month()),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetGroup {
    pub name: String,
    pub families: BTreeSet<Family>,
    pub budget: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub groups: Vec<BudgetGroup>,
    pub period: Period,
    /// Inclusive capture-year range.
    pub years: (i32, i32),
    pub total_budget: u64,
}

#[derive(Deserialize)]
struct SpecFile {
    period: Period,
    years: [i32; 2],
    total_budget: Option<u64>,
    #[serde(rename = "group")]
    groups: Vec<GroupFile>,
}

#[derive(Deserialize)]
struct GroupFile {
    name: String,
    families: Vec<String>,
    budget: u64,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<(), CohortError> {
        if self.groups.is_empty() {
            return Err(CohortError::NoGroups);
        }
        if let Some(g) = self.groups.iter().find(|g| g.families.is_empty()) {
            return Err(CohortError::EmptyGroup(g.name.clone()));
        }
        if self.years.0 > self.years.1 {
            return Err(CohortError::Years(self.years.0, self.years.1));
        }
        let sum: u64 = self.groups.iter().map(|g| g.budget).sum();
        if sum != self.total_budget {
            return Err(CohortError::BudgetMismatch {
                sum,
                total: self.total_budget,
            });
        }
        Ok(())
    }

    /// Reads a TOML spec:
    ///
    /// ```toml
    /// period = "monthly"
    /// years = [2014, 2016]
    /// total_budget = 3000          # optional; defaults to the group sum
    /// [[group]]
    /// name = "username"
    /// families = ["username"]
    /// budget = 2000
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, CohortError> {
        let f: SpecFile = toml::from_str(text).map_err(|e| CohortError::Parse(e.to_string()))?;
        let groups = f
            .groups
            .into_iter()
            .map(|g| {
                let families = g
                    .families
                    .iter()
                    .map(|s| s.parse::<Family>().map_err(|e| CohortError::Parse(e.to_string())))
                    .collect::<Result<BTreeSet<_>, _>>()?;
                Ok(BudgetGroup {
                    name: g.name,
                    families,
                    budget: g.budget,
                })
            })
            .collect::<Result<Vec<_>, CohortError>>()?;
        let spec = CohortSpec {
            total_budget: f.total_budget.unwrap_or_else(|| groups.iter().map(|g| g.budget).sum()),
            groups,
            period: f.period,
            years: (f.years[0], f.years[1]),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// One capture available for cohort selection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortCapture {
    pub key: String,
    pub family: Family,
    pub timestamp: Timestamp,
    pub url: String,
    pub subs: Option<u64>,
    pub subs_exact: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChannelRank {
    pub key: String,
    pub periods: usize,
    pub captures: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CohortRow {
    pub group: String,
    pub key: String,
    pub period: String,
    pub timestamp: Timestamp,
    pub url: String,
    pub subs: Option<u64>,
    pub subs_exact: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub budget: u64,
    pub channels: usize,
    pub captures: u64,
    /// Budget minus available captures when the population ran out.
    pub shortfall: u64,
    pub mean_captures_per_channel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CohortResult {
    pub rows: Vec<CohortRow>,
    pub groups: Vec<GroupReport>,
    pub union_channels: usize,
    pub mean_captures_per_channel: f64,
}

struct ChannelPeriods<'a> {
    total: u64,
    /// Earliest capture per period label.
    reps: BTreeMap<String, &'a CohortCapture>,
}

fn group_by_channel<'a>(
    captures: impl Iterator<Item = &'a CohortCapture>,
    period: Period,
) -> HashMap<&'a str, ChannelPeriods<'a>> {
    let mut by: HashMap<&str, ChannelPeriods> = HashMap::new();
    for c in captures {
        let entry = by.entry(c.key.as_str()).or_insert_with(|| ChannelPeriods {
            total: 0,
            reps: BTreeMap::new(),
        });
        entry.total += 1;
        let label = label_of(&c.timestamp, period);
        entry
            .reps
            .entry(label)
            .and_modify(|r| {
                if (&c.timestamp, &c.url, c.subs, c.subs_exact) < (&r.timestamp, &r.url, r.subs, r.subs_exact) {
                    *r = c;
                }
            })
            .or_insert(c);
    }
    by
}

fn ranked(by: &HashMap<&str, ChannelPeriods<'_>>) -> Vec<ChannelRank> {
    let mut v: Vec<ChannelRank> = by
        .iter()
        .map(|(k, p)| ChannelRank {
            key: k.to_string(),
            periods: p.reps.len(),
            captures: p.total,
        })
        .collect();
    v.sort_by(|a, b| {
        b.periods
            .cmp(&a.periods)
            .then(b.captures.cmp(&a.captures))
            .then_with(|| a.key.cmp(&b.key))
    });
    v
}

/// Ranking by distinct periods, then total captures (both descending),
/// then key.
pub fn rank_channels(captures: &[CohortCapture], period: Period) -> Vec<ChannelRank> {
    ranked(&group_by_channel(captures.iter(), period))
}

/// Walks the ranking, taking whole channels until `budget` is reached.
/// Returns how many ranked channels were taken and their capture total.
pub fn budget_prefix(ranking: &[ChannelRank], budget: u64) -> (usize, u64) {
    let mut total = 0u64;
    for (i, r) in ranking.iter().enumerate() {
        if total >= budget {
            return (i, total);
        }
        total += r.periods as u64;
    }
    (ranking.len(), total)
}

pub fn build_cohort(spec: &CohortSpec, captures: &[CohortCapture]) -> Result<CohortResult, CohortError> {
    spec.validate()?;
    let in_years = |c: &&CohortCapture| (spec.years.0..=spec.years.1).contains(&c.timestamp.year());
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut union: BTreeSet<String> = BTreeSet::new();
    for g in &spec.groups {
        let by = group_by_channel(
            captures
                .iter()
                .filter(in_years)
                .filter(|c| g.families.contains(&c.family)),
            spec.period,
        );
        let ranking = ranked(&by);
        let (taken, total) = budget_prefix(&ranking, g.budget);
        let shortfall = g.budget.saturating_sub(total);
        if shortfall > 0 {
            warn!(
                "group {}: budget {} exceeds the {} available period captures",
                g.name, g.budget, total
            );
        }
        for r in &ranking[..taken] {
            union.insert(r.key.clone());
            for (label, c) in &by[r.key.as_str()].reps {
                rows.push(CohortRow {
                    group: g.name.clone(),
                    key: r.key.clone(),
                    period: label.clone(),
                    timestamp: c.timestamp.clone(),
                    url: c.url.clone(),
                    subs: c.subs,
                    subs_exact: c.subs_exact,
                });
            }
        }
        reports.push(GroupReport {
            name: g.name.clone(),
            budget: g.budget,
            channels: taken,
            captures: total,
            shortfall,
            mean_captures_per_channel: if taken == 0 { 0.0 } else { total as f64 / taken as f64 },
        });
    }
    let all: u64 = reports.iter().map(|r| r.captures).sum();
    Ok(CohortResult {
        mean_captures_per_channel: if union.is_empty() {
            0.0
        } else {
            all as f64 / union.len() as f64
        },
        union_channels: union.len(),
        groups: reports,
        rows,
    })
}
