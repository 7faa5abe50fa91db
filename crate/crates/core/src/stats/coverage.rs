//! Stratified estimate of videos per channel. Channels are binned by capture
//! count into power-of-two strata `[2^i, 2^(i+1))`, `i = 0..=16`; a sample
//! from each stratum gives per-stratum mean video counts, which are combined
//! with population weights.

use std::collections::HashMap;

use log::warn;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StatsError;

pub const STRATA: u32 = 17;
pub const Z95: f64 = 1.96;

/// Stratum of a capture count. Counts at or above `2^17` go to the top
/// stratum; zero has none.
pub fn stratum_index(capture_count: u64) -> Option<u32> {
    if capture_count == 0 {
        None
    } else {
        Some((63 - capture_count.leading_zeros()).min(STRATA - 1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub index: u32,
    pub population: u64,
    pub sample_size: u64,
    pub mean: f64,
    /// Sample variance (n − 1 denominator).
    pub variance: f64,
}

impl StratumSummary {
    pub fn bounds(&self) -> (u64, u64) {
        (1u64 << self.index, 1u64 << (self.index + 1))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeMethod {
    /// `sqrt(Σ w_i² s_i² / n_i)`.
    #[default]
    Standard,
    /// Standard deviation of the per-stratum means.
    BetweenStrata,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    pub weighted_mean: f64,
    pub se_standard: f64,
    pub se_between_strata: f64,
    pub known_ids: u64,
    /// Interval on total videos.
    pub ci95: (f64, f64),
    pub method: SeMethod,
    /// Strata dropped for lacking population or sample.
    pub excluded: Vec<u32>,
}

/// `N × (μ ± 1.96 × se)`, lower end clamped at zero.
pub fn coverage_interval(mean: f64, se: f64, known_ids: u64) -> (f64, f64) {
    let n = known_ids as f64;
    ((n * (mean - Z95 * se)).max(0.0), (n * (mean + Z95 * se)).max(0.0))
}

pub fn estimate_coverage(
    strata: &[StratumSummary],
    known_ids: u64,
    method: SeMethod,
) -> Result<CoverageReport, StatsError> {
    let (used, dropped): (Vec<&StratumSummary>, Vec<&StratumSummary>) =
        strata.iter().partition(|s| s.population > 0 && s.sample_size > 0);
    let excluded: Vec<u32> = dropped.iter().map(|s| s.index).collect();
    if !excluded.is_empty() {
        warn!("coverage: excluding empty strata {excluded:?} and renormalizing weights");
    }
    if used.is_empty() {
        return Err(StatsError::NoStrata);
    }
    let total: f64 = used.iter().map(|s| s.population as f64).sum();
    let mut mean = 0.0;
    let mut var = 0.0;
    for s in &used {
        let w = s.population as f64 / total;
        mean += w * s.mean;
        if s.sample_size < 2 {
            warn!("coverage: stratum {} has a single sample; variance taken as 0", s.index);
        } else {
            var += w * w * s.variance / s.sample_size as f64;
        }
    }
    let se_between_strata = if used.len() < 2 {
        0.0
    } else {
        let m = used.iter().map(|s| s.mean).sum::<f64>() / used.len() as f64;
        (used.iter().map(|s| (s.mean - m).powi(2)).sum::<f64>() / (used.len() - 1) as f64).sqrt()
    };
    let se_standard = var.sqrt();
    let se = match method {
        SeMethod::Standard => se_standard,
        SeMethod::BetweenStrata => se_between_strata,
    };
    Ok(CoverageReport {
        weighted_mean: mean,
        se_standard,
        se_between_strata,
        known_ids,
        ci95: coverage_interval(mean, se, known_ids),
        method,
        excluded,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StratumPlan {
    pub index: u32,
    pub population: u64,
    pub keys: Vec<String>,
}

/// Draws up to `per_stratum_n` keys uniformly without replacement from each
/// stratum. Keys are considered in sorted order so the plan depends only on
/// the input set and the seed.
pub fn stratified_sample(counts: &[(String, u64)], per_stratum_n: usize, seed: u64) -> Vec<StratumPlan> {
    let mut by: Vec<Vec<&str>> = vec![Vec::new(); STRATA as usize];
    for (k, c) in counts {
        if let Some(i) = stratum_index(*c) {
            by[i as usize].push(k);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    by.into_iter()
        .enumerate()
        .map(|(i, mut keys)| {
            keys.sort_unstable();
            keys.dedup();
            let picks = index::sample(&mut rng, keys.len(), per_stratum_n.min(keys.len()));
            StratumPlan {
                index: i as u32,
                population: keys.len() as u64,
                keys: picks.into_iter().map(|p| keys[p].to_string()).collect(),
            }
        })
        .collect()
}

/// Per-stratum sample mean and variance of the gathered video counts.
/// Sampled keys without a count are left out of `n_i`.
pub fn summarize_strata(plan: &[StratumPlan], videos: &HashMap<String, f64>) -> Vec<StratumSummary> {
    plan.iter()
        .map(|p| {
            let xs: Vec<f64> = p.keys.iter().filter_map(|k| videos.get(k).copied()).collect();
            let n = xs.len();
            let mean = if n == 0 { 0.0 } else { xs.iter().sum::<f64>() / n as f64 };
            let variance = if n < 2 {
                0.0
            } else {
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            };
            StratumSummary {
                index: p.index,
                population: p.population,
                sample_size: n as u64,
                mean,
                variance,
            }
        })
        .collect()
}
