use std::collections::HashMap;

use log::warn;
use serde::Serialize;

use super::StatsError;

fn check(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooShort { need: 2, got: x.len() });
    }
    Ok(())
}

/// Product-moment correlation, computed on centered values.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedEntry {
    pub key: String,
    pub subs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Overlap {
    /// Effective k after clamping to the shorter list.
    pub k: usize,
    pub count: usize,
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
    pub clamped: bool,
}

fn top_k(list: &[RankedEntry], k: usize) -> Vec<&RankedEntry> {
    let mut v: Vec<&RankedEntry> = list.iter().collect();
    v.sort_by(|a, b| b.subs.total_cmp(&a.subs).then_with(|| a.key.cmp(&b.key)));
    v.truncate(k);
    v
}

/// Size of the intersection of the two top-k lists, with rank and linear
/// correlation of the subscriber values over the shared keys. Ties are
/// broken by key before truncation.
pub fn topk_overlap(a: &[RankedEntry], b: &[RankedEntry], k: usize) -> Overlap {
    let eff = k.min(a.len()).min(b.len());
    let clamped = eff < k;
    if clamped {
        warn!("top-k overlap: k={k} clamped to {eff}");
    }
    let ta = top_k(a, eff);
    let tb: HashMap<&str, f64> = top_k(b, eff).into_iter().map(|e| (e.key.as_str(), e.subs)).collect();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for e in ta {
        if let Some(v) = tb.get(e.key.as_str()) {
            xs.push(e.subs);
            ys.push(*v);
        }
    }
    Overlap {
        k: eff,
        count: xs.len(),
        spearman: spearman(&xs, &ys).ok(),
        pearson: pearson(&xs, &ys).ok(),
        clamped,
    }
}
