//! Levenberg–Marquardt fit of `S(t) = K / (1 + exp(-r (t - t0)))`, with `t`
//! in days. Time is centered internally for conditioning.

use serde::Serialize;

use super::StatsError;
use crate::par::{self, Execution};

const MAX_ITER: u32 = 200;
const REL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogisticFit {
    pub k: f64,
    /// Per day.
    pub r: f64,
    /// Midpoint, in the same day units as the input.
    pub t0: f64,
    pub rss: f64,
    pub converged: bool,
    pub iterations: u32,
    /// RSS after each accepted step, starting with the initial guess.
    pub rss_trace: Vec<f64>,
}

impl LogisticFit {
    pub fn predict(&self, t: f64) -> f64 {
        logistic([self.k, self.r, self.t0], t)
    }

    /// `(t, observed, fitted, residual)` per point.
    pub fn residuals(&self, points: &[(f64, f64)]) -> Vec<(f64, f64, f64, f64)> {
        points
            .iter()
            .map(|&(t, y)| {
                let f = self.predict(t);
                (t, y, f, y - f)
            })
            .collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `p = [K, r, t0]`.
pub fn logistic(p: [f64; 3], t: f64) -> f64 {
    p[0] * sigmoid(p[1] * (t - p[2]))
}

/// Partial derivatives of [`logistic`] with respect to `K`, `r`, `t0`.
pub fn logistic_jacobian(p: [f64; 3], t: f64) -> [f64; 3] {
    let [k, r, t0] = p;
    let s = sigmoid(r * (t - t0));
    let g = k * s * (1.0 - s);
    [s, g * (t - t0), -g * r]
}

fn rss(p: [f64; 3], pts: &[(f64, f64)]) -> f64 {
    pts.iter().map(|&(t, y)| (y - logistic(p, t)).powi(2)).sum()
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 || !a[piv][col].is_finite() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            let pivot = a[col];
            for (v, p) in a[row].iter_mut().zip(pivot).skip(col) {
                *v -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn initial_guess(pts: &[(f64, f64)]) -> [f64; 3] {
    let max = pts.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let k = 1.2 * max;
    let t0 = pts
        .iter()
        .find(|p| p.1 >= k / 2.0)
        .map_or(pts[pts.len() / 2].0, |p| p.0);
    // slope of logit(y / K) against t
    let z: Vec<(f64, f64)> = pts
        .iter()
        .filter(|p| p.1 > 0.0 && p.1 < k)
        .map(|&(t, y)| (t, (y / (k - y)).ln()))
        .collect();
    let span = pts.last().unwrap().0 - pts[0].0;
    let fallback = if span > 0.0 { 4.0 / span } else { 1.0 };
    let r = if z.len() >= 2 {
        let n = z.len() as f64;
        let mt = z.iter().map(|p| p.0).sum::<f64>() / n;
        let mz = z.iter().map(|p| p.1).sum::<f64>() / n;
        let stt: f64 = z.iter().map(|p| (p.0 - mt).powi(2)).sum();
        let stz: f64 = z.iter().map(|p| (p.0 - mt) * (p.1 - mz)).sum();
        let slope = stz / stt;
        if slope.is_finite() && slope > 0.0 {
            slope
        } else {
            fallback
        }
    } else {
        fallback
    };
    [k, r, t0]
}

/// Fits a logistic curve to `(day, subscribers)` points.
pub fn fit_logistic(points: &[(f64, f64)]) -> Result<LogisticFit, StatsError> {
    if points.len() < 5 {
        return Err(StatsError::NoFit(format!("{} points, need 5", points.len())));
    }
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(StatsError::NoFit("non-finite input".into()));
    }
    let first = pts[0].1;
    if pts.iter().all(|p| p.1 == first) {
        return Err(StatsError::NoFit("fewer than 2 distinct values".into()));
    }
    if pts.windows(2).all(|w| w[1].1 <= w[0].1) {
        return Err(StatsError::NoFit("series is monotone decreasing".into()));
    }

    let center = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    for p in &mut pts {
        p.0 -= center;
    }
    let mut p = initial_guess(&pts);
    let mut cur = rss(p, &pts);
    let mut trace = vec![cur];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITER {
        iterations += 1;
        if cur == 0.0 {
            converged = true;
            break;
        }
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for &(t, y) in &pts {
            let j = logistic_jacobian(p, t);
            let res = y - logistic(p, t);
            for a in 0..3 {
                jtr[a] += j[a] * res;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut m = jtj;
            for d in 0..3 {
                m[d][d] += lambda * jtj[d][d].max(1e-12);
            }
            if let Some(delta) = solve3(m, jtr) {
                let cand = [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]];
                let next = rss(cand, &pts);
                if cand[0] > 0.0 && next.is_finite() && next <= cur {
                    let rel = (cur - next) / cur.max(f64::MIN_POSITIVE);
                    p = cand;
                    cur = next;
                    trace.push(cur);
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if rel < REL_TOL {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // No descent direction left at any damping: a local minimum.
            converged = true;
            break;
        }
    }

    Ok(LogisticFit {
        k: p[0],
        r: p[1],
        t0: p[2] + center,
        rss: cur,
        converged,
        iterations,
        rss_trace: trace,
    })
}

pub fn fit_many(exec: Execution, series: &[Vec<(f64, f64)>]) -> Vec<Result<LogisticFit, StatsError>> {
    par::map(exec, series, |s| fit_logistic(s))
}
