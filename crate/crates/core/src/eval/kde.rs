//! Gaussian kernel density estimates of score distributions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_POINTS: usize = 512;

/// Grid margin on each side of the data range, in bandwidths.
const GRID_MARGIN: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub group: String,
    pub bandwidth: f64,
    /// Scores that entered the estimate (those equal to 1.0 are dropped).
    pub n_scores: usize,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

impl DensityCurve {
    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        self.x
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }

    pub fn argmax(&self) -> f64 {
        let i = self
            .density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.x[i]
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, falling back to
/// the standard deviation alone, then to a small scale-relative width when
/// the data are degenerate.
pub fn silverman_bandwidth(scores: &[f64]) -> f64 {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt();
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-3 * mean.abs().max(1.0)
    }
}

/// Density of one score group on a 512-point grid spanning the scores plus
/// three bandwidths on either side.
pub fn kde(group: &str, scores: &[f64], bandwidth: Option<f64>) -> Result<DensityCurve> {
    let kept: Vec<f64> = scores.iter().copied().filter(|&s| s != 1.0).collect();
    if kept.is_empty() {
        return Err(Error::invalid(format!("score group `{group}` is empty after exclusion")));
    }
    if kept.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("score group `{group}` has non-finite scores")));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::invalid(format!("bandwidth {h} must be positive"))),
        None => silverman_bandwidth(&kept),
    };
    let lo = kept.iter().copied().fold(f64::INFINITY, f64::min) - GRID_MARGIN * h;
    let hi = kept.iter().copied().fold(f64::NEG_INFINITY, f64::max) + GRID_MARGIN * h;
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let norm = 1.0 / (kept.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let x: Vec<f64> = (0..GRID_POINTS).map(|i| lo + step * i as f64).collect();
    let density = x
        .iter()
        .map(|&g| {
            kept.iter()
                .map(|&s| {
                    let u = (g - s) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(DensityCurve { group: group.to_string(), bandwidth: h, n_scores: kept.len(), x, density })
}

/// KDE per named group; any empty group is an error.
pub fn export_score_density(groups: &[(&str, &[f64])], bandwidth: Option<f64>) -> Result<Vec<DensityCurve>> {
    groups.iter().map(|(name, scores)| kde(name, scores, bandwidth)).collect()
}

/// Long-format CSV: `group,x,density`.
pub fn density_csv(curves: &[DensityCurve]) -> String {
    let mut out = String::from("group,x,density\n");
    for c in curves {
        for (x, d) in c.x.iter().zip(&c.density) {
            let _ = writeln!(out, "{},{x},{d}", c.group);
        }
    }
    out
}

/// `fpr,tpr` CSV of ROC points.
pub fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (f, t) in points {
        let _ = writeln!(out, "{f},{t}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_kernel() {
        let c = kde("bg", &[0.5], None).unwrap();
        assert_eq!(c.x.len(), GRID_POINTS);
        assert!((c.argmax() - 0.5).abs() < 2.0 * (c.x[1] - c.x[0]));
        assert!((c.integral() - 1.0).abs() < 0.01);
    }

    #[test]
    fn spread_groups_integrate_to_one() {
        let scores: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 1000.0).collect();
        let skewed: Vec<f64> = (1..100).map(|i| 1.0 / i as f64 * 0.3).collect();
        for c in export_score_density(&[("a", &scores), ("b", &skewed)], None).unwrap() {
            assert!((c.integral() - 1.0).abs() < 0.05, "{}: {}", c.group, c.integral());
        }
    }

    #[test]
    fn filtered_scores_are_excluded() {
        let err = kde("attack", &[1.0, 1.0], None).unwrap_err();
        assert!(err.to_string().contains("empty after exclusion"));
        let c = kde("attack", &[0.2, 1.0, 0.3], None).unwrap();
        assert_eq!(c.n_scores, 2);
        assert!(kde("x", &[0.2], Some(0.0)).is_err());
    }

    #[test]
    fn silverman_reference() {
        // sd = sqrt(2), IQR = 2 over {1..5}: 0.9 * min(1.41421, 1.49254) * 5^-0.2
        let h = silverman_bandwidth(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((h - 0.9 * 2f64.sqrt() * 5f64.powf(-0.2)).abs() < 1e-12);
        assert!(silverman_bandwidth(&[0.3, 0.3]) > 0.0);
    }

    #[test]
    fn csv_shape() {
        let c = kde("bg", &[0.1, 0.2], Some(0.05)).unwrap();
        let csv = density_csv(&[c]);
        assert_eq!(csv.lines().count(), GRID_POINTS + 1);
        assert_eq!(roc_csv(&[(0.0, 0.0), (1.0, 1.0)]), "fpr,tpr\n0,0\n1,1\n");
    }
}
