use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anomaly cut-off `tau = loss_mean + k * loss_std` over training
/// reconstruction errors; `loss_std` is the population deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyThreshold {
    pub tau: f64,
    pub loss_mean: f64,
    pub loss_std: f64,
    pub k: f64,
}

impl AnomalyThreshold {
    pub fn is_anomalous(&self, score: f64) -> bool {
        score > self.tau
    }
}

pub fn select_threshold(train_losses: &[f64], k: f64) -> Result<AnomalyThreshold> {
    if train_losses.is_empty() {
        return Err(Error::invalid("threshold selection needs at least one loss"));
    }
    if train_losses.iter().any(|v| !v.is_finite()) || !k.is_finite() {
        return Err(Error::invalid("threshold inputs must be finite"));
    }
    let n = train_losses.len() as f64;
    let mean = train_losses.iter().sum::<f64>() / n;
    let var = train_losses.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(AnomalyThreshold { tau: mean + k * std, loss_mean: mean, loss_std: std, k })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_losses() {
        let t = select_threshold(&[0.5; 4], 1.0).unwrap();
        assert_eq!(t.tau, 0.5);
        assert_eq!(t.loss_std, 0.0);
    }

    #[test]
    fn three_point_example() {
        // mean 0.1, population std sqrt(0.02/3) = 0.0816497
        let t = select_threshold(&[0.0, 0.1, 0.2], 1.0).unwrap();
        assert!((t.tau - 0.1816497).abs() < 1e-6);
        let t3 = select_threshold(&[0.0, 0.1, 0.2], 3.0).unwrap();
        assert!((t3.tau - 0.3449490).abs() < 1e-6);
        assert!(t.is_anomalous(0.19) && !t.is_anomalous(0.18));
    }

    #[test]
    fn empty_is_error() {
        assert!(select_threshold(&[], 1.0).is_err());
    }
}
