//! Per-angle training losses and their analytic gradients.
//!
//! * regression: `L_MSE = mean (y - y_hat)^2`
//! * classification: `L_S = -mean log softmax(z / T)[target]`
//! * combined: `L = L_S + alpha * L_MSE`
//!
//! Logits are row-major `n x n_bins`. All reductions are batch means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AngleBinning;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub n_bins: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 2.0,
            alpha: 2.0,
            n_bins: AngleBinning::DEFAULT_BINS,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "temperature {} must be > 0",
                self.temperature
            )));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha {} must be >= 0", self.alpha)));
        }
        if self.n_bins == 0 {
            return Err(Error::InvalidParameter("n_bins must be positive".into()));
        }
        Ok(())
    }
}

/// Predictions and targets for one angle over a batch of `n` samples.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a> {
    pub predicted_angles: &'a [f64],
    pub target_angles: &'a [f64],
    pub class_logits: &'a [f64],
    pub target_classes: &'a [usize],
}

/// A scalar loss and its gradient with respect to one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Differentiated {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    pub classification: f64,
    pub regression: f64,
    /// d total / d predicted_angles
    pub grad_angles: Vec<f64>,
    /// d total / d class_logits, same layout as the logits
    pub grad_logits: Vec<f64>,
}

pub fn mse_loss(predicted: &[f64], target: &[f64]) -> Result<Differentiated> {
    let n = predicted.len();
    if n == 0 || target.len() != n {
        return Err(Error::InvalidBatch(format!(
            "{} predictions vs {} targets",
            n,
            target.len()
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut sum = 0.0;
    let grad = predicted
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            sum += d * d;
            2.0 * d * inv_n
        })
        .collect();
    Ok(Differentiated {
        value: sum * inv_n,
        grad,
    })
}

pub fn temperature_ce_loss(
    logits: &[f64],
    targets: &[usize],
    temperature: f64,
    n_bins: usize,
) -> Result<Differentiated> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidParameter(format!("temperature {temperature} must be > 0")));
    }
    let n = targets.len();
    if n == 0 {
        return Err(Error::InvalidBatch("empty batch".into()));
    }
    if n_bins == 0 || logits.len() != n * n_bins {
        return Err(Error::Shape(format!(
            "{} logits for {n} rows of width {n_bins}",
            logits.len()
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (i, (row, &target)) in logits.chunks_exact(n_bins).zip(targets).enumerate() {
        if target >= n_bins {
            return Err(Error::InvalidIndex(target));
        }
        let scaled = row.iter().map(|z| z / temperature);
        let max = scaled.clone().fold(f64::NEG_INFINITY, f64::max);
        let g = &mut grad[i * n_bins..(i + 1) * n_bins];
        let mut denom = 0.0;
        for (gj, zj) in g.iter_mut().zip(scaled.clone()) {
            let e = (zj - max).exp();
            *gj = e;
            denom += e;
        }
        total += max + denom.ln() - row[target] / temperature;
        let scale = inv_n / temperature;
        for gj in g.iter_mut() {
            *gj *= scale / denom;
        }
        g[target] -= scale;
    }
    Ok(Differentiated {
        value: total * inv_n,
        grad,
    })
}

pub fn combined_loss(batch: &LossBatch<'_>, cfg: &LossConfig) -> Result<CombinedLoss> {
    cfg.validate()?;
    let n = batch.predicted_angles.len();
    if batch.target_angles.len() != n || batch.target_classes.len() != n {
        return Err(Error::InvalidBatch(format!(
            "batch lengths differ: {} angles, {} targets, {} classes",
            n,
            batch.target_angles.len(),
            batch.target_classes.len()
        )));
    }
    let reg = mse_loss(batch.predicted_angles, batch.target_angles)?;
    let cls = temperature_ce_loss(batch.class_logits, batch.target_classes, cfg.temperature, cfg.n_bins)?;
    Ok(CombinedLoss {
        total: cls.value + cfg.alpha * reg.value,
        classification: cls.value,
        regression: reg.value,
        grad_angles: reg.grad.into_iter().map(|g| cfg.alpha * g).collect(),
        grad_logits: cls.grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_181: f64 = 5.198497031265826;

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[12.0, -24.0], &[10.0, -20.0]).unwrap().value, 10.0);
        assert_eq!(mse_loss(&[1.5, 2.5], &[1.5, 2.5]).unwrap().value, 0.0);
        let l = mse_loss(&[3.0], &[0.0]).unwrap();
        assert_eq!(l.value, 9.0);
        assert_eq!(l.grad, vec![6.0]);
    }

    #[test]
    fn mse_errors() {
        assert!(matches!(mse_loss(&[], &[]), Err(Error::InvalidBatch(_))));
        assert!(matches!(mse_loss(&[1.0], &[1.0, 2.0]), Err(Error::InvalidBatch(_))));
    }

    #[test]
    fn ce_uniform_logits() {
        for t in [0.5, 1.0, 2.0, 7.0] {
            let l = temperature_ce_loss(&[0.0; 2 * 181], &[0, 180], t, 181).unwrap();
            assert!((l.value - LN_181).abs() < 1e-12);
        }
    }

    #[test]
    fn ce_peaked_row() {
        let mut logits = vec![0.0; 181];
        logits[42] = 20.0;
        let l = temperature_ce_loss(&logits, &[42], 2.0, 181).unwrap();
        let expected = (1.0 + 180.0 * (-10.0f64).exp()).ln();
        assert!((l.value - expected).abs() < 1e-12);
        assert!((l.value - 0.008_138_777_473).abs() < 1e-12);
    }

    #[test]
    fn ce_is_stable_for_huge_logits() {
        let mut logits = vec![-1e6; 181];
        logits[3] = 1e6;
        let l = temperature_ce_loss(&logits, &[3], 2.0, 181).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn ce_errors() {
        assert!(matches!(
            temperature_ce_loss(&[0.0; 180], &[0], 2.0, 181),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            temperature_ce_loss(&[0.0; 181], &[0], 0.0, 181),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            temperature_ce_loss(&[0.0; 181], &[181], 1.0, 181),
            Err(Error::InvalidIndex(181))
        ));
    }

    #[test]
    fn combined_examples() {
        let cfg = LossConfig::default();
        let logits = [0.0; 181];
        let batch = LossBatch {
            predicted_angles: &[10.0],
            target_angles: &[10.0],
            class_logits: &logits,
            target_classes: &[100],
        };
        let l = combined_loss(&batch, &cfg).unwrap();
        assert!((l.total - LN_181).abs() < 1e-12);

        let batch = LossBatch {
            predicted_angles: &[12.0],
            ..batch
        };
        let l = combined_loss(&batch, &cfg).unwrap();
        assert!((l.total - (LN_181 + 8.0)).abs() < 1e-12);
        assert_eq!(l.total, l.classification + cfg.alpha * l.regression);
        assert_eq!(l.grad_angles, vec![8.0]);
    }

    #[test]
    fn defaults_match_reported_settings() {
        let cfg = LossConfig::default();
        assert_eq!((cfg.temperature, cfg.alpha, cfg.n_bins), (2.0, 2.0, 181));
    }
}
