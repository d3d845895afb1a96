//! Training objective pieces and NMSE.

use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::channel::CsiMatrix;

fn check_len(a: &[f64], b: &[f64]) -> Result<(), LearnError> {
    if a.len() != b.len() {
        return Err(LearnError::Shape(format!(
            "prediction length {} differs from target length {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Vector Smooth L1: `0.5 s` when `s = ||pred - target||^2 < 1`, else `s - 0.5`.
pub fn smooth_l1(pred: &[f64], target: &[f64]) -> Result<f64, LearnError> {
    check_len(pred, target)?;
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(if s < 1.0 { 0.5 * s } else { s - 0.5 })
}

/// Gradient of [`smooth_l1`] with respect to `pred`. At `s == 1` both
/// branches agree in value; the inner-branch gradient is used there.
pub fn smooth_l1_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>, LearnError> {
    check_len(pred, target)?;
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    let k = if s <= 1.0 { 1.0 } else { 2.0 };
    Ok(pred.iter().zip(target).map(|(p, t)| k * (p - t)).collect())
}

/// `-0.5 * sum(1 + logvar - mu^2 - exp(logvar))`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// Returns (d/dmu, d/dlogvar) of [`kl_divergence`].
pub fn kl_grad(mu: &[f64], logvar: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dmu = mu.to_vec();
    let dlv = logvar.iter().map(|lv| 0.5 * (lv.exp() - 1.0)).collect();
    (dmu, dlv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmseMode {
    /// Average of per-sample error/power ratios.
    #[default]
    MeanOfRatios,
    /// Total error power over total target power.
    RatioOfSums,
}

/// NMSE between predicted and ground-truth CSI matrices.
///
/// Errors on an empty batch, a shape mismatch, or (in mean-of-ratios mode)
/// any ground-truth sample with zero power.
pub fn nmse(pred: &[CsiMatrix], truth: &[CsiMatrix], mode: NmseMode) -> Result<f64, LearnError> {
    if pred.len() != truth.len() {
        return Err(LearnError::Shape(format!(
            "{} predictions for {} ground-truth samples",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let mut num_total = 0.0;
    let mut den_total = 0.0;
    let mut ratio_sum = 0.0;
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        if p.n_tx() != t.n_tx() || p.n_sc() != t.n_sc() {
            return Err(LearnError::Shape(format!(
                "sample {i}: prediction {}x{} vs truth {}x{}",
                p.n_tx(),
                p.n_sc(),
                t.n_tx(),
                t.n_sc()
            )));
        }
        let num: f64 = p
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let den = t.frobenius_sq();
        if mode == NmseMode::MeanOfRatios {
            if den == 0.0 {
                return Err(LearnError::ZeroPowerTarget { index: i });
            }
            ratio_sum += num / den;
        }
        num_total += num;
        den_total += den;
    }
    match mode {
        NmseMode::MeanOfRatios => Ok(ratio_sum / truth.len() as f64),
        NmseMode::RatioOfSums => {
            if den_total == 0.0 {
                return Err(LearnError::ZeroPowerTarget { index: 0 });
            }
            Ok(num_total / den_total)
        }
    }
}

/// NMSE in dB.
pub fn nmse_db(nmse: f64) -> f64 {
    10.0 * nmse.log10()
}
