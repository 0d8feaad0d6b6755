//! Batch losses for training on noisy labels: plain L2, raw inverse-variance (IV),
//! batch inverse-variance (BIV) with a variance floor epsilon, and hard cutoff
//! filtering. All of them are weighted squared errors; they differ only in how the
//! per-sample weights are built from the reported noise variances.

use crate::error::{BivError, Result};

/// Which per-sample weights to apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightingScheme {
    /// Uniform weights 1/K.
    L2,
    /// Raw weights 1/sigma2 (scaled by 1/K), no normalization. Diverges as
    /// sigma2 -> 0 by design; a zero variance is an error.
    Iv,
    /// Weights 1/(sigma2 + epsilon), normalized to sum to one over the batch.
    Biv { epsilon: f64 },
    /// Indicator weights sigma2 < c, normalized by the number of surviving samples.
    Cutoff { c: f64 },
}

impl WeightingScheme {
    /// (scheme name, hyperparameter) for table rows and file names.
    pub fn label(&self) -> (String, String) {
        match self {
            WeightingScheme::L2 => ("l2".into(), String::new()),
            WeightingScheme::Iv => ("iv".into(), String::new()),
            WeightingScheme::Biv { epsilon } => ("biv".into(), format!("{epsilon}")),
            WeightingScheme::Cutoff { c } => ("cutoff".into(), format!("{c}")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightingScheme::Biv { epsilon } => {
                // epsilon = 0 is allowed for ablations and fails only on zero variances
                if epsilon < 0.0 {
                    return Err(BivError::config(format!(
                        "biv: epsilon must be >= 0, got {epsilon}"
                    )));
                }
            }
            WeightingScheme::Cutoff { c } => {
                if !(c > 0.0) {
                    return Err(BivError::config(format!(
                        "cutoff: threshold must be > 0, got {c}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Loss, weights and gradient of one weighted batch.
///
/// `loss` = sum_k weights[k] * (pred_k - label_k)^2 and `grad[k]` is its derivative
/// wrt pred_k, so the triple is consistent for any scheme. For L2/BIV/Cutoff the
/// weights sum to one; for IV they are the raw 1/sigma2 divided by K.
#[derive(Debug, Clone)]
pub struct BatchLossResult {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub effective_batch_size: f64,
    pub grad: Vec<f64>,
}

fn check_lengths(predictions: &[f64], labels: &[f64], sigma2s: &[f64]) -> Result<usize> {
    let k = predictions.len();
    if k == 0 {
        return Err(BivError::Shape("empty batch".into()));
    }
    if labels.len() != k || sigma2s.len() != k {
        return Err(BivError::Shape(format!(
            "batch lengths differ: {k} predictions, {} labels, {} variances",
            labels.len(),
            sigma2s.len()
        )));
    }
    Ok(k)
}

fn weighted_result(predictions: &[f64], labels: &[f64], weights: Vec<f64>) -> BatchLossResult {
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(weights.len());
    for ((&p, &y), &w) in predictions.iter().zip(labels).zip(&weights) {
        let r = p - y;
        loss += w * r * r;
        grad.push(2.0 * w * r);
    }
    let ebs = kish(&weights);
    BatchLossResult {
        loss,
        weights,
        effective_batch_size: ebs,
        grad,
    }
}

fn kish(weights: &[f64]) -> f64 {
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    sum * sum / sum_sq
}

/// Batch inverse-variance loss: weights 1/(sigma2+epsilon) normalized over the
/// batch. With identical variances this is exactly the mean squared error.
pub fn biv_batch_loss(
    predictions: &[f64],
    noisy_labels: &[f64],
    sigma2s: &[f64],
    epsilon: f64,
) -> Result<BatchLossResult> {
    let k = check_lengths(predictions, noisy_labels, sigma2s)?;
    let mut inv = Vec::with_capacity(k);
    for &s2 in sigma2s {
        let denom = s2 + epsilon;
        if denom <= 0.0 {
            return Err(BivError::ZeroVariance);
        }
        inv.push(1.0 / denom);
    }
    let total: f64 = inv.iter().sum();
    for w in &mut inv {
        *w /= total;
    }
    Ok(weighted_result(predictions, noisy_labels, inv))
}

/// Raw inverse-variance loss of one sample: (pred - label)^2 / sigma2.
pub fn iv_sample_loss(prediction: f64, noisy_label: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(BivError::ZeroVariance);
    }
    let r = prediction - noisy_label;
    Ok(r * r / sigma2)
}

/// Mean squared error over the samples with sigma2 < c; the rest get weight zero.
pub fn cutoff_batch_loss(
    predictions: &[f64],
    noisy_labels: &[f64],
    sigma2s: &[f64],
    c: f64,
) -> Result<BatchLossResult> {
    let k = check_lengths(predictions, noisy_labels, sigma2s)?;
    if !(c > 0.0) {
        return Err(BivError::config(format!(
            "cutoff: threshold must be > 0, got {c}"
        )));
    }
    let valid = sigma2s.iter().filter(|&&s2| s2 < c).count();
    if valid == 0 {
        return Err(BivError::EmptyCutoffBatch);
    }
    let w = 1.0 / valid as f64;
    let weights: Vec<f64> = (0..k)
        .map(|i| if sigma2s[i] < c { w } else { 0.0 })
        .collect();
    Ok(weighted_result(predictions, noisy_labels, weights))
}

/// Kish effective batch size (sum w)^2 / (sum w^2). Equals N for uniform weights
/// and 1 when a single weight dominates.
pub fn effective_batch_size(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() || weights.iter().any(|&w| w < 0.0) {
        return Err(BivError::Shape(
            "effective batch size needs nonnegative weights".into(),
        ));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(BivError::Shape(
            "effective batch size of all-zero weights".into(),
        ));
    }
    Ok(kish(weights))
}

/// Dispatch over the four schemes.
pub fn batch_loss(
    scheme: WeightingScheme,
    predictions: &[f64],
    noisy_labels: &[f64],
    sigma2s: &[f64],
) -> Result<BatchLossResult> {
    match scheme {
        WeightingScheme::L2 => {
            let k = check_lengths(predictions, noisy_labels, sigma2s)?;
            let weights = vec![1.0 / k as f64; k];
            Ok(weighted_result(predictions, noisy_labels, weights))
        }
        WeightingScheme::Biv { epsilon } => {
            biv_batch_loss(predictions, noisy_labels, sigma2s, epsilon)
        }
        WeightingScheme::Cutoff { c } => cutoff_batch_loss(predictions, noisy_labels, sigma2s, c),
        WeightingScheme::Iv => {
            let k = check_lengths(predictions, noisy_labels, sigma2s)?;
            let mut weights = Vec::with_capacity(k);
            for &s2 in sigma2s {
                if !(s2 > 0.0) {
                    return Err(BivError::ZeroVariance);
                }
                weights.push(1.0 / (s2 * k as f64));
            }
            Ok(weighted_result(predictions, noisy_labels, weights))
        }
    }
}
