//! Evaluation metrics: ROC-AUC (Mann-Whitney with midrank ties) and
//! repeated-run summary statistics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricError(pub String);

impl core::fmt::Display for MetricError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "metric error: {}", self.0)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MetricError {}

/// Area under the ROC curve via the Mann-Whitney U statistic with midrank
/// tie handling: `P(score+ > score-) + P(score+ = score-) / 2`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError(String::from(
            "AUC needs both classes present",
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(MetricError(format!("labels must be 0/1, got {bad}")));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // midranks (1-based): tied scores share the mean of their rank range
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = midrank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l == 1)
        .map(|(_, &r)| r)
        .sum();
    let pos_f = pos as f64;
    let neg_f = neg as f64;
    let u = rank_sum_pos - pos_f * (pos_f + 1.0) / 2.0;
    Ok(u / (pos_f * neg_f))
}

/// Mean and sample standard deviation (n-1 denominator) of repeated runs.
pub fn repeat_stats(values: &[f64]) -> Result<(f64, f64), MetricError> {
    if values.len() < 2 {
        return Err(MetricError(format!(
            "need at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
    Ok((mean, crate::math::sqrt(ss / (n - 1.0))))
}

/// Stability summary over repeated stochastic evaluations.
#[derive(Clone, Debug, PartialEq)]
pub struct RepeatSummary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub spread: f64,
}

pub fn repeat_summary(values: &[f64]) -> Result<RepeatSummary, MetricError> {
    let (mean, std) = repeat_stats(values)?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RepeatSummary {
        mean,
        std,
        min,
        max,
        spread: max - min,
    })
}
