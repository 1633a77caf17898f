//! Training-time point augmentation: per-point dropout, coordinate jitter,
//! global scaling and shifting.
//!
//! Only coordinates are touched; features pass through unchanged. The z
//! coordinate is a constant marker (always 1) and is never transformed.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::points::PointSet;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentConfigError(pub String);

impl core::fmt::Display for AugmentConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "augment config error: {}", self.0)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for AugmentConfigError {}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Per-point probability of being dropped; a dropped point takes the
    /// coordinates of the first point, keeping the count constant.
    pub dropout_prob: f64,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    pub scale_range: (f64, f64),
    /// Shift drawn uniformly from `[-shift_range, shift_range]` per axis.
    pub shift_range: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            dropout_prob: 0.1,
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
            scale_range: (0.8, 1.25),
            shift_range: 0.1,
        }
    }
}

impl AugmentConfig {
    /// A configuration that leaves every slide unchanged.
    pub fn identity() -> Self {
        AugmentConfig {
            dropout_prob: 0.0,
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
            scale_range: (1.0, 1.0),
            shift_range: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentConfigError> {
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(AugmentConfigError(format!(
                "dropout_prob must be in [0,1], got {}",
                self.dropout_prob
            )));
        }
        if self.jitter_sigma < 0.0 || self.jitter_clip < 0.0 {
            return Err(AugmentConfigError(format!(
                "jitter sigma/clip must be non-negative, got {}/{}",
                self.jitter_sigma, self.jitter_clip
            )));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(AugmentConfigError(format!(
                "scale range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if self.shift_range < 0.0 {
            return Err(AugmentConfigError(format!(
                "shift_range must be non-negative, got {}",
                self.shift_range
            )));
        }
        Ok(())
    }
}

/// Apply dropout, jitter, scale and shift (in that order) to the x and y
/// coordinates. Draw order is fixed, so equal seeds give bitwise-equal
/// output.
pub fn augment(
    points: &PointSet,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<PointSet, AugmentConfigError> {
    cfg.validate()?;
    let n = points.len();
    let mut coords = points.coords().to_vec();
    if n > 0 {
        let first: [f64; 2] = [coords[0], coords[1]];
        for i in 0..n {
            if rng.bernoulli(cfg.dropout_prob) {
                coords[i * 3] = first[0];
                coords[i * 3 + 1] = first[1];
            }
        }
        for i in 0..n {
            for axis in 0..2 {
                let j = (cfg.jitter_sigma * rng.normal())
                    .clamp(-cfg.jitter_clip, cfg.jitter_clip);
                coords[i * 3 + axis] += j;
            }
        }
        let scale = rng.uniform(cfg.scale_range.0, cfg.scale_range.1);
        let shift = [
            rng.uniform(-cfg.shift_range, cfg.shift_range),
            rng.uniform(-cfg.shift_range, cfg.shift_range),
        ];
        for i in 0..n {
            for axis in 0..2 {
                coords[i * 3 + axis] = coords[i * 3 + axis] * scale + shift[axis];
            }
        }
    }
    let features: Vec<f64> = points.features().to_vec();
    Ok(PointSet::new(coords, features, points.feature_dim(), points.label())
        .expect("augment preserves dimensions"))
}
