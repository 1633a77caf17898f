//! Slide-level point sets: per-point 3-D coordinates plus a feature vector,
//! and a binary slide label.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointSetError(pub String);

impl core::fmt::Display for PointSetError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "point set error: {}", self.0)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PointSetError {}

/// One slide: `n` points with 3-D coordinates (z fixed at 1 by the data
/// pipeline), an `n x d` feature matrix, and a binary label.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    n: usize,
    d: usize,
    /// Row-major `n x 3`.
    coords: Vec<f64>,
    /// Row-major `n x d`.
    features: Vec<f64>,
    label: u8,
}

impl PointSet {
    pub fn new(
        coords: Vec<f64>,
        features: Vec<f64>,
        d: usize,
        label: u8,
    ) -> Result<Self, PointSetError> {
        if label > 1 {
            return Err(PointSetError(format!("label must be 0 or 1, got {label}")));
        }
        if coords.len() % 3 != 0 {
            return Err(PointSetError(format!(
                "coords length {} is not a multiple of 3",
                coords.len()
            )));
        }
        let n = coords.len() / 3;
        if d == 0 || features.len() != n * d {
            return Err(PointSetError(format!(
                "features length {} does not match {n} points x {d} dims",
                features.len()
            )));
        }
        Ok(PointSet {
            n,
            d,
            coords,
            features,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn coord(&self, i: usize) -> &[f64] {
        &self.coords[i * 3..(i + 1) * 3]
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    /// New point set keeping only the rows in `indices` (in that order).
    pub fn select(&self, indices: &[usize]) -> PointSet {
        let mut coords = Vec::with_capacity(indices.len() * 3);
        let mut features = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            coords.extend_from_slice(self.coord(i));
            features.extend_from_slice(self.feature(i));
        }
        PointSet {
            n: indices.len(),
            d: self.d,
            coords,
            features,
            label: self.label,
        }
    }
}

/// Ordered distinct indices into a [`PointSet`], as produced by the
/// farthest-point / farthest-cosine samplers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleIndex {
    indices: Vec<usize>,
}

impl SampleIndex {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self, PointSetError> {
        let mut seen = alloc::collections::BTreeSet::new();
        for &i in &indices {
            if i >= n {
                return Err(PointSetError(format!("index {i} out of range for {n} points")));
            }
            if !seen.insert(i) {
                return Err(PointSetError(format!("duplicate index {i}")));
            }
        }
        Ok(SampleIndex { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.contains(&i)
    }
}
