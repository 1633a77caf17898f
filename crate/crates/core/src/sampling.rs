//! Geometry and sampling kernels: cosine distance, exact k-NN, farthest
//! point sampling (max-min in coordinate space) and farthest cosine sampling
//! (max-min in feature space), plus uniform subsampling.
//!
//! Brute force throughout: slides are subsampled to ~1024 points before any
//! of this runs, so acceleration structures would be pure overhead. All tie
//! breaks go to the lowest index, which keeps every routine deterministic.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::math;
use crate::points::{PointSet, SampleIndex};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingError(pub String);

impl core::fmt::Display for SamplingError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "sampling error: {}", self.0)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SamplingError {}

/// Which vectors a metric runs over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Position,
    Feature,
}

/// Cosine distance `1 - (a.b) / max(|a||b|, 1e-8)`; the clamp keeps zero
/// vectors finite. Range [0, 2] for nonzero inputs.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len(), "cosine_distance dimension mismatch");
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = (math::sqrt(na) * math::sqrt(nb)).max(1e-8);
    1.0 - dot / denom
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// k nearest rows of `data` (row-major, `dim` columns) for each query row,
/// by squared Euclidean distance, flattened to `queries.len() * k` indices.
/// The query row itself is eligible; ties break to the lowest index.
pub fn knn_indices(
    data: &[f64],
    dim: usize,
    queries: &[usize],
    k: usize,
) -> Result<Vec<usize>, SamplingError> {
    assert!(dim > 0 && data.len() % dim == 0, "ragged row data");
    let n = data.len() / dim;
    if k == 0 || k > n {
        return Err(SamplingError(format!("k = {k} out of range for {n} points")));
    }
    let mut result = Vec::with_capacity(queries.len() * k);
    // running top-k kept sorted by (distance, index); candidates arrive in
    // index order, so the lowest index wins every distance tie
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for &q in queries {
        if q >= n {
            return Err(SamplingError(format!("query {q} out of range for {n} points")));
        }
        let qv = &data[q * dim..(q + 1) * dim];
        best.clear();
        if dim == 3 {
            let (qx, qy, qz) = (qv[0], qv[1], qv[2]);
            let mut worst = f64::INFINITY;
            for (j, row) in data.chunks_exact(3).enumerate() {
                let dx = qx - row[0];
                let dy = qy - row[1];
                let dz = qz - row[2];
                let d = dx * dx + dy * dy + dz * dz;
                if d >= worst {
                    continue;
                }
                if best.len() == k {
                    best.pop();
                }
                let pos = best.partition_point(|&(bd, _)| bd <= d);
                best.insert(pos, (d, j));
                if best.len() == k {
                    worst = best[k - 1].0;
                }
            }
        } else {
            for j in 0..n {
                let row = &data[j * dim..(j + 1) * dim];
                let d = squared_euclidean(qv, row);
                if best.len() == k {
                    if d >= best[k - 1].0 {
                        continue;
                    }
                    best.pop();
                }
                let pos = best.partition_point(|&(bd, _)| bd <= d);
                best.insert(pos, (d, j));
            }
        }
        result.extend(best.iter().map(|&(_, j)| j));
    }
    Ok(result)
}

/// Exact k nearest neighbours of each query point among all of `base`,
/// by squared Euclidean distance in the chosen space.
pub fn knn(
    base: &PointSet,
    queries: &SampleIndex,
    k: usize,
    space: Space,
) -> Result<Vec<Vec<usize>>, SamplingError> {
    let (data, dim) = match space {
        Space::Position => (base.coords(), 3),
        Space::Feature => (base.features(), base.feature_dim()),
    };
    let flat = knn_indices(data, dim, queries.indices(), k)?;
    Ok(flat.chunks(k).map(|c| c.to_vec()).collect())
}

/// Greedy max-min selection: repeatedly add the point whose minimum distance
/// to the selected set is largest. `dist(i, j)` must be symmetric.
fn max_min_select(
    n: usize,
    m: usize,
    start: usize,
    dist: impl Fn(usize, usize) -> f64,
) -> Result<Vec<usize>, SamplingError> {
    if m == 0 || m > n {
        return Err(SamplingError(format!("cannot sample {m} of {n} points")));
    }
    if start >= n {
        return Err(SamplingError(format!("start {start} out of range for {n} points")));
    }
    let mut selected = Vec::with_capacity(m);
    selected.push(start);
    let mut min_dist: Vec<f64> = (0..n).map(|i| dist(i, start)).collect();
    min_dist[start] = f64::NEG_INFINITY; // never re-selected
    while selected.len() < m {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_dist.iter().enumerate() {
            // strict > keeps the lowest index on ties
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        selected.push(best);
        min_dist[best] = f64::NEG_INFINITY;
        for (i, slot) in min_dist.iter_mut().enumerate() {
            if slot.is_finite() {
                let d = dist(i, best);
                if d < *slot {
                    *slot = d;
                }
            }
        }
    }
    Ok(selected)
}

/// Max-min farthest sampling under squared Euclidean distance over row-major
/// `data` with `dim` columns.
pub fn fps_indices(
    data: &[f64],
    dim: usize,
    m: usize,
    start: usize,
) -> Result<Vec<usize>, SamplingError> {
    assert!(dim > 0 && data.len() % dim == 0, "ragged row data");
    let n = data.len() / dim;
    max_min_select(n, m, start, |i, j| {
        squared_euclidean(&data[i * dim..(i + 1) * dim], &data[j * dim..(j + 1) * dim])
    })
}

/// Max-min farthest sampling under cosine distance over row-major `data`
/// with `dim` columns. Row norms are computed once up front.
pub fn fcs_indices(
    data: &[f64],
    dim: usize,
    m: usize,
    start: usize,
) -> Result<Vec<usize>, SamplingError> {
    assert!(dim > 0 && data.len() % dim == 0, "ragged row data");
    let n = data.len() / dim;
    let norms: Vec<f64> = (0..n)
        .map(|i| {
            let row = &data[i * dim..(i + 1) * dim];
            crate::math::sqrt(row.iter().map(|&x| x * x).sum())
        })
        .collect();
    max_min_select(n, m, start, |i, j| {
        let a = &data[i * dim..(i + 1) * dim];
        let b = &data[j * dim..(j + 1) * dim];
        let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
        1.0 - dot / (norms[i] * norms[j]).max(1e-8)
    })
}

/// Farthest point sampling: max-min selection under Euclidean distance on
/// coordinates.
pub fn fps(points: &PointSet, m: usize, start: usize) -> Result<SampleIndex, SamplingError> {
    let idx = fps_indices(points.coords(), 3, m, start)?;
    Ok(SampleIndex::new(idx, points.len()).expect("max_min_select yields distinct indices"))
}

/// Farthest cosine sampling: max-min selection under cosine distance in
/// feature space. Covers feature-space outliers (for instance a small
/// positive cluster buried in a majority of background points) that
/// coordinate-space sampling can miss.
pub fn fcs(points: &PointSet, m: usize, start: usize) -> Result<SampleIndex, SamplingError> {
    let idx = fcs_indices(points.features(), points.feature_dim(), m, start)?;
    Ok(SampleIndex::new(idx, points.len()).expect("max_min_select yields distinct indices"))
}

/// Sample count used by the abstraction stage when the caller does not pick
/// one: a quarter of the input, rounded up.
pub fn quarter_count(n: usize) -> usize {
    n.div_ceil(4)
}

/// Row with the largest L2 norm, ties to the lowest index. Used as the
/// deterministic sampler start in evaluation mode.
pub fn max_norm_index(data: &[f64], dim: usize) -> usize {
    assert!(dim > 0 && data.len() % dim == 0, "ragged row data");
    let n = data.len() / dim;
    let mut best = 0;
    let mut best_norm = f64::NEG_INFINITY;
    for i in 0..n {
        let norm: f64 = data[i * dim..(i + 1) * dim].iter().map(|&x| x * x).sum();
        if norm > best_norm {
            best_norm = norm;
            best = i;
        }
    }
    best
}

/// Deterministic sampler start for evaluation mode: the point with the
/// largest feature L2 norm, ties to the lowest index.
pub fn deterministic_start(points: &PointSet) -> usize {
    max_norm_index(points.features(), points.feature_dim())
}

/// Uniform subsample to exactly `n_target` points: without replacement when
/// enough points exist, with replacement otherwise.
pub fn subsample(
    points: &PointSet,
    n_target: usize,
    rng: &mut Rng,
) -> Result<PointSet, SamplingError> {
    if points.is_empty() {
        return Err(SamplingError(String::from("cannot subsample an empty point set")));
    }
    if n_target == 0 {
        return Err(SamplingError(String::from("n_target must be positive")));
    }
    let n = points.len();
    let indices: Vec<usize> = if n >= n_target {
        rng.sample_without_replacement(n, n_target)
    } else {
        // keep every original point once, then fill with replacement
        let mut idx: Vec<usize> = (0..n).collect();
        while idx.len() < n_target {
            idx.push(rng.below(n));
        }
        rng.shuffle(&mut idx);
        idx
    };
    Ok(points.select(&indices))
}
