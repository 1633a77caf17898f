//! Synthetic multi-site slide generator and stratified splitting.
//!
//! Each site draws background features around a site-specific offset
//! (simulating staining and preparation differences); positive slides
//! additionally shift the features of points inside a few small spatial
//! disks along a global signal direction, so the positive evidence forms a
//! feature-space minority cluster. All generated values are quantized to f32
//! so the on-disk format round-trips bit-exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::points::PointSet;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthError(pub String);

impl core::fmt::Display for SynthError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "synth error: {}", self.0)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SynthError {}

/// Recipe for one site's slides.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteSpec {
    pub name: String,
    pub n_slides: usize,
    /// Target imbalance ratio (negatives over positives).
    pub gamma: f64,
    pub n_points_range: (usize, usize),
    /// Background feature offset shared by every site: it gives features a
    /// coherent direction, so cosine distances carry structure the way
    /// pretrained extractor features would.
    pub base_offset: Vec<f64>,
    /// Site-specific feature offset added to every point.
    pub site_shift: Vec<f64>,
    /// Shared across sites; positive clusters shift along this direction.
    pub signal_direction: Vec<f64>,
    pub signal_strength: f64,
    pub n_clusters_range: (usize, usize),
    pub cluster_radius: f64,
    pub noise_sigma: f64,
}

impl SiteSpec {
    pub fn feature_dim(&self) -> usize {
        self.site_shift.len()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.gamma < 1.0 {
            return Err(SynthError(format!("gamma must be >= 1, got {}", self.gamma)));
        }
        if self.n_slides < 4 {
            return Err(SynthError(format!(
                "need at least 4 slides, got {}",
                self.n_slides
            )));
        }
        if self.n_points_range.0 == 0 || self.n_points_range.0 > self.n_points_range.1 {
            return Err(SynthError(format!(
                "bad point count range {:?}",
                self.n_points_range
            )));
        }
        if self.site_shift.is_empty()
            || self.site_shift.len() != self.signal_direction.len()
            || self.site_shift.len() != self.base_offset.len()
        {
            return Err(SynthError(String::from(
                "base_offset, site_shift and signal_direction must share a positive dimension",
            )));
        }
        if self.n_clusters_range.0 == 0 || self.n_clusters_range.0 > self.n_clusters_range.1 {
            return Err(SynthError(format!(
                "bad cluster count range {:?}",
                self.n_clusters_range
            )));
        }
        if !(self.cluster_radius > 0.0 && self.cluster_radius < 0.5) {
            return Err(SynthError(format!(
                "cluster radius must be in (0, 0.5), got {}",
                self.cluster_radius
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(SynthError(format!(
                "noise sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Positive count that realizes `gamma` as closely as integer rounding
/// allows: `round(n / (1 + gamma))`.
pub fn positive_count(n_slides: usize, gamma: f64) -> usize {
    math::round(n_slides as f64 / (1.0 + gamma)) as usize
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// Generate one site's slides. Deterministic given the rng state.
pub fn generate_site(spec: &SiteSpec, rng: &mut Rng) -> Result<Vec<PointSet>, SynthError> {
    spec.validate()?;
    let d = spec.feature_dim();
    let n_pos = positive_count(spec.n_slides, spec.gamma);
    if n_pos == 0 || n_pos >= spec.n_slides {
        return Err(SynthError(format!(
            "gamma {} infeasible for {} slides (would give {n_pos} positives)",
            spec.gamma, spec.n_slides
        )));
    }

    let mut labels = vec![1u8; n_pos];
    labels.extend(vec![0u8; spec.n_slides - n_pos]);
    rng.shuffle(&mut labels);

    let mut slides = Vec::with_capacity(spec.n_slides);
    for &label in &labels {
        let (lo, hi) = spec.n_points_range;
        let n = lo + rng.below(hi - lo + 1);

        let mut coords = Vec::with_capacity(n * 3);
        for _ in 0..n {
            coords.push(quantize(rng.next_f64()));
            coords.push(quantize(rng.next_f64()));
            coords.push(1.0);
        }

        let mut features = Vec::with_capacity(n * d);
        for _ in 0..n {
            for (base, shift) in spec.base_offset.iter().zip(&spec.site_shift) {
                features.push(base + shift + spec.noise_sigma * rng.normal());
            }
        }

        if label == 1 {
            let (clo, chi) = spec.n_clusters_range;
            let n_clusters = clo + rng.below(chi - clo + 1);
            let r = spec.cluster_radius;
            let centers: Vec<(f64, f64)> = (0..n_clusters)
                .map(|_| (rng.uniform(r, 1.0 - r), rng.uniform(r, 1.0 - r)))
                .collect();
            let mut hit_any = false;
            for i in 0..n {
                let (x, y) = (coords[i * 3], coords[i * 3 + 1]);
                let inside = centers
                    .iter()
                    .any(|&(cx, cy)| (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r);
                if inside {
                    hit_any = true;
                    for (f, dir) in features[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(&spec.signal_direction)
                    {
                        *f += spec.signal_strength * dir;
                    }
                }
            }
            if !hit_any {
                // a positive slide must carry some evidence: shift the point
                // nearest to the first disk centre
                let (cx, cy) = centers[0];
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for i in 0..n {
                    let (x, y) = (coords[i * 3], coords[i * 3 + 1]);
                    let dist = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    if dist < best_d {
                        best_d = dist;
                        best = i;
                    }
                }
                for (f, dir) in features[best * d..(best + 1) * d]
                    .iter_mut()
                    .zip(&spec.signal_direction)
                {
                    *f += spec.signal_strength * dir;
                }
            }
        }

        for f in &mut features {
            *f = quantize(*f);
        }
        slides.push(
            PointSet::new(coords, features, d, label)
                .expect("generated dimensions are consistent"),
        );
    }
    Ok(slides)
}

/// Imbalance ratio realized by a slide collection.
pub fn realized_gamma(slides: &[PointSet]) -> Option<f64> {
    let pos = slides.iter().filter(|s| s.label() == 1).count();
    let neg = slides.len() - pos;
    if pos == 0 {
        None
    } else {
        Some(neg as f64 / pos as f64)
    }
}

/// Train/validation/test slide indices, stratified by label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    /// Partitions that ended up without one of the classes.
    pub warnings: Vec<String>,
}

/// Largest-remainder apportioning of `n` items across `ratios`.
fn apportion(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    let mut fracs = [(0.0f64, 0usize); 3];
    let mut used = 0;
    for i in 0..3 {
        let target = n as f64 * ratios[i];
        counts[i] = math::floor(target) as usize;
        fracs[i] = (target - counts[i] as f64, i);
        used += counts[i];
    }
    // hand out leftovers by descending fractional part, index order on ties
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut leftover = n - used;
    let mut fi = 0;
    while leftover > 0 {
        counts[fracs[fi % 3].1] += 1;
        leftover -= 1;
        fi += 1;
    }
    counts
}

/// Per-class partition counts such that the partition totals follow the
/// exact largest-remainder apportionment of all slides while each class
/// stays within one slide of its proportional share.
fn stratified_counts(n_by_class: [usize; 2], ratios: &[f64; 3]) -> [[usize; 3]; 2] {
    let n_total = n_by_class[0] + n_by_class[1];
    let global = apportion(n_total, ratios);
    let mut counts = [[0usize; 3]; 2];
    let mut fracs: Vec<(f64, usize, usize)> = Vec::with_capacity(6);
    let mut class_left = [0usize; 2];
    let mut part_left = global;
    for c in 0..2 {
        let mut used = 0;
        for i in 0..3 {
            let target = n_by_class[c] as f64 * ratios[i];
            let fl = math::floor(target) as usize;
            counts[c][i] = fl;
            used += fl;
            fracs.push((target - fl as f64, c, i));
            // sum of class floors never exceeds the apportioned total
            part_left[i] -= fl;
        }
        class_left[c] = n_by_class[c] - used;
    }
    // hand out the leftovers by descending fractional part, respecting both
    // the per-class and per-partition totals
    fracs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    for &(_, c, i) in &fracs {
        if class_left[c] > 0 && part_left[i] > 0 {
            counts[c][i] += 1;
            class_left[c] -= 1;
            part_left[i] -= 1;
        }
    }
    // corner case: a class still owes slides but its best cells were taken
    for c in 0..2 {
        while class_left[c] > 0 {
            let i = (0..3).find(|&i| part_left[i] > 0).expect("totals must balance");
            counts[c][i] += 1;
            class_left[c] -= 1;
            part_left[i] -= 1;
        }
    }
    counts
}

/// Stratified split, deterministic per seed. Ratios must sum to 1.
pub fn split(
    labels: &[u8],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit, SynthError> {
    if labels.len() < 4 {
        return Err(SynthError(format!(
            "need at least 4 slides to split, got {}",
            labels.len()
        )));
    }
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| x < 0.0) || math::abs(r.iter().sum::<f64>() - 1.0) > 1e-9 {
        return Err(SynthError(format!("ratios must sum to 1, got {ratios:?}")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let counts = stratified_counts([n_pos, labels.len() - n_pos], &r);

    let mut rng = Rng::stream(seed, "split", &[]);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (slot, class) in [1u8, 0u8].into_iter().enumerate() {
        let mut ids: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        rng.shuffle(&mut ids);
        let (a, rest) = ids.split_at(counts[slot][0]);
        let (b, c) = rest.split_at(counts[slot][1]);
        train.extend_from_slice(a);
        val.extend_from_slice(b);
        test.extend_from_slice(c);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    let mut warnings = Vec::new();
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        for class in [0u8, 1u8] {
            if !part.iter().any(|&i| labels[i] == class) {
                warnings.push(format!("{name} split has no class-{class} slides"));
            }
        }
    }
    Ok(DatasetSplit {
        train,
        val,
        test,
        seed,
        warnings,
    })
}
