//! Brute-force reference implementations for tests.
//!
//! These deliberately share no code with the production kernels they check:
//! the neighbour oracle fully sorts every candidate list, the farthest
//! sampling oracle recomputes every candidate-to-subset distance from
//! scratch at each step, and the AUC oracle walks all positive/negative
//! pairs. Compiled only with the `oracles` feature, for test targets.

use alloc::vec::Vec;

/// All rows ordered by (squared distance to `query`, index).
pub fn brute_knn(data: &[f64], dim: usize, query: usize, k: usize) -> Vec<usize> {
    let n = data.len() / dim;
    let q = &data[query * dim..(query + 1) * dim];
    let mut scored: Vec<(f64, usize)> = (0..n)
        .map(|j| {
            let row = &data[j * dim..(j + 1) * dim];
            let d: f64 = q.iter().zip(row).map(|(&a, &b)| (a - b) * (a - b)).sum();
            (d, j)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Greedy max-min selection recomputing every candidate's minimum distance
/// to the selected set at each step. Ties pick the lowest index.
pub fn brute_max_min(
    n: usize,
    m: usize,
    start: usize,
    dist: impl Fn(usize, usize) -> f64,
) -> Vec<usize> {
    let mut selected = alloc::vec![start];
    while selected.len() < m {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for cand in 0..n {
            if selected.contains(&cand) {
                continue;
            }
            let min_d = selected
                .iter()
                .map(|&s| dist(cand, s))
                .fold(f64::INFINITY, f64::min);
            if min_d > best_d {
                best_d = min_d;
                best = cand;
            }
        }
        selected.push(best);
    }
    selected
}

/// For every step t > 0, the chosen point's min distance to the previously
/// selected prefix must be >= that of every point chosen later (and, by the
/// greedy rule, of every unchosen point at that step).
pub fn max_min_greedy_holds(
    n: usize,
    picks: &[usize],
    dist: impl Fn(usize, usize) -> f64,
) -> bool {
    for t in 1..picks.len() {
        let prefix = &picks[..t];
        let chosen_min = prefix
            .iter()
            .map(|&s| dist(picks[t], s))
            .fold(f64::INFINITY, f64::min);
        for cand in 0..n {
            if picks[..=t].contains(&cand) {
                continue;
            }
            let cand_min = prefix
                .iter()
                .map(|&s| dist(cand, s))
                .fold(f64::INFINITY, f64::min);
            if cand_min > chosen_min {
                return false;
            }
        }
    }
    true
}

/// AUC by exhaustive pair counting: wins plus half-ties over all
/// positive/negative pairs.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, (&si, &li)) in scores.iter().zip(labels).enumerate() {
        if li != 1 {
            continue;
        }
        for (&sj, &lj) in scores.iter().zip(labels) {
            if lj != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
        let _ = i;
    }
    wins / pairs
}

/// Slide-level mean feature vector.
pub fn mean_feature(slide: &crate::points::PointSet) -> Vec<f64> {
    let d = slide.feature_dim();
    let mut acc = alloc::vec![0.0; d];
    for i in 0..slide.len() {
        for (a, &f) in acc.iter_mut().zip(slide.feature(i)) {
            *a += f;
        }
    }
    let n = slide.len() as f64;
    acc.into_iter().map(|v| v / n).collect()
}

/// Nearest-centroid classifier on mean slide features: fit class centroids
/// on `train`, score `test` by (distance to negative centroid) minus
/// (distance to positive centroid), and report the pairwise AUC.
pub fn nearest_centroid_auc(
    train: &[crate::points::PointSet],
    test: &[crate::points::PointSet],
) -> f64 {
    let d = train[0].feature_dim();
    let mut centroids = [alloc::vec![0.0; d], alloc::vec![0.0; d]];
    let mut counts = [0.0f64; 2];
    for slide in train {
        let mf = mean_feature(slide);
        let c = slide.label() as usize;
        for (a, &f) in centroids[c].iter_mut().zip(&mf) {
            *a += f;
        }
        counts[c] += 1.0;
    }
    for (c, count) in centroids.iter_mut().zip(counts) {
        c.iter_mut().for_each(|v| *v /= count);
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
    };
    let scores: Vec<f64> = test
        .iter()
        .map(|s| {
            let mf = mean_feature(s);
            dist(&mf, &centroids[0]) - dist(&mf, &centroids[1])
        })
        .collect();
    let labels: Vec<u8> = test.iter().map(|s| s.label()).collect();
    pairwise_auc(&scores, &labels)
}
