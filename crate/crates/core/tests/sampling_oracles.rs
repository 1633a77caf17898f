//! Sampling kernels against brute-force oracles: exact k-NN, and max-min
//! farthest sampling in both metric spaces with the lowest-index tie rule.

use fedpoint_core::oracles;
use fedpoint_core::points::PointSet;
use fedpoint_core::rng::Rng;
use fedpoint_core::sampling::{self, cosine_distance, Space};

fn random_points(n: usize, d: usize, rng: &mut Rng) -> PointSet {
    let coords: Vec<f64> = (0..n)
        .flat_map(|_| [rng.next_f64(), rng.next_f64(), 1.0])
        .collect();
    let feats: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
    PointSet::new(coords, feats, d, 0).unwrap()
}

/// Quantized coordinates force distance ties, exercising the index rule.
fn gridded_points(n: usize, d: usize, rng: &mut Rng) -> PointSet {
    let coords: Vec<f64> = (0..n)
        .flat_map(|_| {
            [
                (rng.below(5) as f64) * 0.25,
                (rng.below(5) as f64) * 0.25,
                1.0,
            ]
        })
        .collect();
    let feats: Vec<f64> = (0..n * d)
        .map(|_| (rng.below(3) as f64) - 1.0)
        .collect();
    PointSet::new(coords, feats, d, 0).unwrap()
}

#[test]
fn knn_matches_sort_oracle_on_random_and_tied_inputs() {
    let mut rng = Rng::from_seed(2024);
    for trial in 0..40 {
        let n = 8 + rng.below(505); // up to 512
        let ps = if trial % 3 == 0 {
            gridded_points(n, 4, &mut rng)
        } else {
            random_points(n, 4, &mut rng)
        };
        let k = 1 + rng.below(n.min(20));
        let queries: Vec<usize> = (0..4.min(n)).map(|_| rng.below(n)).collect();
        for space in [Space::Position, Space::Feature] {
            let (data, dim): (&[f64], usize) = match space {
                Space::Position => (ps.coords(), 3),
                Space::Feature => (ps.features(), 4),
            };
            let got = sampling::knn_indices(data, dim, &queries, k).unwrap();
            for (qi, &q) in queries.iter().enumerate() {
                let want = oracles::brute_knn(data, dim, q, k);
                assert_eq!(
                    &got[qi * k..(qi + 1) * k],
                    &want[..],
                    "trial {trial} n={n} k={k} q={q} space {space:?}"
                );
            }
        }
    }
}

#[test]
fn fps_matches_brute_force_max_min() {
    let mut rng = Rng::from_seed(7);
    for trial in 0..100 {
        let n = 4 + rng.below(253); // up to 256
        let ps = if trial % 4 == 0 {
            gridded_points(n, 3, &mut rng)
        } else {
            random_points(n, 3, &mut rng)
        };
        let m = 1 + rng.below(n);
        let start = rng.below(n);
        let got = sampling::fps(&ps, m, start).unwrap();
        let dist = |i: usize, j: usize| {
            let a = ps.coord(i);
            let b = ps.coord(j);
            a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>()
        };
        let want = oracles::brute_max_min(n, m, start, dist);
        assert_eq!(got.indices(), &want[..], "trial {trial} n={n} m={m}");
        assert!(oracles::max_min_greedy_holds(n, got.indices(), dist));
        assert!(got.contains(start));
    }
}

#[test]
fn fcs_matches_brute_force_max_min() {
    let mut rng = Rng::from_seed(8);
    for trial in 0..100 {
        let n = 4 + rng.below(253);
        let d = 3 + rng.below(6);
        let ps = if trial % 4 == 0 {
            gridded_points(n, d, &mut rng)
        } else {
            random_points(n, d, &mut rng)
        };
        let m = 1 + rng.below(n);
        let start = rng.below(n);
        let got = sampling::fcs(&ps, m, start).unwrap();
        let dist = |i: usize, j: usize| cosine_distance(ps.feature(i), ps.feature(j));
        let want = oracles::brute_max_min(n, m, start, dist);
        assert_eq!(got.indices(), &want[..], "trial {trial} n={n} m={m} d={d}");
        assert!(oracles::max_min_greedy_holds(n, got.indices(), dist));
        assert!(got.contains(start));
    }
}

#[test]
fn samplers_never_duplicate_indices() {
    let mut rng = Rng::from_seed(9);
    for _ in 0..20 {
        let n = 4 + rng.below(60);
        let ps = random_points(n, 4, &mut rng);
        let m = 1 + rng.below(n);
        for s in [
            sampling::fps(&ps, m, rng.below(n)).unwrap(),
            sampling::fcs(&ps, m, rng.below(n)).unwrap(),
        ] {
            let mut seen = s.indices().to_vec();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), m);
        }
    }
}

#[test]
fn quarter_sample_default_matches_alg_count() {
    let mut rng = Rng::from_seed(10);
    let ps = random_points(64, 4, &mut rng);
    let m = sampling::quarter_count(ps.len());
    assert_eq!(m, 16);
    let s = sampling::fcs(&ps, m, 0).unwrap();
    assert_eq!(s.len(), 16);
}
