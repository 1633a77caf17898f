//! Nearest-centroid learnability of the experiment recipe (run explicitly).

use fedpoint::config::RunConfig;
use fedpoint::experiment::{build_sites, prepare};
use fedpoint_core::oracles::nearest_centroid_auc;

#[test]
#[ignore = "calibration probe; run explicitly"]
fn centroid_oracle_by_noise() {
    for noise in [0.4f64, 0.5, 0.6, 0.7, 0.8, 1.0] {
        let text = format!(
            "[run]\nseed = 777\n[data]\nfeature_dim = 8\nbase_norm = 3.0\nnoise_sigma = {noise}\nsignal_strength = 2.0\ncluster_radius = 0.1\n\
             [model]\nn_points = 256\nbase_width = 8\n\
             [site.A]\ngamma = 5.7\nslides = 98\nshift_norm = 0.75\n\
             [site.B]\ngamma = 3.1\nslides = 110\nshift_norm = 0.75\n\
             [site.C]\ngamma = 1.9\nslides = 63\nshift_norm = 0.75\n\
             [site.D]\ngamma = 1.5\nslides = 64\nshift_norm = 0.75\n"
        );
        let cfg = RunConfig::from_text(&text).unwrap();
        let sites = build_sites(&cfg).unwrap();
        let data = prepare(&sites, 0, 1.0).unwrap();
        // pooled train across sites, per-site test (the centralized ceiling)
        let train: Vec<_> = data.bundles.iter().flat_map(|b| b.train.iter().cloned()).collect();
        let aucs: Vec<f64> = data
            .test_sets
            .iter()
            .map(|(_, t)| nearest_centroid_auc(&train, t))
            .collect();
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        println!(
            "noise {noise}: centroid oracle mean {mean:.3} per-site {:?}",
            aucs.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
}
