//! Post-batching timing probe (run explicitly).

use std::time::Instant;

use fedpoint::config::RunConfig;
use fedpoint::experiment::{build_sites, prepare};
use fedpoint_core::fed::{local_epoch, FedConfig, SiteState};
use fedpoint_core::model::{ModelConfig, ModelWeights, SamplingMode};
use fedpoint_core::rng::Rng;

#[test]
#[ignore = "timing probe; run explicitly"]
fn epoch_timing_by_width() {
    let text = "[run]\nseed = 777\n[data]\nfeature_dim = 8\nbase_norm = 3.0\nnoise_sigma = 0.5\nsignal_strength = 2.0\ncluster_radius = 0.1\n\
         [model]\nn_points = 256\nbase_width = 8\nk_neighbors = 16\n\
         [fed]\nepochs = 30\npace = 1\nwarmup = 10\nbatch_size = 8\n\
         [site.B]\ngamma = 3.1\nslides = 110\nshift_norm = 0.75\n";
    let cfg = RunConfig::from_text(text).unwrap();
    let sites = build_sites(&cfg).unwrap();
    let data = prepare(&sites, 0, 1.0).unwrap();
    let n_train = data.bundles[0].train.len();

    for (width, bn_batch) in [(8usize, 4usize), (8, 2), (8, 8), (12, 2), (12, 4)] {
        let model_cfg = ModelConfig {
            n_points: 256,
            d_in: 8,
            base_width: width,
            k_neighbors: 16,
            sampling: SamplingMode::Fcs,
            ..ModelConfig::default()
        };
        let mut fed = FedConfig::new(30, 1, 1);
        fed.bn_batch = bn_batch;
        let mut init = Rng::stream(1, "init", &[]);
        let w = ModelWeights::init(&model_cfg, &mut init).unwrap();
        let mut site = SiteState::new(data.bundles[0].clone(), 0, w).unwrap();
        local_epoch(&mut site, 0, &model_cfg, &fed).unwrap(); // warm
        let t0 = Instant::now();
        for k in 1..4 {
            local_epoch(&mut site, k, &model_cfg, &fed).unwrap();
        }
        let per_slide = t0.elapsed().as_secs_f64() / (3.0 * n_train as f64);
        let full = per_slide * 4.0 * 5.0 * 60.0 * 201.0 / 60.0;
        println!("width {width} bn_batch {bn_batch}: {:.2} ms/slide -> full experiment ~{full:.1} min", per_slide * 1e3);
    }
}
