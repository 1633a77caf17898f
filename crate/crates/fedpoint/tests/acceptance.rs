//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers (visible under `--nocapture`). The heavyweight tests
//! serialize on a mutex so wall-clock budgets are measured fairly.

use std::sync::Mutex;
use std::time::Instant;

use fedpoint::config::RunConfig;
use fedpoint::experiment::{build_sites, prepare, train_prepared, Mode};
use fedpoint::gradsuite;
use fedpoint_core::dda::{draw_masks, mask_probability, DdaSchedule};
use fedpoint_core::fed::{self, aggregate, eval_auc, FedConfig, SiteBundle};
use fedpoint_core::metrics::auc;
use fedpoint_core::model::{ModelConfig, ModelWeights, SamplingMode};
use fedpoint_core::oracles;
use fedpoint_core::points::PointSet;
use fedpoint_core::rng::Rng;
use fedpoint_core::sampling::{self, cosine_distance, fcs, fps};
use fedpoint_core::synth::{generate_site, SiteSpec};

static HEAVY: Mutex<()> = Mutex::new(());

fn pass(criterion: usize, detail: &str) {
    println!("acceptance criterion {criterion:2}: PASS - {detail}");
}

// ---- criterion 1: gradient suite -------------------------------------------

#[test]
fn criterion_01_gradient_suite() {
    let _guard = HEAVY.lock().unwrap();
    let t0 = Instant::now();
    let checks = gradsuite::run_suite();
    let elapsed = t0.elapsed();
    for c in &checks {
        assert!(
            c.passed(),
            "{}: max rel err {} over tolerance {}",
            c.name,
            c.max_rel_err,
            c.tolerance
        );
    }
    let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    assert!(
        elapsed.as_secs_f64() < 60.0,
        "gradient suite took {elapsed:?}, budget is 60 s"
    );
    pass(
        1,
        &format!(
            "every primitive and the full model match finite differences (worst rel err {worst:.2e}, {elapsed:.1?})"
        ),
    );
}

// ---- criterion 2: sampling oracles ------------------------------------------

fn random_points(n: usize, d: usize, rng: &mut Rng, gridded: bool) -> PointSet {
    let coords: Vec<f64> = if gridded {
        (0..n)
            .flat_map(|_| [(rng.below(5) as f64) * 0.25, (rng.below(5) as f64) * 0.25, 1.0])
            .collect()
    } else {
        (0..n).flat_map(|_| [rng.next_f64(), rng.next_f64(), 1.0]).collect()
    };
    let feats: Vec<f64> = if gridded {
        (0..n * d).map(|_| (rng.below(3) as f64) - 1.0).collect()
    } else {
        (0..n * d).map(|_| rng.normal()).collect()
    };
    PointSet::new(coords, feats, d, 0).unwrap()
}

#[test]
fn criterion_02_sampling_oracles() {
    let mut rng = Rng::from_seed(20_2024);
    // 200 random instances (every fourth with quantized ties), n <= 256
    for trial in 0..200 {
        let n = 4 + rng.below(253);
        let d = 3 + rng.below(6);
        let ps = random_points(n, d, &mut rng, trial % 4 == 0);
        let m = 1 + rng.below(n);
        let start = rng.below(n);

        let got_fps = fps(&ps, m, start).unwrap();
        let dist_pos = |i: usize, j: usize| {
            let (a, b) = (ps.coord(i), ps.coord(j));
            a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>()
        };
        assert_eq!(
            got_fps.indices(),
            &oracles::brute_max_min(n, m, start, dist_pos)[..],
            "fps trial {trial}"
        );

        let got_fcs = fcs(&ps, m, start).unwrap();
        let dist_cos = |i: usize, j: usize| cosine_distance(ps.feature(i), ps.feature(j));
        assert_eq!(
            got_fcs.indices(),
            &oracles::brute_max_min(n, m, start, dist_cos)[..],
            "fcs trial {trial}"
        );
    }
    // k-NN equals the sort oracle exactly up to n = 512
    for trial in 0..60 {
        let n = 2 + rng.below(511);
        let ps = random_points(n, 4, &mut rng, trial % 3 == 0);
        let k = 1 + rng.below(n.min(24));
        let queries: Vec<usize> = (0..3.min(n)).map(|_| rng.below(n)).collect();
        for (data, dim) in [(ps.coords(), 3), (ps.features(), 4)] {
            let got = sampling::knn_indices(data, dim, &queries, k).unwrap();
            for (qi, &q) in queries.iter().enumerate() {
                assert_eq!(
                    &got[qi * k..(qi + 1) * k],
                    &oracles::brute_knn(data, dim, q, k)[..k],
                    "knn trial {trial} n={n}"
                );
            }
        }
    }
    pass(2, "FPS/FCS match brute-force max-min on 200 instances; k-NN exact to n = 512");
}

// ---- criterion 3: FCS minority coverage -------------------------------------

fn minority_slide(seed: u64, n: usize, n_minority: usize) -> (PointSet, usize) {
    let d = 8;
    let (radius, sigma, bg_norm, signal) = (0.10, 0.4, 3.0, 2.0);
    let mut rng = Rng::stream(seed, "coverage", &[]);
    let u = rng.unit_vector(d);
    let mut v = rng.unit_vector(d);
    let dot: f64 = u.iter().zip(&v).map(|(&a, &b)| a * b).sum();
    for (vi, &ui) in v.iter_mut().zip(&u) {
        *vi -= dot * ui;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);

    let mut coords = Vec::with_capacity(n * 3);
    let mut feats = Vec::with_capacity(n * d);
    for _ in 0..n - n_minority {
        coords.extend_from_slice(&[rng.next_f64(), rng.next_f64(), 1.0]);
        for ui in &u {
            feats.push(bg_norm * ui + sigma * rng.normal());
        }
    }
    // the minority cluster sits spatially inside the majority's region
    let cx = rng.uniform(0.2, 0.8);
    let cy = rng.uniform(0.2, 0.8);
    for _ in 0..n_minority {
        let ang = rng.uniform(0.0, std::f64::consts::TAU);
        let rr: f64 = radius * rng.next_f64().sqrt();
        coords.extend_from_slice(&[cx + rr * ang.cos(), cy + rr * ang.sin(), 1.0]);
        for (ui, vi) in u.iter().zip(&v) {
            feats.push(bg_norm * ui + signal * vi + sigma * rng.normal());
        }
    }
    (PointSet::new(coords, feats, d, 1).unwrap(), n - n_minority)
}

#[test]
fn criterion_03_fcs_minority_coverage() {
    let n = 64;
    let n_minority = 6; // ~10%
    let m = n / 4;
    let mut fcs_hits = 0;
    let mut fps_hits = 0;
    for seed in 0..100u64 {
        let (slide, minority_from) = minority_slide(seed, n, n_minority);
        if fcs(&slide, m, 0).unwrap().indices().iter().any(|&i| i >= minority_from) {
            fcs_hits += 1;
        }
        if fps(&slide, m, 0).unwrap().indices().iter().any(|&i| i >= minority_from) {
            fps_hits += 1;
        }
    }
    assert!(fcs_hits >= 99, "FCS covered the minority in only {fcs_hits}/100 slides");
    assert!(fps_hits < 80, "FPS covered the minority in {fps_hits}/100 slides, expected < 80");
    pass(
        3,
        &format!("minority cluster reached by FCS in {fcs_hits}/100 vs FPS in {fps_hits}/100 slides"),
    );
}

// ---- criterion 4: DDA schedule ----------------------------------------------

#[test]
fn criterion_04_dda_schedule() {
    let mut rng = Rng::from_seed(44);
    for _ in 0..100 {
        let gamma = 1.0 + 9.0 * rng.next_f64();
        let k_total = 1 + rng.below(400);
        let sched = DdaSchedule::new(gamma, k_total, true).unwrap();
        assert_eq!(mask_probability(0, &sched).unwrap(), 1.0 / gamma, "b(0) exact");
        assert_eq!(mask_probability(k_total, &sched).unwrap(), 1.0, "b(K) exact");
        let mut prev = 0.0;
        for k in 0..=k_total {
            let b = mask_probability(k, &sched).unwrap();
            assert!(b >= prev, "monotonicity at k={k} gamma={gamma} K={k_total}");
            assert!((1.0 / gamma..=1.0).contains(&b));
            prev = b;
        }
    }

    // empirical masked imbalance tracks b * gamma within 3 sigma at 10,000
    let gamma = 4.0;
    let positives = 2000usize;
    let negatives = 8000usize;
    let mut labels = vec![1u8; positives];
    labels.extend(vec![0u8; negatives]);
    let sched = DdaSchedule::new(gamma, 100, true).unwrap();
    let mut mask_rng = Rng::from_seed(4444);
    for k in [0usize, 25, 50, 75, 100] {
        let b = mask_probability(k, &sched).unwrap();
        let masks = draw_masks(&labels, b, &mut mask_rng);
        let kept_neg: f64 = masks[positives..].iter().sum();
        let ratio = kept_neg / positives as f64;
        let sigma = (negatives as f64 * b * (1.0 - b)).max(1e-12).sqrt() / positives as f64;
        assert!(
            (ratio - b * gamma).abs() <= 3.0 * sigma + 1e-9,
            "k={k}: masked imbalance {ratio} vs b*gamma {}",
            b * gamma
        );
    }
    pass(4, "b(0)=1/g and b(K)=1 exact, monotone over 100 sweeps; masked imbalance tracks b*g within 3 sigma");
}

// ---- criterion 5: federated equivalences ------------------------------------

fn tiny_model() -> ModelConfig {
    ModelConfig {
        n_points: 16,
        d_in: 4,
        base_width: 4,
        k_neighbors: 4,
        sampling: SamplingMode::Fcs,
        ..ModelConfig::default()
    }
}

fn tiny_site(seed: u64, n_slides: usize) -> SiteBundle {
    let mut rng = Rng::stream(seed, "acc-site", &[]);
    let dir_a = rng.unit_vector(4);
    let dir_b = rng.unit_vector(4);
    let dir_c = rng.unit_vector(4);
    let spec = SiteSpec {
        name: format!("site-{seed}"),
        n_slides,
        gamma: 1.5,
        n_points_range: (20, 40),
        base_offset: dir_c.iter().map(|&x| 2.0 * x).collect(),
        site_shift: dir_a.iter().map(|&x| 0.7 * x).collect(),
        signal_direction: dir_b,
        signal_strength: 2.0,
        n_clusters_range: (1, 2),
        cluster_radius: 0.15,
        noise_sigma: 0.5,
    };
    let slides = generate_site(&spec, &mut rng).unwrap();
    let (val, train) = slides.split_at(4);
    SiteBundle {
        name: format!("site-{seed}"),
        train: train.to_vec(),
        val: val.to_vec(),
    }
}

#[test]
fn criterion_05_federated_equivalences() {
    let model_cfg = tiny_model();

    // (a) single-site federated training is bitwise-identical to local
    let bundle = tiny_site(6, 12);
    let mut fed_cfg = FedConfig::new(4, 1, 42);
    fed_cfg.warmup_epochs = 2;
    fed_cfg.batch_size = 4;
    let fed_run = fed::run(&model_cfg, &fed_cfg, vec![bundle.clone()]).unwrap();
    let mut local_cfg = fed_cfg.clone();
    local_cfg.federated = false;
    let local_run = fed::run(&model_cfg, &local_cfg, vec![bundle]).unwrap();
    assert_eq!(
        fed_run.site_weights[0].max_abs_diff(&local_run.site_weights[0]),
        0.0,
        "single-site federated diverged from centralized"
    );
    let fed_hist: Vec<f64> = fed_run.history.iter().map(|r| r.loss_cls).collect();
    let local_hist: Vec<f64> = local_run.history.iter().map(|r| r.loss_cls).collect();
    assert_eq!(fed_hist, local_hist, "training histories diverged");

    // (b) after a sync, synced tensors agree across sites and aux diverges
    let mut two_cfg = FedConfig::new(3, 3, 43);
    two_cfg.warmup_epochs = 1;
    two_cfg.batch_size = 4;
    let out = fed::run(&model_cfg, &two_cfg, vec![tiny_site(7, 12), tiny_site(8, 12)]).unwrap();
    let (a, b) = (&out.site_weights[0], &out.site_weights[1]);
    for (ea, eb) in a.entries().iter().zip(b.entries()) {
        if ea.synced {
            assert_eq!(ea.tensor, eb.tensor, "synced tensor {} differs after sync", ea.name);
        }
    }
    let aux_gap = a
        .get("f_aux.w")
        .data()
        .iter()
        .zip(b.get("f_aux.w").data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(aux_gap > 0.0, "aux heads should differ across sites");

    // (c) sync count = floor(K/E) across the pace sweep
    for pace in [1usize, 2, 4, 8, 16, 32] {
        let mut cfg = FedConfig::new(64, pace, 44);
        cfg.warmup_epochs = 2;
        cfg.batch_size = 8;
        let run = fed::run(&model_cfg, &cfg, vec![tiny_site(9, 10)]).unwrap();
        assert_eq!(run.sync_epochs.len(), 64 / pace, "pace {pace}");
    }
    pass(5, "M=1 bitwise equals centralized; sync equalizes synced tensors only; sync count = floor(K/E) for E in 1..32");
}

// ---- criterion 6: aggregation algebra ----------------------------------------

#[test]
fn criterion_06_aggregation_algebra() {
    let cfg = tiny_model();
    let mut rng = Rng::stream(66, "init", &[]);
    let mut a = ModelWeights::init(&cfg, &mut rng).unwrap();
    let mut b = a.clone();
    a.get_mut("f_c.w").data_mut().fill(0.0);
    b.get_mut("f_c.w").data_mut().fill(2.0);
    let mean = aggregate(&[&a, &b], &[5, 5]).unwrap();
    assert!(mean.get("f_c.w").data().iter().all(|&v| v == 1.0));

    a.get_mut("f_c.w").data_mut().fill(0.0);
    b.get_mut("f_c.w").data_mut().fill(4.0);
    let weighted = aggregate(&[&a, &b], &[1, 3]).unwrap();
    assert!(weighted.get("f_c.w").data().iter().all(|&v| v == 3.0));

    let w = ModelWeights::init(&cfg, &mut rng).unwrap();
    let identity = aggregate(&[&w, &w, &w], &[3, 5, 9]).unwrap();
    let drift = identity.max_abs_diff(&w);
    assert!(drift <= 1e-15, "identity aggregation drifted by {drift}");
    pass(6, &format!("weighted means exact; aggregating identical weights drifts by {drift:.1e} <= 1e-15"));
}

// ---- criterion 7: scaled synthetic experiment ---------------------------------

fn experiment_config(seed: u64, split_seed: u64) -> RunConfig {
    let text = format!(
        "[run]\nseed = {seed}\n\
         [data]\nfeature_dim = 8\nbase_norm = 3.0\nnoise_sigma = 0.7\nsignal_strength = 2.0\ncluster_radius = 0.1\n\
         [model]\nn_points = 256\nbase_width = 8\nk_neighbors = 16\n\
         [fed]\nepochs = 60\npace = 1\nwarmup = 10\nbatch_size = 8\nsplit_seed = {split_seed}\n\
         [site.A]\ngamma = 5.7\nslides = 98\nshift_norm = 1.0\n\
         [site.B]\ngamma = 3.1\nslides = 110\nshift_norm = 1.0\n\
         [site.C]\ngamma = 1.9\nslides = 63\nshift_norm = 1.0\n\
         [site.D]\ngamma = 1.5\nslides = 64\nshift_norm = 1.0\n"
    );
    RunConfig::from_text(&text).unwrap()
}

#[test]
fn criterion_07_scaled_experiment() {
    let _guard = HEAVY.lock().unwrap();
    let t0 = Instant::now();
    let data_seed = 31_337u64;
    let modes = [Mode::Base, Mode::Fcs, Mode::DdaFcs, Mode::NoFed];
    let mut mean_auc = vec![[0.0f64; 4]; 5]; // [split][mode]

    for split_seed in 0..5u64 {
        let cfg = experiment_config(data_seed, split_seed);
        let sites = build_sites(&cfg).unwrap();
        let data = prepare(&sites, split_seed, 1.0).unwrap();
        for (mi, &mode) in modes.iter().enumerate() {
            let outcome = train_prepared(&cfg, mode, &data).unwrap();
            let mut aucs = Vec::new();
            if mode.federated() {
                let w = &outcome.checkpoints[0].1.weights;
                for (_, test) in &data.test_sets {
                    aucs.push(eval_auc(w, &outcome.model_cfg, test, cfg.seed, 0).unwrap().unwrap());
                }
            } else {
                for (i, (_, test)) in data.test_sets.iter().enumerate() {
                    let w = &outcome.checkpoints[i].1.weights;
                    aucs.push(eval_auc(w, &outcome.model_cfg, test, cfg.seed, 0).unwrap().unwrap());
                }
            }
            mean_auc[split_seed as usize][mi] = aucs.iter().sum::<f64>() / aucs.len() as f64;
        }
        println!(
            "  split {split_seed}: base {:.3} fcs {:.3} dda-fcs {:.3} nofed {:.3}",
            mean_auc[split_seed as usize][0],
            mean_auc[split_seed as usize][1],
            mean_auc[split_seed as usize][2],
            mean_auc[split_seed as usize][3]
        );
    }
    let elapsed = t0.elapsed();

    // (a) every trained variant beats chance with mean test AUC >= 0.80
    for (mi, &mode) in modes.iter().enumerate() {
        let mean: f64 = mean_auc.iter().map(|row| row[mi]).sum::<f64>() / 5.0;
        assert!(
            mean >= 0.80,
            "{} mean test AUC over splits is {mean:.3}, below 0.80",
            mode.name()
        );
    }
    // (b) base <= base+FCS and base <= DDA+FCS in at least 4 of 5 splits
    let fcs_wins = mean_auc.iter().filter(|row| row[0] <= row[1]).count();
    let ddafcs_wins = mean_auc.iter().filter(|row| row[0] <= row[2]).count();
    assert!(fcs_wins >= 4, "base <= base+FCS held in only {fcs_wins}/5 splits");
    assert!(ddafcs_wins >= 4, "base <= DDA+FCS held in only {ddafcs_wins}/5 splits");
    // (c) local-only training does not beat federated training
    let nofed_bounded = mean_auc.iter().filter(|row| row[3] <= row[0].max(row[1]).max(row[2])).count();
    assert!(nofed_bounded >= 4, "NoFed <= federated held in only {nofed_bounded}/5 splits");

    assert!(
        elapsed.as_secs_f64() < 1800.0,
        "experiment took {elapsed:?}, budget is 30 minutes"
    );
    let grand: f64 = mean_auc.iter().flat_map(|r| r.iter()).sum::<f64>() / 20.0;
    pass(
        7,
        &format!(
            "4 variants x 5 splits trained (grand mean AUC {grand:.3}); orderings held {fcs_wins}/5 and {ddafcs_wins}/5, NoFed bounded {nofed_bounded}/5; {elapsed:.0?}"
        ),
    );
}

// ---- criterion 8: stability harness -------------------------------------------

#[test]
fn criterion_08_stability_harness() {
    let _guard = HEAVY.lock().unwrap();
    let cfg = experiment_config(5_0911, 0);
    let sites = build_sites(&cfg).unwrap();
    let data = prepare(&sites, 0, 1.0).unwrap();
    let mut small = cfg.clone();
    small.epochs = 24;
    let outcome = train_prepared(&small, Mode::DdaFcs, &data).unwrap();
    let weights = &outcome.checkpoints[0].1.weights;

    let mut means = Vec::with_capacity(100);
    for repeat in 0..100u64 {
        let mut aucs = Vec::new();
        for (_, test) in &data.test_sets {
            aucs.push(
                eval_auc(weights, &outcome.model_cfg, test, cfg.seed, repeat)
                    .unwrap()
                    .unwrap(),
            );
        }
        means.push(aucs.iter().sum::<f64>() / aucs.len() as f64);
    }
    let summary = fedpoint_core::metrics::repeat_summary(&means).unwrap();
    assert!(
        summary.spread <= 0.05,
        "AUC spread over 100 stochastic evaluations is {:.4}, budget 0.05",
        summary.spread
    );
    pass(
        8,
        &format!(
            "100 stochastic evaluations: mean {:.3} +/- {:.4}, max-min {:.4} <= 0.05",
            summary.mean, summary.std, summary.spread
        ),
    );
}

// ---- criterion 9: AUC oracle ----------------------------------------------------

#[test]
fn criterion_09_auc_oracle() {
    let mut rng = Rng::from_seed(99);
    for trial in 0..1000 {
        let n = 2 + rng.below(499);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.bernoulli(0.35))).collect();
        labels[0] = 1;
        labels[n - 1] = 0;
        let scores: Vec<f64> = if trial % 2 == 0 {
            (0..n).map(|_| rng.next_f64()).collect()
        } else {
            (0..n).map(|_| (rng.below(7) as f64) / 6.0).collect()
        };
        let got = auc(&scores, &labels).unwrap();
        let want = oracles::pairwise_auc(&scores, &labels);
        assert!(
            (got - want).abs() < 1e-12,
            "trial {trial}: midrank {got} vs pairwise {want}"
        );
    }
    pass(9, "midrank AUC equals exhaustive pairwise counting on 1000 instances within 1e-12");
}

// ---- criterion 10: persistence ---------------------------------------------------

#[test]
fn criterion_10_persistence() {
    let dir = std::env::temp_dir().join(format!("fedpoint-acc10-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();

    // dataset round trip is bit-exact
    let cfg = experiment_config(77, 0);
    let mut sites = build_sites(&cfg).unwrap();
    sites.truncate(2);
    for s in &mut sites {
        s.slides.truncate(6);
    }
    let data_dir = dir.join("data");
    fedpoint::dataset_io::write_dataset(&data_dir, &sites, false).unwrap();
    let back = fedpoint::dataset_io::read_dataset(&data_dir).unwrap();
    assert_eq!(sites, back, "dataset round trip changed bits");

    // corrupted slide files fail loudly
    let victim = data_dir.join("A/slide_0000.fpts");
    let mut bytes = std::fs::read(&victim).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&victim, &bytes).unwrap();
    assert!(fedpoint::dataset_io::read_site(&data_dir.join("A")).is_err());
    bytes[0] ^= 0xff;
    std::fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();
    assert!(fedpoint::dataset_io::read_site(&data_dir.join("A")).is_err());

    // checkpoint round trip reproduces forward outputs bit-exactly
    let model_cfg = tiny_model();
    let mut rng = Rng::stream(10_10, "init", &[]);
    let weights = ModelWeights::init(&model_cfg, &mut rng).unwrap();
    let ckpt = fedpoint::checkpoint::Checkpoint {
        model: model_cfg.clone(),
        weights,
        epoch: 3,
        master_seed: 7,
        split_seed: 0,
        rng_state: Rng::from_seed(5).state(),
    };
    let ckpt_path = dir.join("w.ckpt");
    fedpoint::checkpoint::save(&ckpt_path, &ckpt).unwrap();
    let loaded = fedpoint::checkpoint::load(&ckpt_path).unwrap();
    assert_eq!(ckpt, loaded, "checkpoint round trip changed bits");

    let slide = {
        let mut srng = Rng::from_seed(8);
        let coords: Vec<f64> = (0..16).flat_map(|_| [srng.next_f64(), srng.next_f64(), 1.0]).collect();
        let feats: Vec<f64> = (0..16 * 4).map(|_| srng.normal()).collect();
        PointSet::new(coords, feats, 4, 1).unwrap()
    };
    let score = |w: &ModelWeights| {
        let mut g = fedpoint_core::graph::Graph::new();
        let gw = fedpoint_core::model::GraphWeights::bind(&mut g, w);
        let out = fedpoint_core::model::forward(
            &mut g,
            &gw,
            &slide,
            &model_cfg,
            fedpoint_core::model::Phase::Eval,
        )
        .unwrap();
        out.positive_score(&g)
    };
    let before = score(&ckpt.weights);
    let after = score(&loaded.weights);
    assert_eq!(before.to_bits(), after.to_bits(), "forward after reload is not bit-identical");

    // corrupted checkpoints fail loudly
    let mut cbytes = std::fs::read(&ckpt_path).unwrap();
    cbytes[2] ^= 0x55;
    std::fs::write(&ckpt_path, &cbytes).unwrap();
    assert!(fedpoint::checkpoint::load(&ckpt_path).is_err());

    std::fs::remove_dir_all(dir).unwrap();
    pass(10, "dataset and checkpoint round trips are bit-exact; corrupted files fail loudly");
}
