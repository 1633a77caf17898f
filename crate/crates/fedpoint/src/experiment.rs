//! Experiment recipes: dataset generation from a config, split/fraction
//! handling, the train/evaluate flows behind the CLI subcommands, and the
//! ablation mode grid.

use std::fmt;
use std::path::Path;

use fedpoint_core::fed::{self, FedConfig, RunResult, SiteBundle};
use fedpoint_core::metrics::{repeat_summary, RepeatSummary};
use fedpoint_core::model::{ModelConfig, ModelWeights, SamplingMode};
use fedpoint_core::points::PointSet;
use fedpoint_core::rng::Rng;
use fedpoint_core::synth::{self, SiteSpec};

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::dataset_io::{self, SiteOnDisk};

#[derive(Debug)]
pub struct ExperimentError(pub String);

impl fmt::Display for ExperimentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "experiment error: {}", self.0)
    }
}

impl std::error::Error for ExperimentError {}

macro_rules! wrap_err {
    ($($ty:ty),*) => {
        $(impl From<$ty> for ExperimentError {
            fn from(e: $ty) -> Self {
                ExperimentError(format!("{e}"))
            }
        })*
    };
}

wrap_err!(
    fedpoint_core::fed::FedError,
    fedpoint_core::synth::SynthError,
    fedpoint_core::model::ModelError,
    fedpoint_core::metrics::MetricError,
    crate::dataset_io::DatasetError,
    crate::checkpoint::CheckpointError,
    crate::config::ConfigError,
    std::io::Error
);

/// The ablation grid: FedAvg base, +FCS, +DDA, +DDA+FCS, and local-only
/// training with either sampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Base,
    Fcs,
    Dda,
    DdaFcs,
    NoFed,
    NoFedFcs,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self, ExperimentError> {
        Ok(match s {
            "base" => Mode::Base,
            "fcs" => Mode::Fcs,
            "dda" => Mode::Dda,
            "dda-fcs" => Mode::DdaFcs,
            "nofed" => Mode::NoFed,
            "nofed-fcs" => Mode::NoFedFcs,
            other => {
                return Err(ExperimentError(format!(
                    "unknown mode {other:?} (expected base|fcs|dda|dda-fcs|nofed|nofed-fcs)"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Base => "base",
            Mode::Fcs => "fcs",
            Mode::Dda => "dda",
            Mode::DdaFcs => "dda-fcs",
            Mode::NoFed => "nofed",
            Mode::NoFedFcs => "nofed-fcs",
        }
    }

    pub fn sampling(self) -> SamplingMode {
        match self {
            Mode::Base | Mode::Dda | Mode::NoFed => SamplingMode::Fps,
            Mode::Fcs | Mode::DdaFcs | Mode::NoFedFcs => SamplingMode::Fcs,
        }
    }

    pub fn dda_enabled(self) -> bool {
        matches!(self, Mode::Dda | Mode::DdaFcs)
    }

    pub fn federated(self) -> bool {
        !matches!(self, Mode::NoFed | Mode::NoFedFcs)
    }
}

/// Build the synthetic sites described by the config. The signal direction
/// is shared across sites; each site gets its own feature offset.
pub fn build_sites(cfg: &RunConfig) -> Result<Vec<SiteOnDisk>, ExperimentError> {
    let d = cfg.feature_dim;
    let mut signal_rng = Rng::stream(cfg.seed, "signal", &[]);
    let signal_direction = signal_rng.unit_vector(d);
    let mut base_rng = Rng::stream(cfg.seed, "base", &[]);
    let base_dir = base_rng.unit_vector(d);
    let base_offset: Vec<f64> = base_dir.iter().map(|&x| cfg.base_norm * x).collect();
    let mut out = Vec::with_capacity(cfg.sites.len());
    for (i, sc) in cfg.sites.iter().enumerate() {
        let mut shift_rng = Rng::stream(cfg.seed, "site-shift", &[i as u64]);
        let dir = shift_rng.unit_vector(d);
        let spec = SiteSpec {
            name: sc.name.clone(),
            n_slides: sc.n_slides,
            gamma: sc.gamma,
            n_points_range: (sc.points_min, sc.points_max),
            base_offset: base_offset.clone(),
            site_shift: dir.iter().map(|&x| sc.shift_norm * x).collect(),
            signal_direction: signal_direction.clone(),
            signal_strength: cfg.signal_strength,
            n_clusters_range: (cfg.clusters_min, cfg.clusters_max),
            cluster_radius: cfg.cluster_radius,
            noise_sigma: cfg.noise_sigma,
        };
        let mut data_rng = Rng::stream(cfg.seed, "data", &[i as u64]);
        let slides = synth::generate_site(&spec, &mut data_rng)?;
        let gamma = synth::realized_gamma(&slides)
            .ok_or_else(|| ExperimentError(format!("site {} has no positives", sc.name)))?;
        out.push(SiteOnDisk {
            name: sc.name.clone(),
            gamma,
            unseen: sc.unseen,
            slides,
        });
    }
    Ok(out)
}

/// Generate and write the dataset directory.
pub fn generate(cfg: &RunConfig, force: bool) -> Result<Vec<SiteOnDisk>, ExperimentError> {
    let sites = build_sites(cfg)?;
    dataset_io::write_dataset(&cfg.data_dir, &sites, force)?;
    Ok(sites)
}

/// Train/val bundles plus held-out test sets for the federated sites, and
/// the untouched unseen sites.
pub struct PreparedData {
    pub bundles: Vec<SiteBundle>,
    pub test_sets: Vec<(String, Vec<PointSet>)>,
    pub unseen_sets: Vec<(String, Vec<PointSet>)>,
}

/// Split every federated site 6:1:3 (stratified, seeded) and optionally keep
/// only a stratified fraction of each training set.
pub fn prepare(
    sites: &[SiteOnDisk],
    split_seed: u64,
    train_fraction: f64,
) -> Result<PreparedData, ExperimentError> {
    let mut bundles = Vec::new();
    let mut test_sets = Vec::new();
    let mut unseen_sets = Vec::new();
    for site in sites {
        if site.unseen {
            unseen_sets.push((site.name.clone(), site.slides.clone()));
            continue;
        }
        let labels: Vec<u8> = site.slides.iter().map(|s| s.label()).collect();
        let sp = synth::split(&labels, (0.6, 0.1, 0.3), split_seed)?;
        let mut train_ids = sp.train.clone();
        if train_fraction < 1.0 {
            train_ids = stratified_fraction(&train_ids, &labels, train_fraction, split_seed);
        }
        bundles.push(SiteBundle {
            name: site.name.clone(),
            train: train_ids.iter().map(|&i| site.slides[i].clone()).collect(),
            val: sp.val.iter().map(|&i| site.slides[i].clone()).collect(),
        });
        test_sets.push((
            site.name.clone(),
            sp.test.iter().map(|&i| site.slides[i].clone()).collect(),
        ));
    }
    if bundles.is_empty() {
        return Err(ExperimentError(String::from("no federated sites in dataset")));
    }
    Ok(PreparedData {
        bundles,
        test_sets,
        unseen_sets,
    })
}

/// Keep a stratified fraction of the given ids (at least one per class).
fn stratified_fraction(ids: &[usize], labels: &[u8], fraction: f64, seed: u64) -> Vec<usize> {
    let mut kept = Vec::new();
    for class in [1u8, 0u8] {
        let mut class_ids: Vec<usize> =
            ids.iter().copied().filter(|&i| labels[i] == class).collect();
        let mut rng = Rng::stream(seed, "fraction", &[class as u64]);
        rng.shuffle(&mut class_ids);
        let keep = ((class_ids.len() as f64 * fraction).round() as usize)
            .clamp(1.min(class_ids.len()), class_ids.len());
        kept.extend_from_slice(&class_ids[..keep]);
    }
    kept.sort_unstable();
    kept
}

/// Outcome of one training run.
pub struct TrainOutcome {
    pub run: RunResult,
    pub model_cfg: ModelConfig,
    /// `(label, checkpoint)` pairs: one `server` entry for federated runs,
    /// one per site for local-only runs.
    pub checkpoints: Vec<(String, Checkpoint)>,
}

/// Train in the given mode on already-prepared data.
pub fn train_prepared(
    cfg: &RunConfig,
    mode: Mode,
    data: &PreparedData,
) -> Result<TrainOutcome, ExperimentError> {
    let model_cfg = ModelConfig {
        sampling: mode.sampling(),
        ..cfg.model.clone()
    };
    let fed_cfg = FedConfig {
        epochs: cfg.epochs,
        pace: cfg.pace,
        lr_max: cfg.lr,
        warmup_epochs: cfg.warmup_epochs,
        weight_decay: cfg.weight_decay,
        batch_size: cfg.batch_size,
        bn_batch: cfg.bn_batch,
        dda_enabled: mode.dda_enabled(),
        federated: mode.federated(),
        augment: Default::default(),
        master_seed: cfg.seed,
        init_attempts: 3,
        viability_epoch: 8,
        viability_auc: 0.6,
    };
    let run = fed::run(&model_cfg, &fed_cfg, data.bundles.clone())?;

    let make_ckpt = |weights: &ModelWeights, epoch: usize| Checkpoint {
        model: model_cfg.clone(),
        weights: weights.clone(),
        epoch: epoch as u32,
        master_seed: cfg.seed,
        split_seed: cfg.split_seed,
        rng_state: Rng::stream(cfg.seed, "eval", &[]).state(),
    };

    let mut checkpoints = Vec::new();
    if mode.federated() {
        // best-by-mean-validation server weights; fall back to the final ones
        let (weights, epoch) = match (&run.best_server, &run.server) {
            (Some((w, e, _)), _) => (w, *e),
            (None, Some(w)) => (w, cfg.epochs.saturating_sub(1)),
            (None, None) => return Err(ExperimentError(String::from("run produced no server weights"))),
        };
        checkpoints.push((String::from("server"), make_ckpt(weights, epoch)));
    } else {
        for (i, name) in run.site_names.iter().enumerate() {
            let (weights, epoch) = match &run.best_site_weights[i] {
                Some((w, e, _)) => (w, *e),
                None => (&run.site_weights[i], cfg.epochs.saturating_sub(1)),
            };
            checkpoints.push((name.clone(), make_ckpt(weights, epoch)));
        }
    }
    Ok(TrainOutcome {
        run,
        model_cfg,
        checkpoints,
    })
}

/// Full train flow from a dataset directory.
pub fn train(cfg: &RunConfig, mode: Mode) -> Result<(TrainOutcome, PreparedData), ExperimentError> {
    let sites = dataset_io::read_dataset(&cfg.data_dir)?;
    check_dims(cfg, &sites)?;
    let data = prepare(&sites, cfg.split_seed, cfg.train_fraction)?;
    let outcome = train_prepared(cfg, mode, &data)?;
    Ok((outcome, data))
}

fn check_dims(cfg: &RunConfig, sites: &[SiteOnDisk]) -> Result<(), ExperimentError> {
    for site in sites {
        for slide in &site.slides {
            if slide.feature_dim() != cfg.model.d_in {
                return Err(ExperimentError(format!(
                    "site {}: dataset feature dimension {} does not match config d_in {}",
                    site.name,
                    slide.feature_dim(),
                    cfg.model.d_in
                )));
            }
        }
        if cfg.sites.iter().all(|s| s.name != site.name) {
            return Err(ExperimentError(format!(
                "site {} on disk is not present in the config",
                site.name
            )));
        }
    }
    Ok(())
}

/// Per-site evaluation of a checkpoint on the dataset's test splits and on
/// unseen sites, with optional repeated stochastic evaluation.
pub struct EvalOutcome {
    /// `(site, split, auc)`; `None` marks a single-class subset.
    pub rows: Vec<(String, String, Option<f64>)>,
    pub mean_test_auc: Option<f64>,
    pub repeats: Option<RepeatSummary>,
}

pub fn evaluate(
    ckpt: &Checkpoint,
    dataset_dir: &Path,
    repeats: usize,
) -> Result<EvalOutcome, ExperimentError> {
    let sites = dataset_io::read_dataset(dataset_dir)?;
    let mut rows = Vec::new();
    let mut test_aucs = Vec::new();
    let mut fed_tests: Vec<(String, Vec<PointSet>)> = Vec::new();
    for site in &sites {
        if site.unseen {
            let auc = fed::eval_auc(&ckpt.weights, &ckpt.model, &site.slides, ckpt.master_seed, 0)?;
            rows.push((site.name.clone(), String::from("unseen"), auc));
            continue;
        }
        let labels: Vec<u8> = site.slides.iter().map(|s| s.label()).collect();
        let sp = synth::split(&labels, (0.6, 0.1, 0.3), ckpt.split_seed)?;
        let test: Vec<PointSet> = sp.test.iter().map(|&i| site.slides[i].clone()).collect();
        let auc = fed::eval_auc(&ckpt.weights, &ckpt.model, &test, ckpt.master_seed, 0)?;
        rows.push((site.name.clone(), String::from("test"), auc));
        if let Some(a) = auc {
            test_aucs.push(a);
        }
        fed_tests.push((site.name.clone(), test));
    }
    let mean_test_auc = if test_aucs.is_empty() {
        None
    } else {
        Some(test_aucs.iter().sum::<f64>() / test_aucs.len() as f64)
    };

    let repeats_summary = if repeats > 1 {
        let mut means = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut aucs = Vec::new();
            for (_, test) in &fed_tests {
                if let Some(a) =
                    fed::eval_auc(&ckpt.weights, &ckpt.model, test, ckpt.master_seed, r as u64)?
                {
                    aucs.push(a);
                }
            }
            if !aucs.is_empty() {
                means.push(aucs.iter().sum::<f64>() / aucs.len() as f64);
            }
        }
        Some(repeat_summary(&means)?)
    } else {
        None
    };

    Ok(EvalOutcome {
        rows,
        mean_test_auc,
        repeats: repeats_summary,
    })
}

/// Save a training outcome's checkpoints under `out_dir`, returning
/// `(label, path)` pairs.
pub fn save_checkpoints(
    out_dir: &Path,
    mode: Mode,
    outcome: &TrainOutcome,
) -> Result<Vec<(String, std::path::PathBuf)>, ExperimentError> {
    std::fs::create_dir_all(out_dir)?;
    let mut saved = Vec::new();
    for (label, ckpt) in &outcome.checkpoints {
        let file = if label == "server" {
            format!("{}_best.ckpt", mode.name())
        } else {
            format!("{}_site_{label}_best.ckpt", mode.name())
        };
        let path = out_dir.join(file);
        checkpoint::save(&path, ckpt)?;
        saved.push((label.clone(), path));
    }
    Ok(saved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn tiny_config(dir: &Path) -> RunConfig {
        let text = format!(
            "[run]\nseed = 5\nout_dir = {out}\n[data]\ndir = {data}\nfeature_dim = 4\n\
             noise_sigma = 0.5\nsignal_strength = 2.0\n\
             [model]\nn_points = 256\nbase_width = 4\nk_neighbors = 4\n\
             [fed]\nepochs = 2\npace = 1\nwarmup = 1\nbatch_size = 4\n\
             [site.A]\ngamma = 2.0\nslides = 14\npoints_min = 30\npoints_max = 60\n\
             [site.B]\ngamma = 1.5\nslides = 12\npoints_min = 30\npoints_max = 60\n\
             [site.U]\ngamma = 1.0\nslides = 8\npoints_min = 30\npoints_max = 60\nunseen = true\n",
            out = dir.join("runs").display(),
            data = dir.join("data").display(),
        );
        RunConfig::from_text(&text).unwrap()
    }

    fn tempdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("fedpoint-exp-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn mode_grid_maps_to_flags() {
        assert_eq!(Mode::parse("dda-fcs").unwrap(), Mode::DdaFcs);
        assert!(Mode::Base.federated() && !Mode::Base.dda_enabled());
        assert_eq!(Mode::Base.sampling(), SamplingMode::Fps);
        assert_eq!(Mode::Fcs.sampling(), SamplingMode::Fcs);
        assert!(!Mode::NoFed.federated());
        assert!(Mode::parse("bogus").is_err());
    }

    #[test]
    fn generate_prepare_and_fraction() {
        let dir = tempdir("prep");
        let cfg = tiny_config(&dir);
        let sites = generate(&cfg, false).unwrap();
        assert_eq!(sites.len(), 3);
        // deterministic regeneration
        let again = build_sites(&cfg).unwrap();
        assert_eq!(sites, again);

        let data = prepare(&sites, 0, 1.0).unwrap();
        assert_eq!(data.bundles.len(), 2);
        assert_eq!(data.unseen_sets.len(), 1);
        let full_train = data.bundles[0].train.len();

        let half = prepare(&sites, 0, 0.5).unwrap();
        let half_train = half.bundles[0].train.len();
        assert!(half_train < full_train, "{half_train} vs {full_train}");
        // both classes survive the reduction
        assert!(half.bundles[0].train.iter().any(|s| s.label() == 1));
        assert!(half.bundles[0].train.iter().any(|s| s.label() == 0));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn train_writes_checkpoints_per_mode() {
        let dir = tempdir("train");
        let cfg = tiny_config(&dir);
        generate(&cfg, false).unwrap();

        let (outcome, _) = train(&cfg, Mode::DdaFcs).unwrap();
        assert_eq!(outcome.checkpoints.len(), 1);
        assert_eq!(outcome.checkpoints[0].0, "server");
        let saved = save_checkpoints(&cfg.out_dir, Mode::DdaFcs, &outcome).unwrap();
        assert!(saved[0].1.exists());

        let (local, _) = train(&cfg, Mode::NoFed).unwrap();
        assert_eq!(local.checkpoints.len(), 2, "one checkpoint per site");
        assert!(local.run.sync_epochs.is_empty());
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn evaluate_reports_all_sites() {
        let dir = tempdir("eval");
        let cfg = tiny_config(&dir);
        generate(&cfg, false).unwrap();
        let (outcome, _) = train(&cfg, Mode::Fcs).unwrap();
        let ckpt = &outcome.checkpoints[0].1;
        let out = evaluate(ckpt, &cfg.data_dir, 3).unwrap();
        let sites: Vec<&str> = out.rows.iter().map(|(s, _, _)| s.as_str()).collect();
        assert!(sites.contains(&"A") && sites.contains(&"B") && sites.contains(&"U"));
        assert!(out.repeats.is_some());
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn mismatched_dataset_dimension_is_rejected() {
        let dir = tempdir("dims");
        let mut cfg = tiny_config(&dir);
        generate(&cfg, false).unwrap();
        cfg.model.d_in = 8;
        cfg.feature_dim = 8;
        assert!(train(&cfg, Mode::Base).is_err());
        std::fs::remove_dir_all(dir).unwrap();
    }
}
