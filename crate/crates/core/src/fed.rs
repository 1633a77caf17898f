//! Multi-site federated training: per-site local epochs, size-weighted
//! aggregation that skips the auxiliary classifier, periodic broadcast, and
//! deterministic evaluation.
//!
//! All randomness is derived from the master seed through named substreams
//! keyed by (site, epoch, slide), so a single-site federated run is
//! bit-identical to local training of the same site, and flipping one
//! ablation switch never perturbs the draws of another component.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::augment::{augment, AugmentConfig};
use crate::dda::{draw_masks, loss_total_nodes, mask_probability, DdaSchedule};
use crate::graph::Graph;
use crate::metrics;
use crate::model::{
    forward_batch, update_running_stats, GraphWeights, ModelConfig, ModelWeights, Phase,
};
use crate::optim::{learning_rate, AdamState, GradBuffer, OptimConfig};
use crate::points::PointSet;
use crate::rng::Rng;
use crate::sampling::subsample;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FedError(pub String);

impl core::fmt::Display for FedError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "federated simulation error: {}", self.0)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FedError {}

#[derive(Clone, Debug, PartialEq)]
pub struct FedConfig {
    /// Total optimization epochs K.
    pub epochs: usize,
    /// Communication pace E: local epochs between aggregations. Values
    /// above K behave like K (a single aggregation at the end).
    pub pace: usize,
    pub lr_max: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    /// Slides accumulated per optimizer step.
    pub batch_size: usize,
    /// Slides per forward graph (and so per batch-norm statistic); gradient
    /// accumulation bridges up to `batch_size`. Smaller graphs stay
    /// cache-resident; must be at least 2 so batch statistics stay
    /// cross-slide.
    pub bn_batch: usize,
    pub dda_enabled: bool,
    /// False runs every site locally with no aggregation.
    pub federated: bool,
    pub augment: AugmentConfig,
    pub master_seed: u64,
    /// Narrow models occasionally draw an initialization the optimizer
    /// cannot leave (training stalls at the class prior). After
    /// `viability_epoch` epochs the run checks training AUC; below
    /// `viability_auc` it discards the attempt and re-initializes from the
    /// next derived init stream, up to `init_attempts` tries. Deterministic,
    /// and applied identically to every mode.
    pub init_attempts: usize,
    pub viability_epoch: usize,
    pub viability_auc: f64,
}

impl FedConfig {
    pub fn new(epochs: usize, pace: usize, master_seed: u64) -> Self {
        FedConfig {
            epochs,
            pace,
            lr_max: 1e-3,
            warmup_epochs: 10,
            weight_decay: 1e-5,
            batch_size: 8,
            bn_batch: 4,
            dda_enabled: true,
            federated: true,
            augment: AugmentConfig::default(),
            master_seed,
            init_attempts: 3,
            viability_epoch: 8,
            viability_auc: 0.6,
        }
    }

    pub fn validate(&self) -> Result<(), FedError> {
        if self.epochs == 0 || self.pace == 0 || self.batch_size == 0 {
            return Err(FedError(String::from(
                "epochs, pace and batch_size must be positive",
            )));
        }
        if self.bn_batch < 2 {
            return Err(FedError(String::from(
                "bn_batch must be at least 2 (batch statistics must span slides)",
            )));
        }
        Ok(())
    }

    fn optim(&self) -> OptimConfig {
        OptimConfig::new(self.lr_max, self.warmup_epochs, self.epochs, self.weight_decay)
    }

    fn effective_pace(&self) -> usize {
        self.pace.min(self.epochs)
    }
}

/// One participating site's data.
#[derive(Clone, Debug)]
pub struct SiteBundle {
    pub name: String,
    pub train: Vec<PointSet>,
    pub val: Vec<PointSet>,
}

/// A site's local training state.
pub struct SiteState {
    pub name: String,
    pub index: u64,
    pub train: Vec<PointSet>,
    pub val: Vec<PointSet>,
    /// Imbalance ratio of the training labels (negatives over positives).
    pub gamma: f64,
    pub weights: ModelWeights,
    pub adam: AdamState,
}

impl SiteState {
    pub fn new(
        bundle: SiteBundle,
        index: u64,
        weights: ModelWeights,
    ) -> Result<Self, FedError> {
        if bundle.train.is_empty() {
            return Err(FedError(format!("site {} has no training slides", bundle.name)));
        }
        let pos = bundle.train.iter().filter(|s| s.label() == 1).count();
        let neg = bundle.train.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(FedError(format!(
                "site {} needs both classes in its training split (pos={pos}, neg={neg})",
                bundle.name
            )));
        }
        let adam = AdamState::new(&weights);
        Ok(SiteState {
            name: bundle.name,
            index,
            train: bundle.train,
            val: bundle.val,
            gamma: neg as f64 / pos as f64,
            weights,
            adam,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub loss_cls: f64,
    pub loss_aux: f64,
    pub mask_rate: f64,
}

/// One pass over a site's training slides at epoch `k`: draw this epoch's
/// DDA masks, then subsample-augment-forward-backward each slide in a
/// shuffled order, stepping the optimizer every `batch_size` slides.
pub fn local_epoch(
    site: &mut SiteState,
    k: usize,
    model_cfg: &ModelConfig,
    fed: &FedConfig,
) -> Result<EpochMetrics, FedError> {
    let n = site.train.len();
    // the schedule treats positive-majority sites as already balanced
    let sched = DdaSchedule::new(site.gamma.max(1.0), fed.epochs, fed.dda_enabled)
        .map_err(|e| FedError(format!("{e}")))?;
    let b = mask_probability(k, &sched).map_err(|e| FedError(format!("{e}")))?;
    let labels: Vec<u8> = site.train.iter().map(|s| s.label()).collect();
    let mut dda_rng = Rng::stream(fed.master_seed, "dda", &[site.index, k as u64]);
    let masks = draw_masks(&labels, b, &mut dda_rng);

    let mut order: Vec<usize> = (0..n).collect();
    let mut order_rng = Rng::stream(fed.master_seed, "order", &[site.index, k as u64]);
    order_rng.shuffle(&mut order);

    let lr = learning_rate(k, &fed.optim());
    let optim_cfg = fed.optim();
    let mut grads = GradBuffer::zeros_like(&site.weights);
    let mut sum_cls = 0.0;
    let mut sum_aux = 0.0;

    // optimizer steps cover `batch_size` slides; each forward graph holds a
    // `bn_batch`-slide sub-batch, so batch-norm statistics stay cross-slide
    // (slide-level signal survives relative to batch peers) while buffers
    // stay cache-sized
    for chunk in order.chunks(fed.batch_size) {
        grads.clear();
        let denom = chunk.len() as f64;
        for sub in chunk.chunks(fed.bn_batch) {
            let mut batch_slides = Vec::with_capacity(sub.len());
            let mut labels_sub = Vec::with_capacity(sub.len());
            let mut masks_sub = Vec::with_capacity(sub.len());
            for &slide_idx in sub {
                let ids = &[site.index, k as u64, slide_idx as u64];
                let slide = &site.train[slide_idx];
                let mut sub_rng = Rng::stream(fed.master_seed, "subsample", ids);
                let sampled = subsample(slide, model_cfg.n_points, &mut sub_rng)
                    .map_err(|e| FedError(format!("{e}")))?;
                let mut aug_rng = Rng::stream(fed.master_seed, "augment", ids);
                let augmented = augment(&sampled, &fed.augment, &mut aug_rng)
                    .map_err(|e| FedError(format!("{e}")))?;
                batch_slides.push(augmented);
                labels_sub.push(slide.label());
                masks_sub.push(masks[slide_idx]);
            }

            let mut g = Graph::new();
            let gw = GraphWeights::bind(&mut g, &site.weights);
            let mut sampling_rng =
                Rng::stream(fed.master_seed, "sampling", &[site.index, k as u64, sub[0] as u64]);
            let out = forward_batch(
                &mut g,
                &gw,
                &batch_slides,
                model_cfg,
                Phase::Train {
                    sampling_rng: &mut sampling_rng,
                },
            )
            .map_err(|e| FedError(format!("{e}")))?;

            let (total, cls, aux) = loss_total_nodes(
                &mut g,
                out.probs,
                out.aux_probs,
                &labels_sub,
                &masks_sub,
                denom,
            )
            .map_err(|e| FedError(format!("{e}")))?;
            sum_cls += g.value(cls).item() * denom;
            sum_aux += g.value(aux).item() * denom;
            g.backward(total).map_err(|e| FedError(format!("{e}")))?;
            grads.accumulate(&g.param_gradients());
            update_running_stats(&g, &out.bn_nodes, &mut site.weights);
        }
        site.adam.step(&mut site.weights, &grads, lr, &optim_cfg);
    }

    Ok(EpochMetrics {
        loss_cls: sum_cls / n as f64,
        loss_aux: sum_aux / n as f64,
        mask_rate: masks.iter().sum::<f64>() / n as f64,
    })
}

/// Size-weighted average of the synced tensors; auxiliary tensors are left
/// as the first site's copies (each site keeps its own after a broadcast).
pub fn aggregate(
    site_weights: &[&ModelWeights],
    sizes: &[usize],
) -> Result<ModelWeights, FedError> {
    if site_weights.is_empty() || site_weights.len() != sizes.len() {
        return Err(FedError(format!(
            "{} weight sets vs {} sizes",
            site_weights.len(),
            sizes.len()
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(FedError(String::from("site sizes must be positive")));
    }
    let first = site_weights[0];
    for (i, w) in site_weights.iter().enumerate().skip(1) {
        if w.entries().len() != first.entries().len() {
            return Err(FedError(format!("site {i} has a different tensor count")));
        }
        for (a, b) in first.entries().iter().zip(w.entries()) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(FedError(format!(
                    "site {i} tensor {} mismatches {} {:?}",
                    b.name,
                    a.name,
                    a.tensor.shape()
                )));
            }
        }
    }
    let total: usize = sizes.iter().sum();
    let coeffs: Vec<f64> = sizes.iter().map(|&s| s as f64 / total as f64).collect();

    let mut out = first.clone();
    for (ei, entry) in out.entries_mut().iter_mut().enumerate() {
        if !entry.synced {
            continue;
        }
        let data = entry.tensor.data_mut();
        data.iter_mut().for_each(|v| *v = 0.0);
        for (w, &c) in site_weights.iter().zip(&coeffs) {
            let src = w.entries()[ei].tensor.data();
            for (slot, &v) in data.iter_mut().zip(src) {
                *slot += c * v;
            }
        }
    }
    Ok(out)
}

/// Overwrite the site's synced tensors with the server's.
pub fn broadcast(server: &ModelWeights, site: &mut ModelWeights) {
    for (ei, entry) in site.entries_mut().iter_mut().enumerate() {
        if entry.synced {
            let src = server.entries()[ei].tensor.data();
            entry.tensor.data_mut().copy_from_slice(src);
        }
    }
}

/// Positive-class scores for a slide list under deterministic evaluation.
/// `repeat` selects an independent subsampling stream for stability studies.
pub fn score_slides(
    weights: &ModelWeights,
    model_cfg: &ModelConfig,
    slides: &[PointSet],
    eval_seed: u64,
    repeat: u64,
) -> Result<Vec<f64>, FedError> {
    // evaluation uses running statistics, so slides are independent and may
    // be batched purely for throughput
    let mut scores = Vec::with_capacity(slides.len());
    for (chunk_idx, chunk) in slides.chunks(8).enumerate() {
        let mut sampled = Vec::with_capacity(chunk.len());
        for (j, slide) in chunk.iter().enumerate() {
            let i = chunk_idx * 8 + j;
            let mut sub_rng = Rng::stream(eval_seed, "eval-subsample", &[repeat, i as u64]);
            sampled.push(
                subsample(slide, model_cfg.n_points, &mut sub_rng)
                    .map_err(|e| FedError(format!("{e}")))?,
            );
        }
        let mut g = Graph::new();
        let gw = GraphWeights::bind(&mut g, weights);
        let out = forward_batch(&mut g, &gw, &sampled, model_cfg, Phase::Eval)
            .map_err(|e| FedError(format!("{e}")))?;
        for j in 0..chunk.len() {
            scores.push(out.positive_score_of(&g, j));
        }
    }
    Ok(scores)
}

/// AUC of the main head over `slides`; `None` when only one class is present.
pub fn eval_auc(
    weights: &ModelWeights,
    model_cfg: &ModelConfig,
    slides: &[PointSet],
    eval_seed: u64,
    repeat: u64,
) -> Result<Option<f64>, FedError> {
    if slides.is_empty() {
        return Ok(None);
    }
    let labels: Vec<u8> = slides.iter().map(|s| s.label()).collect();
    if labels.iter().all(|&l| l == 0) || labels.iter().all(|&l| l == 1) {
        return Ok(None);
    }
    let scores = score_slides(weights, model_cfg, slides, eval_seed, repeat)?;
    Ok(Some(
        metrics::auc(&scores, &labels).map_err(|e| FedError(format!("{e}")))?,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub site: String,
    pub loss_cls: f64,
    pub loss_aux: f64,
    pub mask_rate: f64,
    /// Present on sync epochs (and every pace-th epoch for local runs).
    pub val_auc: Option<f64>,
}

pub struct RunResult {
    pub history: Vec<EpochRow>,
    /// Epoch indices at which aggregation happened.
    pub sync_epochs: Vec<usize>,
    /// Final server weights (federated runs).
    pub server: Option<ModelWeights>,
    /// Server weights with the best mean validation AUC, with the epoch and
    /// the AUC itself.
    pub best_server: Option<(ModelWeights, usize, f64)>,
    /// Final per-site weights (after the last local epoch / broadcast).
    pub site_weights: Vec<ModelWeights>,
    /// Per-site best weights by local validation AUC (meaningful for local
    /// training runs).
    pub best_site_weights: Vec<Option<(ModelWeights, usize, f64)>>,
    pub site_names: Vec<String>,
}

/// Run the full simulation: every site trains epoch k, then every
/// `pace` epochs the server aggregates synced tensors (weighted by site
/// training sizes) and broadcasts them back. Local-only mode skips the
/// aggregation but keeps the identical per-site schedule.
pub fn run(
    model_cfg: &ModelConfig,
    fed: &FedConfig,
    bundles: Vec<SiteBundle>,
) -> Result<RunResult, FedError> {
    fed.validate()?;
    if bundles.is_empty() {
        return Err(FedError(String::from("no sites")));
    }
    let attempts = fed.init_attempts.max(1);
    for attempt in 0..attempts {
        let last = attempt + 1 == attempts;
        match run_attempt(model_cfg, fed, &bundles, attempt, last)? {
            Some(result) => return Ok(result),
            None => continue,
        }
    }
    unreachable!("final attempt always returns a result")
}

/// Mean training AUC across sites on a bounded training subset, used as the
/// viability probe.
fn train_auc_probe(
    sites: &[SiteState],
    model_cfg: &ModelConfig,
    fed: &FedConfig,
) -> Result<Option<f64>, FedError> {
    let mut aucs = Vec::new();
    for site in sites {
        let take = site.train.len().min(40);
        if let Some(a) = eval_auc(&site.weights, model_cfg, &site.train[..take], fed.master_seed, 0)? {
            aucs.push(a);
        }
    }
    Ok(if aucs.is_empty() {
        None
    } else {
        Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
    })
}

/// One initialization attempt; `None` means the attempt was discarded by the
/// viability probe.
fn run_attempt(
    model_cfg: &ModelConfig,
    fed: &FedConfig,
    bundles: &[SiteBundle],
    attempt: usize,
    last_attempt: bool,
) -> Result<Option<RunResult>, FedError> {
    // every site (and the server) starts from identical weights; each
    // attempt draws from its own derived stream (attempt 0 matches the
    // plain init stream)
    let mut init_rng = if attempt == 0 {
        Rng::stream(fed.master_seed, "init", &[])
    } else {
        Rng::stream(fed.master_seed, "init", &[attempt as u64])
    };
    let init = ModelWeights::init(model_cfg, &mut init_rng).map_err(|e| FedError(format!("{e}")))?;

    let mut sites: Vec<SiteState> = bundles
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, b)| SiteState::new(b, i as u64, init.clone()))
        .collect::<Result<_, _>>()?;
    let sizes: Vec<usize> = sites.iter().map(|s| s.train.len()).collect();

    let pace = fed.effective_pace();
    let mut history = Vec::new();
    let mut sync_epochs = Vec::new();
    let mut server: Option<ModelWeights> = None;
    let mut best_server: Option<(ModelWeights, usize, f64)> = None;
    let mut best_site: Vec<Option<(ModelWeights, usize, f64)>> = sites.iter().map(|_| None).collect();

    for k in 0..fed.epochs {
        let mut epoch_rows = Vec::with_capacity(sites.len());
        for site in sites.iter_mut() {
            let m = local_epoch(site, k, model_cfg, fed)?;
            epoch_rows.push(EpochRow {
                epoch: k,
                site: site.name.clone(),
                loss_cls: m.loss_cls,
                loss_aux: m.loss_aux,
                mask_rate: m.mask_rate,
                val_auc: None,
            });
        }

        let sync_now = (k + 1) % pace == 0;
        if sync_now && fed.federated {
            let weight_refs: Vec<&ModelWeights> = sites.iter().map(|s| &s.weights).collect();
            let agg = aggregate(&weight_refs, &sizes)?;
            for site in sites.iter_mut() {
                broadcast(&agg, &mut site.weights);
            }
            // validation with the fresh server weights
            let mut aucs = Vec::new();
            for (row, site) in epoch_rows.iter_mut().zip(&sites) {
                let auc = eval_auc(&agg, model_cfg, &site.val, fed.master_seed, 0)?;
                row.val_auc = auc;
                if let Some(a) = auc {
                    aucs.push(a);
                }
            }
            if !aucs.is_empty() {
                let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
                if best_server.as_ref().is_none_or(|(_, _, b)| mean > *b) {
                    best_server = Some((agg.clone(), k, mean));
                }
            }
            server = Some(agg);
            sync_epochs.push(k);
        } else if sync_now {
            // local-only runs track each site's own best at the same cadence
            for (i, (row, site)) in epoch_rows.iter_mut().zip(&sites).enumerate() {
                let auc = eval_auc(&site.weights, model_cfg, &site.val, fed.master_seed, 0)?;
                row.val_auc = auc;
                if let Some(a) = auc {
                    if best_site[i].as_ref().is_none_or(|(_, _, b)| a > *b) {
                        best_site[i] = Some((site.weights.clone(), k, a));
                    }
                }
            }
        }
        history.extend(epoch_rows);

        if !last_attempt && k + 1 == fed.viability_epoch && fed.epochs > fed.viability_epoch {
            if let Some(train_auc) = train_auc_probe(&sites, model_cfg, fed)? {
                if train_auc < fed.viability_auc {
                    return Ok(None);
                }
            }
        }
    }

    Ok(Some(RunResult {
        history,
        sync_epochs,
        server,
        best_server,
        site_weights: sites.iter().map(|s| s.weights.clone()).collect(),
        best_site_weights: best_site,
        site_names: sites.iter().map(|s| s.name.clone()).collect(),
    }))
}
