//! Dynamic distribution adjustment: an epoch-indexed Bernoulli schedule that
//! starts training every site at a balanced label distribution (keep rate
//! `1/gamma` on the majority class) and ramps to the site's real
//! distribution (keep rate 1) by the final epoch, plus the masked
//! classification loss and the unmasked auxiliary loss.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::{Graph, GraphError, NodeId};
use crate::math;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Floor applied to probabilities before `ln`.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DdaError(pub String);

impl core::fmt::Display for DdaError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "dda error: {}", self.0)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DdaError {}

/// Schedule parameters for one site.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DdaSchedule {
    /// Site imbalance ratio (negatives over positives), at least 1.
    pub gamma: f64,
    /// Total optimization epochs.
    pub k_total: usize,
    pub enabled: bool,
}

impl DdaSchedule {
    pub fn new(gamma: f64, k_total: usize, enabled: bool) -> Result<Self, DdaError> {
        if !(gamma >= 1.0) {
            return Err(DdaError(format!("gamma must be >= 1, got {gamma}")));
        }
        if k_total == 0 {
            return Err(DdaError(String::from("k_total must be >= 1")));
        }
        Ok(DdaSchedule {
            gamma,
            k_total,
            enabled,
        })
    }
}

/// Keep probability for majority-class samples at epoch `k`:
/// `b = 1/gamma + (1 - 1/gamma) * (e^(k/K) - 1) / (e - 1)`.
///
/// Evaluated as `c + r * (1 - c)` with `r = expm1(k/K) / expm1(1)` so that
/// both endpoints are exact in f64 (`b(0) = 1/gamma`, `b(K) = 1`) and the
/// sweep is monotone non-decreasing.
pub fn mask_probability(k: usize, sched: &DdaSchedule) -> Result<f64, DdaError> {
    if k > sched.k_total {
        return Err(DdaError(format!(
            "epoch {k} out of range for K = {}",
            sched.k_total
        )));
    }
    if !sched.enabled {
        return Ok(1.0);
    }
    if k == sched.k_total {
        return Ok(1.0);
    }
    let c = 1.0 / sched.gamma;
    let r = math::expm1(k as f64 / sched.k_total as f64) / math::expm1(1.0);
    Ok((c + r * (1.0 - c)).clamp(c, 1.0))
}

/// Per-sample 0/1 masks: every positive is kept; each negative is kept
/// independently with probability `b`.
pub fn draw_masks(labels: &[u8], b: f64, rng: &mut Rng) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&b), "mask probability {b} outside [0,1]");
    labels
        .iter()
        .map(|&l| {
            if l == 1 {
                1.0
            } else if rng.bernoulli(b) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Loss values reported alongside the scalar total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub aux: f64,
    /// How many true-class probabilities were clamped before `ln`.
    pub clamped: usize,
}

/// Masked classification loss plus unmasked auxiliary loss over a batch.
///
/// `probs` and `aux_probs` are `[m, 2]` row-stochastic matrices. Both terms
/// normalize by the full batch size `m`, masked-out samples included.
pub fn loss_total(
    probs: &Tensor,
    aux_probs: &Tensor,
    labels: &[u8],
    masks: &[f64],
) -> Result<LossBreakdown, DdaError> {
    let m = labels.len();
    for (what, t) in [("probs", probs), ("aux_probs", aux_probs)] {
        if t.shape() != [m, 2] {
            return Err(DdaError(format!(
                "{what} must be [{m}, 2], got {:?}",
                t.shape()
            )));
        }
    }
    if masks.len() != m {
        return Err(DdaError(format!("{} masks for {m} samples", masks.len())));
    }
    if m == 0 {
        return Err(DdaError(String::from("empty batch")));
    }
    let mut cls = 0.0;
    let mut aux = 0.0;
    let mut clamped = 0usize;
    let mut ln_p = |p: f64| {
        if p < LOG_FLOOR {
            clamped += 1;
            math::ln(LOG_FLOOR)
        } else {
            math::ln(p)
        }
    };
    for i in 0..m {
        let y = labels[i] as usize;
        cls += masks[i] * ln_p(probs.row(i)[y]);
        aux += ln_p(aux_probs.row(i)[y]);
    }
    let inv = 1.0 / m as f64;
    let cls = -inv * cls;
    let aux = -inv * aux;
    Ok(LossBreakdown {
        total: cls + aux,
        cls,
        aux,
        clamped,
    })
}

/// Graph nodes for the same loss, so gradients flow during training.
/// `denom` is the normalizing batch size (the accumulation batch size when a
/// batch is processed one slide at a time). Returns `(total, cls, aux)`.
pub fn loss_total_nodes(
    g: &mut Graph,
    probs: NodeId,
    aux_probs: NodeId,
    labels: &[u8],
    masks: &[f64],
    denom: f64,
) -> Result<(NodeId, NodeId, NodeId), GraphError> {
    let cols: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let scale = -1.0 / denom;

    let p = g.row_select(probs, &cols)?;
    let lp = g.ln_clamped(p, LOG_FLOOR)?;
    let mask_t = g.constant(Tensor::from_vec(&[labels.len()], masks.to_vec()).expect("mask len"));
    let masked = g.mul(lp, mask_t)?;
    let cls_sum = g.sum_reduce(masked, 0)?;
    let cls = g.scale(cls_sum, scale)?;

    let ap = g.row_select(aux_probs, &cols)?;
    let lap = g.ln_clamped(ap, LOG_FLOOR)?;
    let aux_sum = g.sum_reduce(lap, 0)?;
    let aux = g.scale(aux_sum, scale)?;

    let total = g.add(cls, aux)?;
    Ok((total, cls, aux))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sched(gamma: f64, k_total: usize) -> DdaSchedule {
        DdaSchedule::new(gamma, k_total, true).unwrap()
    }

    #[test]
    fn endpoints_are_exact() {
        for gamma in [1.0, 1.5, 3.0, 4.0, 5.7] {
            let s = sched(gamma, 200);
            assert_eq!(mask_probability(0, &s).unwrap(), 1.0 / gamma);
            assert_eq!(mask_probability(200, &s).unwrap(), 1.0);
        }
    }

    #[test]
    fn midpoint_matches_direct_evaluation() {
        // k = K/2, gamma = 5.7 -> 1/5.7 + (1 - 1/5.7)(e^0.5 - 1)/(e - 1)
        let s = sched(5.7, 200);
        let b = mask_probability(100, &s).unwrap();
        assert!((b - 0.4868).abs() < 1e-4, "{b}");
        let direct = 1.0 / 5.7
            + (1.0 - 1.0 / 5.7) * (crate::math::exp(0.5) - 1.0) / (crate::math::E - 1.0);
        assert!((b - direct).abs() < 1e-12);
    }

    #[test]
    fn disabled_schedule_keeps_everything() {
        let s = DdaSchedule::new(4.0, 10, false).unwrap();
        for k in 0..=10 {
            assert_eq!(mask_probability(k, &s).unwrap(), 1.0);
        }
    }

    #[test]
    fn out_of_range_epoch_is_an_error() {
        let s = sched(2.0, 10);
        assert!(mask_probability(11, &s).is_err());
    }

    #[test]
    fn sweep_is_monotone_and_in_range_for_random_parameters() {
        let mut rng = Rng::from_seed(123);
        for _ in 0..100 {
            let gamma = 1.0 + 9.0 * rng.next_f64();
            let k_total = 1 + rng.below(400);
            let s = sched(gamma, k_total);
            let mut prev = 0.0;
            for k in 0..=k_total {
                let b = mask_probability(k, &s).unwrap();
                assert!(b >= prev, "not monotone at k={k} gamma={gamma} K={k_total}");
                assert!(b >= 1.0 / gamma - 1e-15 && b <= 1.0);
                prev = b;
            }
        }
    }

    #[test]
    fn masks_keep_all_positives_and_respect_b() {
        let labels = vec![1u8, 0, 1, 0, 0];
        let mut rng = Rng::from_seed(5);
        let ones = draw_masks(&labels, 1.0, &mut rng);
        assert_eq!(ones, vec![1.0; 5]);
        let only_pos = draw_masks(&labels, 0.0, &mut rng);
        assert_eq!(only_pos, vec![1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn mask_rate_concentrates_around_b() {
        let labels = vec![0u8; 10_000];
        let mut rng = Rng::from_seed(8);
        let masks = draw_masks(&labels, 0.3, &mut rng);
        let mean = masks.iter().sum::<f64>() / masks.len() as f64;
        // 3 sigma for a Bernoulli(0.3) mean over 10k draws is ~0.0137
        assert!((mean - 0.3).abs() < 0.015, "mean {mean}");
    }

    #[test]
    fn effective_imbalance_tracks_b_gamma() {
        // gamma = 4 with 2000 positives and 8000 negatives; at keep rate b
        // the masked negative-to-positive ratio concentrates on b * gamma
        let mut labels = vec![1u8; 2000];
        labels.extend(vec![0u8; 8000]);
        let gamma = 4.0;
        let s = sched(gamma, 100);
        let mut rng = Rng::from_seed(21);
        for k in [0usize, 50, 100] {
            let b = mask_probability(k, &s).unwrap();
            let masks = draw_masks(&labels, b, &mut rng);
            let kept_neg: f64 = masks[2000..].iter().sum();
            let ratio = kept_neg / 2000.0;
            let sigma = (8000.0 * b * (1.0 - b)).max(1e-12).sqrt() / 2000.0;
            assert!(
                (ratio - b * gamma).abs() <= 3.0 * sigma + 1e-9,
                "k={k} ratio={ratio} b*gamma={}",
                b * gamma
            );
        }
    }

    #[test]
    fn perfect_predictions_give_zero_loss() {
        let probs = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let labels = [0u8, 1];
        let out = loss_total(&probs, &probs, &labels, &[1.0, 1.0]).unwrap();
        assert_eq!(out.total, 0.0);
        assert_eq!(out.clamped, 0);
    }

    #[test]
    fn all_ones_mask_reduces_to_plain_cross_entropy() {
        let probs = Tensor::from_vec(&[3, 2], vec![0.7, 0.3, 0.2, 0.8, 0.6, 0.4]).unwrap();
        let labels = [0u8, 1, 0];
        let out = loss_total(&probs, &probs, &labels, &[1.0; 3]).unwrap();
        let ce = -(crate::math::ln(0.7) + crate::math::ln(0.8) + crate::math::ln(0.6)) / 3.0;
        assert!((out.cls - ce).abs() < 1e-15);
        assert!((out.aux - ce).abs() < 1e-15);
    }

    #[test]
    fn masked_out_negative_still_counts_in_denominator() {
        // batch of 2: positive with p1 = 0.5 kept, negative with p0 = 0.5
        // masked out -> cls = -(1/2) ln 0.5
        let probs = Tensor::from_vec(&[2, 2], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let aux = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let labels = [1u8, 0];
        let out = loss_total(&probs, &aux, &labels, &[1.0, 0.0]).unwrap();
        let expected = -0.5 * crate::math::ln(0.5);
        assert!((out.cls - expected).abs() < 1e-15, "{}", out.cls);
        assert!((expected - 0.3466).abs() < 1e-4);
    }

    #[test]
    fn zero_probability_is_clamped_and_counted() {
        let probs = Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap();
        let labels = [0u8];
        let out = loss_total(&probs, &probs, &labels, &[1.0]).unwrap();
        assert_eq!(out.clamped, 2);
        assert!(out.total.is_finite());
    }

    #[test]
    fn graph_loss_matches_direct_loss() {
        let probs_t = Tensor::from_vec(&[3, 2], vec![0.7, 0.3, 0.2, 0.8, 0.6, 0.4]).unwrap();
        let aux_t = Tensor::from_vec(&[3, 2], vec![0.5, 0.5, 0.1, 0.9, 0.9, 0.1]).unwrap();
        let labels = [0u8, 1, 0];
        let masks = [1.0, 0.0, 1.0];
        let direct = loss_total(&probs_t, &aux_t, &labels, &masks).unwrap();

        let mut g = Graph::new();
        let p = g.input("p", probs_t, false);
        let a = g.input("a", aux_t, false);
        let (total, cls, aux) = loss_total_nodes(&mut g, p, a, &labels, &masks, 3.0).unwrap();
        assert!((g.value(total).item() - direct.total).abs() < 1e-15);
        assert!((g.value(cls).item() - direct.cls).abs() < 1e-15);
        assert!((g.value(aux).item() - direct.aux).abs() < 1e-15);
    }

    #[test]
    fn aux_loss_ignores_masks() {
        let probs = Tensor::from_vec(&[2, 2], vec![0.7, 0.3, 0.4, 0.6]).unwrap();
        let aux = Tensor::from_vec(&[2, 2], vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let labels = [0u8, 0];
        let with_mask = loss_total(&probs, &aux, &labels, &[1.0, 0.0]).unwrap();
        let without = loss_total(&probs, &aux, &labels, &[1.0, 1.0]).unwrap();
        assert_eq!(with_mask.aux, without.aux);
        assert!(with_mask.cls < without.cls);
    }

    #[test]
    fn gradients_separate_between_heads() {
        // two independent "heads" -> cls gradient must not touch the aux
        // head's parameters and vice versa
        let mut g = Graph::new();
        let feat = g.constant(Tensor::from_vec(&[2, 3], vec![0.3, -0.5, 0.9, 0.1, 0.4, -0.2]).unwrap());
        let wc = g.param("f_c.w", Tensor::from_vec(&[2, 3], vec![0.2, 0.1, -0.3, 0.4, -0.1, 0.2]).unwrap());
        let bc = g.param("f_c.b", Tensor::from_vec(&[2], vec![0.0, 0.1]).unwrap());
        let wa = g.param("f_aux.w", Tensor::from_vec(&[2, 3], vec![-0.2, 0.3, 0.1, 0.0, 0.2, -0.4]).unwrap());
        let ba = g.param("f_aux.b", Tensor::from_vec(&[2], vec![0.05, -0.05]).unwrap());
        let logits_c = g.linear(feat, wc, bc).unwrap();
        let probs = g.softmax_axis(logits_c, 1).unwrap();
        let logits_a = g.linear(feat, wa, ba).unwrap();
        let aux_probs = g.softmax_axis(logits_a, 1).unwrap();
        let labels = [1u8, 0];
        let masks = [1.0, 0.0];
        let (total, cls, aux) =
            loss_total_nodes(&mut g, probs, aux_probs, &labels, &masks, 2.0).unwrap();

        g.backward(total).unwrap();
        let total_grads = g.param_gradients();
        g.backward(cls).unwrap();
        let cls_grads = g.param_gradients();
        g.backward(aux).unwrap();
        let aux_grads = g.param_gradients();

        for (i, (name, _)) in total_grads.iter().enumerate() {
            if name.starts_with("f_c") {
                assert_eq!(total_grads[i].1, cls_grads[i].1, "{name}");
                assert!(aux_grads[i].1.data().iter().all(|&v| v == 0.0), "{name}");
            } else {
                assert_eq!(total_grads[i].1, aux_grads[i].1, "{name}");
                assert!(cls_grads[i].1.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }
}
