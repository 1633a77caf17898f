//! Finite-difference verification of [`Graph::backward`].
//!
//! Central differences `(f(x+e) - f(x-e)) / 2e` are evaluated by rebinding
//! one leaf element at a time and replaying the recorded graph, so the
//! numeric side never touches the backward implementation it is checking.

use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::{Graph, GraphError, NodeId};
use crate::math;
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    /// Worst relative error across the checked elements.
    pub max_rel_err: f64,
    pub checked_elements: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_param
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }

    /// Parameters whose worst element exceeds `tol`.
    pub fn failures(&self, tol: f64) -> Vec<&ParamCheck> {
        self.per_param.iter().filter(|p| p.max_rel_err >= tol).collect()
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    let denom = math::abs(a).max(math::abs(n)).max(floor);
    math::abs(a - n) / denom
}

/// Compare analytic gradients of `loss` against central finite differences
/// for every registered parameter of `graph`.
///
/// `max_samples_per_param` bounds how many elements of each parameter are
/// probed (0 means all); large models are spot-checked on a deterministic
/// random subset seeded by `sample_seed`.
pub fn check_gradients(
    graph: &mut Graph,
    loss: NodeId,
    epsilon: f64,
    max_samples_per_param: usize,
    sample_seed: u64,
) -> Result<GradCheckReport, GraphError> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    graph.backward(loss)?;
    let analytic = graph.param_gradients();
    let params: Vec<(String, NodeId)> = graph.params().to_vec();
    // Central differences carry cancellation noise of order |f| * 1e-16 / eps,
    // so directions where the loss is flat would otherwise report the noise as
    // an error against a near-zero denominator. Scale the floor with |f|.
    let floor = 1e-4 * (1.0 + math::abs(graph.value(loss).item()));

    let mut per_param = Vec::with_capacity(params.len());
    for (pi, (name, node)) in params.iter().enumerate() {
        let base = graph.value(*node).data().to_vec();
        let n = base.len();
        let elements: Vec<usize> = if max_samples_per_param == 0 || n <= max_samples_per_param {
            (0..n).collect()
        } else {
            let mut rng = Rng::stream(sample_seed, "gradcheck", &[pi as u64]);
            let mut picks = rng.sample_without_replacement(n, max_samples_per_param);
            picks.sort_unstable();
            picks
        };

        let mut worst = 0.0f64;
        let mut probe = base.clone();
        for &e in &elements {
            probe[e] = base[e] + epsilon;
            graph.set_leaf_value(*node, &probe);
            graph.recompute();
            let f_plus = graph.value(loss).item();

            probe[e] = base[e] - epsilon;
            graph.set_leaf_value(*node, &probe);
            graph.recompute();
            let f_minus = graph.value(loss).item();

            probe[e] = base[e];
            let numeric = (f_plus - f_minus) / (2.0 * epsilon);
            let err = rel_err(analytic[pi].1.data()[e], numeric, floor);
            if err > worst {
                worst = err;
            }
        }
        graph.set_leaf_value(*node, &base);
        per_param.push(ParamCheck {
            name: name.clone(),
            max_rel_err: worst,
            checked_elements: elements.len(),
        });
    }
    // restore the unperturbed forward values
    graph.recompute();
    Ok(GradCheckReport { per_param })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn linear_layer_matches_finite_differences_tightly() {
        let mut rng = Rng::from_seed(101);
        let mut g = Graph::new();
        let x = g.param("x", randn(&mut rng, &[4, 3]));
        let w = g.param("w", randn(&mut rng, &[2, 3]));
        let b = g.param("b", randn(&mut rng, &[2]));
        let h = g.linear(x, w, b).unwrap();
        let s0 = g.sum_reduce(h, 1).unwrap();
        let loss = g.sum_reduce(s0, 0).unwrap();
        let report = check_gradients(&mut g, loss, 1e-5, 0, 0).unwrap();
        assert!(
            report.max_rel_err() < 1e-6,
            "max rel err {}",
            report.max_rel_err()
        );
    }

    #[test]
    fn two_layer_mlp_matches_finite_differences() {
        let mut rng = Rng::from_seed(7);
        let mut g = Graph::new();
        let x = g.param("x", randn(&mut rng, &[4, 3]));
        let w1 = g.param("w1", randn(&mut rng, &[5, 3]));
        let b1 = g.param("b1", randn(&mut rng, &[5]));
        let w2 = g.param("w2", randn(&mut rng, &[2, 5]));
        let b2 = g.param("b2", randn(&mut rng, &[2]));
        let h = g.linear(x, w1, b1).unwrap();
        let a = g.relu(h).unwrap();
        let o = g.linear(a, w2, b2).unwrap();
        let sm = g.softmax_axis(o, 1).unwrap();
        let ln = g.ln_clamped(sm, 1e-12).unwrap();
        let s0 = g.sum_reduce(ln, 1).unwrap();
        let loss = g.sum_reduce(s0, 0).unwrap();
        let report = check_gradients(&mut g, loss, 1e-5, 0, 0).unwrap();
        assert!(
            report.max_rel_err() < 1e-4,
            "max rel err {}",
            report.max_rel_err()
        );
    }

    #[test]
    fn batch_norm_training_mode_matches_finite_differences() {
        let mut rng = Rng::from_seed(23);
        let mut g = Graph::new();
        let x = g.param("x", randn(&mut rng, &[6, 4]));
        let scale = g.param("scale", randn(&mut rng, &[4]));
        let shift = g.param("shift", randn(&mut rng, &[4]));
        let bn = g.batch_norm(x, scale, shift, 1e-5).unwrap();
        let r = g.relu(bn).unwrap();
        let s0 = g.sum_reduce(r, 1).unwrap();
        let loss = g.sum_reduce(s0, 0).unwrap();
        let report = check_gradients(&mut g, loss, 1e-5, 0, 0).unwrap();
        assert!(
            report.max_rel_err() < 1e-4,
            "max rel err {}",
            report.max_rel_err()
        );
    }

    #[test]
    fn every_primitive_survives_finite_differences() {
        // one composite graph touching every differentiable op
        let mut rng = Rng::from_seed(41);
        let mut g = Graph::new();
        let x = g.param("x", randn(&mut rng, &[6, 4]));
        let w = g.param("w", randn(&mut rng, &[4, 4]));
        let b = g.param("b", randn(&mut rng, &[4]));
        let scale = g.param("scale", randn(&mut rng, &[4]));
        let shift = g.param("shift", randn(&mut rng, &[4]));

        let lin = g.linear(x, w, b).unwrap();
        let bn = g.batch_norm(lin, scale, shift, 1e-5).unwrap();
        let act = g.relu(bn).unwrap();
        let gathered = g.gather_rows(act, &[0, 2, 2, 5, 1, 3]).unwrap();
        let resh = g.reshape(gathered, &[2, 3, 4]).unwrap();
        let sm = g.softmax_axis(resh, 1).unwrap();
        let val = g.reshape(act, &[2, 3, 4]).unwrap();
        let prod = g.mul(sm, val).unwrap();
        let pooled = g.sum_reduce(prod, 1).unwrap(); // [2,4]
        let mx = g.max_reduce(resh, 1).unwrap(); // [2,4]
        let mixed = g.add(pooled, mx).unwrap();
        let diff = g.sub(mixed, pooled).unwrap();
        let cat = g.concat(&[mixed, diff], 1).unwrap(); // [2,8]
        let mean = g.mean_reduce(cat, 0).unwrap(); // [8]
        let resc = g.scale(mean, 0.7).unwrap();
        let two_d = g.reshape(resc, &[2, 4]).unwrap();
        let sel = g.row_select(two_d, &[1, 3]).unwrap(); // [2]
        let sq = g.mul(sel, sel).unwrap();
        let s1 = g.reshape(sq, &[1, 2]).unwrap();
        let s2 = g.sum_reduce(s1, 1).unwrap();
        let loss = g.sum_reduce(s2, 0).unwrap();

        let report = check_gradients(&mut g, loss, 1e-5, 0, 0).unwrap();
        assert!(
            report.max_rel_err() < 1e-4,
            "max rel err {}",
            report.max_rel_err()
        );
    }
}
