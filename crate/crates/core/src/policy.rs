//! How each layer product is computed during training.
//!
//! Column-selection policies (dropout, adaptive dropout, ALSH) compute a
//! hidden layer only at a subset of its nodes; every other node contributes
//! exactly zero for that step. `McBackprop` keeps the forward pass exact and
//! replaces the two backward products of every layer by Bernoulli-sampled
//! estimates. The output layer is always exact.

use serde::{Deserialize, Serialize};

use crate::alsh::{self, AlshIndex, AlshParams};
use crate::error::{Error, Result};
use crate::linalg::{flops, flops::Phase, DenseMatrix, DenseVector, Rng};
use crate::mc;
use crate::nn::{self, BackpropProducts, ForwardTrace, Gradients, MlpModel, NodeMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Exact,
    Dropout {
        p_keep: f64,
    },
    AdaptiveDropout {
        alpha: f64,
        beta: f64,
    },
    Alsh {
        #[serde(flatten)]
        params: AlshParams,
    },
    McBackprop {
        k_samples: usize,
    },
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Exact => "exact",
            PolicyKind::Dropout { .. } => "dropout",
            PolicyKind::AdaptiveDropout { .. } => "adaptive_dropout",
            PolicyKind::Alsh { .. } => "alsh",
            PolicyKind::McBackprop { .. } => "mc_backprop",
        }
    }

    pub fn dropout() -> Self {
        PolicyKind::Dropout { p_keep: 0.05 }
    }

    pub fn adaptive_dropout() -> Self {
        PolicyKind::AdaptiveDropout { alpha: 1.0, beta: 0.0 }
    }

    pub fn alsh() -> Self {
        PolicyKind::Alsh {
            params: AlshParams::default(),
        }
    }

    pub fn mc_backprop() -> Self {
        PolicyKind::McBackprop { k_samples: 10 }
    }

    /// Check hyperparameters against `model`'s architecture.
    pub fn validate(&self, model: &MlpModel) -> Result<()> {
        match *self {
            PolicyKind::Exact => Ok(()),
            PolicyKind::Dropout { p_keep } => {
                if p_keep > 0.0 && p_keep <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::param(format!("p_keep={p_keep} must be in (0, 1]")))
                }
            }
            PolicyKind::AdaptiveDropout { alpha, beta } => {
                if alpha.is_finite() && beta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::param("adaptive dropout alpha/beta must be finite"))
                }
            }
            PolicyKind::Alsh { params } => params.validate(),
            PolicyKind::McBackprop { k_samples } => {
                let narrowest = model.layer_dims[1..].iter().copied().min().unwrap_or(0);
                let widest = model.layer_dims[1..].iter().copied().max().unwrap_or(0);
                if k_samples == 0 || k_samples > widest {
                    Err(Error::param(format!(
                        "k_samples={k_samples} must be in 1..={widest} (layer widths {narrowest}..={widest})"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Counters accumulated by a policy over a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PolicyStats {
    /// Sum over (sample, hidden layer) of the active fraction.
    pub active_fraction_sum: f64,
    pub active_fraction_count: u64,
    /// ALSH queries that returned no node and fell back to the full layer.
    pub empty_active_fallbacks: u64,
    pub rebuilds: u64,
}

impl PolicyStats {
    pub fn mean_active_fraction(&self) -> Option<f64> {
        (self.active_fraction_count > 0)
            .then(|| self.active_fraction_sum / self.active_fraction_count as f64)
    }
}

/// A policy bound to one model for one training run.
#[derive(Debug, Clone)]
pub struct ComputePolicy {
    kind: PolicyKind,
    indices: Vec<AlshIndex>,
    stats: PolicyStats,
}

pub const ALSH_SEED_STREAM: u64 = 0xa15;

impl ComputePolicy {
    pub fn new(kind: PolicyKind, model: &MlpModel, seed: u64) -> Result<Self> {
        kind.validate(model)?;
        let mut policy = ComputePolicy {
            kind,
            indices: Vec::new(),
            stats: PolicyStats::default(),
        };
        if let PolicyKind::Alsh { params } = kind {
            let _g = flops::enter(Phase::Overhead);
            let hidden = model.n_layers() - 1;
            policy.indices = (0..hidden)
                .map(|k| {
                    let layer_seed = seed ^ (ALSH_SEED_STREAM << 32) ^ k as u64;
                    AlshIndex::for_weights(&model.weights[k], params, layer_seed, k)
                })
                .collect::<Result<_>>()?;
        }
        Ok(policy)
    }

    pub fn exact() -> Self {
        ComputePolicy {
            kind: PolicyKind::Exact,
            indices: Vec::new(),
            stats: PolicyStats::default(),
        }
    }

    pub fn kind(&self) -> &PolicyKind {
        &self.kind
    }

    pub fn stats(&self) -> &PolicyStats {
        &self.stats
    }

    pub fn alsh_indices(&self) -> &[AlshIndex] {
        &self.indices
    }

    /// Rebuild every ALSH index from the current weights.
    pub fn rebuild(&mut self, model: &MlpModel) -> Result<()> {
        if self.indices.is_empty() {
            return Ok(());
        }
        let _g = flops::enter(Phase::Overhead);
        for (k, idx) in self.indices.iter_mut().enumerate() {
            idx.rebuild_from_weights(&model.weights[k])?;
        }
        self.stats.rebuilds += 1;
        Ok(())
    }

    /// Rebuild if the schedule fires at `samples_seen`. Returns whether it did.
    pub fn rebuild_if_due(&mut self, model: &MlpModel, samples_seen: u64) -> Result<bool> {
        if !matches!(self.kind, PolicyKind::Alsh { .. }) || !alsh::rebuild_schedule(samples_seen) {
            return Ok(false);
        }
        self.rebuild(model)?;
        Ok(true)
    }

    /// Like [`rebuild_if_due`](Self::rebuild_if_due) for every count in
    /// `(before, after]`; rebuilds at most once.
    pub fn rebuild_if_crossed(&mut self, model: &MlpModel, before: u64, after: u64) -> Result<bool> {
        if !matches!(self.kind, PolicyKind::Alsh { .. }) {
            return Ok(false);
        }
        if (before + 1..=after).any(alsh::rebuild_schedule) {
            self.rebuild(model)?;
            return Ok(true);
        }
        Ok(false)
    }

    fn record_mask(&mut self, mask: &NodeMask, width: usize) {
        for nodes in &mask.active {
            self.stats.active_fraction_sum += nodes.len() as f64 / width as f64;
            self.stats.active_fraction_count += 1;
        }
    }

    fn alsh_mask(&mut self, k: usize, a: &DenseMatrix, width: usize) -> Result<NodeMask> {
        let _g = flops::enter(Phase::Overhead);
        let mut active = Vec::with_capacity(a.rows());
        for r in 0..a.rows() {
            let set = self.indices[k].query(a.row(r))?;
            if set.is_empty() {
                self.stats.empty_active_fallbacks += 1;
                active.push((0..width).collect());
            } else {
                active.push(set.nodes);
            }
        }
        Ok(NodeMask { active, scale: 1.0 })
    }

    /// Inference-mode forward pass: dropout is off, adaptive dropout scales
    /// activations by their keep probability, ALSH still selects nodes.
    pub fn infer(&mut self, model: &MlpModel, input: &DenseMatrix) -> Result<ForwardTrace> {
        match self.kind {
            PolicyKind::Exact | PolicyKind::Dropout { .. } | PolicyKind::McBackprop { .. } => {
                nn::forward_batch(model, input)
            }
            PolicyKind::AdaptiveDropout { alpha, beta } => {
                check_input(model, input)?;
                let mut trace = ForwardTrace::new(input.clone());
                for k in 0..model.n_layers() {
                    let z = nn::layer_product(&trace.post[k], &model.weights[k], &model.biases[k])?;
                    trace.push_layer(model, k, z, None);
                    if !model.is_output_layer(k) {
                        let z = &trace.pre[k];
                        let post = trace.post.last_mut().unwrap();
                        for r in 0..z.rows() {
                            let keep = adaptive_keep_probs(&z.row_vector(r), alpha, beta);
                            for (v, p) in post.row_mut(r).iter_mut().zip(keep.iter()) {
                                *v *= p;
                            }
                        }
                    }
                }
                Ok(trace)
            }
            PolicyKind::Alsh { .. } => self.alsh_forward(model, input, false),
        }
    }

    fn alsh_forward(&mut self, model: &MlpModel, input: &DenseMatrix, record: bool) -> Result<ForwardTrace> {
        check_input(model, input)?;
        let mut trace = ForwardTrace::new(input.clone());
        for k in 0..model.n_layers() {
            let (w, b) = (&model.weights[k], &model.biases[k]);
            if model.is_output_layer(k) {
                let z = nn::layer_product(&trace.post[k], w, b)?;
                trace.push_layer(model, k, z, None);
            } else {
                let mask = self.alsh_mask(k, &trace.post[k], w.cols())?;
                if record {
                    self.record_mask(&mask, w.cols());
                }
                let z = nn::layer_product_masked(&trace.post[k], w, b, &mask.active)?;
                trace.push_layer(model, k, z, Some(mask));
            }
        }
        Ok(trace)
    }
}

fn check_input(model: &MlpModel, input: &DenseMatrix) -> Result<()> {
    if input.cols() != model.n_inputs() {
        return Err(Error::dim(
            "forward_with_policy",
            format!("input width {}, model expects {}", input.cols(), model.n_inputs()),
        ));
    }
    Ok(())
}

/// Standout keep probability `σ(α z + β)` per node, clamped to `[0.01, 1]`.
pub fn adaptive_keep_probs(preactivation: &DenseVector, alpha: f64, beta: f64) -> DenseVector {
    preactivation
        .iter()
        .map(|&z| {
            let s = 1.0 / (1.0 + (-(alpha * z + beta)).exp());
            s.clamp(0.01, 1.0)
        })
        .collect::<Vec<_>>()
        .into()
}

/// Training-mode forward pass for a batch (one sample per row).
pub fn forward_with_policy(
    model: &MlpModel,
    input: &DenseMatrix,
    policy: &mut ComputePolicy,
    rng: &mut Rng,
) -> Result<ForwardTrace> {
    match policy.kind {
        PolicyKind::Exact | PolicyKind::McBackprop { .. } => nn::forward_batch(model, input),
        PolicyKind::Dropout { p_keep } => {
            check_input(model, input)?;
            let mut trace = ForwardTrace::new(input.clone());
            for k in 0..model.n_layers() {
                let (w, b) = (&model.weights[k], &model.biases[k]);
                if model.is_output_layer(k) {
                    let z = nn::layer_product(&trace.post[k], w, b)?;
                    trace.push_layer(model, k, z, None);
                    continue;
                }
                let width = w.cols();
                let mut active = Vec::with_capacity(input.rows());
                for _ in 0..input.rows() {
                    let mut nodes = Vec::new();
                    for j in 0..width {
                        if rng.bernoulli(p_keep)? {
                            nodes.push(j);
                        }
                    }
                    active.push(nodes);
                }
                let mask = NodeMask {
                    active,
                    scale: 1.0 / p_keep,
                };
                policy.record_mask(&mask, width);
                let z = nn::layer_product_masked(&trace.post[k], w, b, &mask.active)?;
                trace.push_layer(model, k, z, Some(mask));
            }
            Ok(trace)
        }
        PolicyKind::AdaptiveDropout { alpha, beta } => {
            check_input(model, input)?;
            let mut trace = ForwardTrace::new(input.clone());
            for k in 0..model.n_layers() {
                let (w, b) = (&model.weights[k], &model.biases[k]);
                let z = nn::layer_product(&trace.post[k], w, b)?;
                if model.is_output_layer(k) {
                    trace.push_layer(model, k, z, None);
                    continue;
                }
                let mask = {
                    let _g = flops::enter(Phase::Overhead);
                    let mut active = Vec::with_capacity(z.rows());
                    for r in 0..z.rows() {
                        let keep = adaptive_keep_probs(&z.row_vector(r), alpha, beta);
                        let mut nodes = Vec::new();
                        for (j, &p) in keep.iter().enumerate() {
                            if rng.bernoulli(p)? {
                                nodes.push(j);
                            }
                        }
                        active.push(nodes);
                    }
                    NodeMask { active, scale: 1.0 }
                };
                policy.record_mask(&mask, w.cols());
                trace.push_layer(model, k, z, Some(mask));
            }
            Ok(trace)
        }
        PolicyKind::Alsh { .. } => policy.alsh_forward(model, input, true),
    }
}

/// Gradients under the policy. `trace` must come from
/// [`forward_with_policy`] with the same policy; its rows are the mini-batch
/// used for the sampling probabilities of `McBackprop`.
pub fn backward_with_policy(
    model: &MlpModel,
    trace: &ForwardTrace,
    targets: &[usize],
    policy: &mut ComputePolicy,
    rng: &mut Rng,
) -> Result<Gradients> {
    match policy.kind {
        PolicyKind::McBackprop { k_samples } => {
            let mut products = McProducts { k_samples, rng };
            nn::backward_with(model, trace, targets, &mut products)
        }
        _ => nn::backward(model, trace, targets),
    }
}

/// Backward products replaced by Bernoulli-sampled estimates with the
/// clipped-optimal probabilities of each product; the budget is capped at the
/// shared dimension.
pub struct McProducts<'a> {
    pub k_samples: usize,
    pub rng: &'a mut Rng,
}

impl McProducts<'_> {
    fn estimate<A: crate::linalg::MatRef, B: crate::linalg::MatRef>(&mut self, a: &A, b: &B) -> Result<DenseMatrix> {
        let k = self.k_samples.min(a.cols());
        let plan = {
            let _g = flops::enter(Phase::Overhead);
            let p = mc::optimal_probs_bernoulli(a, b, k)?;
            mc::plan_bernoulli(&p, k, self.rng)?
        };
        mc::sampled_product(a, b, &plan)
    }
}

impl BackpropProducts for McProducts<'_> {
    fn propagate(&mut self, _layer: usize, delta: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix> {
        self.estimate(delta, &w.t())
    }

    fn weight_grad(&mut self, _layer: usize, input: &DenseMatrix, delta: &DenseMatrix) -> Result<DenseMatrix> {
        self.estimate(&input.t(), delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_weights, InitScheme};

    fn batch(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = Rng::new(seed, 1);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform())
    }

    #[test]
    fn exact_policy_matches_engine_bitwise() {
        let m = init_weights(&[6, 9, 7, 4], InitScheme::HeUniform, 1).unwrap();
        let x = batch(3, 6, 2);
        let mut p = ComputePolicy::new(PolicyKind::Exact, &m, 0).unwrap();
        let mut rng = Rng::new(0, 0);
        let t = forward_with_policy(&m, &x, &mut p, &mut rng).unwrap();
        assert_eq!(t, nn::forward_batch(&m, &x).unwrap());
    }

    #[test]
    fn full_keep_dropout_equals_exact() {
        let m = init_weights(&[6, 9, 7, 4], InitScheme::HeUniform, 1).unwrap();
        let x = batch(4, 6, 3);
        let mut p = ComputePolicy::new(PolicyKind::Dropout { p_keep: 1.0 }, &m, 0).unwrap();
        let mut rng = Rng::new(0, 0);
        let t = forward_with_policy(&m, &x, &mut p, &mut rng).unwrap();
        let e = nn::forward_batch(&m, &x).unwrap();
        assert_eq!(t.post, e.post);
        let g = backward_with_policy(&m, &t, &[0, 1, 2, 3], &mut p, &mut rng).unwrap();
        let ge = nn::backward(&m, &e, &[0, 1, 2, 3]).unwrap();
        assert_eq!(g, ge);
    }

    #[test]
    fn dropout_masks_are_consistent() {
        let m = init_weights(&[5, 40, 3], InitScheme::HeUniform, 4).unwrap();
        let x = batch(1, 5, 5);
        let mut p = ComputePolicy::new(PolicyKind::Dropout { p_keep: 0.3 }, &m, 0).unwrap();
        let mut rng = Rng::new(9, 0);
        let t = forward_with_policy(&m, &x, &mut p, &mut rng).unwrap();
        let g = backward_with_policy(&m, &t, &[2], &mut p, &mut rng).unwrap();
        let active = &t.masks[0].as_ref().unwrap().active[0];
        for j in 0..40 {
            if !active.contains(&j) {
                assert_eq!(t.post[1].get(0, j), 0.0);
                assert_eq!(g.biases[0][j], 0.0);
                assert!((0..5).all(|i| g.weights[0].get(i, j) == 0.0));
            }
        }
        let kept = active.iter().find(|&&j| t.pre[0].get(0, j) > 0.0);
        if let Some(&j) = kept {
            assert!((t.post[1].get(0, j) - t.pre[0].get(0, j) / 0.3).abs() < 1e-12);
        }
        assert!(p.stats().mean_active_fraction().unwrap() < 1.0);
    }

    #[test]
    fn adaptive_keep_prob_cases() {
        let z = DenseVector::from(vec![-3.0, 0.0, 2.0, 5.0]);
        let half = adaptive_keep_probs(&z, 0.0, 0.0);
        assert!(half.iter().all(|&p| p == 0.5));
        let high = adaptive_keep_probs(&z, 0.0, 100.0);
        assert!(high.iter().all(|&p| p == 1.0));
        let low = adaptive_keep_probs(&z, 0.0, -100.0);
        assert!(low.iter().all(|&p| p == 0.01));
        let mono = adaptive_keep_probs(&z, 1.5, 0.0);
        assert!(mono.as_slice().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn mc_with_full_budget_matches_exact_gradients() {
        let m = init_weights(&[5, 8, 8, 3], InitScheme::HeUniform, 6).unwrap();
        let x = batch(4, 5, 7);
        let targets = [0, 2, 1, 1];
        let mut p = ComputePolicy::new(PolicyKind::McBackprop { k_samples: 8 }, &m, 0).unwrap();
        let mut rng = Rng::new(1, 1);
        let t = forward_with_policy(&m, &x, &mut p, &mut rng).unwrap();
        let g = backward_with_policy(&m, &t, &targets, &mut p, &mut rng).unwrap();
        let ge = nn::backward(&m, &t, &targets).unwrap();
        for (a, b) in g.weights.iter().zip(&ge.weights) {
            assert!(a.max_abs_diff(b) <= 1e-12);
        }
    }

    #[test]
    fn alsh_known_active_set_zeroes_other_columns() {
        let m = init_weights(&[3, 4, 2], InitScheme::HeUniform, 2).unwrap();
        let x = batch(1, 3, 1);
        let mut trace = ForwardTrace::new(x.clone());
        let mask = NodeMask {
            active: vec![vec![0, 2]],
            scale: 1.0,
        };
        let z = nn::layer_product_masked(&x, &m.weights[0], &m.biases[0], &mask.active).unwrap();
        trace.push_layer(&m, 0, z, Some(mask));
        let z = nn::layer_product(&trace.post[1], &m.weights[1], &m.biases[1]).unwrap();
        trace.push_layer(&m, 1, z, None);
        let g = nn::backward(&m, &trace, &[1]).unwrap();
        for i in 0..3 {
            assert_eq!(g.weights[0].get(i, 1), 0.0);
            assert_eq!(g.weights[0].get(i, 3), 0.0);
        }
        // oracle: exact backward on a model whose nodes 1 and 3 are switched off
        let mut reduced = m.clone();
        for j in [1, 3] {
            for i in 0..3 {
                reduced.weights[0].set(i, j, 0.0);
            }
            reduced.biases[0][j] = -1.0;
        }
        let ge = nn::backward(&reduced, &nn::forward_batch(&reduced, &x).unwrap(), &[1]).unwrap();
        for j in [0, 2] {
            for i in 0..3 {
                assert!((g.weights[0].get(i, j) - ge.weights[0].get(i, j)).abs() < 1e-12);
            }
        }
        assert!(g.weights[1].max_abs_diff(&ge.weights[1]) < 1e-12);
    }

    #[test]
    fn alsh_rebuild_without_changes_is_identity() {
        let m = init_weights(&[10, 32, 3], InitScheme::HeUniform, 8).unwrap();
        let mut p = ComputePolicy::new(PolicyKind::alsh(), &m, 5).unwrap();
        let before = p.alsh_indices().to_vec();
        assert!(!p.rebuild_if_due(&m, 50).unwrap());
        assert!(p.rebuild_if_due(&m, 100).unwrap());
        assert_eq!(p.alsh_indices(), &before[..]);
        assert_eq!(p.stats().rebuilds, 1);
    }

    #[test]
    fn mc_budget_validated() {
        let m = init_weights(&[5, 8, 3], InitScheme::HeUniform, 6).unwrap();
        assert!(ComputePolicy::new(PolicyKind::McBackprop { k_samples: 0 }, &m, 0).is_err());
        assert!(ComputePolicy::new(PolicyKind::McBackprop { k_samples: 9 }, &m, 0).is_err());
        assert!(ComputePolicy::new(PolicyKind::Dropout { p_keep: 0.0 }, &m, 0).is_err());
    }
}
