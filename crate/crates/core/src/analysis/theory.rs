//! Error propagation through linear networks whose nodes sum only a subset of
//! their inputs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector, Rng};
use crate::nn::{Activation, MlpModel, OutputHead};

/// `sets[k][j]` lists the inputs of node `j` of layer `k` whose contribution
/// is computed; all other terms of the node's sum are omitted.
pub type InputActiveSets = Vec<Vec<Vec<usize>>>;

/// Exact and approximate activations of every layer and the two ways of
/// getting their difference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerErrorProfile {
    /// Exact activations `a^k`, one vector per layer.
    pub exact: Vec<DenseVector>,
    /// Approximate activations `ā^k` from the masked forward pass.
    pub approx: Vec<DenseVector>,
    /// `e^k = a^k − ā^k`.
    pub direct: Vec<DenseVector>,
    /// `e^k` evaluated by the layer recursion.
    pub recursive: Vec<DenseVector>,
    /// `e^k_j / ā^k_j` (NaN where `ā^k_j = 0`).
    pub ratios: Vec<DenseVector>,
}

impl LayerErrorProfile {
    /// Largest `|direct − recursive| / max(|direct|, scale_floor)` over all nodes.
    pub fn max_recursion_error(&self, scale_floor: f64) -> f64 {
        let mut worst = 0.0f64;
        for (d, r) in self.direct.iter().zip(&self.recursive) {
            for (x, y) in d.iter().zip(r.iter()) {
                worst = worst.max((x - y).abs() / x.abs().max(scale_floor));
            }
        }
        worst
    }
}

fn require_linear(model: &MlpModel) -> Result<()> {
    let linear = (0..model.n_layers()).all(|k| model.activation(k) == Some(Activation::Linear));
    if linear {
        Ok(())
    } else {
        Err(Error::Precondition("error analysis needs linear activations on every layer".into()))
    }
}

fn check_sets(model: &MlpModel, sets: &InputActiveSets) -> Result<()> {
    if sets.len() != model.n_layers() {
        return Err(Error::dim(
            "lemma1_error",
            format!("{} active-set layers for {} model layers", sets.len(), model.n_layers()),
        ));
    }
    for (k, layer) in sets.iter().enumerate() {
        let (n_in, n_out) = model.weights[k].shape();
        if layer.len() != n_out || layer.iter().flatten().any(|&i| i >= n_in) {
            return Err(Error::dim("lemma1_error", format!("active sets of layer {k} do not fit {n_in}x{n_out}")));
        }
    }
    Ok(())
}

fn membership(active: &[usize], n: usize) -> Vec<bool> {
    let mut on = vec![false; n];
    for &i in active {
        on[i] = true;
    }
    on
}

/// Exact and masked forward passes of one input through a linear model, plus
/// the recursion `e^k_j = e^{k−1}·W^k_{:,j} + Σ_{i∉↑} ā^{k−1}_i W^k_{i,j}`
/// (with `a^0 = ā^0 = x`, so the first layer reduces to the omitted terms).
pub fn lemma1_error(model: &MlpModel, input: &DenseVector, sets: &InputActiveSets) -> Result<LayerErrorProfile> {
    require_linear(model)?;
    check_sets(model, sets)?;
    if input.len() != model.n_inputs() {
        return Err(Error::dim("lemma1_error", "input length does not match the model"));
    }

    let mut exact = vec![input.clone()];
    let mut approx = vec![input.clone()];
    let mut recursive = vec![DenseVector::zeros(input.len())];
    for (k, w) in model.weights.iter().enumerate() {
        let b = &model.biases[k];
        let (n_in, n_out) = w.shape();
        let (a_prev, abar_prev, e_prev) = (&exact[k], &approx[k], &recursive[k]);
        let mut a = vec![0.0; n_out];
        let mut abar = vec![0.0; n_out];
        let mut e = vec![0.0; n_out];
        for j in 0..n_out {
            let on = membership(&sets[k][j], n_in);
            let (mut full, mut part, mut carried, mut omitted) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n_in {
                let wij = w.get(i, j);
                full += a_prev[i] * wij;
                carried += e_prev[i] * wij;
                if on[i] {
                    part += abar_prev[i] * wij;
                } else {
                    omitted += abar_prev[i] * wij;
                }
            }
            a[j] = full + b[j];
            abar[j] = part + b[j];
            e[j] = carried + omitted;
        }
        exact.push(a.into());
        approx.push(abar.into());
        recursive.push(e.into());
    }

    let (exact, approx, recursive) = (exact.split_off(1), approx.split_off(1), recursive.split_off(1));
    let direct: Vec<DenseVector> = exact
        .iter()
        .zip(&approx)
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x - y).collect::<Vec<_>>().into())
        .collect();
    let ratios = direct
        .iter()
        .zip(&approx)
        .map(|(e, b)| {
            e.iter()
                .zip(b.iter())
                .map(|(x, y)| if *y == 0.0 { f64::NAN } else { x / y })
                .collect::<Vec<_>>()
                .into()
        })
        .collect();
    Ok(LayerErrorProfile {
        exact,
        approx,
        direct,
        recursive,
        ratios,
    })
}

/// Network of `depth` linear `width × width` layers with weights `1/width`,
/// zero biases and an all-ones input, in which every node keeps its first
/// `c·width/(c+1)` inputs. All contributions to a node are equal, so its kept
/// sum is exactly `c` times its omitted sum.
pub fn build_theorem1_network(c: usize, depth: usize, width: usize) -> Result<(MlpModel, InputActiveSets, DenseVector)> {
    if c == 0 || depth == 0 || width == 0 {
        return Err(Error::param("c, depth and width must be positive"));
    }
    if width % (c + 1) != 0 {
        return Err(Error::param(format!("width {width} is not divisible by c + 1 = {}", c + 1)));
    }
    let w = DenseMatrix::from_fn(width, width, |_, _| 1.0 / width as f64);
    let model = MlpModel::new(
        vec![width; depth + 1],
        vec![w; depth],
        vec![DenseVector::zeros(width); depth],
        Activation::Linear,
        OutputHead::Linear,
    )?;
    let kept: Vec<usize> = (0..c * width / (c + 1)).collect();
    let sets = vec![vec![kept; width]; depth];
    Ok((model, sets, vec![1.0; width].into()))
}

/// Kept-to-omitted contribution ratio `Σ_{i∈↑} ā_i W_ij / Σ_{i∉↑} ā_i W_ij` at
/// every node, evaluated on the approximate activations.
pub fn contribution_ratios(model: &MlpModel, input: &DenseVector, sets: &InputActiveSets) -> Result<Vec<DenseVector>> {
    let profile = lemma1_error(model, input, sets)?;
    let mut out = Vec::with_capacity(model.n_layers());
    for (k, w) in model.weights.iter().enumerate() {
        let prev = if k == 0 { input } else { &profile.approx[k - 1] };
        let (n_in, n_out) = w.shape();
        let ratios: Vec<f64> = (0..n_out)
            .map(|j| {
                let on = membership(&sets[k][j], n_in);
                let (mut kept, mut omitted) = (0.0, 0.0);
                for i in 0..n_in {
                    let t = prev[i] * w.get(i, j);
                    if on[i] {
                        kept += t;
                    } else {
                        omitted += t;
                    }
                }
                kept / omitted
            })
            .collect();
        out.push(ratios.into());
    }
    Ok(out)
}

/// Random linear network (1..=`max_layers` layers, widths 1..=`max_width`)
/// with Gaussian weights, biases and input, where each input of each node is
/// kept with probability 1/2.
pub fn random_linear_fixture(
    rng: &mut Rng,
    max_layers: usize,
    max_width: usize,
) -> Result<(MlpModel, DenseVector, InputActiveSets)> {
    if max_layers == 0 || max_width == 0 {
        return Err(Error::param("fixture bounds must be positive"));
    }
    let layers = 1 + rng.below(max_layers);
    let dims: Vec<usize> = (0..=layers).map(|_| 1 + rng.below(max_width)).collect();
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    let mut sets = Vec::with_capacity(layers);
    for k in 0..layers {
        weights.push(DenseMatrix::from_fn(dims[k], dims[k + 1], |_, _| rng.gauss()));
        biases.push((0..dims[k + 1]).map(|_| rng.gauss()).collect::<Vec<_>>().into());
        let mut layer = Vec::with_capacity(dims[k + 1]);
        for _ in 0..dims[k + 1] {
            let mut keep = Vec::new();
            for i in 0..dims[k] {
                if rng.uniform() < 0.5 {
                    keep.push(i);
                }
            }
            layer.push(keep);
        }
        sets.push(layer);
    }
    let input: DenseVector = (0..dims[0]).map(|_| rng.gauss()).collect::<Vec<_>>().into();
    let model = MlpModel::new(dims, weights, biases, Activation::Linear, OutputHead::Linear)?;
    Ok((model, input, sets))
}

pub fn theorem1_ratio(c: f64, k: usize) -> f64 {
    ((c + 1.0) / c).powi(k as i32) - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Row {
    pub k: usize,
    /// Mean of `e^k_j / ā^k_j` over the layer's nodes.
    pub measured: f64,
    pub predicted: f64,
    /// Worst relative deviation over nodes of the ratio and of
    /// `a^k_j = ā^k_j·((c+1)/c)^k`.
    pub max_rel_error: f64,
}

/// Measure the error-to-estimate ratio on a fixture and compare every node
/// with the closed form.
pub fn theorem1_check(model: &MlpModel, input: &DenseVector, sets: &InputActiveSets, c: usize) -> Result<Vec<Theorem1Row>> {
    if c == 0 {
        return Err(Error::Precondition("c must be positive".into()));
    }
    let profile = lemma1_error(model, input, sets)?;
    let mut rows = Vec::with_capacity(model.n_layers());
    for k in 0..model.n_layers() {
        let predicted = theorem1_ratio(c as f64, k + 1);
        let growth = predicted + 1.0;
        let mut worst = 0.0f64;
        let mut sum = 0.0;
        for ((r, a), abar) in profile.ratios[k].iter().zip(profile.exact[k].iter()).zip(profile.approx[k].iter()) {
            if !r.is_finite() {
                return Err(Error::Precondition(format!("zero estimate in layer {}", k + 1)));
            }
            sum += r;
            worst = worst.max(((r - predicted) / predicted).abs());
            worst = worst.max(((a - abar * growth) / a).abs());
        }
        rows.push(Theorem1Row {
            k: k + 1,
            measured: sum / profile.ratios[k].len() as f64,
            predicted,
            max_rel_error: worst,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_active_means_no_error() {
        let (m, _, x) = build_theorem1_network(1, 3, 4).unwrap();
        let sets = vec![vec![(0..4).collect(); 4]; 3];
        let p = lemma1_error(&m, &x, &sets).unwrap();
        assert!(p.direct.iter().flat_map(|v| v.iter()).all(|&e| e == 0.0));
        assert!(p.recursive.iter().flat_map(|v| v.iter()).all(|&e| e == 0.0));
    }

    #[test]
    fn c5_width6_keeps_five() {
        let (_, sets, _) = build_theorem1_network(5, 2, 6).unwrap();
        assert!(sets.iter().flatten().all(|s| s.len() == 5));
    }

    #[test]
    fn divisibility_is_checked() {
        assert!(matches!(build_theorem1_network(5, 3, 7), Err(Error::Parameter(_))));
    }

    #[test]
    fn c1_symmetric_split() {
        let (m, sets, x) = build_theorem1_network(1, 3, 2).unwrap();
        let r = contribution_ratios(&m, &x, &sets).unwrap();
        assert!(r.iter().flat_map(|v| v.iter()).all(|&v| v == 1.0));
    }

    #[test]
    fn first_layer_ratio_is_one_over_c() {
        for c in [1, 2, 3, 7] {
            let (m, sets, x) = build_theorem1_network(c, 1, 2 * (c + 1)).unwrap();
            let rows = theorem1_check(&m, &x, &sets, c).unwrap();
            assert!((rows[0].measured - 1.0 / c as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn nonlinear_model_rejected() {
        let (mut m, sets, x) = build_theorem1_network(1, 2, 2).unwrap();
        m.hidden_activation = Activation::Relu;
        assert!(matches!(lemma1_error(&m, &x, &sets), Err(Error::Precondition(_))));
    }
}
