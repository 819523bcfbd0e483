use serde::{Deserialize, Serialize};

use super::model::{Gradients, MlpModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Plain SGD or bias-corrected Adam (β1 = 0.9, β2 = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first: Option<Gradients>,
    second: Option<Gradients>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first: None,
            second: None,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) -> Result<()> {
        if grads.weights.len() != model.weights.len()
            || grads
                .weights
                .iter()
                .zip(&model.weights)
                .any(|(g, w)| g.shape() != w.shape())
        {
            return Err(Error::dim("Optimizer::step", "gradient shapes do not match the model"));
        }
        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, g) in model.weights.iter_mut().zip(&grads.weights) {
                    w.axpy(-lr, g);
                }
                for (b, g) in model.biases.iter_mut().zip(&grads.biases) {
                    for (bv, gv) in b.as_mut_slice().iter_mut().zip(g.iter()) {
                        *bv -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let m = self.first.get_or_insert_with(|| Gradients::zeros_like(model));
                let v = self.second.get_or_insert_with(|| Gradients::zeros_like(model));
                let t = self.step_count as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p[i] -= lr * mh / (vh.sqrt() + eps);
                    }
                };
                for k in 0..model.weights.len() {
                    update(
                        model.weights[k].as_mut_slice(),
                        grads.weights[k].as_slice(),
                        m.weights[k].as_mut_slice(),
                        v.weights[k].as_mut_slice(),
                    );
                    update(
                        model.biases[k].as_mut_slice(),
                        grads.biases[k].as_slice(),
                        m.biases[k].as_mut_slice(),
                        v.biases[k].as_mut_slice(),
                    );
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{init_weights, InitScheme};

    #[test]
    fn zero_gradient_leaves_model_unchanged() {
        let mut m = init_weights(&[3, 4, 2], InitScheme::HeUniform, 1).unwrap();
        let before = m.clone();
        let g = Gradients::zeros_like(&m);
        Optimizer::sgd(0.1).step(&mut m, &g).unwrap();
        assert_eq!(m, before);
        let mut adam = Optimizer::adam(0.1);
        adam.step(&mut m, &g).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn sgd_unit_rate_with_grad_equal_to_weights_zeroes_them() {
        let mut m = init_weights(&[3, 4, 2], InitScheme::HeUniform, 2).unwrap();
        let g = Gradients {
            weights: m.weights.clone(),
            biases: m.biases.clone(),
        };
        Optimizer::sgd(1.0).step(&mut m, &g).unwrap();
        assert!(m.weights.iter().all(|w| w.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut m = init_weights(&[2, 3], InitScheme::HeUniform, 3).unwrap();
        let before = m.clone();
        let mut g = Gradients::zeros_like(&m);
        let vals = [0.5, -2.0, 1e-3, -7.0, 3.0, 0.0];
        g.weights[0].as_mut_slice().copy_from_slice(&vals);
        let lr = 0.01;
        Optimizer::adam(lr).step(&mut m, &g).unwrap();
        for (i, &gv) in vals.iter().enumerate() {
            let want = before.weights[0].as_slice()[i] - lr * gv / (gv.abs() + 1e-8);
            assert!((m.weights[0].as_slice()[i] - want).abs() < 1e-15);
        }
    }
}
