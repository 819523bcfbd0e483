use serde::{Deserialize, Serialize};

use crate::analysis::{ConfusionMatrix, EpochRecord, TrainReport};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::linalg::{flops, flops::Phase, DenseMatrix, Rng};
use crate::nn::{self, MlpModel, Optimizer, OptimizerKind};
use crate::policy::{self, ComputePolicy, PolicyKind};

const SHUFFLE_STREAM: u64 = 0x5e_0f;
const POLICY_STREAM: u64 = 0x9011;
const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// `None` picks 1e-3, or 1e-4 for MC backprop at batch size 1.
    pub learning_rate: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 1,
            optimizer: OptimizerKind::Adam,
            learning_rate: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn effective_learning_rate(&self, policy: &PolicyKind) -> f64 {
        match self.learning_rate {
            Some(lr) => lr,
            None if matches!(policy, PolicyKind::McBackprop { .. }) && self.batch_size == 1 => 1e-4,
            None => 1e-3,
        }
    }
}

/// Predictions for every row of `ds` under the policy's inference rule.
pub fn predict(model: &MlpModel, policy: &mut ComputePolicy, ds: &Dataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let x = ds.features().select_rows(chunk);
        out.extend(policy.infer(model, &x)?.predictions());
    }
    Ok(out)
}

pub fn accuracy(model: &MlpModel, policy: &mut ComputePolicy, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let pred = predict(model, policy, ds)?;
    let hits = pred.iter().zip(ds.labels()).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / ds.len() as f64)
}

/// Train `model` in place and report validation accuracy per epoch (entry 0
/// is the untrained model), phase costs, and the final test confusion matrix.
pub fn train(
    model: &mut MlpModel,
    split: &Split,
    policy_kind: PolicyKind,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if config.batch_size == 0 {
        return Err(Error::param("batch_size must be at least 1"));
    }
    model.validate()?;
    if split.train.n_features() != model.n_inputs() {
        return Err(Error::dim(
            "train",
            format!("data has {} features, model expects {}", split.train.n_features(), model.n_inputs()),
        ));
    }
    if split.train.n_classes() > model.n_outputs() {
        return Err(Error::dim(
            "train",
            format!("data has {} classes, model outputs {}", split.train.n_classes(), model.n_outputs()),
        ));
    }

    let lr = config.effective_learning_rate(&policy_kind);
    let mut optimizer = Optimizer::new(config.optimizer, lr);
    let mut policy = {
        let _g = flops::enter(Phase::Overhead);
        ComputePolicy::new(policy_kind, model, config.seed)?
    };
    let mut policy_rng = Rng::new(config.seed, POLICY_STREAM);

    let mut epochs = Vec::with_capacity(config.epochs + 1);
    epochs.push(EpochRecord {
        epoch: 0,
        validation_accuracy: accuracy(model, &mut policy, &split.validation)?,
        mean_train_loss: None,
        cost: Default::default(),
    });

    let n = split.train.len();
    let mut samples_seen = 0u64;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        Rng::new(config.seed ^ epoch as u64, SHUFFLE_STREAM).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let start = flops::snapshot();
        for batch in order.chunks(config.batch_size) {
            let x: DenseMatrix = split.train.features().select_rows(batch);
            let targets: Vec<usize> = batch.iter().map(|&i| split.train.labels()[i]).collect();

            let trace = {
                let _g = flops::enter(Phase::Forward);
                policy::forward_with_policy(model, &x, &mut policy, &mut policy_rng)?
            };
            loss_sum += nn::nll_loss(&trace, &targets) * batch.len() as f64;
            let grads = {
                let _g = flops::enter(Phase::Backward);
                policy::backward_with_policy(model, &trace, &targets, &mut policy, &mut policy_rng)?
            };
            {
                let _g = flops::enter(Phase::Other);
                optimizer.step(model, &grads)?;
            }
            let before = samples_seen;
            samples_seen += batch.len() as u64;
            policy.rebuild_if_crossed(model, before, samples_seen)?;
        }
        // refresh the index against the final weights of the epoch
        policy.rebuild(model)?;
        let cost = flops::snapshot().since(&start);
        if !model.weights.iter().all(DenseMatrix::is_finite) {
            return Err(Error::NonFinite("weights after epoch"));
        }

        epochs.push(EpochRecord {
            epoch,
            validation_accuracy: accuracy(model, &mut policy, &split.validation)?,
            mean_train_loss: (n > 0).then(|| loss_sum / n as f64),
            cost,
        });
    }

    let predictions = predict(model, &mut policy, &split.test)?;
    let confusion = ConfusionMatrix::from_predictions(
        split.test.labels(),
        &predictions,
        model.n_outputs(),
    )?;
    Ok(TrainReport::new(
        policy_kind,
        config.clone(),
        lr,
        epochs,
        confusion,
        policy.stats().clone(),
    ))
}
