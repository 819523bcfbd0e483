use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use subsample_nn::alsh::AlshParams;
use subsample_nn::data::{self, Dataset, Split};
use subsample_nn::nn::{init_weights, Activation, InitScheme, MlpModel, OptimizerKind, TrainConfig};
use subsample_nn::policy::PolicyKind;

pub const DEFAULT_IMAGES: &str = "data/mnist-10k/images-idx3-ubyte";
pub const DEFAULT_LABELS: &str = "data/mnist-10k/labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Synth {
        samples: usize,
        features: usize,
        classes: usize,
        separation: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Exact,
    Dropout,
    AdaptiveDropout,
    Alsh,
    McBackprop,
}

impl std::str::FromStr for PolicyName {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string())).with_context(|| format!("unknown policy `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyName,
    pub p_keep: f64,
    pub alpha: f64,
    pub beta: f64,
    pub k_bits: usize,
    pub tables: usize,
    pub padding: usize,
    pub norm_bound: f64,
    pub k_samples: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let alsh = AlshParams::default();
        PolicyConfig {
            kind: PolicyName::Exact,
            p_keep: 0.05,
            alpha: 1.0,
            beta: 0.0,
            k_bits: alsh.k_bits,
            tables: alsh.tables,
            padding: alsh.padding,
            norm_bound: alsh.norm_bound,
            k_samples: 10,
        }
    }
}

impl PolicyConfig {
    pub fn kind(&self) -> PolicyKind {
        match self.kind {
            PolicyName::Exact => PolicyKind::Exact,
            PolicyName::Dropout => PolicyKind::Dropout { p_keep: self.p_keep },
            PolicyName::AdaptiveDropout => PolicyKind::AdaptiveDropout {
                alpha: self.alpha,
                beta: self.beta,
            },
            PolicyName::Alsh => PolicyKind::Alsh {
                params: AlshParams {
                    k_bits: self.k_bits,
                    tables: self.tables,
                    padding: self.padding,
                    norm_bound: self.norm_bound,
                },
            },
            PolicyName::McBackprop => PolicyKind::McBackprop {
                k_samples: self.k_samples,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Unset: 1e-3, or 1e-4 for MC backprop with batch size 1.
    pub learning_rate: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub train_size: usize,
    pub test_size: usize,
    pub validation_size: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    pub policy: PolicyConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Unset: 20 for MC backprop, 1 otherwise.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSpec::Idx {
                images: DEFAULT_IMAGES.into(),
                labels: DEFAULT_LABELS.into(),
            },
            train_size: 5000,
            test_size: 1000,
            validation_size: 500,
            hidden_layers: 3,
            width: 1000,
            activation: Activation::Relu,
            policy: PolicyConfig::default(),
            optimizer: OptimizerConfig::default(),
            epochs: 50,
            batch_size: None,
            seed: 0,
            out: "runs/default".into(),
        }
    }
}

impl RunConfig {
    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(match self.policy.kind {
            PolicyName::McBackprop => 20,
            _ => 1,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size(),
            optimizer: self.optimizer.kind,
            learning_rate: self.optimizer.learning_rate,
            seed: self.seed,
        }
    }

    pub fn layer_dims(&self, n_inputs: usize, n_classes: usize) -> Vec<usize> {
        let mut dims = vec![n_inputs];
        dims.extend(std::iter::repeat_n(self.width, self.hidden_layers));
        dims.push(n_classes);
        dims
    }

    /// Reject anything that would fail a precondition once the run starts.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            bail!("width must be positive");
        }
        if self.batch_size() == 0 {
            bail!("batch_size must be positive");
        }
        if self.train_size == 0 {
            bail!("train_size must be positive");
        }
        if let Some(lr) = self.optimizer.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                bail!("learning_rate must be positive");
            }
        }
        if let DatasetSpec::Synth {
            samples,
            features,
            classes,
            separation,
        } = &self.dataset
        {
            if *features == 0 || *classes < 2 || !separation.is_finite() {
                bail!("synthetic dataset needs features >= 1, classes >= 2 and a finite separation");
            }
            if self.train_size + self.test_size + self.validation_size > *samples {
                bail!("split sizes exceed the {samples} synthetic samples");
            }
        }
        // policy checks only look at layer widths
        let probe = init_weights(&self.layer_dims(1, 10), InitScheme::Zeros, 0)?;
        self.policy.kind().validate(&probe)?;
        Ok(())
    }

    pub fn load_data(&self, base: &Path) -> Result<Split> {
        let ds: Dataset = match &self.dataset {
            DatasetSpec::Idx { images, labels } => {
                let (images, labels) = (resolve(base, images), resolve(base, labels));
                data::load_idx(&images, &labels)
                    .with_context(|| format!("loading {} / {}", images.display(), labels.display()))?
            }
            DatasetSpec::Synth {
                samples,
                features,
                classes,
                separation,
            } => data::synth_blobs(*samples, *features, *classes, *separation, self.seed)?,
        };
        Ok(data::split(&ds, self.train_size, self.test_size, self.validation_size, self.seed)?)
    }

    pub fn build_model(&self, split: &Split) -> Result<MlpModel> {
        let n_classes = split.train.n_classes();
        let mut model = init_weights(&self.layer_dims(split.train.n_features(), n_classes), InitScheme::HeUniform, self.seed)?;
        model.hidden_activation = self.activation;
        Ok(model)
    }
}

/// Relative data paths are tried against the working directory, then `base`
/// (the config file's directory), then the source checkout.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() || p.exists() {
        return p.to_path_buf();
    }
    let checkout = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    [base.join(p), checkout.join(p)]
        .into_iter()
        .find(|c| c.exists())
        .unwrap_or_else(|| p.to_path_buf())
}

/// Set `value` at a dotted `path` inside a JSON object, creating objects on
/// the way. The value is parsed as JSON and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .with_context(|| format!("`--set {assignment}` is not of the form key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            bail!("empty key in `{path}`");
        }
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        let map = node.as_object_mut().unwrap();
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Read the config file (if any), apply overrides in order and deserialize.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Value::Object(Default::default()),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: RunConfig = serde_json::from_value(doc).context("invalid configuration")?;
    Ok(cfg)
}
