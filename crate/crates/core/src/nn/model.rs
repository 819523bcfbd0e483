use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, flops, DenseMatrix, DenseVector, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// What the last layer emits. Training always uses `LogSoftmax`; `Linear` is
/// for the all-linear fixtures of the error-propagation analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    LogSoftmax,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform on `[-√(6/fan_in), √(6/fan_in)]`, zero biases.
    HeUniform,
    Zeros,
}

/// Fully connected network. Layer `k` maps `layer_dims[k]` inputs to
/// `layer_dims[k + 1]` outputs (zero-based, so `weights[0]` is the first layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<DenseVector>,
    pub hidden_activation: Activation,
    pub output_head: OutputHead,
}

impl MlpModel {
    pub fn new(
        layer_dims: Vec<usize>,
        weights: Vec<DenseMatrix>,
        biases: Vec<DenseVector>,
        hidden_activation: Activation,
        output_head: OutputHead,
    ) -> Result<Self> {
        let model = MlpModel {
            layer_dims,
            weights,
            biases,
            hidden_activation,
            output_head,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return Err(Error::param(format!("invalid layer dims {:?}", self.layer_dims)));
        }
        let n = self.layer_dims.len() - 1;
        if self.weights.len() != n || self.biases.len() != n {
            return Err(Error::dim("MlpModel", "weight/bias count does not match layer count"));
        }
        for k in 0..n {
            let want = (self.layer_dims[k], self.layer_dims[k + 1]);
            if self.weights[k].shape() != want || self.biases[k].len() != want.1 {
                return Err(Error::dim(
                    "MlpModel",
                    format!("layer {k}: weights {:?}, expected {want:?}", self.weights[k].shape()),
                ));
            }
        }
        Ok(())
    }

    /// Number of weight layers (hidden layers + output layer).
    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn is_output_layer(&self, k: usize) -> bool {
        k + 1 == self.n_layers()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum::<usize>()
            + self.biases.iter().map(DenseVector::len).sum::<usize>()
    }

    /// Activation applied after layer `k` (`None` for a log-softmax output).
    pub fn activation(&self, k: usize) -> Option<Activation> {
        if self.is_output_layer(k) {
            match self.output_head {
                OutputHead::LogSoftmax => None,
                OutputHead::Linear => Some(Activation::Linear),
            }
        } else {
            Some(self.hidden_activation)
        }
    }
}

/// Build a model with weights drawn from `scheme`.
pub fn init_weights(layer_dims: &[usize], scheme: InitScheme, seed: u64) -> Result<MlpModel> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(Error::param(format!("invalid layer dims {layer_dims:?}")));
    }
    let mut rng = Rng::new(seed, 0x1417);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w = match scheme {
            InitScheme::HeUniform => {
                let bound = (6.0 / fan_in as f64).sqrt();
                DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.uniform_range(-bound, bound))
            }
            InitScheme::Zeros => DenseMatrix::zeros(fan_in, fan_out),
        };
        weights.push(w);
        biases.push(DenseVector::zeros(fan_out));
    }
    MlpModel::new(
        layer_dims.to_vec(),
        weights,
        biases,
        Activation::Relu,
        OutputHead::LogSoftmax,
    )
}

/// Per-row set of nodes that are computed in one layer; every other node's
/// pre-activation, activation and delta are zero. Kept activations are
/// multiplied by `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMask {
    pub active: Vec<Vec<usize>>,
    pub scale: f64,
}

impl NodeMask {
    pub fn all(rows: usize, width: usize) -> Self {
        NodeMask {
            active: vec![(0..width).collect(); rows],
            scale: 1.0,
        }
    }

    pub fn active_fraction(&self, width: usize) -> f64 {
        if self.active.is_empty() || width == 0 {
            return 1.0;
        }
        let total: usize = self.active.iter().map(Vec::len).sum();
        total as f64 / (self.active.len() * width) as f64
    }
}

/// Pre-activations and activations of every layer for a batch of inputs
/// (one sample per row). `post[0]` is the input; `post[k + 1]` is the output
/// of layer `k`; the final entry holds log-probabilities under `LogSoftmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre: Vec<DenseMatrix>,
    pub post: Vec<DenseMatrix>,
    pub masks: Vec<Option<NodeMask>>,
}

impl ForwardTrace {
    pub fn new(input: DenseMatrix) -> Self {
        ForwardTrace {
            pre: Vec::new(),
            post: vec![input],
            masks: Vec::new(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.post[0].rows()
    }

    pub fn output(&self) -> &DenseMatrix {
        self.post.last().unwrap()
    }

    /// Arg-max class of every row.
    pub fn predictions(&self) -> Vec<usize> {
        let out = self.output();
        (0..out.rows())
            .map(|i| {
                out.row(i)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                    .0
            })
            .collect()
    }

    /// Append a layer whose pre-activations are already computed.
    pub fn push_layer(&mut self, model: &MlpModel, k: usize, pre: DenseMatrix, mask: Option<NodeMask>) {
        let post = activate(model, k, &pre, mask.as_ref());
        self.pre.push(pre);
        self.post.push(post);
        self.masks.push(mask);
    }
}

/// Weight and bias gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<DenseVector>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model
                .weights
                .iter()
                .map(|w| DenseMatrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: model.biases.iter().map(|b| DenseVector::zeros(b.len())).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.as_slice().iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// `a · W + b` for every row.
pub fn layer_product(a: &DenseMatrix, w: &DenseMatrix, b: &DenseVector) -> Result<DenseMatrix> {
    let mut z = linalg::matmul(a, w)?;
    for i in 0..z.rows() {
        for (zv, bv) in z.row_mut(i).iter_mut().zip(b.iter()) {
            *zv += bv;
        }
    }
    Ok(z)
}

/// `a · W + b` evaluated only at the active nodes of each row; the rest stay 0.
/// Each computed entry is bit-identical to the same entry of [`layer_product`].
pub fn layer_product_masked(
    a: &DenseMatrix,
    w: &DenseMatrix,
    b: &DenseVector,
    active: &[Vec<usize>],
) -> Result<DenseMatrix> {
    if a.cols() != w.rows() || active.len() != a.rows() {
        return Err(Error::dim(
            "layer_product_masked",
            format!("input {:?}, weights {:?}, {} masks", a.shape(), w.shape(), active.len()),
        ));
    }
    let (n_in, n_out) = w.shape();
    let wd = w.as_slice();
    let mut z = DenseMatrix::zeros(a.rows(), n_out);
    let mut count = 0u64;
    for (r, nodes) in active.iter().enumerate() {
        let arow = a.row(r);
        let zrow = z.row_mut(r);
        for &j in nodes {
            let mut s = 0.0;
            for (t, &av) in arow.iter().enumerate() {
                s += av * wd[t * n_out + j];
            }
            zrow[j] = s + b[j];
        }
        count += (2 * n_in * nodes.len()) as u64;
    }
    flops::add(count);
    Ok(z)
}

fn activate(model: &MlpModel, k: usize, z: &DenseMatrix, mask: Option<&NodeMask>) -> DenseMatrix {
    match model.activation(k) {
        None => log_softmax_rows(z),
        Some(f) => {
            let mut a = DenseMatrix::from_fn(z.rows(), z.cols(), |i, j| f.apply(z.get(i, j)));
            if let Some(mask) = mask {
                for (r, nodes) in mask.active.iter().enumerate() {
                    let row = a.row_mut(r);
                    let mut keep = vec![false; row.len()];
                    for &j in nodes {
                        keep[j] = true;
                    }
                    for (v, k) in row.iter_mut().zip(keep) {
                        *v = if k { *v * mask.scale } else { 0.0 };
                    }
                }
            }
            a
        }
    }
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

fn log_softmax_rows(z: &DenseMatrix) -> DenseMatrix {
    let mut out = z.clone();
    for i in 0..z.rows() {
        let row = log_softmax(z.row(i));
        out.row_mut(i).copy_from_slice(&row);
    }
    out
}

/// Exact forward pass for one input vector.
pub fn forward(model: &MlpModel, input: &DenseVector) -> Result<ForwardTrace> {
    forward_batch(model, &input.to_row_matrix())
}

/// Exact forward pass for a batch (one sample per row).
pub fn forward_batch(model: &MlpModel, input: &DenseMatrix) -> Result<ForwardTrace> {
    if input.cols() != model.n_inputs() {
        return Err(Error::dim(
            "forward",
            format!("input width {}, model expects {}", input.cols(), model.n_inputs()),
        ));
    }
    let mut trace = ForwardTrace::new(input.clone());
    for k in 0..model.n_layers() {
        let z = layer_product(&trace.post[k], &model.weights[k], &model.biases[k])?;
        trace.push_layer(model, k, z, None);
    }
    Ok(trace)
}

/// Mean negative log-likelihood of `targets` under a log-softmax trace.
pub fn nll_loss(trace: &ForwardTrace, targets: &[usize]) -> f64 {
    let out = trace.output();
    let total: f64 = targets.iter().enumerate().map(|(i, &t)| -out.get(i, t)).sum();
    total / targets.len() as f64
}

/// The two matrix products of each backward step. Implementations may
/// approximate them; the exact one is [`ExactProducts`].
pub trait BackpropProducts {
    /// `delta · Wᵀ`: the gradient with respect to the layer's input.
    fn propagate(&mut self, layer: usize, delta: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix>;
    /// `inputᵀ · delta`: the weight gradient.
    fn weight_grad(&mut self, layer: usize, input: &DenseMatrix, delta: &DenseMatrix) -> Result<DenseMatrix>;
}

pub struct ExactProducts;

impl BackpropProducts for ExactProducts {
    fn propagate(&mut self, _layer: usize, delta: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix> {
        linalg::matmul_a_bt(delta, w)
    }

    fn weight_grad(&mut self, _layer: usize, input: &DenseMatrix, delta: &DenseMatrix) -> Result<DenseMatrix> {
        linalg::matmul_at_b(input, delta)
    }
}

/// Exact gradients of the mean NLL loss.
pub fn backward(model: &MlpModel, trace: &ForwardTrace, targets: &[usize]) -> Result<Gradients> {
    backward_with(model, trace, targets, &mut ExactProducts)
}

/// Backpropagation with pluggable products. Layers recorded with a
/// [`NodeMask`] use sparse products over their active nodes instead.
pub fn backward_with(
    model: &MlpModel,
    trace: &ForwardTrace,
    targets: &[usize],
    products: &mut dyn BackpropProducts,
) -> Result<Gradients> {
    if model.output_head != OutputHead::LogSoftmax {
        return Err(Error::Precondition("backward requires a log-softmax output".into()));
    }
    let n = model.n_layers();
    if trace.pre.len() != n || trace.post.len() != n + 1 {
        return Err(Error::dim("backward", "trace does not match the model"));
    }
    let batch = trace.batch_size();
    if targets.len() != batch {
        return Err(Error::dim("backward", format!("{} targets for batch of {batch}", targets.len())));
    }
    let m_o = model.n_outputs();
    if let Some(&t) = targets.iter().find(|&&t| t >= m_o) {
        return Err(Error::param(format!("target class {t} >= {m_o} outputs")));
    }

    // output delta: softmax(z) - onehot, averaged over the batch
    let out = trace.output();
    let inv_b = 1.0 / batch as f64;
    let mut delta = DenseMatrix::from_fn(batch, m_o, |i, j| {
        let p = out.get(i, j).exp();
        let y = if targets[i] == j { 1.0 } else { 0.0 };
        (p - y) * inv_b
    });

    let mut grads = Gradients::zeros_like(model);
    for k in (0..n).rev() {
        let input = &trace.post[k];
        let mask = trace.masks.get(k).and_then(Option::as_ref);
        grads.weights[k] = match mask {
            Some(m) => masked_weight_grad(input, &delta, m)?,
            None => products.weight_grad(k, input, &delta)?,
        };
        let db = grads.biases[k].as_mut_slice();
        for i in 0..batch {
            for (d, v) in db.iter_mut().zip(delta.row(i)) {
                *d += v;
            }
        }
        if k == 0 {
            break;
        }
        let upstream = match mask {
            Some(m) => masked_propagate(&delta, &model.weights[k], m)?,
            None => products.propagate(k, &delta, &model.weights[k])?,
        };
        // chain through the activation (and the mask/scale) of layer k-1
        let f = model.hidden_activation;
        let z_prev = &trace.pre[k - 1];
        let mut next = DenseMatrix::from_fn(batch, upstream.cols(), |i, j| {
            upstream.get(i, j) * f.derivative(z_prev.get(i, j))
        });
        if let Some(m) = trace.masks.get(k - 1).and_then(Option::as_ref) {
            apply_mask(&mut next, m);
        }
        delta = next;
    }
    Ok(grads)
}

fn apply_mask(d: &mut DenseMatrix, mask: &NodeMask) {
    for (r, nodes) in mask.active.iter().enumerate() {
        let row = d.row_mut(r);
        let mut out = vec![0.0; row.len()];
        for &j in nodes {
            out[j] = row[j] * mask.scale;
        }
        row.copy_from_slice(&out);
    }
}

fn masked_weight_grad(input: &DenseMatrix, delta: &DenseMatrix, mask: &NodeMask) -> Result<DenseMatrix> {
    let (n_in, n_out) = (input.cols(), delta.cols());
    let mut dw = DenseMatrix::zeros(n_in, n_out);
    let mut count = 0u64;
    let data = dw.as_mut_slice();
    for (r, nodes) in mask.active.iter().enumerate() {
        let arow = input.row(r);
        let drow = delta.row(r);
        for (i, &av) in arow.iter().enumerate() {
            let base = i * n_out;
            for &j in nodes {
                data[base + j] += av * drow[j];
            }
        }
        count += (2 * n_in * nodes.len()) as u64;
    }
    flops::add(count);
    if dw.is_finite() {
        Ok(dw)
    } else {
        Err(Error::NonFinite("masked_weight_grad"))
    }
}

fn masked_propagate(delta: &DenseMatrix, w: &DenseMatrix, mask: &NodeMask) -> Result<DenseMatrix> {
    let (n_in, n_out) = w.shape();
    let wd = w.as_slice();
    let mut g = DenseMatrix::zeros(delta.rows(), n_in);
    let mut count = 0u64;
    for (r, nodes) in mask.active.iter().enumerate() {
        let drow = delta.row(r);
        let grow = g.row_mut(r);
        for (i, gv) in grow.iter_mut().enumerate() {
            let base = i * n_out;
            let mut s = 0.0;
            for &j in nodes {
                s += drow[j] * wd[base + j];
            }
            *gv = s;
        }
        count += (2 * n_in * nodes.len()) as u64;
    }
    flops::add(count);
    Ok(g)
}
