//! Dense feed-forward regressor with analytic gradients.
//!
//! Parameters live in one flat [`ParameterVector`]. The layout is, for each
//! layer in order, the row-major weight matrix `(outputs, inputs)` followed by
//! the bias vector `(outputs)`. Hidden layers apply the configured activation;
//! the single output unit is linear.

use rand::Rng as _;

use crate::error::{FclError, Result};
use crate::seed::{self, Stream};

/// Flat trainable weights of a model. Every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(FclError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn to_bits(&self) -> Vec<u64> {
        self.0.iter().map(|v| v.to_bits()).collect()
    }
}

/// Diagonal of a Fisher information matrix. Entries are finite and `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherDiagonal(Vec<f64>);

impl FisherDiagonal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (index, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(FclError::NonFinite { index });
            }
            if *v < 0.0 {
                return Err(FclError::NegativeFisher { index });
            }
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Identity curvature; turns an elastic anchor into an isotropic L2 term.
    pub fn ones(len: usize) -> Self {
        Self(vec![1.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Elementwise sum, used for the online running Fisher.
    pub fn add(&self, other: &FisherDiagonal) -> Result<FisherDiagonal> {
        check_len(self.len(), other.len())?;
        FisherDiagonal::new(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(FclError::config(format!("unknown activation '{other}'"))),
        }
    }
}

/// Layer widths from input to the scalar output, plus the hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(FclError::InvalidModel(
                "need at least an input and an output layer".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(FclError::InvalidModel("layer sizes must be positive".into()));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(FclError::InvalidModel("output dimension must be 1".into()));
        }
        Ok(Self {
            layer_sizes,
            activation,
        })
    }

    /// `[input_dim, hidden..., 1]`.
    pub fn with_hidden(input_dim: usize, hidden: &[usize], activation: Activation) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::new(sizes, activation)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn layers(&self) -> impl Iterator<Item = LayerShape> + '_ {
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let shape = LayerShape {
                inputs: w[0],
                outputs: w[1],
                weight_offset: offset,
                bias_offset: offset + w[0] * w[1],
            };
            offset += w[0] * w[1] + w[1];
            shape
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    weight_offset: usize,
    bias_offset: usize,
}

/// Structured view of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `(outputs, inputs)`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

pub fn unflatten(spec: &MlpSpec, theta: &ParameterVector) -> Result<Vec<Layer>> {
    check_len(spec.param_count(), theta.len())?;
    let p = theta.as_slice();
    Ok(spec
        .layers()
        .map(|s| Layer {
            inputs: s.inputs,
            outputs: s.outputs,
            weights: p[s.weight_offset..s.bias_offset].to_vec(),
            biases: p[s.bias_offset..s.bias_offset + s.outputs].to_vec(),
        })
        .collect())
}

pub fn flatten(layers: &[Layer]) -> Result<ParameterVector> {
    let mut out = Vec::new();
    for layer in layers {
        check_len(layer.inputs * layer.outputs, layer.weights.len())?;
        check_len(layer.outputs, layer.biases.len())?;
        out.extend_from_slice(&layer.weights);
        out.extend_from_slice(&layer.biases);
    }
    ParameterVector::new(out)
}

/// Feature matrix with labels in `[0, 1]`; rows carry a stable sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
    ids: Vec<u64>,
}

impl LabeledSet {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        let ids = (0..labels.len() as u64).collect();
        Self::with_ids(dim, features, labels, ids)
    }

    pub fn with_ids(dim: usize, features: Vec<f64>, labels: Vec<f64>, ids: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(FclError::InvalidDataset("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(FclError::InvalidDataset(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if ids.len() != labels.len() {
            return Err(FclError::InvalidDataset("one id per row required".into()));
        }
        if let Some(i) = labels.iter().position(|y| !(0.0..=1.0).contains(y)) {
            return Err(FclError::InvalidDataset(format!(
                "label {} at row {i} outside [0, 1]",
                labels[i]
            )));
        }
        if let Some(index) = features.iter().position(|v| !v.is_finite()) {
            return Err(FclError::NonFinite { index });
        }
        Ok(Self {
            dim,
            features,
            labels,
            ids,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledSet {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            ids.push(self.ids[i]);
        }
        LabeledSet {
            dim: self.dim,
            features,
            labels,
            ids,
        }
    }

    /// Concatenation of several sets with equal width.
    pub fn concat<'a>(dim: usize, parts: impl IntoIterator<Item = &'a LabeledSet>) -> Result<LabeledSet> {
        let mut out = LabeledSet::empty(dim);
        for part in parts {
            if part.dim != dim {
                return Err(FclError::DimensionMismatch {
                    expected: dim,
                    actual: part.dim,
                });
            }
            out.features.extend_from_slice(&part.features);
            out.labels.extend_from_slice(&part.labels);
            out.ids.extend_from_slice(&part.ids);
        }
        Ok(out)
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(FclError::LengthMismatch { expected, actual });
    }
    Ok(())
}

fn check_input(spec: &MlpSpec, dim: usize) -> Result<()> {
    if spec.input_dim() != dim {
        return Err(FclError::DimensionMismatch {
            expected: spec.input_dim(),
            actual: dim,
        });
    }
    Ok(())
}

/// Uniform Glorot initialization with zero biases.
pub fn init_model(spec: &MlpSpec, seed: u64) -> ParameterVector {
    let mut rng = seed::rng(seed, Stream::Init, &[]);
    let mut values = vec![0.0; spec.param_count()];
    for layer in spec.layers() {
        let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
        for w in &mut values[layer.weight_offset..layer.bias_offset] {
            *w = rng.random_range(-limit..=limit);
        }
    }
    ParameterVector(values)
}

/// Reusable activation buffers for per-sample forward/backward passes.
#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    shapes: Vec<LayerShape>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(spec: &MlpSpec) -> Self {
        let sizes = &spec.layer_sizes[1..];
        let widest = *spec.layer_sizes.iter().max().unwrap();
        Self {
            shapes: spec.layers().collect(),
            pre: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            post: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
        }
    }
}

fn forward(spec: &MlpSpec, theta: &[f64], x: &[f64], scratch: &mut Scratch) -> f64 {
    let last = scratch.shapes.len() - 1;
    for l in 0..=last {
        let layer = scratch.shapes[l];
        let (before, rest) = scratch.post.split_at_mut(l);
        let input: &[f64] = if l == 0 { x } else { &before[l - 1] };
        let pre = &mut scratch.pre[l];
        let post = &mut rest[0];
        for o in 0..layer.outputs {
            let row = &theta[layer.weight_offset + o * layer.inputs..][..layer.inputs];
            let mut z = theta[layer.bias_offset + o];
            for (w, a) in row.iter().zip(input) {
                z += w * a;
            }
            pre[o] = z;
            post[o] = if l == last { z } else { spec.activation.apply(z) };
        }
    }
    scratch.post[last][0]
}

/// Adds `scale * d(output)/d(theta)` into `grad`. Requires a preceding
/// [`forward`] on the same `x` with the same scratch.
fn backward(spec: &MlpSpec, theta: &[f64], x: &[f64], scratch: &mut Scratch, scale: f64, grad: &mut [f64]) {
    let last = scratch.shapes.len() - 1;
    scratch.delta[0] = scale;
    for l in (0..=last).rev() {
        let layer = scratch.shapes[l];
        let input: &[f64] = if l == 0 { x } else { &scratch.post[l - 1] };
        for o in 0..layer.outputs {
            let d = scratch.delta[o];
            if d == 0.0 {
                continue;
            }
            let g = &mut grad[layer.weight_offset + o * layer.inputs..][..layer.inputs];
            for (gw, a) in g.iter_mut().zip(input) {
                *gw += d * a;
            }
            grad[layer.bias_offset + o] += d;
        }
        if l == 0 {
            break;
        }
        for i in 0..layer.inputs {
            let mut s = 0.0;
            for o in 0..layer.outputs {
                s += theta[layer.weight_offset + o * layer.inputs + i] * scratch.delta[o];
            }
            let z = scratch.pre[l - 1][i];
            let a = scratch.post[l - 1][i];
            scratch.delta_prev[i] = s * spec.activation.derivative(z, a);
        }
        std::mem::swap(&mut scratch.delta, &mut scratch.delta_prev);
    }
}

pub fn predict(spec: &MlpSpec, theta: &ParameterVector, x: &[f64]) -> Result<f64> {
    check_len(spec.param_count(), theta.len())?;
    check_input(spec, x.len())?;
    let mut scratch = Scratch::new(spec);
    Ok(forward(spec, theta.as_slice(), x, &mut scratch))
}

fn check_data(spec: &MlpSpec, theta: &ParameterVector, data: &LabeledSet) -> Result<()> {
    check_len(spec.param_count(), theta.len())?;
    if data.is_empty() {
        return Err(FclError::EmptyDataset);
    }
    check_input(spec, data.dim())
}

pub fn mse_loss(spec: &MlpSpec, theta: &ParameterVector, data: &LabeledSet) -> Result<f64> {
    check_data(spec, theta, data)?;
    let mut scratch = Scratch::new(spec);
    let mut sum = 0.0;
    for i in 0..data.len() {
        let r = forward(spec, theta.as_slice(), data.row(i), &mut scratch) - data.label(i);
        sum += r * r;
    }
    Ok(sum / data.len() as f64)
}

/// Mean squared error over `indices` and its gradient, written into `grad`
/// (overwritten). Returns the loss.
pub(crate) fn loss_and_grad_on(
    spec: &MlpSpec,
    theta: &[f64],
    data: &LabeledSet,
    indices: &[usize],
    scratch: &mut Scratch,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n = indices.len() as f64;
    let mut sum = 0.0;
    for &i in indices {
        let x = data.row(i);
        let r = forward(spec, theta, x, scratch) - data.label(i);
        sum += r * r;
        backward(spec, theta, x, scratch, 2.0 * r / n, grad);
    }
    sum / n
}

/// Exact gradient of [`mse_loss`] with respect to the parameters.
pub fn grad_mse(spec: &MlpSpec, theta: &ParameterVector, batch: &LabeledSet) -> Result<ParameterVector> {
    check_data(spec, theta, batch)?;
    let mut scratch = Scratch::new(spec);
    let mut grad = vec![0.0; theta.len()];
    let indices: Vec<usize> = (0..batch.len()).collect();
    loss_and_grad_on(spec, theta.as_slice(), batch, &indices, &mut scratch, &mut grad);
    ParameterVector::new(grad)
}

pub fn sgd_step(theta: &ParameterVector, total_grad: &ParameterVector, lr: f64) -> Result<ParameterVector> {
    check_len(theta.len(), total_grad.len())?;
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(FclError::config(format!("learning rate must be positive, got {lr}")));
    }
    ParameterVector::new(
        theta
            .as_slice()
            .iter()
            .zip(total_grad.as_slice())
            .map(|(t, g)| t - lr * g)
            .collect(),
    )
}

/// Empirical Fisher diagonal: the mean over samples of the elementwise square
/// of the per-sample loss gradient, with `loss = (prediction - label)^2`.
///
/// Samples are accumulated in a canonical order (sorted by the bit patterns of
/// their features and label), so the result does not depend on row order.
pub fn fisher_diagonal(spec: &MlpSpec, theta: &ParameterVector, data: &LabeledSet) -> Result<FisherDiagonal> {
    check_data(spec, theta, data)?;
    let order = canonical_order(data);
    let mut scratch = Scratch::new(spec);
    let p = theta.len();
    let mut sample_grad = vec![0.0; p];
    let mut acc = vec![0.0; p];
    for i in order {
        let x = data.row(i);
        let r = forward(spec, theta.as_slice(), x, &mut scratch) - data.label(i);
        sample_grad.iter_mut().for_each(|g| *g = 0.0);
        backward(spec, theta.as_slice(), x, &mut scratch, 2.0 * r, &mut sample_grad);
        for (a, g) in acc.iter_mut().zip(&sample_grad) {
            *a += g * g;
        }
    }
    let n = data.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    FisherDiagonal::new(acc)
}

fn canonical_order(data: &LabeledSet) -> Vec<usize> {
    let key = |i: usize| -> Vec<u64> {
        let mut k: Vec<u64> = data.row(i).iter().map(|v| v.to_bits()).collect();
        k.push(data.label(i).to_bits());
        k
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by_cached_key(|&i| key(i));
    order
}
