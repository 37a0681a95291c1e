//! A small convolutional classifier written from scratch: forward pass,
//! reverse-mode gradients, Adam training.
//!
//! The default architecture is
//! `Conv(64, 5x5) ReLU MaxPool Conv(128, 3x3) ReLU MaxPool Conv(128, 2x2)
//! ReLU GlobalAvgPool Dense(4)` on a `(1, 32, 32)` input, 141 700 trainable
//! parameters. Everything is generic over [`Real`] so the gradient checks
//! can run the training code paths in `f64`.

mod layers;
mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::NUM_CLASSES;
use crate::rng::{Domain, SeededRng};

pub use layers::{
    conv2d, conv2d_backward, cross_entropy, dense, dense_backward, global_avg_pool,
    global_avg_pool_backward, maxpool2, maxpool2_backward, relu, relu_backward, softmax, Tensor,
};
pub use train::{evaluate_loss, train, Adam, CnnConfig, EpochStats, TrainingHistory};

pub trait Real:
    num_traits::Float + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + Default + 'static
{
    /// `c = a * b + beta * c` for an `m x k` by `k x n` product. `a` and `b`
    /// are read through `(row stride, column stride)` pairs; `c` is dense
    /// row-major.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: (usize, usize), b: &[Self], sb: (usize, usize), beta: Self, c: &mut [Self]);
}

fn check_gemm<T>(m: usize, k: usize, n: usize, a: &[T], sa: (usize, usize), b: &[T], sb: (usize, usize), c: &[T]) {
    let last = |rows: usize, cols: usize, s: (usize, usize)| (rows.max(1) - 1) * s.0 + (cols.max(1) - 1) * s.1;
    assert!(m * k == 0 || last(m, k, sa) < a.len(), "gemm: a out of bounds");
    assert!(k * n == 0 || last(k, n, sb) < b.len(), "gemm: b out of bounds");
    assert!(c.len() >= m * n, "gemm: c out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: (usize, usize), b: &[Self], sb: (usize, usize), beta: Self, c: &mut [Self]) {
                check_gemm(m, k, n, a, sa, b, sb, c);
                // SAFETY: every index the kernel touches was bounds-checked above.
                unsafe {
                    $f(
                        m, k, n, 1.0, a.as_ptr(), sa.0 as isize, sa.1 as isize, b.as_ptr(), sb.0 as isize,
                        sb.1 as isize, beta, c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Debug, Error, PartialEq)]
pub enum CnnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
    },
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Dense {
        out_features: usize,
    },
    /// Terminal marker; the network returns logits and applies softmax only
    /// in [`cnn_predict`].
    Softmax,
}

pub const INPUT_SHAPE: [usize; 3] = [1, 32, 32];

pub fn default_architecture() -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Conv {
            out_channels: 64,
            kernel_h: 5,
            kernel_w: 5,
        },
        Relu,
        MaxPool2,
        Conv {
            out_channels: 128,
            kernel_h: 3,
            kernel_w: 3,
        },
        Relu,
        MaxPool2,
        Conv {
            out_channels: 128,
            kernel_h: 2,
            kernel_w: 2,
        },
        Relu,
        GlobalAvgPool,
        Dense {
            out_features: NUM_CLASSES,
        },
        Softmax,
    ]
}

fn layer_output(spec: &LayerSpec, shape: &[usize], last: bool) -> Result<Vec<usize>, CnnError> {
    let bad = |why: &str| Err(CnnError::Shape(format!("{spec:?} on {shape:?}: {why}")));
    match (*spec, shape) {
        (
            LayerSpec::Conv {
                out_channels,
                kernel_h,
                kernel_w,
            },
            &[_, h, w],
        ) => {
            if out_channels == 0 || kernel_h == 0 || kernel_w == 0 {
                return bad("zero-sized convolution");
            }
            if kernel_h > h || kernel_w > w {
                return bad("kernel larger than input");
            }
            Ok(vec![out_channels, h - kernel_h + 1, w - kernel_w + 1])
        }
        (LayerSpec::Relu, s) => Ok(s.to_vec()),
        (LayerSpec::MaxPool2, &[c, h, w]) => {
            if h % 2 != 0 || w % 2 != 0 {
                return bad("odd spatial size");
            }
            Ok(vec![c, h / 2, w / 2])
        }
        (LayerSpec::GlobalAvgPool, &[c, _, _]) => Ok(vec![c]),
        (LayerSpec::Dense { out_features }, &[_]) if out_features > 0 => Ok(vec![out_features]),
        (LayerSpec::Softmax, &[_]) if last => Ok(shape.to_vec()),
        (LayerSpec::Softmax, _) if !last => bad("softmax must be the last layer"),
        _ => bad("incompatible input rank"),
    }
}

/// Activation shape after every layer, starting with `input`. The chain
/// must end in `(NUM_CLASSES,)`.
pub fn shape_trace(arch: &[LayerSpec], input: [usize; 3]) -> Result<Vec<Vec<usize>>, CnnError> {
    if input.contains(&0) {
        return Err(CnnError::Shape(format!("empty input shape {input:?}")));
    }
    let mut trace = vec![input.to_vec()];
    for (i, spec) in arch.iter().enumerate() {
        let next = layer_output(spec, trace.last().unwrap(), i + 1 == arch.len())?;
        trace.push(next);
    }
    if trace.last().unwrap()[..] != [NUM_CLASSES] {
        return Err(CnnError::Shape(format!(
            "network ends in {:?}, expected [{NUM_CLASSES}]",
            trace.last().unwrap()
        )));
    }
    Ok(trace)
}

/// Trainable parameters per layer (zero for parameter-free layers).
pub fn param_count(arch: &[LayerSpec], input: [usize; 3]) -> Result<Vec<usize>, CnnError> {
    let trace = shape_trace(arch, input)?;
    Ok(arch
        .iter()
        .zip(&trace)
        .map(|(spec, shape)| match *spec {
            LayerSpec::Conv {
                out_channels,
                kernel_h,
                kernel_w,
            } => (kernel_h * kernel_w * shape[0] + 1) * out_channels,
            LayerSpec::Dense { out_features } => (shape[0] + 1) * out_features,
            _ => 0,
        })
        .collect())
}

/// Weights and biases of one layer; both empty for parameter-free layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight_shape: Vec<usize>,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Real> LayerParams<T> {
    fn empty() -> Self {
        Self {
            weight_shape: Vec::new(),
            weights: Vec::new(),
            biases: Vec::new(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight_shape: self.weight_shape.clone(),
            weights: vec![T::zero(); self.weights.len()],
            biases: vec![T::zero(); self.biases.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn conv_shape(&self) -> [usize; 4] {
        [
            self.weight_shape[0],
            self.weight_shape[1],
            self.weight_shape[2],
            self.weight_shape[3],
        ]
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += *b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += *b;
        }
    }

    fn scale(&mut self, s: T) {
        self.weights.iter_mut().for_each(|v| *v *= s);
        self.biases.iter_mut().for_each(|v| *v *= s);
    }
}

pub type Gradients<T> = Vec<LayerParams<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T = f32> {
    pub architecture: Vec<LayerSpec>,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerParams<T>>,
    pub seed: u64,
    pub config: CnnConfig,
}

impl<T: Real> CnnModel<T> {
    fn build(
        arch: &[LayerSpec],
        input_shape: [usize; 3],
        mut fill: impl FnMut(usize, usize, usize) -> (Vec<T>, Vec<T>),
    ) -> Result<Self, CnnError> {
        let trace = shape_trace(arch, input_shape)?;
        let layers = arch
            .iter()
            .zip(&trace)
            .enumerate()
            .map(|(i, (spec, shape))| match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel_h,
                    kernel_w,
                } => {
                    let fan_in = shape[0] * kernel_h * kernel_w;
                    let (weights, biases) = fill(i, fan_in * out_channels, fan_in);
                    let mut b = biases;
                    b.resize(out_channels, T::zero());
                    LayerParams {
                        weight_shape: vec![out_channels, shape[0], kernel_h, kernel_w],
                        weights,
                        biases: b,
                    }
                }
                LayerSpec::Dense { out_features } => {
                    let (weights, biases) = fill(i, shape[0] * out_features, shape[0]);
                    let mut b = biases;
                    b.resize(out_features, T::zero());
                    LayerParams {
                        weight_shape: vec![out_features, shape[0]],
                        weights,
                        biases: b,
                    }
                }
                _ => LayerParams::empty(),
            })
            .collect();
        Ok(Self {
            architecture: arch.to_vec(),
            input_shape,
            layers,
            seed: 0,
            config: CnnConfig::default(),
        })
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases; layer `i`
    /// draws from stream `(seed, i)`.
    pub fn init(arch: &[LayerSpec], input_shape: [usize; 3], seed: u64) -> Result<Self, CnnError> {
        let mut m = Self::build(arch, input_shape, |i, n, fan_in| {
            let mut rng = SeededRng::new(seed, Domain::CnnInit, i as u64);
            let std = (2.0 / fan_in as f64).sqrt();
            let w = (0..n).map(|_| T::from(rng.normal() * std).unwrap()).collect();
            (w, Vec::new())
        })?;
        m.seed = seed;
        Ok(m)
    }

    pub fn zeros(arch: &[LayerSpec], input_shape: [usize; 3]) -> Result<Self, CnnError> {
        Self::build(arch, input_shape, |_, n, _| (vec![T::zero(); n], Vec::new()))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        self.layers.iter().map(LayerParams::zeros_like).collect()
    }

    /// All parameters in layer order, weights before biases.
    pub fn flat_params(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.biases);
        }
        v
    }

    /// Inverse of [`CnnModel::flat_params`].
    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<(), CnnError> {
        if flat.len() != self.param_count() {
            return Err(CnnError::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut pos = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> CnnModel<U> {
        CnnModel {
            architecture: self.architecture.clone(),
            input_shape: self.input_shape,
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight_shape: l.weight_shape.clone(),
                    weights: l.weights.iter().map(|v| U::from(*v).unwrap()).collect(),
                    biases: l.biases.iter().map(|v| U::from(*v).unwrap()).collect(),
                })
                .collect(),
            seed: self.seed,
            config: self.config.clone(),
        }
    }
}

/// Activations kept for the backward pass of one sample.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input of every layer, then the logits.
    pub activations: Vec<Tensor<T>>,
    /// Winner indices for each pooling layer (empty elsewhere).
    pub argmax: Vec<Vec<usize>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn logits(&self) -> &[T] {
        &self.activations.last().unwrap().data
    }
}

pub fn forward_one<T: Real>(model: &CnnModel<T>, x: &Tensor<T>) -> Result<ForwardCache<T>, CnnError> {
    if x.shape != model.input_shape {
        return Err(CnnError::Shape(format!(
            "expected input {:?}, got {:?}",
            model.input_shape, x.shape
        )));
    }
    let mut activations = Vec::with_capacity(model.architecture.len() + 1);
    let mut argmax = Vec::with_capacity(model.architecture.len());
    activations.push(x.clone());
    for (spec, p) in model.architecture.iter().zip(&model.layers) {
        let cur = activations.last().unwrap();
        let (next, arg) = match spec {
            LayerSpec::Conv { .. } => (conv2d(cur, &p.weights, p.conv_shape(), &p.biases)?, Vec::new()),
            LayerSpec::Relu => (relu(cur), Vec::new()),
            LayerSpec::MaxPool2 => maxpool2(cur)?,
            LayerSpec::GlobalAvgPool => (global_avg_pool(cur)?, Vec::new()),
            LayerSpec::Dense { out_features } => (dense(cur, &p.weights, *out_features, &p.biases)?, Vec::new()),
            LayerSpec::Softmax => (cur.clone(), Vec::new()),
        };
        activations.push(next);
        argmax.push(arg);
    }
    Ok(ForwardCache { activations, argmax })
}

/// Logits (pre-softmax) for every input, plus the caches.
pub fn forward<T: Real>(
    model: &CnnModel<T>,
    batch: &[Tensor<T>],
) -> Result<(Vec<Vec<T>>, Vec<ForwardCache<T>>), CnnError> {
    let caches = crate::exec::try_map_range(batch.len(), |i| forward_one(model, &batch[i]))?;
    let logits = caches.iter().map(|c| c.logits().to_vec()).collect();
    Ok((logits, caches))
}

/// Reverse pass for one sample given `dL/dlogits`. Returns parameter
/// gradients and, when `need_input` is set, `dL/dinput`.
pub fn backward_one<T: Real>(
    model: &CnnModel<T>,
    cache: &ForwardCache<T>,
    dlogits: &[T],
    need_input: bool,
) -> (Gradients<T>, Option<Tensor<T>>) {
    let mut grads = model.zero_grads();
    let mut g = Tensor {
        shape: vec![dlogits.len()],
        data: dlogits.to_vec(),
    };
    for i in (0..model.architecture.len()).rev() {
        let input = &cache.activations[i];
        let p = &model.layers[i];
        let want_input = i > 0 || need_input;
        g = match model.architecture[i] {
            LayerSpec::Conv { .. } => {
                let (dw, db, din) = conv2d_backward(input, &p.weights, p.conv_shape(), &g, want_input);
                grads[i].weights = dw;
                grads[i].biases = db;
                match din {
                    Some(d) => d,
                    None => break,
                }
            }
            LayerSpec::Relu => relu_backward(input, &g),
            LayerSpec::MaxPool2 => maxpool2_backward(&input.shape, &cache.argmax[i], &g),
            LayerSpec::GlobalAvgPool => global_avg_pool_backward(&input.shape, &g),
            LayerSpec::Dense { .. } => {
                let (dw, db, din) = dense_backward(input, &p.weights, &g);
                grads[i].weights = dw;
                grads[i].biases = db;
                din
            }
            LayerSpec::Softmax => g,
        };
    }
    let din = need_input.then_some(g);
    (grads, din)
}

/// Per-sample loss, correctness and gradients (not yet averaged).
pub(crate) fn sample_loss_and_grads<T: Real>(
    model: &CnnModel<T>,
    x: &Tensor<T>,
    label: usize,
) -> Result<(T, bool, Gradients<T>), CnnError> {
    let cache = forward_one(model, x)?;
    let logits = cache.logits();
    let (loss, dlogits) = cross_entropy(logits, label);
    let correct = argmax_first(logits) == label;
    let (grads, _) = backward_one(model, &cache, &dlogits, false);
    Ok((loss, correct, grads))
}

fn check_labels(n: usize, labels: &[usize]) -> Result<(), CnnError> {
    if n != labels.len() {
        return Err(CnnError::Argument(format!(
            "{n} inputs but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(CnnError::Argument(format!("label {bad} out of range")));
    }
    Ok(())
}

/// Mean cross-entropy over the batch and its gradients. Samples run in
/// parallel; their gradients are summed in index order.
pub fn loss_and_grads<T: Real>(
    model: &CnnModel<T>,
    batch: &[Tensor<T>],
    labels: &[usize],
) -> Result<(T, Gradients<T>), CnnError> {
    let (loss, _, grads) = batch_loss_and_grads(model, batch, labels)?;
    Ok((loss, grads))
}

pub(crate) fn batch_loss_and_grads<T: Real>(
    model: &CnnModel<T>,
    batch: &[Tensor<T>],
    labels: &[usize],
) -> Result<(T, usize, Gradients<T>), CnnError> {
    check_labels(batch.len(), labels)?;
    if batch.is_empty() {
        return Err(CnnError::Argument("empty batch".into()));
    }
    let per = crate::exec::try_map_range(batch.len(), |i| sample_loss_and_grads(model, &batch[i], labels[i]))?;
    let mut total = model.zero_grads();
    let mut loss = T::zero();
    let mut correct = 0;
    for (l, c, g) in &per {
        loss += *l;
        correct += usize::from(*c);
        for (t, gi) in total.iter_mut().zip(g) {
            t.add_assign(gi);
        }
    }
    let inv = T::one() / T::from(batch.len()).unwrap();
    total.iter_mut().for_each(|t| t.scale(inv));
    Ok((loss * inv, correct, total))
}

fn argmax_first<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// `(class, probabilities)`; ties go to the lowest class.
pub fn cnn_predict<T: Real>(model: &CnnModel<T>, x: &Tensor<T>) -> Result<(usize, Vec<T>), CnnError> {
    let cache = forward_one(model, x)?;
    let probs = softmax(cache.logits());
    Ok((argmax_first(&probs), probs))
}

pub fn cnn_predict_batch<T: Real>(model: &CnnModel<T>, xs: &[Tensor<T>]) -> Result<Vec<usize>, CnnError> {
    crate::exec::try_map_range(xs.len(), |i| cnn_predict(model, &xs[i]).map(|(c, _)| c))
}

/// Flat pixel features (0..=255, channel-major) to a network input in `[0, 1]`.
pub fn features_to_tensor(features: &[f64], shape: [usize; 3]) -> Result<Tensor<f32>, CnnError> {
    Tensor::new(
        shape.to_vec(),
        features.iter().map(|&v| (v / 255.0) as f32).collect(),
    )
}
