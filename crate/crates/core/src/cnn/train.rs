use serde::{Deserialize, Serialize};

use super::{batch_loss_and_grads, cross_entropy, forward, CnnError, CnnModel, Gradients, Real, Tensor};
use crate::rng::{Domain, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seeds weight initialization and the per-epoch shuffles.
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        if self.batch_size == 0 {
            return Err(CnnError::Argument("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(CnnError::Argument("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(CnnError::Argument("Adam betas must be in [0, 1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(CnnError::Argument("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over the epoch's mini-batches, measured before each update.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    m: Gradients<T>,
    v: Gradients<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &CnnModel<T>) -> Self {
        Self {
            m: model.zero_grads(),
            v: model.zero_grads(),
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut CnnModel<T>, grads: &Gradients<T>, cfg: &CnnConfig) {
        self.t += 1;
        let c = |v: f64| T::from(v).unwrap();
        let (b1, b2, lr, eps) = (c(cfg.beta1), c(cfg.beta2), c(cfg.learning_rate), c(cfg.epsilon));
        let one = T::one();
        let bc1 = one - b1.powi(self.t);
        let bc2 = one - b2.powi(self.t);
        let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        };
        for (((layer, g), m), v) in model
            .layers
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
            update(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
        }
    }
}

/// Mean cross-entropy and accuracy over a labelled set.
pub fn evaluate_loss<T: Real>(model: &CnnModel<T>, xs: &[Tensor<T>], ys: &[usize]) -> Result<(f64, f64), CnnError> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(CnnError::Argument("need a nonempty labelled set".into()));
    }
    let (logits, _) = forward(model, xs)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (z, &y) in logits.iter().zip(ys) {
        loss += cross_entropy(z, y).0.to_f64().unwrap();
        let best = (0..z.len()).fold(0, |b, i| if z[i] > z[b] { i } else { b });
        correct += usize::from(best == y);
    }
    let n = xs.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch Adam. Epoch `e` visits the training set in the order given by
/// stream `(seed, e)`; the final batch may be short.
pub fn train<T: Real>(
    mut model: CnnModel<T>,
    train_x: &[Tensor<T>],
    train_y: &[usize],
    val: Option<(&[Tensor<T>], &[usize])>,
    config: &CnnConfig,
) -> Result<(CnnModel<T>, TrainingHistory), CnnError> {
    config.validate()?;
    if train_x.is_empty() {
        return Err(CnnError::Argument("empty training set".into()));
    }
    if train_x.len() != train_y.len() {
        return Err(CnnError::Argument(format!(
            "{} inputs but {} labels",
            train_x.len(),
            train_y.len()
        )));
    }
    let mut adam = Adam::new(&model);
    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = SeededRng::new(config.seed, Domain::CnnShuffle, epoch as u64);
        order.sort_unstable();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let xs: Vec<Tensor<T>> = chunk.iter().map(|&i| train_x[i].clone()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let (loss, c, grads) = batch_loss_and_grads(&model, &xs, &ys)?;
            loss_sum += loss.to_f64().unwrap() * chunk.len() as f64;
            correct += c;
            adam.step(&mut model, &grads, config);
        }
        let n = train_x.len() as f64;
        let (val_loss, val_accuracy) = match val {
            Some((vx, vy)) if !vx.is_empty() => {
                let (l, a) = evaluate_loss(&model, vx, vy)?;
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        history.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
        });
    }
    model.config = config.clone();
    Ok((model, history))
}
