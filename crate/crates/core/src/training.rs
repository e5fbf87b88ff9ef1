//! Weighted cross-entropy loss, momentum SGD with a staircase learning
//! rate, and the epoch loop.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{augment, DihedralOp, TrainingExample};
use crate::unet::{Gradients, ModelParams, ParamKind, ParamMut};
use crate::{Error, InputMode, Result, Scalar, Tensor4, UNet};

pub const DEFAULT_BETA: f64 = 1e-4;
pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the positive-class term.
    pub alpha: f64,
    /// Weight of the squared-weight penalty.
    pub beta: f64,
    /// Predictions are clamped to `[clamp_eps, 1 - clamp_eps]` before `ln`.
    pub clamp_eps: f64,
}

impl LossConfig {
    pub fn new(alpha: f64, beta: f64, clamp_eps: f64) -> Result<Self> {
        let cfg = LossConfig { alpha, beta, clamp_eps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn for_mode(mode: InputMode) -> Self {
        LossConfig { alpha: default_alpha(mode), beta: DEFAULT_BETA, clamp_eps: DEFAULT_CLAMP_EPS }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", format!("{} must be positive", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta", format!("{} must be non-negative", self.beta)));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::invalid("clamp_eps", format!("{} is not in (0, 0.5)", self.clamp_eps)));
        }
        Ok(())
    }
}

pub fn default_alpha(mode: InputMode) -> f64 {
    match mode {
        InputMode::Rgb => 5.0,
        InputMode::Rgbd => 4.0,
        InputMode::Rgbp => 2.0,
    }
}

fn check_pair<T: Scalar>(op: &'static str, pred: &Tensor4<T>, label: &Tensor4<T>) -> Result<()> {
    if pred.dims() != label.dims() {
        return Err(Error::shape(op, format!("prediction {} vs label {}", pred.dims(), label.dims())));
    }
    if pred.dims().is_empty() {
        return Err(Error::Empty { what: "prediction" });
    }
    Ok(())
}

#[inline]
fn clamp(p: f64, eps: f64) -> f64 {
    p.max(eps).min(1.0 - eps)
}

/// Pixel-averaged weighted cross-entropy without the weight penalty.
pub fn data_loss<T: Scalar>(pred: &Tensor4<T>, label: &Tensor4<T>, cfg: &LossConfig) -> Result<f64> {
    check_pair("data_loss", pred, label)?;
    let n = pred.dims().len() as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(label.data())
        .map(|(&p, &y)| {
            let (p, y) = (clamp(p.as_f64(), cfg.clamp_eps), y.as_f64());
            -cfg.alpha * y * crate::math::ln(p) - (1.0 - y) * crate::math::ln(1.0 - p)
        })
        .sum();
    Ok(sum / n)
}

/// Sum of squares over every convolution and deconvolution kernel.
pub fn weight_penalty<T: Scalar>(params: &ModelParams<T>) -> f64 {
    params
        .iter()
        .filter(|e| e.kind.is_decayed())
        .flat_map(|e| e.tensor.data().iter())
        .map(|&w| w.as_f64() * w.as_f64())
        .sum()
}

/// Data term plus `beta` times the squared kernel weights.
pub fn loss<T: Scalar>(pred: &Tensor4<T>, label: &Tensor4<T>, params: &ModelParams<T>, cfg: &LossConfig) -> Result<f64> {
    Ok(data_loss(pred, label, cfg)? + cfg.beta * weight_penalty(params))
}

/// Derivative of [`data_loss`] with respect to each prediction.
pub fn loss_gradient<T: Scalar>(pred: &Tensor4<T>, label: &Tensor4<T>, cfg: &LossConfig) -> Result<Tensor4<T>> {
    check_pair("loss_gradient", pred, label)?;
    let inv_n = 1.0 / pred.dims().len() as f64;
    pred.zip_map(label, |p, y| {
        let (p, y) = (clamp(p.as_f64(), cfg.clamp_eps), y.as_f64());
        T::lit(inv_n * (-cfg.alpha * y / p + (1.0 - y) / (1.0 - p)))
    })
}

/// Derivative of [`data_loss`] with respect to the pre-sigmoid logits,
/// where `pred = sigmoid(logit)`.
pub fn logit_gradient<T: Scalar>(pred: &Tensor4<T>, label: &Tensor4<T>, cfg: &LossConfig) -> Result<Tensor4<T>> {
    check_pair("logit_gradient", pred, label)?;
    let inv_n = 1.0 / pred.dims().len() as f64;
    pred.zip_map(label, |p, y| {
        let (p, y) = (p.as_f64(), y.as_f64());
        T::lit(inv_n * (-cfg.alpha * y * (1.0 - p) + (1.0 - y) * p))
    })
}

/// `velocity = momentum * velocity + grad; w -= lr * velocity`.
pub fn sgd_step<T: Scalar>(w: &mut [T], grad: &[T], velocity: &mut [T], lr: T, momentum: T) -> Result<()> {
    if w.len() != grad.len() || w.len() != velocity.len() {
        return Err(Error::shape(
            "sgd_step",
            format!("weights {}, gradient {}, velocity {}", w.len(), grad.len(), velocity.len()),
        ));
    }
    for ((w, &g), v) in w.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD over the trainable tensors of a model.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    momentum: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64) -> Self {
        Sgd { momentum: T::lit(momentum), velocity: Vec::new() }
    }

    /// Apply one update. `beta` adds `2 * beta * w` to the gradient of
    /// every kernel weight.
    pub fn step(&mut self, params: &mut [ParamMut<'_, T>], grads: &Gradients<T>, lr: f64, beta: f64) -> Result<()> {
        if params.len() != grads.tensors.len() {
            return Err(Error::shape(
                "Sgd::step",
                format!("{} parameters vs {} gradients", params.len(), grads.tensors.len()),
            ));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| alloc::vec![T::zero(); p.values.len()]).collect();
        }
        let two_beta = T::lit(2.0 * beta);
        let lr = T::lit(lr);
        let mut decayed = Vec::new();
        for ((p, g), v) in params.iter_mut().zip(&grads.tensors).zip(&mut self.velocity) {
            if p.name != g.name {
                return Err(Error::shape("Sgd::step", format!("parameter `{}` paired with gradient `{}`", p.name, g.name)));
            }
            let grad = if p.kind == ParamKind::Weight && beta > 0.0 {
                decayed.clear();
                decayed.extend(g.tensor.data().iter().zip(p.values.iter()).map(|(&g, &w)| g + two_beta * w));
                &decayed[..]
            } else {
                g.tensor.data()
            };
            sgd_step(p.values, grad, v, lr, self.momentum)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Draw a random grid symmetry for every example of every batch.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.001,
            decay: 0.8,
            decay_every: 5,
            momentum: 0.9,
            batch_size: 8,
            epochs: 1,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid("lr", format!("{} must be positive", self.lr0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid("decay", format!("{} is not in (0, 1]", self.decay)));
        }
        if self.decay_every == 0 {
            return Err(Error::invalid("decay_every", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", format!("{} is not in [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        Ok(())
    }

    /// Staircase schedule `lr0 * decay^floor(epoch / decay_every)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.decay_every) as i32;
        self.lr0 * num_traits::Float::powi(self.decay, steps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the full loss over the epoch's batches.
    pub mean_loss: f64,
    /// Mean of the data term alone.
    pub mean_data_loss: f64,
}

/// Train in place. Batches are drawn from a seeded shuffle, so equal
/// inputs and configs give bit-identical models.
pub fn train(
    model: &mut UNet<f32>,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty { what: "training set" });
    }
    for e in examples {
        if e.mode != model.mode() {
            return Err(Error::invalid("examples", format!("{} example for a {} model", e.mode, model.mode())));
        }
    }
    let labels: Vec<Tensor4<f32>> = examples.iter().map(TrainingExample::label_tensor).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::<f32>::new(cfg.momentum);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut data_sum, mut seen) = (0.0, 0.0, 0usize);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut inputs = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                if cfg.augment {
                    let op = DihedralOp::ALL[rng.random_range(0..DihedralOp::ALL.len())];
                    let ex = augment(&examples[i], op)?;
                    targets.push(ex.label_tensor());
                    inputs.push(ex.input);
                } else {
                    inputs.push(examples[i].input.clone());
                    targets.push(labels[i].clone());
                }
            }
            let x = Tensor4::stack(&inputs.iter().collect::<Vec<_>>())?;
            let y = Tensor4::stack(&targets.iter().collect::<Vec<_>>())?;

            let cache = model.forward_train(&x)?;
            let data = data_loss(cache.output(), &y, loss_cfg)?;
            let total = data + loss_cfg.beta * model.weight_sq_sum().as_f64();
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_idx });
            }
            let grads = model.backward_from_logits(&cache, &logit_gradient(cache.output(), &y, loss_cfg)?)?;
            model.commit_batch_stats(&cache);
            opt.step(&mut model.trainable_mut(), &grads, lr, loss_cfg.beta)?;

            let n = chunk.len();
            loss_sum += total * n as f64;
            data_sum += data * n as f64;
            seen += n;
        }
        let m = EpochMetrics {
            epoch,
            lr,
            mean_loss: loss_sum / seen as f64,
            mean_data_loss: data_sum / seen as f64,
        };
        on_epoch(&m);
        log.push(m);
    }
    Ok(log)
}
