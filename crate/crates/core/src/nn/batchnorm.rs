use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Scalar, Tensor4};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel batch normalization over the (n, h, w) axes.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

/// What the backward pass and the running-statistics update need from a
/// train-mode forward.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    xhat: Tensor4<T>,
    inv_std: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
    count: usize,
}

impl<T> BnCache<T> {
    pub fn batch_mean(&self) -> &[T] {
        &self.mean
    }

    /// Biased batch variance.
    pub fn batch_var(&self) -> &[T] {
        &self.var
    }
}

#[derive(Clone, Debug)]
pub struct BnGrads<T> {
    pub input: Tensor4<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::lit(BN_MOMENTUM),
            eps: T::lit(BN_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if x.dims().c != self.channels() {
            return Err(Error::shape(
                "batchnorm",
                format!("input has {} channels, state has {}", x.dims().c, self.channels()),
            ));
        }
        if x.dims().is_empty() {
            return Err(Error::shape("batchnorm", format!("empty input {}", x.dims())));
        }
        Ok(())
    }

    /// Forward in the given mode; train mode also folds the batch statistics
    /// into the running estimates.
    pub fn forward(&mut self, x: &Tensor4<T>, mode: BnMode) -> Result<Tensor4<T>> {
        match mode {
            BnMode::Eval => self.forward_eval(x),
            BnMode::Train => {
                let (y, cache) = self.forward_train(x)?;
                self.update_running(&cache);
                Ok(y)
            }
        }
    }

    /// Normalize with batch statistics without touching the running state.
    pub fn forward_train(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, BnCache<T>)> {
        self.check(x)?;
        let c = self.channels();
        let count = x.dims().len() / c;
        let m = T::lit(count as f64);
        let mut mean = vec![T::zero(); c];
        for px in x.data().chunks_exact(c) {
            for (acc, &v) in mean.iter_mut().zip(px) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![T::zero(); c];
        for px in x.data().chunks_exact(c) {
            for ((acc, &v), &mu) in var.iter_mut().zip(px).zip(&mean) {
                let d = v - mu;
                *acc += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for (hp, yp) in xhat.data_mut().chunks_exact_mut(c).zip(y.data_mut().chunks_exact_mut(c)) {
            for ch in 0..c {
                let h = (hp[ch] - mean[ch]) * inv_std[ch];
                hp[ch] = h;
                yp[ch] = self.gamma[ch] * h + self.beta[ch];
            }
        }
        Ok((y, BnCache { xhat, inv_std, mean, var, count }))
    }

    /// Normalize with the running statistics only.
    pub fn forward_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        let c = self.channels();
        let (scale, shift): (Vec<T>, Vec<T>) = (0..c)
            .map(|ch| {
                let s = self.gamma[ch] / (self.running_var[ch] + self.eps).sqrt();
                (s, self.beta[ch] - s * self.running_mean[ch])
            })
            .unzip();
        let mut y = x.clone();
        for px in y.data_mut().chunks_exact_mut(c) {
            for ch in 0..c {
                px[ch] = scale[ch] * px[ch] + shift[ch];
            }
        }
        Ok(y)
    }

    /// `running = momentum * running + (1 - momentum) * batch`; the variance
    /// estimate uses the unbiased batch variance.
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        let keep = self.momentum;
        let take = T::one() - keep;
        let correction = if cache.count > 1 {
            T::lit(cache.count as f64 / (cache.count - 1) as f64)
        } else {
            T::one()
        };
        for ch in 0..self.channels() {
            self.running_mean[ch] = keep * self.running_mean[ch] + take * cache.mean[ch];
            self.running_var[ch] = keep * self.running_var[ch] + take * cache.var[ch] * correction;
        }
    }

    pub fn backward(&self, cache: &BnCache<T>, grad_out: &Tensor4<T>) -> Result<BnGrads<T>> {
        grad_out.expect_dims("batchnorm_backward", cache.xhat.dims())?;
        let c = self.channels();
        let m = T::lit(cache.count as f64);
        let mut gbeta = vec![T::zero(); c];
        let mut ggamma = vec![T::zero(); c];
        for (dy, xh) in grad_out.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
            for ch in 0..c {
                gbeta[ch] += dy[ch];
                ggamma[ch] += dy[ch] * xh[ch];
            }
        }
        let coef: Vec<T> = (0..c).map(|ch| self.gamma[ch] * cache.inv_std[ch] / m).collect();
        let mut gi = grad_out.clone();
        for (dx, xh) in gi.data_mut().chunks_exact_mut(c).zip(cache.xhat.data().chunks_exact(c)) {
            for ch in 0..c {
                dx[ch] = coef[ch] * (m * dx[ch] - gbeta[ch] - xh[ch] * ggamma[ch]);
            }
        }
        Ok(BnGrads { input: gi, gamma: ggamma, beta: gbeta })
    }
}
