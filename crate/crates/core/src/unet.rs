//! The encoder-decoder network that maps a 128x128 camera input to a 64x64
//! suction probability map.
//!
//! Layer sequence (every convolution is stride 1 with zero "same" padding and
//! is followed by batch norm and ReLU, except the 1-channel head):
//!
//! ```text
//! conv1 28@11x11 -> conv2 64@7x7 -> pool -> conv3 64@5x5 [skip B] -> pool
//! -> conv4 128@3x3 [skip A] -> pool -> conv5 192@3x3 -> deconv1 192@2x2
//! -> concat A (320) -> conv5b 224@3x3 -> deconv2 224@2x2 -> concat B (288)
//! -> conv6 176@3x3 -> conv7 32@3x3 -> conv8 1@5x5 -> sigmoid
//! ```
//!
//! Concatenations put decoder channels first and skip channels second.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{
    he_normal, maxpool2_backward, maxpool2_forward, relu_backward, sigmoid, sigmoid_backward, BatchNorm, BnCache,
    BnMode, Conv2d, ConvTranspose2x2, Padding, PoolIndexMap,
};
use crate::{Dims, Error, Result, Scalar, Tensor4};

pub const INPUT_SIZE: usize = 128;
pub const OUTPUT_SIZE: usize = 64;

/// Which camera channels feed the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InputMode {
    /// Color only.
    Rgb,
    /// Color plus normalized depth.
    Rgbd,
    /// Color plus normalized camera-frame x, y, z.
    Rgbp,
}

impl InputMode {
    pub const ALL: [InputMode; 3] = [InputMode::Rgb, InputMode::Rgbd, InputMode::Rgbp];

    pub const fn channels(self) -> usize {
        match self {
            InputMode::Rgb => 3,
            InputMode::Rgbd => 4,
            InputMode::Rgbp => 6,
        }
    }

    /// Lower-case flag spelling.
    pub const fn as_str(self) -> &'static str {
        match self {
            InputMode::Rgb => "rgb",
            InputMode::Rgbd => "rgbd",
            InputMode::Rgbp => "rgbp",
        }
    }

    /// Column heading used in result tables.
    pub const fn label(self) -> &'static str {
        match self {
            InputMode::Rgb => "RGB",
            InputMode::Rgbd => "RGB-D",
            InputMode::Rgbp => "RGB-Points",
        }
    }

    pub const fn code(self) -> u8 {
        match self {
            InputMode::Rgb => 0,
            InputMode::Rgbd => 1,
            InputMode::Rgbp => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        InputMode::ALL.into_iter().find(|m| m.code() == code)
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(InputMode::Rgb),
            "rgbd" | "rgb-d" => Ok(InputMode::Rgbd),
            "rgbp" | "rgb-points" => Ok(InputMode::Rgbp),
            other => Err(Error::invalid("mode", format!("unknown input mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    fn suffix(self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
            ParamKind::Gamma => "gamma",
            ParamKind::Beta => "beta",
            ParamKind::RunningMean => "running_mean",
            ParamKind::RunningVar => "running_var",
        }
    }

    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Only convolution and deconvolution kernels carry weight decay.
    pub fn is_decayed(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor4<T>,
}

/// Every tensor of a model keyed by `<layer>.<field>`, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    entries: Vec<NamedTensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(entries: Vec<NamedTensor<T>>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.name == e.name) {
                return Err(Error::invalid("params", format!("duplicate tensor `{}`", e.name)));
            }
        }
        Ok(ModelParams { entries })
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor<T>> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor<T>> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn into_entries(self) -> Vec<NamedTensor<T>> {
        self.entries
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            entries: self
                .entries
                .iter()
                .map(|e| NamedTensor { name: e.name.clone(), kind: e.kind, tensor: e.tensor.cast() })
                .collect(),
        }
    }
}

/// Mutable view of one trainable tensor.
pub struct ParamMut<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub values: &'a mut [T],
}

/// Gradients of the trainable tensors, in the order of
/// [`UNet::trainable_mut`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub tensors: Vec<NamedTensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor4<T>> {
        self.tensors.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }
}

fn vector<T: Scalar>(v: &[T]) -> Tensor4<T> {
    Tensor4::from_vec(Dims::new(1, 1, 1, v.len()), v.to_vec()).expect("vector dims")
}

#[derive(Clone, Debug, PartialEq)]
struct ConvBlock<T> {
    conv: Conv2d<T>,
    bn: BatchNorm<T>,
}

#[derive(Clone, Debug, PartialEq)]
struct UpBlock<T> {
    deconv: ConvTranspose2x2<T>,
    bn: BatchNorm<T>,
}

struct BlockCache<T> {
    bn: BnCache<T>,
    out: Tensor4<T>,
}

fn relu_in_place<T: Scalar>(t: &mut Tensor4<T>) {
    for v in t.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

impl<T: Scalar> ConvBlock<T> {
    fn new(k: usize, c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut conv = Conv2d::zeros(k, c_in, c_out, 1, Padding::Same);
        conv.weight = he_normal(conv.weight.dims(), k * k * c_in, rng);
        ConvBlock { conv, bn: BatchNorm::new(c_out) }
    }

    fn train(&self, x: &Tensor4<T>) -> Result<BlockCache<T>> {
        let z = self.conv.forward(x)?;
        let (mut out, bn) = self.bn.forward_train(&z)?;
        relu_in_place(&mut out);
        Ok(BlockCache { bn, out })
    }

    fn eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut out = self.bn.forward_eval(&self.conv.forward(x)?)?;
        relu_in_place(&mut out);
        Ok(out)
    }

    /// Returns the input gradient (if wanted) and pushes parameter gradients.
    fn backward(
        &self,
        name: &str,
        input: &Tensor4<T>,
        cache: &BlockCache<T>,
        grad: &Tensor4<T>,
        want_input: bool,
        sink: &mut Vec<NamedTensor<T>>,
    ) -> Result<Option<Tensor4<T>>> {
        let d = relu_backward(&cache.out, grad)?;
        let bn = self.bn.backward(&cache.bn, &d)?;
        let (gi, gw, gb) = if want_input {
            let g = self.conv.backward(input, &bn.input)?;
            (Some(g.input), g.weight, g.bias)
        } else {
            let (w, b) = self.conv.backward_params(input, &bn.input)?;
            (None, w, b)
        };
        push_grads(sink, name, [gw, vector(&gb), vector(&bn.gamma), vector(&bn.beta)]);
        Ok(gi)
    }
}

impl<T: Scalar> UpBlock<T> {
    fn new(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut deconv = ConvTranspose2x2::zeros(c_in, c_out);
        deconv.weight = he_normal(deconv.weight.dims(), c_in, rng);
        UpBlock { deconv, bn: BatchNorm::new(c_out) }
    }

    fn train(&self, x: &Tensor4<T>) -> Result<BlockCache<T>> {
        let z = self.deconv.forward(x)?;
        let (mut out, bn) = self.bn.forward_train(&z)?;
        relu_in_place(&mut out);
        Ok(BlockCache { bn, out })
    }

    fn eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut out = self.bn.forward_eval(&self.deconv.forward(x)?)?;
        relu_in_place(&mut out);
        Ok(out)
    }

    fn backward(
        &self,
        name: &str,
        input: &Tensor4<T>,
        cache: &BlockCache<T>,
        grad: &Tensor4<T>,
        sink: &mut Vec<NamedTensor<T>>,
    ) -> Result<Tensor4<T>> {
        let d = relu_backward(&cache.out, grad)?;
        let bn = self.bn.backward(&cache.bn, &d)?;
        let g = self.deconv.backward(input, &bn.input)?;
        push_grads(sink, name, [g.weight, vector(&g.bias), vector(&bn.gamma), vector(&bn.beta)]);
        Ok(g.input)
    }
}

const BN_KINDS: [ParamKind; 4] = [ParamKind::Weight, ParamKind::Bias, ParamKind::Gamma, ParamKind::Beta];

fn push_grads<T>(sink: &mut Vec<NamedTensor<T>>, layer: &str, tensors: [Tensor4<T>; 4]) {
    for (kind, tensor) in BN_KINDS.into_iter().zip(tensors) {
        sink.push(NamedTensor { name: format!("{layer}.{}", kind.suffix()), kind, tensor });
    }
}

/// Canonical layer order; parameters, gradients and checkpoints follow it.
pub const LAYER_NAMES: [&str; 11] = [
    "conv1", "conv2", "conv3", "conv4", "conv5", "deconv1", "conv5b", "deconv2", "conv6", "conv7", "conv8",
];

/// The suction-region U-net.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet<T> {
    mode: InputMode,
    input_size: usize,
    conv1: ConvBlock<T>,
    conv2: ConvBlock<T>,
    conv3: ConvBlock<T>,
    conv4: ConvBlock<T>,
    conv5: ConvBlock<T>,
    deconv1: UpBlock<T>,
    conv5b: ConvBlock<T>,
    deconv2: UpBlock<T>,
    conv6: ConvBlock<T>,
    conv7: ConvBlock<T>,
    conv8: Conv2d<T>,
}

/// Activations and batch statistics retained by a train-mode forward pass.
pub struct ForwardCache<T> {
    input: Tensor4<T>,
    b1: BlockCache<T>,
    b2: BlockCache<T>,
    pool1: (Tensor4<T>, PoolIndexMap),
    b3: BlockCache<T>,
    pool2: (Tensor4<T>, PoolIndexMap),
    b4: BlockCache<T>,
    pool3: (Tensor4<T>, PoolIndexMap),
    b5: BlockCache<T>,
    u1: BlockCache<T>,
    cat1: Tensor4<T>,
    b5b: BlockCache<T>,
    u2: BlockCache<T>,
    cat2: Tensor4<T>,
    b6: BlockCache<T>,
    b7: BlockCache<T>,
    prob: Tensor4<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &Tensor4<T> {
        &self.prob
    }

    /// Shapes of every intermediate activation, in network order.
    pub fn activation_dims(&self) -> Vec<(&'static str, Dims)> {
        alloc::vec![
            ("conv1", self.b1.out.dims()),
            ("conv2", self.b2.out.dims()),
            ("pool1", self.pool1.0.dims()),
            ("conv3", self.b3.out.dims()),
            ("pool2", self.pool2.0.dims()),
            ("conv4", self.b4.out.dims()),
            ("pool3", self.pool3.0.dims()),
            ("conv5", self.b5.out.dims()),
            ("deconv1", self.u1.out.dims()),
            ("concat1", self.cat1.dims()),
            ("conv5b", self.b5b.out.dims()),
            ("deconv2", self.u2.out.dims()),
            ("concat2", self.cat2.dims()),
            ("conv6", self.b6.out.dims()),
            ("conv7", self.b7.out.dims()),
            ("conv8", self.prob.dims()),
        ]
    }
}

impl<T: Scalar> UNet<T> {
    /// Network for 128x128 inputs with He-initialized kernels.
    pub fn new(mode: InputMode, seed: u64) -> Self {
        Self::with_input_size(mode, INPUT_SIZE, seed).expect("128 is a valid input size")
    }

    /// Same architecture for a different square input size (a multiple of 8).
    pub fn with_input_size(mode: InputMode, input_size: usize, seed: u64) -> Result<Self> {
        if input_size == 0 || !input_size.is_multiple_of(8) {
            return Err(Error::invalid("input_size", format!("{input_size} is not a positive multiple of 8")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let conv1 = ConvBlock::new(11, mode.channels(), 28, rng);
        let conv2 = ConvBlock::new(7, 28, 64, rng);
        let conv3 = ConvBlock::new(5, 64, 64, rng);
        let conv4 = ConvBlock::new(3, 64, 128, rng);
        let conv5 = ConvBlock::new(3, 128, 192, rng);
        let deconv1 = UpBlock::new(192, 192, rng);
        let conv5b = ConvBlock::new(3, 192 + 128, 224, rng);
        let deconv2 = UpBlock::new(224, 224, rng);
        let conv6 = ConvBlock::new(3, 224 + 64, 176, rng);
        let conv7 = ConvBlock::new(3, 176, 32, rng);
        let mut conv8 = Conv2d::zeros(5, 32, 1, 1, Padding::Same);
        conv8.weight = he_normal(conv8.weight.dims(), 5 * 5 * 32, rng);
        Ok(UNet {
            mode,
            input_size,
            conv1,
            conv2,
            conv3,
            conv4,
            conv5,
            deconv1,
            conv5b,
            deconv2,
            conv6,
            conv7,
            conv8,
        })
    }

    pub fn mode(&self) -> InputMode {
        self.mode
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn output_size(&self) -> usize {
        self.input_size / 2
    }

    pub fn check_input(&self, d: Dims) -> Result<()> {
        if d.c != self.mode.channels() {
            return Err(Error::shape(
                "unet",
                format!("{} model expects {} channels, got {}", self.mode, self.mode.channels(), d.c),
            ));
        }
        if d.h != self.input_size || d.w != self.input_size || d.n == 0 {
            return Err(Error::shape(
                "unet",
                format!("expected n x {0} x {0} input, got {d}", self.input_size),
            ));
        }
        Ok(())
    }

    /// Forward in the requested mode. Train mode uses batch statistics and
    /// folds them into the running estimates.
    pub fn forward(&mut self, batch: &Tensor4<T>, mode: BnMode) -> Result<Tensor4<T>> {
        match mode {
            BnMode::Eval => self.predict(batch),
            BnMode::Train => {
                let cache = self.forward_train(batch)?;
                self.commit_batch_stats(&cache);
                Ok(cache.prob)
            }
        }
    }

    /// Eval-mode forward; deterministic and side-effect free.
    pub fn predict(&self, batch: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(batch.dims())?;
        let a1 = self.conv1.eval(batch)?;
        let a2 = self.conv2.eval(&a1)?;
        let (p1, _) = maxpool2_forward(&a2)?;
        let skip_b = self.conv3.eval(&p1)?;
        let (p2, _) = maxpool2_forward(&skip_b)?;
        let skip_a = self.conv4.eval(&p2)?;
        let (p3, _) = maxpool2_forward(&skip_a)?;
        let a5 = self.conv5.eval(&p3)?;
        let u1 = self.deconv1.eval(&a5)?;
        let a5b = self.conv5b.eval(&u1.concat_channels(&skip_a)?)?;
        let u2 = self.deconv2.eval(&a5b)?;
        let a6 = self.conv6.eval(&u2.concat_channels(&skip_b)?)?;
        let a7 = self.conv7.eval(&a6)?;
        Ok(sigmoid(&self.conv8.forward(&a7)?))
    }

    /// Train-mode forward that leaves the model untouched; pair with
    /// [`Self::backward`] and [`Self::commit_batch_stats`].
    pub fn forward_train(&self, batch: &Tensor4<T>) -> Result<ForwardCache<T>> {
        self.check_input(batch.dims())?;
        let b1 = self.conv1.train(batch)?;
        let b2 = self.conv2.train(&b1.out)?;
        let pool1 = maxpool2_forward(&b2.out)?;
        let b3 = self.conv3.train(&pool1.0)?;
        let pool2 = maxpool2_forward(&b3.out)?;
        let b4 = self.conv4.train(&pool2.0)?;
        let pool3 = maxpool2_forward(&b4.out)?;
        let b5 = self.conv5.train(&pool3.0)?;
        let u1 = self.deconv1.train(&b5.out)?;
        let cat1 = u1.out.concat_channels(&b4.out)?;
        let b5b = self.conv5b.train(&cat1)?;
        let u2 = self.deconv2.train(&b5b.out)?;
        let cat2 = u2.out.concat_channels(&b3.out)?;
        let b6 = self.conv6.train(&cat2)?;
        let b7 = self.conv7.train(&b6.out)?;
        let prob = sigmoid(&self.conv8.forward(&b7.out)?);
        Ok(ForwardCache {
            input: batch.clone(),
            b1,
            b2,
            pool1,
            b3,
            pool2,
            b4,
            pool3,
            b5,
            u1,
            cat1,
            b5b,
            u2,
            cat2,
            b6,
            b7,
            prob,
        })
    }

    /// Fold the batch statistics of a train-mode pass into the running
    /// estimates of every batch-norm layer.
    pub fn commit_batch_stats(&mut self, cache: &ForwardCache<T>) {
        self.conv1.bn.update_running(&cache.b1.bn);
        self.conv2.bn.update_running(&cache.b2.bn);
        self.conv3.bn.update_running(&cache.b3.bn);
        self.conv4.bn.update_running(&cache.b4.bn);
        self.conv5.bn.update_running(&cache.b5.bn);
        self.deconv1.bn.update_running(&cache.u1.bn);
        self.conv5b.bn.update_running(&cache.b5b.bn);
        self.deconv2.bn.update_running(&cache.u2.bn);
        self.conv6.bn.update_running(&cache.b6.bn);
        self.conv7.bn.update_running(&cache.b7.bn);
    }

    /// Backpropagate a gradient with respect to the output probabilities.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_prob: &Tensor4<T>) -> Result<Gradients<T>> {
        let grad_logits = sigmoid_backward(&cache.prob, grad_prob)?;
        self.backward_from_logits(cache, &grad_logits)
    }

    /// Backpropagate a gradient with respect to the pre-sigmoid logits.
    pub fn backward_from_logits(&self, cache: &ForwardCache<T>, grad_logits: &Tensor4<T>) -> Result<Gradients<T>> {
        // Collected in reverse layer order, flipped at the end.
        let mut rev: Vec<Vec<NamedTensor<T>>> = Vec::with_capacity(LAYER_NAMES.len());
        let mut sink = Vec::new();

        let g8 = self.conv8.backward(&cache.b7.out, grad_logits)?;
        sink.push(NamedTensor { name: "conv8.weight".to_string(), kind: ParamKind::Weight, tensor: g8.weight });
        sink.push(NamedTensor { name: "conv8.bias".to_string(), kind: ParamKind::Bias, tensor: vector(&g8.bias) });
        rev.push(core::mem::take(&mut sink));

        let g = self.conv7.backward("conv7", &cache.b6.out, &cache.b7, &g8.input, true, &mut sink)?;
        rev.push(core::mem::take(&mut sink));
        let g = self.conv6.backward("conv6", &cache.cat2, &cache.b6, &g.expect("input"), true, &mut sink)?;
        rev.push(core::mem::take(&mut sink));
        let (g_u2, g_skip_b) = g.expect("input").split_channels(cache.u2.out.dims().c)?;
        let g = self.deconv2.backward("deconv2", &cache.b5b.out, &cache.u2, &g_u2, &mut sink)?;
        rev.push(core::mem::take(&mut sink));
        let g = self.conv5b.backward("conv5b", &cache.cat1, &cache.b5b, &g, true, &mut sink)?;
        rev.push(core::mem::take(&mut sink));
        let (g_u1, g_skip_a) = g.expect("input").split_channels(cache.u1.out.dims().c)?;
        let g = self.deconv1.backward("deconv1", &cache.b5.out, &cache.u1, &g_u1, &mut sink)?;
        rev.push(core::mem::take(&mut sink));
        let g = self.conv5.backward("conv5", &cache.pool3.0, &cache.b5, &g, true, &mut sink)?;
        rev.push(core::mem::take(&mut sink));
        let mut g4 = maxpool2_backward(&g.expect("input"), &cache.pool3.1)?;
        add_assign(&mut g4, &g_skip_a)?;
        let g = self.conv4.backward("conv4", &cache.pool2.0, &cache.b4, &g4, true, &mut sink)?;
        rev.push(core::mem::take(&mut sink));
        let mut g3 = maxpool2_backward(&g.expect("input"), &cache.pool2.1)?;
        add_assign(&mut g3, &g_skip_b)?;
        let g = self.conv3.backward("conv3", &cache.pool1.0, &cache.b3, &g3, true, &mut sink)?;
        rev.push(core::mem::take(&mut sink));
        let g2 = maxpool2_backward(&g.expect("input"), &cache.pool1.1)?;
        let g = self.conv2.backward("conv2", &cache.b1.out, &cache.b2, &g2, true, &mut sink)?;
        rev.push(core::mem::take(&mut sink));
        self.conv1.backward("conv1", &cache.input, &cache.b1, &g.expect("input"), false, &mut sink)?;
        rev.push(sink);

        Ok(Gradients { tensors: rev.into_iter().rev().flatten().collect() })
    }

    fn blocks(&self) -> [(&'static str, BlockRef<'_, T>); 11] {
        [
            ("conv1", BlockRef::Conv(&self.conv1)),
            ("conv2", BlockRef::Conv(&self.conv2)),
            ("conv3", BlockRef::Conv(&self.conv3)),
            ("conv4", BlockRef::Conv(&self.conv4)),
            ("conv5", BlockRef::Conv(&self.conv5)),
            ("deconv1", BlockRef::Up(&self.deconv1)),
            ("conv5b", BlockRef::Conv(&self.conv5b)),
            ("deconv2", BlockRef::Up(&self.deconv2)),
            ("conv6", BlockRef::Conv(&self.conv6)),
            ("conv7", BlockRef::Conv(&self.conv7)),
            ("conv8", BlockRef::Head(&self.conv8)),
        ]
    }

    /// Snapshot of every tensor, running statistics included.
    pub fn params(&self) -> ModelParams<T> {
        let mut entries = Vec::new();
        for (layer, block) in self.blocks() {
            let (w, b, bn) = match block {
                BlockRef::Conv(c) => (&c.conv.weight, &c.conv.bias, Some(&c.bn)),
                BlockRef::Up(u) => (&u.deconv.weight, &u.deconv.bias, Some(&u.bn)),
                BlockRef::Head(h) => (&h.weight, &h.bias, None),
            };
            let mut push = |kind: ParamKind, tensor: Tensor4<T>| {
                entries.push(NamedTensor { name: format!("{layer}.{}", kind.suffix()), kind, tensor })
            };
            push(ParamKind::Weight, w.clone());
            push(ParamKind::Bias, vector(b));
            if let Some(bn) = bn {
                push(ParamKind::Gamma, vector(&bn.gamma));
                push(ParamKind::Beta, vector(&bn.beta));
                push(ParamKind::RunningMean, vector(&bn.running_mean));
                push(ParamKind::RunningVar, vector(&bn.running_var));
            }
        }
        ModelParams { entries }
    }

    /// Rebuild a 128x128 model from a full parameter snapshot.
    pub fn from_params(mode: InputMode, params: &ModelParams<T>) -> Result<Self> {
        Self::from_params_sized(mode, INPUT_SIZE, params)
    }

    pub fn from_params_sized(mode: InputMode, input_size: usize, params: &ModelParams<T>) -> Result<Self> {
        let mut model = Self::with_input_size(mode, input_size, 0)?;
        let expected = model.params();
        if params.len() != expected.len() {
            return Err(Error::invalid(
                "params",
                format!("{} tensors, architecture has {}", params.len(), expected.len()),
            ));
        }
        for want in expected.iter() {
            let got = params
                .get(&want.name)
                .ok_or_else(|| Error::invalid("params", format!("missing tensor `{}`", want.name)))?;
            if got.tensor.dims() != want.tensor.dims() {
                return Err(Error::shape(
                    "UNet::from_params",
                    format!("`{}` has dims {}, expected {}", want.name, got.tensor.dims(), want.tensor.dims()),
                ));
            }
        }
        model.visit_all_mut(|name, _, values| {
            let src = params.get(name).expect("checked above");
            values.copy_from_slice(src.tensor.data());
        });
        Ok(model)
    }

    fn visit_all_mut(&mut self, mut f: impl FnMut(&str, ParamKind, &mut [T])) {
        let mut name = String::new();
        let mut visit = |layer: &str, kind: ParamKind, values: &mut [T]| {
            name.clear();
            name.push_str(layer);
            name.push('.');
            name.push_str(kind.suffix());
            f(&name, kind, values);
        };
        fn conv_block<T: Scalar>(
            layer: &str,
            b: &mut ConvBlock<T>,
            visit: &mut impl FnMut(&str, ParamKind, &mut [T]),
        ) {
            visit(layer, ParamKind::Weight, b.conv.weight.data_mut());
            visit(layer, ParamKind::Bias, &mut b.conv.bias);
            bn_fields(layer, &mut b.bn, visit);
        }
        fn bn_fields<T: Scalar>(layer: &str, bn: &mut BatchNorm<T>, visit: &mut impl FnMut(&str, ParamKind, &mut [T])) {
            visit(layer, ParamKind::Gamma, &mut bn.gamma);
            visit(layer, ParamKind::Beta, &mut bn.beta);
            visit(layer, ParamKind::RunningMean, &mut bn.running_mean);
            visit(layer, ParamKind::RunningVar, &mut bn.running_var);
        }
        conv_block("conv1", &mut self.conv1, &mut visit);
        conv_block("conv2", &mut self.conv2, &mut visit);
        conv_block("conv3", &mut self.conv3, &mut visit);
        conv_block("conv4", &mut self.conv4, &mut visit);
        conv_block("conv5", &mut self.conv5, &mut visit);
        visit("deconv1", ParamKind::Weight, self.deconv1.deconv.weight.data_mut());
        visit("deconv1", ParamKind::Bias, &mut self.deconv1.deconv.bias);
        bn_fields("deconv1", &mut self.deconv1.bn, &mut visit);
        conv_block("conv5b", &mut self.conv5b, &mut visit);
        visit("deconv2", ParamKind::Weight, self.deconv2.deconv.weight.data_mut());
        visit("deconv2", ParamKind::Bias, &mut self.deconv2.deconv.bias);
        bn_fields("deconv2", &mut self.deconv2.bn, &mut visit);
        conv_block("conv6", &mut self.conv6, &mut visit);
        conv_block("conv7", &mut self.conv7, &mut visit);
        visit("conv8", ParamKind::Weight, self.conv8.weight.data_mut());
        visit("conv8", ParamKind::Bias, &mut self.conv8.bias);
    }

    /// Mutable slices of the trainable tensors in gradient order.
    pub fn trainable_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        let UNet { conv1, conv2, conv3, conv4, conv5, deconv1, conv5b, deconv2, conv6, conv7, conv8, .. } = self;
        fn block<'a, T: Scalar>(
            out: &mut Vec<ParamMut<'a, T>>,
            layer: &str,
            w: &'a mut Tensor4<T>,
            b: &'a mut Vec<T>,
            bn: Option<&'a mut BatchNorm<T>>,
        ) {
            let name = |k: ParamKind| format!("{layer}.{}", k.suffix());
            out.push(ParamMut { name: name(ParamKind::Weight), kind: ParamKind::Weight, values: w.data_mut() });
            out.push(ParamMut { name: name(ParamKind::Bias), kind: ParamKind::Bias, values: b });
            if let Some(bn) = bn {
                out.push(ParamMut { name: name(ParamKind::Gamma), kind: ParamKind::Gamma, values: &mut bn.gamma });
                out.push(ParamMut { name: name(ParamKind::Beta), kind: ParamKind::Beta, values: &mut bn.beta });
            }
        }
        for (layer, c) in [("conv1", conv1), ("conv2", conv2), ("conv3", conv3), ("conv4", conv4), ("conv5", conv5)] {
            block(&mut out, layer, &mut c.conv.weight, &mut c.conv.bias, Some(&mut c.bn));
        }
        block(&mut out, "deconv1", &mut deconv1.deconv.weight, &mut deconv1.deconv.bias, Some(&mut deconv1.bn));
        block(&mut out, "conv5b", &mut conv5b.conv.weight, &mut conv5b.conv.bias, Some(&mut conv5b.bn));
        block(&mut out, "deconv2", &mut deconv2.deconv.weight, &mut deconv2.deconv.bias, Some(&mut deconv2.bn));
        for (layer, c) in [("conv6", conv6), ("conv7", conv7)] {
            block(&mut out, layer, &mut c.conv.weight, &mut c.conv.bias, Some(&mut c.bn));
        }
        block(&mut out, "conv8", &mut conv8.weight, &mut conv8.bias, None);
        out
    }

    /// Sum of squared convolution and deconvolution weights.
    pub fn weight_sq_sum(&self) -> T {
        self.blocks()
            .iter()
            .map(|(_, b)| {
                let w = match b {
                    BlockRef::Conv(c) => &c.conv.weight,
                    BlockRef::Up(u) => &u.deconv.weight,
                    BlockRef::Head(h) => &h.weight,
                };
                w.data().iter().map(|&v| v * v).sum::<T>()
            })
            .sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().filter(|e| e.kind.is_trainable()).map(|e| e.tensor.dims().len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> UNet<U> {
        UNet::from_params_sized(self.mode, self.input_size, &self.params().cast()).expect("same architecture")
    }
}

enum BlockRef<'a, T> {
    Conv(&'a ConvBlock<T>),
    Up(&'a UpBlock<T>),
    Head(&'a Conv2d<T>),
}

fn add_assign<T: Scalar>(acc: &mut Tensor4<T>, other: &Tensor4<T>) -> Result<()> {
    acc.expect_dims("skip gradient", other.dims())?;
    for (a, &b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
    Ok(())
}
