//! Independent oracles and finite-difference checks shared by the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suction_core::dataset::{DihedralOp, LabelMap, TrainingExample};
use suction_core::evaluation::{evaluate_maps, precision_literal, precision_standard, EvalConfig};
use suction_core::geometry::{backproject, normalize_points, CameraIntrinsics, DepthMap, WorkspaceBounds};
use suction_core::nn::{
    maxpool2_backward, maxpool2_forward, relu, relu_backward, sigmoid, sigmoid_backward, BatchNorm, Conv2d,
    ConvTranspose2x2, Padding,
};
use suction_core::postprocess::{
    argmax, gaussian_kernel, gaussian_smooth, normalize_map, process_map, select_suction_point, ProbabilityMap, Suction,
};
use suction_core::synth::{generate_scene, SynthConfig};
use suction_core::training::{
    data_loss, logit_gradient, loss_gradient, train, EpochMetrics, LossConfig, TrainConfig,
};
use suction_core::{Dims, Grid, InputMode, Tensor4, UNet};

pub const FD_STEP: f64 = 1e-4;
/// Smaller step for the whole network, where ReLU and max-pool kinks are
/// dense enough that larger steps straddle them.
pub const NET_FD_STEP: f64 = 1e-7;
/// Magnitude below which whole-network gradients are compared absolutely;
/// round-off in the loss is about 1e-9 at [`NET_FD_STEP`].
pub const NET_FLOOR: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(r: &mut ChaCha8Rng, d: Dims, lo: f64, hi: f64) -> Tensor4<f64> {
    Tensor4::from_fn(d, |_, _, _, _| r.random_range(lo..hi))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative error with a floor so that two tiny values do not count as a
/// mismatch.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_floor(analytic, numeric, 1e-6)
}

pub fn rel_err_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error between `analytic[i]` and a central difference of
/// `f` in coordinate `i`, over the coordinates in `idx`.
pub fn fd_max_rel(x: &mut [f64], analytic: &[f64], idx: &[usize], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for &i in idx {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(x);
        x[i] = orig - h;
        let down = f(x);
        x[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// Every index when `len <= max`, otherwise `max` distinct random ones.
pub fn sample_indices(r: &mut ChaCha8Rng, len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut all: Vec<usize> = (0..len).collect();
    all.shuffle(r);
    all.truncate(max);
    all
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub layer: &'static str,
    pub instances: usize,
    pub coords: usize,
    pub max_rel: f64,
}

impl GradCheck {
    fn new(layer: &'static str) -> Self {
        GradCheck { layer, instances: 0, coords: 0, max_rel: 0.0 }
    }

    fn add(&mut self, coords: usize, rel: f64) {
        self.coords += coords;
        self.max_rel = self.max_rel.max(rel);
    }

    pub fn passed(&self) -> bool {
        self.instances >= 5 && self.max_rel <= REL_TOL
    }
}

const PER_TENSOR: usize = 24;

fn with_tensor(d: Dims, data: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(d, data.to_vec()).unwrap()
}

pub fn check_conv(instances: usize, seed: u64) -> GradCheck {
    let mut out = GradCheck::new("conv2d");
    let mut r = rng(seed);
    for _ in 0..instances {
        let k = [1, 3, 5][r.random_range(0..3)];
        let stride = r.random_range(1..=2);
        let padding = if r.random_bool(0.5) { Padding::Same } else { Padding::Valid };
        let (cin, cout) = (r.random_range(1..=3), r.random_range(1..=3));
        let d = Dims::new(r.random_range(1..=2), r.random_range(k.max(4)..=8), r.random_range(k.max(4)..=8), cin);
        let x = rand_tensor(&mut r, d, -1.0, 1.0);
        let w = rand_tensor(&mut r, Dims::new(k, k, cin, cout), -1.0, 1.0);
        let b: Vec<f64> = (0..cout).map(|_| r.random_range(-1.0..1.0)).collect();
        let conv = Conv2d::new(w.clone(), b.clone(), stride, padding).unwrap();
        let y = conv.forward(&x).unwrap();
        let proj = rand_tensor(&mut r, y.dims(), -1.0, 1.0);
        let g = conv.backward(&x, &proj).unwrap();
        let objective = |x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64]| {
            let c = Conv2d::new(w.clone(), b.to_vec(), stride, padding).unwrap();
            dot(c.forward(x).unwrap().data(), proj.data())
        };

        let mut xs = x.data().to_vec();
        let idx = sample_indices(&mut r, xs.len(), PER_TENSOR);
        let e = fd_max_rel(&mut xs, g.input.data(), &idx, FD_STEP, |v| objective(&with_tensor(d, v), &w, &b));
        out.add(idx.len(), e);
        let mut ws = w.data().to_vec();
        let idx = sample_indices(&mut r, ws.len(), PER_TENSOR);
        let e = fd_max_rel(&mut ws, g.weight.data(), &idx, FD_STEP, |v| objective(&x, &with_tensor(w.dims(), v), &b));
        out.add(idx.len(), e);
        let mut bs = b.clone();
        let idx: Vec<usize> = (0..cout).collect();
        let e = fd_max_rel(&mut bs, &g.bias, &idx, FD_STEP, |v| objective(&x, &w, v));
        out.add(idx.len(), e);
        out.instances += 1;
    }
    out
}

pub fn check_deconv(instances: usize, seed: u64) -> GradCheck {
    let mut out = GradCheck::new("deconv2x2");
    let mut r = rng(seed);
    for _ in 0..instances {
        let (cin, cout) = (r.random_range(1..=4), r.random_range(1..=4));
        let d = Dims::new(r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4), cin);
        let x = rand_tensor(&mut r, d, -1.0, 1.0);
        let w = rand_tensor(&mut r, Dims::new(2, 2, cout, cin), -1.0, 1.0);
        let b: Vec<f64> = (0..cout).map(|_| r.random_range(-1.0..1.0)).collect();
        let layer = ConvTranspose2x2::new(w.clone(), b.clone()).unwrap();
        let y = layer.forward(&x).unwrap();
        let proj = rand_tensor(&mut r, y.dims(), -1.0, 1.0);
        let g = layer.backward(&x, &proj).unwrap();
        let objective = |x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64]| {
            let l = ConvTranspose2x2::new(w.clone(), b.to_vec()).unwrap();
            dot(l.forward(x).unwrap().data(), proj.data())
        };
        let mut xs = x.data().to_vec();
        let idx = sample_indices(&mut r, xs.len(), PER_TENSOR);
        out.add(idx.len(), fd_max_rel(&mut xs, g.input.data(), &idx, FD_STEP, |v| objective(&with_tensor(d, v), &w, &b)));
        let mut ws = w.data().to_vec();
        let idx = sample_indices(&mut r, ws.len(), PER_TENSOR);
        out.add(idx.len(), fd_max_rel(&mut ws, g.weight.data(), &idx, FD_STEP, |v| objective(&x, &with_tensor(w.dims(), v), &b)));
        let mut bs = b.clone();
        let idx: Vec<usize> = (0..cout).collect();
        out.add(idx.len(), fd_max_rel(&mut bs, &g.bias, &idx, FD_STEP, |v| objective(&x, &w, v)));
        out.instances += 1;
    }
    out
}

/// Input whose values are a shuffled ladder with spacing 0.01, so no
/// finite-difference step can reorder a pooling window.
fn distinct_tensor(r: &mut ChaCha8Rng, d: Dims) -> Tensor4<f64> {
    let mut vals: Vec<f64> = (0..d.len()).map(|i| i as f64 * 0.01 - 0.5).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, r.random_range(0..=i));
    }
    Tensor4::from_vec(d, vals).unwrap()
}

pub fn check_maxpool(instances: usize, seed: u64) -> GradCheck {
    let mut out = GradCheck::new("maxpool2x2");
    let mut r = rng(seed);
    for _ in 0..instances {
        let d = Dims::new(r.random_range(1..=2), 2 * r.random_range(1..=4), 2 * r.random_range(1..=4), r.random_range(1..=3));
        let x = distinct_tensor(&mut r, d);
        let (y, map) = maxpool2_forward(&x).unwrap();
        let proj = rand_tensor(&mut r, y.dims(), -1.0, 1.0);
        let g = maxpool2_backward(&proj, &map).unwrap();
        let mut xs = x.data().to_vec();
        let idx = sample_indices(&mut r, xs.len(), 4 * PER_TENSOR);
        let e = fd_max_rel(&mut xs, g.data(), &idx, FD_STEP, |v| {
            dot(maxpool2_forward(&with_tensor(d, v)).unwrap().0.data(), proj.data())
        });
        out.add(idx.len(), e);
        out.instances += 1;
    }
    out
}

pub fn check_batchnorm(instances: usize, seed: u64) -> GradCheck {
    let mut out = GradCheck::new("batchnorm");
    let mut r = rng(seed);
    for _ in 0..instances {
        let c = r.random_range(1..=3);
        let d = Dims::new(r.random_range(1..=3), r.random_range(2..=4), r.random_range(2..=4), c);
        let x = rand_tensor(&mut r, d, -2.0, 2.0);
        let mut bn = BatchNorm::<f64>::new(c);
        bn.gamma = (0..c).map(|_| r.random_range(0.5..1.5)).collect();
        bn.beta = (0..c).map(|_| r.random_range(-0.5..0.5)).collect();
        let (y, cache) = bn.forward_train(&x).unwrap();
        let proj = rand_tensor(&mut r, y.dims(), -1.0, 1.0);
        let g = bn.backward(&cache, &proj).unwrap();
        let objective = |x: &Tensor4<f64>, gamma: &[f64], beta: &[f64]| {
            let mut b = bn.clone();
            b.gamma = gamma.to_vec();
            b.beta = beta.to_vec();
            dot(b.forward_train(x).unwrap().0.data(), proj.data())
        };
        let mut xs = x.data().to_vec();
        let idx = sample_indices(&mut r, xs.len(), PER_TENSOR);
        out.add(idx.len(), fd_max_rel(&mut xs, g.input.data(), &idx, FD_STEP, |v| objective(&with_tensor(d, v), &bn.gamma, &bn.beta)));
        let idx: Vec<usize> = (0..c).collect();
        let mut gs = bn.gamma.clone();
        out.add(c, fd_max_rel(&mut gs, &g.gamma, &idx, FD_STEP, |v| objective(&x, v, &bn.beta)));
        let mut bs = bn.beta.clone();
        out.add(c, fd_max_rel(&mut bs, &g.beta, &idx, FD_STEP, |v| objective(&x, &bn.gamma, v)));
        out.instances += 1;
    }
    out
}

pub fn check_relu(instances: usize, seed: u64) -> GradCheck {
    let mut out = GradCheck::new("relu");
    let mut r = rng(seed);
    for _ in 0..instances {
        let d = Dims::new(1, r.random_range(2..=5), r.random_range(2..=5), r.random_range(1..=3));
        // keep every input at least 0.05 away from the kink
        let x = Tensor4::from_fn(d, |_, _, _, _| {
            let m = r.random_range(0.05..1.0);
            if r.random_bool(0.5) { m } else { -m }
        });
        let proj = rand_tensor(&mut r, d, -1.0, 1.0);
        let g = relu_backward(&relu(&x), &proj).unwrap();
        let mut xs = x.data().to_vec();
        let idx = sample_indices(&mut r, xs.len(), 4 * PER_TENSOR);
        out.add(idx.len(), fd_max_rel(&mut xs, g.data(), &idx, FD_STEP, |v| dot(relu(&with_tensor(d, v)).data(), proj.data())));
        out.instances += 1;
    }
    out
}

pub fn check_sigmoid(instances: usize, seed: u64) -> GradCheck {
    let mut out = GradCheck::new("sigmoid");
    let mut r = rng(seed);
    for _ in 0..instances {
        let d = Dims::new(1, r.random_range(2..=5), r.random_range(2..=5), r.random_range(1..=3));
        let x = rand_tensor(&mut r, d, -6.0, 6.0);
        let proj = rand_tensor(&mut r, d, -1.0, 1.0);
        let g = sigmoid_backward(&sigmoid(&x), &proj).unwrap();
        let mut xs = x.data().to_vec();
        let idx = sample_indices(&mut r, xs.len(), 4 * PER_TENSOR);
        out.add(idx.len(), fd_max_rel(&mut xs, g.data(), &idx, FD_STEP, |v| dot(sigmoid(&with_tensor(d, v)).data(), proj.data())));
        out.instances += 1;
    }
    out
}

/// Weighted cross-entropy: gradient with respect to probabilities, with
/// respect to logits, and of the weight penalty.
pub fn check_loss(instances: usize, seed: u64) -> GradCheck {
    let mut out = GradCheck::new("loss");
    let mut r = rng(seed);
    for _ in 0..instances {
        let d = Dims::new(r.random_range(1..=2), r.random_range(2..=6), r.random_range(2..=6), 1);
        let cfg = LossConfig::new(r.random_range(1.0..6.0), r.random_range(0.0..1e-2), 1e-7).unwrap();
        let pred = rand_tensor(&mut r, d, 0.02, 0.98);
        let label = Tensor4::from_fn(d, |_, _, _, _| if r.random_bool(0.3) { 1.0 } else { 0.0 });
        let g = loss_gradient(&pred, &label, &cfg).unwrap();
        let mut ps = pred.data().to_vec();
        let idx = sample_indices(&mut r, ps.len(), PER_TENSOR);
        out.add(idx.len(), fd_max_rel(&mut ps, g.data(), &idx, FD_STEP, |v| data_loss(&with_tensor(d, v), &label, &cfg).unwrap()));

        let logits = rand_tensor(&mut r, d, -4.0, 4.0);
        let gl = logit_gradient(&sigmoid(&logits), &label, &cfg).unwrap();
        let mut ls = logits.data().to_vec();
        let idx = sample_indices(&mut r, ls.len(), PER_TENSOR);
        out.add(idx.len(), fd_max_rel(&mut ls, gl.data(), &idx, FD_STEP, |v| {
            data_loss(&sigmoid(&with_tensor(d, v)), &label, &cfg).unwrap()
        }));

        let w: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
        let analytic: Vec<f64> = w.iter().map(|&w| 2.0 * cfg.beta * w).collect();
        let mut ws = w.clone();
        let idx: Vec<usize> = (0..w.len()).collect();
        out.add(idx.len(), fd_max_rel(&mut ws, &analytic, &idx, FD_STEP, |v| cfg.beta * v.iter().map(|x| x * x).sum::<f64>()));
        out.instances += 1;
    }
    out
}

/// End-to-end gradient of the data loss through a reduced-size network
/// in train mode, over `per_tensor` coordinates of every trainable tensor.
pub fn check_unet(mode: InputMode, size: usize, per_tensor: usize, seed: u64) -> GradCheck {
    let mut out = GradCheck::new("unet");
    let mut r = rng(seed);
    let mut net = UNet::<f64>::with_input_size(mode, size, seed).unwrap();
    let x = rand_tensor(&mut r, Dims::new(2, size, size, mode.channels()), 0.0, 1.0);
    let od = Dims::new(2, size / 2, size / 2, 1);
    let label = Tensor4::from_fn(od, |_, _, _, _| if r.random_bool(0.3) { 1.0 } else { 0.0 });
    let cfg = LossConfig::for_mode(mode);
    let cache = net.forward_train(&x).unwrap();
    let grads = net.backward(&cache, &loss_gradient(cache.output(), &label, &cfg).unwrap()).unwrap();

    let picks: Vec<(usize, Vec<usize>)> = net
        .trainable_mut()
        .iter()
        .enumerate()
        .map(|(t, p)| (t, sample_indices(&mut r, p.values.len(), per_tensor)))
        .collect();
    for (t, idx) in picks {
        let analytic = grads.tensors[t].tensor.data().to_vec();
        for &i in &idx {
            let orig = net.trainable_mut()[t].values[i];
            let mut eval = |v: f64| {
                net.trainable_mut()[t].values[i] = v;
                let c = net.forward_train(&x).unwrap();
                data_loss(c.output(), &label, &cfg).unwrap()
            };
            let numeric = (eval(orig + NET_FD_STEP) - eval(orig - NET_FD_STEP)) / (2.0 * NET_FD_STEP);
            net.trainable_mut()[t].values[i] = orig;
            out.add(1, rel_err_floor(analytic[i], numeric, NET_FLOOR));
        }
    }
    out.instances = 1;
    out
}

pub fn all_layer_checks(instances: usize, seed: u64) -> Vec<GradCheck> {
    vec![
        check_conv(instances, seed),
        check_deconv(instances, seed + 1),
        check_maxpool(instances, seed + 2),
        check_batchnorm(instances, seed + 3),
        check_relu(instances, seed + 4),
        check_sigmoid(instances, seed + 5),
        check_loss(instances, seed + 6),
    ]
}

/// Direct loop convolution with zero padding split as evenly as possible,
/// the extra row or column going after.
pub fn conv_oracle(x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64], stride: usize, padding: Padding) -> Tensor4<f64> {
    let d = x.dims();
    let (k, cout) = (w.dims().n, w.dims().c);
    let (oh, ow, pt, pl) = match padding {
        Padding::Same => {
            let oh = d.h.div_ceil(stride);
            let ow = d.w.div_ceil(stride);
            let ph = ((oh - 1) * stride + k).saturating_sub(d.h);
            let pw = ((ow - 1) * stride + k).saturating_sub(d.w);
            (oh, ow, ph / 2, pw / 2)
        }
        Padding::Valid => ((d.h - k) / stride + 1, (d.w - k) / stride + 1, 0, 0),
    };
    Tensor4::from_fn(Dims::new(d.n, oh, ow, cout), |n, oy, ox, co| {
        let mut acc = b[co];
        for ky in 0..k {
            for kx in 0..k {
                let iy = (oy * stride + ky) as isize - pt as isize;
                let ix = (ox * stride + kx) as isize - pl as isize;
                if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize {
                    continue;
                }
                for ci in 0..d.c {
                    acc += x.at(n, iy as usize, ix as usize, ci) * w.at(ky, kx, ci, co);
                }
            }
        }
        acc
    })
}

/// Largest absolute gap between the layer and the loop oracle.
pub fn conv_oracle_gap(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let k = [1, 2, 3, 4, 5, 7][r.random_range(0..6)];
        let stride = r.random_range(1..=3);
        let padding = if r.random_bool(0.5) || k % 2 == 0 { Padding::Valid } else { Padding::Same };
        let (cin, cout) = (r.random_range(1..=5), r.random_range(1..=5));
        let d = Dims::new(r.random_range(1..=3), r.random_range(k..=12), r.random_range(k..=12), cin);
        let x = rand_tensor(&mut r, d, -1.0, 1.0);
        let w = rand_tensor(&mut r, Dims::new(k, k, cin, cout), -1.0, 1.0);
        let b: Vec<f64> = (0..cout).map(|_| r.random_range(-1.0..1.0)).collect();
        let got = Conv2d::new(w.clone(), b.clone(), stride, padding).unwrap().forward(&x).unwrap();
        let want = conv_oracle(&x, &w, &b, stride, padding);
        assert_eq!(got.dims(), want.dims(), "k{k} s{stride} {padding:?}");
        for (a, b) in got.data().iter().zip(want.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Window maximum by direct scan.
pub fn maxpool_oracle(x: &Tensor4<f64>) -> Tensor4<f64> {
    let d = x.dims();
    Tensor4::from_fn(Dims::new(d.n, d.h / 2, d.w / 2, d.c), |n, y, xx, c| {
        let mut m = f64::NEG_INFINITY;
        for dy in 0..2 {
            for dx in 0..2 {
                m = m.max(x.at(n, 2 * y + dy, 2 * xx + dx, c));
            }
        }
        m
    })
}

/// Number of instances where the pooling layer differs from the oracle.
pub fn maxpool_oracle_mismatches(instances: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    (0..instances)
        .filter(|_| {
            let d = Dims::new(r.random_range(1..=3), 2 * r.random_range(1..=6), 2 * r.random_range(1..=6), r.random_range(1..=4));
            // coarse values so ties occur
            let x = Tensor4::from_fn(d, |_, _, _, _| r.random_range(0..4) as f64);
            maxpool2_forward(&x).unwrap().0 != maxpool_oracle(&x)
        })
        .count()
}

/// Largest relative gap in `<deconv(x), y> = <x, conv(y)>` where `conv`
/// is the stride-2 valid convolution sharing the deconvolution's weight.
pub fn adjoint_gap(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (cin, cout) = (r.random_range(1..=6), r.random_range(1..=6));
        let d = Dims::new(r.random_range(1..=3), r.random_range(1..=6), r.random_range(1..=6), cin);
        let w = rand_tensor(&mut r, Dims::new(2, 2, cout, cin), -1.0, 1.0);
        let x = rand_tensor(&mut r, d, -1.0, 1.0);
        let y = rand_tensor(&mut r, Dims::new(d.n, 2 * d.h, 2 * d.w, cout), -1.0, 1.0);
        let up = ConvTranspose2x2::new(w.clone(), vec![0.0; cout]).unwrap().forward(&x).unwrap();
        let down = Conv2d::new(w, vec![0.0; cin], 2, Padding::Valid).unwrap().forward(&y).unwrap();
        let (lhs, rhs) = (dot(up.data(), y.data()), dot(x.data(), down.data()));
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    worst
}

#[derive(Clone, Copy, Debug)]
pub struct GeometryReport {
    pub max_round_trip: f64,
    pub null_ok: bool,
    pub in_unit_cube: bool,
}

/// Back-project then re-project random pixels, check null handling and
/// the range of normalized coordinates.
pub fn geometry_checks(samples: usize, seed: u64) -> GeometryReport {
    let mut r = rng(seed);
    let mut max_round_trip = 0.0f64;
    for _ in 0..samples {
        let (w, h) = (r.random_range(32.0..2000.0), r.random_range(32.0..2000.0));
        let k = CameraIntrinsics::new(
            r.random_range(50.0..2000.0),
            r.random_range(50.0..2000.0),
            r.random_range(0.0..w),
            r.random_range(0.0..h),
        )
        .unwrap();
        let (u, v, z) = (r.random_range(0.0..w), r.random_range(0.0..h), r.random_range(0.05..5.0));
        let p = k.backproject_pixel(u, v, z);
        let (u2, v2) = k.project(p);
        let direct = [z * (u - k.cx) / k.fx, z * (v - k.cy) / k.fy, z];
        let point_gap = (0..3).map(|a| (p[a] - direct[a]).abs()).fold(0.0, f64::max);
        max_round_trip = max_round_trip.max((u2 - u).abs()).max((v2 - v).abs()).max(point_gap);
    }

    let k = CameraIntrinsics::new(120.0, 110.0, 15.5, 11.5).unwrap();
    let depth = Grid::from_fn(24, 32, |_, _| if r.random_bool(0.3) { 0.0 } else { r.random_range(0.2..1.5) });
    let points = backproject(&depth, &k).unwrap();
    let null_ok = depth.iter().zip(points.iter()).all(|(&z, p)| (z == 0.0) == (*p == [0.0; 3]));

    let bounds = WorkspaceBounds::new([-0.3, -0.2, 0.4], [0.3, 0.25, 1.0]).unwrap();
    let mut in_unit_cube = true;
    for _ in 0..samples / 100 {
        let pts = Grid::from_fn(8, 8, |_, _| {
            if r.random_bool(0.1) {
                [0.0; 3]
            } else {
                [r.random_range(-0.6..0.6), r.random_range(-0.6..0.6), r.random_range(0.0..1.6)]
            }
        });
        let n = normalize_points(&pts, &bounds).unwrap();
        in_unit_cube &= n.iter().flatten().all(|&c| (0.0..=1.0).contains(&c));
    }
    let corners = Grid::from_vec(1, 2, vec![bounds.min, bounds.max]).unwrap();
    let n = normalize_points(&corners, &bounds).unwrap();
    in_unit_cube &= n.iter().flatten().all(|&c| (0.0..=1.0).contains(&c)) && n.at(0, 0) != [0.0; 3];
    GeometryReport { max_round_trip, null_ok, in_unit_cube }
}

pub fn random_map(r: &mut ChaCha8Rng, h: usize, w: usize) -> ProbabilityMap {
    Grid::from_fn(h, w, |_, _| r.random_range(0.0..1.0))
}

pub fn random_label(r: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> LabelMap {
    Grid::from_fn(h, w, |_, _| u8::from(r.random_bool(p)))
}

/// Training examples rendered from consecutive synthetic seeds, optionally
/// resampled to a smaller working size.
pub fn synth_examples(seeds: std::ops::Range<u64>, mode: InputMode, size: Option<usize>) -> Vec<TrainingExample> {
    let cfg = SynthConfig::default();
    seeds
        .map(|s| {
            let sample = generate_scene(s, &cfg).unwrap().sample;
            let sample = match size {
                Some(n) => sample.resampled(n),
                None => sample,
            };
            sample.to_example(mode, &WorkspaceBounds::default()).unwrap()
        })
        .collect()
}

/// Fixed-config overfit: one example per step, constant rate, no
/// augmentation.
pub fn overfit_config(epochs: usize) -> TrainConfig {
    TrainConfig { lr0: 0.001, decay: 1.0, batch_size: 1, epochs, seed: 3, augment: false, ..TrainConfig::default() }
}

pub fn overfit_run(
    examples: &[TrainingExample],
    mode: InputMode,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Vec<EpochMetrics> {
    let size = examples[0].input.dims().h;
    let mut model = UNet::with_input_size(mode, size, 7).unwrap();
    train(&mut model, examples, cfg, &LossConfig::for_mode(mode), on_epoch).unwrap()
}

/// Epochs among the first `window` whose mean loss rose.
pub fn non_monotone_epochs(log: &[EpochMetrics], window: usize) -> usize {
    log.iter().take(window).collect::<Vec<_>>().windows(2).filter(|p| p[1].mean_loss > p[0].mean_loss).count()
}

/// Output dims for a zero batch of `n` items in each mode, eval and train.
pub fn shape_contract(n: usize) -> Vec<(InputMode, Dims, Dims)> {
    [InputMode::Rgb, InputMode::Rgbd, InputMode::Rgbp]
        .into_iter()
        .map(|mode| {
            let model = UNet::<f32>::new(mode, 1);
            let x = Tensor4::zeros(Dims::new(n, 128, 128, mode.channels()));
            let eval = model.predict(&x).unwrap().dims();
            let train = model.forward_train(&x).unwrap().output().dims();
            (mode, eval, train)
        })
        .collect()
}

fn flip_smooth_gap(m: &ProbabilityMap) -> f64 {
    DihedralOp::ALL
        .iter()
        .map(|op| {
            let a = gaussian_smooth(&op.apply_grid(m));
            let b = op.apply_grid(&gaussian_smooth(m));
            a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn unit_depth() -> (DepthMap, CameraIntrinsics) {
    (Grid::filled(128, 128, 1.0), CameraIntrinsics::new(200.0, 200.0, 63.5, 63.5).unwrap())
}

fn out_pixel(map: &ProbabilityMap) -> Option<(usize, usize)> {
    let (depth, k) = unit_depth();
    match select_suction_point(map, &depth, &k).unwrap() {
        Suction::Point(p) => Some(p.out_pixel),
        Suction::NoPoint => None,
    }
}

/// Gaussian blob centred at a random sub-pixel position on a 64x64 map.
pub fn blob(r: &mut ChaCha8Rng) -> (ProbabilityMap, (f64, f64)) {
    let (r0, c0) = (r.random_range(4.0..60.0), r.random_range(4.0..60.0));
    let s: f64 = r.random_range(1.5..5.0);
    let m = Grid::from_fn(64, 64, |y, x| {
        let d2 = (y as f64 - r0).powi(2) + (x as f64 - c0).powi(2);
        0.1 + 0.8 * (-d2 / (2.0 * s * s)).exp() + r.random_range(0.0..1e-3)
    });
    (m, (r0, c0))
}

/// Named pass/fail results for the post-processing properties over
/// `cases` random maps.
pub fn postprocess_properties(cases: usize, seed: u64) -> Vec<(&'static str, bool)> {
    let mut r = rng(seed);
    let kernel_sum: f64 = gaussian_kernel().iter().flatten().sum();
    let mut constant = true;
    let mut commute = true;
    let mut affine = true;
    let mut ties = true;
    let mut blobs = true;
    for _ in 0..cases {
        let (h, w) = (r.random_range(1..=12), r.random_range(1..=12));
        let v = r.random_range(0.0..1.0);
        constant &= gaussian_smooth(&Grid::filled(h, w, v)).iter().all(|&x| (x - v).abs() <= 1e-15);

        let n = r.random_range(1..=16);
        commute &= flip_smooth_gap(&random_map(&mut r, n, n)) <= 1e-12;

        let m = random_map(&mut r, 64, 64);
        let (a, b) = (r.random_range(0.01..100.0), r.random_range(-10.0..10.0));
        let scaled = m.map(|&x| a * x + b);
        affine &= out_pixel(&m) == out_pixel(&scaled);
        affine &= out_pixel(&process_map(&m, true)) == out_pixel(&process_map(&scaled, true));

        // plant equal maxima; the earliest in row-major order must win
        let mut t = m.map(|&x| x * 0.5);
        let mut cells: Vec<(usize, usize)> = (0..r.random_range(2..6)).map(|_| (r.random_range(0..64), r.random_range(0..64))).collect();
        for &(y, x) in &cells {
            t.set(y, x, 0.9);
        }
        cells.sort();
        ties &= out_pixel(&t) == Some(cells[0]) && argmax(&t) == Some(cells[0]);

        let (bm, (r0, c0)) = blob(&mut r);
        let got = out_pixel(&process_map(&bm, true)).unwrap();
        blobs &= (got.0 as f64 - r0).abs() <= 1.0 && (got.1 as f64 - c0).abs() <= 1.0;
    }
    vec![
        ("kernel sums to 1", (kernel_sum - 1.0).abs() <= 1e-15),
        ("constant maps unchanged by smoothing", constant),
        ("smoothing commutes with grid symmetries", commute),
        ("argmax invariant under positive affine rescaling", affine),
        ("ties break to lowest row-major index", ties),
        ("blob peak recovered within one cell", blobs),
    ]
}

/// Named pass/fail results for the metric properties over `pairs` random
/// map/label pairs.
pub fn metric_properties(pairs: usize, seed: u64) -> Vec<(&'static str, bool)> {
    let mut r = rng(seed);
    let ts: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
    let mut monotone = true;
    let mut bounded = true;
    let mut maps = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..pairs {
        let (h, w) = (r.random_range(1..=32), r.random_range(1..=32));
        let p = r.random_range(0.0..0.5);
        let map = normalize_map(&random_map(&mut r, h, w));
        let label = random_label(&mut r, h, w, p);
        let lit: Vec<Option<f64>> = ts.iter().map(|&t| precision_literal(&map, &label, t).unwrap()).collect();
        monotone &= lit.windows(2).all(|q| match (q[0], q[1]) {
            (Some(a), Some(b)) => b <= a,
            (None, None) => true,
            _ => false,
        });
        for &t in &ts {
            if let Some(v) = precision_standard(&map, &label, t).unwrap() {
                bounded &= (0.0..=1.0).contains(&v);
            }
        }
        if label.iter().any(|&l| l == 1) {
            maps.push(label.map(|&l| l as f64));
            labels.push(label);
        }
    }
    let cfg = EvalConfig { thresholds: vec![0.98, 0.85, 0.5, 0.1], use_gaussian: false, ..EvalConfig::default() };
    let oracle = evaluate_maps("oracle", &maps, &labels, &cfg).unwrap();
    vec![
        ("literal precision non-increasing in threshold", monotone),
        ("standard precision within [0, 1]", bounded),
        ("oracle model scores 1.0", !maps.is_empty() && oracle.means.iter().all(|&m| m == Some(1.0))),
    ]
}
