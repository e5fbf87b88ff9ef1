//! Scene samples, label maps, dihedral augmentation and the train/eval split.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{
    backproject, center_square, crop_resize_bilinear, crop_resize_nearest, assemble_input, CameraIntrinsics,
    DepthMap, RgbImage, WorkspaceBounds,
};
use crate::{Dims, Error, Grid, InputMode, Result, Tensor4};

/// Binary map at network output resolution.
pub type LabelMap = Grid<u8>;

/// One registered color/depth capture with its graspable-region mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    /// 1 = graspable, 0 = not.
    pub mask: Grid<u8>,
    pub intrinsics: CameraIntrinsics,
}

impl SceneSample {
    pub fn new(rgb: RgbImage, depth: DepthMap, mask: Grid<u8>, intrinsics: CameraIntrinsics) -> Result<Self> {
        let s = SceneSample { rgb, depth, mask, intrinsics };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.rgb.dims();
        if self.depth.dims() != dims || self.mask.dims() != dims {
            return Err(Error::shape(
                "SceneSample",
                format!("rgb {:?}, depth {:?}, mask {:?}", dims, self.depth.dims(), self.mask.dims()),
            ));
        }
        if let Some(v) = self.mask.iter().find(|&&v| v > 1) {
            return Err(Error::invalid("mask", format!("non-binary value {v}")));
        }
        if let Some(z) = self.depth.iter().find(|z| !(z.is_finite() && **z >= 0.0)) {
            return Err(Error::invalid("depth", format!("invalid depth {z}")));
        }
        self.intrinsics.validate()
    }

    /// Center-crop to a square and resample to `size x size`; depth and mask
    /// use nearest-neighbor lookup, color is bilinear.
    pub fn resampled(&self, size: usize) -> SceneSample {
        let (h, w) = self.rgb.dims();
        if (h, w) == (size, size) {
            return self.clone();
        }
        let (r0, c0, side) = center_square(h, w);
        SceneSample {
            rgb: crop_resize_bilinear(&self.rgb, r0, c0, side, size),
            depth: crop_resize_nearest(&self.depth, r0, c0, side, size),
            mask: crop_resize_nearest(&self.mask, r0, c0, side, size),
            intrinsics: self.intrinsics.cropped_scaled(c0, r0, size as f64 / side as f64),
        }
    }

    /// Network input for `mode` plus the full-resolution mask.
    pub fn to_example(&self, mode: InputMode, bounds: &WorkspaceBounds) -> Result<TrainingExample> {
        let points = backproject(&self.depth, &self.intrinsics)?;
        let input = assemble_input(&self.rgb, &self.depth, &points, bounds, mode)?;
        TrainingExample::new(input, self.mask.clone(), mode)
    }
}

/// An assembled input tensor with its mask, ready for augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    /// `1 x h x w x C`.
    pub input: Tensor4<f32>,
    /// Full-resolution binary mask.
    pub mask: Grid<u8>,
    pub mode: InputMode,
}

impl TrainingExample {
    pub fn new(input: Tensor4<f32>, mask: Grid<u8>, mode: InputMode) -> Result<Self> {
        let d = input.dims();
        if d.n != 1 || d.c != mode.channels() || (d.h, d.w) != mask.dims() {
            return Err(Error::shape(
                "TrainingExample",
                format!("input {d} with mask {:?} for mode {mode}", mask.dims()),
            ));
        }
        Ok(TrainingExample { input, mask, mode })
    }

    pub fn label(&self) -> LabelMap {
        downsample_label(&self.mask)
    }

    /// Label as a `1 x h/2 x w/2 x 1` tensor.
    pub fn label_tensor(&self) -> Tensor4<f32> {
        let l = self.label();
        let (h, w) = l.dims();
        Tensor4::from_vec(Dims::new(1, h, w, 1), l.iter().map(|&v| v as f32).collect()).expect("label dims")
    }
}

/// 2x2 block maximum: a cell is positive when any pixel of its block is.
pub fn downsample_label(mask: &Grid<u8>) -> LabelMap {
    let (h, w) = (mask.height() / 2, mask.width() / 2);
    Grid::from_fn(h, w, |r, c| {
        let any = mask.at(2 * r, 2 * c) | mask.at(2 * r, 2 * c + 1) | mask.at(2 * r + 1, 2 * c) | mask.at(2 * r + 1, 2 * c + 1);
        u8::from(any != 0)
    })
}

/// The eight symmetries of the square pixel grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DihedralOp {
    Identity,
    /// Quarter turn counter-clockwise.
    Rot90,
    Rot180,
    Rot270,
    /// Mirror left-right.
    FlipH,
    /// Mirror top-bottom.
    FlipV,
    /// Mirror about the main diagonal.
    Transpose,
    /// Mirror about the anti-diagonal.
    AntiTranspose,
}

impl DihedralOp {
    pub const ALL: [DihedralOp; 8] = [
        DihedralOp::Identity,
        DihedralOp::Rot90,
        DihedralOp::Rot180,
        DihedralOp::Rot270,
        DihedralOp::FlipH,
        DihedralOp::FlipV,
        DihedralOp::Transpose,
        DihedralOp::AntiTranspose,
    ];

    /// Quarter turn applied `k` times.
    pub fn rot90(k: usize) -> Self {
        [DihedralOp::Identity, DihedralOp::Rot90, DihedralOp::Rot180, DihedralOp::Rot270][k % 4]
    }

    pub fn inverse(self) -> Self {
        match self {
            DihedralOp::Rot90 => DihedralOp::Rot270,
            DihedralOp::Rot270 => DihedralOp::Rot90,
            other => other,
        }
    }

    /// Destination `(row, col)` of source pixel `(r, c)` on an `n x n` grid.
    #[inline]
    pub fn map_pixel(self, r: usize, c: usize, n: usize) -> (usize, usize) {
        let m = n - 1;
        match self {
            DihedralOp::Identity => (r, c),
            DihedralOp::Rot90 => (m - c, r),
            DihedralOp::Rot180 => (m - r, m - c),
            DihedralOp::Rot270 => (c, m - r),
            DihedralOp::FlipH => (r, m - c),
            DihedralOp::FlipV => (m - r, c),
            DihedralOp::Transpose => (c, r),
            DihedralOp::AntiTranspose => (m - c, m - r),
        }
    }

    /// Remap normalized `(x, y)` so points stay consistent with their new
    /// pixel position (x follows columns, y follows rows).
    #[inline]
    pub fn map_xy(self, x: f32, y: f32) -> (f32, f32) {
        match self {
            DihedralOp::Identity => (x, y),
            DihedralOp::Rot90 => (y, 1.0 - x),
            DihedralOp::Rot180 => (1.0 - x, 1.0 - y),
            DihedralOp::Rot270 => (1.0 - y, x),
            DihedralOp::FlipH => (1.0 - x, y),
            DihedralOp::FlipV => (x, 1.0 - y),
            DihedralOp::Transpose => (y, x),
            DihedralOp::AntiTranspose => (1.0 - y, 1.0 - x),
        }
    }

    pub fn apply_grid<T: Copy + Default>(self, g: &Grid<T>) -> Grid<T> {
        let n = g.height();
        let mut out = Grid::filled(n, n, T::default());
        for (r, c, &v) in g.indexed() {
            let (r2, c2) = self.map_pixel(r, c, n);
            out.set(r2, c2, v);
        }
        out
    }
}

/// Apply one grid symmetry to input, point channels and mask together.
pub fn augment(example: &TrainingExample, op: DihedralOp) -> Result<TrainingExample> {
    let d = example.input.dims();
    if d.h != d.w {
        return Err(Error::shape("augment", format!("non-square input {d}")));
    }
    if op == DihedralOp::Identity {
        return Ok(example.clone());
    }
    let n = d.h;
    let c = d.c;
    let mut out = Tensor4::zeros(d);
    let src = example.input.data();
    let dst = out.data_mut();
    for r in 0..n {
        for col in 0..n {
            let (r2, c2) = op.map_pixel(r, col, n);
            let s = &src[(r * n + col) * c..][..c];
            let t = &mut dst[(r2 * n + c2) * c..][..c];
            t.copy_from_slice(s);
            if example.mode == InputMode::Rgbp && s[3..6] != [0.0; 3] {
                let (x, y) = op.map_xy(s[3], s[4]);
                t[3] = x;
                t[4] = y;
            }
        }
    }
    TrainingExample::new(out, op.apply_grid(&example.mask), example.mode)
}

/// Deterministic shuffled split. Both parts are non-empty whenever there
/// are at least two items.
pub fn split<T>(items: Vec<T>, train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction", format!("{train_fraction} is not in (0, 1)")));
    }
    let n = items.len();
    let mut n_train = crate::math::round(train_fraction * n as f64) as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut train = Vec::with_capacity(n_train);
    let mut eval = Vec::with_capacity(n - n_train);
    for (rank, &i) in order.iter().enumerate() {
        let item = slots[i].take().expect("each index once");
        if rank < n_train {
            train.push(item);
        } else {
            eval.push(item);
        }
    }
    Ok((train, eval))
}
