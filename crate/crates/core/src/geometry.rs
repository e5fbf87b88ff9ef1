//! Pinhole back-projection, workspace normalization and network input
//! assembly.
//!
//! Pixel `(u, v)` is (column, row). A depth of `0.0` marks a pixel without a
//! range measurement; such pixels back-project to the origin, and the origin
//! stays reserved as the "no point" encoding after normalization.

use alloc::format;
use alloc::vec::Vec;

use crate::math::{floor, round};
use crate::{Dims, Error, Grid, InputMode, Result, Tensor4};

pub type DepthMap = Grid<f64>;
pub type PointGrid = Grid<[f64; 3]>;
pub type RgbImage = Grid<[u8; 3]>;

pub const NULL_POINT: [f64; 3] = [0.0; 3];

/// Floor applied to normalized coordinates of valid points so that the
/// workspace minimum corner cannot collide with [`NULL_POINT`].
pub const MIN_COORD: f64 = 1e-6;

/// Zero-skew pinhole intrinsics (pixels).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid("intrinsics", format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("intrinsics", "principal point must be finite"));
        }
        Ok(())
    }

    /// `z * K^-1 [u, v, 1]^T`.
    #[inline]
    pub fn backproject_pixel(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        if z == 0.0 {
            return NULL_POINT;
        }
        [z * (u - self.cx) / self.fx, z * (v - self.cy) / self.fy, z]
    }

    /// Pixel coordinates of a camera-frame point with `z > 0`.
    #[inline]
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }

    /// Intrinsics after cropping a window whose top-left pixel is
    /// `(col0, row0)` and scaling it by `scale`, with pixel centers at
    /// integer coordinates.
    pub fn cropped_scaled(&self, col0: usize, row0: usize, scale: f64) -> Self {
        CameraIntrinsics {
            fx: self.fx * scale,
            fy: self.fy * scale,
            cx: (self.cx - col0 as f64 + 0.5) * scale - 0.5,
            cy: (self.cy - row0 as f64 + 0.5) * scale - 0.5,
        }
    }
}

/// Axis-aligned camera-frame box used to normalize points (meters).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkspaceBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl WorkspaceBounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let b = WorkspaceBounds { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            if !(self.min[axis] < self.max[axis]) || !self.min[axis].is_finite() || !self.max[axis].is_finite() {
                return Err(Error::invalid(
                    "bounds",
                    format!("axis {axis}: min {} must be below max {}", self.min[axis], self.max[axis]),
                ));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Normalized coordinate of `value` on `axis`, or `None` outside the box.
    #[inline]
    pub fn normalize_axis(&self, axis: usize, value: f64) -> Option<f64> {
        if value < self.min[axis] || value > self.max[axis] {
            return None;
        }
        let t = (value - self.min[axis]) / (self.max[axis] - self.min[axis]);
        Some(t.max(MIN_COORD))
    }
}

impl Default for WorkspaceBounds {
    /// Camera-frame box around the default synthetic bin seen from 0.75 m.
    fn default() -> Self {
        WorkspaceBounds { min: [-0.24, -0.24, 0.45], max: [0.24, 0.24, 0.80] }
    }
}

/// Back-project every pixel of a depth map.
pub fn backproject(depth: &DepthMap, k: &CameraIntrinsics) -> Result<PointGrid> {
    k.validate()?;
    let mut out = Vec::with_capacity(depth.as_slice().len());
    for (v, u, &z) in depth.indexed() {
        out.push(k.backproject_pixel(u as f64, v as f64, z));
    }
    Grid::from_vec(depth.height(), depth.width(), out)
}

/// Map points into the unit cube of `bounds`; null or out-of-box points
/// become [`NULL_POINT`].
pub fn normalize_points(points: &PointGrid, bounds: &WorkspaceBounds) -> Result<PointGrid> {
    bounds.validate()?;
    Ok(points.map(|&p| normalize_point(p, bounds)))
}

#[inline]
fn normalize_point(p: [f64; 3], b: &WorkspaceBounds) -> [f64; 3] {
    if p == NULL_POINT {
        return NULL_POINT;
    }
    match (b.normalize_axis(0, p[0]), b.normalize_axis(1, p[1]), b.normalize_axis(2, p[2])) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => NULL_POINT,
    }
}

/// Depth scaled over the workspace z-range; null or out-of-range is 0.
#[inline]
pub fn normalize_depth(z: f64, bounds: &WorkspaceBounds) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    bounds.normalize_axis(2, z).unwrap_or(0.0)
}

/// Build a `1 x h x w x C` network input. `points` are raw camera-frame
/// points (normalized here); color is scaled to `[0, 1]`.
pub fn assemble_input(
    rgb: &RgbImage,
    depth: &DepthMap,
    points: &PointGrid,
    bounds: &WorkspaceBounds,
    mode: InputMode,
) -> Result<Tensor4<f32>> {
    let (h, w) = rgb.dims();
    if depth.dims() != (h, w) || points.dims() != (h, w) {
        return Err(Error::shape(
            "assemble_input",
            format!("rgb {h}x{w}, depth {:?}, points {:?}", depth.dims(), points.dims()),
        ));
    }
    bounds.validate()?;
    let c = mode.channels();
    let mut data = Vec::with_capacity(h * w * c);
    for i in 0..h * w {
        let px = rgb.as_slice()[i];
        data.extend(px.iter().map(|&v| v as f32 / 255.0));
        match mode {
            InputMode::Rgb => {}
            InputMode::Rgbd => data.push(normalize_depth(depth.as_slice()[i], bounds) as f32),
            InputMode::Rgbp => {
                let p = normalize_point(points.as_slice()[i], bounds);
                data.extend(p.iter().map(|&v| v as f32));
            }
        }
    }
    Tensor4::from_vec(Dims::new(1, h, w, c), data)
}

/// Largest centered square window: `(row0, col0, side)`.
pub fn center_square(h: usize, w: usize) -> (usize, usize, usize) {
    let side = h.min(w);
    ((h - side) / 2, (w - side) / 2, side)
}

/// Crop `src` to the window `(row0, col0, side)` and resample to `size`
/// with nearest-neighbor lookup (no value blending).
pub fn crop_resize_nearest<T: Copy>(src: &Grid<T>, row0: usize, col0: usize, side: usize, size: usize) -> Grid<T> {
    let scale = side as f64 / size as f64;
    let pick = |i: usize| ((floor((i as f64 + 0.5) * scale)) as usize).min(side - 1);
    Grid::from_fn(size, size, |r, c| src.at(row0 + pick(r), col0 + pick(c)))
}

/// Crop and bilinearly resample a color image.
pub fn crop_resize_bilinear(src: &RgbImage, row0: usize, col0: usize, side: usize, size: usize) -> RgbImage {
    let scale = side as f64 / size as f64;
    let coord = |i: usize| -> (usize, usize, f64) {
        let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f64);
        let i0 = floor(s) as usize;
        let i1 = (i0 + 1).min(side - 1);
        (i0, i1, s - i0 as f64)
    };
    Grid::from_fn(size, size, |r, c| {
        let (r0, r1, fr) = coord(r);
        let (c0, c1, fc) = coord(c);
        let mut out = [0u8; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let p = |rr: usize, cc: usize| src.at(row0 + rr, col0 + cc)[ch] as f64;
            let top = p(r0, c0) * (1.0 - fc) + p(r0, c1) * fc;
            let bot = p(r1, c0) * (1.0 - fc) + p(r1, c1) * fc;
            *o = round(top * (1.0 - fr) + bot * fr).clamp(0.0, 255.0) as u8;
        }
        out
    })
}
