//! Smoothing, normalization and suction-point selection on predicted maps.

use alloc::format;
use alloc::string::String;

use crate::geometry::{CameraIntrinsics, DepthMap};
use crate::{Error, Grid, Result, Scalar, Tensor4};

/// Per-pixel grasp probability at network output resolution.
pub type ProbabilityMap = Grid<f64>;

/// 3x3 binomial kernel; entries sum to 16.
pub const GAUSSIAN_WEIGHTS: [[u8; 3]; 3] = [[1, 2, 1], [2, 4, 2], [1, 2, 1]];
pub const GAUSSIAN_NORM: f64 = 16.0;

/// Largest Chebyshev distance searched for a valid depth when the chosen
/// pixel has none.
pub const DEPTH_FALLBACK_RADIUS: usize = 3;

pub fn gaussian_kernel() -> [[f64; 3]; 3] {
    GAUSSIAN_WEIGHTS.map(|row| row.map(|w| w as f64 / GAUSSIAN_NORM))
}

/// 3x3 Gaussian filter with edge replication at the borders.
pub fn gaussian_smooth(map: &ProbabilityMap) -> ProbabilityMap {
    let (h, w) = map.dims();
    if h == 0 || w == 0 {
        return map.clone();
    }
    let k = gaussian_kernel();
    Grid::from_fn(h, w, |r, c| {
        let mut acc = 0.0;
        for (i, row) in k.iter().enumerate() {
            let rr = (r + i).saturating_sub(1).min(h - 1);
            for (j, &kv) in row.iter().enumerate() {
                let cc = (c + j).saturating_sub(1).min(w - 1);
                acc += kv * map.at(rr, cc);
            }
        }
        acc
    })
}

/// Min-max rescale to `[0, 1]`. A constant map becomes all zeros.
pub fn normalize_map(map: &ProbabilityMap) -> ProbabilityMap {
    let (lo, hi) = map.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if !(span > 0.0) {
        return map.map(|_| 0.0);
    }
    map.map(|&v| if v == hi { 1.0 } else { (v - lo) / span })
}

/// Optionally smooth, then normalize.
pub fn process_map(raw: &ProbabilityMap, smooth: bool) -> ProbabilityMap {
    if smooth {
        normalize_map(&gaussian_smooth(raw))
    } else {
        normalize_map(raw)
    }
}

/// Item `n` of a single-channel batch as a map.
pub fn map_from_tensor<T: Scalar>(t: &Tensor4<T>, n: usize) -> Result<ProbabilityMap> {
    let d = t.dims();
    if d.c != 1 || n >= d.n {
        return Err(Error::shape("map_from_tensor", format!("item {n} of {d}")));
    }
    Grid::from_vec(d.h, d.w, t.item(n).iter().map(|v| v.as_f64()).collect())
}

/// Position of the largest value; ties go to the lowest row-major index.
pub fn argmax(map: &ProbabilityMap) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (r, c, &v) in map.indexed() {
        if best.is_none_or(|(_, _, b)| v > b) {
            best = Some((r, c, v));
        }
    }
    best.map(|(r, c, _)| (r, c))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuctionResult {
    /// `(row, col)` in the output map.
    pub out_pixel: (usize, usize),
    /// `(row, col)` in the input image: the top-left of the 2x2 block.
    pub in_pixel: (usize, usize),
    /// `(row, col)` whose depth produced `point3d`; differs from
    /// `in_pixel` only when that pixel had no depth.
    pub depth_pixel: (usize, usize),
    /// Camera-frame point, meters.
    pub point3d: [f64; 3],
    /// Processed map value at `out_pixel`.
    pub score: f64,
}

impl SuctionResult {
    /// Input image column.
    pub fn u(&self) -> usize {
        self.in_pixel.1
    }

    /// Input image row.
    pub fn v(&self) -> usize {
        self.in_pixel.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Suction {
    Point(SuctionResult),
    /// No valid depth near the best pixel; do not attempt a grasp.
    NoPoint,
}

impl Suction {
    /// `r c u v x y z score`, or `NO_POINT`.
    pub fn to_line(&self) -> String {
        match self {
            Suction::Point(s) => format!(
                "{} {} {} {} {:.6} {:.6} {:.6} {:.6}",
                s.out_pixel.0,
                s.out_pixel.1,
                s.u(),
                s.v(),
                s.point3d[0],
                s.point3d[1],
                s.point3d[2],
                s.score
            ),
            Suction::NoPoint => String::from("NO_POINT"),
        }
    }
}

fn nearest_valid(depth: &DepthMap, r: usize, c: usize) -> Option<(usize, usize)> {
    let (h, w) = depth.dims();
    let rad = DEPTH_FALLBACK_RADIUS;
    let mut best: Option<(usize, usize, usize)> = None;
    for rr in r.saturating_sub(rad)..=(r + rad).min(h - 1) {
        for cc in c.saturating_sub(rad)..=(c + rad).min(w - 1) {
            if depth.at(rr, cc) <= 0.0 {
                continue;
            }
            let d2 = rr.abs_diff(r).pow(2) + cc.abs_diff(c).pow(2);
            if best.is_none_or(|(_, _, b)| d2 < b) {
                best = Some((rr, cc, d2));
            }
        }
    }
    best.map(|(rr, cc, _)| (rr, cc))
}

/// Pick the best pixel of a processed map and lift it to 3D using the
/// depth image at twice the map resolution.
pub fn select_suction_point(map: &ProbabilityMap, depth: &DepthMap, k: &CameraIntrinsics) -> Result<Suction> {
    let (h, w) = map.dims();
    if depth.dims() != (2 * h, 2 * w) {
        return Err(Error::shape(
            "select_suction_point",
            format!("map {h}x{w} needs depth {}x{}, got {:?}", 2 * h, 2 * w, depth.dims()),
        ));
    }
    let Some((r, c)) = argmax(map) else {
        return Err(Error::Empty { what: "probability map" });
    };
    let in_pixel = (2 * r, 2 * c);
    let Some(dp) = nearest_valid(depth, in_pixel.0, in_pixel.1) else {
        return Ok(Suction::NoPoint);
    };
    let point3d = k.backproject_pixel(dp.1 as f64, dp.0 as f64, depth.at(dp.0, dp.1));
    Ok(Suction::Point(SuctionResult { out_pixel: (r, c), in_pixel, depth_pixel: dp, point3d, score: map.at(r, c) }))
}
