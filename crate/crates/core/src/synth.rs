//! Synthetic cluttered-bin scenes rendered by top-down ray casting against
//! analytic primitives, labeled by a suction-cup flatness test.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::SceneSample;
use crate::geometry::{CameraIntrinsics, DepthMap};
use crate::math::{ceil, cos, sin, sqrt};
use crate::{Error, Grid, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    /// Axis vertical.
    UprightCylinder { radius: f64, height: f64 },
    /// Axis horizontal along the object's yaw direction.
    LyingCylinder { radius: f64, length: f64 },
    Cuboid { half_x: f64, half_y: f64, height: f64 },
}

impl Primitive {
    pub fn height(&self) -> f64 {
        match *self {
            Primitive::UprightCylinder { height, .. } | Primitive::Cuboid { height, .. } => height,
            Primitive::LyingCylinder { radius, .. } => 2.0 * radius,
        }
    }

    /// Points covering the footprint, in the object frame.
    fn footprint(&self) -> Vec<[f64; 2]> {
        let grid = |hx: f64, hy: f64| {
            let mut pts = Vec::with_capacity(49);
            for i in 0..7 {
                for j in 0..7 {
                    pts.push([hx * (i as f64 / 3.0 - 1.0), hy * (j as f64 / 3.0 - 1.0)]);
                }
            }
            pts
        };
        match *self {
            Primitive::UprightCylinder { radius, .. } => {
                let mut pts = alloc::vec![[0.0, 0.0]];
                for ring in [0.5, 1.0] {
                    for k in 0..16 {
                        let a = k as f64 * PI / 8.0;
                        pts.push([ring * radius * cos(a), ring * radius * sin(a)]);
                    }
                }
                pts
            }
            Primitive::LyingCylinder { radius, length } => grid(length / 2.0, radius),
            Primitive::Cuboid { half_x, half_y, .. } => grid(half_x, half_y),
        }
    }
}

/// One placed object. Heights are measured upward from the bin floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthObject {
    pub primitive: Primitive,
    /// Floor-plane position in the camera's x/y axes, meters.
    pub center: [f64; 2],
    pub yaw: f64,
    /// Height of the lowest point.
    pub base: f64,
    pub color: [u8; 3],
}

impl SynthObject {
    pub fn top(&self) -> f64 {
        self.base + self.primitive.height()
    }

    fn to_local(self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = (sin(self.yaw), cos(self.yaw));
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    fn to_world(self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = (sin(self.yaw), cos(self.yaw));
        [self.center[0] + c * p[0] - s * p[1], self.center[1] + s * p[0] + c * p[1]]
    }

    fn intersect(&self, ray: &Ray) -> Option<Hit> {
        let (ox, oy) = self.to_local(ray.origin[0], ray.origin[1]);
        let (s, c) = (sin(self.yaw), cos(self.yaw));
        let (dx, dy) = (c * ray.dir[0] + s * ray.dir[1], -s * ray.dir[0] + c * ray.dir[1]);
        let local = Ray { origin: [ox, oy, ray.origin[2]], dir: [dx, dy] };
        match self.primitive {
            Primitive::Cuboid { half_x, half_y, height } => {
                intersect_box(&local, [-half_x, -half_y, self.base], [half_x, half_y, self.base + height])
            }
            Primitive::UprightCylinder { radius, height } => intersect_upright(&local, radius, self.base, self.base + height),
            Primitive::LyingCylinder { radius, length } => intersect_lying(&local, radius, length, self.base + radius),
        }
    }
}

/// Ray `p(t) = origin + t * (dir.x, dir.y, -1)`; `t` is depth below the
/// origin height.
#[derive(Clone, Copy, Debug)]
struct Ray {
    origin: [f64; 3],
    dir: [f64; 2],
}

impl Ray {
    fn at(&self, t: f64) -> [f64; 3] {
        [self.origin[0] + t * self.dir[0], self.origin[1] + t * self.dir[1], self.origin[2] - t]
    }
}

#[derive(Clone, Copy, Debug)]
struct Hit {
    t: f64,
    /// Vertical component of the unit surface normal.
    normal_up: f64,
}

fn nearer(a: Option<Hit>, b: Option<Hit>) -> Option<Hit> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.t < x.t { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

const TINY: f64 = 1e-12;

fn intersect_box(ray: &Ray, lo: [f64; 3], hi: [f64; 3]) -> Option<Hit> {
    let dir = [ray.dir[0], ray.dir[1], -1.0];
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    let mut axis = 2;
    for a in 0..3 {
        if dir[a].abs() < TINY {
            if ray.origin[a] < lo[a] || ray.origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[a] - ray.origin[a]) / dir[a], (hi[a] - ray.origin[a]) / dir[a]);
        if ta > tb {
            core::mem::swap(&mut ta, &mut tb);
        }
        if ta > t0 {
            t0 = ta;
            axis = a;
        }
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some(Hit { t: t0, normal_up: if axis == 2 { 1.0 } else { 0.0 } })
}

fn intersect_upright(ray: &Ray, r: f64, h0: f64, h1: f64) -> Option<Hit> {
    let t_cap = ray.origin[2] - h1;
    let p = ray.at(t_cap);
    if t_cap >= 0.0 && p[0] * p[0] + p[1] * p[1] <= r * r {
        return Some(Hit { t: t_cap, normal_up: 1.0 });
    }
    let [ox, oy, _] = ray.origin;
    let [dx, dy] = ray.dir;
    let a = dx * dx + dy * dy;
    if a < TINY {
        return None;
    }
    let b = ox * dx + oy * dy;
    let disc = b * b - a * (ox * ox + oy * oy - r * r);
    if disc < 0.0 {
        return None;
    }
    let t = (-b - sqrt(disc)) / a;
    let h = ray.origin[2] - t;
    (t >= 0.0 && h >= h0 && h <= h1).then_some(Hit { t, normal_up: 0.0 })
}

fn intersect_lying(ray: &Ray, r: f64, length: f64, hc: f64) -> Option<Hit> {
    let half = length / 2.0;
    let [ox, oy, oh] = ray.origin;
    let [dx, dy] = ray.dir;
    let k = oh - hc;
    let a = dy * dy + 1.0;
    let b = oy * dy - k;
    let disc = b * b - a * (oy * oy + k * k - r * r);
    let mut best = None;
    if disc >= 0.0 {
        let t = (-b - sqrt(disc)) / a;
        let p = ray.at(t);
        if t >= 0.0 && p[0].abs() <= half {
            best = Some(Hit { t, normal_up: (p[2] - hc) / r });
        }
    }
    if dx.abs() >= TINY {
        for end in [-half, half] {
            let t = (end - ox) / dx;
            let p = ray.at(t);
            let (y, h) = (p[1], p[2] - hc);
            if t >= 0.0 && y * y + h * h <= r * r {
                best = nearer(best, Some(Hit { t, normal_up: 0.0 }));
            }
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinConfig {
    /// Inner half width of the square bin.
    pub half_extent: f64,
    pub wall_height: f64,
    pub wall_thickness: f64,
    /// Camera height above the bin floor.
    pub camera_height: f64,
    /// Objects whose top would exceed this height are re-drawn.
    pub max_top: f64,
}

impl Default for BinConfig {
    fn default() -> Self {
        BinConfig { half_extent: 0.2, wall_height: 0.12, wall_thickness: 0.01, camera_height: 0.75, max_top: 0.28 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_objects: usize,
    pub bin: BinConfig,
    pub image_size: usize,
    pub focal: f64,
    /// Chance that a depth pixel is zeroed.
    pub p_null: f64,
    pub cup_radius: f64,
    pub flat_tolerance: f64,
    pub max_tilt_deg: f64,
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_objects: 6,
            bin: BinConfig::default(),
            image_size: 128,
            focal: 200.0,
            p_null: 0.02,
            cup_radius: 0.009,
            flat_tolerance: 0.002,
            max_tilt_deg: 15.0,
            max_attempts: 100,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_objects == 0 {
            return Err(Error::invalid("n_objects", "at least one object is required"));
        }
        if self.image_size == 0 || !(self.focal > 0.0) {
            return Err(Error::invalid("camera", format!("size {} focal {}", self.image_size, self.focal)));
        }
        if !(0.0..=1.0).contains(&self.p_null) {
            return Err(Error::invalid("p_null", format!("{} is not a probability", self.p_null)));
        }
        let b = &self.bin;
        if !(b.half_extent > 0.0 && b.camera_height > b.max_top && b.max_top > 0.0 && b.wall_height >= 0.0) {
            return Err(Error::invalid("bin", format!("{b:?}")));
        }
        if !(self.cup_radius > 0.0 && self.flat_tolerance >= 0.0 && self.max_attempts > 0) {
            return Err(Error::invalid("suction cup", format!("radius {} tolerance {}", self.cup_radius, self.flat_tolerance)));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let c = (self.image_size as f64 - 1.0) / 2.0;
        CameraIntrinsics { fx: self.focal, fy: self.focal, cx: c, cy: c }
    }
}

/// Object layout of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub seed: u64,
    pub objects: Vec<SynthObject>,
    /// Objects dropped after exhausting their placement attempts.
    pub skipped: usize,
    pub bin: BinConfig,
    pub intrinsics: CameraIntrinsics,
}

impl SynthScene {
    /// Height of the highest object surface straight above `(x, y)`, or 0.
    pub fn support_height(&self, x: f64, y: f64) -> f64 {
        let top = self.bin.max_top + 1.0;
        let ray = Ray { origin: [x, y, top], dir: [0.0, 0.0] };
        self.objects
            .iter()
            .filter_map(|o| o.intersect(&ray))
            .map(|h| top - h.t)
            .fold(0.0, f64::max)
    }
}

/// Surface seen at a pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    Floor,
    Wall,
    Object(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    /// Depth includes simulated dropout.
    pub sample: SceneSample,
    pub scene: SynthScene,
    /// `0` for floor and walls, `i + 1` for object `i`.
    pub object_id: Grid<u16>,
    /// Depth before dropout.
    pub clean_depth: DepthMap,
}

const FLOOR_COLOR: [u8; 3] = [150, 140, 120];
const WALL_COLOR: [u8; 3] = [90, 90, 105];

fn random_primitive(rng: &mut ChaCha8Rng) -> Primitive {
    let pick: f64 = rng.random();
    if pick < 0.4 {
        Primitive::UprightCylinder { radius: rng.random_range(0.02..0.045), height: rng.random_range(0.04..0.12) }
    } else if pick < 0.7 {
        Primitive::LyingCylinder { radius: rng.random_range(0.02..0.04), length: rng.random_range(0.06..0.16) }
    } else {
        Primitive::Cuboid {
            half_x: rng.random_range(0.02..0.06),
            half_y: rng.random_range(0.02..0.05),
            height: rng.random_range(0.03..0.08),
        }
    }
}

/// Drop objects one at a time; each rests on the highest surface under
/// its footprint.
pub fn place_objects(seed: u64, cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = SynthScene { seed, objects: Vec::new(), skipped: 0, bin: cfg.bin, intrinsics: cfg.intrinsics() };
    let half = cfg.bin.half_extent;
    for _ in 0..cfg.n_objects {
        let mut placed = None;
        for _ in 0..cfg.max_attempts {
            let primitive = random_primitive(&mut rng);
            let mut obj = SynthObject {
                primitive,
                center: [rng.random_range(-half..half), rng.random_range(-half..half)],
                yaw: rng.random_range(0.0..PI),
                base: 0.0,
                color: [rng.random_range(40..=255), rng.random_range(40..=255), rng.random_range(40..=255)],
            };
            let pts: Vec<[f64; 2]> = primitive.footprint().into_iter().map(|p| obj.to_world(p)).collect();
            if pts.iter().any(|p| p[0].abs() > half || p[1].abs() > half) {
                continue;
            }
            obj.base = pts.iter().map(|p| scene.support_height(p[0], p[1])).fold(0.0, f64::max);
            if obj.top() <= cfg.bin.max_top {
                placed = Some(obj);
                break;
            }
        }
        match placed {
            Some(o) => scene.objects.push(o),
            None => scene.skipped += 1,
        }
    }
    Ok(scene)
}

fn walls(bin: &BinConfig) -> [([f64; 3], [f64; 3]); 4] {
    let (a, b, h) = (bin.half_extent, bin.half_extent + bin.wall_thickness, bin.wall_height);
    [
        ([a, -b, 0.0], [b, b, h]),
        ([-b, -b, 0.0], [-a, b, h]),
        ([-b, a, 0.0], [b, b, h]),
        ([-b, -b, 0.0], [b, -a, h]),
    ]
}

fn shade(color: [u8; 3], normal_up: f64) -> [u8; 3] {
    let s = 0.4 + 0.6 * normal_up.clamp(0.0, 1.0);
    color.map(|c| crate::math::round(c as f64 * s).clamp(0.0, 255.0) as u8)
}

/// Seed of scene `index` in a dataset generated from `seed`.
pub fn scene_seed(seed: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(index))
}

/// Render one scene: color, depth with dropout, and the graspable mask.
pub fn generate_scene(seed: u64, cfg: &SynthConfig) -> Result<Rendered> {
    render_scene(place_objects(seed, cfg)?, cfg)
}

/// Render a given layout; dropout draws from `scene.seed`.
pub fn render_scene(scene: SynthScene, cfg: &SynthConfig) -> Result<Rendered> {
    cfg.validate()?;
    let seed = scene.seed;
    let n = cfg.image_size;
    let k = scene.intrinsics;
    let cam_h = cfg.bin.camera_height;
    let walls = walls(&cfg.bin);

    let mut depth = Grid::filled(n, n, 0.0f64);
    let mut normal_up = Grid::filled(n, n, 0.0f64);
    let mut object_id = Grid::filled(n, n, 0u16);
    let mut rgb = Grid::filled(n, n, [0u8; 3]);
    for r in 0..n {
        for c in 0..n {
            let ray = Ray { origin: [0.0, 0.0, cam_h], dir: [(c as f64 - k.cx) / k.fx, (r as f64 - k.cy) / k.fy] };
            let mut hit = (Hit { t: cam_h, normal_up: 1.0 }, Surface::Floor);
            for (lo, hi) in &walls {
                if let Some(h) = intersect_box(&ray, *lo, *hi) {
                    if h.t < hit.0.t {
                        hit = (h, Surface::Wall);
                    }
                }
            }
            for (i, o) in scene.objects.iter().enumerate() {
                if let Some(h) = o.intersect(&ray) {
                    if h.t < hit.0.t {
                        hit = (h, Surface::Object(i));
                    }
                }
            }
            let (h, surface) = hit;
            depth.set(r, c, h.t);
            normal_up.set(r, c, h.normal_up);
            let base = match surface {
                Surface::Floor => FLOOR_COLOR,
                Surface::Wall => WALL_COLOR,
                Surface::Object(i) => {
                    object_id.set(r, c, (i + 1) as u16);
                    scene.objects[i].color
                }
            };
            rgb.set(r, c, shade(base, h.normal_up));
        }
    }

    let mask = suction_mask(&depth, &normal_up, &object_id, &k, cfg);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut noisy = depth.clone();
    if cfg.p_null > 0.0 {
        for z in noisy.as_mut_slice() {
            if rng.random_bool(cfg.p_null) {
                *z = 0.0;
            }
        }
    }
    let sample = SceneSample::new(rgb, noisy, mask, k)?;
    Ok(Rendered { sample, scene, object_id, clean_depth: depth })
}

/// A pixel is graspable when it lies on an object, faces upward within
/// the tilt limit, and every pixel ray inside the cup disc around it
/// reaches a surface within the flatness tolerance of its depth.
pub fn suction_mask(
    depth: &DepthMap,
    normal_up: &Grid<f64>,
    object_id: &Grid<u16>,
    k: &CameraIntrinsics,
    cfg: &SynthConfig,
) -> Grid<u8> {
    let (h, w) = depth.dims();
    let min_up = cos(cfg.max_tilt_deg * PI / 180.0);
    let r2 = cfg.cup_radius * cfg.cup_radius;
    Grid::from_fn(h, w, |r, c| {
        if object_id.at(r, c) == 0 || normal_up.at(r, c) < min_up {
            return 0;
        }
        let z = depth.at(r, c);
        if z <= 0.0 {
            return 0;
        }
        let [px, py, _] = k.backproject_pixel(c as f64, r as f64, z);
        let reach = ceil(cfg.cup_radius * k.fx.max(k.fy) / z) as isize + 1;
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (rq, cq) = (r as isize + dr, c as isize + dc);
                let [qx, qy, _] = k.backproject_pixel(cq as f64, rq as f64, z);
                if (qx - px) * (qx - px) + (qy - py) * (qy - py) > r2 {
                    continue;
                }
                if rq < 0 || cq < 0 || rq >= h as isize || cq >= w as isize {
                    return 0;
                }
                if (depth.at(rq as usize, cq as usize) - z).abs() > cfg.flat_tolerance {
                    return 0;
                }
            }
        }
        1
    })
}
