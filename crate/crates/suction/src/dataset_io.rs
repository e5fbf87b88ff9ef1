//! On-disk scene layout: `scene_<id>/{color.png, depth.png, mask.png, intrinsics.txt}`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use suction_core::dataset::SceneSample;
use suction_core::geometry::{CameraIntrinsics, DepthMap, RgbImage};
use suction_core::Grid;

pub const COLOR_FILE: &str = "color.png";
pub const DEPTH_FILE: &str = "depth.png";
pub const MASK_FILE: &str = "mask.png";
pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const SCENE_PREFIX: &str = "scene_";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },
    #[error("{}: {source}", path.display())]
    Invalid { path: PathBuf, source: suction_core::Error },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    fn format(path: &Path, detail: impl Into<String>) -> Self {
        IoError::Format { path: path.to_path_buf(), detail: detail.into() }
    }

    pub fn path(&self) -> &Path {
        match self {
            IoError::Io { path, .. } | IoError::Format { path, .. } | IoError::Invalid { path, .. } => path,
        }
    }
}

pub type IoResult<T> = Result<T, IoError>;

struct Decoded {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: Vec<u8>,
}

fn decode_png(path: &Path) -> IoResult<Decoded> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| IoError::format(path, e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| IoError::format(path, "image too large"))?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data).map_err(|e| IoError::format(path, e.to_string()))?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

fn encode_png(path: &Path, w: usize, h: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> IoResult<()> {
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let fail = |e: png::EncodingError| IoError::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(data).map_err(fail)?;
    writer.finish().map_err(fail)
}

fn expect_kind(path: &Path, d: &Decoded, color: png::ColorType, depth: png::BitDepth) -> IoResult<()> {
    if d.color != color || d.depth != depth {
        return Err(IoError::format(
            path,
            format!("expected {color:?} {depth:?}, found {:?} {:?}", d.color, d.depth),
        ));
    }
    Ok(())
}

pub fn read_color(path: &Path) -> IoResult<RgbImage> {
    let d = decode_png(path)?;
    expect_kind(path, &d, png::ColorType::Rgb, png::BitDepth::Eight)?;
    let px = d.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
    Grid::from_vec(d.height, d.width, px).map_err(|e| IoError::Invalid { path: path.into(), source: e })
}

/// 16-bit millimeters to meters; 0 stays 0 (no reading).
pub fn read_depth(path: &Path) -> IoResult<DepthMap> {
    let d = decode_png(path)?;
    expect_kind(path, &d, png::ColorType::Grayscale, png::BitDepth::Sixteen)?;
    let px = d.data.chunks_exact(2).map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 / 1000.0).collect();
    Grid::from_vec(d.height, d.width, px).map_err(|e| IoError::Invalid { path: path.into(), source: e })
}

/// 255 becomes 1, 0 stays 0; anything else is an error.
pub fn read_mask(path: &Path) -> IoResult<Grid<u8>> {
    let d = decode_png(path)?;
    expect_kind(path, &d, png::ColorType::Grayscale, png::BitDepth::Eight)?;
    let mut px = Vec::with_capacity(d.data.len());
    for (i, &v) in d.data.iter().enumerate() {
        px.push(match v {
            0 => 0,
            255 => 1,
            other => {
                return Err(IoError::format(
                    path,
                    format!("non-binary mask value {other} at row {}, column {}", i / d.width, i % d.width),
                ))
            }
        });
    }
    Grid::from_vec(d.height, d.width, px).map_err(|e| IoError::Invalid { path: path.into(), source: e })
}

/// One line `fx fy cx cy`.
pub fn read_intrinsics(path: &Path) -> IoResult<CameraIntrinsics> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| IoError::format(path, format!("`{t}`: {e}"))))
        .collect::<IoResult<_>>()?;
    let [fx, fy, cx, cy] = vals[..] else {
        return Err(IoError::format(path, format!("expected 4 values `fx fy cx cy`, found {}", vals.len())));
    };
    CameraIntrinsics::new(fx, fy, cx, cy).map_err(|e| IoError::Invalid { path: path.into(), source: e })
}

pub fn write_color(path: &Path, img: &RgbImage) -> IoResult<()> {
    let (h, w) = img.dims();
    let data: Vec<u8> = img.iter().flatten().copied().collect();
    encode_png(path, w, h, png::ColorType::Rgb, png::BitDepth::Eight, &data)
}

/// Meters to rounded millimeters, saturating at `u16::MAX`.
pub fn write_depth(path: &Path, depth: &DepthMap) -> IoResult<()> {
    let (h, w) = depth.dims();
    let data: Vec<u8> = depth
        .iter()
        .flat_map(|&z| ((z * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16).to_be_bytes())
        .collect();
    encode_png(path, w, h, png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
}

pub fn write_mask(path: &Path, mask: &Grid<u8>) -> IoResult<()> {
    let (h, w) = mask.dims();
    let data: Vec<u8> = mask.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    encode_png(path, w, h, png::ColorType::Grayscale, png::BitDepth::Eight, &data)
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> IoResult<()> {
    fs::write(path, format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy)).map_err(|e| IoError::io(path, e))
}

pub fn load_scene(dir: &Path) -> IoResult<SceneSample> {
    let rgb = read_color(&dir.join(COLOR_FILE))?;
    let depth = read_depth(&dir.join(DEPTH_FILE))?;
    let mask = read_mask(&dir.join(MASK_FILE))?;
    let k = read_intrinsics(&dir.join(INTRINSICS_FILE))?;
    for (name, dims) in [(DEPTH_FILE, depth.dims()), (MASK_FILE, mask.dims())] {
        if dims != rgb.dims() {
            return Err(IoError::format(
                &dir.join(name),
                format!("{}x{} image does not match {}x{} color image", dims.0, dims.1, rgb.height(), rgb.width()),
            ));
        }
    }
    SceneSample::new(rgb, depth, mask, k).map_err(|e| IoError::Invalid { path: dir.into(), source: e })
}

pub fn save_scene(dir: &Path, s: &SceneSample) -> IoResult<()> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    write_color(&dir.join(COLOR_FILE), &s.rgb)?;
    write_depth(&dir.join(DEPTH_FILE), &s.depth)?;
    write_mask(&dir.join(MASK_FILE), &s.mask)?;
    write_intrinsics(&dir.join(INTRINSICS_FILE), &s.intrinsics)
}

/// Scene directories under `root`, in lexicographic order.
pub fn scene_dirs(root: &Path) -> IoResult<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| IoError::io(root, e))? {
        let entry = entry.map_err(|e| IoError::io(root, e))?;
        let is_scene = entry.file_name().to_str().is_some_and(|n| n.starts_with(SCENE_PREFIX));
        if is_scene && entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Load every scene. All failures are collected so each bad sample can be
/// reported; the error list is non-empty exactly when loading failed.
pub fn load_dataset(root: &Path) -> Result<Vec<(PathBuf, SceneSample)>, Vec<IoError>> {
    let dirs = scene_dirs(root).map_err(|e| vec![e])?;
    let mut ok = Vec::with_capacity(dirs.len());
    let mut errors = Vec::new();
    for d in dirs {
        match load_scene(&d) {
            Ok(s) => ok.push((d, s)),
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        Ok(ok)
    } else {
        Err(errors)
    }
}

pub fn scene_dir_name(index: usize) -> String {
    format!("{SCENE_PREFIX}{index:05}")
}
