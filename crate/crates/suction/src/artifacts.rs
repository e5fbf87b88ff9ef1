//! Small text and binary outputs: metrics log, dataset manifest, map dumps.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use suction_core::postprocess::ProbabilityMap;
use suction_core::synth::SynthConfig;
use suction_core::training::EpochMetrics;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// `<checkpoint>.metrics.tsv`
pub fn metrics_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".metrics.tsv");
    PathBuf::from(s)
}

/// Append-only `epoch<TAB>lr<TAB>mean_loss` lines.
pub struct MetricsLog {
    file: File,
}

impl MetricsLog {
    /// Start a fresh log, replacing any previous one.
    pub fn create(path: &Path) -> io::Result<Self> {
        File::create(path)?;
        Ok(MetricsLog { file: OpenOptions::new().append(true).open(path)? })
    }

    pub fn append(&mut self, m: &EpochMetrics) -> io::Result<()> {
        writeln!(self.file, "{}\t{}\t{}", m.epoch, m.lr, m.mean_loss)?;
        self.file.flush()
    }
}

pub fn manifest_text(seed: u64, count: usize, cfg: &SynthConfig) -> String {
    let b = &cfg.bin;
    [
        format!("seed={seed}"),
        format!("count={count}"),
        format!("objects={}", cfg.n_objects),
        format!("image_size={}", cfg.image_size),
        format!("focal={}", cfg.focal),
        format!("camera_height={}", b.camera_height),
        format!("bin_half_extent={}", b.half_extent),
        format!("wall_height={}", b.wall_height),
        format!("wall_thickness={}", b.wall_thickness),
        format!("max_top={}", b.max_top),
        format!("p_null={}", cfg.p_null),
        format!("cup_radius={}", cfg.cup_radius),
        format!("flat_tolerance={}", cfg.flat_tolerance),
        format!("max_tilt_deg={}", cfg.max_tilt_deg),
        format!("max_attempts={}", cfg.max_attempts),
    ]
    .join("\n")
        + "\n"
}

pub fn write_manifest(dir: &Path, seed: u64, count: usize, cfg: &SynthConfig) -> io::Result<()> {
    fs::write(dir.join(MANIFEST_FILE), manifest_text(seed, count, cfg))
}

/// Binary 8-bit PGM with values `round(255 * v)` clamped to `[0, 255]`.
pub fn write_pgm(path: &Path, map: &ProbabilityMap) -> io::Result<()> {
    let (h, w) = map.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    fs::write(path, out)
}

/// Row-major little-endian `f32` values.
pub fn write_raw_f32(path: &Path, map: &ProbabilityMap) -> io::Result<()> {
    let out: Vec<u8> = map.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(path, out)
}
