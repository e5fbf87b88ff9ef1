//! File formats and the command-line front end around `suction-core`.

pub mod artifacts;
pub mod checkpoint;
pub mod cli;
pub mod dataset_io;

use std::path::Path;

use anyhow::Context;
use suction_core::synth::{generate_scene, scene_seed, SynthConfig};

/// Render `count` scenes into `out` plus a manifest. Returns how many
/// objects were skipped for lack of room.
pub fn generate_dataset(out: &Path, count: usize, seed: u64, cfg: &SynthConfig) -> anyhow::Result<usize> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut skipped = 0;
    for i in 0..count {
        let r = generate_scene(scene_seed(seed, i as u64), cfg)?;
        skipped += r.scene.skipped;
        dataset_io::save_scene(&out.join(dataset_io::scene_dir_name(i)), &r.sample)?;
    }
    artifacts::write_manifest(out, seed, count, cfg).with_context(|| format!("writing manifest in {}", out.display()))?;
    Ok(skipped)
}
