//! Unbounded-composition scenes: construction from annotated crops,
//! procedural generation and JSONL persistence.

pub mod forge;
pub mod scene;
pub mod synthetic;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

pub use forge::{build_dataset, convert_sample, filter_gt, sample_init_view, sample_seed, BuildReport, InitView};
pub use scene::{read_scenes, write_scenes, CropAnnotation, Scene, SourceKind};
pub use synthetic::{make_synthetic_scene, oracle_score, Oracle, SyntheticScene};

use crate::error::Result;

pub const SCENES_FILE: &str = "scenes.jsonl";
pub const ORACLE_FILE: &str = "oracle.jsonl";

/// Generates `count` synthetic scenes into `dir` (`images/`, `scenes.jsonl`,
/// `oracle.jsonl`). Scene `i` uses seed `sample_seed(seed, i)`.
pub fn write_synthetic(dir: impl AsRef<Path>, count: usize, seed: u64) -> Result<Vec<SyntheticScene>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("images"))?;
    let mut out = Vec::with_capacity(count);
    let mut oracle_file = std::io::BufWriter::new(std::fs::File::create(dir.join(ORACLE_FILE))?);
    for i in 0..count {
        let s = make_synthetic_scene(sample_seed(seed, i))?;
        s.image.save(dir.join(&s.scene.image))?;
        writeln!(oracle_file, "{}", serde_json::to_string(&s.oracle)?)?;
        out.push(s);
    }
    oracle_file.flush()?;
    let scenes: Vec<Scene> = out.iter().map(|s| s.scene.clone()).collect();
    write_scenes(dir.join(SCENES_FILE), &scenes)?;
    Ok(out)
}

pub fn read_oracles(path: impl AsRef<Path>) -> Result<Vec<Oracle>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Resolves a scene's image path against the directory of its JSONL file.
pub fn image_path(data_file: &Path, scene: &Scene) -> PathBuf {
    let base = data_file.parent().unwrap_or_else(|| Path::new("."));
    base.join(&scene.image)
}
