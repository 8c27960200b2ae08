//! Turning grid-annotated cropping data into unbounded-composition scenes.

use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::scene::{CropAnnotation, Scene, SourceKind, IOU_FLOOR, SCALE_FLOOR};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, Orientation};

/// Draw budget of the initial-view rejection sampler.
pub const MAX_DRAWS: usize = 10_000;
/// Probability that the initial view keeps the world's orientation.
pub const KEEP_ORIENTATION: f64 = 0.8;

/// Keeps crops scoring strictly above the source threshold, in input order.
pub fn filter_gt(crops: &[CropAnnotation], kind: SourceKind) -> Vec<CropAnnotation> {
    let t = kind.score_threshold();
    crops.iter().filter(|c| c.score > t).copied().collect()
}

/// Stable sort by descending score.
pub fn sort_by_score(crops: &mut [CropAnnotation]) {
    crops.sort_by(|a, b| b.score.total_cmp(&a.score));
}

/// An accepted initial view with its sampling statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitView {
    /// World-normalized.
    pub view: BBox,
    pub orientation: Orientation,
    pub draws: usize,
}

impl InitView {
    pub fn rejections(&self) -> usize {
        self.draws - 1
    }
}

/// Height range in pixels of a `ratio` (w/h) box that fits the world and
/// clears the scale floor on both axes, if any.
fn height_range(world_w: f64, world_h: f64, ratio: f64) -> Option<(f64, f64)> {
    let lo = (SCALE_FLOOR * world_h).max(SCALE_FLOOR * world_w / ratio);
    let hi = world_h.min(world_w / ratio);
    (lo <= hi).then_some((lo, hi))
}

/// Rejection-samples an initial view: orientation matches the world with
/// probability [`KEEP_ORIENTATION`], height is uniform over the admissible
/// range and the position uniform inside the world; draws are accepted once
/// the view overlaps `gt_best` (world-normalized) with IoU at least
/// [`IOU_FLOOR`].
pub fn sample_init_view(world_w: u32, world_h: u32, gt_best: &BBox, seed: u64) -> Result<InitView> {
    gt_best.validate()?;
    let (ww, wh) = (world_w as f64, world_h as f64);
    if world_w == 0 || world_h == 0 {
        return Err(Error::InvalidArgument("empty world".into()));
    }
    let world_orientation = Orientation::of_extent(ww, wh);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut scale_failures, mut iou_failures) = (0usize, 0usize);
    for draw in 1..=MAX_DRAWS {
        let orientation = if rng.gen_bool(KEEP_ORIENTATION) { world_orientation } else { world_orientation.flipped() };
        let ratio = orientation.ratio();
        let Some((lo, hi)) = height_range(ww, wh, ratio) else {
            scale_failures += 1;
            continue;
        };
        let h = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let w = h * ratio;
        let cx = if ww > w { rng.gen_range(w / 2.0..=ww - w / 2.0) } else { ww / 2.0 };
        let cy = if wh > h { rng.gen_range(h / 2.0..=wh - h / 2.0) } else { wh / 2.0 };
        let view = BBox::new(cx / ww, cy / wh, w / ww, h / wh)?;
        if iou(&view, gt_best)? >= IOU_FLOOR {
            return Ok(InitView { view, orientation, draws: draw });
        }
        iou_failures += 1;
    }
    let constraint = if scale_failures > iou_failures { "scale floor" } else { "iou with best ground truth" };
    Err(Error::Infeasible { draws: MAX_DRAWS, constraint })
}

/// Builds a scene from world-frame crops: filters by score, samples the
/// initial view against the best crop and re-expresses every crop in the
/// initial-view frame.
pub fn convert_sample(
    image: &str,
    world_w: u32,
    world_h: u32,
    world_crops: &[CropAnnotation],
    source: SourceKind,
    seed: u64,
) -> Result<(Scene, InitView)> {
    let mut crops = filter_gt(world_crops, source);
    if crops.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    sort_by_score(&mut crops);
    let init = sample_init_view(world_w, world_h, &crops[0].bbox, seed)?;
    let crops = crops
        .iter()
        .map(|c| Ok(CropAnnotation { bbox: c.bbox.to_frame(&init.view)?, score: c.score }))
        .collect::<Result<Vec<_>>>()?;
    let scene = Scene::new(image.to_string(), world_w, world_h, init.view, init.orientation, crops, source)?;
    Ok((scene, init))
}

/// Per-sample seed derived from a batch seed.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

#[derive(Deserialize)]
struct RawCrop {
    #[serde(rename = "box")]
    corners: [f64; 4],
    score: f64,
}

#[derive(Deserialize)]
struct RawAnnotation {
    image: String,
    crops: Vec<RawCrop>,
}

/// Outcome of converting an annotated directory.
#[derive(Debug, Default)]
pub struct BuildReport {
    pub scenes: Vec<Scene>,
    /// `(image, reason)` for every skipped source image.
    pub skipped: Vec<(String, String)>,
}

/// Converts `<dir>/annotations.jsonl`, whose records carry an image path
/// relative to `dir` and pixel corner-form crops with scores.
pub fn build_dataset(dir: impl AsRef<Path>, kind: SourceKind, seed: u64) -> Result<BuildReport> {
    let dir = dir.as_ref();
    let file = std::io::BufReader::new(std::fs::File::open(dir.join("annotations.jsonl"))?);
    let mut report = BuildReport::default();
    for (index, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawAnnotation = serde_json::from_str(&line)?;
        let path = dir.join(&raw.image);
        if !path.exists() {
            return Err(Error::MissingImage(path));
        }
        let (w, h) = image::image_dimensions(&path)?;
        let crops = raw
            .crops
            .iter()
            .map(|c| {
                let [x1, y1, x2, y2] = c.corners;
                let bbox = BBox::from_corners(x1 / w as f64, y1 / h as f64, x2 / w as f64, y2 / h as f64)?;
                Ok(CropAnnotation { bbox, score: c.score })
            })
            .collect::<Result<Vec<_>>>()?;
        match convert_sample(&raw.image, w, h, &crops, kind, sample_seed(seed, index)) {
            Ok((scene, _)) => report.scenes.push(scene),
            Err(e @ (Error::Infeasible { .. } | Error::NoGroundTruth)) => {
                log::warn!("skipping {}: {e}", raw.image);
                report.skipped.push((raw.image, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}
