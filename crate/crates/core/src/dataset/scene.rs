//! Scene records and their JSONL persistence.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, Orientation};

/// Lower bound on initial-view extent relative to the full image, per axis.
pub const SCALE_FLOOR: f64 = 0.7;
/// Minimum IoU between the initial view and the best ground-truth crop.
pub const IOU_FLOOR: f64 = 0.7;
/// Aspect-ratio tolerance of the initial view, in pixels.
pub const RATIO_TOLERANCE_PX: f64 = 1.0;

/// Where a scene's annotations came from; fixes the score threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceKind {
    #[serde(rename = "gaicd-style")]
    Gaicd,
    #[serde(rename = "cpc-style")]
    Cpc,
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl SourceKind {
    /// Crops must score strictly above this to count as ground truth.
    pub fn score_threshold(self) -> f64 {
        match self {
            SourceKind::Gaicd | SourceKind::Synthetic => 4.0,
            SourceKind::Cpc => 2.0,
        }
    }
}

impl std::str::FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaicd" | "gaicd-style" => Ok(SourceKind::Gaicd),
            "cpc" | "cpc-style" => Ok(SourceKind::Cpc),
            "synthetic" => Ok(SourceKind::Synthetic),
            other => Err(Error::UnknownSourceKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropAnnotation {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

/// One unbounded-composition sample.
///
/// `init_view` is kept world-normalized in memory; the JSONL form stores it in
/// absolute pixels. `crops` are in the initial-view frame, sorted by
/// descending score.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub init_view: BBox,
    pub orientation: Orientation,
    pub crops: Vec<CropAnnotation>,
    pub source: SourceKind,
}

#[derive(Serialize, Deserialize)]
struct SceneRecord {
    image: String,
    width: u32,
    height: u32,
    init_view: [f64; 4],
    orientation: Orientation,
    crops: Vec<CropAnnotation>,
    source: SourceKind,
}

impl Scene {
    pub fn new(
        image: String,
        width: u32,
        height: u32,
        init_view: BBox,
        orientation: Orientation,
        crops: Vec<CropAnnotation>,
        source: SourceKind,
    ) -> Result<Self> {
        let scene = Scene { image, width, height, init_view, orientation, crops, source };
        scene.validate()?;
        Ok(scene)
    }

    /// Initial view in absolute pixels (center form).
    pub fn init_view_px(&self) -> [f64; 4] {
        let (w, h) = (self.width as f64, self.height as f64);
        [self.init_view.x * w, self.init_view.y * h, self.init_view.w * w, self.init_view.h * h]
    }

    /// Width / height of the initial view in pixels.
    pub fn init_aspect(&self) -> f64 {
        let [_, _, w, h] = self.init_view_px();
        w / h
    }

    /// Best ground-truth crop (first among equal scores), initial-view frame.
    pub fn best_crop(&self) -> Option<&CropAnnotation> {
        let mut best: Option<&CropAnnotation> = None;
        for c in &self.crops {
            if best.is_none_or(|b| c.score > b.score) {
                best = Some(c);
            }
        }
        best
    }

    /// Ground-truth crops re-expressed in the world frame.
    pub fn world_crops(&self) -> Result<Vec<CropAnnotation>> {
        self.crops
            .iter()
            .map(|c| Ok(CropAnnotation { bbox: c.bbox.from_frame(&self.init_view)?, score: c.score }))
            .collect()
    }

    /// Checks the sampling constraints on the initial view and the crop scores.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidScene(format!("{}: {m}", self.image)));
        if self.width == 0 || self.height == 0 {
            return fail("empty image".into());
        }
        self.init_view.validate()?;
        let [_, _, vw, vh] = self.init_view_px();
        let (w, h) = (self.width as f64, self.height as f64);
        const EPS: f64 = 1e-6;
        if vw < SCALE_FLOOR * w - EPS || vh < SCALE_FLOOR * h - EPS {
            return fail(format!("initial view {vw:.1}x{vh:.1} below scale floor of {w}x{h}"));
        }
        if !self.init_view.inside_unit(1e-9) {
            return fail("initial view leaves the image".into());
        }
        let ratio_px_err = match self.orientation {
            Orientation::Landscape => (vw - vh * 4.0 / 3.0).abs(),
            Orientation::Portrait => (vh - vw * 4.0 / 3.0).abs(),
        };
        if ratio_px_err > RATIO_TOLERANCE_PX {
            return fail(format!("initial view ratio off by {ratio_px_err:.2} px"));
        }
        let threshold = self.source.score_threshold();
        for c in &self.crops {
            c.bbox.validate()?;
            if !c.score.is_finite() || c.score <= threshold {
                return fail(format!("crop score {} not above {threshold}", c.score));
            }
        }
        let best = match self.best_crop() {
            Some(b) => b,
            None => return fail("no ground-truth crops".into()),
        };
        // IoU is invariant under the per-axis affine map into the init frame.
        let overlap = iou(&BBox::UNIT, &best.bbox)?;
        if overlap < IOU_FLOOR - 1e-9 {
            return fail(format!("IoU(init view, best crop) = {overlap:.3} < {IOU_FLOOR}"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let rec = SceneRecord {
            image: self.image.clone(),
            width: self.width,
            height: self.height,
            init_view: self.init_view_px(),
            orientation: self.orientation,
            crops: self.crops.clone(),
            source: self.source,
        };
        Ok(serde_json::to_string(&rec)?)
    }

    /// Parses and re-validates one JSONL record.
    pub fn from_json(line: &str) -> Result<Self> {
        let rec: SceneRecord = serde_json::from_str(line)?;
        let (w, h) = (rec.width as f64, rec.height as f64);
        let [x, y, vw, vh] = rec.init_view;
        let init_view = BBox::new(x / w, y / h, vw / w, vh / h)?;
        Scene::new(rec.image, rec.width, rec.height, init_view, rec.orientation, rec.crops, rec.source)
    }
}

pub fn write_scenes(path: impl AsRef<Path>, scenes: &[Scene]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in scenes {
        writeln!(out, "{}", s.to_json()?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_scenes(path: impl AsRef<Path>) -> Result<Vec<Scene>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut scenes = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        scenes.push(Scene::from_json(&line)?);
    }
    Ok(scenes)
}
