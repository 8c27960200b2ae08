//! Training samples: rasters cut from world images plus their targets.

use std::path::Path;

use image::RgbImage;

use super::teacher::{canvas_layout, CanvasLayout};
use crate::dataset::{image_path, Scene};
use crate::error::Result;
use crate::geometry::BBox;
use crate::imaging::{load_rgb, sample_region, Planar};
use crate::model::ModelConfig;

/// One scene ready for training.
///
/// The teacher canvas is stored quantized to 8 bits; the student's input is
/// its central window, so both views share one resampling of the world.
#[derive(Debug, Clone)]
pub struct Sample {
    pub canvas: RgbImage,
    pub layout: CanvasLayout,
    /// Ground-truth crops in the initial-view frame, best first.
    pub gts: Vec<BBox>,
    pub scores: Vec<f64>,
}

impl Sample {
    pub fn new(cfg: &ModelConfig, scene: &Scene, world: &RgbImage) -> Result<Self> {
        let layout = canvas_layout(cfg, &scene.init_view)?;
        let canvas = sample_region(world, &layout.region, layout.width, layout.height).to_rgb();
        let mut crops = scene.crops.clone();
        crate::dataset::forge::sort_by_score(&mut crops);
        Ok(Sample {
            canvas,
            layout,
            gts: crops.iter().map(|c| c.bbox).collect(),
            scores: crops.iter().map(|c| c.score).collect(),
        })
    }

    pub fn canvas_planar(&self) -> Planar {
        Planar::from_rgb(&self.canvas)
    }

    /// The student's view of the scene at the model resolution.
    pub fn input(&self, cfg: &ModelConfig) -> Result<Planar> {
        let (x0, y0) = self.layout.view_offset;
        self.canvas_planar().crop(x0, y0, cfg.input_w, cfg.input_h)
    }
}

/// Loads every scene's world image (paths relative to `data_file`).
pub fn load_samples(cfg: &ModelConfig, data_file: &Path, scenes: &[Scene]) -> Result<Vec<Sample>> {
    scenes
        .iter()
        .map(|s| Sample::new(cfg, s, &load_rgb(image_path(data_file, s))?))
        .collect()
}

/// Model input for a world-normalized viewport of `world`.
pub fn render_view(cfg: &ModelConfig, world: &RgbImage, view: &BBox) -> Planar {
    sample_region(world, view, cfg.input_w, cfg.input_h)
}
