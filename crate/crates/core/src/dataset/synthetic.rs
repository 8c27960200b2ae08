//! Procedural scenes with a known best composition.
//!
//! A world holds one salient object on a smooth background. The oracle crop is
//! the 4:3 box three object-heights tall that puts the object's center on the
//! rule-of-thirds point nearest to it.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forge::convert_sample;
use super::scene::{CropAnnotation, Scene, SourceKind};
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const WORLD_SIZE: u32 = 512;

/// Penalty weights of [`oracle_score`] for thirds placement, scale and
/// truncation errors, each error normalized to `[0, 1]`.
pub const K_THIRDS: f64 = 3.0;
pub const K_SCALE: f64 = 1.0;
pub const K_TRUNC: f64 = 2.0;
/// Ground-truth crops kept per scene.
pub const MAX_CROPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Ellipse,
    Rectangle,
}

/// Everything needed to score crops of a synthetic world. World-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub image: String,
    pub shape: Shape,
    /// Bounding box of the object.
    pub object: BBox,
    /// Crop-relative thirds point the object center should sit on.
    pub target: [f64; 2],
    pub crop: BBox,
}

impl Oracle {
    /// Thirds point of the world nearest the object; ties go to 1/3.
    pub fn thirds_target(object: &BBox) -> [f64; 2] {
        let pick = |c: f64| if c <= 0.5 { 1.0 / 3.0 } else { 2.0 / 3.0 };
        [pick(object.x), pick(object.y)]
    }

    /// Minimal 4:3 crop (square world) placing the object center at `target`
    /// with the object spanning a third of the crop height.
    pub fn oracle_crop(object: &BBox) -> Result<BBox> {
        let [tx, ty] = Self::thirds_target(object);
        let h = 3.0 * object.h;
        let w = h * 4.0 / 3.0;
        BBox::new(object.x - tx * w + w / 2.0, object.y - ty * h + h / 2.0, w, h)
    }
}

/// Fraction of `object`'s area outside `view`.
fn truncation(object: &BBox, view: &BBox) -> f64 {
    let (o, v) = (object.corners(), view.corners());
    let iw = (o.x2.min(v.x2) - o.x1.max(v.x1)).max(0.0);
    let ih = (o.y2.min(v.y2) - o.y1.max(v.y1)).max(0.0);
    (1.0 - iw * ih / object.area()).max(0.0)
}

/// Composition quality of a world-frame box in `[0, 5]`; 5 exactly at the
/// oracle crop.
pub fn oracle_score(oracle: &Oracle, b: &BBox) -> Result<f64> {
    b.validate()?;
    let c = b.corners();
    let px = (oracle.object.x - c.x1) / b.w;
    let py = (oracle.object.y - c.y1) / b.h;
    let thirds = (3.0 * ((px - oracle.target[0]).powi(2) + (py - oracle.target[1]).powi(2)).sqrt()).min(1.0);
    let scale = ((b.h / oracle.crop.h).ln().abs() + (b.w / oracle.crop.w).ln().abs()).min(1.0);
    let trunc = truncation(&oracle.object, b);
    Ok((5.0 - K_THIRDS * thirds - K_SCALE * scale - K_TRUNC * trunc).clamp(0.0, 5.0))
}

/// Dense candidate crops inside the unit world: several aspect ratios and
/// heights on a regular grid of positions.
pub fn grid_anchors() -> Vec<BBox> {
    let mut out = Vec::new();
    for ratio in [1.0, 4.0 / 3.0, 1.5, 16.0 / 9.0] {
        for hi in 0..=10 {
            let h = 0.45 + 0.05 * hi as f64;
            let w = h * ratio;
            if w > 1.0 {
                continue;
            }
            let steps = 16;
            for i in 0..=steps {
                for j in 0..=steps {
                    let x = w / 2.0 + (1.0 - w) * j as f64 / steps as f64;
                    let y = h / 2.0 + (1.0 - h) * i as f64 / steps as f64;
                    out.push(BBox { x, y, w, h });
                }
            }
        }
    }
    out
}

/// Scored ground-truth crops: the oracle crop first, then the best grid
/// anchors scoring above the synthetic threshold.
pub fn annotate(oracle: &Oracle) -> Result<Vec<CropAnnotation>> {
    let threshold = SourceKind::Synthetic.score_threshold();
    let mut scored: Vec<CropAnnotation> = grid_anchors()
        .into_iter()
        .map(|b| Ok(CropAnnotation { bbox: b, score: oracle_score(oracle, &b)? }))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|c| c.score > threshold && c.score < 5.0)
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut crops = vec![CropAnnotation { bbox: oracle.crop, score: oracle_score(oracle, &oracle.crop)? }];
    crops.extend(scored.into_iter().take(MAX_CROPS - 1));
    Ok(crops)
}

fn random_color(rng: &mut impl Rng, lo: u8, hi: u8) -> [f64; 3] {
    [0, 1, 2].map(|_| rng.gen_range(lo..=hi) as f64)
}

fn render(rng: &mut impl Rng, shape: Shape, object: &BBox) -> RgbImage {
    let c0 = random_color(rng, 40, 200);
    let c1 = random_color(rng, 40, 200);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    // Object color far from both background endpoints.
    let fg = loop {
        let c = random_color(rng, 0, 255);
        let dist = |a: &[f64; 3]| a.iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        if dist(&c0) > 120.0 && dist(&c1) > 120.0 {
            break c;
        }
    };
    let n = WORLD_SIZE as f64;
    let o = object.corners();
    RgbImage::from_fn(WORLD_SIZE, WORLD_SIZE, |x, y| {
        let (u, v) = ((x as f64 + 0.5) / n, (y as f64 + 0.5) / n);
        let inside = match shape {
            Shape::Rectangle => u >= o.x1 && u <= o.x2 && v >= o.y1 && v <= o.y2,
            Shape::Ellipse => {
                let (eu, ev) = ((u - object.x) / (object.w / 2.0), (v - object.y) / (object.h / 2.0));
                eu * eu + ev * ev <= 1.0
            }
        };
        let color = if inside {
            fg
        } else {
            let t = (((u - 0.5) * dx + (v - 0.5) * dy) / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
            [0, 1, 2].map(|k| c0[k] + (c1[k] - c0[k]) * t)
        };
        Rgb(color.map(|c| c.round() as u8))
    })
}

/// A rendered world, its oracle and the derived scene.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub image: RgbImage,
    pub oracle: Oracle,
    pub scene: Scene,
}

/// Deterministically generates one synthetic scene, redrawing object
/// placements whose oracle crop leaves the world or admits no initial view.
pub fn make_synthetic_scene(seed: u64) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let name = format!("images/{seed:010}.png");
    for _ in 0..1000 {
        let shape = if rng.gen_bool(0.5) { Shape::Ellipse } else { Shape::Rectangle };
        let h: f64 = rng.gen_range(0.2..=0.25);
        let w = h * rng.gen_range(0.6..=1.6);
        let object = BBox::new(rng.gen_range(0.15..=0.85), rng.gen_range(0.15..=0.85), w, h)?;
        let crop = Oracle::oracle_crop(&object)?;
        if !crop.inside_unit(0.0) {
            continue;
        }
        let oracle = Oracle { image: name.clone(), shape, object, target: Oracle::thirds_target(&object), crop };
        let crops = annotate(&oracle)?;
        let init_seed = rng.gen();
        match convert_sample(&name, WORLD_SIZE, WORLD_SIZE, &crops, SourceKind::Synthetic, init_seed) {
            Ok((scene, _)) => {
                let image = render(&mut rng, shape, &object);
                return Ok(SyntheticScene { image, oracle, scene });
            }
            Err(Error::Infeasible { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Infeasible { draws: 1000, constraint: "synthetic placement" })
}
