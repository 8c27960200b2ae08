//! Camera-operation recommendations and multi-step adjustment sessions.

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clamp_to_world, derive_view_in_frame, iou, BBox, Orientation};
use crate::imaging::{batch_tensor, sample_region, Planar};
use crate::model::{PredictionSet, UnicModel};

/// Minimum center offset (initial-view units) that triggers a move.
pub const MOVE_THRESHOLD: f64 = 0.05;
/// Minimum relative width change that triggers a zoom.
pub const ZOOM_THRESHOLD: f64 = 0.05;
pub const TAU_CONV: f64 = 0.95;
pub const MAX_STEPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Operation {
    MoveLeft { amount: f64 },
    MoveRight { amount: f64 },
    MoveUp { amount: f64 },
    MoveDown { amount: f64 },
    /// `factor` is the magnification `1 / w`; above 1.
    ZoomIn { factor: f64 },
    /// `factor` is the magnification `1 / w`; below 1, so the field of view
    /// widens by `1 / factor`.
    ZoomOut { factor: f64 },
}

/// Operations that take the identity view `[0.5, 0.5, 1, 1]` to `view`.
pub fn derive_ops(view: &BBox) -> Vec<Operation> {
    let mut ops = Vec::new();
    let dx = view.x - 0.5;
    if dx.abs() > MOVE_THRESHOLD {
        ops.push(if dx < 0.0 { Operation::MoveLeft { amount: -dx } } else { Operation::MoveRight { amount: dx } });
    }
    let dy = view.y - 0.5;
    if dy.abs() > MOVE_THRESHOLD {
        ops.push(if dy < 0.0 { Operation::MoveUp { amount: -dy } } else { Operation::MoveDown { amount: dy } });
    }
    if (view.w - 1.0).abs() > ZOOM_THRESHOLD {
        let factor = 1.0 / view.w;
        ops.push(if view.w < 1.0 { Operation::ZoomIn { factor } } else { Operation::ZoomOut { factor } });
    }
    ops
}

/// Applies `ops` to the identity view (the inverse of [`derive_ops`] up to
/// the thresholds). Height follows width.
pub fn apply_ops(ops: &[Operation]) -> BBox {
    let mut v = BBox::UNIT;
    for op in ops {
        match *op {
            Operation::MoveLeft { amount } => v.x -= amount,
            Operation::MoveRight { amount } => v.x += amount,
            Operation::MoveUp { amount } => v.y -= amount,
            Operation::MoveDown { amount } => v.y += amount,
            Operation::ZoomIn { factor } | Operation::ZoomOut { factor } => {
                v.w = 1.0 / factor;
                v.h = 1.0 / factor;
            }
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub operations: Vec<Operation>,
    /// Predicted camera view, initial-view frame.
    pub view: BBox,
    /// Predicted composition crop, initial-view frame.
    pub crop: BBox,
    pub confidence: f64,
    pub converged: bool,
}

impl Recommendation {
    /// Builds the recommendation for a top crop in a frame of pixel aspect
    /// `frame_aspect`.
    pub fn from_crop(crop: BBox, confidence: f64, orientation: Orientation, frame_aspect: f64, tau_conv: f64) -> Result<Self> {
        let view = derive_view_in_frame(&crop, orientation, frame_aspect)?;
        let converged = iou(&view, &BBox::UNIT)? >= tau_conv;
        let operations = if converged { Vec::new() } else { derive_ops(&view) };
        Ok(Recommendation { operations, view, crop, confidence, converged })
    }
}

/// Source of ranked crops for a rendered viewport.
pub trait Proposer: Send + Sync {
    /// Model input size `(width, height)`.
    fn input_size(&self) -> (usize, usize);
    fn propose(&self, input: &Planar) -> Result<PredictionSet>;
}

impl Proposer for UnicModel {
    fn input_size(&self) -> (usize, usize) {
        (self.config().input_w, self.config().input_h)
    }

    fn propose(&self, input: &Planar) -> Result<PredictionSet> {
        let x = batch_tensor(std::slice::from_ref(input), self.dtype(), self.device())?;
        self.predict(&x)?.pop().ok_or_else(|| Error::Shape("empty prediction batch".into()))
    }
}

/// Pixel aspect of a world-normalized viewport.
pub fn viewport_aspect(viewport: &BBox, world_w: u32, world_h: u32) -> f64 {
    viewport.w * world_w as f64 / (viewport.h * world_h as f64)
}

/// Largest centered viewport of camera ratio inside a `world_w x world_h`
/// world, world-normalized.
pub fn fit_viewport(world_w: u32, world_h: u32, orientation: Orientation) -> Result<BBox> {
    if world_w == 0 || world_h == 0 {
        return Err(Error::InvalidArgument("empty world".into()));
    }
    let (ww, wh) = (world_w as f64, world_h as f64);
    let r = orientation.ratio();
    let (w, h) = if ww / wh >= r { (wh * r, wh) } else { (ww, ww / r) };
    BBox::new(0.5, 0.5, w / ww, h / wh)
}

/// Recommendation-producing front end over a [`Proposer`].
pub struct Advisor<P> {
    pub proposer: P,
    pub tau_conv: f64,
    pub max_steps: usize,
}

impl<P: Proposer> Advisor<P> {
    pub fn new(proposer: P) -> Self {
        Advisor { proposer, tau_conv: TAU_CONV, max_steps: MAX_STEPS }
    }

    /// Recommendation for an already rendered initial view.
    pub fn recommend_input(&self, input: &Planar, orientation: Orientation, frame_aspect: f64) -> Result<Recommendation> {
        let preds = self.proposer.propose(input)?;
        let (crop, confidence) = preds.top().ok_or_else(|| Error::Shape("empty prediction set".into()))?;
        Recommendation::from_crop(crop, confidence, orientation, frame_aspect, self.tau_conv)
    }

    /// Recommendation for `viewport` (world-normalized) of `world`.
    pub fn recommend(&self, world: &RgbImage, viewport: &BBox, orientation: Orientation) -> Result<Recommendation> {
        viewport.validate()?;
        let (w, h) = self.proposer.input_size();
        let input = sample_region(world, viewport, w, h);
        self.recommend_input(&input, orientation, viewport_aspect(viewport, world.width(), world.height()))
    }

    /// One adjustment: recommend at `viewport`, map the view into the world
    /// and clamp it. Converged recommendations keep the viewport.
    pub fn step(&self, session: &mut Session, world: &RgbImage, viewport: &BBox, orientation: Orientation) -> Result<TrajectoryStep> {
        if session.trajectory.len() >= self.max_steps {
            return Err(Error::MaxSteps(self.max_steps));
        }
        if !viewport.inside_unit(1e-9) {
            return Err(Error::InvalidArgument(format!("viewport {viewport:?} leaves the world")));
        }
        let recommendation = self.recommend(world, viewport, orientation)?;
        let next = if recommendation.converged {
            *viewport
        } else {
            clamp_to_world(&recommendation.view.from_frame(viewport)?)
        };
        let step = TrajectoryStep {
            index: session.trajectory.len(),
            viewport: *viewport,
            orientation,
            iou_to_previous: iou(&next, viewport)?,
            next_viewport: next,
            recommendation,
        };
        session.trajectory.push(step.clone());
        Ok(step)
    }

    /// Steps from `viewport` until convergence or `max_steps`.
    pub fn run_multistep(&self, session: &mut Session, world: &RgbImage, viewport: &BBox, orientation: Orientation) -> Result<Vec<TrajectoryStep>> {
        let mut current = *viewport;
        let mut out = Vec::new();
        while session.trajectory.len() < self.max_steps {
            let step = self.step(session, world, &current, orientation)?;
            current = step.next_viewport;
            let done = step.recommendation.converged;
            out.push(step);
            if done {
                break;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub index: usize,
    /// World-normalized viewport the recommendation was made at.
    pub viewport: BBox,
    pub orientation: Orientation,
    pub recommendation: Recommendation,
    /// Clamped world-normalized viewport to adopt next.
    pub next_viewport: BBox,
    pub iou_to_previous: f64,
}

/// Multi-step state for one world image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub world_w: u32,
    pub world_h: u32,
    pub trajectory: Vec<TrajectoryStep>,
}

const SESSION_FILE: &str = "session.json";
const WORLD_FILE: &str = "world.png";

impl Session {
    pub fn new(id: impl Into<String>, world: &RgbImage) -> Self {
        Session { id: id.into(), world_w: world.width(), world_h: world.height(), trajectory: Vec::new() }
    }

    pub fn steps(&self) -> usize {
        self.trajectory.len()
    }

    /// Writes the session record and its world image into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, world: &RgbImage) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        world.save(dir.join(WORLD_FILE))?;
        std::fs::write(dir.join(SESSION_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Session, RgbImage)> {
        let dir = dir.as_ref();
        let session: Session = serde_json::from_str(&std::fs::read_to_string(dir.join(SESSION_FILE))?)?;
        let world = crate::imaging::load_rgb(dir.join(WORLD_FILE))?;
        if (world.width(), world.height()) != (session.world_w, session.world_h) {
            return Err(Error::InvalidArgument("session world size does not match its image".into()));
        }
        Ok((session, world))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn fit_viewport_examples() {
        let v = fit_viewport(1600, 900, Orientation::Landscape).unwrap();
        assert!((v.w * 1600.0 - 1200.0).abs() < 1e-9 && (v.h - 1.0).abs() < 1e-12);
        let v = fit_viewport(512, 512, Orientation::Landscape).unwrap();
        assert_eq!((v.w, v.h), (1.0, 0.75));
        let v = fit_viewport(512, 512, Orientation::Portrait).unwrap();
        assert_eq!((v.w, v.h), (0.75, 1.0));
    }

    #[test]
    fn ops_examples() {
        assert!(derive_ops(&BBox::UNIT).is_empty());
        assert_eq!(derive_ops(&b(0.3, 0.5, 1.0, 0.75)), vec![Operation::MoveLeft { amount: 0.2 }]);
        match derive_ops(&b(0.5, 0.5, 1.4, 1.05)).as_slice() {
            [Operation::ZoomOut { factor }] => assert!((1.0 / factor - 1.4).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ops_reconstruct_the_view() {
        for v in [b(0.3, 0.7, 1.2, 1.2), b(0.52, 0.45, 0.8, 0.8), b(0.9, 0.1, 1.03, 1.03)] {
            let r = apply_ops(&derive_ops(&v));
            assert!((r.x - v.x).abs() <= MOVE_THRESHOLD);
            assert!((r.y - v.y).abs() <= MOVE_THRESHOLD);
            assert!((r.w - v.w).abs() <= ZOOM_THRESHOLD);
        }
    }

    struct Fixed(BBox);

    impl Proposer for Fixed {
        fn input_size(&self) -> (usize, usize) {
            (8, 6)
        }

        fn propose(&self, _: &Planar) -> Result<PredictionSet> {
            Ok(PredictionSet { boxes: vec![self.0], confidences: vec![0.9] })
        }
    }

    fn world() -> RgbImage {
        RgbImage::from_pixel(400, 300, image::Rgb([10, 20, 30]))
    }

    #[test]
    fn unit_crop_converges_immediately() {
        let adv = Advisor::new(Fixed(BBox::UNIT));
        let mut s = Session::new("a", &world());
        let vp = b(0.5, 0.5, 0.8, 0.8);
        let traj = adv.run_multistep(&mut s, &world(), &vp, Orientation::Landscape).unwrap();
        assert_eq!(traj.len(), 1);
        assert!(traj[0].recommendation.converged);
        assert!(traj[0].recommendation.operations.is_empty());
        assert_eq!(traj[0].next_viewport, vp);
    }

    #[test]
    fn trajectories_stay_in_the_world_and_respect_max_steps() {
        let adv = Advisor::new(Fixed(b(0.1, 0.5, 0.9, 0.9)));
        let mut s = Session::new("a", &world());
        let traj = adv.run_multistep(&mut s, &world(), &b(0.5, 0.5, 0.8, 0.8), Orientation::Landscape).unwrap();
        assert_eq!(traj.len(), MAX_STEPS);
        for t in &traj {
            assert!(t.next_viewport.inside_unit(1e-12));
            let r = &t.recommendation;
            let expected = derive_view_in_frame(&r.crop, Orientation::Landscape, 4.0 / 3.0).unwrap();
            for (a, e) in r.view.to_array().iter().zip(expected.to_array()) {
                assert!((a - e).abs() < 1e-9);
            }
        }
        assert!(matches!(adv.step(&mut s, &world(), &BBox::UNIT, Orientation::Landscape), Err(Error::MaxSteps(3))));
    }

    #[test]
    fn sessions_persist() {
        let dir = tempfile::tempdir().unwrap();
        let adv = Advisor::new(Fixed(b(0.4, 0.5, 0.9, 0.9)));
        let mut s = Session::new("abc", &world());
        adv.run_multistep(&mut s, &world(), &b(0.5, 0.5, 0.8, 0.8), Orientation::Landscape).unwrap();
        s.save(dir.path(), &world()).unwrap();
        let (loaded, img) = Session::load(dir.path()).unwrap();
        assert_eq!(loaded, s);
        assert_eq!(img, world());
    }
}
