//! Composition metrics and dataset-level evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Scene;
use crate::error::{Error, Result};
use crate::geometry::{derive_view_in_frame, disp, iou, BBox};
use crate::imaging::{batch_tensor, Planar};
use crate::model::{PredictionSet, UnicModel};

/// IoU thresholds at which two boxes count as the same composition.
pub const EPS_STRICT: f64 = 0.90;
pub const EPS_LOOSE: f64 = 0.85;

/// 1 if any of the top-`k` predictions reaches IoU `eps` with any of the
/// top-`n` ground truths (`n` truncated to what is available).
pub fn acc_k_n(preds: &[BBox], gts: &[BBox], k: usize, n: usize, eps: f64) -> Result<bool> {
    if k < 1 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if preds.len() < k {
        return Err(Error::InvalidArgument(format!("{} predictions for K = {k}", preds.len())));
    }
    if gts.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    for p in &preds[..k] {
        for g in &gts[..n.min(gts.len())] {
            if iou(p, g)? >= eps {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Compare camera views derived from crops.
    View,
    /// Compare crops directly.
    Crop,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "view" => Ok(EvalMode::View),
            "crop" => Ok(EvalMode::Crop),
            other => Err(Error::InvalidArgument(format!("unknown eval mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image: String,
    /// Top-confidence prediction in the compared form (crop or view).
    pub prediction: BBox,
    pub target: BBox,
    pub iou: f64,
    pub disp: f64,
    /// Hits for `[1/5 @ 0.90, 1/5 @ 0.85, 1/10 @ 0.90, 1/10 @ 0.85]`.
    pub hits: [bool; 4],
    /// Whether the best ground-truth crop leaves the initial view.
    pub out_of_border: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: EvalMode,
    pub acc_1_5_e90: f64,
    pub acc_1_5_e85: f64,
    pub acc_1_10_e90: f64,
    pub acc_1_10_e85: f64,
    pub mean_iou: f64,
    pub mean_disp: f64,
    pub per_image: Vec<ImageRecord>,
}

impl MetricsReport {
    pub fn from_records(mode: EvalMode, per_image: Vec<ImageRecord>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::InvalidArgument("no images evaluated".into()));
        }
        let n = per_image.len() as f64;
        let pct = |i: usize| 100.0 * per_image.iter().filter(|r| r.hits[i]).count() as f64 / n;
        Ok(MetricsReport {
            mode,
            acc_1_5_e90: pct(0),
            acc_1_5_e85: pct(1),
            acc_1_10_e90: pct(2),
            acc_1_10_e85: pct(3),
            mean_iou: per_image.iter().map(|r| r.iou).sum::<f64>() / n,
            mean_disp: per_image.iter().map(|r| r.disp).sum::<f64>() / n,
            per_image,
        })
    }

    /// Mean IoU over the records selected by `keep`, with their count.
    pub fn mean_iou_where(&self, keep: impl Fn(&ImageRecord) -> bool) -> (f64, usize) {
        let sel: Vec<_> = self.per_image.iter().filter(|r| keep(r)).collect();
        if sel.is_empty() {
            return (f64::NAN, 0);
        }
        (sel.iter().map(|r| r.iou).sum::<f64>() / sel.len() as f64, sel.len())
    }

    /// The report without per-image records.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "mode": self.mode,
            "acc_1_5_e90": self.acc_1_5_e90,
            "acc_1_5_e85": self.acc_1_5_e85,
            "acc_1_10_e90": self.acc_1_10_e90,
            "acc_1_10_e85": self.acc_1_10_e85,
            "mean_iou": self.mean_iou,
            "mean_disp": self.mean_disp,
            "count": self.per_image.len(),
        })
    }
}

/// Anything that proposes ranked crops for initial views.
pub trait Predictor {
    /// One prediction set per `(scene, input)` pair, crops in the initial-view
    /// frame.
    fn predict(&self, items: &[(&Scene, &Planar)]) -> Result<Vec<PredictionSet>>;
}

/// The trained network, run in batches.
pub struct ModelPredictor<'a> {
    pub model: &'a UnicModel,
    pub batch_size: usize,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, items: &[(&Scene, &Planar)]) -> Result<Vec<PredictionSet>> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.batch_size.max(1)) {
            let inputs: Vec<Planar> = chunk.iter().map(|(_, p)| (*p).clone()).collect();
            let x = batch_tensor(&inputs, self.model.dtype(), self.model.device())?;
            out.extend(self.model.predict(&x)?);
        }
        Ok(out)
    }
}

/// Returns the scene's own ground truth, best first.
pub struct PerfectPredictor;

impl Predictor for PerfectPredictor {
    fn predict(&self, items: &[(&Scene, &Planar)]) -> Result<Vec<PredictionSet>> {
        Ok(items
            .iter()
            .map(|(s, _)| {
                let mut crops = s.crops.clone();
                crate::dataset::forge::sort_by_score(&mut crops);
                let n = crops.len();
                PredictionSet {
                    boxes: crops.iter().map(|c| c.bbox).collect(),
                    confidences: (0..n).map(|i| 1.0 - i as f64 / n as f64).collect(),
                }
            })
            .collect())
    }
}

/// A fixed centered box, the same for every view.
pub struct CenterCrop {
    pub w: f64,
    pub h: f64,
}

impl CenterCrop {
    /// Centered box with the mean size of the best ground-truth crops.
    pub fn fit(scenes: &[Scene]) -> Result<Self> {
        let best: Vec<BBox> = scenes.iter().filter_map(|s| s.best_crop().map(|c| c.bbox)).collect();
        if best.is_empty() {
            return Err(Error::NoGroundTruth);
        }
        let n = best.len() as f64;
        Ok(CenterCrop { w: best.iter().map(|b| b.w).sum::<f64>() / n, h: best.iter().map(|b| b.h).sum::<f64>() / n })
    }
}

impl Predictor for CenterCrop {
    fn predict(&self, items: &[(&Scene, &Planar)]) -> Result<Vec<PredictionSet>> {
        let b = BBox::new(0.5, 0.5, self.w, self.h)?;
        Ok(items.iter().map(|_| PredictionSet { boxes: vec![b; 10], confidences: vec![1.0; 10] }).collect())
    }
}

/// Uniformly random boxes within the initial view.
pub struct RandomBoxes {
    pub seed: u64,
}

impl Predictor for RandomBoxes {
    fn predict(&self, items: &[(&Scene, &Planar)]) -> Result<Vec<PredictionSet>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        items
            .iter()
            .map(|_| {
                let boxes = (0..10)
                    .map(|_| {
                        let w = rng.gen_range(0.3..=1.0);
                        let h = rng.gen_range(0.3..=1.0);
                        BBox::new(rng.gen_range(w / 2.0..=1.0 - w / 2.0), rng.gen_range(h / 2.0..=1.0 - h / 2.0), w, h)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PredictionSet { boxes, confidences: vec![0.5; 10] })
            })
            .collect()
    }
}

/// Scores one prediction set against a scene.
pub fn score_scene(scene: &Scene, preds: &PredictionSet, mode: EvalMode) -> Result<ImageRecord> {
    let mut crops = scene.crops.clone();
    crate::dataset::forge::sort_by_score(&mut crops);
    let gts: Vec<BBox> = crops.iter().map(|c| c.bbox).collect();
    let ranked = preds.ranked_boxes();
    if ranked.is_empty() {
        return Err(Error::InvalidArgument("empty prediction set".into()));
    }
    let frame_aspect = scene.init_aspect();
    let as_mode = |b: &BBox| -> Result<BBox> {
        match mode {
            EvalMode::Crop => Ok(*b),
            EvalMode::View => derive_view_in_frame(b, scene.orientation, frame_aspect),
        }
    };
    let gts = gts.iter().map(as_mode).collect::<Result<Vec<_>>>()?;
    let ranked = ranked.iter().map(as_mode).collect::<Result<Vec<_>>>()?;
    let (pred, target) = (ranked[0], gts[0]);
    let mut hits = [false; 4];
    for (i, (n, eps)) in [(5, EPS_STRICT), (5, EPS_LOOSE), (10, EPS_STRICT), (10, EPS_LOOSE)].into_iter().enumerate() {
        hits[i] = acc_k_n(&ranked, &gts, 1, n, eps)?;
    }
    Ok(ImageRecord {
        image: scene.image.clone(),
        prediction: pred,
        target,
        iou: iou(&pred, &target)?,
        disp: disp(&pred, &target)?,
        hits,
        out_of_border: !crops[0].bbox.inside_unit(1e-9),
    })
}

/// Evaluates `predictor` on `scenes`, with `inputs[i]` the model input of
/// scene `i`.
pub fn evaluate(predictor: &dyn Predictor, scenes: &[Scene], inputs: &[Planar], mode: EvalMode) -> Result<MetricsReport> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if scenes.len() != inputs.len() {
        return Err(Error::Shape(format!("{} scenes, {} inputs", scenes.len(), inputs.len())));
    }
    let items: Vec<(&Scene, &Planar)> = scenes.iter().zip(inputs).collect();
    let preds = predictor.predict(&items)?;
    let records = scenes
        .iter()
        .zip(&preds)
        .map(|(s, p)| score_scene(s, p, mode))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_records(mode, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_synthetic_scene;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn acc_examples() {
        let g = b(0.5, 0.5, 0.6, 0.6);
        assert!(acc_k_n(&[g], &[g], 1, 5, EPS_STRICT).unwrap());
        // Same height, width 0.6 * 0.87: IoU = 0.87.
        let p = b(0.5, 0.5, 0.6 * 0.87, 0.6);
        assert!((iou(&p, &g).unwrap() - 0.87).abs() < 1e-12);
        assert!(!acc_k_n(&[p], &[b(0.1, 0.1, 0.1, 0.1), g], 1, 5, EPS_STRICT).unwrap());
        assert!(acc_k_n(&[p], &[b(0.1, 0.1, 0.1, 0.1), g], 1, 5, EPS_LOOSE).unwrap());
        assert!(!acc_k_n(&[b(0.1, 0.1, 0.1, 0.1)], &[b(0.8, 0.8, 0.1, 0.1)], 1, 5, EPS_LOOSE).unwrap());
        assert!(acc_k_n(&[g], &[g], 0, 5, EPS_LOOSE).is_err());
    }

    #[test]
    fn perfect_predictor_is_perfect() {
        let scenes: Vec<Scene> = (0..4).map(|s| make_synthetic_scene(s).unwrap().scene).collect();
        let inputs = vec![Planar { width: 1, height: 1, data: vec![0.0; 3] }; scenes.len()];
        for mode in [EvalMode::View, EvalMode::Crop] {
            let r = evaluate(&PerfectPredictor, &scenes, &inputs, mode).unwrap();
            assert_eq!([r.acc_1_5_e90, r.acc_1_5_e85, r.acc_1_10_e90, r.acc_1_10_e85], [100.0; 4]);
            assert!((r.mean_iou - 1.0).abs() < 1e-12);
            assert!(r.mean_disp.abs() < 1e-12);
        }
    }

    #[test]
    fn view_mode_identity_frame() {
        let s = make_synthetic_scene(3).unwrap().scene;
        let unit = PredictionSet { boxes: vec![BBox::UNIT], confidences: vec![1.0] };
        let r = score_scene(&s, &unit, EvalMode::View).unwrap();
        for (a, e) in r.prediction.to_array().iter().zip(BBox::UNIT.to_array()) {
            assert!((a - e).abs() < 1e-9);
        }
    }
}
