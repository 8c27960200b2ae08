//! Composition and extrapolation losses on candle tensors.
//!
//! Everything here is written in terms of differentiable tensor ops so that it
//! works for any float dtype; the gradient checks run these in f64.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

use super::matching::Assignment;

/// Weights of the composition objective and choice of extrapolation loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub iou: f64,
    pub focal: f64,
    pub extra: f64,
    pub extra_kind: ExtraLossKind,
    /// Transition point of the smooth-l1 extrapolation loss.
    pub smooth_l1_delta: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            iou: 0.4,
            focal: 0.1,
            extra: 1.0,
            extra_kind: ExtraLossKind::SmoothL1,
            smooth_l1_delta: 1.0,
            focal_gamma: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.iou, self.focal, self.extra, self.smooth_l1_delta, self.focal_gamma];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || self.smooth_l1_delta == 0.0 {
            return Err(Error::Config(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtraLossKind {
    SmoothL1,
    Mse,
    Cosine,
    Kl,
}

impl std::str::FromStr for ExtraLossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth-l1" => Ok(Self::SmoothL1),
            "mse" => Ok(Self::Mse),
            "cosine" => Ok(Self::Cosine),
            "kl" => Ok(Self::Kl),
            other => Err(Error::InvalidArgument(format!("unknown extrapolation loss `{other}`"))),
        }
    }
}

/// Mean absolute error over all elements of two `[M, 4]` box tensors.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok((pred - target)?.abs()?.mean_all()?)
}

/// Corner coordinates `(x1, y1, x2, y2)` of a `[M, 4]` center-form tensor.
fn corners(b: &Tensor) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let x = b.narrow(1, 0, 1)?;
    let y = b.narrow(1, 1, 1)?;
    let hw = (b.narrow(1, 2, 1)? * 0.5)?;
    let hh = (b.narrow(1, 3, 1)? * 0.5)?;
    Ok(((&x - &hw)?, (&y - &hh)?, (&x + &hw)?, (&y + &hh)?))
}

/// Per-row generalized IoU of two `[M, 4]` center-form tensors, shape `[M]`.
pub fn giou_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ax1, ay1, ax2, ay2) = corners(a)?;
    let (bx1, by1, bx2, by2) = corners(b)?;
    let iw = (ax2.minimum(&bx2)? - ax1.maximum(&bx1)?)?.relu()?;
    let ih = (ay2.minimum(&by2)? - ay1.maximum(&by1)?)?.relu()?;
    let inter = (iw * ih)?;
    let area_a = ((&ax2 - &ax1)? * (&ay2 - &ay1)?)?;
    let area_b = ((&bx2 - &bx1)? * (&by2 - &by1)?)?;
    let union = ((area_a + area_b)? - &inter)?;
    let cw = (ax2.maximum(&bx2)? - ax1.minimum(&bx1)?)?;
    let ch = (ay2.maximum(&by2)? - ay1.minimum(&by1)?)?;
    let enclosing = (cw * ch)?;
    let iou = (&inter / &union)?;
    let penalty = ((&enclosing - &union)? / &enclosing)?;
    Ok((iou - penalty)?.squeeze(1)?)
}

/// Mean `1 - GIoU` over rows.
pub fn giou_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok(giou_rows(pred, target)?.neg()?.affine(1.0, 1.0)?.mean_all()?)
}

/// Numerically stable `log(1 + exp(x))`.
fn softplus(x: &Tensor) -> Result<Tensor> {
    // max(x, 0) + log(1 + exp(-|x|))
    let tail = x.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

/// Quality focal loss on confidence logits against soft targets in `[0, 1]`:
/// `|t - sigmoid(x)|^gamma * BCE(sigmoid(x), t)`, averaged over all entries.
pub fn quality_focal_loss(logits: &Tensor, targets: &Tensor, gamma: f64) -> Result<Tensor> {
    let p = candle_nn::ops::sigmoid(logits)?;
    // BCE with logits: softplus(x) - t * x
    let bce = (softplus(logits)? - (targets * logits)?)?;
    let modulator = (targets - &p)?.abs()?;
    let modulator = if gamma == 2.0 { modulator.sqr()? } else { modulator.powf(gamma)? };
    Ok((modulator * bce)?.mean_all()?)
}

/// Elementwise smooth-l1 with transition `delta`: `0.5 d^2 / delta` below,
/// `|d| - 0.5 delta` above.
pub fn smooth_l1_elementwise(a: &Tensor, b: &Tensor, delta: f64) -> Result<Tensor> {
    let d = (a - b)?.abs()?;
    let quad = (d.sqr()? * (0.5 / delta))?;
    let lin = d.affine(1.0, -0.5 * delta)?;
    let small = d.lt(delta)?;
    Ok(small.where_cond(&quad, &lin)?)
}

fn softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, D::Minus1)?)
}

fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Per-cell extrapolation discrepancy, shape `[..., cells]` (channel dim reduced).
fn per_cell(pred: &Tensor, target: &Tensor, kind: ExtraLossKind, delta: f64) -> Result<Tensor> {
    Ok(match kind {
        ExtraLossKind::SmoothL1 => smooth_l1_elementwise(pred, target, delta)?.mean(D::Minus1)?,
        ExtraLossKind::Mse => (pred - target)?.sqr()?.mean(D::Minus1)?,
        ExtraLossKind::Cosine => {
            let dot = (pred * target)?.sum(D::Minus1)?;
            let np = pred.sqr()?.sum(D::Minus1)?.affine(1.0, 1e-12)?.sqrt()?;
            let nt = target.sqr()?.sum(D::Minus1)?.affine(1.0, 1e-12)?.sqrt()?;
            (dot / (np * nt)?)?.neg()?.affine(1.0, 1.0)?
        }
        ExtraLossKind::Kl => {
            // KL(softmax(target) || softmax(pred)) over channels.
            let pt = softmax_last(target)?;
            let log_pt = log_softmax_last(target)?;
            let log_pp = log_softmax_last(pred)?;
            (pt * (log_pt - log_pp)?)?.sum(D::Minus1)?
        }
    })
}

/// Extrapolation loss between predicted padded tokens and (stop-gradient)
/// teacher tokens, `[B, N, d]` each, averaged over cells where `mask` (`[B, N]`,
/// 0/1 float) is set. Returns a zero scalar when the mask is empty.
pub fn extra_loss(pred: &Tensor, target: &Tensor, mask: &Tensor, kind: ExtraLossKind, delta: f64) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!("extra_loss {:?} vs {:?}", pred.dims(), target.dims())));
    }
    let mask = mask.to_dtype(pred.dtype())?;
    let count = mask.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if count == 0.0 {
        return Ok(Tensor::zeros((), pred.dtype(), pred.device())?);
    }
    let target = target.detach();
    let cells = per_cell(pred, &target, kind, delta)?;
    Ok(((cells * mask)?.sum_all()? / count)?)
}

/// Loss components of the composition objective.
#[derive(Debug, Clone)]
pub struct CompLoss {
    pub total: Tensor,
    pub reg: Tensor,
    pub iou: Tensor,
    pub focal: Tensor,
}

impl CompLoss {
    pub fn values(&self) -> Result<[f64; 4]> {
        let f = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        Ok([f(&self.total)?, f(&self.reg)?, f(&self.iou)?, f(&self.focal)?])
    }
}

/// `L_reg + w_iou * L_iou + w_focal * L_focal` for a batch.
///
/// `boxes` is `[B, n, 4]`, `logits` and `targets` are `[B, n]`. Only matched
/// predictions contribute to the box terms; the focal term covers every query.
pub fn comp_loss(
    boxes: &Tensor,
    logits: &Tensor,
    gts: &[Vec<BBox>],
    assignments: &[Assignment],
    targets: &Tensor,
    weights: &LossWeights,
) -> Result<CompLoss> {
    let (b, n, _) = boxes.dims3()?;
    if gts.len() != b || assignments.len() != b {
        return Err(Error::Shape(format!("batch {b}, {} gt lists, {} assignments", gts.len(), assignments.len())));
    }
    let mut pred_idx = Vec::new();
    let mut gt_rows = Vec::new();
    for (bi, (asg, g)) in assignments.iter().zip(gts).enumerate() {
        for &(p, gi) in &asg.pairs {
            let gt = g.get(gi).ok_or_else(|| Error::Shape(format!("gt index {gi} out of range")))?;
            pred_idx.push((bi * n + p) as u32);
            gt_rows.extend(gt.to_array());
        }
    }
    let dtype = boxes.dtype();
    let device = boxes.device();
    let zero = || Tensor::zeros((), dtype, device);
    let (reg, iou) = if pred_idx.is_empty() {
        (zero()?, zero()?)
    } else {
        let m = pred_idx.len();
        let idx = Tensor::from_vec(pred_idx, m, device)?;
        let matched = boxes.reshape((b * n, 4))?.index_select(&idx, 0)?;
        let target = Tensor::from_vec(gt_rows, (m, 4), device)?.to_dtype(dtype)?;
        (l1_loss(&matched, &target)?, giou_loss(&matched, &target)?)
    };
    let focal = quality_focal_loss(logits, &targets.to_dtype(dtype)?.detach(), weights.focal_gamma)?;
    let total = ((&reg + (&iou * weights.iou)?)? + (&focal * weights.focal)?)?;
    let value = total.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(format!("L_comp = {value}")));
    }
    Ok(CompLoss { total, reg, iou, focal })
}

/// Builds a `[B, n]` tensor of soft targets.
pub fn targets_tensor(targets: &[Vec<f64>], dtype: DType, device: &Device) -> Result<Tensor> {
    let b = targets.len();
    let n = targets.first().map_or(0, Vec::len);
    let flat: Vec<f64> = targets.iter().flatten().copied().collect();
    if flat.len() != b * n {
        return Err(Error::Shape("ragged soft-label batch".into()));
    }
    Ok(Tensor::from_vec(flat, (b, n), device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
    }

    fn scalar(x: &Tensor) -> f64 {
        x.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn smooth_l1_scalar_cases() {
        let s = smooth_l1_elementwise(&t(&[0.5, 2.0], &[2]), &t(&[0.0, 0.0], &[2]), 1.0).unwrap();
        let v = s.to_vec1::<f64>().unwrap();
        assert!((v[0] - 0.125).abs() < 1e-12);
        assert!((v[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn extra_loss_zero_on_equal_tokens() {
        let z = t(&[0.1, -0.3, 0.7, 0.2, 0.5, -0.9, 1.1, 0.0], &[1, 2, 4]);
        let mask = t(&[1.0, 1.0], &[1, 2]);
        for kind in [ExtraLossKind::SmoothL1, ExtraLossKind::Mse, ExtraLossKind::Cosine, ExtraLossKind::Kl] {
            let l = scalar(&extra_loss(&z, &z, &mask, kind, 1.0).unwrap());
            assert!(l.abs() < 1e-9, "{kind:?}: {l}");
        }
    }

    #[test]
    fn extra_loss_empty_mask_is_zero() {
        let a = t(&[1.0, 2.0], &[1, 1, 2]);
        let b = t(&[3.0, 4.0], &[1, 1, 2]);
        let l = extra_loss(&a, &b, &t(&[0.0], &[1, 1]), ExtraLossKind::SmoothL1, 1.0).unwrap();
        assert_eq!(scalar(&l), 0.0);
    }

    #[test]
    fn extra_loss_only_counts_masked_cells() {
        let a = t(&[0.5, 0.5, 9.0, 9.0], &[1, 2, 2]);
        let b = t(&[0.0, 0.0, 0.0, 0.0], &[1, 2, 2]);
        let l = extra_loss(&a, &b, &t(&[1.0, 0.0], &[1, 2]), ExtraLossKind::SmoothL1, 1.0).unwrap();
        assert!((scalar(&l) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn reg_loss_example() {
        let boxes = t(&[0.5, 0.5, 1.0, 1.0], &[1, 1, 4]);
        let logits = t(&[0.0], &[1, 1]);
        let gts = vec![vec![BBox::new(0.5, 0.5, 0.8, 0.8).unwrap()]];
        let asg = vec![Assignment { pairs: vec![(0, 0)], unmatched: vec![] }];
        let targets = t(&[0.5], &[1, 1]);
        let l = comp_loss(&boxes, &logits, &gts, &asg, &targets, &LossWeights::default()).unwrap();
        assert!((scalar(&l.reg) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn comp_loss_zero_box_terms_on_exact_prediction() {
        let boxes = t(&[0.3, 0.6, 0.4, 0.5, 0.7, 0.4, 0.2, 0.3], &[1, 2, 4]);
        let logits = t(&[0.3, -1.2], &[1, 2]);
        let gts = vec![vec![BBox::new(0.3, 0.6, 0.4, 0.5).unwrap(), BBox::new(0.7, 0.4, 0.2, 0.3).unwrap()]];
        let asg = vec![Assignment { pairs: vec![(0, 0), (1, 1)], unmatched: vec![] }];
        let p = candle_nn::ops::sigmoid(&logits).unwrap();
        let l = comp_loss(&boxes, &logits, &gts, &asg, &p, &LossWeights::default()).unwrap();
        assert!(scalar(&l.reg).abs() < 1e-12);
        assert!(scalar(&l.iou).abs() < 1e-12);
        assert!(scalar(&l.focal).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let boxes = t(&[f64::NAN, 0.5, 1.0, 1.0], &[1, 1, 4]);
        let logits = t(&[0.0], &[1, 1]);
        let gts = vec![vec![BBox::UNIT]];
        let asg = vec![Assignment { pairs: vec![(0, 0)], unmatched: vec![] }];
        let r = comp_loss(&boxes, &logits, &gts, &asg, &t(&[0.0], &[1, 1]), &LossWeights::default());
        assert!(matches!(r, Err(Error::NonFiniteLoss(_))));
    }

    #[test]
    fn unknown_extra_kind() {
        assert!("huber".parse::<ExtraLossKind>().is_err());
        assert_eq!("kl".parse::<ExtraLossKind>().unwrap(), ExtraLossKind::Kl);
    }
}
