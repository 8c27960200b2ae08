//! Bipartite matching between predicted candidate crops and ground truth.

use crate::error::{Error, Result};
use crate::geometry::{giou, BBox};
use crate::model::PredictionSet;

use super::losses::LossWeights;

/// One-to-one pairing of predictions with ground-truth crops.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    /// `(prediction index, ground-truth index)`, sorted by prediction index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched: Vec<usize>,
}

impl Assignment {
    /// Ground-truth index matched to prediction `pred`, if any.
    pub fn gt_of(&self, pred: usize) -> Option<usize> {
        self.pairs.iter().find(|(p, _)| *p == pred).map(|&(_, g)| g)
    }
}

/// Minimum-cost assignment on a dense `rows x cols` cost matrix.
///
/// Returns `(row, col)` pairs covering `min(rows, cols)` entries. Uses the
/// O(n²m) shortest-augmenting-path form of the Hungarian method with dual
/// potentials.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let rows = cost.len();
    if rows == 0 {
        return Ok(Vec::new());
    }
    let cols = cost[0].len();
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("ragged cost matrix".into()));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("non-finite matching cost".into()));
    }
    if cols == 0 {
        return Ok(Vec::new());
    }
    // The algorithm wants rows <= cols.
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|c| cost.iter().map(|r| r[c]).collect()).collect();
        let mut pairs: Vec<(usize, usize)> = hungarian(&transposed)?.into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        return Ok(pairs);
    }

    let (n, m) = (rows, cols);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    // p[j]: row (1-based) currently assigned to column j; 0 = free.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// Mean absolute difference over the four center-form coordinates.
pub fn l1_distance(a: &BBox, b: &BBox) -> f64 {
    ((a.x - b.x).abs() + (a.y - b.y).abs() + (a.w - b.w).abs() + (a.h - b.h).abs()) / 4.0
}

/// Pairwise matching cost, `preds.len() x gts.len()`.
pub fn cost_matrix(preds: &PredictionSet, gts: &[BBox], weights: &LossWeights) -> Result<Vec<Vec<f64>>> {
    preds
        .boxes
        .iter()
        .zip(&preds.confidences)
        .map(|(p, &conf)| {
            gts.iter()
                .map(|g| Ok(l1_distance(p, g) + weights.iou * (1.0 - giou(p, g)?) - weights.focal * conf))
                .collect()
        })
        .collect()
}

/// Minimum-cost matching of predictions to ground-truth crops.
pub fn match_predictions(preds: &PredictionSet, gts: &[BBox], weights: &LossWeights) -> Result<Assignment> {
    if gts.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let pairs = hungarian(&cost_matrix(preds, gts, weights)?)?;
    let unmatched = (0..preds.len()).filter(|i| !pairs.iter().any(|(p, _)| p == i)).collect();
    Ok(Assignment { pairs, unmatched })
}
