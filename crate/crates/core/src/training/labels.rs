use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::matching::Assignment;

/// Highest aesthetic score on the grid-annotated scale.
pub const SCORE_MAX: f64 = 5.0;

/// How confidence targets are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// Matched predictions get their ground truth's normalized aesthetic score.
    Quality,
    /// Targets are the EMA teacher's confidences for the same input.
    SelfDistill,
}

/// Soft confidence targets for `n` predictions.
pub fn make_soft_labels(
    n: usize,
    assignment: &Assignment,
    gt_scores: &[f64],
    mode: LabelMode,
    teacher_confidences: Option<&[f64]>,
) -> Result<Vec<f64>> {
    match mode {
        LabelMode::Quality => {
            let mut targets = vec![0.0; n];
            for &(p, g) in &assignment.pairs {
                let score = *gt_scores
                    .get(g)
                    .ok_or_else(|| Error::Shape(format!("no score for ground truth {g}")))?;
                if !(0.0..=SCORE_MAX).contains(&score) {
                    return Err(Error::ScoreOutOfRange(score));
                }
                *targets
                    .get_mut(p)
                    .ok_or_else(|| Error::Shape(format!("prediction {p} out of {n}")))? = score / SCORE_MAX;
            }
            Ok(targets)
        }
        LabelMode::SelfDistill => {
            let teacher = teacher_confidences
                .ok_or_else(|| Error::InvalidArgument("self-distillation needs teacher confidences".into()))?;
            if teacher.len() != n {
                return Err(Error::Shape(format!("{} teacher confidences for {n} predictions", teacher.len())));
            }
            Ok(teacher.iter().map(|c| c.clamp(0.0, 1.0)).collect())
        }
    }
}
