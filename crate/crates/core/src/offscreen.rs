//! Stage 2: segments whose speech row correlates poorly with the face row of
//! their assigned track are treated as having an off-screen speaker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::RocPoint;
use crate::identity::{row_correlations, DiagonalPolicy, DistanceMatrix};
use crate::solver::AssignmentState;
use crate::types::Choice;

pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub segment_id: String,
    pub row_correlation: f64,
}

/// One score per segment, in matrix order.
pub fn score_segments(sd: &DistanceMatrix, fd: &DistanceMatrix, policy: DiagonalPolicy) -> Result<Vec<SegmentScore>> {
    let rows = row_correlations(sd, fd, policy)?;
    Ok(sd
        .order()
        .iter()
        .zip(rows)
        .map(|(id, r)| SegmentScore {
            segment_id: id.clone(),
            row_correlation: r,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffscreenOutcome {
    pub state: AssignmentState,
    pub removed: Vec<String>,
}

/// Moves every segment scoring strictly below `tau` off-screen.
pub fn classify_offscreen(scores: &[SegmentScore], tau: f64, state: &AssignmentState) -> OffscreenOutcome {
    let mut out = state.clone();
    let mut removed = Vec::new();
    for s in scores {
        if s.row_correlation < tau {
            if let Some(choice) = out.choice.get_mut(&s.segment_id) {
                if *choice != Choice::OffScreen {
                    *choice = Choice::OffScreen;
                    removed.push(s.segment_id.clone());
                }
            }
        }
    }
    OffscreenOutcome { state: out, removed }
}

/// ROC of the rule "score < tau means off-screen", with off-screen as the
/// positive class. One point per distinct score used as tau, plus a final
/// tau just above the largest score where everything is removed.
pub fn offscreen_roc(scores: &[f64], is_offscreen: &[bool]) -> Result<Vec<RocPoint>> {
    if scores.len() != is_offscreen.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: is_offscreen.len(),
        });
    }
    let positives = is_offscreen.iter().filter(|&&b| b).count();
    let negatives = is_offscreen.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(is_offscreen.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < pairs.len() {
        let tau = pairs[i].0;
        points.push(RocPoint {
            threshold: tau,
            tpr: tp as f64 / positives as f64,
            fpr: fp as f64 / negatives as f64,
        });
        while i < pairs.len() && pairs[i].0 == tau {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    let last = pairs[pairs.len() - 1].0;
    points.push(RocPoint {
        threshold: next_up(last),
        tpr: 1.0,
        fpr: 1.0,
    });
    Ok(points)
}

fn next_up(v: f64) -> f64 {
    if v == 0.0 {
        f64::from_bits(1)
    } else if v > 0.0 {
        f64::from_bits(v.to_bits() + 1)
    } else {
        f64::from_bits(v.to_bits() - 1)
    }
}
