//! Detection metrics against reference labels: precision/recall/F1 over
//! (segment, track) units, average precision, ROC analysis and the
//! Mann-Whitney U test.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::solver::Assignment;
use crate::types::{Choice, GroundTruth};

/// Sentinel score for units that are not a predicted active speaker.
pub const UNSCORED: f64 = -1.0;

/// Sample sizes with `n1 * n2` up to this use the exact U distribution.
pub const EXACT_MWU_LIMIT: usize = 400;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tn: f64,
}

impl ConfusionCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    fn add(&mut self, pred: &Choice, truth: &Choice, weight: impl Fn(&str) -> f64) {
        match (pred, truth) {
            (Choice::Track(p), Choice::Track(t)) if p == t => self.tp += weight(p),
            (Choice::Track(p), Choice::Track(t)) => {
                self.fp += weight(p);
                self.fn_ += weight(t);
            }
            (Choice::Track(p), Choice::OffScreen) => self.fp += weight(p),
            (Choice::OffScreen, Choice::Track(t)) => self.fn_ += weight(t),
            (Choice::OffScreen, Choice::OffScreen) => self.tn += 1.0,
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Unit counts over every predicted segment. A wrong track is both a false
/// positive and a false negative.
pub fn confusion_metrics(predictions: &Assignment, gt: &GroundTruth) -> Result<ConfusionCounts> {
    confusion_metrics_weighted(predictions, gt, |_| 1.0)
}

/// As [`confusion_metrics`], with each track unit weighted (e.g. by frame
/// count).
pub fn confusion_metrics_weighted(
    predictions: &Assignment,
    gt: &GroundTruth,
    weight: impl Fn(&str) -> f64,
) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    for (seg, pred) in predictions {
        let truth = gt.get(seg).ok_or_else(|| Error::MissingGroundTruth(seg.clone()))?;
        counts.add(pred, truth, &weight);
    }
    Ok(counts)
}

/// Per-group counts, where `group` maps a track to e.g. its character.
/// True positives and false negatives go to the true track's group, false
/// positives to the predicted track's group.
pub fn confusion_by_group(
    predictions: &Assignment,
    gt: &GroundTruth,
    group: impl Fn(&str) -> Option<String>,
) -> Result<HashMap<String, ConfusionCounts>> {
    let mut out: HashMap<String, ConfusionCounts> = HashMap::new();
    for (seg, pred) in predictions {
        let truth = gt.get(seg).ok_or_else(|| Error::MissingGroundTruth(seg.clone()))?;
        match (pred, truth) {
            (Choice::Track(p), Choice::Track(t)) if p == t => {
                if let Some(g) = group(t) {
                    out.entry(g).or_default().tp += 1.0;
                }
            }
            _ => {
                if let Some(g) = pred.track().and_then(&group) {
                    out.entry(g).or_default().fp += 1.0;
                }
                if let Some(g) = truth.track().and_then(&group) {
                    out.entry(g).or_default().fn_ += 1.0;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub unit_id: String,
    pub score: f64,
    pub label: bool,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

fn rank_order(ranked: &[RankedPrediction]) -> Vec<&RankedPrediction> {
    let mut order: Vec<&RankedPrediction> = ranked.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.unit_id.cmp(&b.unit_id)));
    order
}

/// Non-interpolated average precision: the sum over positive ranks of
/// precision at that rank times the recall increment.
pub fn average_precision(ranked: &[RankedPrediction]) -> Result<f64> {
    Ok(precision_recall_curve(ranked)?.1)
}

/// Precision/recall after each rank, and the resulting AP.
pub fn precision_recall_curve(ranked: &[RankedPrediction]) -> Result<(Vec<PrPoint>, f64)> {
    if ranked.iter().any(|r| !r.score.is_finite()) {
        return Err(Error::InvalidParameter("scores must be finite".into()));
    }
    let total_pos: f64 = ranked.iter().filter(|r| r.label).map(|r| r.weight).sum();
    if total_pos <= 0.0 {
        return Err(Error::NoPositives);
    }
    let mut points = Vec::with_capacity(ranked.len());
    let (mut seen, mut hits) = (0.0, 0.0);
    let mut ap = Compensated::default();
    for r in rank_order(ranked) {
        seen += r.weight;
        if r.label {
            hits += r.weight;
            ap.add_quotient(hits * r.weight, seen);
        }
        points.push(PrPoint {
            threshold: r.score,
            precision: hits / seen,
            recall: hits / total_pos,
        });
    }
    Ok((points, ap.divided_by(total_pos)))
}

/// Double-double accumulator, so AP is correctly rounded for small rational
/// inputs such as 5/6.
#[derive(Default)]
struct Compensated {
    hi: f64,
    lo: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let s = self.hi + x;
        let bp = s - self.hi;
        let err = (self.hi - (s - bp)) + (x - bp);
        self.hi = s;
        self.lo += err;
    }

    /// Adds `num / den` with its rounding residual.
    fn add_quotient(&mut self, num: f64, den: f64) {
        let q = num / den;
        self.add(q);
        self.lo += (-q).mul_add(den, num) / den;
    }

    fn divided_by(&self, den: f64) -> f64 {
        let q = self.hi / den;
        let r = (-q).mul_add(den, self.hi) + self.lo;
        q + r / den
    }
}

/// Unweighted mean of per-video AP. Videos without positives are skipped.
pub fn mean_average_precision(videos: &[Vec<RankedPrediction>]) -> Result<f64> {
    let aps: Vec<f64> = videos
        .iter()
        .filter_map(|v| match average_precision(v) {
            Err(Error::NoPositives) => None,
            other => Some(other),
        })
        .collect::<Result<_>>()?;
    if aps.is_empty() {
        return Err(Error::NoPositives);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

fn class_sizes(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("scores must be finite".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// ROC points for the rule "score >= threshold is positive", one per
/// distinct score from the highest down, starting at (0, 0).
pub fn roc_curve_points(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    Ok(roc_counts(scores, labels)?
        .into_iter()
        .map(|(threshold, tp, fp, pos, neg)| RocPoint {
            threshold,
            tpr: tp as f64 / pos as f64,
            fpr: fp as f64 / neg as f64,
        })
        .collect())
}

/// Threshold, true positives, false positives, positives, negatives.
type RocCount = (f64, usize, usize, usize, usize);

fn roc_counts(scores: &[f64], labels: &[bool]) -> Result<Vec<RocCount>> {
    let (pos, neg) = class_sizes(scores, labels)?;
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = vec![(f64::INFINITY, 0, 0, pos, neg)];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < pairs.len() {
        let thr = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == thr {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((thr, tp, fp, pos, neg));
    }
    Ok(out)
}

/// Area under the ROC curve by the trapezoid rule, with the curve points.
/// Tied scores contribute one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<(f64, Vec<RocPoint>)> {
    let counts = roc_counts(scores, labels)?;
    let (pos, neg) = (counts[0].3, counts[0].4);
    // Twice the area in units of (1/pos)(1/neg); integral until the final divide.
    let mut twice: u128 = 0;
    for w in counts.windows(2) {
        let (_, tp0, fp0, ..) = w[0];
        let (_, tp1, fp1, ..) = w[1];
        twice += ((fp1 - fp0) * (tp1 + tp0)) as u128;
    }
    let auc = twice as f64 / (2.0 * pos as f64 * neg as f64);
    let points = counts
        .into_iter()
        .map(|(threshold, tp, fp, pos, neg)| RocPoint {
            threshold,
            tpr: tp as f64 / pos as f64,
            fpr: fp as f64 / neg as f64,
        })
        .collect();
    Ok((auc, points))
}

/// 1-based ranks of the pooled sample with ties sharing their mean rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    /// Exact when `n1 * n2 <= EXACT_MWU_LIMIT`, normal otherwise.
    #[default]
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Two-sided Mann-Whitney U test of `x` against `y` with midrank ties.
pub fn mann_whitney_u(x: &[f64], y: &[f64], method: PValueMethod) -> Result<MannWhitney> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySample);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("samples must be finite".into()));
    }
    let (n1, n2) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum_x: f64 = ranks[..n1].iter().sum();
    let u = rank_sum_x - (n1 * (n1 + 1)) as f64 / 2.0;
    let exact = match method {
        PValueMethod::Auto => n1 * n2 <= EXACT_MWU_LIMIT,
        PValueMethod::Exact => true,
        PValueMethod::Normal => false,
    };
    let p_value = if exact {
        exact_p_value(&ranks, n1)
    } else {
        normal_p_value(u, &pooled, n1, n2)
    };
    Ok(MannWhitney { u, p_value, exact })
}

/// Permutation distribution of the rank sum over every size-`n1` subset of
/// the pooled midranks, counted by dynamic programming on doubled ranks.
fn exact_p_value(ranks: &[f64], n1: usize) -> f64 {
    let n = ranks.len();
    let n2 = n - n1;
    // The smaller group keeps the table small; the test is symmetric.
    let (k, observed): (usize, u64) = if n1 <= n2 {
        (n1, ranks[..n1].iter().map(|r| (2.0 * r) as u64).sum())
    } else {
        (n2, ranks[n1..].iter().map(|r| (2.0 * r) as u64).sum())
    };
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r) as usize).collect();
    let max_sum: usize = {
        let mut sorted = doubled.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        sorted[..k].iter().sum()
    };
    let mut table = vec![vec![0u128; max_sum + 1]; k + 1];
    table[0][0] = 1;
    for &r in &doubled {
        for size in (1..=k).rev() {
            let (lo, hi) = table.split_at_mut(size);
            let prev = &lo[size - 1];
            let cur = &mut hi[0];
            for s in (r..=max_sum).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    // Mean doubled rank sum is k(n+1).
    let center = (k * (n + 1)) as i128;
    let dev = (observed as i128 - center).abs();
    let (mut extreme, mut total) = (0u128, 0u128);
    for (s, &count) in table[k].iter().enumerate() {
        total += count;
        if (s as i128 - center).abs() >= dev {
            extreme += count;
        }
    }
    (extreme as f64 / total as f64).min(1.0)
}

fn normal_p_value(u: f64, pooled: &[f64], n1: usize, n2: usize) -> f64 {
    let n = (n1 + n2) as f64;
    let (a, b) = (n1 as f64, n2 as f64);
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = a * b / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let mean = a * b / 2.0;
    let z = (((u - mean).abs() - 0.5).max(0.0)) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Full metric bundle written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(rename = "mAP")]
    pub map: Option<f64>,
    #[serde(rename = "auROC")]
    pub auroc: Option<f64>,
    pub mann_whitney: Option<MannWhitney>,
    pub counts: ConfusionCounts,
    pub warnings: Vec<String>,
}
