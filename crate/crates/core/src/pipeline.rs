//! End-to-end runs: candidate matching, partitioned stage-1 assignment,
//! stage-2 off-screen correction, and evaluation against labels.

use std::collections::HashMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    confusion_metrics_weighted, mann_whitney_u, precision_recall_curve, roc_auc, EvaluationReport, PValueMethod,
    PrPoint, RankedPrediction, RocPoint, UNSCORED,
};
use crate::identity::DistanceMatrix;
use crate::io::AssignmentRecord;
use crate::offscreen::{classify_offscreen, offscreen_roc, score_segments, DEFAULT_TAU};
use crate::solver::{
    check_pins, partition_segments, solve_partition, Assignment, AssignmentProblem, PinSet, SolverConfig,
};
use crate::types::{build_candidate_map, CandidateMap, Choice, FaceTrack, GroundTruth, SpeechSegment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignConfig {
    pub solver: SolverConfig,
    pub tau: f64,
    pub stage2: bool,
    pub min_overlap: f64,
    /// Worker threads for partition-level parallelism; 0 uses all cores.
    pub workers: usize,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            tau: DEFAULT_TAU,
            stage2: true,
            min_overlap: 0.0,
            workers: 1,
        }
    }
}

impl AssignConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidParameter(format!(
                "tau must lie in [-1, 1], got {}",
                self.tau
            )));
        }
        Ok(())
    }

    /// Settings that differ from the defaults, as `name=value` strings.
    pub fn deviations(&self) -> Vec<String> {
        let d = AssignConfig::default();
        let s = SolverConfig::default();
        let mut out = Vec::new();
        let mut note = |name: &str, differs: bool, value: String| {
            if differs {
                out.push(format!("{name}={value}"));
            }
        };
        note(
            "partition_size",
            self.solver.partition_size != s.partition_size,
            self.solver.partition_size.to_string(),
        );
        note(
            "max_epochs",
            self.solver.max_epochs != s.max_epochs,
            self.solver.max_epochs.to_string(),
        );
        note(
            "convergence_eps",
            self.solver.convergence_eps != s.convergence_eps,
            self.solver.convergence_eps.to_string(),
        );
        note(
            "tie_eps",
            self.solver.tie_eps != s.tie_eps,
            self.solver.tie_eps.to_string(),
        );
        note(
            "diagonal_policy",
            self.solver.diagonal_policy != s.diagonal_policy,
            format!("{:?}", self.solver.diagonal_policy),
        );
        note(
            "restarts",
            self.solver.restarts != s.restarts,
            self.solver.restarts.to_string(),
        );
        note("tau", self.tau != d.tau, self.tau.to_string());
        note("stage2", self.stage2 != d.stage2, self.stage2.to_string());
        note(
            "min_overlap",
            self.min_overlap != d.min_overlap,
            self.min_overlap.to_string(),
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub index: usize,
    pub num_segments: usize,
    pub first_segment: String,
    pub last_segment: String,
    pub objective: f64,
    pub epoch_history: Vec<f64>,
    pub converged: bool,
    pub restart_objectives: Vec<f64>,
    pub removed_offscreen: usize,
}

#[derive(Debug, Clone)]
pub struct AssignOutput {
    /// One record per unpurged segment, in temporal order.
    pub records: Vec<AssignmentRecord>,
    pub stage1: Assignment,
    pub assignment: Assignment,
    pub partitions: Vec<PartitionReport>,
    pub purged: Vec<String>,
    pub candidates: CandidateMap,
    /// Speech and stage-1 face matrices per partition.
    pub matrices: Vec<(DistanceMatrix, DistanceMatrix)>,
}

impl AssignOutput {
    pub fn converged(&self) -> bool {
        self.partitions.iter().all(|p| p.converged)
    }
}

struct PartitionResult {
    report: PartitionReport,
    records: Vec<AssignmentRecord>,
    stage1: Assignment,
    assignment: Assignment,
    matrices: (DistanceMatrix, DistanceMatrix),
}

/// Runs stage 1 on every partition and, unless disabled, stage 2.
pub fn assign(
    segments: &[SpeechSegment],
    tracks: &[FaceTrack],
    pins: &PinSet,
    config: &AssignConfig,
) -> Result<AssignOutput> {
    config.validate()?;
    let candidates = build_candidate_map(segments, tracks, config.min_overlap)?;
    check_pins(&candidates, pins)?;
    let by_id: HashMap<&str, &SpeechSegment> = segments.iter().map(|s| (s.id.as_str(), s)).collect();
    let lookup: HashMap<&str, &FaceTrack> = tracks.iter().map(|t| (t.id.as_str(), t)).collect();
    let ordered: Vec<String> = candidates.entries().iter().map(|e| e.segment_id.clone()).collect();
    let plan = partition_segments(&ordered, config.solver.partition_size)?;

    let run = |(index, ids): (usize, &Vec<String>)| -> Result<PartitionResult> {
        let segs: Vec<&SpeechSegment> = ids.iter().map(|id| by_id[id.as_str()]).collect();
        let problem = AssignmentProblem::new(&segs, &candidates, &lookup)?;
        let local_pins: PinSet = pins
            .iter()
            .filter(|(s, _)| problem.segment_ids().contains(s))
            .map(|(s, t)| (s.clone(), t.clone()))
            .collect();
        let (state, restart_objectives) = solve_partition(&problem, &local_pins, &config.solver, index)?;
        let sd = problem.speech_matrix().clone();
        let fd = problem.face_matrix(&state.choice)?;
        let scores = score_segments(&sd, &fd, config.solver.diagonal_policy)?;

        let (assignment, removed) = if config.stage2 {
            let unpinned: Vec<_> = scores
                .iter()
                .filter(|s| !local_pins.contains_key(&s.segment_id))
                .cloned()
                .collect();
            let outcome = classify_offscreen(&unpinned, config.tau, &state);
            (outcome.state.choice, outcome.removed.len())
        } else {
            (state.choice.clone(), 0)
        };

        let records = scores
            .iter()
            .map(|s| {
                let stage1_track = state.choice[&s.segment_id].track().map(str::to_owned);
                let offscreen = assignment[&s.segment_id] == Choice::OffScreen;
                AssignmentRecord {
                    segment_id: s.segment_id.clone(),
                    track_id: if offscreen { None } else { stage1_track.clone() },
                    score: s.row_correlation,
                    offscreen,
                    stage1_track_id: if offscreen { stage1_track } else { None },
                }
            })
            .collect();
        Ok(PartitionResult {
            report: PartitionReport {
                index,
                num_segments: ids.len(),
                first_segment: ids[0].clone(),
                last_segment: ids[ids.len() - 1].clone(),
                objective: state.objective,
                epoch_history: state.epoch_history.clone(),
                converged: state.converged,
                restart_objectives,
                removed_offscreen: removed,
            },
            records,
            stage1: state.choice,
            assignment,
            matrices: (sd, fd),
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    let results: Vec<PartitionResult> = pool.install(|| {
        plan.partitions
            .par_iter()
            .enumerate()
            .map(run)
            .collect::<Result<Vec<_>>>()
    })?;

    let mut out = AssignOutput {
        records: Vec::with_capacity(ordered.len()),
        stage1: Assignment::new(),
        assignment: Assignment::new(),
        partitions: Vec::with_capacity(results.len()),
        purged: candidates.purged().to_vec(),
        candidates: candidates.clone(),
        matrices: Vec::with_capacity(results.len()),
    };
    for r in results {
        out.records.extend(r.records);
        out.stage1.extend(r.stage1);
        out.assignment.extend(r.assignment);
        out.partitions.push(r.report);
        out.matrices.push(r.matrices);
    }
    Ok(out)
}

/// Metric bundle plus the curves behind it.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: EvaluationReport,
    pub pr_curve: Vec<PrPoint>,
    pub roc_curve: Vec<RocPoint>,
}

/// Ranking units for AP: every candidate (segment, track) pair when the
/// candidate map is known, else the predicted and true pairs. The pair
/// holding a segment's predicted face carries its row correlation; all
/// others score -1.
pub fn ranked_units(
    records: &[AssignmentRecord],
    gt: &GroundTruth,
    candidates: Option<&CandidateMap>,
    weight: &dyn Fn(&str) -> f64,
) -> Vec<RankedPrediction> {
    let mut units = Vec::new();
    for rec in records {
        let truth = gt.get(&rec.segment_id);
        let mut tracks: Vec<String> = match candidates.and_then(|c| c.get(&rec.segment_id)) {
            Some(list) => list.to_vec(),
            None => rec
                .scored_track()
                .into_iter()
                .chain(truth.and_then(Choice::track))
                .map(str::to_owned)
                .collect(),
        };
        tracks.sort();
        tracks.dedup();
        for t in tracks {
            let score = if rec.scored_track() == Some(t.as_str()) {
                rec.score
            } else {
                UNSCORED
            };
            units.push(RankedPrediction {
                unit_id: format!("{}|{}", rec.segment_id, t),
                score,
                label: truth.and_then(Choice::track) == Some(t.as_str()),
                weight: weight(&t),
            });
        }
    }
    units
}

/// Scores assignment records against labels.
pub fn evaluate(
    records: &[AssignmentRecord],
    gt: &GroundTruth,
    candidates: Option<&CandidateMap>,
    weight: &dyn Fn(&str) -> f64,
) -> Result<EvalOutput> {
    let predictions: Assignment = records.iter().map(|r| (r.segment_id.clone(), r.choice())).collect();
    let counts = confusion_metrics_weighted(&predictions, gt, weight)?;
    let mut warnings = Vec::new();
    if counts.tp + counts.fp == 0.0 {
        warnings.push("no segment has a predicted track; precision reported as 0".to_owned());
    }
    if counts.tp + counts.fn_ == 0.0 {
        warnings.push("ground truth has no on-screen speaker; recall reported as 0".to_owned());
    }

    let units = ranked_units(records, gt, candidates, weight);
    let (pr_curve, map) = match precision_recall_curve(&units) {
        Ok((curve, ap)) => (curve, Some(ap)),
        Err(Error::NoPositives) => {
            warnings.push("no positive units; mAP not computed".to_owned());
            (Vec::new(), None)
        }
        Err(e) => return Err(e),
    };

    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let offscreen: Vec<bool> = records
        .iter()
        .map(|r| gt.get(&r.segment_id) == Some(&Choice::OffScreen))
        .collect();
    let (auroc, mann_whitney, roc_curve) = if offscreen.iter().any(|&b| b) && offscreen.iter().any(|&b| !b) {
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let (auc, _) = roc_auc(&negated, &offscreen)?;
        let on: Vec<f64> = scores
            .iter()
            .zip(&offscreen)
            .filter(|(_, &o)| !o)
            .map(|(s, _)| *s)
            .collect();
        let off: Vec<f64> = scores
            .iter()
            .zip(&offscreen)
            .filter(|(_, &o)| o)
            .map(|(s, _)| *s)
            .collect();
        let mw = mann_whitney_u(&on, &off, PValueMethod::Auto)?;
        (Some(auc), Some(mw), offscreen_roc(&scores, &offscreen)?)
    } else {
        (None, None, Vec::new())
    };

    for w in &warnings {
        warn!("{w}");
    }
    Ok(EvalOutput {
        report: EvaluationReport {
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            map,
            auroc,
            mann_whitney,
            counts,
            warnings,
        },
        pr_curve,
        roc_curve,
    })
}

/// Checks that every labelled track exists.
pub fn validate_ground_truth(gt: &GroundTruth, tracks: &[FaceTrack]) -> Result<()> {
    let known: std::collections::HashSet<&str> = tracks.iter().map(|t| t.id.as_str()).collect();
    for (seg, choice) in gt {
        if let Choice::Track(t) = choice {
            if !known.contains(t.as_str()) {
                return Err(Error::validation(
                    seg,
                    format!("ground truth names unknown track '{t}'"),
                ));
            }
        }
    }
    Ok(())
}

/// Frame-count weights per track id, defaulting to 1.
pub fn frame_weights(tracks: &[FaceTrack]) -> HashMap<String, f64> {
    tracks
        .iter()
        .map(|t| (t.id.clone(), t.frame_count.map_or(1.0, f64::from)))
        .collect()
}
