//! Stage 1: speech-to-face assignment by coordinate ascent.
//!
//! Each epoch visits segments in temporal order and moves the active face
//! of one segment to the candidate that maximizes the mean row-wise
//! correlation, keeping all other choices fixed. Epochs repeat until the
//! objective stops improving.

mod cache;

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::{build_distance_matrix, cosine_distance, DiagonalPolicy, DistanceMatrix};
use crate::types::{CandidateMap, Choice, EmbeddingVector, FaceTrack, SpeechSegment};

pub use cache::ObjectiveCache;

/// Segment id to the track it is frozen to.
pub type PinSet = BTreeMap<String, String>;

/// Segment id to its current choice.
pub type Assignment = BTreeMap<String, Choice>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub partition_size: usize,
    pub max_epochs: usize,
    pub convergence_eps: f64,
    pub tie_eps: f64,
    pub seed: u64,
    pub diagonal_policy: DiagonalPolicy,
    /// Independent random initializations per partition; the best wins.
    pub restarts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            partition_size: 500,
            max_epochs: 50,
            convergence_eps: 1e-9,
            tie_eps: 1e-12,
            seed: 0,
            diagonal_policy: DiagonalPolicy::Include,
            restarts: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.partition_size < 3 {
            return Err(Error::InvalidParameter(format!(
                "partition size must be >= 3, got {}",
                self.partition_size
            )));
        }
        if self.max_epochs == 0 || self.restarts == 0 {
            return Err(Error::InvalidParameter(
                "max_epochs and restarts must be positive".into(),
            ));
        }
        if !(self.convergence_eps >= 0.0 && self.tie_eps >= 0.0) {
            return Err(Error::InvalidParameter("tolerances must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentState {
    pub choice: Assignment,
    pub objective: f64,
    /// Objective at initialization followed by the value after each epoch.
    pub epoch_history: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub partitions: Vec<Vec<String>>,
}

/// Splits temporally ordered segment ids into contiguous blocks of at most
/// `partition_size`; a trailing block shorter than 3 joins its predecessor.
pub fn partition_segments(segment_ids: &[String], partition_size: usize) -> Result<PartitionPlan> {
    if partition_size < 3 {
        return Err(Error::InvalidParameter(format!(
            "partition size must be >= 3, got {partition_size}"
        )));
    }
    if segment_ids.len() < 3 {
        return Err(Error::TooFewElements {
            required: 3,
            actual: segment_ids.len(),
        });
    }
    let mut partitions: Vec<Vec<String>> = segment_ids.chunks(partition_size).map(<[String]>::to_vec).collect();
    if partitions.len() > 1 && partitions.last().is_some_and(|p| p.len() < 3) {
        let tail = partitions.pop().unwrap_or_default();
        if let Some(prev) = partitions.last_mut() {
            prev.extend(tail);
        }
    }
    Ok(PartitionPlan { partitions })
}

/// Seeded generator for partition `partition`, restart `restart`.
pub fn partition_rng(seed: u64, partition: usize, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((partition as u64) << 32) | restart as u64);
    rng
}

/// Uniform random candidate per segment; pinned segments take their pin.
pub fn random_init(candidates: &CandidateMap, pins: &PinSet, rng: &mut impl Rng) -> Result<Assignment> {
    check_pins(candidates, pins)?;
    Ok(candidates
        .entries()
        .iter()
        .map(|e| {
            let choice = match pins.get(&e.segment_id) {
                Some(track) => track.clone(),
                None => e.tracks[rng.random_range(0..e.tracks.len())].clone(),
            };
            (e.segment_id.clone(), Choice::Track(choice))
        })
        .collect())
}

pub fn check_pins(candidates: &CandidateMap, pins: &PinSet) -> Result<()> {
    for (seg, track) in pins {
        match candidates.get(seg) {
            None => {
                return Err(Error::validation(
                    seg,
                    "pinned segment has no candidate tracks or does not exist",
                ))
            }
            Some(list) if !list.iter().any(|t| t == track) => {
                return Err(Error::PinConflict {
                    segment: seg.clone(),
                    track: track.clone(),
                })
            }
            _ => {}
        }
    }
    Ok(())
}

/// The search space of one partition: speech matrix, candidate lists and a
/// table of pairwise distances between every track that appears.
#[derive(Debug, Clone)]
pub struct AssignmentProblem {
    segment_ids: Vec<String>,
    sd: DistanceMatrix,
    /// Per segment, indices into `track_ids` in track-id order.
    candidates: Vec<Vec<usize>>,
    track_ids: Vec<String>,
    track_dist: Vec<f64>,
}

impl AssignmentProblem {
    /// Builds the problem for the given segments, all of which must have a
    /// candidate entry.
    pub fn new(
        segments: &[&SpeechSegment],
        candidate_map: &CandidateMap,
        tracks: &HashMap<&str, &FaceTrack>,
    ) -> Result<Self> {
        let segment_ids: Vec<String> = segments.iter().map(|s| s.id.clone()).collect();
        let sd = build_distance_matrix(
            &segments.iter().map(|s| &s.embedding).collect::<Vec<_>>(),
            segment_ids.clone(),
        )?;
        let mut track_ids: Vec<String> = Vec::new();
        let mut local: HashMap<&str, usize> = HashMap::new();
        let mut candidates = Vec::with_capacity(segments.len());
        for seg in segments {
            let list = candidate_map
                .get(&seg.id)
                .ok_or_else(|| Error::validation(&seg.id, "segment has no candidate entry"))?;
            let mut idx = Vec::with_capacity(list.len());
            for t in list {
                let next = local.len();
                let k = *local.entry(t.as_str()).or_insert_with(|| {
                    track_ids.push(t.clone());
                    next
                });
                idx.push(k);
            }
            candidates.push(idx);
        }
        let embeddings = track_ids
            .iter()
            .map(|id| {
                tracks
                    .get(id.as_str())
                    .map(|t| &t.embedding)
                    .ok_or_else(|| Error::validation(id, "unknown track id"))
            })
            .collect::<Result<Vec<&EmbeddingVector>>>()?;
        let t = track_ids.len();
        let mut track_dist = vec![0.0; t * t];
        for a in 0..t {
            for b in (a + 1)..t {
                let d = cosine_distance(embeddings[a], embeddings[b])?;
                track_dist[a * t + b] = d;
                track_dist[b * t + a] = d;
            }
        }
        Ok(Self {
            segment_ids,
            sd,
            candidates,
            track_ids,
            track_dist,
        })
    }

    pub fn len(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_ids.is_empty()
    }

    pub fn segment_ids(&self) -> &[String] {
        &self.segment_ids
    }

    pub fn speech_matrix(&self) -> &DistanceMatrix {
        &self.sd
    }

    pub fn candidate_tracks(&self, i: usize) -> impl Iterator<Item = &str> {
        self.candidates[i].iter().map(|&k| self.track_ids[k].as_str())
    }

    /// Number of joint assignments, saturating.
    pub fn search_space(&self) -> u128 {
        self.candidates
            .iter()
            .fold(1u128, |acc, c| acc.saturating_mul(c.len() as u128))
    }

    fn dist(&self, a: usize, b: usize) -> f64 {
        self.track_dist[a * self.track_ids.len() + b]
    }

    /// Face matrix for local track indices, one per segment.
    pub(crate) fn face_matrix_local(&self, assigned: &[usize]) -> DistanceMatrix {
        let n = assigned.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = self.dist(assigned[i], assigned[j]);
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        DistanceMatrix::from_raw(values, self.segment_ids.clone())
    }

    fn column(&self, assigned: &[usize], i: usize, track: usize, out: &mut [f64]) {
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = if j == i { 0.0 } else { self.dist(track, assigned[j]) };
        }
    }

    /// Converts an assignment into local track indices.
    pub(crate) fn to_local(&self, assignment: &Assignment) -> Result<Vec<usize>> {
        self.segment_ids
            .iter()
            .enumerate()
            .map(|(i, seg)| {
                let track = assignment
                    .get(seg)
                    .and_then(Choice::track)
                    .ok_or_else(|| Error::validation(seg, "initial assignment must name a track"))?;
                self.candidates[i]
                    .iter()
                    .copied()
                    .find(|&k| self.track_ids[k] == track)
                    .ok_or_else(|| Error::PinConflict {
                        segment: seg.clone(),
                        track: track.to_owned(),
                    })
            })
            .collect()
    }

    pub(crate) fn to_assignment(&self, local: &[usize]) -> Assignment {
        self.segment_ids
            .iter()
            .zip(local)
            .map(|(s, &k)| (s.clone(), Choice::Track(self.track_ids[k].clone())))
            .collect()
    }

    /// Face matrix of a full assignment over this problem's segments.
    pub fn face_matrix(&self, assignment: &Assignment) -> Result<DistanceMatrix> {
        Ok(self.face_matrix_local(&self.to_local(assignment)?))
    }

    /// Candidate map restricted to this problem, in segment order.
    pub fn candidate_map(&self) -> CandidateMap {
        let entries = self
            .segment_ids
            .iter()
            .enumerate()
            .map(|(i, s)| crate::types::CandidateEntry {
                segment_id: s.clone(),
                tracks: self.candidate_tracks(i).map(str::to_owned).collect(),
            })
            .collect();
        CandidateMap::from_entries(entries, Vec::new()).expect("problem candidates are valid")
    }
}

/// Coordinate ascent from `init` until the epoch gain falls below
/// `convergence_eps` or `max_epochs` is reached.
pub fn stage1_optimize(
    problem: &AssignmentProblem,
    init: &Assignment,
    pins: &PinSet,
    config: &SolverConfig,
) -> Result<AssignmentState> {
    config.validate()?;
    let n = problem.len();
    let mut assigned = problem.to_local(init)?;
    let pinned: Vec<bool> = problem.segment_ids.iter().map(|s| pins.contains_key(s)).collect();
    for (i, seg) in problem.segment_ids.iter().enumerate() {
        if let Some(pin) = pins.get(seg) {
            if problem.track_ids[assigned[i]] != *pin {
                return Err(Error::PinConflict {
                    segment: seg.clone(),
                    track: pin.clone(),
                });
            }
        }
    }

    let mut cache = ObjectiveCache::new(
        &problem.sd,
        &problem.face_matrix_local(&assigned),
        config.diagonal_policy,
    )?;
    let mut history = vec![cache.objective()];
    let mut converged = false;
    let mut column = vec![0.0; n];
    let mut best_column = vec![0.0; n];

    for _ in 0..config.max_epochs {
        let start = cache.objective();
        for i in 0..n {
            if pinned[i] {
                continue;
            }
            let current = cache.objective();
            let incumbent = assigned[i];
            let mut best: Option<(usize, f64)> = None;
            for &k in &problem.candidates[i] {
                if k == incumbent {
                    continue;
                }
                problem.column(&assigned, i, k, &mut column);
                let value = cache.evaluate_column(i, &column);
                // Candidates arrive in track-id order, so only a clear win
                // displaces an earlier candidate.
                if best.is_none_or(|(_, b)| value > b + config.tie_eps) {
                    best = Some((k, value));
                    best_column.copy_from_slice(&column);
                }
            }
            if let Some((k, value)) = best {
                if value > current + config.tie_eps {
                    cache.apply_reassignment(i, &best_column);
                    assigned[i] = k;
                }
            }
        }
        cache.refresh();
        let end = cache.objective();
        history.push(end);
        if end - start < config.convergence_eps {
            converged = true;
            break;
        }
    }
    debug_assert!(cache.check_consistency(&problem.sd, 1e-9).is_ok());

    Ok(AssignmentState {
        choice: problem.to_assignment(&assigned),
        objective: cache.objective(),
        epoch_history: history,
        converged,
    })
}

/// Runs `config.restarts` random initializations and keeps the best result.
/// Returns the winner and every restart's final objective.
pub fn solve_partition(
    problem: &AssignmentProblem,
    pins: &PinSet,
    config: &SolverConfig,
    partition_index: usize,
) -> Result<(AssignmentState, Vec<f64>)> {
    config.validate()?;
    let candidates = problem.candidate_map();
    let mut best: Option<AssignmentState> = None;
    let mut finals = Vec::with_capacity(config.restarts);
    for r in 0..config.restarts {
        let mut rng = partition_rng(config.seed, partition_index, r);
        let init = random_init(&candidates, pins, &mut rng)?;
        let state = stage1_optimize(problem, &init, pins, config)?;
        finals.push(state.objective);
        if best.as_ref().is_none_or(|b| state.objective > b.objective) {
            best = Some(state);
        }
    }
    Ok((best.expect("at least one restart"), finals))
}

/// Objective gained by the best single-segment move, if any improves.
pub fn best_single_move_gain(
    problem: &AssignmentProblem,
    state: &AssignmentState,
    pins: &PinSet,
    policy: DiagonalPolicy,
) -> Result<f64> {
    let assigned = problem.to_local(&state.choice)?;
    let base = crate::identity::corr_objective(&problem.sd, &problem.face_matrix_local(&assigned), policy)?;
    let mut best = 0.0f64;
    for i in 0..problem.len() {
        if pins.contains_key(&problem.segment_ids[i]) {
            continue;
        }
        for &k in &problem.candidates[i] {
            if k == assigned[i] {
                continue;
            }
            let mut moved = assigned.clone();
            moved[i] = k;
            let value = crate::identity::corr_objective(&problem.sd, &problem.face_matrix_local(&moved), policy)?;
            best = best.max(value - base);
        }
    }
    Ok(best)
}
