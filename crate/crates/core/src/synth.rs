//! Synthetic speech/face scenarios with known answers, and an exhaustive
//! search over small assignment spaces.
//!
//! Every character owns a unit direction in the audio space and one in the
//! visual space. Segment and track embeddings are those directions with
//! isotropic gaussian noise added and renormalized, so `audio_noise` and
//! `visual_noise` are roughly the norm of the perturbation.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::{corr_objective, cosine_distance_slices, DiagonalPolicy};
use crate::io::{label_records, segment_records, track_records, write_jsonl};
use crate::solver::{AssignmentProblem, AssignmentState, PinSet};
use crate::types::{
    build_candidate_map, CandidateMap, Choice, EmbeddingVector, FaceTrack, GroundTruth, SpeechSegment, TimeInterval,
};

/// Largest search space the oracle will enumerate.
pub const ORACLE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Characters 0 and 1 are only ever seen together, and each one's face
    /// geometry mimics the other's voice geometry.
    ColumbiaDegenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub num_characters: usize,
    pub num_segments: usize,
    pub candidates_per_segment: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub audio_noise: f64,
    pub visual_noise: f64,
    pub offscreen_fraction: f64,
    pub background_face_fraction: f64,
    pub num_background_characters: usize,
    /// Minimum cosine distance between any two identity directions.
    pub min_separation: f64,
    pub seed: u64,
    pub preset: Option<Preset>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_characters: 4,
            num_segments: 100,
            candidates_per_segment: 3,
            audio_dim: 32,
            visual_dim: 32,
            audio_noise: 0.0,
            visual_noise: 0.0,
            offscreen_fraction: 0.0,
            background_face_fraction: 0.5,
            num_background_characters: 3,
            min_separation: 0.5,
            seed: 0,
            preset: None,
        }
    }
}

impl ScenarioConfig {
    /// Two inseparable characters among `num_characters`, no off-screen speech.
    pub fn columbia_degenerate(seed: u64) -> Self {
        Self {
            num_characters: 5,
            num_segments: 150,
            candidates_per_segment: 3,
            audio_noise: 0.2,
            visual_noise: 0.2,
            seed,
            preset: Some(Preset::ColumbiaDegenerate),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.num_characters < 2 {
            return fail(format!("need at least 2 characters, got {}", self.num_characters));
        }
        if self.num_segments < 3 {
            return fail(format!("need at least 3 segments, got {}", self.num_segments));
        }
        if self.candidates_per_segment < 1 {
            return fail("candidates_per_segment must be >= 1".into());
        }
        if self.audio_dim < 2 || self.visual_dim < 2 {
            return fail("embedding dimensions must be >= 2".into());
        }
        if !(self.audio_noise >= 0.0 && self.visual_noise >= 0.0) {
            return fail("noise levels must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.offscreen_fraction) {
            return fail("offscreen_fraction must lie in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.background_face_fraction) {
            return fail("background_face_fraction must lie in [0, 1)".into());
        }
        if !(0.0..=2.0).contains(&self.min_separation) {
            return fail("min_separation must lie in [0, 2]".into());
        }
        let distractor_pool = self.num_characters - 1 + self.num_background_characters;
        if self.candidates_per_segment > distractor_pool {
            return fail(format!(
                "{} candidates need at least that many distractor identities, have {distractor_pool}",
                self.candidates_per_segment
            ));
        }
        if self.background_face_fraction > 0.0 && self.num_background_characters == 0 {
            return fail("background faces requested but num_background_characters is 0".into());
        }
        if self.preset == Some(Preset::ColumbiaDegenerate)
            && (self.num_characters < 3 || self.candidates_per_segment < 2)
        {
            return fail("columbia preset needs >= 3 characters and >= 2 candidates".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub config: ScenarioConfig,
    pub segments: Vec<SpeechSegment>,
    pub tracks: Vec<FaceTrack>,
    pub candidates: CandidateMap,
    pub ground_truth: GroundTruth,
    /// Speaking character of each segment.
    pub segment_character: BTreeMap<String, String>,
    /// Identity shown by each track, e.g. `c2` or `bg0`.
    pub track_character: BTreeMap<String, String>,
}

fn character_label(id: usize, speaking: usize) -> String {
    if id < speaking {
        format!("c{id}")
    } else {
        format!("bg{}", id - speaking)
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Identity directions. With `count <= dim` they form a random orthonormal
/// frame, so every pair sits at cosine distance 1 in both modalities and a
/// clean scenario's face matrix equals its speech matrix under the true
/// assignment. Otherwise directions are rejection-sampled at `min_sep`.
fn separated_directions(rng: &mut ChaCha8Rng, count: usize, dim: usize, min_sep: f64) -> Result<Vec<Vec<f64>>> {
    if count <= dim {
        return Ok(random_orthonormal(rng, count, dim));
    }
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while dirs.len() < count {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::InvalidConfig(format!(
                "could not place {count} directions in {dim} dimensions with separation {min_sep}"
            )));
        }
        let cand = normalize(gaussian_vec(rng, dim));
        if dirs
            .iter()
            .all(|d| cosine_distance_slices(d, &cand).is_ok_and(|dist| dist >= min_sep))
        {
            dirs.push(cand);
        }
    }
    Ok(dirs)
}

/// Gram-Schmidt on Gaussian draws; redraws the rare near-dependent vector.
fn random_orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(rng, dim);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(normalize(v));
        }
    }
    basis
}

/// Unit vector at cosine distance `dist` from unit `anchor`.
fn direction_near(rng: &mut ChaCha8Rng, anchor: &[f64], dist: f64) -> Vec<f64> {
    let cos = 1.0 - dist;
    let mut orth = gaussian_vec(rng, anchor.len());
    let dot: f64 = orth.iter().zip(anchor).map(|(a, b)| a * b).sum();
    orth.iter_mut().zip(anchor).for_each(|(o, a)| *o -= dot * a);
    let orth = normalize(orth);
    let sin = (1.0 - cos * cos).sqrt();
    anchor.iter().zip(&orth).map(|(a, o)| cos * a + sin * o).collect()
}

fn perturb(rng: &mut ChaCha8Rng, mean: &[f64], sigma: f64) -> Result<EmbeddingVector> {
    if sigma == 0.0 {
        return EmbeddingVector::new(mean.to_vec());
    }
    let scale = sigma / (mean.len() as f64).sqrt();
    let noisy: Vec<f64> = mean
        .iter()
        .map(|m| m + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    EmbeddingVector::new(normalize(noisy))
}

/// Cosine distance between the lure voice/face and its anchor in the
/// columbia preset.
const LURE_DISTANCE: f64 = 0.6;

/// Generates a scenario; identical configs give identical scenarios.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<SyntheticScenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config.num_characters;
    let b = config.num_background_characters;
    let k = config.candidates_per_segment;
    let columbia = config.preset == Some(Preset::ColumbiaDegenerate);

    let mut voices = separated_directions(&mut rng, c, config.audio_dim, config.min_separation)?;
    let mut faces = separated_directions(&mut rng, c + b, config.visual_dim, config.min_separation)?;
    if columbia {
        // Voice of 0 sits near voice of 2 while face of 1 sits near face of 2,
        // so the swapped pairing fits the audio structure better.
        voices[0] = direction_near(&mut rng, &voices[2], LURE_DISTANCE);
        faces[1] = direction_near(&mut rng, &faces[2], LURE_DISTANCE);
    }

    let mut segments = Vec::with_capacity(config.num_segments);
    let mut tracks = Vec::with_capacity(config.num_segments * k);
    let mut ground_truth = GroundTruth::new();
    let mut segment_character = BTreeMap::new();
    let mut track_character = BTreeMap::new();

    for n in 0..config.num_segments {
        let speaker = rng.random_range(0..c);
        let offscreen = !columbia && rng.random::<f64>() < config.offscreen_fraction;
        let start = n as f64;
        let interval = TimeInterval::new(start, start + 0.8)?;
        let seg_id = format!("s{n:05}");
        segments.push(SpeechSegment {
            id: seg_id.clone(),
            interval,
            embedding: perturb(&mut rng, &voices[speaker], config.audio_noise)?,
        });
        segment_character.insert(seg_id.clone(), character_label(speaker, c));

        let mut shown: Vec<usize> = Vec::with_capacity(k);
        if !offscreen {
            shown.push(speaker);
        }
        if columbia {
            if speaker <= 1 {
                shown.push(1 - speaker);
            }
            // Characters 0 and 1 never appear as distractors elsewhere.
            fill_distractors(
                &mut rng,
                &mut shown,
                k,
                speaker,
                c,
                b,
                config.background_face_fraction,
                2,
            );
        } else {
            fill_distractors(
                &mut rng,
                &mut shown,
                k,
                speaker,
                c,
                b,
                config.background_face_fraction,
                0,
            );
        }
        shown.shuffle(&mut rng);

        let mut true_track = None;
        for (slot, &who) in shown.iter().enumerate() {
            let id = format!("t{n:05}_{slot}");
            if who == speaker && !offscreen {
                true_track = Some(id.clone());
            }
            tracks.push(FaceTrack {
                id: id.clone(),
                interval,
                embedding: perturb(&mut rng, &faces[who], config.visual_noise)?,
                frame_count: None,
            });
            track_character.insert(id, character_label(who, c));
        }
        ground_truth.insert(seg_id, Choice::from_option(true_track));
    }

    let candidates = build_candidate_map(&segments, &tracks, 0.0)?;
    Ok(SyntheticScenario {
        config: config.clone(),
        segments,
        tracks,
        candidates,
        ground_truth,
        segment_character,
        track_character,
    })
}

/// Appends distinct distractor identities (never the speaker) until
/// `shown` holds `k` entries. Speaking characters below `lowest_speaking`
/// are excluded.
#[allow(clippy::too_many_arguments)]
fn fill_distractors(
    rng: &mut ChaCha8Rng,
    shown: &mut Vec<usize>,
    k: usize,
    speaker: usize,
    speaking: usize,
    background: usize,
    background_fraction: f64,
    lowest_speaking: usize,
) {
    let mut others: Vec<usize> = (lowest_speaking..speaking)
        .filter(|&x| x != speaker && !shown.contains(&x))
        .collect();
    let mut extras: Vec<usize> = (speaking..speaking + background).collect();
    others.shuffle(rng);
    extras.shuffle(rng);
    while shown.len() < k {
        let want_background = rng.random::<f64>() < background_fraction;
        let pick = match (want_background, extras.is_empty(), others.is_empty()) {
            (true, false, _) | (_, false, true) => extras.pop(),
            _ => others.pop(),
        };
        match pick {
            Some(p) => shown.push(p),
            None => break,
        }
    }
}

impl SyntheticScenario {
    /// Writes `segments.jsonl`, `tracks.jsonl`, `groundtruth.jsonl`,
    /// `scenario.json` and `identities.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_jsonl(&dir.join("segments.jsonl"), &segment_records(&self.segments))?;
        write_jsonl(&dir.join("tracks.jsonl"), &track_records(&self.tracks))?;
        write_jsonl(&dir.join("groundtruth.jsonl"), &label_records(&self.ground_truth))?;
        let cfg = dir.join("scenario.json");
        let body = serde_json::to_string_pretty(&self.config).expect("config serializes");
        std::fs::write(&cfg, body + "\n").map_err(io_err(&cfg))?;
        let ids = dir.join("identities.json");
        let body = serde_json::to_string_pretty(&serde_json::json!({
            "segments": self.segment_character,
            "tracks": self.track_character,
        }))
        .expect("identities serialize");
        std::fs::write(&ids, body + "\n").map_err(io_err(&ids))?;
        Ok(())
    }

    pub fn track_lookup(&self) -> HashMap<&str, &FaceTrack> {
        self.tracks.iter().map(|t| (t.id.as_str(), t)).collect()
    }

    /// Assignment problem over every segment, unpartitioned.
    pub fn problem(&self) -> Result<AssignmentProblem> {
        let refs: Vec<&SpeechSegment> = self.segments.iter().collect();
        AssignmentProblem::new(&refs, &self.candidates, &self.track_lookup())
    }

    /// Pins a random `fraction` of each character's on-screen segments to
    /// their true track (at least one per character that has any).
    pub fn select_pins(&self, fraction: f64, seed: u64) -> PinSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_char: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
        for (seg, truth) in &self.ground_truth {
            if let Choice::Track(t) = truth {
                by_char
                    .entry(self.segment_character[seg].as_str())
                    .or_default()
                    .push((seg, t));
            }
        }
        let mut pins = PinSet::new();
        for list in by_char.values() {
            let count = ((list.len() as f64 * fraction).ceil() as usize).clamp(1, list.len());
            for (seg, track) in list.choose_multiple(&mut rng, count) {
                pins.insert((*seg).to_owned(), (*track).to_owned());
            }
        }
        pins
    }
}

/// Exhaustive maximizer of the objective over every joint assignment. Ties
/// go to the lexicographically smallest track-id tuple.
pub fn brute_force_oracle(problem: &AssignmentProblem, policy: DiagonalPolicy) -> Result<(AssignmentState, f64)> {
    let space = problem.search_space();
    if space > ORACLE_LIMIT {
        return Err(Error::TooLarge(space));
    }
    let radices: Vec<usize> = (0..problem.len())
        .map(|i| problem.candidate_tracks(i).count())
        .collect();
    let local_lists: Vec<Vec<String>> = (0..problem.len())
        .map(|i| problem.candidate_tracks(i).map(str::to_owned).collect())
        .collect();
    let total = space as usize;
    let decode = |mut idx: usize| {
        let mut digits = vec![0usize; radices.len()];
        for (d, &r) in digits.iter_mut().zip(&radices).rev() {
            *d = idx % r;
            idx /= r;
        }
        digits
    };
    let assignment_of = |digits: &[usize]| -> crate::solver::Assignment {
        problem
            .segment_ids()
            .iter()
            .zip(digits)
            .enumerate()
            .map(|(i, (s, &d))| (s.clone(), Choice::Track(local_lists[i][d].clone())))
            .collect()
    };
    let score = |idx: usize| -> Result<f64> {
        let fd = problem.face_matrix(&assignment_of(&decode(idx)))?;
        corr_objective(problem.speech_matrix(), &fd, policy)
    };

    const CHUNK: usize = 4096;
    let chunk_bests = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut best: Option<(usize, f64)> = None;
            for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
                let v = score(idx)?;
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((idx, v));
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    let (idx, value) = chunk_bests
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
            Some((_, b)) if v <= b => acc,
            _ => Some((i, v)),
        })
        .expect("search space is non-empty");
    let state = AssignmentState {
        choice: assignment_of(&decode(idx)),
        objective: value,
        epoch_history: vec![value],
        converged: true,
    };
    Ok((state, value))
}
