//! Domain types shared by every stage of the pipeline.
//!
//! All types are immutable once validated. Speech segments and face tracks
//! are matched by time overlap into a [`CandidateMap`], which is the search
//! space the solver works over.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite, non-zero identity embedding.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("embedding must have at least one value".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("embedding contains a non-finite value".into()));
        }
        let norm_sq: f64 = values.iter().map(|v| v * v).sum();
        if norm_sq <= 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(Self(values))
    }

    /// Arithmetic mean of per-frame embeddings.
    pub fn mean_of(frames: &[Vec<f64>]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidParameter("no frames to average".into()))?;
        let dim = first.len();
        let mut acc = vec![0.0; dim];
        for frame in frames {
            if frame.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: frame.len(),
                });
            }
            for (a, v) in acc.iter_mut().zip(frame) {
                *a += v;
            }
        }
        let n = frames.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Self::new(acc)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Half-open time span in seconds with `0 <= start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "interval bounds must be finite, got [{start}, {end}]"
            )));
        }
        if start < 0.0 || start >= end {
            return Err(Error::InvalidParameter(format!(
                "interval needs 0 <= start < end, got [{start}, {end}]"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Length of the intersection, zero when disjoint or touching.
    pub fn overlap(&self, other: &TimeInterval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechSegment {
    pub id: String,
    pub interval: TimeInterval,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceTrack {
    pub id: String,
    pub interval: TimeInterval,
    pub embedding: EmbeddingVector,
    pub frame_count: Option<u32>,
}

/// Active-speaker decision for one segment. Serializes as a track id or
/// `null`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Option<String>", into = "Option<String>")]
pub enum Choice {
    Track(String),
    OffScreen,
}

impl Choice {
    pub fn track(&self) -> Option<&str> {
        match self {
            Choice::Track(t) => Some(t),
            Choice::OffScreen => None,
        }
    }

    pub fn from_option(track: Option<String>) -> Self {
        track.map_or(Choice::OffScreen, Choice::Track)
    }
}

impl From<Option<String>> for Choice {
    fn from(track: Option<String>) -> Self {
        Choice::from_option(track)
    }
}

impl From<Choice> for Option<String> {
    fn from(choice: Choice) -> Self {
        match choice {
            Choice::Track(t) => Some(t),
            Choice::OffScreen => None,
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::Track(t) => f.write_str(t),
            Choice::OffScreen => f.write_str("OFF_SCREEN"),
        }
    }
}

/// Reference labels: segment id to true active-speaker track or off-screen.
pub type GroundTruth = BTreeMap<String, Choice>;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEntry {
    pub segment_id: String,
    /// Overlapping track ids, sorted.
    pub tracks: Vec<String>,
}

/// Segment to overlapping-track map. Entries follow segment temporal order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateMap {
    entries: Vec<CandidateEntry>,
    purged: Vec<String>,
    index: HashMap<String, usize>,
}

impl CandidateMap {
    /// Builds a map from explicit entries, preserving their order.
    pub fn from_entries(entries: Vec<CandidateEntry>, purged: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.tracks.is_empty() {
                return Err(Error::validation(&e.segment_id, "empty candidate list"));
            }
            if index.insert(e.segment_id.clone(), i).is_some() {
                return Err(Error::validation(&e.segment_id, "duplicate segment id"));
            }
        }
        Ok(Self { entries, purged, index })
    }

    pub fn entries(&self) -> &[CandidateEntry] {
        &self.entries
    }

    pub fn purged(&self) -> &[String] {
        &self.purged
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, segment_id: &str) -> Option<&[String]> {
        self.index.get(segment_id).map(|&i| self.entries[i].tracks.as_slice())
    }

    pub fn position(&self, segment_id: &str) -> Option<usize> {
        self.index.get(segment_id).copied()
    }
}

/// Collects for every segment the tracks overlapping it by more than
/// `min_overlap` seconds. Segments with no such track are purged.
pub fn build_candidate_map(segments: &[SpeechSegment], tracks: &[FaceTrack], min_overlap: f64) -> Result<CandidateMap> {
    if !(min_overlap >= 0.0 && min_overlap.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "min_overlap must be a finite value >= 0, got {min_overlap}"
        )));
    }
    let mut sorted_tracks: Vec<&FaceTrack> = tracks.iter().collect();
    sorted_tracks.sort_by(|a, b| a.id.cmp(&b.id));

    let mut order: Vec<&SpeechSegment> = segments.iter().collect();
    order.sort_by(|a, b| {
        a.interval
            .start
            .total_cmp(&b.interval.start)
            .then_with(|| a.id.cmp(&b.id))
    });

    let mut entries = Vec::new();
    let mut purged = Vec::new();
    for seg in order {
        let candidates: Vec<String> = sorted_tracks
            .iter()
            .filter(|t| t.interval.overlap(&seg.interval) > min_overlap)
            .map(|t| t.id.clone())
            .collect();
        if candidates.is_empty() {
            purged.push(seg.id.clone());
        } else {
            entries.push(CandidateEntry {
                segment_id: seg.id.clone(),
                tracks: candidates,
            });
        }
    }
    CandidateMap::from_entries(entries, purged)
}

/// Checks that ids are unique and embeddings share one dimension.
pub(crate) fn check_uniform<'a>(items: impl Iterator<Item = (&'a str, &'a EmbeddingVector)>) -> Result<Option<usize>> {
    let mut seen = HashSet::new();
    let mut dim = None;
    for (id, emb) in items {
        if !seen.insert(id) {
            return Err(Error::validation(id, "duplicate id"));
        }
        match dim {
            None => dim = Some(emb.dim()),
            Some(d) if d != emb.dim() => {
                return Err(Error::validation(
                    id,
                    format!("inconsistent embedding dimension: expected {d}, got {}", emb.dim()),
                ))
            }
            _ => {}
        }
    }
    Ok(dim)
}
