//! JSON-Lines readers and writers for segments, tracks, labels and
//! assignment outputs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{check_uniform, Choice, EmbeddingVector, FaceTrack, GroundTruth, SpeechSegment, TimeInterval};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: String,
    pub start: f64,
    pub end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: String,
    pub start: f64,
    pub end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_count: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub segment_id: String,
    pub track_id: Option<String>,
}

/// One line of `assignments.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub segment_id: String,
    pub track_id: Option<String>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub offscreen: bool,
    /// Stage-1 track of a segment that stage 2 moved off-screen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_track_id: Option<String>,
}

impl AssignmentRecord {
    pub fn choice(&self) -> Choice {
        if self.offscreen {
            Choice::OffScreen
        } else {
            Choice::from_option(self.track_id.clone())
        }
    }

    /// Track whose boxes carry this record's score when ranking.
    pub fn scored_track(&self) -> Option<&str> {
        self.track_id.as_deref().or(self.stage1_track_id.as_deref())
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses every non-blank line of a JSONL file.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn interval_for(id: &str, start: f64, end: f64) -> Result<TimeInterval> {
    TimeInterval::new(start, end).map_err(|e| Error::validation(id, e.to_string()))
}

fn embedding_for(id: &str, values: Vec<f64>) -> Result<EmbeddingVector> {
    EmbeddingVector::new(values).map_err(|e| Error::validation(id, e.to_string()))
}

pub fn segments_from_records(records: Vec<SegmentRecord>) -> Result<Vec<SpeechSegment>> {
    let mut segments = records
        .into_iter()
        .map(|r| {
            let interval = interval_for(&r.id, r.start, r.end)?;
            let values = r
                .embedding
                .ok_or_else(|| Error::validation(&r.id, "missing embedding"))?;
            let embedding = embedding_for(&r.id, values)?;
            Ok(SpeechSegment {
                id: r.id,
                interval,
                embedding,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    check_uniform(segments.iter().map(|s| (s.id.as_str(), &s.embedding)))?;
    segments.sort_by(|a, b| {
        a.interval
            .start
            .total_cmp(&b.interval.start)
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(segments)
}

pub fn tracks_from_records(records: Vec<TrackRecord>) -> Result<Vec<FaceTrack>> {
    let mut tracks = records
        .into_iter()
        .map(|r| {
            let interval = interval_for(&r.id, r.start, r.end)?;
            let (embedding, frame_count) = match (r.frames, r.embedding) {
                (Some(frames), _) if !frames.is_empty() => {
                    let emb = EmbeddingVector::mean_of(&frames).map_err(|e| Error::validation(&r.id, e.to_string()))?;
                    (emb, r.frame_count.or(Some(frames.len() as u32)))
                }
                (_, Some(values)) => (embedding_for(&r.id, values)?, r.frame_count),
                _ => return Err(Error::validation(&r.id, "missing embedding and frames")),
            };
            if frame_count == Some(0) {
                return Err(Error::validation(&r.id, "frame_count must be positive"));
            }
            Ok(FaceTrack {
                id: r.id,
                interval,
                embedding,
                frame_count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    check_uniform(tracks.iter().map(|t| (t.id.as_str(), &t.embedding)))?;
    tracks.sort_by(|a, b| {
        a.interval
            .start
            .total_cmp(&b.interval.start)
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(tracks)
}

fn strip_lines<T>(v: Vec<(usize, T)>) -> Vec<T> {
    v.into_iter().map(|(_, r)| r).collect()
}

/// Loads and validates `segments.jsonl`, sorted by start time.
pub fn load_segments(path: &Path) -> Result<Vec<SpeechSegment>> {
    segments_from_records(strip_lines(read_jsonl(path)?))
}

/// Loads and validates `tracks.jsonl`, sorted by start time.
pub fn load_tracks(path: &Path) -> Result<Vec<FaceTrack>> {
    tracks_from_records(strip_lines(read_jsonl(path)?))
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let mut gt = GroundTruth::new();
    for (_, rec) in read_jsonl::<LabelRecord>(path)? {
        let id = rec.segment_id.clone();
        if gt.insert(rec.segment_id, Choice::from_option(rec.track_id)).is_some() {
            return Err(Error::validation(id, "duplicate ground-truth entry"));
        }
    }
    Ok(gt)
}

/// Pins use the ground-truth schema but every entry must name a track.
pub fn load_pins(path: &Path) -> Result<crate::solver::PinSet> {
    let mut pins = crate::solver::PinSet::new();
    for (_, rec) in read_jsonl::<LabelRecord>(path)? {
        let track = rec
            .track_id
            .ok_or_else(|| Error::validation(&rec.segment_id, "pin must name a track"))?;
        if pins.insert(rec.segment_id.clone(), track).is_some() {
            return Err(Error::validation(rec.segment_id, "duplicate pin"));
        }
    }
    Ok(pins)
}

pub fn load_assignments(path: &Path) -> Result<Vec<AssignmentRecord>> {
    let records = strip_lines(read_jsonl::<AssignmentRecord>(path)?);
    let mut seen = std::collections::HashSet::new();
    for r in &records {
        if !seen.insert(r.segment_id.as_str()) {
            return Err(Error::validation(&r.segment_id, "duplicate assignment"));
        }
        if !r.score.is_finite() {
            return Err(Error::validation(&r.segment_id, "score must be finite"));
        }
    }
    Ok(records)
}

pub fn segment_records(segments: &[SpeechSegment]) -> Vec<SegmentRecord> {
    segments
        .iter()
        .map(|s| SegmentRecord {
            id: s.id.clone(),
            start: s.interval.start,
            end: s.interval.end,
            embedding: Some(s.embedding.as_slice().to_vec()),
        })
        .collect()
}

pub fn track_records(tracks: &[FaceTrack]) -> Vec<TrackRecord> {
    tracks
        .iter()
        .map(|t| TrackRecord {
            id: t.id.clone(),
            start: t.interval.start,
            end: t.interval.end,
            embedding: Some(t.embedding.as_slice().to_vec()),
            frames: None,
            frame_count: t.frame_count,
        })
        .collect()
}

pub fn label_records(labels: &GroundTruth) -> Vec<LabelRecord> {
    labels
        .iter()
        .map(|(seg, choice)| LabelRecord {
            segment_id: seg.clone(),
            track_id: choice.track().map(str::to_owned),
        })
        .collect()
}
