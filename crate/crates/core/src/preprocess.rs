//! Proxy speaker-homogeneous segments from voice-activity regions: cut at
//! shot boundaries, then cap the duration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, SegmentRecord};
use crate::types::TimeInterval;

/// Default duration cap in seconds.
pub const DEFAULT_MAX_DURATION: f64 = 1.0;

/// Slack for treating a remainder as equal to the cap.
const DURATION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawVadRegion {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ShotBoundaryList {
    pub boundaries: Vec<f64>,
}

impl ShotBoundaryList {
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::InvalidParameter(
                "shot boundaries must be finite and >= 0".into(),
            ));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "shot boundaries must be strictly increasing".into(),
            ));
        }
        Ok(Self { boundaries })
    }
}

pub fn validate_regions(regions: &[RawVadRegion]) -> Result<Vec<TimeInterval>> {
    let intervals = regions
        .iter()
        .map(|r| TimeInterval::new(r.start, r.end))
        .collect::<Result<Vec<_>>>()?;
    if intervals.windows(2).any(|w| w[1].start < w[0].end) {
        return Err(Error::InvalidParameter(
            "voice regions must be sorted and non-overlapping".into(),
        ));
    }
    Ok(intervals)
}

/// Cuts each region at every boundary strictly inside it.
pub fn split_by_boundaries(regions: &[TimeInterval], boundaries: &ShotBoundaryList) -> Vec<TimeInterval> {
    let mut out = Vec::with_capacity(regions.len());
    for region in regions {
        let mut start = region.start;
        let first = boundaries.boundaries.partition_point(|&b| b <= region.start);
        for &b in boundaries.boundaries[first..].iter().take_while(|&&b| b < region.end) {
            out.push(TimeInterval { start, end: b });
            start = b;
        }
        out.push(TimeInterval { start, end: region.end });
    }
    out
}

/// Splits each interval left to right into `max_dur` chunks, remainder last.
pub fn split_max_duration(intervals: &[TimeInterval], max_dur: f64) -> Result<Vec<TimeInterval>> {
    if !(max_dur > 0.0 && max_dur.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "max duration must be > 0, got {max_dur}"
        )));
    }
    let mut out = Vec::new();
    for iv in intervals {
        let mut k = 0usize;
        loop {
            let start = iv.start + k as f64 * max_dur;
            if iv.end - start <= max_dur + DURATION_EPS {
                out.push(TimeInterval { start, end: iv.end });
                break;
            }
            let end = iv.start + (k + 1) as f64 * max_dur;
            out.push(TimeInterval { start, end });
            k += 1;
        }
    }
    Ok(out)
}

/// Drops intervals shorter than `min_dur`.
pub fn filter_min_duration(intervals: Vec<TimeInterval>, min_dur: f64) -> Vec<TimeInterval> {
    intervals.into_iter().filter(|i| i.duration() >= min_dur).collect()
}

/// Boundary split, duration cap and minimum-length filter in one pass.
pub fn segment_regions(
    regions: &[RawVadRegion],
    boundaries: &ShotBoundaryList,
    max_dur: f64,
    min_dur: f64,
) -> Result<Vec<TimeInterval>> {
    let regions = validate_regions(regions)?;
    let cut = split_by_boundaries(&regions, boundaries);
    Ok(filter_min_duration(split_max_duration(&cut, max_dur)?, min_dur))
}

pub fn load_vad(path: &Path) -> Result<Vec<RawVadRegion>> {
    Ok(read_jsonl::<RawVadRegion>(path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn load_shots(path: &Path) -> Result<ShotBoundaryList> {
    let body = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: ShotBoundaryList = serde_json::from_str(&body).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    ShotBoundaryList::new(raw.boundaries)
}

/// Segment records without embeddings, ids `seg_00000` upward.
pub fn to_segment_records(intervals: &[TimeInterval]) -> Vec<SegmentRecord> {
    intervals
        .iter()
        .enumerate()
        .map(|(i, iv)| SegmentRecord {
            id: format!("seg_{i:05}"),
            start: iv.start,
            end: iv.end,
            embedding: None,
        })
        .collect()
}
