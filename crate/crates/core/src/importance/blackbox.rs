use serde::{Deserialize, Serialize};

use crate::audio::{build_mask, zero_mask, Segment, Waveform, DEFAULT_TAPER_SHAPE};
use super::gradcam::merge_segments;
use crate::error::{Error, Result};
use crate::model::ModelHandle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlackBoxConfig {
    pub chunk_seconds: f64,
    pub subdivisions: usize,
    /// Refinement rounds `T`. Off by default: attacks need gaps that span
    /// whole events, which coarse chunks provide.
    pub rounds: usize,
    pub top_r: usize,
    pub query_budget: usize,
    pub taper_shape: f64,
    /// Sub-segments shorter than this are not produced; their parent is frozen.
    pub min_segment_seconds: f64,
}

impl Default for BlackBoxConfig {
    fn default() -> Self {
        Self {
            chunk_seconds: 0.5,
            subdivisions: 4,
            rounds: 0,
            top_r: 3,
            query_budget: 1000,
            taper_shape: DEFAULT_TAPER_SHAPE,
            min_segment_seconds: 0.025,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSegment {
    pub segment: Segment,
    /// Loss increase per second of masked audio.
    pub score: f64,
    pub level: usize,
    /// Too short to split further.
    pub frozen: bool,
}

/// Ranked segments, most important first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ReportRecord", try_from = "ReportRecord")]
pub struct ImportanceReport {
    pub ranked: Vec<ScoredSegment>,
    pub queries_used: usize,
    pub baseline_loss: f64,
    pub sample_rate: u32,
}

impl ImportanceReport {
    pub fn segments(&self) -> Vec<Segment> {
        self.ranked.iter().map(|s| s.segment).collect()
    }

    /// The ranked segments with touching ones merged into single gaps,
    /// ordered by the rank of each gap's best member.
    pub fn gaps(&self) -> Vec<Segment> {
        let ranked = self.segments();
        let mut gaps = merge_segments(ranked.clone());
        gaps.sort_by_key(|g| ranked.iter().position(|s| g.overlap(s) > 0));
        gaps
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportRecord {
    sample_rate: u32,
    queries_used: usize,
    baseline_loss: f64,
    ranked: Vec<SegmentRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRecord {
    start: usize,
    end: usize,
    start_seconds: f64,
    end_seconds: f64,
    score: f64,
    level: usize,
    frozen: bool,
}

impl From<ImportanceReport> for ReportRecord {
    fn from(r: ImportanceReport) -> Self {
        let rate = r.sample_rate as f64;
        Self {
            sample_rate: r.sample_rate,
            queries_used: r.queries_used,
            baseline_loss: r.baseline_loss,
            ranked: r
                .ranked
                .into_iter()
                .map(|s| SegmentRecord {
                    start: s.segment.start,
                    end: s.segment.end,
                    start_seconds: s.segment.start as f64 / rate,
                    end_seconds: s.segment.end as f64 / rate,
                    score: s.score,
                    level: s.level,
                    frozen: s.frozen,
                })
                .collect(),
        }
    }
}

impl TryFrom<ReportRecord> for ImportanceReport {
    type Error = String;

    fn try_from(r: ReportRecord) -> std::result::Result<Self, String> {
        let ranked = r
            .ranked
            .into_iter()
            .map(|s| {
                if s.start >= s.end {
                    return Err(format!("empty segment [{}, {})", s.start, s.end));
                }
                Ok(ScoredSegment {
                    segment: Segment::new(s.start, s.end),
                    score: s.score,
                    level: s.level,
                    frozen: s.frozen,
                })
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            ranked,
            queries_used: r.queries_used,
            baseline_loss: r.baseline_loss,
            sample_rate: r.sample_rate,
        })
    }
}

/// Contiguous chunks of `chunk_seconds`; a shorter remainder forms the last chunk.
pub fn coarse_partition(x: &Waveform, chunk_seconds: f64) -> Result<Vec<Segment>> {
    if !(chunk_seconds > 0.0) {
        return Err(Error::InvalidParameter(format!("chunk length must be positive, got {chunk_seconds}")));
    }
    let chunk = ((chunk_seconds * x.sample_rate as f64).round() as usize).max(1);
    Ok((0..x.len())
        .step_by(chunk)
        .map(|start| Segment::new(start, (start + chunk).min(x.len())))
        .collect())
}

/// Loss increase per second when `seg` is zero-masked. One model query.
pub fn segment_score(
    m: &ModelHandle,
    x: &Waveform,
    y: usize,
    seg: Segment,
    baseline_loss: f64,
    taper_shape: f64,
) -> Result<ScoredSegment> {
    seg.check_bounds(x.len())?;
    let mask = build_mask(&[seg], x.len(), taper_shape)?;
    let loss = m.ce_loss(&zero_mask(x, &mask)?, y)?;
    Ok(ScoredSegment {
        segment: seg,
        score: (loss - baseline_loss) / seg.duration_seconds(x.sample_rate),
        level: 0,
        frozen: false,
    })
}

/// Sorts by descending score; equal scores keep the earlier start first.
pub fn rank(segments: &mut [ScoredSegment]) {
    segments.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.segment.start.cmp(&b.segment.start))
    });
}

/// One refinement step: the highest-scoring unfrozen segment is replaced by
/// `subdivisions` scored sub-segments at the next level.
///
/// Candidates whose pieces would fall below `min_segment` samples are frozen
/// instead and the next best candidate is tried. Returns whether a split
/// happened; a split costs exactly `subdivisions` queries, freezing costs none.
#[allow(clippy::too_many_arguments)]
pub fn refine(
    state: &mut Vec<ScoredSegment>,
    m: &ModelHandle,
    x: &Waveform,
    y: usize,
    subdivisions: usize,
    baseline_loss: f64,
    taper_shape: f64,
    min_segment: usize,
) -> Result<bool> {
    if state.is_empty() {
        return Err(Error::InvalidParameter("refinement needs a non-empty state".into()));
    }
    if subdivisions < 2 {
        return Err(Error::InvalidParameter(format!("subdivisions must be at least 2, got {subdivisions}")));
    }
    loop {
        let best = state
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.frozen)
            .min_by(|(_, a), (_, b)| {
                b.score
                    .total_cmp(&a.score)
                    .then(a.segment.start.cmp(&b.segment.start))
            })
            .map(|(i, _)| i);
        let Some(index) = best else {
            return Ok(false);
        };
        let parent = state[index].clone();
        if parent.segment.len() / subdivisions < min_segment.max(1) {
            state[index].frozen = true;
            continue;
        }
        let children = parent
            .segment
            .split(subdivisions)
            .into_iter()
            .map(|seg| {
                segment_score(m, x, y, seg, baseline_loss, taper_shape).map(|s| ScoredSegment {
                    level: parent.level + 1,
                    ..s
                })
            })
            .collect::<Result<Vec<_>>>()?;
        state.splice(index..=index, children);
        return Ok(true);
    }
}

/// Coarse pass, up to `rounds` refinements, then the `top_r` best segments.
///
/// Uses `1 + N + rounds * subdivisions` queries when the budget allows;
/// refinement stops early rather than overrun the budget.
pub fn analyze_blackbox(m: &ModelHandle, x: &Waveform, y: usize, cfg: &BlackBoxConfig) -> Result<ImportanceReport> {
    if cfg.top_r == 0 {
        return Err(Error::InvalidParameter("top_r must be at least 1".into()));
    }
    let chunks = coarse_partition(x, cfg.chunk_seconds)?;
    let required = 1 + chunks.len();
    if cfg.query_budget < required {
        return Err(Error::InsufficientBudget {
            budget: cfg.query_budget,
            required,
        });
    }
    let start_queries = m.queries();
    let baseline_loss = m.ce_loss(x, y)?;
    let mut state = chunks
        .into_iter()
        .map(|seg| segment_score(m, x, y, seg, baseline_loss, cfg.taper_shape))
        .collect::<Result<Vec<_>>>()?;
    let min_segment = (cfg.min_segment_seconds * x.sample_rate as f64).round() as usize;
    let mut used = required;
    for _ in 0..cfg.rounds {
        if used + cfg.subdivisions > cfg.query_budget {
            break;
        }
        if !refine(&mut state, m, x, y, cfg.subdivisions, baseline_loss, cfg.taper_shape, min_segment)? {
            break;
        }
        used += cfg.subdivisions;
    }
    debug_assert_eq!(m.queries() - start_queries, used);
    rank(&mut state);
    state.truncate(cfg.top_r);
    Ok(ImportanceReport {
        ranked: state,
        queries_used: used,
        baseline_loss,
        sample_rate: x.sample_rate,
    })
}
