//! From a probability grid to time-stamped proposals.
//!
//! 1. [`summarize_grid`] averages the `K` estimates of every unit.
//! 2. [`detect_candidates`] marks start and end units by voting and by peak
//!    picking; the two rules are merged by union.
//! 3. [`pair_candidates`] matches every start with every end at or after it.
//! 4. [`refine_boundaries`] converts unit pairs to seconds, either at the
//!    unit middles or at the argmax frame of the linearly interpolated
//!    boundary probability.

use alloc::vec::Vec;

use crate::math::floor;
use crate::network::{Channel, ProbabilityGrid};

/// Per-unit averages of the valid grid estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitProbSummary {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub action: Vec<f64>,
}

impl UnitProbSummary {
    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    pub fn channel(&self, c: Channel) -> &[f64] {
        match c {
            Channel::Start => &self.start,
            Channel::End => &self.end,
            Channel::Action => &self.action,
        }
    }
}

/// Unit `u` averages the cells `[u + k][k]` with `u + k < T`. Column 0 is
/// always valid, so no unit is left without an estimate.
pub fn summarize_grid(grid: &ProbabilityGrid) -> UnitProbSummary {
    let avg = |c: Channel| -> Vec<f64> {
        (0..grid.steps())
            .map(|u| {
                let (sum, n) = grid.estimates(c, u).fold((0.0, 0usize), |(s, n), p| (s + p, n + 1));
                sum / n as f64
            })
            .collect()
    };
    UnitProbSummary { start: avg(Channel::Start), end: avg(Channel::End), action: avg(Channel::Action) }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Candidates {
    /// Sorted, without duplicates.
    pub starts: Vec<usize>,
    pub ends: Vec<usize>,
}

/// Units with at least `votes` valid estimates above `thresh`.
pub fn voting_candidates(grid: &ProbabilityGrid, channel: Channel, votes: usize, thresh: f64) -> Vec<usize> {
    (0..grid.steps())
        .filter(|&u| grid.estimates(channel, u).filter(|&p| p > thresh).count() >= votes)
        .collect()
}

/// Units whose average strictly exceeds every existing neighbour. A single
/// unit has no neighbour and is never a peak.
pub fn peak_candidates(avg: &[f64]) -> Vec<usize> {
    let n = avg.len();
    (0..n)
        .filter(|&u| {
            let left = u.checked_sub(1).map(|l| avg[u] > avg[l]);
            let right = (u + 1 < n).then(|| avg[u] > avg[u + 1]);
            match (left, right) {
                (None, None) => false,
                (l, r) => l.unwrap_or(true) && r.unwrap_or(true),
            }
        })
        .collect()
}

pub fn detect_candidates(grid: &ProbabilityGrid, summary: &UnitProbSummary, votes: usize, thresh: f64) -> Candidates {
    let merge = |channel: Channel| {
        let mut units = voting_candidates(grid, channel, votes, thresh);
        units.extend(peak_candidates(summary.channel(channel)));
        units.sort_unstable();
        units.dedup();
        units
    };
    Candidates { starts: merge(Channel::Start), ends: merge(Channel::End) }
}

/// Every `(start, end)` with `start ≤ end` and, when `max_units` is set,
/// `end − start + 1 ≤ max_units`. Ordered by start, then end.
pub fn pair_candidates(starts: &[usize], ends: &[usize], max_units: Option<usize>) -> Vec<(usize, usize)> {
    let mut s: Vec<usize> = starts.to_vec();
    let mut e: Vec<usize> = ends.to_vec();
    s.sort_unstable();
    s.dedup();
    e.sort_unstable();
    e.dedup();
    let mut pairs = Vec::new();
    for &a in &s {
        for &b in e.iter().filter(|&&b| b >= a) {
            if max_units.is_some_and(|cap| b - a + 1 > cap) {
                break;
            }
            pairs.push((a, b));
        }
    }
    pairs
}

/// Time of the middle frame of unit `u`: `(u·L + L/2) / fps`.
pub fn unit_to_time_middle(u: usize, unit_length: usize, fps: f64) -> f64 {
    (u as f64 * unit_length as f64 + unit_length as f64 / 2.0) / fps
}

/// Piecewise-linear interpolation of per-unit values anchored at the unit
/// middles, evaluated at a global frame position. Beyond the first and last
/// anchors the value is held constant.
pub fn interpolate_at(signal: &[f64], unit_length: usize, frame: f64) -> f64 {
    assert!(!signal.is_empty(), "cannot interpolate an empty signal");
    let len = unit_length as f64;
    let coord = (frame - len / 2.0) / len;
    if coord <= 0.0 {
        return signal[0];
    }
    let last = signal.len() - 1;
    if coord >= last as f64 {
        return signal[last];
    }
    let j = floor(coord) as usize;
    let w = coord - j as f64;
    signal[j] + (signal[j + 1] - signal[j]) * w
}

/// Frame offset within unit `u` where the interpolated signal peaks.
///
/// Ties go to the frame closest to the unit middle (`unit_length / 2`), then
/// to the lower index.
pub fn interpolate_keyframe(signal: &[f64], u: usize, unit_length: usize) -> usize {
    assert!(u < signal.len(), "unit {u} outside a signal of {} units", signal.len());
    let middle = unit_length / 2;
    let base = (u * unit_length) as f64;
    let mut best = middle;
    let mut best_value = interpolate_at(signal, unit_length, base + middle as f64);
    for f in 0..unit_length {
        let v = interpolate_at(signal, unit_length, base + f as f64);
        let closer = f.abs_diff(middle) < best.abs_diff(middle)
            || (f.abs_diff(middle) == best.abs_diff(middle) && f < best);
        if v > best_value || (v == best_value && closer) {
            best = f;
            best_value = v;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Middle frame of the boundary units.
    Middle,
    /// Argmax frame of the interpolated start/end probability.
    Interpolated,
}

pub fn refine_boundaries(
    pair: (usize, usize),
    summary: &UnitProbSummary,
    unit_length: usize,
    fps: f64,
    mode: BoundaryMode,
) -> (f64, f64) {
    let (ui, uj) = pair;
    assert!(ui <= uj, "start unit {ui} after end unit {uj}");
    match mode {
        BoundaryMode::Middle => {
            (unit_to_time_middle(ui, unit_length, fps), unit_to_time_middle(uj, unit_length, fps))
        }
        BoundaryMode::Interpolated => {
            let sk = interpolate_keyframe(&summary.start, ui, unit_length);
            let ek = interpolate_keyframe(&summary.end, uj, unit_length);
            (((ui * unit_length + sk) as f64) / fps, ((uj * unit_length + ek) as f64) / fps)
        }
    }
}

/// Timing information of the video a grid belongs to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VideoMeta {
    pub fps: f64,
    pub unit_length: usize,
    pub num_units: usize,
}

impl VideoMeta {
    pub fn duration(&self) -> f64 {
        (self.num_units * self.unit_length) as f64 / self.fps
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub start_unit: usize,
    pub end_unit: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub p_start_avg: f64,
    pub p_end_avg: f64,
    /// Ranker score; 1 until a ranker has run.
    pub phi: f64,
    pub final_score: f64,
    pub label: Option<usize>,
}

impl Proposal {
    pub fn interval(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProposalConfig {
    pub votes: usize,
    pub thresh: f64,
    pub max_duration_units: Option<usize>,
    pub mode: BoundaryMode,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig { votes: 1, thresh: 0.3, max_duration_units: None, mode: BoundaryMode::Interpolated }
    }
}

/// Runs summarise → detect → pair → refine. Pairs whose refined interval
/// collapses (`t_start ≥ t_end`) are dropped. Scores start as
/// `p_start_avg · p_end_avg` with `phi = 1`.
pub fn generate_proposals(grid: &ProbabilityGrid, meta: &VideoMeta, cfg: &ProposalConfig) -> Vec<Proposal> {
    let summary = summarize_grid(grid);
    proposals_from_summary(grid, &summary, meta, cfg)
}

/// [`generate_proposals`] with a precomputed summary.
pub fn proposals_from_summary(
    grid: &ProbabilityGrid,
    summary: &UnitProbSummary,
    meta: &VideoMeta,
    cfg: &ProposalConfig,
) -> Vec<Proposal> {
    let cands = detect_candidates(grid, summary, cfg.votes, cfg.thresh);
    pair_candidates(&cands.starts, &cands.ends, cfg.max_duration_units)
        .into_iter()
        .filter_map(|(ui, uj)| {
            let (t_start, t_end) = refine_boundaries((ui, uj), summary, meta.unit_length, meta.fps, cfg.mode);
            (t_start < t_end).then(|| {
                let p_start_avg = summary.start[ui];
                let p_end_avg = summary.end[uj];
                Proposal {
                    start_unit: ui,
                    end_unit: uj,
                    t_start,
                    t_end,
                    p_start_avg,
                    p_end_avg,
                    phi: 1.0,
                    final_score: p_start_avg * p_end_avg,
                    label: None,
                }
            })
        })
        .collect()
}
