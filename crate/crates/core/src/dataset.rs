//! Video records, the synthetic corpus generator and per-unit training targets.
//!
//! A video is a sequence of *units*, each a block of `unit_length` frames
//! summarised by one feature row. Unit `u` spans the time interval
//! `[u·unit_length/fps, (u+1)·unit_length/fps)`.
//!
//! Boundary convention for targets: a start time lying exactly on a unit edge
//! belongs to the unit it opens, an end time lying exactly on an edge belongs
//! to the unit it closes (the earlier one). An annotation `[1.0 s, 3.0 s]` at
//! one unit per second therefore starts in unit 1 and ends in unit 2.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::linalg::Matrix;
use crate::math::{ceil, floor, snap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionInstance {
    pub label: usize,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub fps: f64,
    pub unit_length: usize,
    /// One row per unit.
    pub features: Matrix,
    pub annotations: Vec<ActionInstance>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetError {
    /// A record violates a structural invariant.
    Schema { video_id: String, reason: String },
    /// The synthetic generator cannot honour its configuration.
    Generation(String),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::Schema { video_id, reason } => {
                write!(f, "schema error in video `{video_id}`: {reason}")
            }
            DatasetError::Generation(reason) => write!(f, "generation error: {reason}"),
        }
    }
}

impl core::error::Error for DatasetError {}

impl VideoRecord {
    pub fn num_units(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Seconds covered by one unit.
    pub fn unit_duration(&self) -> f64 {
        self.unit_length as f64 / self.fps
    }

    /// Seconds covered by the whole feature sequence.
    pub fn duration(&self) -> f64 {
        self.num_units() as f64 * self.unit_duration()
    }

    /// Checks fps, unit length and every annotation against the record's
    /// duration. `num_classes`, when given, also bounds the labels.
    pub fn validate(&self, num_classes: Option<usize>) -> Result<(), DatasetError> {
        let fail = |reason: String| {
            Err(DatasetError::Schema { video_id: self.video_id.clone(), reason })
        };
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return fail(format!("fps must be positive, got {}", self.fps));
        }
        if self.unit_length == 0 {
            return fail("unit_length must be positive".into());
        }
        if self.features.as_slice().iter().any(|v| !v.is_finite()) {
            return fail("features contain non-finite values".into());
        }
        let duration = self.duration();
        for (i, a) in self.annotations.iter().enumerate() {
            if !(a.t_start >= 0.0 && a.t_start < a.t_end) {
                return fail(format!(
                    "annotation {i} has t_start {} not in [0, t_end {})",
                    a.t_start, a.t_end
                ));
            }
            if a.t_end > duration + 1e-9 {
                return fail(format!(
                    "annotation {i} ends at {} s beyond the video duration {} s",
                    a.t_end, duration
                ));
            }
            if let Some(n) = num_classes {
                if a.label >= n {
                    return fail(format!("annotation {i} label {} >= {n} classes", a.label));
                }
            }
        }
        Ok(())
    }

    /// Seconds to (fractional) unit coordinates.
    fn unit_coord(&self, t: f64) -> f64 {
        snap(t * self.fps / self.unit_length as f64)
    }
}

/// Binary per-unit targets for the three predicted channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitTargets {
    pub start: Vec<bool>,
    pub end: Vec<bool>,
    pub action: Vec<bool>,
}

impl UnitTargets {
    pub fn zeros(units: usize) -> Self {
        UnitTargets { start: vec![false; units], end: vec![false; units], action: vec![false; units] }
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }
}

/// Labels start, end and action units of `video`.
///
/// Each boundary is widened by `±expansion_ratio` unit durations; every unit
/// the widened boundary touches becomes positive. A unit is an action unit
/// when more than half of it is covered by an annotation.
pub fn assign_unit_targets(video: &VideoRecord, expansion_ratio: f64) -> UnitTargets {
    let units = video.num_units();
    let mut targets = UnitTargets::zeros(units);
    if units == 0 {
        return targets;
    }
    let last = (units - 1) as f64;
    let clamp_range = |lo: f64, hi: f64| -> Option<(usize, usize)> {
        let lo = lo.max(0.0);
        let hi = hi.min(last);
        (lo <= hi).then_some((lo as usize, hi as usize))
    };
    let r = expansion_ratio.max(0.0);

    for a in &video.annotations {
        let s = video.unit_coord(a.t_start);
        let e = video.unit_coord(a.t_end);

        // Start: units [u, u+1) touched by the closed interval [s - r, s + r].
        if let Some((lo, hi)) = clamp_range(floor(s - r), floor(s + r)) {
            targets.start[lo..=hi].iter_mut().for_each(|v| *v = true);
        }
        // End: units (u, u+1] touched by [e - r, e + r].
        if let Some((lo, hi)) = clamp_range(ceil(e - r) - 1.0, ceil(e + r) - 1.0) {
            targets.end[lo..=hi].iter_mut().for_each(|v| *v = true);
        }
        if let Some((lo, hi)) = clamp_range(floor(s), ceil(e) - 1.0) {
            for u in lo..=hi {
                let covered = (e.min(u as f64 + 1.0) - s.max(u as f64)).max(0.0);
                if covered > 0.5 {
                    targets.action[u] = true;
                }
            }
        }
    }
    targets
}

/// A fixed-length training slice of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingWindow {
    pub features: Matrix,
    pub targets: UnitTargets,
    /// `false` marks padded units that every loss ignores.
    pub valid: Vec<bool>,
}

/// Draws `window` consecutive units. Shorter videos are zero-padded at the
/// end and the padding is flagged invalid.
pub fn window_sample(
    video: &VideoRecord,
    targets: &UnitTargets,
    window: usize,
    rng: &mut crate::Rng,
) -> TrainingWindow {
    assert!(window >= 1, "window must hold at least one unit");
    let units = video.num_units();
    let dim = video.feature_dim();
    let offset = if units > window { rng.random_range(0..=units - window) } else { 0 };
    let take = units.min(window);

    let mut features = Matrix::zeros(window, dim);
    let mut out = UnitTargets::zeros(window);
    let mut valid = vec![false; window];
    for i in 0..take {
        features.row_mut(i).copy_from_slice(video.features.row(offset + i));
        out.start[i] = targets.start[offset + i];
        out.end[i] = targets.end[offset + i];
        out.action[i] = targets.action[offset + i];
        valid[i] = true;
    }
    TrainingWindow { features, targets: out, valid }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryOffsetMode {
    /// True boundaries sit at the middle frame of their unit.
    Centered,
    /// True boundaries are drawn uniformly from the frames of their unit.
    OffCenter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Inclusive range of video lengths in units.
    pub units_range: (usize, usize),
    pub fps: f64,
    pub unit_length: usize,
    /// Inclusive range of planted actions per video.
    pub action_count_range: (usize, usize),
    /// Inclusive range of action lengths in units.
    pub action_length_range: (usize, usize),
    /// Minimum background units before, between and after actions.
    pub min_gap_units: usize,
    pub class_mean_separation: f64,
    pub noise_sigma: f64,
    pub boundary_offset_mode: BoundaryOffsetMode,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_videos: 20,
            num_classes: 2,
            feature_dim: 32,
            units_range: (80, 120),
            fps: 30.0,
            unit_length: 16,
            action_count_range: (1, 3),
            action_length_range: (8, 20),
            min_gap_units: 3,
            class_mean_separation: 1.0,
            noise_sigma: 0.1,
            boundary_offset_mode: BoundaryOffsetMode::OffCenter,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn check(&self) -> Result<(), DatasetError> {
        let bad = |msg: &str| Err(DatasetError::Generation(msg.into()));
        let range_ok = |(lo, hi): (usize, usize)| lo <= hi;
        if self.num_classes == 0 || self.feature_dim == 0 || self.unit_length == 0 {
            return bad("num_classes, feature_dim and unit_length must be positive");
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad("fps must be positive");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be a non-negative number");
        }
        if !range_ok(self.units_range)
            || !range_ok(self.action_count_range)
            || !range_ok(self.action_length_range)
        {
            return bad("ranges must satisfy lo <= hi");
        }
        if self.units_range.0 == 0 || self.action_length_range.0 == 0 {
            return bad("videos and actions need at least one unit");
        }
        let (_, max_actions) = self.action_count_range;
        let worst = max_actions * self.action_length_range.1 + (max_actions + 1) * self.min_gap_units;
        if worst > self.units_range.0 {
            return Err(DatasetError::Generation(format!(
                "{max_actions} actions of up to {} units with gaps of {} need {worst} units, \
                 but videos may be as short as {}",
                self.action_length_range.1, self.min_gap_units, self.units_range.0
            )));
        }
        Ok(())
    }
}

/// Generates a labelled corpus of unit features with planted actions.
///
/// Class `c` has a mean vector whose entries are `±class_mean_separation`.
/// A unit's feature row is `f·μ_c + noise`, where `f` is the fraction of the
/// unit's frames covered by the action (0 for background), so a boundary
/// unit blends background and action in proportion to where the true
/// boundary frame falls.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<VideoRecord>, DatasetError> {
    cfg.check()?;
    let mut rng = crate::seeded_rng(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| DatasetError::Generation(format!("noise distribution: {e}")))?;
    let means: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| {
            (0..cfg.feature_dim)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        cfg.class_mean_separation
                    } else {
                        -cfg.class_mean_separation
                    }
                })
                .collect()
        })
        .collect();

    let len = cfg.unit_length;
    let mut videos = Vec::with_capacity(cfg.num_videos);
    for index in 0..cfg.num_videos {
        let units = rng.random_range(cfg.units_range.0..=cfg.units_range.1);
        let count = rng.random_range(cfg.action_count_range.0..=cfg.action_count_range.1);
        let lengths: Vec<usize> = (0..count)
            .map(|_| rng.random_range(cfg.action_length_range.0..=cfg.action_length_range.1))
            .collect();
        let needed = lengths.iter().sum::<usize>() + (count + 1) * cfg.min_gap_units;
        let slack = units - needed;
        // Split the slack into count + 1 extra gaps with sorted cut points.
        let mut cuts: Vec<usize> = (0..count).map(|_| rng.random_range(0..=slack)).collect();
        cuts.sort_unstable();

        let mut frame_spans = Vec::with_capacity(count);
        let mut annotations = Vec::with_capacity(count);
        let mut cursor = cfg.min_gap_units;
        let mut prev_cut = 0;
        for (i, &length) in lengths.iter().enumerate() {
            cursor += cuts[i] - prev_cut;
            prev_cut = cuts[i];
            let (first, last) = (cursor, cursor + length - 1);
            let (start_frame, end_frame) = match cfg.boundary_offset_mode {
                BoundaryOffsetMode::Centered => (first * len + len / 2, last * len + len - len / 2),
                BoundaryOffsetMode::OffCenter => {
                    (first * len + rng.random_range(0..len), last * len + rng.random_range(1..=len))
                }
            };
            let label = rng.random_range(0..cfg.num_classes);
            frame_spans.push((start_frame, end_frame, label));
            annotations.push(ActionInstance {
                label,
                t_start: start_frame as f64 / cfg.fps,
                t_end: end_frame as f64 / cfg.fps,
            });
            cursor += length + cfg.min_gap_units;
        }

        let mut features = Matrix::zeros(units, cfg.feature_dim);
        for u in 0..units {
            let (lo, hi) = (u * len, (u + 1) * len);
            let row = features.row_mut(u);
            for &(s, e, label) in &frame_spans {
                let covered = hi.min(e).saturating_sub(lo.max(s));
                if covered > 0 {
                    let frac = covered as f64 / len as f64;
                    for (x, m) in row.iter_mut().zip(&means[label]) {
                        *x += frac * m;
                    }
                }
            }
            for x in row.iter_mut() {
                *x += noise.sample(&mut rng);
            }
        }

        videos.push(VideoRecord {
            video_id: format!("video_{index:04}"),
            fps: cfg.fps,
            unit_length: len,
            features,
            annotations,
        });
    }
    Ok(videos)
}

/// Splits `videos` into a shuffled-by-seed training and test partition.
pub fn split_videos(
    mut videos: Vec<VideoRecord>,
    num_train: usize,
    seed: u64,
) -> (Vec<VideoRecord>, Vec<VideoRecord>) {
    let mut rng = crate::seeded_rng(seed);
    videos.shuffle(&mut rng);
    let test = videos.split_off(num_train.min(videos.len()));
    (videos, test)
}
