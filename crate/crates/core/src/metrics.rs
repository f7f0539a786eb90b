//! Temporal IoU, average recall at a proposal budget, recall at fixed IoU and
//! mean average precision.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::dataset::{ActionInstance, VideoRecord};

/// Intersection over union of two time intervals; 0 when they are disjoint.
pub fn interval_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

/// `0.5, 0.55, …, 0.95`, plus `1.0` when `include_one` is set.
pub fn tiou_grid(include_one: bool) -> Vec<f64> {
    let n = if include_one { 11 } else { 10 };
    (0..n).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// `lo, lo + 0.1, …, hi` in tenths, built from integers.
pub fn tenths(lo: u32, hi: u32) -> Vec<f64> {
    (lo..=hi).map(|i| f64::from(i) / 10.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub t_start: f64,
    pub t_end: f64,
    pub score: f64,
    pub label: Option<usize>,
}

impl Detection {
    pub fn interval(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }
}

/// One video's scored proposals next to its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalVideo {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<ActionInstance>,
}

fn by_score_desc(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap_or(Ordering::Equal));
    order
}

fn recalled_in_video(video: &EvalVideo, budget: usize, tiou: f64) -> usize {
    let kept: Vec<(f64, f64)> =
        by_score_desc(&video.detections).into_iter().take(budget).map(|i| video.detections[i].interval()).collect();
    video
        .ground_truth
        .iter()
        .filter(|g| kept.iter().any(|&p| interval_iou(p, (g.t_start, g.t_end)) >= tiou))
        .count()
}

/// Fraction of all ground-truth instances covered at `tiou` by the top-`an`
/// proposals of their own video. Zero when there is no ground truth.
pub fn recall_at(videos: &[EvalVideo], an: usize, tiou: f64) -> f64 {
    let total: usize = videos.iter().map(|v| v.ground_truth.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let hit: usize = videos.iter().map(|v| recalled_in_video(v, an, tiou)).sum();
    hit as f64 / total as f64
}

/// Mean of [`recall_at`] over `grid` with a uniform per-video budget `an`.
pub fn average_recall(videos: &[EvalVideo], an: usize, grid: &[f64]) -> f64 {
    if grid.is_empty() {
        return 0.0;
    }
    grid.iter().map(|&t| recall_at(videos, an, t)).sum::<f64>() / grid.len() as f64
}

/// All-points AP: area under the precision envelope of the PR curve.
/// `hits` holds the match outcome of each detection in score order.
pub fn envelope_ap(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// Mean AP over classes with at least one ground-truth instance, and the AP
/// of each such class.
///
/// Per class, labelled detections from every video are pooled and visited by
/// descending score. A detection is a hit when an unmatched ground-truth
/// instance of its class in its video has IoU ≥ `iou`; the best such
/// instance is then consumed. Unlabelled detections are ignored.
pub fn map_at(videos: &[EvalVideo], iou: f64) -> (f64, BTreeMap<usize, f64>) {
    let mut gt_count: BTreeMap<usize, usize> = BTreeMap::new();
    for g in videos.iter().flat_map(|v| &v.ground_truth) {
        *gt_count.entry(g.label).or_default() += 1;
    }
    let mut per_class = BTreeMap::new();
    for (&class, &num_gt) in &gt_count {
        let mut pooled: Vec<(usize, Detection)> = videos
            .iter()
            .enumerate()
            .flat_map(|(v, video)| video.detections.iter().map(move |d| (v, *d)))
            .filter(|(_, d)| d.label == Some(class))
            .collect();
        pooled.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap_or(Ordering::Equal));

        let mut used: Vec<Vec<bool>> = videos.iter().map(|v| vec![false; v.ground_truth.len()]).collect();
        let hits: Vec<bool> = pooled
            .iter()
            .map(|(v, d)| {
                let mut best: Option<(usize, f64)> = None;
                for (j, g) in videos[*v].ground_truth.iter().enumerate() {
                    if g.label != class || used[*v][j] {
                        continue;
                    }
                    let o = interval_iou(d.interval(), (g.t_start, g.t_end));
                    if o >= iou && best.is_none_or(|(_, b)| o > b) {
                        best = Some((j, o));
                    }
                }
                match best {
                    Some((j, _)) => {
                        used[*v][j] = true;
                        true
                    }
                    None => false,
                }
            })
            .collect();
        per_class.insert(class, envelope_ap(&hits, num_gt));
    }
    let map = if per_class.is_empty() { 0.0 } else { per_class.values().sum::<f64>() / per_class.len() as f64 };
    (map, per_class)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalGrids {
    pub an: Vec<usize>,
    /// tIoU grid averaged by AR@AN.
    pub ar_tiou: Vec<f64>,
    /// tIoU columns of the recall@100 table.
    pub recall_tiou: Vec<f64>,
    pub recall_an: usize,
    pub map_iou: Vec<f64>,
}

impl Default for EvalGrids {
    fn default() -> Self {
        EvalGrids {
            an: vec![50, 100, 200, 300, 400],
            ar_tiou: tiou_grid(false),
            recall_tiou: tenths(5, 9),
            recall_an: 100,
            map_iou: tenths(3, 7),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ar_at_an: Vec<(usize, f64)>,
    pub recall_at_100: Vec<(f64, f64)>,
    /// Absent when some detection has no label.
    pub map_at_iou: Option<Vec<(f64, f64)>>,
    /// Per IoU threshold, the AP of every class with ground truth.
    pub per_class_ap: Vec<(f64, BTreeMap<usize, f64>)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EvalError {
    UnknownVideo(String),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::UnknownVideo(id) => write!(f, "detections reference video `{id}`, which is not in the dataset"),
        }
    }
}

impl core::error::Error for EvalError {}

/// Computes every metric on already-joined videos.
pub fn evaluate_videos(videos: &[EvalVideo], grids: &EvalGrids) -> EvalReport {
    let ar_at_an = grids.an.iter().map(|&an| (an, average_recall(videos, an, &grids.ar_tiou))).collect();
    let recall_at_100 = grids.recall_tiou.iter().map(|&t| (t, recall_at(videos, grids.recall_an, t))).collect();
    let labelled = videos.iter().flat_map(|v| &v.detections).all(|d| d.label.is_some());
    let (map_at_iou, per_class_ap) = if labelled {
        let rows: Vec<(f64, f64, BTreeMap<usize, f64>)> = grids
            .map_iou
            .iter()
            .map(|&iou| {
                let (m, per) = map_at(videos, iou);
                (iou, m, per)
            })
            .collect();
        (
            Some(rows.iter().map(|(i, m, _)| (*i, *m)).collect()),
            rows.into_iter().map(|(i, _, per)| (i, per)).collect(),
        )
    } else {
        (None, Vec::new())
    };
    EvalReport { ar_at_an, recall_at_100, map_at_iou, per_class_ap }
}

/// Joins per-video detections with the dataset by id and evaluates. Dataset
/// videos without detections still count toward recall.
pub fn evaluate(
    run: &[(String, Vec<Detection>)],
    dataset: &[VideoRecord],
    grids: &EvalGrids,
) -> Result<EvalReport, EvalError> {
    let index: BTreeMap<&str, usize> = dataset.iter().enumerate().map(|(i, v)| (v.video_id.as_str(), i)).collect();
    let mut videos: Vec<EvalVideo> =
        dataset.iter().map(|v| EvalVideo { detections: Vec::new(), ground_truth: v.annotations.clone() }).collect();
    for (id, dets) in run {
        let &i = index.get(id.as_str()).ok_or_else(|| EvalError::UnknownVideo(id.clone()))?;
        videos[i].detections.extend_from_slice(dets);
    }
    Ok(evaluate_videos(&videos, grids))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(label: usize, s: f64, e: f64) -> ActionInstance {
        ActionInstance { label, t_start: s, t_end: e }
    }

    fn det(s: f64, e: f64, score: f64, label: Option<usize>) -> Detection {
        Detection { t_start: s, t_end: e, score, label }
    }

    #[test]
    fn iou_values() {
        assert_eq!(interval_iou((0.0, 2.0), (0.0, 2.0)), 1.0);
        assert_eq!(interval_iou((0.0, 1.0), (2.0, 3.0)), 0.0);
        assert_eq!(interval_iou((0.0, 1.0), (1.0, 2.0)), 0.0);
        assert!((interval_iou((0.0, 2.0), (1.0, 3.0)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn grids_are_exact() {
        let g = tiou_grid(false);
        assert_eq!(g.len(), 10);
        assert_eq!(g[1], 0.55);
        assert_eq!(g[9], 0.95);
        assert_eq!(tiou_grid(true)[10], 1.0);
        assert_eq!(tenths(3, 7), vec![0.3, 0.4, 0.5, 0.6, 0.7]);
    }

    #[test]
    fn recall_examples() {
        let perfect = vec![EvalVideo {
            detections: vec![det(0.0, 1.0, 0.5, None), det(2.0, 4.0, 0.4, None)],
            ground_truth: vec![gt(0, 0.0, 1.0), gt(0, 2.0, 4.0)],
        }];
        assert_eq!(recall_at(&perfect, 2, 0.9), 1.0);
        assert_eq!(average_recall(&perfect, 2, &tiou_grid(true)), 1.0);
        assert_eq!(recall_at(&perfect, 1, 0.5), 0.5);

        // IoU 0.6 on the first video, nothing on the second.
        let half = vec![
            EvalVideo { detections: vec![det(0.0, 6.0, 0.9, None)], ground_truth: vec![gt(0, 0.0, 10.0)] },
            EvalVideo { detections: vec![det(0.0, 1.0, 0.9, None)], ground_truth: vec![gt(0, 5.0, 6.0)] },
        ];
        assert_eq!(recall_at(&half, 100, 0.5), 0.5);
        assert_eq!(recall_at(&half, 100, 0.7), 0.0);
    }

    #[test]
    fn ap_hand_example() {
        let v = vec![EvalVideo {
            detections: vec![det(0.0, 1.0, 0.9, Some(0)), det(5.0, 6.0, 0.8, Some(0)), det(2.0, 3.0, 0.7, Some(0))],
            ground_truth: vec![gt(0, 0.0, 1.0), gt(0, 2.0, 3.0)],
        }];
        let (m, per) = map_at(&v, 0.5);
        assert!((m - 0.5 - 0.5 * 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(per.len(), 1);
    }

    #[test]
    fn classes_without_ground_truth_are_excluded() {
        let v = vec![EvalVideo {
            detections: vec![det(0.0, 1.0, 0.9, Some(0)), det(0.0, 1.0, 0.8, Some(3))],
            ground_truth: vec![gt(0, 0.0, 1.0)],
        }];
        let (m, per) = map_at(&v, 0.5);
        assert_eq!(m, 1.0);
        assert_eq!(per.keys().copied().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn a_ground_truth_is_matched_once() {
        let v = vec![EvalVideo {
            detections: vec![det(0.0, 1.0, 0.9, Some(0)), det(0.0, 1.0, 0.8, Some(0))],
            ground_truth: vec![gt(0, 0.0, 1.0)],
        }];
        assert_eq!(map_at(&v, 0.5).0, 1.0);
        let late = vec![EvalVideo {
            detections: vec![det(3.0, 4.0, 0.9, Some(0)), det(0.0, 1.0, 0.8, Some(0))],
            ground_truth: vec![gt(0, 0.0, 1.0)],
        }];
        assert_eq!(map_at(&late, 0.5).0, 0.5);
    }

    #[test]
    fn empty_run_is_well_formed() {
        let videos = vec![EvalVideo { detections: vec![], ground_truth: vec![gt(1, 0.0, 1.0)] }];
        let r = evaluate_videos(&videos, &EvalGrids::default());
        assert_eq!(r.ar_at_an.iter().map(|x| x.0).collect::<Vec<_>>(), vec![50, 100, 200, 300, 400]);
        assert!(r.ar_at_an.iter().all(|x| x.1 == 0.0));
        assert!(r.recall_at_100.iter().all(|x| x.1 == 0.0));
        assert!(r.map_at_iou.unwrap().iter().all(|x| x.1 == 0.0));
    }

    #[test]
    fn unlabelled_detections_omit_map() {
        let videos = vec![EvalVideo { detections: vec![det(0.0, 1.0, 0.5, None)], ground_truth: vec![gt(0, 0.0, 1.0)] }];
        assert!(evaluate_videos(&videos, &EvalGrids::default()).map_at_iou.is_none());
    }
}
