use proptest::prelude::*;
use tal_core::dataset::{assign_unit_targets, ActionInstance, VideoRecord};
use tal_core::linalg::Matrix;
use tal_core::math::softmax;
use tal_core::metrics::{average_recall, interval_iou, map_at, recall_at, tiou_grid, Detection, EvalVideo};
use tal_core::proposal::{interpolate_keyframe, pair_candidates, Proposal};
use tal_core::ranking::{listnet_loss, nms};

fn interval() -> impl Strategy<Value = (f64, f64)> {
    (0u32..200, 1u32..60).prop_map(|(s, l)| (f64::from(s) / 4.0, f64::from(s + l) / 4.0))
}

fn proposal((t_start, t_end): (f64, f64), score: f64) -> Proposal {
    Proposal {
        start_unit: 0,
        end_unit: 0,
        t_start,
        t_end,
        p_start_avg: 1.0,
        p_end_avg: 1.0,
        phi: score,
        final_score: score,
        label: None,
    }
}

fn corpus() -> impl Strategy<Value = Vec<EvalVideo>> {
    let video = (
        prop::collection::vec((interval(), 0u32..20, 0usize..2), 0..10),
        prop::collection::vec((interval(), 0usize..2), 0..4),
    )
        .prop_map(|(dets, gts)| EvalVideo {
            detections: dets
                .into_iter()
                .map(|((s, e), score, label)| Detection {
                    t_start: s,
                    t_end: e,
                    score: f64::from(score) / 20.0,
                    label: Some(label),
                })
                .collect(),
            ground_truth: gts.into_iter().map(|((s, e), label)| ActionInstance { label, t_start: s, t_end: e }).collect(),
        });
    prop::collection::vec(video, 1..5)
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in interval(), b in interval()) {
        let x = interval_iou(a, b);
        prop_assert_eq!(x, interval_iou(b, a));
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x == 1.0, a == b);
    }

    #[test]
    fn nms_properties(items in prop::collection::vec((interval(), 0u32..50), 0..30)) {
        let ps: Vec<Proposal> = items.iter().map(|&(iv, s)| proposal(iv, f64::from(s) / 50.0)).collect();
        let kept = nms(&ps, 0.8);
        for (i, a) in kept.iter().enumerate() {
            prop_assert!(ps.contains(a));
            for b in &kept[i + 1..] {
                prop_assert!(interval_iou(a.interval(), b.interval()) <= 0.8);
            }
        }
        prop_assert!(kept.windows(2).all(|w| w[0].final_score >= w[1].final_score));
        prop_assert_eq!(nms(&kept, 0.8), kept.clone());
        prop_assert_eq!(nms(&ps, 0.8), kept);
    }

    #[test]
    fn recall_orderings(videos in corpus()) {
        let grid = tiou_grid(false);
        for an in [1, 2, 5] {
            let mut prev = f64::INFINITY;
            for &t in &grid {
                let r = recall_at(&videos, an, t);
                prop_assert!(r <= prev);
                prev = r;
            }
        }
        let ars: Vec<f64> = [1, 2, 3, 5, 10].iter().map(|&an| average_recall(&videos, an, &grid)).collect();
        prop_assert!(ars.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn map_depends_only_on_score_order(videos in corpus(), iou in 3u32..8) {
        let iou = f64::from(iou) / 10.0;
        let mut warped = videos.clone();
        for d in warped.iter_mut().flat_map(|v| v.detections.iter_mut()) {
            d.score = (3.0 * d.score).exp() - 7.0;
        }
        let (a, pa) = map_at(&videos, iou);
        let (b, pb) = map_at(&warped, iou);
        prop_assert_eq!(a, b);
        prop_assert_eq!(pa, pb);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn listnet_is_shift_invariant(phi in prop::collection::vec(0.0f64..1.0, 1..8), shift in -3.0f64..3.0) {
        let buckets: Vec<u8> = (0..phi.len()).map(|i| (i % 6) as u8).collect();
        let moved: Vec<f64> = phi.iter().map(|p| p + shift).collect();
        prop_assert!((listnet_loss(&phi, &buckets).0 - listnet_loss(&moved, &buckets).0).abs() < 1e-12);
        let lifted: Vec<u8> = buckets.iter().map(|b| b + 2).collect();
        let a = softmax(&buckets.iter().map(|&b| f64::from(b)).collect::<Vec<_>>());
        let b = softmax(&lifted.iter().map(|&b| f64::from(b)).collect::<Vec<_>>());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        prop_assert!((listnet_loss(&phi, &buckets).0 - listnet_loss(&phi, &lifted).0).abs() < 1e-12);
    }

    #[test]
    fn start_targets_grow_with_expansion(
        spans in prop::collection::vec((0u32..300, 1u32..100), 0..4),
        r1 in 0.0f64..2.0,
        extra in 0.0f64..2.0,
    ) {
        let video = VideoRecord {
            video_id: "p".into(),
            fps: 16.0,
            unit_length: 16,
            features: Matrix::zeros(30, 1),
            annotations: spans
                .iter()
                .map(|&(s, l)| ActionInstance { label: 0, t_start: f64::from(s) / 16.0, t_end: f64::from(s + l) / 16.0 })
                .filter(|a| a.t_end <= 30.0)
                .collect(),
        };
        let small = assign_unit_targets(&video, r1);
        let big = assign_unit_targets(&video, r1 + extra);
        for u in 0..30 {
            prop_assert!(!small.start[u] || big.start[u]);
            prop_assert!(!small.end[u] || big.end[u]);
        }
    }

    #[test]
    fn pairs_are_ordered_and_capped(
        starts in prop::collection::btree_set(0usize..40, 0..8),
        ends in prop::collection::btree_set(0usize..40, 0..8),
        cap in prop::option::of(0usize..20),
    ) {
        let s: Vec<usize> = starts.into_iter().collect();
        let e: Vec<usize> = ends.into_iter().collect();
        let pairs = pair_candidates(&s, &e, cap);
        let expected = s.iter().flat_map(|&a| e.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| a <= b && cap.is_none_or(|c| b - a + 1 <= c))
            .count();
        prop_assert_eq!(pairs.len(), expected);
        prop_assert!(pairs.iter().all(|&(a, b)| a <= b));
    }

    #[test]
    fn keyframe_stays_in_its_unit(signal in prop::collection::vec(0.0f64..1.0, 1..12), pick in 0usize..12, l in 2usize..20) {
        let u = pick % signal.len();
        let f = interpolate_keyframe(&signal, u, l);
        prop_assert!(f < l);
    }
}
