//! Proposal scoring: features, overlap labels, the two rank modules, final
//! scores and non-maximum suppression.
//!
//! Both rankers are the same network, `input → 128 ReLU → 1 logistic`. The
//! pointwise variant regresses each proposal's best ground-truth IoU with a
//! smooth-L1 loss over random batches. The listwise variant sees all
//! proposals of one video at once and minimises the cross-entropy between
//! the softmax of the bucketed overlaps and the softmax of the scores.

use alloc::format;

use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::SliceRandom;

use crate::dataset::ActionInstance;
use crate::math::{ln, sigmoid, softmax};
use crate::metrics::interval_iou;
use crate::network::{Affine, TrainError};
use crate::optim::{add_weight_decay, scheduled_lr, Adam, ParamView, Parameters};
use crate::proposal::{interpolate_at, Proposal, UnitProbSummary, VideoMeta};

/// Samples taken from each of the three probability signals.
pub const SAMPLES_PER_SIGNAL: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankerVariant {
    /// 96 features, smooth-L1 against the IoU.
    Pointwise,
    /// 97 features (normalised video length appended), listwise loss.
    Listwise,
}

impl RankerVariant {
    pub fn feature_dim(self) -> usize {
        match self {
            RankerVariant::Pointwise => 3 * SAMPLES_PER_SIGNAL,
            RankerVariant::Listwise => 3 * SAMPLES_PER_SIGNAL + 1,
        }
    }
}

/// Samples the start, end and action signals at 32 evenly spaced times over
/// `[t_start, t_end]`, interpolating between unit-middle anchors. The
/// listwise variant appends `duration / max_video_length`, capped at 1.
pub fn build_features(
    proposal: &Proposal,
    summary: &UnitProbSummary,
    meta: &VideoMeta,
    variant: RankerVariant,
    max_video_length: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(variant.feature_dim());
    let step = (proposal.t_end - proposal.t_start) / (SAMPLES_PER_SIGNAL - 1) as f64;
    for signal in [&summary.start, &summary.end, &summary.action] {
        for i in 0..SAMPLES_PER_SIGNAL {
            let t = if i + 1 == SAMPLES_PER_SIGNAL { proposal.t_end } else { proposal.t_start + step * i as f64 };
            out.push(interpolate_at(signal, meta.unit_length, t * meta.fps));
        }
    }
    if variant == RankerVariant::Listwise {
        out.push((meta.duration() / max_video_length).min(1.0));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapLabel {
    /// Best IoU with any ground-truth instance.
    pub g: f64,
    pub bucket: u8,
}

/// Buckets: `[0, .2] → 0`, `(.2, .4] → 1`, `(.4, .6] → 2`, `(.6, .8] → 3`,
/// `(.8, .9] → 4`, `(.9, 1] → 5`.
pub fn overlap_bucket(g: f64) -> u8 {
    match g {
        g if g <= 0.2 => 0,
        g if g <= 0.4 => 1,
        g if g <= 0.6 => 2,
        g if g <= 0.8 => 3,
        g if g <= 0.9 => 4,
        _ => 5,
    }
}

pub fn overlap_label(proposal: &Proposal, annotations: &[ActionInstance]) -> OverlapLabel {
    let g = annotations
        .iter()
        .map(|a| interval_iou(proposal.interval(), (a.t_start, a.t_end)))
        .fold(0.0, f64::max);
    OverlapLabel { g, bucket: overlap_bucket(g) }
}

/// Huber form with knee `delta`, as a function of `x = g − phi`. Returns the
/// loss and its derivative with respect to `phi`.
pub fn smooth_l1(g: f64, phi: f64, delta: f64) -> (f64, f64) {
    let x = g - phi;
    if x.abs() < delta {
        (0.5 * x * x / delta, -x / delta)
    } else {
        (x.abs() - 0.5 * delta, -x.signum())
    }
}

/// `(1/N) · Σ −ĝ(i) · ln φ̂(i)` with `ĝ = softmax(buckets)` and
/// `φ̂ = softmax(phi)`. The gradient with respect to `phi` is `(φ̂ − ĝ)/N`.
pub fn listnet_loss(phi: &[f64], buckets: &[u8]) -> (f64, Vec<f64>) {
    assert_eq!(phi.len(), buckets.len(), "one bucket per score");
    assert!(!phi.is_empty(), "listwise loss needs at least one proposal");
    let n = phi.len() as f64;
    let target = softmax(&buckets.iter().map(|&b| f64::from(b)).collect::<Vec<_>>());
    let pred = softmax(phi);
    let loss = target.iter().zip(&pred).map(|(t, p)| -t * ln(p.max(1e-12))).sum::<f64>() / n;
    let grad = pred.iter().zip(&target).map(|(p, t)| (p - t) / n).collect();
    (loss, grad)
}

/// `p_start_avg · p_end_avg · phi`, stored on the proposal.
pub fn final_score(proposal: &mut Proposal, phi: f64) -> f64 {
    proposal.phi = phi;
    proposal.final_score = proposal.p_start_avg * proposal.p_end_avg * phi;
    proposal.final_score
}

/// Greedy NMS. Keeps the best remaining proposal and drops every remaining
/// one whose IoU with it exceeds `theta`. Ties in score go to the earlier
/// `t_start`, then to the earlier input position. The result is in keep
/// order, i.e. by descending score.
pub fn nms(proposals: &[Proposal], theta: f64) -> Vec<Proposal> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&proposals[a], &proposals[b]);
        pb.final_score
            .partial_cmp(&pa.final_score)
            .unwrap_or(Ordering::Equal)
            .then(pa.t_start.partial_cmp(&pb.t_start).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let p = proposals[i].interval();
        if kept.iter().all(|&k| interval_iou(proposals[k].interval(), p) <= theta) {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| proposals[i].clone()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankerParams {
    pub hidden: Affine,
    pub output: Affine,
}

/// Activations of one forward pass.
#[derive(Clone, Debug)]
pub struct RankerCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    phi: f64,
}

impl RankerParams {
    pub fn init(inputs: usize, hidden: usize, rng: &mut crate::Rng) -> Self {
        RankerParams { hidden: Affine::init(inputs, hidden, rng), output: Affine::init(hidden, 1, rng) }
    }

    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        RankerParams { hidden: Affine::zeros(inputs, hidden), output: Affine::zeros(hidden, 1) }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.weight.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.bias.len()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.forward(x).0
    }

    pub fn forward(&self, x: &[f64]) -> (f64, RankerCache) {
        assert_eq!(x.len(), self.input_dim(), "ranker input has the wrong dimension");
        let pre = self.hidden.apply(x);
        let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let phi = sigmoid(self.output.apply(&act)[0]);
        (phi, RankerCache { input: x.to_vec(), pre, phi })
    }

    /// Adds `∂L/∂θ` given `dphi = ∂L/∂φ` for one forward pass.
    pub fn backward(&self, cache: &RankerCache, dphi: f64, grads: &mut RankerParams) {
        let dlogit = dphi * cache.phi * (1.0 - cache.phi);
        let act: Vec<f64> = cache.pre.iter().map(|&v| v.max(0.0)).collect();
        grads.output.weight.add_outer(&[dlogit], &act);
        grads.output.bias[0] += dlogit;
        let dpre: Vec<f64> = cache
            .pre
            .iter()
            .zip(self.output.weight.row(0))
            .map(|(&p, &w)| if p > 0.0 { dlogit * w } else { 0.0 })
            .collect();
        grads.hidden.weight.add_outer(&dpre, &cache.input);
        for (b, d) in grads.hidden.bias.iter_mut().zip(&dpre) {
            *b += d;
        }
    }
}

impl Parameters for RankerParams {
    fn views(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        self.hidden.push_views("hidden", &mut out);
        self.output.push_views("output", &mut out);
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.hidden.push_slices(&mut out);
        self.output.push_slices(&mut out);
        out
    }
}

/// One training proposal: its features and overlap label.
#[derive(Clone, Debug, PartialEq)]
pub struct RankSample {
    pub features: Vec<f64>,
    pub label: OverlapLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankerTrainConfig {
    pub variant: RankerVariant,
    pub hidden: usize,
    /// Pointwise batch size; the listwise variant uses whole videos.
    pub batch: usize,
    pub lr: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub epochs: usize,
    pub delta: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for RankerTrainConfig {
    fn default() -> Self {
        RankerTrainConfig {
            variant: RankerVariant::Listwise,
            hidden: 128,
            batch: 256,
            lr: 1e-3,
            decay_epoch: 10,
            decay_factor: 0.1,
            epochs: 20,
            delta: 0.1,
            lambda: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedRanker {
    pub params: RankerParams,
    pub epoch_losses: Vec<f64>,
}

/// Mean smooth-L1 of a batch and its parameter gradient.
pub fn pointwise_batch_loss(params: &RankerParams, batch: &[&RankSample], delta: f64) -> (f64, RankerParams) {
    let mut grads = params.zeros_like();
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for s in batch {
        let (phi, cache) = params.forward(&s.features);
        let (l, d) = smooth_l1(s.label.g, phi, delta);
        loss += l / n;
        params.backward(&cache, d / n, &mut grads);
    }
    (loss, grads)
}

/// Listwise loss of one video's proposals and its parameter gradient.
pub fn listwise_video_loss(params: &RankerParams, samples: &[RankSample]) -> (f64, RankerParams) {
    let mut grads = params.zeros_like();
    let (phis, caches): (Vec<f64>, Vec<RankerCache>) = samples.iter().map(|s| params.forward(&s.features)).unzip();
    let buckets: Vec<u8> = samples.iter().map(|s| s.label.bucket).collect();
    let (loss, dphi) = listnet_loss(&phis, &buckets);
    for (cache, d) in caches.iter().zip(dphi) {
        params.backward(cache, d, &mut grads);
    }
    (loss, grads)
}

/// Trains a ranker on per-video groups of samples with Adam and step decay.
pub fn train_ranker(videos: &[Vec<RankSample>], cfg: &RankerTrainConfig) -> Result<TrainedRanker, TrainError> {
    let dim = cfg.variant.feature_dim();
    if cfg.hidden == 0 || cfg.batch == 0 {
        return Err(TrainError::InvalidConfig("ranker hidden size and batch must be positive"));
    }
    if !(cfg.delta > 0.0) {
        return Err(TrainError::InvalidConfig("smooth-L1 delta must be positive"));
    }
    if videos.iter().flatten().any(|s| s.features.len() != dim) {
        return Err(TrainError::InvalidConfig("sample feature length does not match the ranker variant"));
    }
    if videos.iter().all(Vec::is_empty) {
        return Err(TrainError::EmptyDataset);
    }

    let mut rng = crate::seeded_rng(cfg.seed);
    let mut params = RankerParams::init(dim, cfg.hidden, &mut rng);
    let mut adam = Adam::default();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = scheduled_lr(cfg.lr, epoch, cfg.decay_epoch, cfg.decay_factor);
        let mut total = 0.0;
        let mut steps = 0usize;
        let mut step = |params: &mut RankerParams, loss: f64, mut grads: RankerParams, batch: usize| {
            add_weight_decay(&mut grads, params, cfg.lambda);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch });
            }
            adam.step(params, &grads, lr);
            total += loss;
            steps += 1;
            Ok(())
        };
        match cfg.variant {
            RankerVariant::Pointwise => {
                let mut pool: Vec<&RankSample> = videos.iter().flatten().collect();
                pool.shuffle(&mut rng);
                for (b, chunk) in pool.chunks(cfg.batch).enumerate() {
                    let (loss, grads) = pointwise_batch_loss(&params, chunk, cfg.delta);
                    step(&mut params, loss, grads, b)?;
                }
            }
            RankerVariant::Listwise => {
                let mut order: Vec<usize> = (0..videos.len()).filter(|&i| !videos[i].is_empty()).collect();
                order.shuffle(&mut rng);
                for (b, &i) in order.iter().enumerate() {
                    let (loss, grads) = listwise_video_loss(&params, &videos[i]);
                    step(&mut params, loss, grads, b)?;
                }
            }
        }
        epoch_losses.push(if steps > 0 { total / steps as f64 } else { 0.0 });
    }
    Ok(TrainedRanker { params, epoch_losses })
}

/// Human-readable ranker variant name, as used in file names and configs.
pub fn variant_name(v: RankerVariant) -> &'static str {
    match v {
        RankerVariant::Pointwise => "pointwise",
        RankerVariant::Listwise => "listwise",
    }
}

impl core::str::FromStr for RankerVariant {
    type Err = alloc::string::String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pointwise" => Ok(RankerVariant::Pointwise),
            "listwise" => Ok(RankerVariant::Listwise),
            other => Err(format!("unknown ranker variant `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::proposal::unit_to_time_middle;

    fn proposal(t_start: f64, t_end: f64, score: f64) -> Proposal {
        Proposal {
            start_unit: 0,
            end_unit: 0,
            t_start,
            t_end,
            p_start_avg: 1.0,
            p_end_avg: 1.0,
            phi: 1.0,
            final_score: score,
            label: None,
        }
    }

    #[test]
    fn constant_and_ramp_features() {
        let meta = VideoMeta { fps: 16.0, unit_length: 16, num_units: 40 };
        let ramp: Vec<f64> = (0..40).map(|u| if u < 4 { 0.0 } else { ((u - 4) as f64 / 31.0).min(1.0) }).collect();
        let summary = UnitProbSummary { start: vec![0.3; 40], end: ramp, action: vec![0.0; 40] };
        let p = proposal(unit_to_time_middle(4, 16, 16.0), unit_to_time_middle(35, 16, 16.0), 1.0);
        let f = build_features(&p, &summary, &meta, RankerVariant::Pointwise, 1.0);
        assert_eq!(f.len(), 96);
        assert!(f[..32].iter().all(|&v| (v - 0.3).abs() < 1e-15));
        for (i, v) in f[32..64].iter().enumerate() {
            assert!((v - i as f64 / 31.0).abs() < 1e-12, "sample {i}: {v}");
        }
        let l = build_features(&p, &summary, &meta, RankerVariant::Listwise, meta.duration());
        assert_eq!(l.len(), 97);
        assert_eq!(l[96], 1.0);
        let half = build_features(&p, &summary, &meta, RankerVariant::Listwise, 2.0 * meta.duration());
        assert_eq!(half[96], 0.5);
        let longer = build_features(&p, &summary, &meta, RankerVariant::Listwise, 0.5 * meta.duration());
        assert_eq!(longer[96], 1.0);
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(overlap_bucket(0.15), 0);
        assert_eq!(overlap_bucket(0.85), 4);
        assert_eq!(overlap_bucket(0.2), 0);
        let p = proposal(0.0, 2.0, 1.0);
        let a = |s, e| ActionInstance { label: 0, t_start: s, t_end: e };
        assert_eq!(overlap_label(&p, &[]).g, 0.0);
        let l = overlap_label(&p, &[a(5.0, 6.0), a(1.0, 3.0), a(0.0, 2.0)]);
        assert_eq!((l.g, l.bucket), (1.0, 5));
    }

    #[test]
    fn smooth_l1_values_and_knee() {
        assert_eq!(smooth_l1(0.4, 0.4, 0.1), (0.0, 0.0));
        assert!((smooth_l1(0.55, 0.5, 0.1).0 - 0.0125).abs() < 1e-12);
        assert!((smooth_l1(1.0, 0.5, 0.1).0 - 0.45).abs() < 1e-12);
        let inside = smooth_l1(0.1 - 1e-12, 0.0, 0.1).0;
        let outside = smooth_l1(0.1, 0.0, 0.1).0;
        assert!((inside - 0.05).abs() < 1e-10 && (outside - 0.05).abs() < 1e-15);
    }

    #[test]
    fn listnet_special_cases() {
        let (l, g) = listnet_loss(&[0.3], &[4]);
        assert!(l.abs() < 1e-15 && g[0].abs() < 1e-15);
        let phi = [0.2, 0.9, 0.4, 0.1];
        let buckets = [0, 5, 2, 1];
        let (a, _) = listnet_loss(&phi, &buckets);
        let shifted: Vec<f64> = phi.iter().map(|p| p + 3.5).collect();
        let (b, _) = listnet_loss(&shifted, &buckets);
        assert!((a - b).abs() < 1e-12);
        // Cross-entropy is bounded below by the entropy of the target.
        let target = softmax(&[0.0, 5.0, 2.0, 1.0]);
        let entropy = -target.iter().map(|t| t * ln(*t)).sum::<f64>() / 4.0;
        assert!(a >= entropy);
        let (exact, _) = listnet_loss(&[0.0, 5.0, 2.0, 1.0], &buckets);
        assert!((exact - entropy).abs() < 1e-12);
    }

    #[test]
    fn nms_rules() {
        let kept = nms(&[proposal(0.0, 1.0, 0.8), proposal(0.0, 1.0, 0.9)], 0.8);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].final_score, 0.9);

        let disjoint = [proposal(0.0, 1.0, 0.1), proposal(2.0, 3.0, 0.5), proposal(4.0, 5.0, 0.3)];
        let kept = nms(&disjoint, 0.8);
        assert_eq!(kept.iter().map(|p| p.final_score).collect::<Vec<_>>(), vec![0.5, 0.3, 0.1]);

        // A–B and B–C overlap at IoU 0.9; A and C are disjoint.
        let a = proposal(0.0, 10.0, 0.9);
        let b = proposal(0.5, 10.5, 0.8);
        let c = proposal(10.6, 20.0, 0.7);
        assert!((interval_iou(a.interval(), b.interval()) - 9.5 / 10.5).abs() < 1e-12);
        let kept = nms(&[c.clone(), b, a.clone()], 0.8);
        assert_eq!(kept, vec![a, c]);
    }

    #[test]
    fn final_score_is_the_product() {
        let mut p = proposal(0.0, 1.0, 0.0);
        assert_eq!(final_score(&mut p, 0.7), 0.7);
        p.p_start_avg = 0.0;
        assert_eq!(final_score(&mut p, 0.7), 0.0);
    }

    #[test]
    fn zero_epochs_return_the_initialisation() {
        let samples = vec![vec![RankSample { features: vec![0.1; 97], label: OverlapLabel { g: 0.5, bucket: 2 } }]];
        let cfg = RankerTrainConfig { epochs: 0, seed: 4, ..RankerTrainConfig::default() };
        let trained = train_ranker(&samples, &cfg).unwrap();
        assert_eq!(trained.params, RankerParams::init(97, 128, &mut crate::seeded_rng(4)));
    }
}
