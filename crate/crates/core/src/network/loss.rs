use crate::dataset::UnitTargets;
use crate::math::ln;

use super::{Channel, LogitGrad, ProbabilityGrid};

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct BceLoss {
    /// Sum over the three channels of the per-channel mean.
    pub loss: f64,
    /// Gradient with respect to the pre-sigmoid logits.
    pub dlogits: LogitGrad,
    /// Number of cells that entered each channel's mean.
    pub cells: usize,
}

/// Positive-weighted binary cross-entropy over every valid, non-ignored cell.
///
/// Cell `[t][k]` is scored against the target of unit `t − k`; it counts when
/// `k ≤ t` and `valid[t − k]` is set. Per cell the loss is
/// `−β·y·ln p − (1 − y)·ln(1 − p)`; each channel is averaged over the counted
/// cells and the three channel means are summed.
///
/// The returned gradient is that of the unclamped loss,
/// `(β·y·(p − 1) + (1 − y)·p) / cells`, so saturated predictions still
/// receive a signal.
pub fn weighted_bce_loss(
    grid: &ProbabilityGrid,
    targets: &UnitTargets,
    beta: f64,
    valid: &[bool],
) -> BceLoss {
    assert!(beta > 0.0, "positive-class weight must be positive");
    let steps = grid.steps();
    let horizon = grid.horizon();
    assert_eq!(targets.len(), steps, "targets must cover every step");
    assert_eq!(valid.len(), steps, "ignore mask must cover every step");

    let counted = |t: usize, k: usize| k <= t && valid[t - k];
    let cells = (0..steps).flat_map(|t| (0..horizon).map(move |k| (t, k))).filter(|&(t, k)| counted(t, k)).count();

    let mut dlogits = ProbabilityGrid::zeros(steps, horizon);
    if cells == 0 {
        return BceLoss { loss: 0.0, dlogits, cells };
    }
    let norm = 1.0 / cells as f64;
    let mut loss = 0.0;
    for c in Channel::ALL {
        let labels = match c {
            Channel::Start => &targets.start,
            Channel::End => &targets.end,
            Channel::Action => &targets.action,
        };
        let probs = grid.channel(c);
        let grads = dlogits.channel_mut(c);
        let mut sum = 0.0;
        for t in 0..steps {
            for k in 0..horizon {
                if !counted(t, k) {
                    continue;
                }
                let p = probs.get(t, k);
                let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                if labels[t - k] {
                    sum -= beta * ln(pc);
                    grads.set(t, k, beta * (p - 1.0) * norm);
                } else {
                    sum -= ln(1.0 - pc);
                    grads.set(t, k, p * norm);
                }
            }
        }
        loss += sum * norm;
    }
    BceLoss { loss, dlogits, cells }
}
