//! Adam and the parameter-visiting trait shared by the probability model and
//! the rankers.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Receives L2 weight decay.
    Weight,
    Bias,
}

/// Read-only view of one named parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamView<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
    pub data: &'a [f64],
}

/// A model whose parameters can be enumerated as flat tensors.
///
/// `views` and `slices_mut` must list the same tensors in the same order.
/// A gradient buffer is simply another value of the same type.
pub trait Parameters: Clone {
    fn views(&self) -> Vec<ParamView<'_>>;

    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(0.0);
        }
        z
    }

    fn num_parameters(&self) -> usize {
        self.views().iter().map(|v| v.data.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.views().iter().all(|v| v.data.iter().all(|x| x.is_finite()))
    }

    /// `self += alpha · other`, tensor by tensor.
    fn add_scaled(&mut self, alpha: f64, other: &Self) {
        let src = other.views();
        for (dst, s) in self.slices_mut().into_iter().zip(src) {
            for (d, x) in dst.iter_mut().zip(s.data) {
                *d += alpha * x;
            }
        }
    }

    fn scale(&mut self, alpha: f64) {
        for s in self.slices_mut() {
            for x in s {
                *x *= alpha;
            }
        }
    }
}

/// `grads += lambda · θ` for every weight tensor of `params`.
pub fn add_weight_decay<P: Parameters>(grads: &mut P, params: &P, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    let views = params.views();
    for (g, v) in grads.slices_mut().into_iter().zip(views) {
        if v.kind == ParamKind::Weight {
            for (gi, p) in g.iter_mut().zip(v.data) {
                *gi += lambda * p;
            }
        }
    }
}

/// `(lambda / 2) · Σ θ²` over weight tensors; its gradient is
/// [`add_weight_decay`].
pub fn weight_penalty<P: Parameters>(params: &P, lambda: f64) -> f64 {
    let sum: f64 = params
        .views()
        .iter()
        .filter(|v| v.kind == ParamKind::Weight)
        .map(|v| v.data.iter().map(|x| x * x).sum::<f64>())
        .sum();
    0.5 * lambda * sum
}

/// Adam with bias correction.
///
/// Moment buffers are created on the first step and mirror the parameter
/// tensors one to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl Adam {
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64) {
        let grads = grads.views();
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.data.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - libm::pow(self.beta1, f64::from(t));
        let bias2 = 1.0 - libm::pow(self.beta2, f64::from(t));
        for (((p, g), m), v) in
            params.slices_mut().into_iter().zip(&grads).zip(&mut self.m).zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (sqrt(v_hat) + self.eps);
            }
        }
    }
}

/// Step decay: `base · factor` from epoch `decay_epoch` on.
pub fn scheduled_lr(base: f64, epoch: usize, decay_epoch: usize, factor: f64) -> f64 {
    if epoch >= decay_epoch {
        base * factor
    } else {
        base
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct Flat(Vec<f64>);

    impl Parameters for Flat {
        fn views(&self) -> Vec<ParamView<'_>> {
            vec![ParamView {
                name: "w".into(),
                rows: self.0.len(),
                cols: 1,
                kind: ParamKind::Weight,
                data: &self.0,
            }]
        }
        fn slices_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Flat(vec![0.3, -1.2]);
        let mut adam = Adam::default();
        adam.step(&mut p, &Flat(vec![0.0, 0.0]), 1e-3);
        assert_eq!(p, Flat(vec![0.3, -1.2]));
    }

    #[test]
    fn constant_gradient_moves_by_at_most_lr() {
        let lr = 1e-3;
        let mut p = Flat(vec![0.0, 0.0]);
        let g = Flat(vec![0.7, -3.0]);
        let mut adam = Adam::default();
        let mut last = p.clone();
        for _ in 0..2000 {
            adam.step(&mut p, &g, lr);
            for (a, b) in p.0.iter().zip(&last.0) {
                assert!((a - b).abs() <= lr * (1.0 + 1e-6));
            }
            last = p.clone();
        }
        // Each step is -lr·sign(g) up to eps.
        assert!((p.0[0] + 2000.0 * lr).abs() < 1e-6);
        assert!((p.0[1] - 2000.0 * lr).abs() < 1e-6);
    }

    #[test]
    fn identical_state_gives_identical_steps() {
        let g = Flat(vec![0.1, 0.2]);
        let mut a = (Flat(vec![1.0, 2.0]), Adam::default());
        a.1.step(&mut a.0, &g, 0.01);
        let mut b = a.clone();
        a.1.step(&mut a.0, &g, 0.01);
        b.1.step(&mut b.0, &g, 0.01);
        assert_eq!(a, b);
    }

    #[test]
    fn decay_penalty_and_gradient_agree() {
        let p = Flat(vec![1.0, -2.0]);
        assert_eq!(weight_penalty(&p, 0.1), 0.25);
        let mut g = p.zeros_like();
        add_weight_decay(&mut g, &p, 0.1);
        assert_eq!(g, Flat(vec![0.1, -0.2]));
        assert_eq!(scheduled_lr(1e-3, 10, 10, 0.1), 1e-3 * 0.1);
        assert_eq!(scheduled_lr(1e-3, 9, 10, 0.1), 1e-3);
    }
}
