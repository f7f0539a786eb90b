//! Probability prediction: stacked GRU layers with a split output head.
//!
//! At every step the top hidden state is cut into three contiguous thirds.
//! Each third feeds its own affine map and logistic function, producing `K`
//! start, `K` end and `K` action probabilities. Column `k` of step `t`
//! refers to unit `t - k`, so each unit collects up to `K` estimates.
//!
//! The GRU cell is
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```
//!
//! Gradients are derived by hand; see [`model_backward`].

mod loss;
mod train;

pub use loss::{weighted_bce_loss, BceLoss, PROB_EPS};
pub use train::{train_probability_model, ProbTrainConfig, TrainError, TrainedModel};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::linalg::Matrix;
use crate::math::{sigmoid, sqrt, tanh};
use crate::optim::{add_weight_decay, ParamKind, ParamView, Parameters};

/// Architecture of the probability model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub input_dim: usize,
    /// Hidden size of every GRU layer; must be divisible by three.
    pub hidden: usize,
    pub layers: usize,
    /// Number of units predicted per step (current unit and `K − 1` past ones).
    pub horizon: usize,
}

impl ModelShape {
    pub fn third(&self) -> usize {
        self.hidden / 3
    }

    pub fn check(&self) -> Result<(), &'static str> {
        if self.hidden == 0 || self.hidden % 3 != 0 {
            return Err("hidden size must be a positive multiple of 3");
        }
        if self.layers == 0 || self.horizon == 0 || self.input_dim == 0 {
            return Err("input_dim, layers and horizon must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruLayerParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruLayerParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        GruLayerParams {
            w_z: Matrix::zeros(hidden, input_dim),
            w_r: Matrix::zeros(hidden, input_dim),
            w_h: Matrix::zeros(hidden, input_dim),
            u_z: Matrix::zeros(hidden, hidden),
            u_r: Matrix::zeros(hidden, hidden),
            u_h: Matrix::zeros(hidden, hidden),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_z.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }
}

/// An affine map `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Affine { weight: Matrix::zeros(outputs, inputs), bias: vec![0.0; outputs] }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut crate::Rng) -> Self {
        let s = 1.0 / sqrt(inputs as f64);
        Affine { weight: Matrix::uniform(outputs, inputs, s, rng), bias: vec![0.0; outputs] }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        self.weight.mul_vec_add(x, &mut y);
        y
    }

    pub(crate) fn push_views<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        out.push(ParamView {
            name: format!("{prefix}.weight"),
            rows: self.weight.rows(),
            cols: self.weight.cols(),
            kind: ParamKind::Weight,
            data: self.weight.as_slice(),
        });
        out.push(ParamView {
            name: format!("{prefix}.bias"),
            rows: self.bias.len(),
            cols: 1,
            kind: ParamKind::Bias,
            data: &self.bias,
        });
    }

    pub(crate) fn push_slices<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.weight.as_mut_slice());
        out.push(&mut self.bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitHeadParams {
    pub start: Affine,
    pub end: Affine,
    pub action: Affine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<GruLayerParams>,
    pub head: SplitHeadParams,
}

impl ModelParams {
    pub fn zeros(shape: &ModelShape) -> Self {
        let layers = (0..shape.layers)
            .map(|l| GruLayerParams::zeros(if l == 0 { shape.input_dim } else { shape.hidden }, shape.hidden))
            .collect();
        let third = shape.third();
        ModelParams {
            layers,
            head: SplitHeadParams {
                start: Affine::zeros(third, shape.horizon),
                end: Affine::zeros(third, shape.horizon),
                action: Affine::zeros(third, shape.horizon),
            },
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialisation, biases zero. `fan_in` is
    /// the input size for `W_*`, the hidden size for `U_*` and the third
    /// size for the heads.
    pub fn init(shape: &ModelShape, rng: &mut crate::Rng) -> Self {
        let mut p = Self::zeros(shape);
        for layer in &mut p.layers {
            let sx = 1.0 / sqrt(layer.input_dim() as f64);
            let sh = 1.0 / sqrt(layer.hidden() as f64);
            for m in [&mut layer.w_z, &mut layer.w_r, &mut layer.w_h] {
                *m = Matrix::uniform(m.rows(), m.cols(), sx, rng);
            }
            for m in [&mut layer.u_z, &mut layer.u_r, &mut layer.u_h] {
                *m = Matrix::uniform(m.rows(), m.cols(), sh, rng);
            }
        }
        let third = shape.third();
        p.head.start = Affine::init(third, shape.horizon, rng);
        p.head.end = Affine::init(third, shape.horizon, rng);
        p.head.action = Affine::init(third, shape.horizon, rng);
        p
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            input_dim: self.layers[0].input_dim(),
            hidden: self.layers[0].hidden(),
            layers: self.layers.len(),
            horizon: self.head.start.bias.len(),
        }
    }
}

impl Parameters for ModelParams {
    fn views(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (name, m) in
                [("w_z", &l.w_z), ("w_r", &l.w_r), ("w_h", &l.w_h), ("u_z", &l.u_z), ("u_r", &l.u_r), ("u_h", &l.u_h)]
            {
                out.push(ParamView {
                    name: format!("gru{i}.{name}"),
                    rows: m.rows(),
                    cols: m.cols(),
                    kind: ParamKind::Weight,
                    data: m.as_slice(),
                });
            }
            for (name, b) in [("b_z", &l.b_z), ("b_r", &l.b_r), ("b_h", &l.b_h)] {
                out.push(ParamView {
                    name: format!("gru{i}.{name}"),
                    rows: b.len(),
                    cols: 1,
                    kind: ParamKind::Bias,
                    data: b,
                });
            }
        }
        self.head.start.push_views("head.start", &mut out);
        self.head.end.push_views("head.end", &mut out);
        self.head.action.push_views("head.action", &mut out);
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w_z.as_mut_slice());
            out.push(l.w_r.as_mut_slice());
            out.push(l.w_h.as_mut_slice());
            out.push(l.u_z.as_mut_slice());
            out.push(l.u_r.as_mut_slice());
            out.push(l.u_h.as_mut_slice());
            out.push(&mut l.b_z);
            out.push(&mut l.b_r);
            out.push(&mut l.b_h);
        }
        self.head.start.push_slices(&mut out);
        self.head.end.push_slices(&mut out);
        self.head.action.push_slices(&mut out);
        out
    }
}

/// Activations of one GRU step kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct CellCache {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub h_tilde: Vec<f64>,
}

pub fn gru_cell_forward(x: &[f64], h_prev: &[f64], p: &GruLayerParams) -> (Vec<f64>, CellCache) {
    let hidden = p.hidden();
    assert_eq!(x.len(), p.input_dim(), "GRU input has the wrong dimension");
    assert_eq!(h_prev.len(), hidden, "GRU hidden state has the wrong dimension");

    let mut z = p.b_z.clone();
    p.w_z.mul_vec_add(x, &mut z);
    p.u_z.mul_vec_add(h_prev, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut r = p.b_r.clone();
    p.w_r.mul_vec_add(x, &mut r);
    p.u_r.mul_vec_add(h_prev, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let gated: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut h_tilde = p.b_h.clone();
    p.w_h.mul_vec_add(x, &mut h_tilde);
    p.u_h.mul_vec_add(&gated, &mut h_tilde);
    h_tilde.iter_mut().for_each(|v| *v = tanh(*v));

    let h_next = (0..hidden).map(|j| (1.0 - z[j]) * h_prev[j] + z[j] * h_tilde[j]).collect();
    (h_next, CellCache { z, r, h_tilde })
}

/// Backpropagates `dh_next` through one GRU step, accumulating parameter
/// gradients into `grads`. Returns `(dx, dh_prev)`.
pub fn gru_cell_backward(
    x: &[f64],
    h_prev: &[f64],
    cache: &CellCache,
    dh_next: &[f64],
    p: &GruLayerParams,
    grads: &mut GruLayerParams,
) -> (Vec<f64>, Vec<f64>) {
    let hidden = p.hidden();
    let CellCache { z, r, h_tilde } = cache;

    let mut dh_prev: Vec<f64> = (0..hidden).map(|j| dh_next[j] * (1.0 - z[j])).collect();
    let da_h: Vec<f64> =
        (0..hidden).map(|j| dh_next[j] * z[j] * (1.0 - h_tilde[j] * h_tilde[j])).collect();
    let da_z: Vec<f64> =
        (0..hidden).map(|j| dh_next[j] * (h_tilde[j] - h_prev[j]) * z[j] * (1.0 - z[j])).collect();

    // Candidate branch: the recurrent input is r ⊙ h_prev.
    let gated: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut d_gated = vec![0.0; hidden];
    p.u_h.mul_t_vec_add(&da_h, &mut d_gated);
    let da_r: Vec<f64> = (0..hidden).map(|j| d_gated[j] * h_prev[j] * r[j] * (1.0 - r[j])).collect();
    for j in 0..hidden {
        dh_prev[j] += d_gated[j] * r[j];
    }

    grads.w_h.add_outer(&da_h, x);
    grads.u_h.add_outer(&da_h, &gated);
    grads.w_r.add_outer(&da_r, x);
    grads.u_r.add_outer(&da_r, h_prev);
    grads.w_z.add_outer(&da_z, x);
    grads.u_z.add_outer(&da_z, h_prev);
    for j in 0..hidden {
        grads.b_h[j] += da_h[j];
        grads.b_r[j] += da_r[j];
        grads.b_z[j] += da_z[j];
    }

    p.u_r.mul_t_vec_add(&da_r, &mut dh_prev);
    p.u_z.mul_t_vec_add(&da_z, &mut dh_prev);

    let mut dx = vec![0.0; p.input_dim()];
    p.w_h.mul_t_vec_add(&da_h, &mut dx);
    p.w_r.mul_t_vec_add(&da_r, &mut dx);
    p.w_z.mul_t_vec_add(&da_z, &mut dx);
    (dx, dh_prev)
}

/// Which of the three predicted signals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Start,
    End,
    Action,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Start, Channel::End, Channel::Action];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Per-step probabilities: entry `[t][k]` is predicted at step `t` for unit
/// `t − k`. Entries with `k > t` refer to units before the sequence and are
/// invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityGrid {
    pub start: Matrix,
    pub end: Matrix,
    pub action: Matrix,
}

impl ProbabilityGrid {
    pub fn zeros(steps: usize, horizon: usize) -> Self {
        ProbabilityGrid {
            start: Matrix::zeros(steps, horizon),
            end: Matrix::zeros(steps, horizon),
            action: Matrix::zeros(steps, horizon),
        }
    }

    pub fn steps(&self) -> usize {
        self.start.rows()
    }

    pub fn horizon(&self) -> usize {
        self.start.cols()
    }

    #[inline]
    pub fn is_valid(&self, t: usize, k: usize) -> bool {
        k <= t && t < self.steps() && k < self.horizon()
    }

    pub fn channel(&self, c: Channel) -> &Matrix {
        match c {
            Channel::Start => &self.start,
            Channel::End => &self.end,
            Channel::Action => &self.action,
        }
    }

    pub fn channel_mut(&mut self, c: Channel) -> &mut Matrix {
        match c {
            Channel::Start => &mut self.start,
            Channel::End => &mut self.end,
            Channel::Action => &mut self.action,
        }
    }

    /// Valid estimates of unit `u` in `channel`, ordered by `k`.
    pub fn estimates(&self, channel: Channel, u: usize) -> impl Iterator<Item = f64> + '_ {
        let m = self.channel(channel);
        (0..self.horizon()).take_while(move |k| u + k < self.steps()).map(move |k| m.get(u + k, k))
    }
}

/// Gradient of a scalar loss with respect to the head logits, shaped like a
/// [`ProbabilityGrid`].
pub type LogitGrad = ProbabilityGrid;

/// Everything [`model_backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input sequence of every layer (features, then dropped-out hiddens).
    inputs: Vec<Matrix>,
    /// Hidden states per layer, row `t + 1` is the state after step `t`.
    hidden: Vec<Matrix>,
    cells: Vec<Vec<CellCache>>,
    /// Inverted-dropout masks applied to the outputs of layers `0..L-1`.
    masks: Vec<Option<Matrix>>,
}

pub fn model_forward(
    features: &Matrix,
    params: &ModelParams,
    dropout_rate: f64,
    training: bool,
    rng: &mut crate::Rng,
) -> (ProbabilityGrid, ForwardCache) {
    let shape = params.shape();
    assert_eq!(features.cols(), shape.input_dim, "feature dimension does not match the model");
    let steps = features.rows();
    let hidden = shape.hidden;
    let use_dropout = training && dropout_rate > 0.0;
    let keep = 1.0 - dropout_rate;

    let mut inputs = Vec::with_capacity(shape.layers);
    let mut hiddens = Vec::with_capacity(shape.layers);
    let mut cells = Vec::with_capacity(shape.layers);
    let mut masks = Vec::with_capacity(shape.layers);
    let mut input = features.clone();

    for (l, layer) in params.layers.iter().enumerate() {
        let mut hs = Matrix::zeros(steps + 1, hidden);
        let mut layer_cells = Vec::with_capacity(steps);
        for t in 0..steps {
            let (h_next, cache) = gru_cell_forward(input.row(t), hs.row(t), layer);
            hs.row_mut(t + 1).copy_from_slice(&h_next);
            layer_cells.push(cache);
        }

        let last = l + 1 == shape.layers;
        let mut next_input = Matrix::from_vec(steps, hidden, hs.as_slice()[hidden..].to_vec());
        let mask = if !last && use_dropout {
            let mut m = Matrix::zeros(steps, hidden);
            for v in m.as_mut_slice() {
                *v = if rng.random_bool(keep) { 1.0 / keep } else { 0.0 };
            }
            for (x, s) in next_input.as_mut_slice().iter_mut().zip(m.as_slice()) {
                *x *= s;
            }
            Some(m)
        } else {
            None
        };

        inputs.push(input);
        hiddens.push(hs);
        cells.push(layer_cells);
        masks.push(mask);
        input = next_input;
    }

    let third = shape.third();
    let top = hiddens.last().expect("at least one layer");
    let mut grid = ProbabilityGrid::zeros(steps, shape.horizon);
    for t in 0..steps {
        let h = top.row(t + 1);
        for (c, head) in [
            (Channel::Start, &params.head.start),
            (Channel::End, &params.head.end),
            (Channel::Action, &params.head.action),
        ] {
            let part = &h[c.index() * third..(c.index() + 1) * third];
            let logits = head.apply(part);
            for (dst, a) in grid.channel_mut(c).row_mut(t).iter_mut().zip(logits) {
                *dst = sigmoid(a);
            }
        }
    }
    (grid, ForwardCache { inputs, hidden: hiddens, cells, masks })
}

/// Exact gradients of the loss behind `dlogits` with respect to every
/// parameter, summed over all steps, plus `lambda · θ` on weight tensors.
pub fn model_backward(
    cache: &ForwardCache,
    dlogits: &LogitGrad,
    params: &ModelParams,
    lambda: f64,
) -> ModelParams {
    let mut grads = params.zeros_like();
    accumulate_backward(cache, dlogits, params, &mut grads);
    add_weight_decay(&mut grads, params, lambda);
    grads
}

/// Adds the data-term gradient of one sequence into `grads` (no weight decay).
pub fn accumulate_backward(
    cache: &ForwardCache,
    dlogits: &LogitGrad,
    params: &ModelParams,
    grads: &mut ModelParams,
) {
    let shape = params.shape();
    let steps = dlogits.steps();
    let hidden = shape.hidden;
    let third = shape.third();
    let top = cache.hidden.last().expect("at least one layer");

    // Head: dA += dlogit ⊗ third, dh_top[third] += Aᵀ dlogit.
    let mut d_out = Matrix::zeros(steps, hidden);
    for t in 0..steps {
        let h = top.row(t + 1);
        for (c, head, ghead) in [
            (Channel::Start, &params.head.start, &mut grads.head.start),
            (Channel::End, &params.head.end, &mut grads.head.end),
            (Channel::Action, &params.head.action, &mut grads.head.action),
        ] {
            let range = c.index() * third..(c.index() + 1) * third;
            let g = dlogits.channel(c).row(t);
            ghead.weight.add_outer(g, &h[range.clone()]);
            for (b, gi) in ghead.bias.iter_mut().zip(g) {
                *b += gi;
            }
            head.weight.mul_t_vec_add(g, &mut d_out.row_mut(t)[range]);
        }
    }

    for l in (0..shape.layers).rev() {
        let layer = &params.layers[l];
        let input = &cache.inputs[l];
        let hs = &cache.hidden[l];
        let mut d_input = Matrix::zeros(steps, layer.input_dim());
        let mut carry = vec![0.0; hidden];
        for t in (0..steps).rev() {
            let dh: Vec<f64> = d_out.row(t).iter().zip(&carry).map(|(a, b)| a + b).collect();
            let (dx, dh_prev) =
                gru_cell_backward(input.row(t), hs.row(t), &cache.cells[l][t], &dh, layer, &mut grads.layers[l]);
            d_input.row_mut(t).copy_from_slice(&dx);
            carry = dh_prev;
        }
        if l > 0 {
            if let Some(mask) = &cache.masks[l - 1] {
                for (d, m) in d_input.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *d *= m;
                }
            }
            d_out = d_input;
        }
    }
}
