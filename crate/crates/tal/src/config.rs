//! Pipeline configuration, read from TOML. Every field has a default, so an
//! empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tal_core::dataset::{BoundaryOffsetMode, SynthConfig};
use tal_core::metrics::{tiou_grid, EvalGrids};
use tal_core::network::{ModelShape, ProbTrainConfig};
use tal_core::proposal::{BoundaryMode, ProposalConfig};
use tal_core::ranking::{RankerTrainConfig, RankerVariant};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub proposal: ProposalSection,
    pub ranker: RankerSection,
    pub nms: NmsSection,
    pub metrics: MetricsSection,
    pub labels: LabelSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Existing dataset files; when both are set `synth` copies them into
    /// the workspace instead of generating.
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub num_train: usize,
    pub num_test: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub units_range: [usize; 2],
    pub fps: f64,
    pub unit_length: usize,
    pub action_count_range: [usize; 2],
    pub action_length_range: [usize; 2],
    pub min_gap_units: usize,
    pub class_mean_separation: f64,
    pub noise_sigma: f64,
    pub boundary_offset: OffsetMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OffsetMode {
    Centered,
    OffCenter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: usize,
    pub layers: usize,
    pub horizon: usize,
    pub dropout: f64,
    pub lambda: f64,
    pub beta: f64,
    pub expansion_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch: usize,
    pub window: usize,
    pub windows_per_video: usize,
    pub lr: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalSection {
    pub votes: usize,
    pub thresh: f64,
    pub mode: Mode,
    pub max_duration_units: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Middle,
    Interpolated,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Middle => "middle",
            Mode::Interpolated => "interpolated",
        }
    }
}

impl From<Mode> for BoundaryMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Middle => BoundaryMode::Middle,
            Mode::Interpolated => BoundaryMode::Interpolated,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Pointwise,
    Listwise,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Pointwise => "pointwise",
            Variant::Listwise => "listwise",
        }
    }
}

impl From<Variant> for RankerVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Pointwise => RankerVariant::Pointwise,
            Variant::Listwise => RankerVariant::Listwise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerSection {
    pub variant: Variant,
    pub hidden: usize,
    pub delta: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsSection {
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub an: Vec<usize>,
    /// Adds tIoU 1.0 to the AR grid (11 points instead of 10).
    pub include_tiou_one: bool,
    pub recall_an: usize,
    pub recall_tiou: Vec<f64>,
    pub map_iou: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSection {
    /// CSV of `video_id,label`; without it each video takes the label that
    /// covers most of its annotated time.
    pub file: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        DatasetSection {
            train_file: None,
            test_file: None,
            num_train: 20,
            num_test: 10,
            num_classes: s.num_classes,
            feature_dim: s.feature_dim,
            units_range: [s.units_range.0, s.units_range.1],
            fps: s.fps,
            unit_length: s.unit_length,
            action_count_range: [s.action_count_range.0, s.action_count_range.1],
            action_length_range: [s.action_length_range.0, s.action_length_range.1],
            min_gap_units: s.min_gap_units,
            class_mean_separation: s.class_mean_separation,
            noise_sigma: s.noise_sigma,
            boundary_offset: OffsetMode::OffCenter,
        }
    }
}

impl Default for NetworkSection {
    fn default() -> Self {
        let t = ProbTrainConfig::default();
        NetworkSection {
            hidden: 513,
            layers: 2,
            horizon: 4,
            dropout: t.dropout,
            lambda: t.lambda,
            beta: t.beta,
            expansion_ratio: t.expansion_ratio,
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = ProbTrainConfig::default();
        TrainingSection {
            epochs: t.epochs,
            batch: t.batch,
            window: t.window,
            windows_per_video: t.windows_per_video,
            lr: t.lr,
            decay_epoch: t.decay_epoch,
            decay_factor: t.decay_factor,
        }
    }
}

impl Default for ProposalSection {
    fn default() -> Self {
        let p = ProposalConfig::default();
        ProposalSection { votes: p.votes, thresh: p.thresh, mode: Mode::Interpolated, max_duration_units: None }
    }
}

impl Default for RankerSection {
    fn default() -> Self {
        let r = RankerTrainConfig::default();
        RankerSection {
            variant: Variant::Listwise,
            hidden: r.hidden,
            delta: r.delta,
            batch: r.batch,
            epochs: r.epochs,
            lr: r.lr,
            decay_epoch: r.decay_epoch,
            decay_factor: r.decay_factor,
            lambda: r.lambda,
        }
    }
}

impl Default for NmsSection {
    fn default() -> Self {
        NmsSection { theta: 0.8 }
    }
}

impl Default for MetricsSection {
    fn default() -> Self {
        let g = EvalGrids::default();
        MetricsSection {
            an: g.an,
            include_tiou_one: false,
            recall_an: g.recall_an,
            recall_tiou: g.recall_tiou,
            map_iou: g.map_iou,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            dataset: DatasetSection::default(),
            network: NetworkSection::default(),
            training: TrainingSection::default(),
            proposal: ProposalSection::default(),
            ranker: RankerSection::default(),
            nms: NmsSection::default(),
            metrics: MetricsSection::default(),
            labels: LabelSection::default(),
        }
    }
}

/// Seeds of the individual stages, all derived from the top-level seed.
const SYNTH_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const PROB_STREAM: u64 = 3;
const RANK_STREAM: u64 = 4;

fn stream(seed: u64, id: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(id)
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.network.hidden == 0 || self.network.hidden % 3 != 0 {
            return fail("network.hidden must be a positive multiple of 3");
        }
        if self.network.layers == 0 || self.network.horizon == 0 {
            return fail("network.layers and network.horizon must be positive");
        }
        if !(0.0..1.0).contains(&self.network.dropout) {
            return fail("network.dropout must lie in [0, 1)");
        }
        if self.proposal.votes == 0 || self.proposal.votes > self.network.horizon {
            return fail("proposal.votes must lie in 1..=network.horizon");
        }
        if !(0.0..=1.0).contains(&self.nms.theta) {
            return fail("nms.theta must lie in [0, 1]");
        }
        if self.ranker.hidden == 0 || self.ranker.batch == 0 || !(self.ranker.delta > 0.0) {
            return fail("ranker.hidden, ranker.batch and ranker.delta must be positive");
        }
        if self.dataset.train_file.is_some() != self.dataset.test_file.is_some() {
            return fail("dataset.train_file and dataset.test_file must be given together");
        }
        if self.dataset.train_file.is_none() && (self.dataset.num_train == 0 || self.dataset.num_test == 0) {
            return fail("dataset.num_train and dataset.num_test must be positive");
        }
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        let d = &self.dataset;
        SynthConfig {
            num_videos: d.num_train + d.num_test,
            num_classes: d.num_classes,
            feature_dim: d.feature_dim,
            units_range: (d.units_range[0], d.units_range[1]),
            fps: d.fps,
            unit_length: d.unit_length,
            action_count_range: (d.action_count_range[0], d.action_count_range[1]),
            action_length_range: (d.action_length_range[0], d.action_length_range[1]),
            min_gap_units: d.min_gap_units,
            class_mean_separation: d.class_mean_separation,
            noise_sigma: d.noise_sigma,
            boundary_offset_mode: match d.boundary_offset {
                OffsetMode::Centered => BoundaryOffsetMode::Centered,
                OffsetMode::OffCenter => BoundaryOffsetMode::OffCenter,
            },
            seed: stream(self.seed, SYNTH_STREAM),
        }
    }

    pub fn split_seed(&self) -> u64 {
        stream(self.seed, SPLIT_STREAM)
    }

    pub fn model_shape(&self, input_dim: usize) -> ModelShape {
        ModelShape {
            input_dim,
            hidden: self.network.hidden,
            layers: self.network.layers,
            horizon: self.network.horizon,
        }
    }

    pub fn prob_train(&self) -> ProbTrainConfig {
        let (n, t) = (&self.network, &self.training);
        ProbTrainConfig {
            epochs: t.epochs,
            batch: t.batch,
            window: t.window,
            windows_per_video: t.windows_per_video,
            lr: t.lr,
            decay_epoch: t.decay_epoch,
            decay_factor: t.decay_factor,
            lambda: n.lambda,
            beta: n.beta,
            dropout: n.dropout,
            expansion_ratio: n.expansion_ratio,
            seed: stream(self.seed, PROB_STREAM),
        }
    }

    pub fn proposal_config(&self) -> ProposalConfig {
        ProposalConfig {
            votes: self.proposal.votes,
            thresh: self.proposal.thresh,
            max_duration_units: self.proposal.max_duration_units,
            mode: self.proposal.mode.into(),
        }
    }

    pub fn ranker_train(&self) -> RankerTrainConfig {
        let r = &self.ranker;
        RankerTrainConfig {
            variant: r.variant.into(),
            hidden: r.hidden,
            batch: r.batch,
            lr: r.lr,
            decay_epoch: r.decay_epoch,
            decay_factor: r.decay_factor,
            epochs: r.epochs,
            delta: r.delta,
            lambda: r.lambda,
            seed: stream(self.seed, RANK_STREAM),
        }
    }

    pub fn eval_grids(&self) -> EvalGrids {
        let m = &self.metrics;
        EvalGrids {
            an: m.an.clone(),
            ar_tiou: tiou_grid(m.include_tiou_one),
            recall_tiou: m.recall_tiou.clone(),
            recall_an: m.recall_an,
            map_iou: m.map_iou.clone(),
        }
    }
}
