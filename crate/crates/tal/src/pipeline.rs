//! Pipeline stages and the artifacts they exchange through a workspace.
//!
//! | stage        | reads                                              | writes                                        |
//! |--------------|----------------------------------------------------|-----------------------------------------------|
//! | `synth`      | config                                             | `dataset.{train,test}.jsonl`                  |
//! | `train-prob` | `dataset.train.jsonl`                              | `prob.ckpt.json`                              |
//! | `propose`    | `prob.ckpt.json`, datasets                         | `proposals.<mode>.<split>.csv`, `summaries.<split>.jsonl` |
//! | `train-rank` | train proposals and summaries, train dataset       | `ranker.<mode>.<variant>.ckpt.json`           |
//! | `rank`       | ranker, test proposals and summaries, test dataset | `ranked.<mode>.<variant>.csv`                 |
//! | `eval`       | ranked dump, test dataset, labels                  | `eval.<mode>.<variant>.{csv,txt}`             |
//! | `report`     | every `eval.*.csv` in the workspace                | `report.{ar,recall,map}.csv`, `report.txt`, `report.svg` |
//!
//! Each artifact is recorded in the manifest with a hash of the configuration
//! sections it depends on, chained through its inputs' hashes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use tal_core::dataset::{split_videos, synth_generate, VideoRecord};
use tal_core::metrics::{evaluate, Detection};
use tal_core::network::{model_forward, train_probability_model};
use tal_core::proposal::{proposals_from_summary, summarize_grid, Proposal, UnitProbSummary, VideoMeta};
use tal_core::ranking::{build_features, final_score, nms, overlap_label, train_ranker, RankSample};
use tal_core::seeded_rng;

use crate::checkpoint::{load_model, load_ranker, save_model, save_ranker, RankerCheckpoint};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::io::{
    dominant_label, parse_dataset, read_dump, read_labels, read_summaries, write_atomic, write_dataset, write_dump,
    write_summaries, VideoProposals,
};
use crate::report::{ar_svg, comparison_csvs, eval_csv, parse_eval_csv, summary_text, Run};
use crate::workspace::{hash_parts, Workspace};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Synth,
    TrainProb,
    Propose,
    TrainRank,
    Rank,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Synth, Stage::TrainProb, Stage::Propose, Stage::TrainRank, Stage::Rank, Stage::Eval, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::TrainProb => "train-prob",
            Stage::Propose => "propose",
            Stage::TrainRank => "train-rank",
            Stage::Rank => "rank",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

const SPLITS: [&str; 2] = ["train", "test"];

fn section<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("config sections serialise")
}

/// Artifact names and configuration hashes for one configuration.
#[derive(Clone, Debug)]
pub struct Plan {
    pub mode: &'static str,
    pub variant: &'static str,
    pub data_hash: String,
    pub prob_hash: String,
    pub proposals_hash: String,
    pub ranker_hash: String,
    pub ranked_hash: String,
    pub eval_hash: String,
}

impl Plan {
    pub fn new(cfg: &PipelineConfig) -> Self {
        let data_hash = hash_parts(&["dataset", &cfg.seed.to_string(), &section(&cfg.dataset)]);
        let prob_hash = hash_parts(&["prob", &data_hash, &section(&cfg.network), &section(&cfg.training)]);
        let proposals_hash = hash_parts(&["proposals", &prob_hash, &section(&cfg.proposal)]);
        let ranker_hash = hash_parts(&["ranker", &proposals_hash, &section(&cfg.ranker)]);
        let ranked_hash = hash_parts(&["ranked", &ranker_hash, &section(&cfg.nms)]);
        let eval_hash = hash_parts(&["eval", &ranked_hash, &section(&cfg.metrics), &section(&cfg.labels)]);
        Plan {
            mode: cfg.proposal.mode.name(),
            variant: cfg.ranker.variant.name(),
            data_hash,
            prob_hash,
            proposals_hash,
            ranker_hash,
            ranked_hash,
            eval_hash,
        }
    }

    pub fn dataset(split: &str) -> String {
        format!("dataset.{split}.jsonl")
    }

    pub fn prob_ckpt() -> &'static str {
        "prob.ckpt.json"
    }

    pub fn summaries(split: &str) -> String {
        format!("summaries.{split}.jsonl")
    }

    pub fn proposals(&self, split: &str) -> String {
        format!("proposals.{}.{split}.csv", self.mode)
    }

    pub fn tag(&self) -> String {
        format!("{}.{}", self.mode, self.variant)
    }

    pub fn ranker(&self) -> String {
        format!("ranker.{}.ckpt.json", self.tag())
    }

    pub fn ranked(&self) -> String {
        format!("ranked.{}.csv", self.tag())
    }

    pub fn eval_csv(&self) -> String {
        format!("eval.{}.csv", self.tag())
    }

    pub fn eval_txt(&self) -> String {
        format!("eval.{}.txt", self.tag())
    }

    /// Artifacts a stage writes, with their hashes.
    pub fn outputs(&self, stage: Stage) -> Vec<(String, String)> {
        match stage {
            Stage::Synth => SPLITS.iter().map(|s| (Self::dataset(s), self.data_hash.clone())).collect(),
            Stage::TrainProb => vec![(Self::prob_ckpt().into(), self.prob_hash.clone())],
            Stage::Propose => SPLITS
                .iter()
                .flat_map(|s| {
                    [(self.proposals(s), self.proposals_hash.clone()), (Self::summaries(s), self.prob_hash.clone())]
                })
                .collect(),
            Stage::TrainRank => vec![(self.ranker(), self.ranker_hash.clone())],
            Stage::Rank => vec![(self.ranked(), self.ranked_hash.clone())],
            Stage::Eval => {
                vec![(self.eval_csv(), self.eval_hash.clone()), (self.eval_txt(), self.eval_hash.clone())]
            }
            Stage::Report => Vec::new(),
        }
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
    plan: Plan,
    ws: Workspace,
    log: Box<dyn FnMut(&str)>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, workspace: &Path, force: bool) -> Result<Self> {
        cfg.validate()?;
        let plan = Plan::new(&cfg);
        let ws = Workspace::open(workspace, force)?;
        Ok(Pipeline { cfg, plan, ws, log: Box::new(|msg| eprintln!("{msg}")) })
    }

    /// Replaces the progress sink (stderr by default).
    pub fn with_log(mut self, log: impl FnMut(&str) + 'static) -> Self {
        self.log = Box::new(log);
        self
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn run(&mut self, stage: Stage) -> Result<()> {
        (self.log)(&format!("[{stage}] start"));
        let out = match stage {
            Stage::Synth => self.synth(),
            Stage::TrainProb => self.train_prob(),
            Stage::Propose => self.propose(),
            Stage::TrainRank => self.train_rank(),
            Stage::Rank => self.rank(),
            Stage::Eval => self.eval(),
            Stage::Report => self.report(),
        };
        out.map_err(|e| e.in_stage(stage.name()))
    }

    /// Runs every stage in order, skipping those whose outputs are already
    /// present and up to date.
    pub fn run_all(&mut self) -> Result<()> {
        for stage in Stage::ALL {
            let outputs = self.plan.outputs(stage);
            if !outputs.is_empty() && outputs.iter().all(|(n, h)| self.ws.is_fresh(n, h)) {
                (self.log)(&format!("[{stage}] up to date"));
                continue;
            }
            self.run(stage)?;
        }
        Ok(())
    }

    fn record(&mut self, name: &str, hash: &str, stage: Stage) -> Result<()> {
        self.ws.record(name, hash, stage.name())
    }

    fn load_split(&self, split: &str, stage: &'static str) -> Result<Vec<VideoRecord>> {
        let path = self.ws.require(&Plan::dataset(split), &self.plan.data_hash, stage)?;
        parse_dataset(&path)
    }

    fn synth(&mut self) -> Result<()> {
        let d = &self.cfg.dataset;
        let (train, test) = match (&d.train_file, &d.test_file) {
            (Some(tr), Some(te)) => (parse_dataset(tr)?, parse_dataset(te)?),
            _ => {
                let videos = synth_generate(&self.cfg.synth())?;
                split_videos(videos, d.num_train, self.cfg.split_seed())
            }
        };
        for (split, videos) in SPLITS.iter().zip([&train, &test]) {
            let name = Plan::dataset(split);
            write_dataset(&self.ws.path(&name), videos)?;
            let hash = self.plan.data_hash.clone();
            self.record(&name, &hash, Stage::Synth)?;
        }
        (self.log)(&format!("[synth] {} train / {} test videos", train.len(), test.len()));
        Ok(())
    }

    fn train_prob(&mut self) -> Result<()> {
        let train = self.load_split("train", Stage::Synth.name())?;
        let dim = train.first().map(VideoRecord::feature_dim).ok_or_else(|| Error::Config("training split is empty".into()))?;
        if train.iter().any(|v| v.feature_dim() != dim) {
            return Err(Error::Config("training videos differ in feature dimension".into()));
        }
        let shape = self.cfg.model_shape(dim);
        let trained = train_probability_model(&train, &shape, &self.cfg.prob_train())?;
        for (e, l) in trained.epoch_losses.iter().enumerate() {
            (self.log)(&format!("[train-prob] epoch {:>3} loss {l:.6}", e + 1));
        }
        save_model(&self.ws.path(Plan::prob_ckpt()), &trained.params)?;
        let hash = self.plan.prob_hash.clone();
        self.record(Plan::prob_ckpt(), &hash, Stage::TrainProb)
    }

    fn propose(&mut self) -> Result<()> {
        let ckpt = self.ws.require(Plan::prob_ckpt(), &self.plan.prob_hash, Stage::TrainProb.name())?;
        let params = load_model(&ckpt)?;
        let pcfg = self.cfg.proposal_config();
        for split in SPLITS {
            let videos = self.load_split(split, Stage::Synth.name())?;
            let mut run: Vec<VideoProposals> = Vec::with_capacity(videos.len());
            let mut summaries = Vec::with_capacity(videos.len());
            for v in &videos {
                if v.feature_dim() != params.shape().input_dim {
                    return Err(Error::Config(format!(
                        "video `{}` has {} features per unit; the model expects {}",
                        v.video_id,
                        v.feature_dim(),
                        params.shape().input_dim
                    )));
                }
                let (grid, _) = model_forward(&v.features, &params, 0.0, false, &mut seeded_rng(0));
                let summary = summarize_grid(&grid);
                let meta = VideoMeta { fps: v.fps, unit_length: v.unit_length, num_units: v.num_units() };
                run.push((v.video_id.clone(), proposals_from_summary(&grid, &summary, &meta, &pcfg)));
                summaries.push((v.video_id.clone(), summary));
            }
            let total: usize = run.iter().map(|r| r.1.len()).sum();
            (self.log)(&format!("[propose] {split}: {total} proposals over {} videos", videos.len()));

            let name = self.plan.proposals(split);
            write_dump(&self.ws.path(&name), &run)?;
            let hash = self.plan.proposals_hash.clone();
            self.record(&name, &hash, Stage::Propose)?;
            let name = Plan::summaries(split);
            write_summaries(&self.ws.path(&name), &summaries)?;
            let hash = self.plan.prob_hash.clone();
            self.record(&name, &hash, Stage::Propose)?;
        }
        Ok(())
    }

    /// Proposals, summaries and videos of one split, joined by video id.
    fn scored_inputs(
        &self,
        split: &str,
    ) -> Result<(Vec<VideoRecord>, BTreeMap<String, Vec<Proposal>>, BTreeMap<String, UnitProbSummary>)> {
        let videos = self.load_split(split, Stage::Synth.name())?;
        let dump = self.ws.require(&self.plan.proposals(split), &self.plan.proposals_hash, Stage::Propose.name())?;
        let sums = self.ws.require(&Plan::summaries(split), &self.plan.prob_hash, Stage::Propose.name())?;
        let proposals: BTreeMap<String, Vec<Proposal>> = read_dump(&dump)?.into_iter().collect();
        let summaries = read_summaries(&sums)?;
        for id in proposals.keys() {
            if !videos.iter().any(|v| &v.video_id == id) {
                return Err(Error::format(&dump, format!("video `{id}` is not in the {split} dataset")));
            }
        }
        for v in &videos {
            match summaries.get(&v.video_id) {
                Some(s) if s.len() == v.num_units() => {}
                _ => return Err(Error::format(&sums, format!("no summary of {} units for `{}`", v.num_units(), v.video_id))),
            }
        }
        Ok((videos, proposals, summaries))
    }

    fn train_rank(&mut self) -> Result<()> {
        let (videos, proposals, summaries) = self.scored_inputs("train")?;
        let rcfg = self.cfg.ranker_train();
        let max_len = videos.iter().map(VideoRecord::duration).fold(0.0, f64::max);
        let samples: Vec<Vec<RankSample>> = videos
            .iter()
            .map(|v| {
                let meta = VideoMeta { fps: v.fps, unit_length: v.unit_length, num_units: v.num_units() };
                let summary = &summaries[&v.video_id];
                proposals
                    .get(&v.video_id)
                    .into_iter()
                    .flatten()
                    .map(|p| RankSample {
                        features: build_features(p, summary, &meta, rcfg.variant, max_len),
                        label: overlap_label(p, &v.annotations),
                    })
                    .collect()
            })
            .collect();
        let trained = train_ranker(&samples, &rcfg)?;
        for (e, l) in trained.epoch_losses.iter().enumerate() {
            (self.log)(&format!("[train-rank] epoch {:>3} loss {l:.6}", e + 1));
        }
        let ck = RankerCheckpoint { variant: rcfg.variant, params: trained.params, max_video_length: max_len };
        let name = self.plan.ranker();
        save_ranker(&self.ws.path(&name), &ck)?;
        let hash = self.plan.ranker_hash.clone();
        self.record(&name, &hash, Stage::TrainRank)
    }

    fn rank(&mut self) -> Result<()> {
        let ck_path = self.ws.require(&self.plan.ranker(), &self.plan.ranker_hash, Stage::TrainRank.name())?;
        let ck = load_ranker(&ck_path)?;
        let (videos, proposals, summaries) = self.scored_inputs("test")?;
        let theta = self.cfg.nms.theta;
        let mut run: Vec<VideoProposals> = Vec::new();
        for v in &videos {
            let Some(ps) = proposals.get(&v.video_id) else { continue };
            let meta = VideoMeta { fps: v.fps, unit_length: v.unit_length, num_units: v.num_units() };
            let summary = &summaries[&v.video_id];
            let scored: Vec<Proposal> = ps
                .iter()
                .map(|p| {
                    let mut p = p.clone();
                    let x = build_features(&p, summary, &meta, ck.variant, ck.max_video_length);
                    final_score(&mut p, ck.params.score(&x));
                    p
                })
                .collect();
            run.push((v.video_id.clone(), nms(&scored, theta)));
        }
        let name = self.plan.ranked();
        write_dump(&self.ws.path(&name), &run)?;
        let hash = self.plan.ranked_hash.clone();
        self.record(&name, &hash, Stage::Rank)
    }

    fn eval(&mut self) -> Result<()> {
        let ranked = self.plan.ranked();
        if !self.ws.path(&ranked).is_file() {
            // Point at the earliest missing dump in the chain.
            self.ws.require(&self.plan.proposals("test"), &self.plan.proposals_hash, Stage::Propose.name())?;
        }
        let dump = self.ws.require(&ranked, &self.plan.ranked_hash, Stage::Rank.name())?;
        let videos = self.load_split("test", Stage::Synth.name())?;
        let labels: BTreeMap<String, usize> = match &self.cfg.labels.file {
            Some(path) => read_labels(path)?,
            None => videos.iter().filter_map(|v| dominant_label(v).map(|l| (v.video_id.clone(), l))).collect(),
        };
        let run: Vec<(String, Vec<Detection>)> = read_dump(&dump)?
            .into_iter()
            .map(|(id, ps)| {
                let label = labels.get(&id).copied();
                let dets = ps
                    .iter()
                    .map(|p| Detection { t_start: p.t_start, t_end: p.t_end, score: p.final_score, label })
                    .collect();
                (id, dets)
            })
            .collect();
        let report = evaluate(&run, &videos, &self.cfg.eval_grids())?;
        let tag = self.plan.tag();
        let hash = self.plan.eval_hash.clone();
        for (name, text) in [
            (self.plan.eval_csv(), eval_csv(&report)),
            (self.plan.eval_txt(), summary_text(&[Run { tag: tag.clone(), report }], self.cfg.metrics.recall_an)),
        ] {
            write_atomic(&self.ws.path(&name), text.as_bytes())?;
            self.record(&name, &hash, Stage::Eval)?;
        }
        Ok(())
    }

    fn report(&mut self) -> Result<()> {
        let names = self.ws.artifacts_matching("eval.", ".csv");
        if names.is_empty() {
            return Err(Error::Missing { artifact: "eval.<mode>.<variant>.csv".into(), stage: Stage::Eval.name() });
        }
        let mut runs = Vec::with_capacity(names.len());
        for name in names {
            let path = self.ws.path(&name);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let report = parse_eval_csv(&text).map_err(|e| Error::format(&path, e))?;
            let tag = name.trim_start_matches("eval.").trim_end_matches(".csv").to_string();
            runs.push(Run { tag, report });
        }
        for (suffix, text) in comparison_csvs(&runs) {
            write_atomic(&self.ws.path(&format!("report.{suffix}.csv")), text.as_bytes())?;
        }
        write_atomic(&self.ws.path("report.txt"), summary_text(&runs, self.cfg.metrics.recall_an).as_bytes())?;
        write_atomic(&self.ws.path("report.svg"), ar_svg(&runs).as_bytes())?;
        (self.log)(&format!("[report] {} run(s) compared", runs.len()));
        Ok(())
    }
}
