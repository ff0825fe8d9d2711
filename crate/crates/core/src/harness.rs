//! End-to-end orchestration: configuration, the three-stage attack,
//! campaigns over many videos, bound verification and trace files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dct::BasisKind;
use crate::error::{LsfError, Result};
use crate::logo::{sample_logos, LogoSet};
use crate::logos_dct::{
    check_bounds, optimize, perturbation_norms, rho, BoundCheck, ClipMode, CoefficientLedger, Grouping, Norm,
    OptimizerConfig, Stage3Record,
};
use crate::metrics::{aggregate, warping_error, Aggregate, AttackTrace, Outcome, StageQueries};
use crate::oracle::{BlackBox, Goal, QueryBudget, QueryGate, Stage, DEFAULT_QUERY_LIMIT};
use crate::rl::{direct_stage2, RewardParams, Stage2Config, Stage2Inputs, Stage2Record, StylizationCache, K_MENU};
use crate::rng;
use crate::style_search::{build_style_set, random_style_set, StyleInit, StyleSearchConfig, StyleSet};
use crate::stylize::{FeatureBank, StyleTransferConfig};
use crate::video::{Dims, Image, RegionMask, VideoTensor};

/// Environment variable that replaces the configured master seed.
pub const SEED_ENV: &str = "LSF_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoalKind {
    Untargeted,
    Targeted,
}

/// Target class of a targeted attack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetSpec {
    Fixed(usize),
    /// Drawn per video from the seed, never the true label.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub goal: GoalKind,
    pub target: TargetSpec,
    pub n_styles: usize,
    pub n_logos: usize,
    pub eta: f64,
    pub epsilon: f64,
    pub mu_a: f64,
    pub mu_d: f64,
    /// Stage-2 batch size; `None` picks 30 (untargeted) or 50 (targeted).
    pub omega: Option<usize>,
    pub k_menu: Vec<f64>,
    pub query_limit: u64,
    pub mode: Norm,
    pub clip: ClipMode,
    pub basis: BasisKind,
    pub seed: u64,
    pub random_style: bool,
    pub solid_color_init: bool,
    pub one_round: bool,
    pub one_point_per_frame: bool,
    pub style_block: usize,
    pub style_step: f32,
    pub style_cap: u64,
    pub style_retries: usize,
    pub style_restart: u64,
    pub stage2_iterations: usize,
    pub stage2_patience: usize,
    pub stage2_lr: f64,
    pub transfer_iterations: usize,
    pub content_weight: f64,
    pub style_weight: f64,
    pub tv_weight: f64,
    pub stage3_rounds: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        let style = StyleSearchConfig::default();
        let transfer = StyleTransferConfig::default();
        let opt = OptimizerConfig::default();
        let reward = RewardParams::default();
        Self {
            goal: GoalKind::Untargeted,
            target: TargetSpec::Random,
            n_styles: 5,
            n_logos: 100,
            eta: opt.eta,
            epsilon: opt.epsilon,
            mu_a: reward.mu_a,
            mu_d: reward.mu_d,
            omega: None,
            k_menu: K_MENU.to_vec(),
            query_limit: DEFAULT_QUERY_LIMIT,
            mode: opt.norm,
            clip: opt.clip,
            basis: opt.basis,
            seed: 0,
            random_style: false,
            solid_color_init: false,
            one_round: false,
            one_point_per_frame: false,
            style_block: style.block_h,
            style_step: style.step,
            style_cap: style.per_style_cap,
            style_retries: style.retries,
            style_restart: style.restart_after,
            stage2_iterations: 50,
            stage2_patience: 5,
            stage2_lr: 0.01,
            transfer_iterations: transfer.iterations,
            content_weight: transfer.content_weight,
            style_weight: transfer.style_weight,
            tv_weight: transfer.tv_weight,
            stage3_rounds: opt.max_rounds,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| LsfError::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(LsfError::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl AttackConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "goal" => {
                self.goal = match v {
                    "untargeted" => GoalKind::Untargeted,
                    "targeted" => GoalKind::Targeted,
                    _ => return Err(LsfError::Config(format!("goal: {v:?}"))),
                }
            }
            "target" => {
                self.target = if v == "random" {
                    TargetSpec::Random
                } else {
                    TargetSpec::Fixed(parse_num("target", v)?)
                }
            }
            "n_styles" => self.n_styles = parse_num(key, v)?,
            "n_logos" => self.n_logos = parse_num(key, v)?,
            "eta" => self.eta = parse_num(key, v)?,
            "epsilon" => self.epsilon = parse_num(key, v)?,
            "mu_a" => self.mu_a = parse_num(key, v)?,
            "mu_d" => self.mu_d = parse_num(key, v)?,
            "omega" => self.omega = if v == "auto" { None } else { Some(parse_num(key, v)?) },
            "k_menu" => {
                self.k_menu = v.split(',').map(|x| parse_num(key, x.trim())).collect::<Result<_>>()?;
            }
            "query_limit" => self.query_limit = parse_num(key, v)?,
            "mode" => {
                self.mode = match v {
                    "linf" => Norm::Linf,
                    "l2" => Norm::L2,
                    _ => return Err(LsfError::Config(format!("mode: {v:?}"))),
                }
            }
            "clip" => {
                self.clip = match v {
                    "cumulative" => ClipMode::Cumulative,
                    "per-term" => ClipMode::PerTerm,
                    _ => return Err(LsfError::Config(format!("clip: {v:?}"))),
                }
            }
            "basis" => {
                self.basis = match v {
                    "subrect" => BasisKind::Subrect,
                    "global" => BasisKind::Global,
                    _ => return Err(LsfError::Config(format!("basis: {v:?}"))),
                }
            }
            "seed" => self.seed = parse_num(key, v)?,
            "random_style" => self.random_style = parse_bool(key, v)?,
            "solid_color_init" => self.solid_color_init = parse_bool(key, v)?,
            "one_round" => self.one_round = parse_bool(key, v)?,
            "one_point_per_frame" => self.one_point_per_frame = parse_bool(key, v)?,
            "style_block" => self.style_block = parse_num(key, v)?,
            "style_step" => self.style_step = parse_num(key, v)?,
            "style_cap" => self.style_cap = parse_num(key, v)?,
            "style_retries" => self.style_retries = parse_num(key, v)?,
            "style_restart" => self.style_restart = parse_num(key, v)?,
            "stage2_iterations" => self.stage2_iterations = parse_num(key, v)?,
            "stage2_patience" => self.stage2_patience = parse_num(key, v)?,
            "stage2_lr" => self.stage2_lr = parse_num(key, v)?,
            "transfer_iterations" => self.transfer_iterations = parse_num(key, v)?,
            "content_weight" => self.content_weight = parse_num(key, v)?,
            "style_weight" => self.style_weight = parse_num(key, v)?,
            "tv_weight" => self.tv_weight = parse_num(key, v)?,
            "stage3_rounds" => self.stage3_rounds = parse_num(key, v)?,
            other => return Err(LsfError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Named ablation scenario: `random-style`, `solid-color-init`,
    /// `no-area-penalty`, `no-distance-penalty`, `one-round` or
    /// `one-point-per-frame`.
    pub fn apply_ablation(&mut self, name: &str) -> Result<()> {
        match name {
            "random-style" => self.random_style = true,
            "solid-color-init" => self.solid_color_init = true,
            "no-area-penalty" => self.mu_a = 0.0,
            "no-distance-penalty" => self.mu_d = 0.0,
            "one-round" => self.one_round = true,
            "one-point-per-frame" => self.one_point_per_frame = true,
            _ => return Err(LsfError::Config(format!("unknown ablation {name:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LsfError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Every key in a fixed order; [`AttackConfig::parse`] inverts it.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put(
            "goal",
            match self.goal {
                GoalKind::Untargeted => "untargeted".into(),
                GoalKind::Targeted => "targeted".into(),
            },
        );
        put(
            "target",
            match self.target {
                TargetSpec::Random => "random".into(),
                TargetSpec::Fixed(t) => t.to_string(),
            },
        );
        put("n_styles", self.n_styles.to_string());
        put("n_logos", self.n_logos.to_string());
        put("eta", self.eta.to_string());
        put("epsilon", self.epsilon.to_string());
        put("mu_a", self.mu_a.to_string());
        put("mu_d", self.mu_d.to_string());
        put("omega", self.omega.map_or("auto".into(), |o| o.to_string()));
        put("k_menu", self.k_menu.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        put("query_limit", self.query_limit.to_string());
        put(
            "mode",
            match self.mode {
                Norm::Linf => "linf".into(),
                Norm::L2 => "l2".into(),
            },
        );
        put(
            "clip",
            match self.clip {
                ClipMode::Cumulative => "cumulative".into(),
                ClipMode::PerTerm => "per-term".into(),
            },
        );
        put(
            "basis",
            match self.basis {
                BasisKind::Subrect => "subrect".into(),
                BasisKind::Global => "global".into(),
            },
        );
        put("seed", self.seed.to_string());
        put("random_style", self.random_style.to_string());
        put("solid_color_init", self.solid_color_init.to_string());
        put("one_round", self.one_round.to_string());
        put("one_point_per_frame", self.one_point_per_frame.to_string());
        put("style_block", self.style_block.to_string());
        put("style_step", self.style_step.to_string());
        put("style_cap", self.style_cap.to_string());
        put("style_retries", self.style_retries.to_string());
        put("style_restart", self.style_restart.to_string());
        put("stage2_iterations", self.stage2_iterations.to_string());
        put("stage2_patience", self.stage2_patience.to_string());
        put("stage2_lr", self.stage2_lr.to_string());
        put("transfer_iterations", self.transfer_iterations.to_string());
        put("content_weight", self.content_weight.to_string());
        put("style_weight", self.style_weight.to_string());
        put("tv_weight", self.tv_weight.to_string());
        put("stage3_rounds", self.stage3_rounds.to_string());
        s
    }

    /// Replaces the seed with `LSF_SEED` when that is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse_num(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_menu != K_MENU {
            return Err(LsfError::Config(format!("only the scale menu {K_MENU:?} is supported")));
        }
        if self.n_styles == 0 || self.n_logos == 0 {
            return Err(LsfError::Config("n_styles and n_logos must be at least 1".into()));
        }
        if self.omega == Some(0) || self.stage2_iterations == 0 {
            return Err(LsfError::Config("omega and stage2_iterations must be at least 1".into()));
        }
        if self.style_block == 0 {
            return Err(LsfError::Config("style_block must be at least 1".into()));
        }
        if !(self.mu_a >= 0.0 && self.mu_d >= 0.0 && self.stage2_lr.is_finite()) {
            return Err(LsfError::Config("penalties must be nonnegative".into()));
        }
        self.optimizer().validate()?;
        self.transfer().validate()?;
        Ok(())
    }

    pub fn style_search(&self) -> StyleSearchConfig {
        StyleSearchConfig {
            block_h: self.style_block,
            block_w: self.style_block,
            step: self.style_step,
            per_style_cap: self.style_cap,
            retries: self.style_retries,
            restart_after: self.style_restart,
            init: if self.solid_color_init {
                StyleInit::SolidColor
            } else {
                StyleInit::Random
            },
        }
    }

    pub fn transfer(&self) -> StyleTransferConfig {
        StyleTransferConfig {
            content_weight: self.content_weight,
            style_weight: self.style_weight,
            tv_weight: self.tv_weight,
            iterations: self.transfer_iterations,
            ..StyleTransferConfig::default()
        }
    }

    pub fn stage2(&self, goal: &Goal) -> Stage2Config {
        let base = Stage2Config::for_goal(goal);
        Stage2Config {
            batch: self.omega.unwrap_or(base.batch),
            max_iterations: self.stage2_iterations,
            patience: self.stage2_patience,
            lr: self.stage2_lr,
            reward: RewardParams {
                mu_a: self.mu_a,
                mu_d: self.mu_d,
            },
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            norm: self.mode,
            eta: self.eta,
            epsilon: self.epsilon,
            max_rounds: if self.one_round { 1 } else { self.stage3_rounds },
            clip: self.clip,
            grouping: if self.one_point_per_frame {
                Grouping::FrameGroup
            } else {
                Grouping::Single
            },
            basis: self.basis,
        }
    }

    /// Goal for a video whose true label is `label`.
    pub fn goal_for(&self, label: usize, classes: usize, seed: u64) -> Result<Goal> {
        match (self.goal, self.target) {
            (GoalKind::Untargeted, _) => Ok(Goal::Untargeted { original: label }),
            (GoalKind::Targeted, TargetSpec::Fixed(t)) => {
                if t >= classes || t == label {
                    return Err(LsfError::BadInput(format!("target {t} with true label {label} of {classes} classes")));
                }
                Ok(Goal::Targeted { target: t })
            }
            (GoalKind::Targeted, TargetSpec::Random) => {
                if classes < 2 {
                    return Err(LsfError::BadInput("targeted attack needs two or more classes".into()));
                }
                let pick = rng::derived_rng(seed, "target").gen_range(0..classes - 1);
                Ok(Goal::Targeted {
                    target: if pick >= label { pick + 1 } else { pick },
                })
            }
        }
    }
}

/// Full record of one attack.
#[derive(Clone, Debug)]
pub struct AttackRun {
    pub trace: AttackTrace,
    pub adversarial: Option<VideoTensor>,
    pub styles: Option<StyleSet>,
    pub stage2: Vec<Stage2Record>,
    pub stage3: Vec<Stage3Record>,
    pub ledger: Option<CoefficientLedger>,
}

/// One line of a trace file.
#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TraceLine<'a> {
    Summary(&'a AttackTrace),
    Style {
        index: usize,
        seed: u64,
        queries: u64,
        restarts: u64,
        accepted_objectives: &'a [f64],
    },
    Stage2(&'a Stage2Record),
    Stage3(&'a Stage3Record),
}

impl AttackRun {
    /// JSON lines: summary, stage-1 searches, stage-2 samples, stage-3 steps.
    pub fn trace_lines(&self) -> Result<String> {
        let mut out = String::new();
        let mut push = |line: TraceLine<'_>| -> Result<()> {
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
            Ok(())
        };
        push(TraceLine::Summary(&self.trace))?;
        if let Some(styles) = &self.styles {
            for (index, s) in styles.images.iter().enumerate() {
                push(TraceLine::Style {
                    index,
                    seed: s.seed,
                    queries: s.queries,
                    restarts: s.restarts,
                    accepted_objectives: &s.accepted_objectives,
                })?;
            }
        }
        for r in &self.stage2 {
            push(TraceLine::Stage2(r))?;
        }
        for r in &self.stage3 {
            push(TraceLine::Stage3(r))?;
        }
        Ok(out)
    }

    pub fn write_trace(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.trace_lines()?.as_bytes())?;
        Ok(())
    }
}

/// Checks that `oracle` labels `video` as `label`, outside any attack
/// budget.
pub fn precheck(oracle: &dyn BlackBox, video: &VideoTensor, label: usize) -> Result<()> {
    let got = oracle.top1(video).top1.label;
    if got != label {
        return Err(LsfError::BadInput(format!("video is classified as {got}, not its label {label}")));
    }
    Ok(())
}

/// Runs style search, policy search and coefficient search against
/// `oracle`. `logo_pool` must hold at least `n_logos` logos of one size.
pub fn run_attack(
    cfg: &AttackConfig,
    video_id: &str,
    video: &VideoTensor,
    label: usize,
    oracle: &dyn BlackBox,
    logo_pool: &LogoSet,
) -> Result<AttackRun> {
    cfg.validate()?;
    let started = Instant::now();
    precheck(oracle, video, label)?;
    let seed = cfg.seed;
    let goal = cfg.goal_for(label, oracle.class_count(), seed)?;
    let dims = video.dims();
    let first = logo_pool.get(0).ok_or(LsfError::Empty("logo pool"))?;
    let mut trace = AttackTrace {
        video: video_id.to_string(),
        goal,
        original_label: label,
        outcome: Outcome::StageFailed,
        success_stage: None,
        queries: StageQueries::default(),
        query_limit: cfg.query_limit,
        stages_run: [false; 3],
        actions: None,
        frame: (dims.h, dims.w),
        logo: (first.height(), first.width()),
        final_label: None,
        final_score: None,
        norms: None,
        stage3_accepted: 0,
        stylizations: 0,
        wall_time_ms: None,
    };
    let mut run = AttackRun {
        trace: trace.clone(),
        adversarial: None,
        styles: None,
        stage2: Vec::new(),
        stage3: Vec::new(),
        ledger: None,
    };
    let mut gate = QueryGate::new(oracle, QueryBudget::new(cfg.query_limit));

    let finish = |mut run: AttackRun, mut trace: AttackTrace, gate: &QueryGate<'_>| -> Result<AttackRun> {
        trace.queries = StageQueries {
            q1: gate.stage_queries(Stage::StyleSearch),
            q2: gate.stage_queries(Stage::Direct),
            q3: gate.stage_queries(Stage::Optimize),
        };
        if trace.queries.total() != gate.used() {
            return Err(LsfError::Invariant(format!(
                "stage queries {} differ from {} oracle calls",
                trace.queries.total(),
                gate.used()
            )));
        }
        trace.wall_time_ms = Some(started.elapsed().as_secs_f64() * 1e3);
        trace.validate()?;
        run.trace = trace;
        Ok(run)
    };

    // stage 1
    let style_cfg = cfg.style_search();
    let stage1_seed = rng::derive_seed(seed, "stage1");
    let styles = if cfg.random_style {
        random_style_set(dims.c, cfg.n_styles, stage1_seed, &style_cfg)?
    } else {
        trace.stages_run[0] = true;
        match build_style_set(&mut gate, goal, dims, cfg.n_styles, stage1_seed, &style_cfg) {
            Ok(s) => s,
            Err(LsfError::BudgetExhausted { .. }) => {
                trace.outcome = Outcome::BudgetExhausted;
                return finish(run, trace, &gate);
            }
            Err(LsfError::StyleSearchFailed { .. }) => return finish(run, trace, &gate),
            Err(e) => return Err(e),
        }
    };
    let style_images: Vec<Image> = styles.images.iter().map(|s| s.block.clone()).collect();
    run.styles = Some(styles);

    // stage 2
    trace.stages_run[1] = true;
    let logos = sample_logos(logo_pool, cfg.n_logos, rng::derive_seed(seed, "logos"))?;
    let bank = FeatureBank::standard();
    let transfer = cfg.transfer();
    let inputs = Stage2Inputs {
        base: video,
        goal,
        styles: &style_images,
        logos: &logos,
        bank: &bank,
        transfer: &transfer,
    };
    let mut cache = StylizationCache::default();
    let s2 = direct_stage2(&mut gate, &inputs, &cfg.stage2(&goal), &mut cache, rng::derive_seed(seed, "stage2"))?;
    trace.stylizations = s2.stylizations;
    run.stage2 = s2.records;
    let Some(best) = s2.best else {
        trace.outcome = Outcome::BudgetExhausted;
        return finish(run, trace, &gate);
    };
    trace.actions = Some(best.actions);
    trace.final_label = Some(best.response.label);
    trace.final_score = Some(best.response.score);
    if s2.success {
        trace.outcome = Outcome::Success;
        trace.success_stage = Some(2);
        run.adversarial = Some(best.video);
        return finish(run, trace, &gate);
    }
    if s2.exhausted {
        trace.outcome = Outcome::BudgetExhausted;
        run.adversarial = Some(best.video);
        return finish(run, trace, &gate);
    }

    // stage 3
    trace.stages_run[2] = true;
    let geo_mask = RegionMask::new(
        best.actions.u,
        best.actions.v,
        best.actions.k(),
        trace.logo.0,
        trace.logo.1,
        dims.h,
        dims.w,
    )?;
    let s3 = optimize(&mut gate, &best.video, &geo_mask, &goal, &cfg.optimizer(), rng::derive_seed(seed, "stage3"))?;
    trace.norms = Some(perturbation_norms(&s3.video, &best.video, &geo_mask)?);
    trace.stage3_accepted = s3.accepted_steps();
    if let Some(r) = s3.response {
        trace.final_label = Some(r.label);
        trace.final_score = Some(r.score);
    }
    trace.outcome = if s3.success {
        trace.success_stage = Some(3);
        Outcome::Success
    } else if s3.exhausted {
        Outcome::BudgetExhausted
    } else {
        Outcome::StageFailed
    };
    run.stage3 = s3.records;
    run.ledger = Some(s3.ledger);
    run.adversarial = Some(s3.video);
    finish(run, trace, &gate)
}

/// A video available to a campaign.
#[derive(Clone, Debug)]
pub struct CampaignVideo {
    pub id: String,
    pub video: VideoTensor,
    pub label: usize,
}

impl CampaignVideo {
    /// Reads every video listed in a `labels.tsv` index.
    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Self>> {
        crate::oracle::load_manifest(path)?
            .into_iter()
            .map(|(file, label)| {
                Ok(Self {
                    id: file.file_stem().map_or_else(|| file.display().to_string(), |s| s.to_string_lossy().into_owned()),
                    video: crate::format::read_video(&file)?,
                    label,
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CampaignEntry {
    pub trace: AttackTrace,
    /// Temporal inconsistency of the adversarial video.
    pub ti: Option<f64>,
    pub wall_time_ms: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CampaignReport {
    pub entries: Vec<CampaignEntry>,
    /// Videos passed over because the oracle misclassified them.
    pub skipped: Vec<String>,
    /// Attacks that ended in an error rather than a trace.
    pub errors: Vec<(String, String)>,
    pub aggregate: Aggregate,
    /// Mean TI over successful adversarial videos.
    pub ti: Option<f64>,
}

impl CampaignReport {
    /// Plain-text table with one row per video and a summary.
    pub fn table(&self) -> String {
        let mut s = String::from("video\toutcome\tstage\tq1\tq2\tq3\ttotal\taoa\tti\n");
        for e in &self.entries {
            let t = &e.trace;
            let _ = writeln!(
                s,
                "{}\t{:?}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.video,
                t.outcome,
                t.success_stage.map_or("-".into(), |v| v.to_string()),
                t.queries.q1,
                t.queries.q2,
                t.queries.q3,
                t.queries.total(),
                crate::metrics::aoa(t).map_or("-".into(), |v| format!("{v:.2}")),
                e.ti.map_or("-".into(), |v| format!("{v:.5}")),
            );
        }
        let a = &self.aggregate;
        let opt = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.1}"));
        let _ = writeln!(
            s,
            "# desk-scale results (synthetic videos, toy oracle)\n# FR(2FR) {:.1}% ({:.1}%)  AQ(2AQ) {} ({})  AQ1/AQ2/AQ3 {}/{}/{}  AOA {}%  TI {}",
            100.0 * a.fr,
            100.0 * a.fr2,
            opt(a.aq),
            opt(a.aq2),
            opt(a.aq_stage1),
            opt(a.aq_stage2),
            opt(a.aq_stage3),
            a.aoa.map_or("-".into(), |v| format!("{v:.2}")),
            self.ti.map_or("-".into(), |v| format!("{v:.5}")),
        );
        s
    }

    /// One JSON object per video.
    pub fn records(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// Attacks the first `n_videos` correctly classified videos, in parallel.
/// Video `i` uses the master seed derived with label `video:<i>`.
pub fn campaign(
    cfg: &AttackConfig,
    videos: &[CampaignVideo],
    n_videos: usize,
    oracle: &dyn BlackBox,
    logo_pool: &LogoSet,
) -> Result<CampaignReport> {
    cfg.validate()?;
    let mut chosen = Vec::new();
    let mut skipped = Vec::new();
    for v in videos {
        if chosen.len() == n_videos {
            break;
        }
        match precheck(oracle, &v.video, v.label) {
            Ok(()) => chosen.push(v),
            Err(_) => skipped.push(v.id.clone()),
        }
    }
    if chosen.is_empty() {
        return Err(LsfError::Empty("correctly classified videos"));
    }
    let results: Vec<(String, Result<CampaignEntry>)> = chosen
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let mut c = cfg.clone();
            c.seed = rng::derive_seed(cfg.seed, &format!("video:{i}"));
            let entry = run_attack(&c, &v.id, &v.video, v.label, oracle, logo_pool).and_then(|run| {
                let ti = match (&run.adversarial, run.trace.outcome) {
                    (Some(adv), Outcome::Success) if adv.dims().t >= 2 => Some(warping_error(adv)?.ti),
                    _ => None,
                };
                Ok(CampaignEntry {
                    wall_time_ms: run.trace.wall_time_ms,
                    trace: run.trace,
                    ti,
                })
            });
            (v.id.clone(), entry)
        })
        .collect();
    let mut entries = Vec::new();
    let mut errors = Vec::new();
    for (id, r) in results {
        match r {
            Ok(e) => entries.push(e),
            Err(e @ LsfError::Invariant(_)) => return Err(e),
            Err(e) => errors.push((id, e.to_string())),
        }
    }
    if entries.is_empty() {
        return Err(LsfError::Empty("campaign traces"));
    }
    let traces: Vec<AttackTrace> = entries.iter().map(|e| e.trace.clone()).collect();
    let tis: Vec<f64> = entries.iter().filter_map(|e| e.ti).collect();
    Ok(CampaignReport {
        aggregate: aggregate(&traces)?,
        ti: (!tis.is_empty()).then(|| tis.iter().sum::<f64>() / tis.len() as f64),
        entries,
        skipped,
        errors,
    })
}

/// One verified stage-3 episode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundTrial {
    pub seed: u64,
    pub k_scale: f64,
    pub check: BoundCheck,
    /// Max difference between the ledger re-synthesis and the maintained
    /// perturbation.
    pub reconstruction_error: f64,
    /// Trace objectives of accepted steps rise strictly.
    pub monotone: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundSummary {
    pub mode: Norm,
    pub basis: BasisKind,
    pub trials: usize,
    /// Trials whose hard bound held (a violation aborts the run instead).
    pub hard_pass: usize,
    pub rho_pass: usize,
    pub saturated: usize,
    pub equality_cases: usize,
    pub max_reconstruction_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundReport {
    pub summaries: Vec<BoundSummary>,
    pub trials: Vec<(Norm, BasisKind, BoundTrial)>,
}

impl BoundReport {
    pub fn table(&self) -> String {
        let mut s = String::from("mode\tbasis\ttrials\thard_pass\trho_pass\tsaturated\tequality\tmax_recon_err\n");
        for m in &self.summaries {
            let _ = writeln!(
                s,
                "{:?}\t{:?}\t{}\t{}\t{}\t{}\t{}\t{:.3e}",
                m.mode, m.basis, m.trials, m.hard_pass, m.rho_pass, m.saturated, m.equality_cases, m.max_reconstruction_error
            );
        }
        s
    }
}

/// Queries per verification episode.
pub const BOUND_EPISODE_QUERIES: u64 = 300;

/// One stage-3 episode on `base` with a mid-gray textured logo at a random
/// placement and a random target, capped at `queries` oracle calls.
pub fn bound_episode(
    cfg: &OptimizerConfig,
    base: &VideoTensor,
    label: usize,
    oracle: &dyn BlackBox,
    logo_size: usize,
    queries: u64,
    seed: u64,
) -> Result<BoundTrial> {
    let dims: Dims = base.dims();
    let mut r = rng::rng_from(seed);
    let k_index = r.gen_range(0..K_MENU.len());
    let k = K_MENU[k_index];
    let mh = crate::video::scaled_extent(k, logo_size);
    let mw = crate::video::scaled_extent(k, logo_size);
    let u = r.gen_range(0..=dims.h - mh);
    let v = r.gen_range(0..=dims.w - mw);
    let mask = RegionMask::from_extent(u, v, mh, mw, dims.h, dims.w)?;
    let patch: Vec<f32> = (0..mh * mw * dims.c).map(|_| r.gen_range(0.4f32..0.6)).collect();
    let start = crate::video::superimpose(base, &Image::new(mh, mw, dims.c, patch)?, &mask)?;
    let classes = oracle.class_count();
    let pick = r.gen_range(0..classes - 1);
    let goal = Goal::Targeted {
        target: if pick >= label { pick + 1 } else { pick },
    };
    let mut gate = QueryGate::new(oracle, QueryBudget::new(queries));
    let out = optimize(&mut gate, &start, &mask, &goal, cfg, seed)?;
    let rho_v = rho(k, logo_size, logo_size, dims.h, dims.w);
    let check = check_bounds(&out, &start, &mask, cfg, rho_v)?;
    let support = crate::dct::BasisSupport::new(cfg.basis, &mask, dims)?;
    let rebuilt = out.ledger.reconstruct(&support, cfg)?;
    let reconstruction_error = rebuilt.iter().zip(&out.delta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let acc: Vec<f64> = out.records.iter().filter(|r| r.accepted).map(|r| r.objective).collect();
    let monotone = acc.windows(2).all(|w| w[1] > w[0])
        && acc.first().is_none_or(|&a| out.initial_objective.is_some_and(|i| a > i));
    Ok(BoundTrial {
        seed,
        k_scale: k,
        check,
        reconstruction_error,
        monotone,
    })
}

/// Runs `n_trials` episodes for each mode and basis. Fails with
/// [`LsfError::Invariant`] on the first hard-bound violation.
pub fn verify_bounds(
    cfg: &AttackConfig,
    n_trials: usize,
    videos: &[CampaignVideo],
    oracle: &dyn BlackBox,
) -> Result<BoundReport> {
    if videos.is_empty() {
        return Err(LsfError::Empty("videos"));
    }
    let mut summaries = Vec::new();
    let mut trials = Vec::new();
    for mode in [Norm::L2, Norm::Linf] {
        for basis in [BasisKind::Subrect, BasisKind::Global] {
            let ocfg = OptimizerConfig {
                norm: mode,
                basis,
                ..cfg.optimizer()
            };
            let label = format!("bounds:{mode:?}:{basis:?}");
            let results: Vec<Result<BoundTrial>> = (0..n_trials)
                .into_par_iter()
                .map(|i| {
                    let v = &videos[i % videos.len()];
                    let seed = rng::derive_seed(cfg.seed, &format!("{label}:{i}"));
                    bound_episode(&ocfg, &v.video, v.label, oracle, crate::logo::LOGO_SIZE, BOUND_EPISODE_QUERIES, seed)
                })
                .collect();
            let results = results.into_iter().collect::<Result<Vec<_>>>()?;
            let mut s = BoundSummary {
                mode,
                basis,
                trials: results.len(),
                hard_pass: results.len(),
                rho_pass: 0,
                saturated: 0,
                equality_cases: 0,
                max_reconstruction_error: 0.0,
            };
            for t in &results {
                if !t.monotone {
                    return Err(LsfError::Invariant(format!("non-monotone acceptance in episode {}", t.seed)));
                }
                s.rho_pass += usize::from(t.check.rho_bound_holds);
                s.saturated += usize::from(t.check.saturated);
                s.equality_cases += usize::from(t.check.nonzero as u64 == t.check.k);
                s.max_reconstruction_error = s.max_reconstruction_error.max(t.reconstruction_error);
            }
            summaries.push(s);
            trials.extend(results.into_iter().map(|t| (mode, basis, t)));
        }
    }
    Ok(BoundReport { summaries, trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let mut c = AttackConfig::default();
        assert_eq!(AttackConfig::parse(&c.to_kv_string()).unwrap(), c);
        c.goal = GoalKind::Targeted;
        c.target = TargetSpec::Fixed(3);
        c.omega = Some(7);
        c.eta = 0.1 + 0.2;
        c.mode = Norm::L2;
        c.clip = ClipMode::PerTerm;
        c.basis = BasisKind::Global;
        c.seed = u64::MAX;
        c.style_step = 0.1;
        c.apply_ablation("one-round").unwrap();
        c.apply_ablation("no-area-penalty").unwrap();
        let text = c.to_kv_string();
        let back = AttackConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_kv_string(), text);
    }

    #[test]
    fn config_defaults_and_errors() {
        let c = AttackConfig::parse("# only comments\n\n").unwrap();
        assert_eq!(c, AttackConfig::default());
        assert_eq!((c.n_styles, c.n_logos, c.eta, c.epsilon), (5, 100, 0.2, 0.1));
        assert_eq!((c.mu_a, c.mu_d, c.query_limit), (0.004, 0.2, 300_000));
        assert_eq!(c.stage2(&Goal::Untargeted { original: 0 }).batch, 30);
        assert_eq!(c.stage2(&Goal::Targeted { target: 0 }).batch, 50);
        assert!(AttackConfig::parse("bogus = 1").is_err());
        assert!(AttackConfig::parse("eta").is_err());
        assert!(AttackConfig::parse("eta = -1").is_err());
        assert!(AttackConfig::parse("mode = l3").is_err());
        assert!(AttackConfig::parse("k_menu = 0.5,1.0").is_err());
        assert!(AttackConfig::default().apply_ablation("nope").is_err());
    }

    #[test]
    fn ablations_map_to_stage_settings() {
        let mut c = AttackConfig::default();
        for a in ["solid-color-init", "one-point-per-frame", "no-distance-penalty"] {
            c.apply_ablation(a).unwrap();
        }
        assert_eq!(c.style_search().init, StyleInit::SolidColor);
        assert_eq!(c.optimizer().grouping, Grouping::FrameGroup);
        assert_eq!(c.stage2(&Goal::Untargeted { original: 0 }).reward.mu_d, 0.0);
        c.apply_ablation("one-round").unwrap();
        assert_eq!(c.optimizer().max_rounds, 1);
    }

    #[test]
    fn random_targets_avoid_the_true_label() {
        let c = AttackConfig {
            goal: GoalKind::Targeted,
            ..Default::default()
        };
        for seed in 0..200 {
            let g = c.goal_for(3, 8, seed).unwrap();
            assert!(g.is_targeted() && g.label() != 3 && g.label() < 8);
        }
        let fixed = AttackConfig {
            target: TargetSpec::Fixed(3),
            ..c
        };
        assert!(fixed.goal_for(3, 8, 0).is_err());
    }
}
