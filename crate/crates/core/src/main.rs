use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lsf_core::format::{read_video, write_video};
use lsf_core::harness::{
    campaign, run_attack, verify_bounds, AttackConfig, CampaignVideo, GoalKind, TargetSpec,
};
use lsf_core::logo::{synthesize_logo_set, LogoSet};
use lsf_core::metrics::{aoa, warping_error, AttackTrace, Outcome};
use lsf_core::oracle::{
    export_dataset, generate_dataset, train_classifier, BlackBox, QueryBudget, QueryGate, Sample,
    SyntheticDataset, ToyClassifier,
};
use lsf_core::rng::derive_seed;
use lsf_core::style_search::{build_style_set, save_style_set};
use lsf_core::{LsfError, Result};

#[derive(Parser)]
#[command(name = "lsf", version, about = "Logo style transfer black-box video attack laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic moving-shapes dataset as LSFV1 files plus labels.tsv.
    GenDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 25)]
        per_class: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train the toy classifier on a labels.tsv index and save an LSFC1 checkpoint.
    TrainClassifier {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run stage 1 alone and save the style blocks as single-frame LSFV1 files.
    FindStyles {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        label: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize letter logos that pass the admission filter.
    GenLogos {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        seed: u64,
    },
    /// Attack one video; writes adversarial.lsfv, trace.jsonl and metrics.json.
    Attack {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        label: usize,
        #[command(flatten)]
        logos: LogoArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attack the first N correctly classified videos of an index.
    Campaign {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 20)]
        n_videos: usize,
        #[command(flatten)]
        logos: LogoArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run seeded stage-3 episodes in both norms and both bases and check the bounds.
    VerifyBounds {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Temporal inconsistency of a video, or AOA and queries of a trace.
    Metrics {
        #[arg(long, conflicts_with = "trace", required_unless_present = "trace")]
        video: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Ablation scenario; may be repeated.
    #[arg(long)]
    ablation: Vec<String>,
    #[arg(long)]
    targeted: bool,
    /// Fixed target class; implies --targeted.
    #[arg(long)]
    target: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<AttackConfig> {
        let mut cfg = match &self.config {
            Some(p) => AttackConfig::load(p)?,
            None => AttackConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| LsfError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        for a in &self.ablation {
            cfg.apply_ablation(a)?;
        }
        if self.targeted || self.target.is_some() {
            cfg.goal = GoalKind::Targeted;
        }
        if let Some(t) = self.target {
            cfg.target = TargetSpec::Fixed(t);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct LogoArgs {
    /// Directory of PNG logos; synthesized letter logos are used when absent.
    #[arg(long)]
    logos: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    logo_seed: u64,
}

impl LogoArgs {
    fn pool(&self, n: usize) -> Result<LogoSet> {
        match &self.logos {
            Some(dir) => LogoSet::load_dir(dir),
            None => synthesize_logo_set(self.logo_seed, n),
        }
    }
}

fn load_dataset(manifest: &Path) -> Result<SyntheticDataset> {
    let samples = CampaignVideo::load_manifest(manifest)?
        .into_iter()
        .map(|v| Sample {
            video: v.video,
            label: v.label,
        })
        .collect();
    Ok(SyntheticDataset { samples })
}

fn outcome_code(outcome: Outcome) -> ExitCode {
    match outcome {
        Outcome::Success => ExitCode::SUCCESS,
        Outcome::BudgetExhausted => ExitCode::from(3),
        Outcome::StageFailed => ExitCode::from(1),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenDataset { out, per_class, seed } => {
            let ds = generate_dataset(seed, per_class)?;
            let manifest = export_dataset(&ds, &out)?;
            println!("{} samples, index {}", ds.len(), manifest.display());
        }
        Command::TrainClassifier {
            manifest,
            out,
            epochs,
            lr,
            seed,
        } => {
            let ds = load_dataset(&manifest)?;
            let model = train_classifier(&ds, epochs, lr, seed)?;
            model.classifier.save(&out)?;
            println!(
                "train accuracy {:.4}, held-out accuracy {:.4}, checkpoint {}",
                model.train_accuracy,
                model.held_out_accuracy,
                out.display()
            );
        }
        Command::FindStyles {
            cfg,
            classifier,
            video,
            label,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let oracle = ToyClassifier::load(&classifier)?;
            let video = read_video(&video)?;
            let goal = cfg.goal_for(label, oracle.class_count(), cfg.seed)?;
            let mut gate = QueryGate::new(&oracle, QueryBudget::new(cfg.query_limit));
            let set = build_style_set(
                &mut gate,
                goal,
                video.dims(),
                cfg.n_styles,
                derive_seed(cfg.seed, "stage1"),
                &cfg.style_search(),
            )?;
            save_style_set(&set, &out)?;
            println!("{} styles for {goal:?}, {} queries", set.len(), gate.used());
        }
        Command::GenLogos { out, n, seed } => {
            let set = synthesize_logo_set(seed, n)?;
            set.save_dir(&out)?;
            println!("{} logos admitted of {n}", set.len());
        }
        Command::Attack {
            cfg,
            classifier,
            video,
            label,
            logos,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let oracle = ToyClassifier::load(&classifier)?;
            let id = video.file_stem().map_or_else(|| "video".into(), |s| s.to_string_lossy().into_owned());
            let video = read_video(&video)?;
            let pool = logos.pool(cfg.n_logos)?;
            let run = run_attack(&cfg, &id, &video, label, &oracle, &pool)?;
            fs::create_dir_all(&out)?;
            run.write_trace(out.join("trace.jsonl"))?;
            fs::write(out.join("config.txt"), cfg.to_kv_string())?;
            let mut metrics = serde_json::to_value(&run.trace)?;
            if let Some(adv) = &run.adversarial {
                write_video(out.join("adversarial.lsfv"), adv)?;
                if adv.dims().t >= 2 {
                    metrics["ti"] = serde_json::json!(warping_error(adv)?.ti);
                }
            }
            metrics["aoa"] = serde_json::json!(aoa(&run.trace));
            fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
            let t = &run.trace;
            println!(
                "{:?} at stage {}, queries {}/{}/{} (total {})",
                t.outcome,
                t.success_stage.map_or("-".into(), |s| s.to_string()),
                t.queries.q1,
                t.queries.q2,
                t.queries.q3,
                t.queries.total()
            );
            return Ok(outcome_code(t.outcome));
        }
        Command::Campaign {
            cfg,
            classifier,
            manifest,
            n_videos,
            logos,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let oracle = ToyClassifier::load(&classifier)?;
            let videos = CampaignVideo::load_manifest(&manifest)?;
            let pool = logos.pool(cfg.n_logos)?;
            let report = campaign(&cfg, &videos, n_videos, &oracle, &pool)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("report.tsv"), report.table())?;
            fs::write(out.join("records.jsonl"), report.records()?)?;
            fs::write(out.join("config.txt"), cfg.to_kv_string())?;
            print!("{}", report.table());
            for (id, e) in &report.errors {
                eprintln!("{id}: {e}");
            }
        }
        Command::VerifyBounds {
            cfg,
            classifier,
            manifest,
            trials,
        } => {
            let cfg = cfg.resolve()?;
            let oracle = ToyClassifier::load(&classifier)?;
            let videos = CampaignVideo::load_manifest(&manifest)?;
            let report = verify_bounds(&cfg, trials, &videos, &oracle)?;
            print!("{}", report.table());
        }
        Command::Metrics { video, trace } => {
            if let Some(path) = video {
                let r = warping_error(&read_video(&path)?)?;
                println!("ti {:.6} (pairs with empty occlusion map: {})", r.ti, r.empty_pairs.len());
            }
            if let Some(path) = trace {
                let text = fs::read_to_string(&path)?;
                let first = text.lines().next().ok_or(LsfError::Empty("trace file"))?;
                let mut value: serde_json::Value = serde_json::from_str(first)?;
                if let Some(obj) = value.as_object_mut() {
                    obj.remove("record");
                }
                let t: AttackTrace = serde_json::from_value(value)?;
                println!(
                    "{:?} at stage {}, queries {}/{}/{} (total {}), aoa {}",
                    t.outcome,
                    t.success_stage.map_or("-".into(), |s| s.to_string()),
                    t.queries.q1,
                    t.queries.q2,
                    t.queries.q3,
                    t.queries.total(),
                    aoa(&t).map_or("-".into(), |v| format!("{v:.2}%"))
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
