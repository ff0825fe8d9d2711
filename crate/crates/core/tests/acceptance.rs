//! Acceptance checks, one test per criterion. Each prints a PASS/FAIL line
//! with the measured value next to the pinned tolerance, then asserts.
//!
//! Run with `cargo test -p lsf-core --test acceptance -- --nocapture` to see
//! the report lines.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;

use lsf_core::dct::{dct_matrix, BasisKind};
use lsf_core::harness::{
    bound_episode, campaign, run_attack, AttackConfig, AttackRun, BoundTrial, CampaignReport, CampaignVideo,
    GoalKind, TargetSpec, BOUND_EPISODE_QUERIES,
};
use lsf_core::logo::{synthesize_logo_set, LogoSet, LOGO_SIZE};
use lsf_core::logos_dct::{Norm, OptimizerConfig};
use lsf_core::metrics::{occluded_area, warping_error};
use lsf_core::oracle::{generate_dataset, train_classifier, BlackBox, OracleResponse, ToyClassifier};
use lsf_core::rl::{Geometry, PolicyNetwork};
use lsf_core::rng::{derive_seed, rng_from};
use lsf_core::stylize::{FeatureBank, StyleTarget, StyleTransferConfig};
use lsf_core::video::{Dims, Image, VideoTensor};

const ORTHO_TOL: f64 = 1e-9;
const BOUND_TOL: f64 = 1e-6;
const LINF_EPSILON: f64 = 0.1;
const RECON_TOL: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_COORDS: usize = 20;
const TI_STATIC_TOL: f64 = 1e-6;

const MIN_HELD_OUT: f64 = 0.90;
const MIN_FR_UNTARGETED: f64 = 0.90;
const MIN_FR2_UNTARGETED: f64 = 0.5;
const MIN_FR_TARGETED: f64 = 0.5;

const BOUND_TRIALS: usize = 100;
const RECON_TRIALS: usize = 20;
const CAMPAIGN_VIDEOS: usize = 20;

/// Pinned after the pilot runs.
const TRAIN_DATA_SEED: u64 = 1;
const HELD_OUT_DATA_SEED: u64 = 2;
const CAMPAIGN_DATA_SEED: u64 = 3;
const BOUND_DATA_SEED: u64 = 4;
const LOGO_SEED: u64 = 5;
const TRAIN_SEED: u64 = 7;
const CAMPAIGN_SEED: u64 = 2024;
const BOUND_SEED: u64 = 99;

/// Writes to the stdout handle directly so the text survives the test
/// harness's output capture.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "\n{text}").unwrap();
    out.flush().unwrap();
}

fn report(criterion: u8, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    emit(&format!("criterion {criterion:>2}: {verdict} | {}", detail.as_ref()));
    assert!(pass, "criterion {criterion} failed: {}", detail.as_ref());
}

struct Lab {
    oracle: ToyClassifier,
    held_out: f64,
    logos: LogoSet,
}

fn lab() -> &'static Lab {
    static LAB: OnceLock<Lab> = OnceLock::new();
    LAB.get_or_init(|| {
        let train = generate_dataset(TRAIN_DATA_SEED, 25).unwrap();
        let model = train_classifier(&train, 30, 0.1, TRAIN_SEED).unwrap();
        let test = generate_dataset(HELD_OUT_DATA_SEED, 10).unwrap();
        let held_out = model.classifier.accuracy(test.samples.iter().map(|s| (&s.video, s.label)));
        Lab {
            oracle: model.classifier,
            held_out,
            logos: synthesize_logo_set(LOGO_SEED, AttackConfig::default().n_logos).unwrap(),
        }
    })
}

fn videos(seed: u64, per_class: usize) -> Vec<CampaignVideo> {
    generate_dataset(seed, per_class)
        .unwrap()
        .samples
        .into_iter()
        .enumerate()
        .map(|(i, s)| CampaignVideo {
            id: format!("v{seed}_{i:03}"),
            video: s.video,
            label: s.label,
        })
        .collect()
}

fn correctly_classified(seed: u64, per_class: usize) -> Vec<CampaignVideo> {
    let oracle = &lab().oracle;
    videos(seed, per_class)
        .into_iter()
        .filter(|v| oracle.top1(&v.video).top1.label == v.label)
        .collect()
}

fn episodes(norm: Norm, n: usize) -> Vec<Result<BoundTrial, String>> {
    let cfg = OptimizerConfig {
        norm,
        basis: BasisKind::Subrect,
        ..OptimizerConfig::default()
    };
    let pool = correctly_classified(BOUND_DATA_SEED, 2);
    assert!(!pool.is_empty());
    (0..n)
        .map(|i| {
            let v = &pool[i % pool.len()];
            let seed = derive_seed(BOUND_SEED, &format!("{norm:?}:{i}"));
            bound_episode(&cfg, &v.video, v.label, &lab().oracle, LOGO_SIZE, BOUND_EPISODE_QUERIES, seed)
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn l2_episodes() -> &'static [Result<BoundTrial, String>] {
    static L2: OnceLock<Vec<Result<BoundTrial, String>>> = OnceLock::new();
    L2.get_or_init(|| episodes(Norm::L2, BOUND_TRIALS))
}

fn linf_episodes() -> &'static [Result<BoundTrial, String>] {
    static LINF: OnceLock<Vec<Result<BoundTrial, String>>> = OnceLock::new();
    LINF.get_or_init(|| episodes(Norm::Linf, BOUND_TRIALS))
}

fn run_campaign(goal: GoalKind) -> (CampaignReport, Duration) {
    let cfg = AttackConfig {
        goal,
        target: TargetSpec::Random,
        seed: CAMPAIGN_SEED,
        ..AttackConfig::default()
    };
    cfg.validate().unwrap();
    let pool = videos(CAMPAIGN_DATA_SEED, 3);
    let started = Instant::now();
    let report = campaign(&cfg, &pool, CAMPAIGN_VIDEOS, &lab().oracle, &lab().logos).unwrap();
    (report, started.elapsed())
}

fn untargeted_campaign() -> &'static (CampaignReport, Duration) {
    static C: OnceLock<(CampaignReport, Duration)> = OnceLock::new();
    C.get_or_init(|| run_campaign(GoalKind::Untargeted))
}

/// Counts every call that reaches the wrapped classifier.
struct Counting<'a> {
    inner: &'a ToyClassifier,
    calls: AtomicU64,
}

impl BlackBox for Counting<'_> {
    fn top1(&self, video: &VideoTensor) -> OracleResponse {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.top1(video)
    }

    fn class_count(&self) -> usize {
        self.inner.class_count()
    }
}

/// Short attacks reused by the monotonicity and determinism checks. The
/// targeted ones run with a reduced budget so that stage 3 is reached.
fn probe_configs() -> Vec<AttackConfig> {
    let base = AttackConfig {
        seed: 31,
        ..AttackConfig::default()
    };
    let mut out = vec![base.clone()];
    for (seed, target) in [(41, 6), (42, 1), (43, 4)] {
        out.push(AttackConfig {
            goal: GoalKind::Targeted,
            target: TargetSpec::Fixed(target),
            query_limit: 40_000,
            seed,
            ..base.clone()
        });
    }
    out
}

fn probe_runs() -> &'static [(AttackRun, u64)] {
    static RUNS: OnceLock<Vec<(AttackRun, u64)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let pool = correctly_classified(CAMPAIGN_DATA_SEED, 1);
        probe_configs()
            .iter()
            .enumerate()
            .map(|(i, cfg)| {
                let v = pool.iter().find(|v| cfg.target != TargetSpec::Fixed(v.label) && v.label % 4 == i % 4).unwrap();
                let counter = Counting {
                    inner: &lab().oracle,
                    calls: AtomicU64::new(0),
                };
                let run = run_attack(cfg, &v.id, &v.video, v.label, &counter, &lab().logos).unwrap();
                (run, counter.calls.load(Ordering::Relaxed))
            })
            .collect()
    })
}

#[test]
fn criterion_01_dct_orthonormal() {
    let started = Instant::now();
    let mut worst_row = 0.0f64;
    let mut worst_gram = 0.0f64;
    for d in 1..=64 {
        let a = dct_matrix(d).unwrap();
        for i in 0..d {
            let norm = a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            worst_row = worst_row.max((norm - 1.0).abs());
            for j in 0..d {
                let dot: f64 = a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst_gram = worst_gram.max((dot - want).abs());
            }
        }
    }
    let elapsed = started.elapsed();
    report(
        1,
        worst_row <= ORTHO_TOL && worst_gram <= ORTHO_TOL && elapsed < Duration::from_secs(1),
        format!("max |row norm - 1| {worst_row:.2e}, max |A A^T - I| {worst_gram:.2e} (tol {ORTHO_TOL:.0e}), {elapsed:?}"),
    );
}

#[test]
fn criterion_02_l2_bound() {
    let started = Instant::now();
    let trials = l2_episodes();
    let mut held = 0;
    let mut saturated = 0;
    let mut equality_cases = 0;
    let mut equality_held = 0;
    let mut worst_equality_gap = 0.0f64;
    let mut errors = Vec::new();
    for t in trials {
        match t {
            Ok(t) => {
                let c = &t.check;
                held += usize::from(c.l2 <= c.l2_bound + BOUND_TOL);
                saturated += usize::from(c.saturated);
                if c.nonzero as u64 == c.k.min(c.d as u64) {
                    equality_cases += 1;
                    let gap = (c.l2 - c.l2_bound).abs();
                    worst_equality_gap = worst_equality_gap.max(gap);
                    equality_held += usize::from(gap <= BOUND_TOL);
                }
            }
            Err(e) => errors.push(e.clone()),
        }
    }
    let elapsed = started.elapsed();
    report(
        2,
        held == BOUND_TRIALS
            && saturated == 0
            && equality_held == equality_cases
            && equality_cases > 0
            && elapsed < Duration::from_secs(300),
        format!(
            "bound held {held}/{BOUND_TRIALS}, saturated {saturated}, equality {equality_held}/{equality_cases} \
             (max gap {worst_equality_gap:.2e}, tol {BOUND_TOL:.0e}), errors {errors:?}, {elapsed:?}"
        ),
    );
}

#[test]
fn criterion_03_linf_clip() {
    let started = Instant::now();
    let trials = linf_episodes();
    let ok: Vec<&BoundTrial> = trials.iter().filter_map(|t| t.as_ref().ok()).collect();
    let held = ok.iter().filter(|t| t.check.linf <= LINF_EPSILON).count();
    let rho_pass = ok.iter().filter(|t| t.check.rho_bound_holds).count();
    let worst = ok.iter().map(|t| t.check.linf).fold(0.0, f64::max);
    let elapsed = started.elapsed();
    report(
        3,
        held == BOUND_TRIALS && elapsed < Duration::from_secs(300),
        format!(
            "linf <= {LINF_EPSILON} in {held}/{BOUND_TRIALS} (max {worst:.6}), rho-scaled bound held in \
             {rho_pass}/{} (reported only), {elapsed:?}",
            ok.len()
        ),
    );
}

#[test]
fn criterion_04_ledger_reconstruction() {
    let trials = &l2_episodes()[..RECON_TRIALS];
    let ok: Vec<&BoundTrial> = trials.iter().filter_map(|t| t.as_ref().ok()).collect();
    let worst = ok.iter().map(|t| t.reconstruction_error).fold(0.0, f64::max);
    report(
        4,
        ok.len() == RECON_TRIALS && worst <= RECON_TOL,
        format!("{} episodes, max reconstruction error {worst:.2e} (tol {RECON_TOL:.0e})", ok.len()),
    );
}

/// Central difference at step `h`, rejected when halving the step changes
/// the estimate noticeably (a ReLU kink inside the stencil).
fn stable_central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> Option<f64> {
    let diff = |h: f64| {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[i] += h;
        m[i] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    };
    let a = diff(h);
    let b = diff(h / 2.0);
    ((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-8)).then_some(b)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[test]
fn criterion_05_gradients() {
    let started = Instant::now();
    let mut r = rng_from(55);

    let bank = FeatureBank::standard();
    let img = |r: &mut rand_chacha::ChaCha8Rng, h: usize, w: usize| {
        Image::new(h, w, 3, (0..h * w * 3).map(|_| r.gen_range(0.0f32..1.0)).collect()).unwrap()
    };
    let logo = img(&mut r, 12, 12);
    let style = img(&mut r, 6, 6);
    let target = StyleTarget::new(&bank, &logo, &style).unwrap();
    let cfg = StyleTransferConfig::default();
    let x: Vec<f64> = (0..12 * 12 * 3).map(|_| r.gen_range(0.0..1.0)).collect();
    let (_, grad) = target.loss_and_grad(&x, &cfg).unwrap();
    let loss = |v: &[f64]| target.losses(v).unwrap().total(&cfg);
    let (mut style_checked, mut style_worst, mut kinks) = (0, 0.0f64, 0);
    while style_checked < GRAD_COORDS && kinks < 200 {
        let i = r.gen_range(0..x.len());
        match stable_central_difference(&loss, &x, i, 1e-4) {
            Some(num) => {
                style_worst = style_worst.max(relative_error(grad[i], num));
                style_checked += 1;
            }
            None => kinks += 1,
        }
    }

    let geo = Geometry {
        frame_h: 64,
        frame_w: 64,
        logo_h: LOGO_SIZE,
        logo_w: LOGO_SIZE,
    };
    let policy = PolicyNetwork::for_placement(geo, 10, 5, 77).unwrap();
    let (actions, _) = policy.sample(&mut r);
    let g = policy.grad_log_prob(&actions).unwrap();
    let (mut policy_checked, mut policy_zero, mut policy_worst) = (0, 0, 0.0f64);
    while policy_checked < GRAD_COORDS {
        let i = r.gen_range(0..policy.param_count());
        let h = 1e-3;
        let mut p = policy.clone();
        p.params_mut()[i] += h;
        let up = p.log_prob(&actions).unwrap();
        p.params_mut()[i] -= 2.0 * h;
        let down = p.log_prob(&actions).unwrap();
        let num = (up - down) / (2.0 * h);
        if g[i] == 0.0 && num.abs() < 1e-12 {
            // parameters of heads the sampled path never reads
            policy_zero += 1;
            continue;
        }
        policy_worst = policy_worst.max(relative_error(g[i], num));
        policy_checked += 1;
    }
    let elapsed = started.elapsed();
    report(
        5,
        style_checked >= GRAD_COORDS
            && policy_checked >= GRAD_COORDS
            && style_worst < GRAD_REL_TOL
            && policy_worst < GRAD_REL_TOL
            && elapsed < Duration::from_secs(60),
        format!(
            "style loss: {style_checked} coords, max rel err {style_worst:.2e} ({kinks} kink stencils skipped); \
             policy log-prob: {policy_checked} coords ({policy_zero} untouched skipped), max rel err {policy_worst:.2e} (tol {GRAD_REL_TOL:.0e}), {elapsed:?}"
        ),
    );
}

#[test]
fn criterion_06_untargeted_campaign() {
    let held_out = lab().held_out;
    let (rep, elapsed) = untargeted_campaign();
    emit(&rep.table());
    let a = &rep.aggregate;
    report(
        6,
        held_out >= MIN_HELD_OUT
            && a.n == CAMPAIGN_VIDEOS
            && rep.errors.is_empty()
            && a.fr >= MIN_FR_UNTARGETED
            && a.fr2 >= MIN_FR2_UNTARGETED
            && *elapsed < Duration::from_secs(30 * 60),
        format!(
            "held-out {held_out:.3} (min {MIN_HELD_OUT}), n {}, FR {:.3} (min {MIN_FR_UNTARGETED}), \
             2FR {:.3} (min {MIN_FR2_UNTARGETED}), AQ {:?}, errors {}, {elapsed:?}",
            a.n,
            a.fr,
            a.fr2,
            a.aq,
            rep.errors.len()
        ),
    );
}

#[test]
fn criterion_07_targeted_campaign() {
    let (rep, elapsed) = run_campaign(GoalKind::Targeted);
    emit(&rep.table());
    let untargeted_aq = untargeted_campaign().0.aggregate.aq;
    let a = &rep.aggregate;
    let costlier = matches!((a.aq, untargeted_aq), (Some(t), Some(u)) if t > u);
    report(
        7,
        a.n == CAMPAIGN_VIDEOS
            && rep.errors.is_empty()
            && a.fr >= MIN_FR_TARGETED
            && costlier
            && elapsed < Duration::from_secs(60 * 60),
        format!(
            "n {}, FR {:.3} (min {MIN_FR_TARGETED}), targeted AQ {:?} vs untargeted AQ {:?}, errors {}, {elapsed:?}",
            a.n,
            a.fr,
            a.aq,
            untargeted_aq,
            rep.errors.len()
        ),
    );
}

#[test]
fn criterion_08_monotone_acceptance() {
    let mut stage3_steps = 0usize;
    let mut stage3_bad = 0usize;
    let mut stage1_searches = 0usize;
    let mut stage1_bad = 0usize;
    for (run, _) in probe_runs() {
        let acc: Vec<f64> = run.stage3.iter().filter(|r| r.accepted).map(|r| r.objective).collect();
        stage3_steps += acc.len();
        stage3_bad += acc.windows(2).filter(|w| w[1] <= w[0]).count();
        if let Some(styles) = &run.styles {
            for s in &styles.images {
                stage1_searches += 1;
                stage1_bad += usize::from(s.accepted_objectives.windows(2).any(|w| w[1] <= w[0]));
            }
        }
    }
    let episodes: Vec<&BoundTrial> =
        l2_episodes().iter().chain(linf_episodes()).filter_map(|t| t.as_ref().ok()).collect();
    let episodes_bad = episodes.iter().filter(|t| !t.monotone).count();
    report(
        8,
        stage3_bad == 0 && stage1_bad == 0 && episodes_bad == 0 && stage3_steps > 0 && stage1_searches > 0,
        format!(
            "attack stage-3 accepted steps {stage3_steps} with {stage3_bad} non-increasing; \
             bound episodes {} with {episodes_bad} non-monotone; stage-1 searches {stage1_searches} with {stage1_bad} non-monotone",
            episodes.len()
        ),
    );
}

#[test]
fn criterion_09_determinism_and_accounting() {
    let runs = probe_runs();
    let mut mismatched_accounting = Vec::new();
    for (run, calls) in runs {
        // one extra call: the correctness precheck outside the budget
        if run.trace.queries.total() + 1 != *calls {
            mismatched_accounting.push((run.trace.queries.total(), *calls));
        }
    }
    let pool = correctly_classified(CAMPAIGN_DATA_SEED, 1);
    let mut identical = 0;
    let cfgs = probe_configs();
    for (i, (cfg, (first, _))) in cfgs.iter().zip(runs).enumerate() {
        let v = pool.iter().find(|v| cfg.target != TargetSpec::Fixed(v.label) && v.label % 4 == i % 4).unwrap();
        let again = run_attack(cfg, &v.id, &v.video, v.label, &lab().oracle, &lab().logos).unwrap();
        identical += usize::from(first.trace_lines().unwrap() == again.trace_lines().unwrap());
    }
    let outcomes: Vec<String> = runs
        .iter()
        .map(|(r, _)| format!("{:?}@{:?} q={}", r.trace.outcome, r.trace.success_stage, r.trace.queries.total()))
        .collect();
    report(
        9,
        identical == runs.len() && mismatched_accounting.is_empty(),
        format!(
            "byte-identical reruns {identical}/{}, accounting mismatches {mismatched_accounting:?}, runs {outcomes:?}",
            runs.len()
        ),
    );
}

#[test]
fn criterion_10_metrics_sanity() {
    let dims = Dims::new(6, 32, 32, 3);
    let frame: Vec<f32> = (0..dims.h * dims.w * dims.c)
        .map(|i| {
            let (y, x) = (i / (dims.w * 3), (i / 3) % dims.w);
            0.5 + 0.3 * ((x as f32 * 0.4).sin() * (y as f32 * 0.3).cos())
        })
        .collect();
    let static_video = VideoTensor::new(dims, frame.repeat(dims.t)).unwrap();
    let ti_static = warping_error(&static_video).unwrap().ti;

    let mut tis = Vec::new();
    for amp in [0.01f32, 0.05, 0.1] {
        let mut r2 = rng_from(derive_seed(11, "noise"));
        let data: Vec<f32> = static_video.data().iter().map(|v| (v + r2.gen_range(-amp..amp)).clamp(0.0, 1.0)).collect();
        tis.push(warping_error(&VideoTensor::new(dims, data).unwrap()).unwrap().ti);
    }
    let increasing = tis.windows(2).all(|w| w[1] > w[0]);
    let aoa = occluded_area(1.0, 32, 32, 64, 64);
    report(
        10,
        ti_static.abs() <= TI_STATIC_TOL && increasing && aoa == 25.0,
        format!("static TI {ti_static:.2e} (tol {TI_STATIC_TOL:.0e}), TI over noise 0.01/0.05/0.1 {tis:?}, AOA {aoa}%"),
    );
}
