//! Stage 3: sign-ledger coordinate search over DCT coefficients of the logo
//! region.
//!
//! Every coefficient carries a sign state `gamma` in `{-1, 0, +1}`. A step
//! moves one coefficient (or, in frame-group mode, the same `(c, i, j)` on
//! every frame) by `beta` in `{+1, -1}` and keeps the move when the observed
//! objective strictly improves. The pixel-space perturbation is
//! `delta = sum_m psi(gamma_m * eta * p_m)`, kept in `f64` and apart from the
//! `[0, 1]` clamp of the video itself.

use serde::{Deserialize, Serialize};

use crate::dct::{frequency_set, BasisKind, BasisSupport, FrequencyIndex, Ordering};
use crate::error::{LsfError, Result};
use crate::oracle::{Goal, QueryGate, Stage};
use crate::rng;
use crate::video::{Dims, LabelScore, RegionMask, VideoTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Linf,
    L2,
}

/// Where the `epsilon` clip applies in linf mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    /// Clip the summed perturbation.
    Cumulative,
    /// Clip each coefficient's contribution before summing.
    PerTerm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// One coefficient per step.
    Single,
    /// The same `(c, i, j)` on all frames per step.
    FrameGroup,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub norm: Norm,
    pub eta: f64,
    pub epsilon: f64,
    pub max_rounds: usize,
    pub clip: ClipMode,
    pub grouping: Grouping,
    pub basis: BasisKind,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            norm: Norm::Linf,
            eta: 0.2,
            epsilon: 0.1,
            max_rounds: 10,
            clip: ClipMode::Cumulative,
            grouping: Grouping::Single,
            basis: BasisKind::Subrect,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(LsfError::Config(format!("eta = {}", self.eta)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(LsfError::Config(format!("epsilon = {}", self.epsilon)));
        }
        if self.max_rounds == 0 {
            return Err(LsfError::Config("stage-3 round cap must be at least 1".into()));
        }
        Ok(())
    }

    #[inline]
    fn term(&self, v: f64) -> f64 {
        match (self.norm, self.clip) {
            (Norm::Linf, ClipMode::PerTerm) => v.clamp(-self.epsilon, self.epsilon),
            _ => v,
        }
    }

    #[inline]
    fn cumulative(&self, v: f64) -> f64 {
        match (self.norm, self.clip) {
            (Norm::Linf, ClipMode::Cumulative) => v.clamp(-self.epsilon, self.epsilon),
            _ => v,
        }
    }
}

/// Sign state of every coefficient of a basis support.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoefficientLedger {
    pub kind: BasisKind,
    pub dims: Dims,
    pub origin: (usize, usize),
    pub gamma: Vec<i8>,
    /// Accepted coefficient moves (`K`); a frame-group step counts `T`.
    pub accepted_steps: u64,
}

impl CoefficientLedger {
    pub fn new(support: &BasisSupport) -> Self {
        Self {
            kind: support.kind(),
            dims: support.dims(),
            origin: support.origin(),
            gamma: vec![0; support.coefficient_count()],
            accepted_steps: 0,
        }
    }

    pub fn gamma(&self, idx: FrequencyIndex) -> i8 {
        self.gamma[self.dims.offset(idx.t, idx.i, idx.j, idx.c)]
    }

    pub fn nonzero(&self) -> usize {
        self.gamma.iter().filter(|&&g| g != 0).count()
    }

    fn check(&self, support: &BasisSupport) -> Result<()> {
        if self.kind != support.kind() || self.dims != support.dims() || self.origin != support.origin() {
            return Err(LsfError::BadInput(format!(
                "ledger for {:?} {:?} at {:?} does not match support {:?} {:?} at {:?}",
                self.kind,
                self.dims,
                self.origin,
                support.kind(),
                support.dims(),
                support.origin()
            )));
        }
        if self.gamma.len() != self.dims.len() || self.gamma.iter().any(|g| !(-1..=1).contains(g)) {
            return Err(LsfError::Invariant("ledger signs outside {-1, 0, 1}".into()));
        }
        Ok(())
    }

    /// Re-synthesizes `sum_m psi_term(gamma_m eta p_m)` over the support by
    /// brute force, one basis direction at a time.
    pub fn reconstruct(&self, support: &BasisSupport, cfg: &OptimizerConfig) -> Result<Vec<f64>> {
        self.check(support)?;
        let d = self.dims;
        let mut out = vec![0.0; d.len()];
        for (flat, &g) in self.gamma.iter().enumerate() {
            if g == 0 {
                continue;
            }
            let c = flat % d.c;
            let j = (flat / d.c) % d.w;
            let i = (flat / (d.c * d.w)) % d.h;
            let t = flat / (d.c * d.w * d.h);
            let dir = support.direction(FrequencyIndex::new(t, c, i, j))?;
            for (o, p) in out.iter_mut().zip(&dir) {
                if *p != 0.0 {
                    *o += cfg.term(f64::from(g) * cfg.eta * p);
                }
            }
        }
        Ok(out)
    }
}

/// Support-coordinate window covered by the mask, and the frame position of
/// support pixel `(0, 0)`.
#[derive(Clone, Copy, Debug)]
struct Window {
    y0: usize,
    x0: usize,
    h: usize,
    w: usize,
    oy: usize,
    ox: usize,
}

fn window(support: &BasisSupport, mask: &RegionMask) -> Window {
    let (oy, ox) = support.origin();
    match support.kind() {
        BasisKind::Subrect => Window {
            y0: 0,
            x0: 0,
            h: mask.height,
            w: mask.width,
            oy,
            ox,
        },
        BasisKind::Global => Window {
            y0: mask.u,
            x0: mask.v,
            h: mask.height,
            w: mask.width,
            oy,
            ox,
        },
    }
}

/// `clamp(x_base + M (psi(delta)))` for a support-shaped `delta`.
fn apply(base: &VideoTensor, support: &BasisSupport, mask: &RegionMask, delta: &[f64], cfg: &OptimizerConfig) -> VideoTensor {
    let d = support.dims();
    let win = window(support, mask);
    let mut out = base.clone();
    for t in 0..d.t {
        for y in win.y0..win.y0 + win.h {
            for x in win.x0..win.x0 + win.w {
                for c in 0..d.c {
                    let (fy, fx) = (y + win.oy, x + win.ox);
                    let v = f64::from(base.get(t, fy, fx, c)) + cfg.cumulative(delta[d.offset(t, y, x, c)]);
                    out.set(t, fy, fx, c, v as f32);
                }
            }
        }
    }
    out
}

/// Candidate obtained from `x_base` by moving `idx`'s sign by `beta` on top
/// of the perturbation implied by `ledger`. Reference (non-incremental)
/// form of one optimizer step; `x_base` is left untouched.
pub fn update(
    x_base: &VideoTensor,
    mask: &RegionMask,
    beta: i8,
    idx: FrequencyIndex,
    cfg: &OptimizerConfig,
    ledger: &CoefficientLedger,
) -> Result<VideoTensor> {
    let support = BasisSupport::new(ledger.kind, mask, x_base.dims())?;
    let mut moved = ledger.clone();
    let flat = support.flat(idx);
    let g = moved.gamma[flat] + beta;
    if !(-1..=1).contains(&g) {
        return Err(LsfError::OutOfRange(format!("sign {g} for {idx:?}")));
    }
    moved.gamma[flat] = g;
    let delta = moved.reconstruct(&support, cfg)?;
    Ok(apply(x_base, &support, mask, &delta, cfg))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationNorms {
    pub l2: f64,
    pub linf: f64,
}

/// Norms of `M (adv - reference)`.
pub fn perturbation_norms(adv: &VideoTensor, reference: &VideoTensor, mask: &RegionMask) -> Result<PerturbationNorms> {
    let d = adv.dims();
    if reference.dims() != d {
        return Err(LsfError::BadInput(format!("dims {:?} vs {:?}", d, reference.dims())));
    }
    mask.check_frame(d)?;
    let (mut ss, mut mx) = (0.0f64, 0.0f64);
    for t in 0..d.t {
        for y in mask.u..mask.u + mask.height {
            for x in mask.v..mask.v + mask.width {
                for c in 0..d.c {
                    let e = f64::from(adv.get(t, y, x, c)) - f64::from(reference.get(t, y, x, c));
                    ss += e * e;
                    mx = mx.max(e.abs());
                }
            }
        }
    }
    Ok(PerturbationNorms { l2: ss.sqrt(), linf: mx })
}

/// One stage-3 query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage3Record {
    pub query: u64,
    pub round: usize,
    /// For frame-group steps, `t` is 0 and the move applies to every frame.
    pub index: FrequencyIndex,
    pub beta: i8,
    pub accepted: bool,
    /// Incumbent objective after this step.
    pub objective: f64,
    /// Incumbent masked norms after this step.
    pub norms: PerturbationNorms,
}

#[derive(Clone, Debug)]
pub struct Stage3Outcome {
    pub video: VideoTensor,
    pub ledger: CoefficientLedger,
    pub success: bool,
    pub exhausted: bool,
    /// Rounds started.
    pub rounds: usize,
    pub response: Option<LabelScore>,
    pub initial_objective: Option<f64>,
    pub records: Vec<Stage3Record>,
    /// The perturbation added before the `[0, 1]` clamp, `psi(delta)` on
    /// the masked window and zero elsewhere, over the support dims.
    pub applied: Vec<f64>,
    /// The maintained `sum_m psi_term(gamma_m eta p_m)` over the support,
    /// before any cumulative clip or masking.
    pub delta: Vec<f64>,
}

impl Stage3Outcome {
    pub fn accepted_steps(&self) -> u64 {
        self.ledger.accepted_steps
    }
}

struct Search<'a> {
    cfg: OptimizerConfig,
    start: &'a VideoTensor,
    mask: RegionMask,
    support: BasisSupport,
    win: Window,
    delta: Vec<f64>,
    x: VideoTensor,
    ledger: CoefficientLedger,
    saved: Vec<(usize, usize, usize, usize, f32)>,
}

impl Search<'_> {
    /// Writes the candidate for `moves` into `x`, remembering old pixels.
    fn propose(&mut self, pattern: &[f64], moves: &[(usize, usize, i8, i8)]) {
        let d = self.support.dims();
        let eta = self.cfg.eta;
        self.saved.clear();
        for &(t, c, g0, g1) in moves {
            for y in self.win.y0..self.win.y0 + self.win.h {
                for x in self.win.x0..self.win.x0 + self.win.w {
                    let p = pattern[y * d.w + x];
                    let nd = self.delta[d.offset(t, y, x, c)] + self.cfg.term(f64::from(g1) * eta * p)
                        - self.cfg.term(f64::from(g0) * eta * p);
                    let (fy, fx) = (y + self.win.oy, x + self.win.ox);
                    let base = f64::from(self.start.get(t, fy, fx, c));
                    self.saved.push((t, fy, fx, c, self.x.get(t, fy, fx, c)));
                    self.x.set(t, fy, fx, c, (base + self.cfg.cumulative(nd)) as f32);
                }
            }
        }
    }

    fn revert(&mut self) {
        for &(t, y, x, c, v) in &self.saved {
            self.x.set(t, y, x, c, v);
        }
    }

    fn commit(&mut self, pattern: &[f64], moves: &[(usize, usize, i8, i8)], i: usize, j: usize) {
        let d = self.support.dims();
        let eta = self.cfg.eta;
        for &(t, c, g0, g1) in moves {
            for y in 0..d.h {
                for x in 0..d.w {
                    let p = pattern[y * d.w + x];
                    self.delta[d.offset(t, y, x, c)] +=
                        self.cfg.term(f64::from(g1) * eta * p) - self.cfg.term(f64::from(g0) * eta * p);
                }
            }
            self.ledger.gamma[d.offset(t, i, j, c)] = g1;
            self.ledger.accepted_steps += 1;
        }
    }

    fn applied(&self) -> Vec<f64> {
        let d = self.support.dims();
        let mut out = vec![0.0; d.len()];
        for t in 0..d.t {
            for y in self.win.y0..self.win.y0 + self.win.h {
                for x in self.win.x0..self.win.x0 + self.win.w {
                    for c in 0..d.c {
                        let o = d.offset(t, y, x, c);
                        out[o] = self.cfg.cumulative(self.delta[o]);
                    }
                }
            }
        }
        out
    }
}

/// Runs the coordinate search from `start` (the stage-2 video). Charges
/// every query to stage 3 of `gate`, including the initial check of
/// `start`.
pub fn optimize(
    gate: &mut QueryGate<'_>,
    start: &VideoTensor,
    mask: &RegionMask,
    goal: &Goal,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<Stage3Outcome> {
    optimize_from(gate, start, mask, goal, cfg, seed, None)
}

/// [`optimize`] continuing from a saved ledger.
pub fn optimize_from(
    gate: &mut QueryGate<'_>,
    start: &VideoTensor,
    mask: &RegionMask,
    goal: &Goal,
    cfg: &OptimizerConfig,
    seed: u64,
    resume: Option<CoefficientLedger>,
) -> Result<Stage3Outcome> {
    cfg.validate()?;
    if mask.area() == 0 {
        return Err(LsfError::BadInput("empty logo mask".into()));
    }
    let support = BasisSupport::new(cfg.basis, mask, start.dims())?;
    let ledger = match resume {
        Some(l) => {
            l.check(&support)?;
            l
        }
        None => CoefficientLedger::new(&support),
    };
    let delta = if ledger.nonzero() > 0 {
        ledger.reconstruct(&support, cfg)?
    } else {
        vec![0.0; support.coefficient_count()]
    };
    let x = apply(start, &support, mask, &delta, cfg);
    let mut s = Search {
        cfg: *cfg,
        start,
        mask: *mask,
        win: window(&support, mask),
        support,
        delta,
        x,
        ledger,
        saved: Vec::new(),
    };
    let mut out = Stage3Outcome {
        video: start.clone(),
        ledger: s.ledger.clone(),
        success: false,
        exhausted: false,
        rounds: 0,
        response: None,
        initial_objective: None,
        records: Vec::new(),
        applied: Vec::new(),
        delta: Vec::new(),
    };
    let finish = |s: Search<'_>, mut out: Stage3Outcome| {
        out.applied = s.applied();
        out.delta = s.delta;
        out.video = s.x;
        out.ledger = s.ledger;
        out
    };

    let mut resp = match gate.query(&s.x, Stage::Optimize) {
        Ok(r) => r.top1,
        Err(LsfError::BudgetExhausted { .. }) => {
            out.exhausted = true;
            return Ok(finish(s, out));
        }
        Err(e) => return Err(e),
    };
    let mut theta = goal.objective(&resp);
    out.initial_objective = Some(theta);
    out.response = Some(resp);
    if goal.is_met(&resp) {
        out.success = true;
        return Ok(finish(s, out));
    }
    let mut norms = perturbation_norms(&s.x, start, mask)?;
    let d = s.support.dims();
    let proposal_dims = match cfg.grouping {
        Grouping::Single => d,
        Grouping::FrameGroup => Dims::new(1, d.h, d.w, d.c),
    };
    let mut moves = Vec::with_capacity(d.t);
    for round in 0..cfg.max_rounds {
        out.rounds = round + 1;
        let order = frequency_set(proposal_dims, Ordering::Shuffled(rng::derive_seed(seed, &format!("stage3-round:{round}"))));
        for idx in order {
            let members: Vec<usize> = match cfg.grouping {
                Grouping::Single => vec![idx.t],
                Grouping::FrameGroup => (0..d.t).collect(),
            };
            let pattern = s.support.pattern(idx.i, idx.j);
            for beta in [1i8, -1] {
                moves.clear();
                let mut admissible = true;
                for &t in &members {
                    let g0 = s.ledger.gamma[d.offset(t, idx.i, idx.j, idx.c)];
                    let g1 = g0 + beta;
                    if !(-1..=1).contains(&g1) {
                        admissible = false;
                        break;
                    }
                    moves.push((t, idx.c, g0, g1));
                }
                if !admissible {
                    continue;
                }
                s.propose(&pattern, &moves);
                let r = match gate.query(&s.x, Stage::Optimize) {
                    Ok(r) => r.top1,
                    Err(LsfError::BudgetExhausted { .. }) => {
                        s.revert();
                        out.exhausted = true;
                        return Ok(finish(s, out));
                    }
                    Err(e) => return Err(e),
                };
                let obj = goal.objective(&r);
                let accepted = obj > theta;
                if accepted {
                    s.commit(&pattern, &moves, idx.i, idx.j);
                    theta = obj;
                    resp = r;
                    out.response = Some(resp);
                    norms = perturbation_norms(&s.x, start, &s.mask)?;
                } else {
                    s.revert();
                }
                out.records.push(Stage3Record {
                    query: gate.used(),
                    round,
                    index: idx,
                    beta,
                    accepted,
                    objective: theta,
                    norms,
                });
                if accepted {
                    if goal.is_met(&resp) {
                        out.success = true;
                        return Ok(finish(s, out));
                    }
                    break;
                }
            }
        }
    }
    Ok(finish(s, out))
}

/// `k sqrt(h w / (H W))`.
pub fn rho(k: f64, logo_h: usize, logo_w: usize, frame_h: usize, frame_w: usize) -> f64 {
    k * ((logo_h * logo_w) as f64 / (frame_h * frame_w) as f64).sqrt()
}

/// Norm bounds of one finished episode. Construction fails with
/// [`LsfError::Invariant`] when a hard bound is violated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub norm: Norm,
    pub basis: BasisKind,
    pub k: u64,
    pub nonzero: usize,
    pub d: usize,
    pub l2: f64,
    pub linf: f64,
    /// `eta sqrt(min(K, d))`
    pub l2_bound: f64,
    /// `|l2 - eta sqrt(nonzero)|` (sub-rectangle basis only).
    pub pythagoras_gap: Option<f64>,
    pub rho: f64,
    /// `eta rho sqrt(min(K, d))` in l2 mode, `epsilon rho sqrt(min(K, d))`
    /// in linf mode.
    pub rho_bound: f64,
    pub rho_bound_holds: bool,
    /// Some masked pixel of `start + applied` left `[0, 1]`.
    pub saturated: bool,
}

pub const BOUND_TOLERANCE: f64 = 1e-6;

pub fn check_bounds(
    outcome: &Stage3Outcome,
    start: &VideoTensor,
    mask: &RegionMask,
    cfg: &OptimizerConfig,
    rho: f64,
) -> Result<BoundCheck> {
    let support = BasisSupport::new(cfg.basis, mask, start.dims())?;
    outcome.ledger.check(&support)?;
    let d = support.coefficient_count();
    let k = outcome.ledger.accepted_steps;
    let nonzero = outcome.ledger.nonzero();
    let l2 = outcome.applied.iter().map(|v| v * v).sum::<f64>().sqrt();
    let linf = outcome.applied.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let root = (k.min(d as u64) as f64).sqrt();
    let l2_bound = cfg.eta * root;
    let win = window(&support, mask);
    let sd = support.dims();
    let mut saturated = false;
    for t in 0..sd.t {
        for y in win.y0..win.y0 + win.h {
            for x in win.x0..win.x0 + win.w {
                for c in 0..sd.c {
                    let v = f64::from(start.get(t, y + win.oy, x + win.ox, c)) + outcome.applied[sd.offset(t, y, x, c)];
                    saturated |= !(0.0..=1.0).contains(&v);
                }
            }
        }
    }
    let mut pythagoras_gap = None;
    match cfg.norm {
        Norm::L2 => {
            if l2 > l2_bound + BOUND_TOLERANCE {
                return Err(LsfError::Invariant(format!("masked l2 {l2} exceeds {l2_bound} (K = {k}, d = {d})")));
            }
            if cfg.basis == BasisKind::Subrect {
                let gap = (l2 - cfg.eta * (nonzero as f64).sqrt()).abs();
                if gap > BOUND_TOLERANCE {
                    return Err(LsfError::Invariant(format!("l2 {l2} differs from eta sqrt({nonzero}) by {gap}")));
                }
                pythagoras_gap = Some(gap);
            }
        }
        Norm::Linf => {
            if cfg.clip == ClipMode::Cumulative && linf > cfg.epsilon + 1e-12 {
                return Err(LsfError::Invariant(format!("masked linf {linf} exceeds {}", cfg.epsilon)));
            }
        }
    }
    let (measured, scale) = match cfg.norm {
        Norm::L2 => (l2, cfg.eta),
        Norm::Linf => (linf, cfg.epsilon),
    };
    let rho_bound = scale * rho * root;
    Ok(BoundCheck {
        norm: cfg.norm,
        basis: cfg.basis,
        k,
        nonzero,
        d,
        l2,
        linf,
        l2_bound,
        pythagoras_gap,
        rho,
        rho_bound,
        rho_bound_holds: measured <= rho_bound + BOUND_TOLERANCE,
        saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{BlackBox, OracleResponse, QueryBudget};
    use rand::Rng;

    /// Logistic score of a fixed random linear functional; label 1 above
    /// the threshold.
    struct Linear {
        w: Vec<f32>,
        bias: f64,
        scale: f64,
    }

    impl Linear {
        fn new(dims: Dims, seed: u64, bias: f64) -> Self {
            let mut r = rng::rng_from(seed);
            Self {
                w: (0..dims.len()).map(|_| r.gen_range(-1.0..1.0)).collect(),
                bias,
                scale: 0.5,
            }
        }
        fn p1(&self, v: &VideoTensor) -> f64 {
            let s: f64 = v.data().iter().zip(&self.w).map(|(a, b)| f64::from(a * b)).sum();
            1.0 / (1.0 + (-(s - self.bias) * self.scale).exp())
        }
    }

    impl BlackBox for Linear {
        fn top1(&self, v: &VideoTensor) -> OracleResponse {
            let p = self.p1(v);
            let top1 = if p > 0.5 {
                LabelScore { label: 1, score: p }
            } else {
                LabelScore { label: 0, score: 1.0 - p }
            };
            OracleResponse { top1 }
        }
        fn class_count(&self) -> usize {
            2
        }
    }

    fn setup(seed: u64) -> (VideoTensor, RegionMask) {
        let dims = Dims::new(2, 12, 12, 3);
        let mut r = rng::rng_from(seed);
        let data = (0..dims.len()).map(|_| r.gen_range(0.3f32..0.7)).collect();
        let v = VideoTensor::new(dims, data).unwrap();
        let mask = RegionMask::from_extent(3, 2, 6, 5, 12, 12).unwrap();
        (v, mask)
    }

    fn run(cfg: &OptimizerConfig, bias_shift: f64, limit: u64, seed: u64) -> (VideoTensor, RegionMask, Stage3Outcome, u64) {
        let (v, mask) = setup(seed);
        let mut oracle = Linear::new(v.dims(), seed + 1, 0.0);
        oracle.bias = {
            let s: f64 = v.data().iter().zip(&oracle.w).map(|(a, b)| f64::from(a * b)).sum();
            s + bias_shift
        };
        let mut gate = QueryGate::new(&oracle, QueryBudget::new(limit));
        let out = optimize(&mut gate, &v, &mask, &Goal::Untargeted { original: 0 }, cfg, seed).unwrap();
        (v, mask, out, gate.used())
    }

    #[test]
    fn accounting_monotonicity_and_signs() {
        let cfg = OptimizerConfig::default();
        let (_, _, out, used) = run(&cfg, 2.0, 50_000, 1);
        assert!(out.success, "easy goal should be met");
        assert_eq!(used, 1 + out.records.len() as u64);
        let acc: Vec<f64> = out.records.iter().filter(|r| r.accepted).map(|r| r.objective).collect();
        assert!(acc.windows(2).all(|w| w[1] > w[0]));
        assert!(acc[0] > out.initial_objective.unwrap());
        assert!(out.ledger.gamma.iter().all(|g| (-1..=1).contains(g)));
        assert_eq!(out.ledger.accepted_steps, acc.len() as u64);
        // +1 accepted means no -1 trial for that index in the same round
        for w in out.records.windows(2) {
            if w[0].accepted && w[0].beta == 1 {
                assert!(!(w[1].index == w[0].index && w[1].round == w[0].round));
            }
        }
    }

    #[test]
    fn incremental_state_matches_reference_update() {
        for (norm, clip) in [
            (Norm::L2, ClipMode::Cumulative),
            (Norm::Linf, ClipMode::Cumulative),
            (Norm::Linf, ClipMode::PerTerm),
        ] {
            let cfg = OptimizerConfig {
                norm,
                clip,
                eta: 0.3,
                epsilon: 0.05,
                max_rounds: 2,
                ..Default::default()
            };
            let (v, mask, out, _) = run(&cfg, 60.0, 800, 2);
            let support = BasisSupport::new(cfg.basis, &mask, v.dims()).unwrap();
            let delta = out.ledger.reconstruct(&support, &cfg).unwrap();
            let drift = delta.iter().zip(&out.delta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(drift < 1e-12, "{norm:?} {clip:?}: ledger drift {drift}");
            let rebuilt = apply(&v, &support, &mask, &delta, &cfg);
            let err = rebuilt.data().iter().zip(out.video.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            assert!(err < 1e-6, "{norm:?} {clip:?}: {err}");
            // one more step through the reference function
            let idx = FrequencyIndex::new(1, 2, 3, 1);
            let g = out.ledger.gamma(idx);
            let beta = if g < 1 { 1 } else { -1 };
            let cand = update(&v, &mask, beta, idx, &cfg, &out.ledger).unwrap();
            let mut moved = out.ledger.clone();
            moved.gamma[support.flat(idx)] += beta;
            let d2 = moved.reconstruct(&support, &cfg).unwrap();
            assert_eq!(cand, apply(&v, &support, &mask, &d2, &cfg));
            assert!(update(&v, &mask, beta * 2, idx, &cfg, &out.ledger).is_err() || g != 0);
        }
    }

    #[test]
    fn l2_episode_satisfies_pythagoras() {
        let cfg = OptimizerConfig {
            norm: Norm::L2,
            ..Default::default()
        };
        let (v, mask, out, _) = run(&cfg, 60.0, 1_500, 3);
        assert!(out.exhausted && !out.success);
        let r = rho(1.0, 6, 5, 12, 12);
        let check = check_bounds(&out, &v, &mask, &cfg, r).unwrap();
        assert!(check.k > 0);
        assert!(check.l2 <= check.l2_bound + 1e-9);
        assert!(check.pythagoras_gap.unwrap() < 1e-9);
        if check.nonzero as u64 == check.k {
            assert!((check.l2 - check.l2_bound).abs() < 1e-6);
        }
    }

    #[test]
    fn linf_clip_holds_and_per_term_mode_differs() {
        let mut cfg = OptimizerConfig {
            eta: 2.0,
            epsilon: 0.02,
            ..Default::default()
        };
        let (v, mask, out, _) = run(&cfg, 60.0, 1_500, 4);
        let check = check_bounds(&out, &v, &mask, &cfg, 0.5).unwrap();
        assert!(check.linf <= 0.02 + 1e-12);
        assert!(check.linf > 0.0);
        let n = perturbation_norms(&out.video, &v, &mask).unwrap();
        assert!(n.linf <= 0.02 + 1e-6);
        cfg.clip = ClipMode::PerTerm;
        let (_, _, per_term, _) = run(&cfg, 60.0, 1_500, 4);
        assert_ne!(per_term.applied, out.applied);
    }

    #[test]
    fn frame_groups_cost_one_query_and_count_t_moves() {
        let cfg = OptimizerConfig {
            grouping: Grouping::FrameGroup,
            ..Default::default()
        };
        let (_, _, out, used) = run(&cfg, 60.0, 400, 5);
        assert_eq!(used, 400);
        assert_eq!(out.records.len(), 399);
        let accepted = out.records.iter().filter(|r| r.accepted).count() as u64;
        assert!(accepted > 0);
        assert_eq!(out.ledger.accepted_steps, 2 * accepted);
        for r in out.records.iter().filter(|r| r.accepted) {
            let idx = r.index;
            assert_eq!(
                out.ledger.gamma(FrequencyIndex::new(0, idx.c, idx.i, idx.j)),
                out.ledger.gamma(FrequencyIndex::new(1, idx.c, idx.i, idx.j))
            );
        }
    }

    #[test]
    fn round_cap_stops_the_search() {
        let cfg = OptimizerConfig {
            max_rounds: 1,
            eta: 1e-9,
            ..Default::default()
        };
        // a tiny step never moves the score: each index costs two queries
        let (v, mask, out, used) = run(&cfg, 60.0, 10_000, 6);
        let d = BasisSupport::new(cfg.basis, &mask, v.dims()).unwrap().coefficient_count() as u64;
        assert!(!out.success && !out.exhausted);
        assert_eq!(out.rounds, 1);
        assert!(used <= 1 + 2 * d);
    }

    #[test]
    fn goal_met_at_start_costs_one_query() {
        let cfg = OptimizerConfig::default();
        let (_, _, out, used) = run(&cfg, -1e9, 10, 7);
        assert!(out.success);
        assert_eq!(used, 1);
        assert_eq!(out.ledger.accepted_steps, 0);
    }

    #[test]
    fn global_basis_is_masked_and_resumable() {
        let cfg = OptimizerConfig {
            basis: BasisKind::Global,
            norm: Norm::L2,
            ..Default::default()
        };
        let (v, mask, out, _) = run(&cfg, 60.0, 600, 8);
        assert_eq!(out.ledger.dims, v.dims());
        let outside = v
            .data()
            .iter()
            .zip(out.video.data())
            .enumerate()
            .filter(|(i, (a, b))| {
                let d = v.dims();
                let y = (i / (d.c * d.w)) % d.h;
                let x = (i / d.c) % d.w;
                !mask.contains(y, x) && a != b
            })
            .count();
        assert_eq!(outside, 0);
        let check = check_bounds(&out, &v, &mask, &cfg, rho(1.0, 6, 5, 12, 12)).unwrap();
        assert!(check.l2 <= check.l2_bound + 1e-9);

        let json = serde_json::to_string(&out.ledger).unwrap();
        let back: CoefficientLedger = serde_json::from_str(&json).unwrap();
        assert_eq!(back, out.ledger);
        let oracle = Linear::new(v.dims(), 9, 1e9);
        let mut gate = QueryGate::new(&oracle, QueryBudget::new(1));
        let resumed = optimize_from(&mut gate, &v, &mask, &Goal::Untargeted { original: 0 }, &cfg, 8, Some(back)).unwrap();
        assert_eq!(resumed.video, out.video);
        let wrong = CoefficientLedger { kind: BasisKind::Subrect, ..out.ledger };
        let mut gate = QueryGate::new(&oracle, QueryBudget::new(1));
        assert!(optimize_from(&mut gate, &v, &mask, &Goal::Untargeted { original: 0 }, &cfg, 8, Some(wrong)).is_err());
    }

    #[test]
    fn rho_arithmetic() {
        assert!((rho(0.5, 32, 32, 64, 64) - 0.25).abs() < 1e-15);
    }
}
