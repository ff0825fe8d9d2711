//! Stage 2: a recurrent REINFORCE agent choosing logo placement, scale,
//! logo and style.
//!
//! Actions are emitted in the order `k, u, v, logo, style`. The `u` and `v`
//! heads are masked to the positions that keep the scaled logo inside the
//! frame for the `k` already drawn. The policy is a single LSTM cell fed
//! with the one-hot encoding of the previous action (a start token first),
//! with one linear head per step.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LsfError, Result};
use crate::logo::LogoSet;
use crate::oracle::{Goal, QueryGate, Stage};
use crate::rng::{self, LabRng};
use crate::stylize::{stylize_logo, FeatureBank, StyleTransferConfig};
use crate::video::{resize, scaled_extent, superimpose, Dims, Image, LabelScore, RegionMask, ResizeMode, VideoTensor};

/// Scale menu for the logo.
pub const K_MENU: [f64; 5] = [0.75, 0.8125, 0.875, 0.9375, 1.0];
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// One point of the search space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSequence {
    pub u: usize,
    pub v: usize,
    /// Index into [`K_MENU`].
    pub k_index: usize,
    pub logo: usize,
    pub style: usize,
}

impl ActionSequence {
    pub fn k(&self) -> f64 {
        K_MENU[self.k_index]
    }

    pub fn mask(&self, geo: &Geometry) -> Result<RegionMask> {
        RegionMask::new(self.u, self.v, self.k(), geo.logo_h, geo.logo_w, geo.frame_h, geo.frame_w)
    }
}

/// Frame and (unscaled) logo extents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub frame_h: usize,
    pub frame_w: usize,
    pub logo_h: usize,
    pub logo_w: usize,
}

impl Geometry {
    fn max_offsets(&self, k: f64) -> (usize, usize) {
        (
            self.frame_h.saturating_sub(scaled_extent(k, self.logo_h)),
            self.frame_w.saturating_sub(scaled_extent(k, self.logo_w)),
        )
    }
}

/// Shortest Euclidean distance from the scaled logo's four corners to the
/// matching frame corners.
pub fn corner_distance(a: &ActionSequence, geo: &Geometry) -> f64 {
    let kh = scaled_extent(a.k(), geo.logo_h) as f64;
    let kw = scaled_extent(a.k(), geo.logo_w) as f64;
    let (u, v) = (a.u as f64, a.v as f64);
    let (hh, ww) = (geo.frame_h as f64, geo.frame_w as f64);
    [
        u.hypot(v),
        u.hypot(v + kw - ww),
        (u + kh - hh).hypot(v),
        (u + kh - hh).hypot(v + kw - ww),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub mu_a: f64,
    pub mu_d: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { mu_a: 0.004, mu_d: 0.2 }
    }
}

/// `log p - mu_a k^2 h w - mu_d d`, with `p` floored at
/// [`PROBABILITY_FLOOR`]. `p` is the goal probability: `p(yt|x)` when
/// targeted, `1 - p(y0|x)` when untargeted.
pub fn reward(goal_probability: f64, a: &ActionSequence, geo: &Geometry, params: &RewardParams) -> f64 {
    let k = a.k();
    goal_probability.max(PROBABILITY_FLOOR).ln()
        - params.mu_a * k * k * (geo.logo_h * geo.logo_w) as f64
        - params.mu_d * corner_distance(a, geo)
}

/// Goal probability recoverable from a top-1 response; `0` (hence the
/// floor) when the target class is not the top-1 label.
pub fn observed_goal_probability(goal: &Goal, top1: &LabelScore) -> f64 {
    goal.reward_probability(top1).unwrap_or(0.0)
}

/// How many leading entries of each head are admissible.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActionMask {
    /// Every entry of every head is valid.
    Unmasked,
    /// The five-step placement space: heads `k, u, v, logo, style`.
    Placement(Geometry),
}

impl ActionMask {
    fn valid(&self, step: usize, prefix: &[usize], card: usize) -> usize {
        match self {
            ActionMask::Unmasked => card,
            ActionMask::Placement(geo) => match step {
                1 | 2 => {
                    let (mu, mv) = geo.max_offsets(K_MENU[prefix[0]]);
                    (if step == 1 { mu } else { mv } + 1).min(card)
                }
                _ => card,
            },
        }
    }
}

/// LSTM policy with one categorical head per step.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNetwork {
    cards: Vec<usize>,
    hidden: usize,
    input: usize,
    mask: ActionMask,
    params: Vec<f64>,
}

/// Offsets of the parameter blocks inside the flat vector.
struct Layout {
    /// gate weights `4H x (input + H)`, then gate bias `4H`
    gates_w: usize,
    gates_b: usize,
    /// per head: weights `card x H` then bias `card`
    heads: Vec<usize>,
}

struct StepCache {
    x: usize,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
    action: usize,
}

pub const POLICY_HIDDEN: usize = 64;
pub const POLICY_INIT_RANGE: f64 = 0.08;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl PolicyNetwork {
    /// Parameters uniform in `[-POLICY_INIT_RANGE, POLICY_INIT_RANGE]`.
    pub fn new(cards: Vec<usize>, hidden: usize, mask: ActionMask, seed: u64) -> Result<Self> {
        if cards.is_empty() || cards.contains(&0) || hidden == 0 {
            return Err(LsfError::InvalidDims(format!("policy heads {cards:?}, hidden {hidden}")));
        }
        if let ActionMask::Placement(_) = mask {
            if cards.len() != 5 || cards[0] != K_MENU.len() {
                return Err(LsfError::InvalidDims("placement policy needs heads k, u, v, logo, style".into()));
            }
        }
        let input = 1 + cards.iter().sum::<usize>();
        let mut net = Self {
            cards,
            hidden,
            input,
            mask,
            params: Vec::new(),
        };
        let n = net.param_count();
        let mut r = rng::rng_from(seed);
        net.params = (0..n).map(|_| r.gen_range(-POLICY_INIT_RANGE..=POLICY_INIT_RANGE)).collect();
        Ok(net)
    }

    /// Heads `k, u, v, logo, style` sized for `geo`.
    pub fn for_placement(geo: Geometry, n_logos: usize, n_styles: usize, seed: u64) -> Result<Self> {
        let (mu, mv) = geo.max_offsets(K_MENU[0]);
        Self::new(
            vec![K_MENU.len(), mu + 1, mv + 1, n_logos, n_styles],
            POLICY_HIDDEN,
            ActionMask::Placement(geo),
            seed,
        )
    }

    fn layout(&self) -> Layout {
        let hd = self.hidden;
        let gates_w = 0;
        let gates_b = 4 * hd * (self.input + hd);
        let mut off = gates_b + 4 * hd;
        let heads = self
            .cards
            .iter()
            .map(|&c| {
                let at = off;
                off += c * hd + c;
                at
            })
            .collect();
        Layout { gates_w, gates_b, heads }
    }

    pub fn param_count(&self) -> usize {
        let hd = self.hidden;
        4 * hd * (self.input + hd) + 4 * hd + self.cards.iter().map(|&c| c * hd + c).sum::<usize>()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn steps(&self) -> usize {
        self.cards.len()
    }

    fn input_offset(&self, step: usize) -> usize {
        1 + self.cards[..step].iter().sum::<usize>()
    }

    /// Runs the recurrence. With `given`, replays those actions; otherwise
    /// samples from `r`. Returns the per-step caches.
    fn unroll(&self, given: Option<&[usize]>, mut r: Option<&mut LabRng>) -> Vec<StepCache> {
        let hd = self.hidden;
        let lay = self.layout();
        let p = &self.params;
        let stride = self.input + hd;
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut x = 0usize;
        let mut prefix = Vec::with_capacity(self.cards.len());
        let mut caches = Vec::with_capacity(self.cards.len());
        for (step, &card) in self.cards.iter().enumerate() {
            let mut z = p[lay.gates_b..lay.gates_b + 4 * hd].to_vec();
            for (row, zr) in z.iter_mut().enumerate() {
                let w = &p[lay.gates_w + row * stride..lay.gates_w + (row + 1) * stride];
                *zr += w[x] + w[self.input..].iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            }
            let i: Vec<f64> = z[..hd].iter().map(|&v| sigmoid(v)).collect();
            let f: Vec<f64> = z[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = z[2 * hd..3 * hd].iter().map(|&v| v.tanh()).collect();
            let o: Vec<f64> = z[3 * hd..].iter().map(|&v| sigmoid(v)).collect();
            let c_new: Vec<f64> = (0..hd).map(|j| f[j] * c[j] + i[j] * g[j]).collect();
            let h_new: Vec<f64> = (0..hd).map(|j| o[j] * c_new[j].tanh()).collect();

            let head = lay.heads[step];
            let valid = self.mask.valid(step, &prefix, card);
            let logits: Vec<f64> = (0..valid)
                .map(|a| {
                    let w = &p[head + a * hd..head + (a + 1) * hd];
                    p[head + card * hd + a] + w.iter().zip(&h_new).map(|(x, y)| x * y).sum::<f64>()
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            let mut probs: Vec<f64> = e.iter().map(|v| v / s).collect();
            probs.resize(card, 0.0);

            let action = match given {
                Some(seq) => seq[step],
                None => {
                    let r = r.as_deref_mut().expect("sampling needs an rng");
                    let u: f64 = r.gen();
                    let mut acc = 0.0;
                    let mut pick = valid - 1;
                    for (a, &pa) in probs[..valid].iter().enumerate() {
                        acc += pa;
                        if u < acc {
                            pick = a;
                            break;
                        }
                    }
                    pick
                }
            };
            caches.push(StepCache {
                x,
                h_prev: std::mem::replace(&mut h, h_new.clone()),
                c_prev: std::mem::replace(&mut c, c_new.clone()),
                i,
                f,
                g,
                o,
                c: c_new,
                h: h_new,
                probs,
                action,
            });
            prefix.push(action);
            x = self.input_offset(step) + action;
        }
        caches
    }

    /// Draws one action per head in order.
    pub fn sample(&self, r: &mut LabRng) -> (Vec<usize>, f64) {
        let caches = self.unroll(None, Some(r));
        let logp = caches.iter().map(|c| c.probs[c.action].ln()).sum();
        (caches.iter().map(|c| c.action).collect(), logp)
    }

    /// Per-step probability vectors (masked entries are 0) along `actions`.
    pub fn step_probabilities(&self, actions: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_actions(actions)?;
        Ok(self.unroll(Some(actions), None).into_iter().map(|c| c.probs).collect())
    }

    pub fn log_prob(&self, actions: &[usize]) -> Result<f64> {
        self.check_actions(actions)?;
        Ok(self.unroll(Some(actions), None).iter().map(|c| c.probs[c.action].ln()).sum())
    }

    fn check_actions(&self, actions: &[usize]) -> Result<()> {
        if actions.len() != self.cards.len() {
            return Err(LsfError::DimensionMismatch {
                axis: "action count",
                expected: self.cards.len(),
                got: actions.len(),
            });
        }
        for (step, (&a, &card)) in actions.iter().zip(&self.cards).enumerate() {
            let valid = self.mask.valid(step, &actions[..step], card);
            if a >= valid {
                return Err(LsfError::OutOfRange(format!("action {a} at step {step} (valid < {valid})")));
            }
        }
        Ok(())
    }

    /// Gradient of `log pi(actions)` with respect to every parameter.
    pub fn grad_log_prob(&self, actions: &[usize]) -> Result<Vec<f64>> {
        self.check_actions(actions)?;
        let caches = self.unroll(Some(actions), None);
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_grad(&caches, 1.0, &mut grad);
        Ok(grad)
    }

    /// Adds `scale * d log pi / d theta` into `grad` (backprop through time).
    fn accumulate_grad(&self, caches: &[StepCache], scale: f64, grad: &mut [f64]) {
        let hd = self.hidden;
        let lay = self.layout();
        let p = &self.params;
        let stride = self.input + hd;
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        for (step, cache) in caches.iter().enumerate().rev() {
            let card = self.cards[step];
            let head = lay.heads[step];
            // d log p[a] / d logit = onehot(a) - p  (zero on masked entries)
            let mut dh = dh_next.clone();
            for (a, &pa) in cache.probs.iter().enumerate() {
                let dl = scale * (if a == cache.action { 1.0 } else { 0.0 } - pa);
                if dl == 0.0 {
                    continue;
                }
                grad[head + card * hd + a] += dl;
                let w = &p[head + a * hd..head + (a + 1) * hd];
                for j in 0..hd {
                    grad[head + a * hd + j] += dl * cache.h[j];
                    dh[j] += dl * w[j];
                }
            }
            let mut dz = vec![0.0; 4 * hd];
            let mut dc_prev = vec![0.0; hd];
            for j in 0..hd {
                let tc = cache.c[j].tanh();
                let do_ = dh[j] * tc;
                let dc = dc_next[j] + dh[j] * cache.o[j] * (1.0 - tc * tc);
                let di = dc * cache.g[j];
                let dg = dc * cache.i[j];
                let df = dc * cache.c_prev[j];
                dc_prev[j] = dc * cache.f[j];
                dz[j] = di * cache.i[j] * (1.0 - cache.i[j]);
                dz[hd + j] = df * cache.f[j] * (1.0 - cache.f[j]);
                dz[2 * hd + j] = dg * (1.0 - cache.g[j] * cache.g[j]);
                dz[3 * hd + j] = do_ * cache.o[j] * (1.0 - cache.o[j]);
            }
            let mut dh_prev = vec![0.0; hd];
            for (row, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[lay.gates_b + row] += d;
                let wrow = lay.gates_w + row * stride;
                grad[wrow + cache.x] += d;
                for j in 0..hd {
                    grad[wrow + self.input + j] += d * cache.h_prev[j];
                    dh_prev[j] += d * p[wrow + self.input + j];
                }
            }
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
    }

    /// One REINFORCE step on `batch` of `(actions, reward)`: with baseline
    /// `b` the batch mean reward, `theta += lr / n * sum (R - b) grad log pi`.
    pub fn reinforce_update(&mut self, batch: &[(Vec<usize>, f64)], lr: f64) -> Result<()> {
        if batch.is_empty() {
            return Err(LsfError::Empty("REINFORCE batch"));
        }
        let baseline = batch.iter().map(|(_, r)| r).sum::<f64>() / batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        for (actions, r) in batch {
            self.check_actions(actions)?;
            let adv = r - baseline;
            if adv == 0.0 {
                continue;
            }
            let caches = self.unroll(Some(actions), None);
            self.accumulate_grad(&caches, adv / batch.len() as f64, &mut grad);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(LsfError::NonFinite("policy gradient".into()));
        }
        for (p, g) in self.params.iter_mut().zip(&grad) {
            *p += lr * g;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    /// Sequences sampled per iteration.
    pub batch: usize,
    pub max_iterations: usize,
    /// Iterations without a new best reward before stopping.
    pub patience: usize,
    pub lr: f64,
    pub reward: RewardParams,
}

impl Stage2Config {
    pub fn for_goal(goal: &Goal) -> Self {
        Self {
            batch: if goal.is_targeted() { 50 } else { 30 },
            max_iterations: 50,
            patience: 5,
            lr: 0.01,
            reward: RewardParams::default(),
        }
    }
}

/// One evaluated sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Record {
    pub iteration: usize,
    pub sample: usize,
    pub actions: ActionSequence,
    pub reward: f64,
    pub label: usize,
    pub score: f64,
    pub queries: u64,
}

#[derive(Clone, Debug)]
pub struct Stage2Best {
    pub video: VideoTensor,
    pub actions: ActionSequence,
    pub reward: f64,
    pub response: LabelScore,
}

#[derive(Clone, Debug)]
pub struct Stage2Outcome {
    pub best: Option<Stage2Best>,
    pub success: bool,
    pub exhausted: bool,
    pub iterations: usize,
    pub records: Vec<Stage2Record>,
    /// Distinct (logo, style) style transfers performed.
    pub stylizations: usize,
}

/// Inputs of the stage that do not change between iterations.
pub struct Stage2Inputs<'a> {
    pub base: &'a VideoTensor,
    pub goal: Goal,
    pub styles: &'a [Image],
    pub logos: &'a LogoSet,
    pub bank: &'a FeatureBank,
    pub transfer: &'a StyleTransferConfig,
}

/// Memo of stylized logos keyed by `(logo, style)`.
#[derive(Default)]
pub struct StylizationCache {
    entries: HashMap<(usize, usize), Image>,
    computed: usize,
}

impl StylizationCache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of style transfers actually run.
    pub fn computed(&self) -> usize {
        self.computed
    }

    pub fn get(&self, logo: usize, style: usize) -> Option<&Image> {
        self.entries.get(&(logo, style))
    }

    /// Stylizes every missing pair (in parallel).
    pub fn fill(&mut self, pairs: &[(usize, usize)], inputs: &Stage2Inputs<'_>) -> Result<()> {
        let mut missing: Vec<(usize, usize)> = pairs.iter().copied().filter(|p| !self.entries.contains_key(p)).collect();
        missing.sort_unstable();
        missing.dedup();
        let done: Vec<((usize, usize), Result<Image>)> = missing
            .par_iter()
            .map(|&(l, s)| {
                let logo = inputs.logos.get(l).ok_or_else(|| LsfError::OutOfRange(format!("logo {l}")));
                let style = inputs.styles.get(s).ok_or_else(|| LsfError::OutOfRange(format!("style {s}")));
                let out = logo.and_then(|logo| {
                    stylize_logo(&logo.rgb(), style?, inputs.bank, inputs.transfer).map(|st| st.image)
                });
                ((l, s), out)
            })
            .collect();
        for (key, img) in done {
            self.entries.insert(key, img?);
            self.computed += 1;
        }
        Ok(())
    }
}

/// `x_0` with the stylized logo of `a` pasted in.
pub fn render(base: &VideoTensor, stylized: &Image, a: &ActionSequence, geo: &Geometry) -> Result<VideoTensor> {
    let mask = a.mask(geo)?;
    if mask.area() == 0 {
        return Ok(base.clone());
    }
    let scaled = resize(stylized, mask.height, mask.width, ResizeMode::Bilinear)?;
    superimpose(base, &scaled, &mask)
}

fn to_sequence(actions: &[usize]) -> ActionSequence {
    ActionSequence {
        k_index: actions[0],
        u: actions[1],
        v: actions[2],
        logo: actions[3],
        style: actions[4],
    }
}

/// Runs the policy search. Every query is charged to stage 2 of `gate`.
/// Returns the highest-reward video seen; when some sampled video meets the
/// goal, the highest-reward one among those.
pub fn direct_stage2(
    gate: &mut QueryGate<'_>,
    inputs: &Stage2Inputs<'_>,
    cfg: &Stage2Config,
    cache: &mut StylizationCache,
    seed: u64,
) -> Result<Stage2Outcome> {
    if cfg.batch == 0 || cfg.max_iterations == 0 {
        return Err(LsfError::Config("stage-2 batch and iteration cap must be at least 1".into()));
    }
    if inputs.styles.is_empty() || inputs.logos.is_empty() {
        return Err(LsfError::Empty("style or logo set"));
    }
    let first = inputs.logos.get(0).expect("nonempty");
    let (logo_h, logo_w) = (first.height(), first.width());
    if inputs.logos.iter().any(|l| (l.height(), l.width()) != (logo_h, logo_w)) {
        return Err(LsfError::BadInput("all logos must share one size".into()));
    }
    let Dims { h, w, .. } = inputs.base.dims();
    let geo = Geometry {
        frame_h: h,
        frame_w: w,
        logo_h,
        logo_w,
    };
    let mut policy =
        PolicyNetwork::for_placement(geo, inputs.logos.len(), inputs.styles.len(), rng::derive_seed(seed, "policy-init"))?;
    let before = cache.computed();
    let mut out = Stage2Outcome {
        best: None,
        success: false,
        exhausted: false,
        iterations: 0,
        records: Vec::new(),
        stylizations: 0,
    };
    let mut best_success: Option<Stage2Best> = None;
    let mut stale = 0usize;
    for iteration in 0..cfg.max_iterations {
        let mut r = rng::derived_rng(seed, &format!("stage2-iter:{iteration}"));
        let samples: Vec<Vec<usize>> = (0..cfg.batch).map(|_| policy.sample(&mut r).0).collect();
        let pairs: Vec<(usize, usize)> = samples.iter().map(|s| (s[3], s[4])).collect();
        cache.fill(&pairs, inputs)?;
        out.iterations = iteration + 1;

        let best_before = out.best.as_ref().map(|b| b.reward);
        let mut batch = Vec::with_capacity(cfg.batch);
        for (sample, actions) in samples.into_iter().enumerate() {
            let a = to_sequence(&actions);
            let stylized = cache.get(a.logo, a.style).expect("filled above");
            let video = render(inputs.base, stylized, &a, &geo)?;
            let resp = match gate.query(&video, Stage::Direct) {
                Ok(r) => r.top1,
                Err(LsfError::BudgetExhausted { .. }) => {
                    out.exhausted = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let rew = reward(observed_goal_probability(&inputs.goal, &resp), &a, &geo, &cfg.reward);
            out.records.push(Stage2Record {
                iteration,
                sample,
                actions: a,
                reward: rew,
                label: resp.label,
                score: resp.score,
                queries: gate.used(),
            });
            let candidate = || Stage2Best {
                video: video.clone(),
                actions: a,
                reward: rew,
                response: resp,
            };
            if inputs.goal.is_met(&resp) && best_success.as_ref().is_none_or(|b| rew > b.reward) {
                best_success = Some(candidate());
            }
            if out.best.as_ref().is_none_or(|b| rew > b.reward) {
                out.best = Some(candidate());
            }
            batch.push((actions, rew));
        }
        if best_success.is_some() || out.exhausted {
            break;
        }
        let improved = match (best_before, out.best.as_ref()) {
            (None, Some(_)) => true,
            (Some(prev), Some(b)) => b.reward > prev,
            _ => false,
        };
        stale = if improved { 0 } else { stale + 1 };
        if stale >= cfg.patience {
            break;
        }
        policy.reinforce_update(&batch, cfg.lr)?;
    }
    if let Some(b) = best_success {
        out.success = true;
        out.best = Some(b);
    }
    out.stylizations = cache.computed() - before;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{BlackBox, OracleResponse, QueryBudget};

    const GEO: Geometry = Geometry {
        frame_h: 64,
        frame_w: 64,
        logo_h: 32,
        logo_w: 32,
    };

    fn seq(u: usize, v: usize, k_index: usize) -> ActionSequence {
        ActionSequence {
            u,
            v,
            k_index,
            logo: 0,
            style: 0,
        }
    }

    #[test]
    fn corner_distances() {
        assert_eq!(corner_distance(&seq(0, 0, 4), &GEO), 0.0);
        assert_eq!(corner_distance(&seq(40, 40, 0), &GEO), 0.0);
        let d = corner_distance(&seq(16, 16, 4), &GEO);
        assert!((d - 22.627_416_997_969_52).abs() < 1e-9);
    }

    #[test]
    fn reward_arithmetic_and_monotonicity() {
        let p = RewardParams::default();
        assert!((reward(1.0, &seq(0, 0, 4), &GEO, &p) - -4.096).abs() < 1e-12);
        let untargeted_miss = reward(1.0, &seq(0, 0, 4), &GEO, &p);
        assert!((untargeted_miss - -4.096).abs() < 1e-12);
        let zero = RewardParams { mu_a: 0.0, mu_d: 0.0 };
        assert_eq!(reward(0.25, &seq(10, 7, 2), &GEO, &zero), 0.25f64.ln());
        assert_eq!(reward(0.0, &seq(0, 0, 0), &GEO, &zero), PROBABILITY_FLOOR.ln());
        let near = reward(0.5, &seq(2, 2, 0), &GEO, &p);
        let far = reward(0.5, &seq(6, 6, 0), &GEO, &p);
        assert!(far < near);
        let small = reward(0.5, &seq(0, 0, 0), &GEO, &p);
        let big = reward(0.5, &seq(0, 0, 1), &GEO, &p);
        assert!(big < small);
    }

    #[test]
    fn observed_probability_under_top1() {
        let top = LabelScore { label: 3, score: 0.8 };
        assert_eq!(observed_goal_probability(&Goal::Targeted { target: 3 }, &top), 0.8);
        assert_eq!(observed_goal_probability(&Goal::Targeted { target: 2 }, &top), 0.0);
        assert!((observed_goal_probability(&Goal::Untargeted { original: 3 }, &top) - 0.2).abs() < 1e-15);
        assert_eq!(observed_goal_probability(&Goal::Untargeted { original: 1 }, &top), 1.0);
    }

    fn placement_policy(seed: u64) -> PolicyNetwork {
        PolicyNetwork::for_placement(GEO, 6, 3, seed).unwrap()
    }

    #[test]
    fn heads_are_normalized_and_masked() {
        let pol = placement_policy(1);
        let mut r = rng::rng_from(2);
        for _ in 0..20 {
            let (a, logp) = pol.sample(&mut r);
            let probs = pol.step_probabilities(&a).unwrap();
            for p in &probs {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
            let (mu, mv) = GEO.max_offsets(K_MENU[a[0]]);
            assert!(probs[1][mu + 1..].iter().all(|&x| x == 0.0));
            assert!(probs[2][mv + 1..].iter().all(|&x| x == 0.0));
            assert!(a[1] <= mu && a[2] <= mv);
            let replay: f64 = probs.iter().zip(&a).map(|(p, &x)| p[x].ln()).sum();
            assert!((replay - logp).abs() < 1e-12);
            assert!((pol.log_prob(&a).unwrap() - logp).abs() < 1e-12);
        }
        let mut bad = vec![4, 33, 0, 0, 0];
        assert!(pol.log_prob(&bad).is_err());
        bad[1] = 32;
        assert!(pol.log_prob(&bad).is_ok());
    }

    #[test]
    fn one_hot_heads_are_deterministic() {
        let mut pol = PolicyNetwork::new(vec![3, 4], 4, ActionMask::Unmasked, 5).unwrap();
        let lay = pol.layout();
        // huge bias on action 2 of head 0 and action 1 of head 1
        let (h0, h1) = (lay.heads[0], lay.heads[1]);
        pol.params_mut()[h0 + 3 * 4 + 2] = 1e3;
        pol.params_mut()[h1 + 4 * 4 + 1] = 1e3;
        let mut r = rng::rng_from(0);
        for _ in 0..5 {
            let (a, logp) = pol.sample(&mut r);
            assert_eq!(a, vec![2, 1]);
            assert!(logp.abs() < 1e-12);
        }
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let pol = placement_policy(7);
        let mut r = rng::rng_from(8);
        let (a, _) = pol.sample(&mut r);
        let grad = pol.grad_log_prob(&a).unwrap();
        let mut checked = 0;
        while checked < 30 {
            let i = r.gen_range(0..pol.param_count());
            let h = 1e-5;
            let mut p = pol.clone();
            p.params_mut()[i] += h;
            let up = p.log_prob(&a).unwrap();
            p.params_mut()[i] -= 2.0 * h;
            let down = p.log_prob(&a).unwrap();
            let num = (up - down) / (2.0 * h);
            if grad[i].abs().max(num.abs()) < 1e-9 {
                // parameter without influence (unused head row)
                assert!(num.abs() < 1e-9);
                continue;
            }
            let tol = 1e-4 * grad[i].abs().max(num.abs()) + 1e-8;
            assert!((grad[i] - num).abs() < tol, "param {i}: {} vs {num}", grad[i]);
            checked += 1;
        }
    }

    #[test]
    fn constant_rewards_leave_parameters_unchanged() {
        let mut pol = placement_policy(3);
        let before = pol.clone();
        let mut r = rng::rng_from(4);
        let batch: Vec<(Vec<usize>, f64)> = (0..6).map(|_| (pol.sample(&mut r).0, -2.5)).collect();
        pol.reinforce_update(&batch, 0.01).unwrap();
        assert_eq!(pol, before);
        assert!(pol.reinforce_update(&[], 0.01).is_err());
    }

    #[test]
    fn bandit_learns_rewarding_arm() {
        let mut improved = 0;
        for seed in 0..100 {
            let mut pol = PolicyNetwork::new(vec![2], 8, ActionMask::Unmasked, seed).unwrap();
            let p0 = pol.step_probabilities(&[0]).unwrap()[0][0];
            let mut r = rng::rng_from(1000 + seed);
            for _ in 0..10 {
                let batch: Vec<(Vec<usize>, f64)> = (0..8)
                    .map(|_| {
                        let (a, _) = pol.sample(&mut r);
                        let rew = if a[0] == 0 { 1.0 } else { 0.0 };
                        (a, rew)
                    })
                    .collect();
                pol.reinforce_update(&batch, 0.5).unwrap();
            }
            if pol.step_probabilities(&[0]).unwrap()[0][0] > p0 {
                improved += 1;
            }
        }
        assert!(improved >= 80, "{improved}/100");
    }

    /// Fooled whenever the top-left pixel of frame 0 is bright.
    struct Corner;

    impl BlackBox for Corner {
        fn top1(&self, v: &VideoTensor) -> OracleResponse {
            let bright = v.get(0, 0, 0, 0) > 0.5;
            OracleResponse {
                top1: LabelScore {
                    label: usize::from(bright),
                    score: 0.9,
                },
            }
        }
        fn class_count(&self) -> usize {
            2
        }
    }

    fn small_inputs() -> (VideoTensor, Vec<Image>, LogoSet) {
        let base = VideoTensor::filled(Dims::new(2, 16, 16, 3), 0.0).unwrap();
        let styles = vec![Image::filled(4, 4, 3, 0.9).unwrap(), Image::filled(4, 4, 3, 0.1).unwrap()];
        let logos = LogoSet::filtered(
            (0..3).map(|i| crate::logo::LogoAsset::from_rgb(format!("l{i}"), &Image::filled(8, 8, 3, 0.8).unwrap()).unwrap()),
        );
        (base, styles, logos)
    }

    #[test]
    fn stage2_accounting_and_early_success() {
        let (base, styles, logos) = small_inputs();
        let bank = FeatureBank::standard();
        let transfer = StyleTransferConfig {
            iterations: 2,
            ..Default::default()
        };
        let inputs = Stage2Inputs {
            base: &base,
            goal: Goal::Untargeted { original: 0 },
            styles: &styles,
            logos: &logos,
            bank: &bank,
            transfer: &transfer,
        };
        let cfg = Stage2Config {
            batch: 7,
            ..Stage2Config::for_goal(&inputs.goal)
        };
        let oracle = Corner;
        let mut gate = QueryGate::new(&oracle, QueryBudget::new(10_000));
        let mut cache = StylizationCache::default();
        let out = direct_stage2(&mut gate, &inputs, &cfg, &mut cache, 11).unwrap();
        assert_eq!(gate.stage_queries(Stage::Direct), 7 * out.iterations as u64);
        assert_eq!(out.records.len() as u64, gate.used());
        assert!(cache.computed() <= logos.len() * styles.len());
        assert_eq!(out.stylizations, cache.computed());
        if out.success {
            let best = out.best.as_ref().unwrap();
            assert!(inputs.goal.is_met(&best.response));
            let max_success = out
                .records
                .iter()
                .filter(|r| r.label != 0)
                .map(|r| r.reward)
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(best.reward, max_success);
        }
        // repeated run reuses every stylization
        let computed = cache.computed();
        let mut gate2 = QueryGate::new(&oracle, QueryBudget::new(10_000));
        let again = direct_stage2(&mut gate2, &inputs, &cfg, &mut cache, 11).unwrap();
        assert_eq!(again.stylizations, 0);
        assert_eq!(cache.computed(), computed);
        assert_eq!(again.records, out.records);
    }

    #[test]
    fn stage2_plateau_cap_and_budget() {
        let (base, styles, logos) = small_inputs();
        let bank = FeatureBank::standard();
        let transfer = StyleTransferConfig {
            iterations: 1,
            ..Default::default()
        };
        let inputs = Stage2Inputs {
            base: &base,
            goal: Goal::Targeted { target: 5 }, // unreachable
            styles: &styles,
            logos: &logos,
            bank: &bank,
            transfer: &transfer,
        };
        let cfg = Stage2Config {
            batch: 4,
            ..Stage2Config::for_goal(&inputs.goal)
        };
        let oracle = Corner;
        let mut gate = QueryGate::new(&oracle, QueryBudget::new(100_000));
        let mut cache = StylizationCache::default();
        let out = direct_stage2(&mut gate, &inputs, &cfg, &mut cache, 1).unwrap();
        assert!(!out.success && !out.exhausted);
        assert!(out.iterations <= 50);
        assert_eq!(gate.used(), 4 * out.iterations as u64);
        let best = out.best.unwrap();
        let max = out.records.iter().map(|r| r.reward).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best.reward, max);

        let mut tight = QueryGate::new(&oracle, QueryBudget::new(6));
        let out = direct_stage2(&mut tight, &inputs, &cfg, &mut cache, 1).unwrap();
        assert!(out.exhausted);
        assert_eq!(out.records.len(), 6);
    }
}
