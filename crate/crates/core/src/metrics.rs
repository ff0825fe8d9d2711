//! Attack traces, campaign aggregates, occluded area and temporal
//! inconsistency (flow-warping error).

use serde::{Deserialize, Serialize};

use crate::error::{LsfError, Result};
use crate::logos_dct::PerturbationNorms;
use crate::oracle::Goal;
use crate::rl::ActionSequence;
use crate::video::{scaled_extent, Image, VideoTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    BudgetExhausted,
    StageFailed,
}

/// Queries charged to each stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageQueries {
    pub q1: u64,
    pub q2: u64,
    pub q3: u64,
}

impl StageQueries {
    pub fn total(&self) -> u64 {
        self.q1 + self.q2 + self.q3
    }
}

/// Everything recorded about one attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub video: String,
    pub goal: Goal,
    pub original_label: usize,
    pub outcome: Outcome,
    /// `2` or `3` on success.
    pub success_stage: Option<u8>,
    pub queries: StageQueries,
    pub query_limit: u64,
    /// Whether stages 1, 2 and 3 were started.
    pub stages_run: [bool; 3],
    pub actions: Option<ActionSequence>,
    /// `(H, W)`
    pub frame: (usize, usize),
    /// Unscaled logo `(h, w)`.
    pub logo: (usize, usize),
    pub final_label: Option<usize>,
    pub final_score: Option<f64>,
    /// Masked norms of the stage-3 perturbation on top of the stage-2 video.
    pub norms: Option<PerturbationNorms>,
    pub stage3_accepted: u64,
    pub stylizations: usize,
    /// Kept out of serialized traces so reruns are byte-identical.
    #[serde(skip)]
    pub wall_time_ms: Option<f64>,
}

impl AttackTrace {
    /// Checks the documented invariants.
    pub fn validate(&self) -> Result<()> {
        if self.queries.total() > self.query_limit {
            return Err(LsfError::Invariant(format!(
                "{} queries over a limit of {}",
                self.queries.total(),
                self.query_limit
            )));
        }
        if self.success_stage == Some(2) && self.queries.q3 != 0 {
            return Err(LsfError::Invariant("stage-2 success with stage-3 queries".into()));
        }
        if (self.outcome == Outcome::Success) != self.success_stage.is_some() {
            return Err(LsfError::Invariant("success stage disagrees with outcome".into()));
        }
        Ok(())
    }
}

/// Campaign summary; absent averages had no qualifying trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub fr: f64,
    pub fr2: f64,
    pub aq: Option<f64>,
    pub aq2: Option<f64>,
    pub aq_stage1: Option<f64>,
    pub aq_stage2: Option<f64>,
    pub aq_stage3: Option<f64>,
    pub aoa: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

pub fn aggregate(traces: &[AttackTrace]) -> Result<Aggregate> {
    if traces.is_empty() {
        return Err(LsfError::Empty("trace set"));
    }
    let n = traces.len();
    let success = |t: &&AttackTrace| t.outcome == Outcome::Success;
    let stage2 = |t: &&AttackTrace| t.success_stage == Some(2);
    Ok(Aggregate {
        n,
        fr: traces.iter().filter(success).count() as f64 / n as f64,
        fr2: traces.iter().filter(stage2).count() as f64 / n as f64,
        aq: mean(traces.iter().filter(success).map(|t| t.queries.total() as f64)),
        aq2: mean(traces.iter().filter(stage2).map(|t| (t.queries.q1 + t.queries.q2) as f64)),
        aq_stage1: mean(traces.iter().filter(|t| t.stages_run[0]).map(|t| t.queries.q1 as f64)),
        aq_stage2: mean(traces.iter().filter(|t| t.stages_run[1]).map(|t| t.queries.q2 as f64)),
        aq_stage3: mean(traces.iter().filter(|t| t.stages_run[2]).map(|t| t.queries.q3 as f64)),
        aoa: mean(traces.iter().filter_map(aoa)),
    })
}

/// Occluded area of the logo in percent of the frame.
pub fn occluded_area(k: f64, logo_h: usize, logo_w: usize, frame_h: usize, frame_w: usize) -> f64 {
    100.0 * (scaled_extent(k, logo_h) * scaled_extent(k, logo_w)) as f64 / (frame_h * frame_w) as f64
}

/// [`occluded_area`] of a trace's chosen action, if it has one.
pub fn aoa(trace: &AttackTrace) -> Option<f64> {
    trace
        .actions
        .map(|a| occluded_area(a.k(), trace.logo.0, trace.logo.1, trace.frame.0, trace.frame.1))
}

pub const FLOW_WINDOW: usize = 5;
pub const FLOW_LEVELS: usize = 3;
pub const FLOW_ITERATIONS: usize = 5;
/// Minimum eigenvalue of the window-averaged structure tensor.
pub const FLOW_MIN_EIGEN: f64 = 1e-4;
/// Forward-backward disagreement (pixels) above which a pixel is occluded.
pub const FLOW_CONSISTENCY: f64 = 1.0;

/// Per-pixel displacement `(dy, dx)` from one frame to another, with a
/// validity map.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub h: usize,
    pub w: usize,
    pub dy: Vec<f64>,
    pub dx: Vec<f64>,
    pub valid: Vec<bool>,
}

#[derive(Clone, Debug)]
struct Gray {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Gray {
    fn at(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.v[y * self.w + x]
    }

    fn sample(&self, y: f64, x: f64) -> f64 {
        bilinear(self.h, self.w, y, x, |yy, xx| self.v[yy * self.w + xx])
    }

    fn half(&self) -> Gray {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut v = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (yy, xx) = (2 * y as isize, 2 * x as isize);
                v.push(0.25 * (self.at(yy, xx) + self.at(yy + 1, xx) + self.at(yy, xx + 1) + self.at(yy + 1, xx + 1)));
            }
        }
        Gray { h, w, v }
    }
}

/// Bilinear read at a real position, clamped to the border.
fn bilinear(h: usize, w: usize, y: f64, x: f64, get: impl Fn(usize, usize) -> f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = get(y0, x0) * (1.0 - fx) + get(y0, x1) * fx;
    let bottom = get(y1, x0) * (1.0 - fx) + get(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn luma(frame: &Image) -> Result<Gray> {
    if frame.channels() != 3 {
        return Err(LsfError::BadInput(format!("luma needs RGB, got {} channels", frame.channels())));
    }
    let (h, w) = (frame.height(), frame.width());
    let v = frame
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
        .collect();
    Ok(Gray { h, w, v })
}

/// Window-averaged structure tensor `(gxx, gxy, gyy)` and gradients.
fn structure(a: &Gray) -> (Vec<f64>, Vec<f64>, Vec<[f64; 3]>) {
    let (h, w) = (a.h, a.w);
    let mut ix = vec![0.0; h * w];
    let mut iy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let o = y as usize * w + x as usize;
            ix[o] = 0.5 * (a.at(y, x + 1) - a.at(y, x - 1));
            iy[o] = 0.5 * (a.at(y + 1, x) - a.at(y - 1, x));
        }
    }
    let r = (FLOW_WINDOW / 2) as isize;
    let mut g = vec![[0.0; 3]; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut s = [0.0; 3];
            let mut n = 0.0;
            for qy in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                for qx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                    let q = qy as usize * w + qx as usize;
                    s[0] += ix[q] * ix[q];
                    s[1] += ix[q] * iy[q];
                    s[2] += iy[q] * iy[q];
                    n += 1.0;
                }
            }
            g[y as usize * w + x as usize] = [s[0] / n, s[1] / n, s[2] / n];
        }
    }
    (ix, iy, g)
}

fn min_eigen(g: &[f64; 3]) -> f64 {
    let tr = g[0] + g[2];
    let det = g[0] * g[2] - g[1] * g[1];
    0.5 * tr - (0.25 * tr * tr - det).max(0.0).sqrt()
}

/// Refines `(dy, dx)` on one pyramid level.
fn refine(a: &Gray, b: &Gray, dy: &mut [f64], dx: &mut [f64]) -> Vec<bool> {
    let (h, w) = (a.h, a.w);
    let (ix, iy, g) = structure(a);
    let r = (FLOW_WINDOW / 2) as isize;
    let mut valid = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let o = y as usize * w + x as usize;
            let gt = g[o];
            if min_eigen(&gt) < FLOW_MIN_EIGEN {
                continue;
            }
            valid[o] = true;
            let det = gt[0] * gt[2] - gt[1] * gt[1];
            for _ in 0..FLOW_ITERATIONS {
                let (mut bx, mut by, mut n) = (0.0, 0.0, 0.0);
                for qy in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                    for qx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                        let q = qy as usize * w + qx as usize;
                        let it = b.sample(qy as f64 + dy[o], qx as f64 + dx[o]) - a.v[q];
                        bx += ix[q] * it;
                        by += iy[q] * it;
                        n += 1.0;
                    }
                }
                let (bx, by) = (bx / n, by / n);
                let ux = -(gt[2] * bx - gt[1] * by) / det;
                let uy = -(gt[0] * by - gt[1] * bx) / det;
                dx[o] += ux;
                dy[o] += uy;
                if ux.abs() < 1e-3 && uy.abs() < 1e-3 {
                    break;
                }
            }
        }
    }
    valid
}

/// Pyramidal Lucas-Kanade flow from `a` to `b`: `b(p + flow(p)) ~ a(p)`.
pub fn optical_flow(a: &Image, b: &Image) -> Result<FlowField> {
    if (a.height(), a.width(), a.channels()) != (b.height(), b.width(), b.channels()) {
        return Err(LsfError::BadInput("flow frames differ in shape".into()));
    }
    let mut pa = vec![luma(a)?];
    let mut pb = vec![luma(b)?];
    for _ in 1..FLOW_LEVELS {
        let (na, nb) = (pa.last().unwrap().half(), pb.last().unwrap().half());
        if na.h < FLOW_WINDOW || na.w < FLOW_WINDOW {
            break;
        }
        pa.push(na);
        pb.push(nb);
    }
    let top = pa.len() - 1;
    let mut dy = vec![0.0; pa[top].h * pa[top].w];
    let mut dx = dy.clone();
    let mut valid = Vec::new();
    for level in (0..=top).rev() {
        let (la, lb) = (&pa[level], &pb[level]);
        if level < top {
            let coarse = &pa[level + 1];
            let (cdy, cdx) = (std::mem::take(&mut dy), std::mem::take(&mut dx));
            dy = Vec::with_capacity(la.h * la.w);
            dx = Vec::with_capacity(la.h * la.w);
            for y in 0..la.h {
                for x in 0..la.w {
                    let (cy, cx) = ((y / 2).min(coarse.h - 1), (x / 2).min(coarse.w - 1));
                    dy.push(2.0 * cdy[cy * coarse.w + cx]);
                    dx.push(2.0 * cdx[cy * coarse.w + cx]);
                }
            }
        }
        valid = refine(la, lb, &mut dy, &mut dx);
    }
    for o in 0..dy.len() {
        if !(dy[o].is_finite() && dx[o].is_finite()) {
            dy[o] = 0.0;
            dx[o] = 0.0;
            valid[o] = false;
        }
    }
    Ok(FlowField {
        h: pa[0].h,
        w: pa[0].w,
        dy,
        dx,
        valid,
    })
}

/// `frame` backward-warped by `flow`: output `p` reads `frame(p + flow(p))`.
pub fn warp(frame: &Image, flow: &FlowField) -> Result<Image> {
    let (h, w, c) = (frame.height(), frame.width(), frame.channels());
    if (h, w) != (flow.h, flow.w) {
        return Err(LsfError::BadInput("flow and frame differ in size".into()));
    }
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let o = y * w + x;
            for ch in 0..c {
                let v = bilinear(h, w, y as f64 + flow.dy[o], x as f64 + flow.dx[o], |yy, xx| {
                    f64::from(frame.get(yy, xx, ch))
                });
                data.push(v as f32);
            }
        }
    }
    Image::new(h, w, c, data)
}

/// Masked mean L1 error between `ft` and `fs` warped onto it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    pub error: f64,
    /// Pixels inside the occlusion map.
    pub valid: usize,
}

pub fn pair_error(ft: &Image, fs: &Image) -> Result<PairError> {
    let forward = optical_flow(ft, fs)?;
    let backward = optical_flow(fs, ft)?;
    let warped = warp(fs, &forward)?;
    let (h, w, c) = (ft.height(), ft.width(), ft.channels());
    let (mut sum, mut count) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let o = y * w + x;
            if !forward.valid[o] {
                continue;
            }
            let (ty, tx) = (y as f64 + forward.dy[o], x as f64 + forward.dx[o]);
            let by = bilinear(h, w, ty, tx, |yy, xx| backward.dy[yy * w + xx]);
            let bx = bilinear(h, w, ty, tx, |yy, xx| backward.dx[yy * w + xx]);
            if (forward.dy[o] + by).hypot(forward.dx[o] + bx) >= FLOW_CONSISTENCY {
                continue;
            }
            count += 1;
            sum += (0..c)
                .map(|ch| (f64::from(ft.get(y, x, ch)) - f64::from(warped.get(y, x, ch))).abs())
                .sum::<f64>();
        }
    }
    Ok(PairError {
        error: if count > 0 { sum / count as f64 } else { 0.0 },
        valid: count,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpingReport {
    pub ti: f64,
    /// `(t, s)` pairs (0-based) whose occlusion map was empty.
    pub empty_pairs: Vec<(usize, usize)>,
}

/// Warping error over pairs `(t, 0)` and `(t, t - 1)` for `t >= 1`.
pub fn warping_error(video: &VideoTensor) -> Result<WarpingReport> {
    let t = video.dims().t;
    if t < 2 {
        return Err(LsfError::BadInput("temporal inconsistency needs two or more frames".into()));
    }
    let frames: Vec<Image> = (0..t).map(|i| video.frame(i)).collect();
    let mut total = 0.0;
    let mut empty_pairs = Vec::new();
    for i in 1..t {
        for s in [0, i - 1] {
            let e = pair_error(&frames[i], &frames[s])?;
            if e.valid == 0 {
                empty_pairs.push((i, s));
            }
            total += e.error;
        }
    }
    Ok(WarpingReport {
        ti: total / (t - 1) as f64,
        empty_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::video::Dims;
    use rand::Rng;

    fn trace(outcome: Outcome, stage: Option<u8>, q: (u64, u64, u64)) -> AttackTrace {
        AttackTrace {
            video: "v".into(),
            goal: Goal::Untargeted { original: 0 },
            original_label: 0,
            outcome,
            success_stage: stage,
            queries: StageQueries { q1: q.0, q2: q.1, q3: q.2 },
            query_limit: 300_000,
            stages_run: [q.0 > 0, q.1 > 0, q.2 > 0],
            actions: Some(ActionSequence {
                u: 0,
                v: 0,
                k_index: 4,
                logo: 0,
                style: 0,
            }),
            frame: (64, 64),
            logo: (32, 32),
            final_label: None,
            final_score: None,
            norms: None,
            stage3_accepted: 0,
            stylizations: 0,
            wall_time_ms: None,
        }
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[trace(Outcome::Success, Some(2), (3, 50, 0))]).unwrap();
        assert_eq!((a.fr, a.fr2, a.aq, a.aq2), (1.0, 1.0, Some(53.0), Some(53.0)));
        assert_eq!(a.aoa, Some(25.0));
        let a = aggregate(&[trace(Outcome::BudgetExhausted, None, (1, 2, 3))]).unwrap();
        assert_eq!((a.fr, a.aq, a.aq2), (0.0, None, None));
        let mixed = vec![
            trace(Outcome::Success, Some(3), (10, 40, 50)),
            trace(Outcome::StageFailed, None, (5, 0, 0)),
        ];
        let a = aggregate(&mixed).unwrap();
        assert_eq!((a.fr, a.aq), (0.5, Some(100.0)));
        assert_eq!(a.aq_stage1, Some(7.5));
        assert_eq!(a.aq_stage2, Some(40.0));
        let rev: Vec<_> = mixed.iter().rev().cloned().collect();
        assert_eq!(aggregate(&rev).unwrap(), a);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn trace_invariants() {
        assert!(trace(Outcome::Success, Some(2), (3, 50, 0)).validate().is_ok());
        assert!(trace(Outcome::Success, Some(2), (3, 50, 1)).validate().is_err());
        assert!(trace(Outcome::Success, None, (3, 50, 1)).validate().is_err());
        let mut t = trace(Outcome::StageFailed, None, (3, 50, 1));
        t.query_limit = 10;
        assert!(t.validate().is_err());
    }

    #[test]
    fn wall_time_is_not_serialized() {
        let mut t = trace(Outcome::Success, Some(2), (3, 50, 0));
        let plain = serde_json::to_string(&t).unwrap();
        t.wall_time_ms = Some(12.5);
        assert_eq!(serde_json::to_string(&t).unwrap(), plain);
    }

    #[test]
    fn occluded_area_examples() {
        assert_eq!(occluded_area(1.0, 32, 32, 64, 64), 25.0);
        assert_eq!(occluded_area(0.0, 32, 32, 64, 64), 0.0);
        assert!((occluded_area(0.75, 32, 32, 64, 64) - 100.0 * 576.0 / 4096.0).abs() < 1e-12);
    }

    /// Smooth texture shifted right by `shift` pixels.
    fn texture(h: usize, w: usize, shift: f64, offset: f32) -> Image {
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                let xf = x as f64 - shift;
                let yf = y as f64;
                let base = 0.45
                    + 0.2 * (xf * 0.45 + 0.3).sin() * (yf * 0.35).cos()
                    + 0.06 * (xf * 0.9 + yf * 0.7).sin()
                    + 0.12 * (xf * 0.2 - yf * 0.25).sin()
                    + 0.08 * (yf * 0.6 + 1.0).sin();
                for c in 0..3 {
                    data.push((base as f32 + 0.03 * c as f32 + offset).clamp(0.0, 1.0));
                }
            }
        }
        Image::new(h, w, 3, data).unwrap()
    }

    #[test]
    fn flow_of_identical_frames_is_zero() {
        let f = texture(32, 32, 0.0, 0.0);
        let flow = optical_flow(&f, &f).unwrap();
        assert!(flow.dx.iter().chain(&flow.dy).all(|v| v.abs() < 1e-12));
        assert!(flow.valid.iter().all(|&v| v));
        assert_eq!(pair_error(&f, &f).unwrap().error, 0.0);
    }

    #[test]
    fn flow_recovers_one_pixel_shift() {
        let a = texture(64, 64, 0.0, 0.0);
        let b = texture(64, 64, 1.0, 0.0);
        let flow = optical_flow(&a, &b).unwrap();
        let mut dx: Vec<f64> = flow.dx.iter().zip(&flow.valid).filter(|(_, &v)| v).map(|(d, _)| *d).collect();
        assert!(dx.len() > 64 * 64 / 2);
        dx.sort_by(f64::total_cmp);
        let median = dx[dx.len() / 2];
        assert!((median - 1.0).abs() < 0.2, "median dx {median}");
    }

    #[test]
    fn flat_frames_have_no_valid_flow() {
        let f = Image::filled(16, 16, 3, 0.4).unwrap();
        let flow = optical_flow(&f, &f).unwrap();
        assert!(flow.valid.iter().all(|&v| !v));
        let pe = pair_error(&f, &f).unwrap();
        assert_eq!(pe.valid, 0);
    }

    fn noisy_video(amplitude: f32, seed: u64) -> VideoTensor {
        let base = texture(32, 32, 0.0, 0.0);
        let mut r = rng::rng_from(seed);
        let frames: Vec<Image> = (0..4)
            .map(|_| {
                let data = base.data().iter().map(|v| v + r.gen_range(-amplitude..=amplitude)).collect();
                Image::from_clamped(32, 32, 3, data).unwrap()
            })
            .collect();
        VideoTensor::from_frames(&frames).unwrap()
    }

    #[test]
    fn warping_error_properties() {
        let static_video = VideoTensor::from_frames(&vec![texture(32, 32, 0.0, 0.0); 4]).unwrap();
        assert!(warping_error(&static_video).unwrap().ti.abs() < 1e-6);

        let ti: Vec<f64> = [0.01, 0.05, 0.1].iter().map(|&a| warping_error(&noisy_video(a, 3)).unwrap().ti).collect();
        assert!(ti[0] < ti[1] && ti[1] < ti[2], "{ti:?}");

        let moving: Vec<Image> = (0..4).map(|t| texture(32, 32, 0.5 * t as f64, 0.0)).collect();
        let shifted: Vec<Image> = (0..4).map(|t| texture(32, 32, 0.5 * t as f64, 0.05)).collect();
        let a = warping_error(&VideoTensor::from_frames(&moving).unwrap()).unwrap().ti;
        let b = warping_error(&VideoTensor::from_frames(&shifted).unwrap()).unwrap().ti;
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");

        let one = VideoTensor::filled(Dims::new(1, 8, 8, 3), 0.5).unwrap();
        assert!(warping_error(&one).is_err());
    }

    #[test]
    fn static_logo_is_more_consistent_than_noise_patch() {
        let frames: Vec<Image> = (0..4).map(|t| texture(32, 32, 0.5 * t as f64, 0.0)).collect();
        let mut logo = frames.clone();
        let mut noise = frames.clone();
        let mut r = rng::rng_from(9);
        let patch: Vec<f32> = (0..12 * 12 * 3).map(|i| if (i / 36) % 2 == 0 { 0.8 } else { 0.3 }).collect();
        for t in 0..4 {
            for y in 0..12 {
                for x in 0..12 {
                    for c in 0..3 {
                        logo[t].set(4 + y, 4 + x, c, patch[(y * 12 + x) * 3 + c]);
                        noise[t].set(4 + y, 4 + x, c, r.gen_range(0.0..1.0));
                    }
                }
            }
        }
        let ti_logo = warping_error(&VideoTensor::from_frames(&logo).unwrap()).unwrap().ti;
        let ti_noise = warping_error(&VideoTensor::from_frames(&noise).unwrap()).unwrap().ti;
        assert!(ti_logo < ti_noise, "{ti_logo} vs {ti_noise}");
    }
}
