//! Logo style transfer against a fixed two-layer convolutional feature bank.
//!
//! All arithmetic is `f64`. Layer 1 is eight 3x3 filters at stride 1 over
//! the RGB input, layer 2 eight 3x3 filters at stride 2 over layer 1; both
//! are valid (unpadded) convolutions followed by `max(0, .)`. Losses:
//!
//! * content: mean squared layer-2 difference between candidate and logo
//! * style: summed over both layers, squared Frobenius distance of Gram
//!   matrices `G = F^T F / (positions * channels)`
//! * total variation: summed squared horizontal and vertical differences
//!
//! Gradients are derived by hand and checked against central differences
//! in the tests.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LsfError, Result};
use crate::logo::to_byte;
use crate::video::{resize, Image, ResizeMode};

const CH: usize = 8;
const IN: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleTransferConfig {
    pub content_weight: f64,
    pub style_weight: f64,
    pub tv_weight: f64,
    pub iterations: usize,
    /// First trial step of the backtracking line search.
    pub initial_step: f64,
    pub shrink: f64,
}

impl Default for StyleTransferConfig {
    fn default() -> Self {
        Self {
            content_weight: 1.0,
            style_weight: 10.0,
            tv_weight: 1e-3,
            iterations: 200,
            initial_step: 1.0,
            shrink: 0.5,
        }
    }
}

impl StyleTransferConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.content_weight, self.style_weight, self.tv_weight];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(LsfError::Config(format!("loss weights must be finite and >= 0: {w:?}")));
        }
        if self.iterations == 0 {
            return Err(LsfError::Config("iterations must be at least 1".into()));
        }
        if self.initial_step.is_nan() || self.initial_step <= 0.0 || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(LsfError::Config("line search needs step > 0 and shrink in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Spatial feature map, `[position][channel]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

/// The two fixed convolution layers.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    /// `[out][dy][dx][in]`, 8 x 3 x 3 x 3
    layer1: Vec<f64>,
    /// `[out][dy][dx][in]`, 8 x 3 x 3 x 8
    layer2: Vec<f64>,
}

impl Default for FeatureBank {
    fn default() -> Self {
        Self::standard()
    }
}

struct Forward {
    pre1: FeatureMap,
    f1: FeatureMap,
    pre2: FeatureMap,
    f2: FeatureMap,
}

impl FeatureBank {
    /// Layer 1: box blur of the channel mean, signed horizontal and
    /// vertical Sobel responses, and the three color channels. Layer 2:
    /// blurred intensity and colors, pooled edge energy, and two
    /// color-opponent responses.
    pub fn standard() -> Self {
        let mut layer1 = vec![0.0; CH * 9 * IN];
        let sobel_x = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let sobel_y = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
        for dy in 0..3 {
            for dx in 0..3 {
                for c in 0..IN {
                    let at = |o: usize| ((o * 3 + dy) * 3 + dx) * IN + c;
                    layer1[at(0)] = 1.0 / 27.0;
                    layer1[at(1)] = sobel_x[dy][dx] / 12.0;
                    layer1[at(2)] = -sobel_x[dy][dx] / 12.0;
                    layer1[at(3)] = sobel_y[dy][dx] / 12.0;
                    layer1[at(4)] = -sobel_y[dy][dx] / 12.0;
                }
            }
        }
        for c in 0..IN {
            layer1[((5 + c) * 3 + 1) * 3 * IN + IN + c] = 1.0;
        }

        let mut layer2 = vec![0.0; CH * 9 * CH];
        let at = |o: usize, dy: usize, dx: usize, i: usize| ((o * 3 + dy) * 3 + dx) * CH + i;
        for dy in 0..3 {
            for dx in 0..3 {
                layer2[at(0, dy, dx, 0)] = 1.0 / 9.0;
                for c in 0..IN {
                    layer2[at(1 + c, dy, dx, 5 + c)] = 1.0 / 9.0;
                }
                layer2[at(4, dy, dx, 1)] = 1.0 / 9.0;
                layer2[at(4, dy, dx, 2)] = 1.0 / 9.0;
                layer2[at(5, dy, dx, 3)] = 1.0 / 9.0;
                layer2[at(5, dy, dx, 4)] = 1.0 / 9.0;
            }
        }
        layer2[at(6, 1, 1, 5)] = 1.0;
        layer2[at(6, 1, 1, 6)] = -1.0;
        layer2[at(7, 1, 1, 7)] = 1.0;
        layer2[at(7, 1, 1, 5)] = -0.5;
        layer2[at(7, 1, 1, 6)] = -0.5;
        Self { layer1, layer2 }
    }

    /// Post-activation maps of both layers.
    pub fn features(&self, x: &[f64], h: usize, w: usize) -> Result<(FeatureMap, FeatureMap)> {
        let fw = self.forward(x, h, w)?;
        Ok((fw.f1, fw.f2))
    }

    fn forward(&self, x: &[f64], h: usize, w: usize) -> Result<Forward> {
        if h < 5 || w < 5 {
            return Err(LsfError::InvalidDims(format!("feature bank needs at least 5x5 input, got {h}x{w}")));
        }
        if x.len() != h * w * IN {
            return Err(LsfError::DimensionMismatch {
                axis: "image length",
                expected: h * w * IN,
                got: x.len(),
            });
        }
        let pre1 = conv(&self.layer1, x, h, w, IN, 1);
        let f1 = relu(&pre1);
        let pre2 = conv(&self.layer2, &f1.data, f1.h, f1.w, CH, 2);
        let f2 = relu(&pre2);
        Ok(Forward { pre1, f1, pre2, f2 })
    }
}

fn conv(k: &[f64], x: &[f64], h: usize, w: usize, cin: usize, stride: usize) -> FeatureMap {
    let (oh, ow) = ((h - 3) / stride + 1, (w - 3) / stride + 1);
    let mut data = vec![0.0; oh * ow * CH];
    for oy in 0..oh {
        for ox in 0..ow {
            let out = &mut data[(oy * ow + ox) * CH..(oy * ow + ox + 1) * CH];
            for dy in 0..3 {
                for dx in 0..3 {
                    let src = ((oy * stride + dy) * w + ox * stride + dx) * cin;
                    let px = &x[src..src + cin];
                    for (o, acc) in out.iter_mut().enumerate() {
                        let kk = &k[((o * 3 + dy) * 3 + dx) * cin..][..cin];
                        *acc += kk.iter().zip(px).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }
    FeatureMap { h: oh, w: ow, data }
}

/// Adjoint of [`conv`]: scatters `g` (shaped like the output) back onto an
/// input of `h x w x cin`.
fn conv_adjoint(k: &[f64], g: &FeatureMap, h: usize, w: usize, cin: usize, stride: usize) -> Vec<f64> {
    let mut dx_out = vec![0.0; h * w * cin];
    for oy in 0..g.h {
        for ox in 0..g.w {
            let go = &g.data[(oy * g.w + ox) * CH..(oy * g.w + ox + 1) * CH];
            for dy in 0..3 {
                for dx in 0..3 {
                    let dst = ((oy * stride + dy) * w + ox * stride + dx) * cin;
                    for (o, &gv) in go.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let kk = &k[((o * 3 + dy) * 3 + dx) * cin..][..cin];
                        for (d, &kv) in dx_out[dst..dst + cin].iter_mut().zip(kk) {
                            *d += gv * kv;
                        }
                    }
                }
            }
        }
    }
    dx_out
}

fn relu(m: &FeatureMap) -> FeatureMap {
    FeatureMap {
        h: m.h,
        w: m.w,
        data: m.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// `G = F^T F / (positions * channels)`, `CH x CH` row-major.
pub fn gram(f: &FeatureMap) -> Vec<f64> {
    let positions = f.h * f.w;
    let norm = (positions * CH) as f64;
    let mut g = vec![0.0; CH * CH];
    for p in f.data.chunks_exact(CH) {
        for a in 0..CH {
            for b in 0..CH {
                g[a * CH + b] += p[a] * p[b];
            }
        }
    }
    g.iter_mut().for_each(|v| *v /= norm);
    g
}

/// Individual loss terms of one candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleLosses {
    pub content: f64,
    pub style: f64,
    pub tv: f64,
}

impl StyleLosses {
    pub fn total(&self, cfg: &StyleTransferConfig) -> f64 {
        cfg.content_weight * self.content + cfg.style_weight * self.style + cfg.tv_weight * self.tv
    }
}

/// Everything about the content logo and style image that the loss needs.
pub struct StyleTarget<'a> {
    bank: &'a FeatureBank,
    h: usize,
    w: usize,
    content_f2: FeatureMap,
    style_grams: [Vec<f64>; 2],
}

impl<'a> StyleTarget<'a> {
    /// `content` is the logo; `style` is resized (nearest) to its dims.
    pub fn new(bank: &'a FeatureBank, content: &Image, style: &Image) -> Result<Self> {
        if content.channels() != IN || style.channels() != IN {
            return Err(LsfError::DimensionMismatch {
                axis: "channels",
                expected: IN,
                got: if content.channels() != IN { content.channels() } else { style.channels() },
            });
        }
        let (h, w) = (content.height(), content.width());
        let style = resize(style, h, w, ResizeMode::Nearest)?;
        let (_, content_f2) = bank.features(&widen(content), h, w)?;
        let (s1, s2) = bank.features(&widen(&style), h, w)?;
        Ok(Self {
            bank,
            h,
            w,
            content_f2,
            style_grams: [gram(&s1), gram(&s2)],
        })
    }

    pub fn losses(&self, x: &[f64]) -> Result<StyleLosses> {
        let fw = self.bank.forward(x, self.h, self.w)?;
        Ok(self.losses_from(&fw, x))
    }

    fn losses_from(&self, fw: &Forward, x: &[f64]) -> StyleLosses {
        let content = fw
            .f2
            .data
            .iter()
            .zip(&self.content_f2.data)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / fw.f2.data.len() as f64;
        let style = [&fw.f1, &fw.f2]
            .iter()
            .zip(&self.style_grams)
            .map(|(f, target)| gram(f).iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum();
        StyleLosses {
            content,
            style,
            tv: tv_loss(x, self.h, self.w),
        }
    }

    /// Weighted total loss and its gradient with respect to every pixel.
    pub fn loss_and_grad(&self, x: &[f64], cfg: &StyleTransferConfig) -> Result<(StyleLosses, Vec<f64>)> {
        let fw = self.bank.forward(x, self.h, self.w)?;
        let losses = self.losses_from(&fw, x);

        // d/dF2: content plus layer-2 style
        let n2 = fw.f2.data.len() as f64;
        let mut g2: Vec<f64> = fw
            .f2
            .data
            .iter()
            .zip(&self.content_f2.data)
            .map(|(a, b)| cfg.content_weight * 2.0 * (a - b) / n2)
            .collect();
        add_gram_grad(&mut g2, &fw.f2, &self.style_grams[1], cfg.style_weight);
        let dpre2 = mask_by_sign(g2, &fw.pre2);

        let mut g1 = conv_adjoint(&self.bank.layer2, &dpre2, fw.f1.h, fw.f1.w, CH, 2);
        add_gram_grad(&mut g1, &fw.f1, &self.style_grams[0], cfg.style_weight);
        let dpre1 = mask_by_sign(g1, &fw.pre1);

        let mut grad = conv_adjoint(&self.bank.layer1, &dpre1, self.h, self.w, IN, 1);
        add_tv_grad(&mut grad, x, self.h, self.w, cfg.tv_weight);
        Ok((losses, grad))
    }
}

/// Adds `weight * d||G(F) - T||^2 / dF` into `g`.
fn add_gram_grad(g: &mut [f64], f: &FeatureMap, target: &[f64], weight: f64) {
    if weight == 0.0 {
        return;
    }
    let norm = (f.h * f.w * CH) as f64;
    let diff: Vec<f64> = gram(f).iter().zip(target).map(|(a, b)| a - b).collect();
    for (gp, fp) in g.chunks_exact_mut(CH).zip(f.data.chunks_exact(CH)) {
        for a in 0..CH {
            let s: f64 = (0..CH).map(|b| diff[a * CH + b] * fp[b]).sum();
            gp[a] += weight * 4.0 * s / norm;
        }
    }
}

fn mask_by_sign(g: Vec<f64>, pre: &FeatureMap) -> FeatureMap {
    FeatureMap {
        h: pre.h,
        w: pre.w,
        data: g
            .into_iter()
            .zip(&pre.data)
            .map(|(gv, &p)| if p > 0.0 { gv } else { 0.0 })
            .collect(),
    }
}

pub fn tv_loss(x: &[f64], h: usize, w: usize) -> f64 {
    let mut s = 0.0;
    for y in 0..h {
        for xx in 0..w {
            for c in 0..IN {
                let v = x[(y * w + xx) * IN + c];
                if xx + 1 < w {
                    s += (x[(y * w + xx + 1) * IN + c] - v).powi(2);
                }
                if y + 1 < h {
                    s += (x[((y + 1) * w + xx) * IN + c] - v).powi(2);
                }
            }
        }
    }
    s
}

fn add_tv_grad(g: &mut [f64], x: &[f64], h: usize, w: usize, weight: f64) {
    if weight == 0.0 {
        return;
    }
    for y in 0..h {
        for xx in 0..w {
            for c in 0..IN {
                let i = (y * w + xx) * IN + c;
                if xx + 1 < w {
                    let j = (y * w + xx + 1) * IN + c;
                    let d = 2.0 * weight * (x[j] - x[i]);
                    g[j] += d;
                    g[i] -= d;
                }
                if y + 1 < h {
                    let j = ((y + 1) * w + xx) * IN + c;
                    let d = 2.0 * weight * (x[j] - x[i]);
                    g[j] += d;
                    g[i] -= d;
                }
            }
        }
    }
}

/// `(content, style, tv)` of candidate `ls` against logo `l` and style `xv`.
pub fn style_losses(ls: &Image, l: &Image, xv: &Image, bank: &FeatureBank) -> Result<StyleLosses> {
    if (ls.height(), ls.width()) != (l.height(), l.width()) {
        return Err(LsfError::DimensionMismatch {
            axis: if ls.height() != l.height() { "height" } else { "width" },
            expected: if ls.height() != l.height() { l.height() } else { l.width() },
            got: if ls.height() != l.height() { ls.height() } else { ls.width() },
        });
    }
    StyleTarget::new(bank, l, xv)?.losses(&widen(ls))
}

/// Outcome of one style transfer.
#[derive(Clone, Debug, PartialEq)]
pub struct Stylized {
    pub image: Image,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Total loss after every accepted step, starting with the initial one.
    pub history: Vec<f64>,
}

/// Projected gradient descent on the logo pixels, starting from the logo.
/// A step is accepted only if it strictly lowers the total loss; the trial
/// step starts at `initial_step` and afterwards at twice the last accepted
/// step (never above `initial_step`), halving on each rejection.
pub fn stylize_logo(logo: &Image, style: &Image, bank: &FeatureBank, cfg: &StyleTransferConfig) -> Result<Stylized> {
    cfg.validate()?;
    let target = StyleTarget::new(bank, logo, style)?;
    let mut x = widen(logo);
    let (losses, mut grad) = target.loss_and_grad(&x, cfg)?;
    let mut loss = losses.total(cfg);
    check_finite(loss, &grad)?;
    let initial_loss = loss;
    let mut history = vec![loss];
    let mut step = cfg.initial_step;
    'outer: for _ in 0..cfg.iterations {
        loop {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(v, g)| (v - step * g).clamp(0.0, 1.0)).collect();
            let (l2, g2) = target.loss_and_grad(&trial, cfg)?;
            let t = l2.total(cfg);
            check_finite(t, &g2)?;
            if t < loss {
                x = trial;
                loss = t;
                grad = g2;
                history.push(t);
                step = (step * 2.0).min(cfg.initial_step);
                break;
            }
            step *= cfg.shrink;
            if step < 1e-12 {
                break 'outer;
            }
        }
    }
    Ok(Stylized {
        image: Image::from_clamped(logo.height(), logo.width(), IN, x.iter().map(|&v| v as f32).collect())?,
        initial_loss,
        final_loss: loss,
        history,
    })
}

fn check_finite(loss: f64, grad: &[f64]) -> Result<()> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(LsfError::NonFinite(format!("style-transfer loss {loss}")));
    }
    Ok(())
}

fn widen(img: &Image) -> Vec<f64> {
    img.data().iter().map(|&v| f64::from(v)).collect()
}

/// One persisted stylized logo.
#[derive(Clone, Debug)]
pub struct StylizedRecord<'a> {
    pub logo_id: &'a str,
    pub style_id: usize,
    pub result: &'a Stylized,
}

/// Writes `<logo>__style<k>.png` files and `stylized.tsv`.
pub fn save_stylized(records: &[StylizedRecord<'_>], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("# logo\tstyle\tfinal_loss\tfile\n");
    for r in records {
        let name = format!("{}__style{}.png", r.logo_id, r.style_id);
        let img = &r.result.image;
        let bytes = img.data().iter().map(|&v| to_byte(v)).collect();
        image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
            .ok_or_else(|| LsfError::Invariant("stylized buffer size".into()))?
            .save(dir.join(&name))?;
        manifest.push_str(&format!("{}\t{}\t{:.9e}\t{name}\n", r.logo_id, r.style_id, r.result.final_loss));
    }
    fs::write(dir.join("stylized.tsv"), manifest)?;
    Ok(())
}
