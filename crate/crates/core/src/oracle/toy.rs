//! Desk-scale video classifier: a fixed 3x3 filter bank, pooled temporal
//! statistics and a trained linear softmax layer.
//!
//! Each filter response is rectified (`|r|`) and average-pooled per frame
//! into one energy value. Two features per filter: the mean energy over
//! time and the mean absolute frame-to-frame difference of the energy.
//! Both are symmetric in time, so the classifier separates the synthetic
//! classes by appearance (scene tone, shape edges) and motion magnitude.
//!
//! Checkpoint (`LSFC1`): magic, then `F` and class count `K` as
//! little-endian `u32`, then as little-endian `f32`: the filter bank
//! (`F x 3 x 3 x 3`, tap-major then channel), feature means and standard
//! deviations (`N = 2 F` each), weights (`K x N`), biases (`K`).

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use rand::seq::SliceRandom;

use super::dataset::SyntheticDataset;
use super::{argmax, softmax, BlackBox, OracleResponse, WhiteBox};
use crate::error::{LsfError, Result};
use crate::rng;
use crate::video::{LabelScore, VideoTensor};

pub const FILTER_COUNT: usize = 8;
const STATS: usize = 2;
const TAPS: usize = 27;
const CHECKPOINT_MAGIC: &[u8; 5] = b"LSFC1";
const LANES: usize = 8;
const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Fixed filter bank and pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    filters: Vec<[f32; TAPS]>,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::standard()
    }
}

impl FeatureExtractor {
    /// Identity (luma), four oriented edge detectors on luma, and three
    /// color projectors.
    pub fn standard() -> Self {
        let luma_kernel = |k: [[f32; 3]; 3], scale: f32| {
            let mut f = [0.0f32; TAPS];
            for dy in 0..3 {
                for dx in 0..3 {
                    for c in 0..3 {
                        f[(dy * 3 + dx) * 3 + c] = k[dy][dx] * LUMA[c] * scale;
                    }
                }
            }
            f
        };
        let center = |weights: [f32; 3]| {
            let mut f = [0.0f32; TAPS];
            f[12..15].copy_from_slice(&weights);
            f
        };
        let filters = vec![
            center(LUMA),
            luma_kernel([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]], 0.25),
            luma_kernel([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]], 0.25),
            luma_kernel([[0.0, 1.0, 2.0], [-1.0, 0.0, 1.0], [-2.0, -1.0, 0.0]], 0.25),
            luma_kernel([[2.0, 1.0, 0.0], [1.0, 0.0, -1.0], [0.0, -1.0, -2.0]], 0.25),
            center([1.0, 0.0, 0.0]),
            center([0.0, 1.0, 0.0]),
            center([0.0, 0.0, 1.0]),
        ];
        Self { filters }
    }

    pub fn filter_count(&self) -> usize {
        self.filters.len()
    }

    pub fn feature_count(&self) -> usize {
        self.filters.len() * STATS
    }

    /// Convolution schedule. A filter whose taps factor into a spatial
    /// kernel times a channel weighting runs on a projected plane; planes
    /// `0..3` are the raw channels and `3..` the distinct projections.
    fn plan(&self) -> Plan {
        let mut projections: Vec<[f32; 3]> = Vec::new();
        let mut taps = Vec::with_capacity(self.filters.len());
        for f in &self.filters {
            let direct: Vec<(usize, usize, usize, f32)> = (0..TAPS)
                .filter(|&k| f[k] != 0.0)
                .map(|k| (k / 9, (k / 3) % 3, k % 3, f[k]))
                .collect();
            let Some((spatial, wts)) = factor(f) else {
                taps.push(direct);
                continue;
            };
            let unit = (0..3).find(|&c| (0..3).all(|k| wts[k] == if k == c { 1.0 } else { 0.0 }));
            let plane = match (unit, projections.iter().position(|p| *p == wts)) {
                (Some(c), _) => c,
                (None, Some(i)) => 3 + i,
                (None, None) => {
                    projections.push(wts);
                    2 + projections.len()
                }
            };
            taps.push(
                (0..9)
                    .filter(|&s| spatial[s] != 0.0)
                    .map(|s| (s / 3, s % 3, plane, spatial[s]))
                    .collect(),
            );
        }
        (projections, taps)
    }

    /// Feature vector, ordered `[filter][stat]`.
    pub fn features(&self, video: &VideoTensor) -> Vec<f64> {
        self.features_cached(video, None)
    }

    pub(crate) fn features_cached(&self, video: &VideoTensor, cache: Option<&FrameCache>) -> Vec<f64> {
        let d = video.dims();
        assert!(d.c == 3, "feature extractor expects RGB video");
        let plan = self.plan();
        let frame_len = d.h * d.w * d.c;
        let mut scratch = Scratch::new(d.h, d.w, plan.0.len());
        let mut moments = Vec::with_capacity(d.t);
        for frame in video.data().chunks_exact(frame_len) {
            let m = match cache {
                Some(cache) => cache.get_or_insert(frame, || self.frame_moments(&plan, frame, d.h, d.w, &mut scratch)),
                None => self.frame_moments(&plan, frame, d.h, d.w, &mut scratch),
            };
            moments.push(m);
        }
        self.assemble(&moments, d.h, d.w)
    }

    /// Per filter: summed rectified response over the frame.
    fn frame_moments(
        &self,
        (projections, taps): &Plan,
        frame: &[f32],
        h: usize,
        w: usize,
        scratch: &mut Scratch,
    ) -> Vec<f64> {
        let pw = w + 2;
        let Scratch { planes, acc } = scratch;
        // replicate-padded channel planes
        for py in 0..h + 2 {
            let y = py.saturating_sub(1).min(h - 1);
            let src = &frame[y * w * 3..(y + 1) * w * 3];
            for (c, plane) in planes.iter_mut().take(3).enumerate() {
                let row = &mut plane[py * pw..(py + 1) * pw];
                for (dst, px) in row[1..=w].iter_mut().zip(src.chunks_exact(3)) {
                    *dst = px[c];
                }
                row[0] = row[1];
                row[pw - 1] = row[w];
            }
        }
        let (raw, derived) = planes.split_at_mut(3);
        for (wts, plane) in projections.iter().zip(derived.iter_mut()) {
            for (((out, &r), &g), &b) in plane.iter_mut().zip(&raw[0]).zip(&raw[1]).zip(&raw[2]) {
                *out = wts[0] * r + wts[1] * g + wts[2] * b;
            }
        }

        let mut out = Vec::with_capacity(taps.len());
        for ftaps in taps {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &(dy, dx, c, wgt) in ftaps {
                let plane = &planes[c];
                for y in 0..h {
                    let src = &plane[(y + dy) * pw + dx..(y + dy) * pw + dx + w];
                    let dst = &mut acc[y * w..(y + 1) * w];
                    for (a, &s) in dst.iter_mut().zip(src) {
                        *a += wgt * s;
                    }
                }
            }
            let mut lanes = [0.0f32; LANES];
            let chunks = acc.chunks_exact(LANES);
            let tail: f32 = chunks.remainder().iter().map(|r| r.abs()).sum();
            for chunk in chunks {
                for l in 0..LANES {
                    lanes[l] += chunk[l].abs();
                }
            }
            out.push(f64::from(lanes.iter().sum::<f32>() + tail));
        }
        out
    }

    fn assemble(&self, frames: &[Vec<f64>], h: usize, w: usize) -> Vec<f64> {
        let tn = frames.len() as f64;
        let area = (h * w) as f64;
        let mut out = Vec::with_capacity(self.feature_count());
        for f in 0..self.filters.len() {
            let energy: Vec<f64> = frames.iter().map(|m| m[f] / area).collect();
            let mean = energy.iter().sum::<f64>() / tn;
            let mad = if energy.len() > 1 {
                energy.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>() / (tn - 1.0)
            } else {
                0.0
            };
            out.extend([mean, mad]);
        }
        out
    }
}

type Plan = (Vec<[f32; 3]>, Vec<Vec<(usize, usize, usize, f32)>>);

struct Scratch {
    planes: Vec<Vec<f32>>,
    acc: Vec<f32>,
}

impl Scratch {
    fn new(h: usize, w: usize, projections: usize) -> Self {
        Self {
            planes: vec![vec![0.0; (h + 2) * (w + 2)]; 3 + projections],
            acc: vec![0.0; h * w],
        }
    }
}

/// Memo of per-frame moments keyed by exact frame content. Frames are
/// processed independently, so a hit returns bit-identical values to a
/// fresh computation.
type CachedFrame = (Box<[f32]>, Vec<f64>);

#[derive(Default)]
pub(crate) struct FrameCache {
    entries: Mutex<HashMap<u64, Vec<CachedFrame>>>,
}

const FRAME_CACHE_CAPACITY: usize = 256;

impl FrameCache {
    fn get_or_insert(&self, frame: &[f32], compute: impl FnOnce() -> Vec<f64>) -> Vec<f64> {
        let key = frame_hash(frame);
        {
            let map = self.entries.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(hit) = map.get(&key).and_then(|b| b.iter().find(|(f, _)| **f == *frame)) {
                return hit.1.clone();
            }
        }
        let value = compute();
        let mut map = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        if map.len() >= FRAME_CACHE_CAPACITY {
            map.clear();
        }
        map.entry(key).or_default().push((frame.into(), value.clone()));
        value
    }
}

fn frame_hash(frame: &[f32]) -> u64 {
    const K: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut lanes = [0x243F_6A88_85A3_08D3u64, 0x1319_8A2E_0370_7344, 0xA409_3822_299F_31D0, 0x082E_FA98_EC4E_6C89];
    let mut chunks = frame.chunks_exact(4);
    for c in &mut chunks {
        for (l, v) in lanes.iter_mut().zip(c) {
            *l = (*l ^ u64::from(v.to_bits())).wrapping_mul(K).rotate_left(29);
        }
    }
    for (l, v) in lanes.iter_mut().zip(chunks.remainder()) {
        *l = (*l ^ u64::from(v.to_bits())).wrapping_mul(K);
    }
    lanes.iter().fold(frame.len() as u64, |h, &l| (h ^ l).wrapping_mul(K).rotate_left(31))
}

/// Splits `f` into `spatial[s] * wts[c]` when it is exactly separable that
/// way, with `wts` taken from the tap of largest magnitude.
fn factor(f: &[f32; TAPS]) -> Option<([f32; 9], [f32; 3])> {
    let norm = |s: usize| f[s * 3..s * 3 + 3].iter().map(|v| v.abs()).sum::<f32>();
    let pivot = (0..9).max_by(|&a, &b| norm(a).total_cmp(&norm(b)))?;
    if norm(pivot) == 0.0 {
        return None;
    }
    let wts = [f[pivot * 3], f[pivot * 3 + 1], f[pivot * 3 + 2]];
    let lead = (0..3).max_by(|&a, &b| wts[a].abs().total_cmp(&wts[b].abs()))?;
    let wts = wts.map(|v| v / wts[lead]);
    let mut spatial = [0.0f32; 9];
    for s in 0..9 {
        spatial[s] = f[s * 3 + lead];
        for c in 0..3 {
            let err = (spatial[s] * wts[c] - f[s * 3 + c]).abs();
            if err > 1e-6 * (1.0 + f[s * 3 + c].abs()) {
                return None;
            }
        }
    }
    Some((spatial, wts))
}

/// Standardization followed by an affine softmax layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSoftmax {
    classes: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearSoftmax {
    /// All-zero weights: uniform output.
    pub fn zeros(classes: usize, features: usize) -> Self {
        Self {
            classes,
            mean: vec![0.0; features],
            std: vec![1.0; features],
            weights: vec![0.0; classes * features],
            bias: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature_count(&self) -> usize {
        self.mean.len()
    }

    /// Standardized features.
    pub fn normalize(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(f, (m, s))| (f - m) / s)
            .collect()
    }

    pub fn logits_normalized(&self, z: &[f64]) -> Vec<f64> {
        let n = z.len();
        (0..self.classes)
            .map(|k| {
                self.bias[k]
                    + self.weights[k * n..(k + 1) * n]
                        .iter()
                        .zip(z)
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Flattened trainable parameters: weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let nw = self.weights.len();
        self.weights.copy_from_slice(&p[..nw]);
        self.bias.copy_from_slice(&p[nw..]);
    }

    /// Mean cross-entropy over normalized inputs and its gradient with
    /// respect to [`Self::params`].
    pub fn loss_and_grad(&self, batch: &[Vec<f64>], labels: &[usize]) -> (f64, Vec<f64>) {
        let n = self.feature_count();
        let mut grad = vec![0.0; self.weights.len() + self.classes];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for (z, &y) in batch.iter().zip(labels) {
            let p = softmax(&self.logits_normalized(z));
            loss -= p[y].max(1e-300).ln() * scale;
            for k in 0..self.classes {
                let g = (p[k] - if k == y { 1.0 } else { 0.0 }) * scale;
                for (gw, x) in grad[k * n..(k + 1) * n].iter_mut().zip(z) {
                    *gw += g * x;
                }
                grad[self.weights.len() + k] += g;
            }
        }
        (loss, grad)
    }

    fn sgd_step(&mut self, z: &[f64], y: usize, lr: f64) {
        let n = z.len();
        let p = softmax(&self.logits_normalized(z));
        for (k, pk) in p.iter().enumerate() {
            let g = pk - if k == y { 1.0 } else { 0.0 };
            for (w, x) in self.weights[k * n..(k + 1) * n].iter_mut().zip(z) {
                *w -= lr * g * x;
            }
            self.bias[k] -= lr * g;
        }
    }

    fn round_to_f32(&mut self) {
        for v in self
            .mean
            .iter_mut()
            .chain(self.std.iter_mut())
            .chain(self.weights.iter_mut())
            .chain(self.bias.iter_mut())
        {
            *v = f64::from(*v as f32);
        }
    }
}

/// The trainable toy video classifier.
pub struct ToyClassifier {
    extractor: FeatureExtractor,
    head: LinearSoftmax,
    cache: FrameCache,
}

impl Clone for ToyClassifier {
    fn clone(&self) -> Self {
        Self::from_parts(self.extractor.clone(), self.head.clone())
    }
}

impl PartialEq for ToyClassifier {
    fn eq(&self, other: &Self) -> bool {
        self.extractor == other.extractor && self.head == other.head
    }
}

impl std::fmt::Debug for ToyClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToyClassifier")
            .field("extractor", &self.extractor)
            .field("head", &self.head)
            .finish_non_exhaustive()
    }
}

impl ToyClassifier {
    pub fn untrained(classes: usize) -> Self {
        let extractor = FeatureExtractor::standard();
        let n = extractor.feature_count();
        Self::from_parts(extractor, LinearSoftmax::zeros(classes, n))
    }

    fn from_parts(extractor: FeatureExtractor, head: LinearSoftmax) -> Self {
        Self {
            extractor,
            head,
            cache: FrameCache::default(),
        }
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn head(&self) -> &LinearSoftmax {
        &self.head
    }

    pub fn predict(&self, video: &VideoTensor) -> usize {
        argmax(&self.probabilities(video))
    }

    pub fn accuracy<'a>(&self, samples: impl IntoIterator<Item = (&'a VideoTensor, usize)>) -> f64 {
        let (mut hit, mut n) = (0usize, 0usize);
        for (v, y) in samples {
            n += 1;
            if self.predict(v) == y {
                hit += 1;
            }
        }
        if n == 0 {
            f64::NAN
        } else {
            hit as f64 / n as f64
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        for n in [self.extractor.filters.len(), self.head.classes] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        let mut put = |v: f32| out.extend_from_slice(&v.to_le_bytes());
        for f in &self.extractor.filters {
            f.iter().for_each(|&v| put(v));
        }
        for v in self
            .head
            .mean
            .iter()
            .chain(&self.head.std)
            .chain(&self.head.weights)
            .chain(&self.head.bias)
        {
            put(*v as f32);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 || &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(LsfError::BadMagic("LSFC1"));
        }
        let mut pos = 5;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or(LsfError::Truncated {
                expected: pos + n,
                found: bytes.len(),
            })?;
            pos += n;
            Ok(s)
        };
        let mut header = [0usize; 2];
        for h in &mut header {
            *h = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        }
        let [nf, classes] = header;
        if nf == 0 || classes == 0 || nf > 4096 || classes > 65536 {
            return Err(LsfError::InvalidDims(format!("checkpoint header {header:?}")));
        }
        let nfeat = nf * STATS;
        let mut floats = |n: usize| -> Result<Vec<f32>> {
            Ok(take(n * 4)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect())
        };
        let filters = floats(nf * TAPS)?
            .chunks_exact(TAPS)
            .map(|c| c.try_into().expect("27 taps"))
            .collect();
        let wide = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<_>>();
        let mean = wide(floats(nfeat)?);
        let std = wide(floats(nfeat)?);
        let weights = wide(floats(classes * nfeat)?);
        let bias = wide(floats(classes)?);
        if pos != bytes.len() {
            return Err(LsfError::BadInput("trailing bytes after LSFC1 checkpoint".into()));
        }
        if std.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(LsfError::BadInput("non-positive feature scale".into()));
        }
        Ok(Self::from_parts(
            FeatureExtractor { filters },
            LinearSoftmax {
                classes,
                mean,
                std,
                weights,
                bias,
            },
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl WhiteBox for ToyClassifier {
    fn probabilities(&self, video: &VideoTensor) -> Vec<f64> {
        let z = self.head.normalize(&self.extractor.features_cached(video, Some(&self.cache)));
        softmax(&self.head.logits_normalized(&z))
    }
}

impl BlackBox for ToyClassifier {
    fn top1(&self, video: &VideoTensor) -> OracleResponse {
        let p = self.probabilities(video);
        let label = argmax(&p);
        OracleResponse {
            top1: LabelScore {
                label,
                score: p[label].clamp(0.0, 1.0),
            },
        }
    }

    fn class_count(&self) -> usize {
        self.head.classes
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub classifier: ToyClassifier,
    pub held_out_accuracy: f64,
    pub train_accuracy: f64,
}

/// Trains the linear layer with per-sample SGD on a stratified 80/20 split.
/// Parameters are rounded to `f32` at the end so a saved checkpoint reloads
/// to the identical model.
pub fn train_classifier(
    dataset: &SyntheticDataset,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainedModel> {
    if dataset.is_empty() {
        return Err(LsfError::Empty("dataset"));
    }
    let classes = dataset.samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let classes = classes.max(super::CLASS_COUNT);
    let mut r = rng::derived_rng(seed, "train-split");
    let mut train = Vec::new();
    let mut held = Vec::new();
    for k in 0..classes {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.samples[i].label == k)
            .collect();
        idx.shuffle(&mut r);
        let n_held = idx.len() / 5;
        held.extend_from_slice(&idx[..n_held]);
        train.extend_from_slice(&idx[n_held..]);
    }

    let extractor = FeatureExtractor::standard();
    let feats: Vec<Vec<f64>> = dataset
        .samples
        .iter()
        .map(|s| extractor.features(&s.video))
        .collect();
    let n = extractor.feature_count();
    let mut head = LinearSoftmax::zeros(classes, n);
    let count = train.len() as f64;
    for (j, (mean, std)) in head.mean.iter_mut().zip(head.std.iter_mut()).enumerate() {
        let m = train.iter().map(|&i| feats[i][j]).sum::<f64>() / count;
        let v = train.iter().map(|&i| (feats[i][j] - m).powi(2)).sum::<f64>() / count;
        *mean = m;
        *std = v.sqrt().max(1e-3);
    }
    let z: Vec<Vec<f64>> = feats.iter().map(|f| head.normalize(f)).collect();

    let mut r = rng::derived_rng(seed, "train-sgd");
    let mut order = train.clone();
    for _ in 0..epochs {
        order.shuffle(&mut r);
        for &i in &order {
            head.sgd_step(&z[i], dataset.samples[i].label, lr);
        }
    }
    head.round_to_f32();

    let classifier = ToyClassifier::from_parts(extractor, head);
    let acc = |set: &[usize]| classifier.accuracy(set.iter().map(|&i| (&dataset.samples[i].video, dataset.samples[i].label)));
    let train_accuracy = acc(&train);
    let held_out_accuracy = if held.is_empty() { train_accuracy } else { acc(&held) };
    Ok(TrainedModel {
        classifier,
        held_out_accuracy,
        train_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::generate_dataset;
    use crate::video::Dims;
    use rand::Rng;

    #[test]
    fn untrained_is_uniform_and_normalized() {
        let clf = ToyClassifier::untrained(8);
        let v = VideoTensor::filled(Dims::new(4, 16, 16, 3), 0.3).unwrap();
        let p = clf.probabilities(&v);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&x| (x - 0.125).abs() < 1e-12));
    }

    #[test]
    fn separable_schedule_matches_direct_convolution() {
        let ds = generate_dataset(4, 1).unwrap();
        let v = &ds.samples[3].video;
        let fx = FeatureExtractor::standard();
        // A tiny perturbation of one tap defeats the factorization and
        // forces the per-channel path for every filter.
        let mut direct = fx.clone();
        for f in &mut direct.filters {
            f[0] += 1e-3;
            f[1] += 2e-3;
        }
        assert!(direct.filters.iter().all(|f| factor(f).is_none()));
        assert!(fx.filters.iter().all(|f| factor(f).is_some()));
        let a = fx.features(v);
        let c = direct.features(v);
        for (x, y) in a.iter().zip(&c) {
            assert!((x - y).abs() < 5e-3 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn frame_cache_is_transparent() {
        let ds = generate_dataset(6, 1).unwrap();
        let clf = train_classifier(&ds, 1, 0.1, 2).unwrap().classifier;
        let v = &ds.samples[5].video;
        let fresh = clf.head.normalize(&clf.extractor.features(v));
        let fresh = softmax(&clf.head.logits_normalized(&fresh));
        for _ in 0..3 {
            assert_eq!(clf.probabilities(v), fresh);
        }
        let mut data = v.data().to_vec();
        data[17] = 1.0 - data[17];
        let w = VideoTensor::new(v.dims(), data).unwrap();
        let uncached = softmax(&clf.head.logits_normalized(&clf.head.normalize(&clf.extractor.features(&w))));
        assert_eq!(clf.probabilities(&w), uncached);
    }

    #[test]
    fn checkpoint_round_trip() {
        let ds = generate_dataset(3, 2).unwrap();
        let m = train_classifier(&ds, 2, 0.1, 1).unwrap();
        let bytes = m.classifier.to_bytes();
        let back = ToyClassifier::from_bytes(&bytes).unwrap();
        assert_eq!(back, m.classifier);
        assert!(matches!(ToyClassifier::from_bytes(b"LSFV1xxxx"), Err(LsfError::BadMagic(_))));
        assert!(matches!(
            ToyClassifier::from_bytes(&bytes[..bytes.len() - 3]),
            Err(LsfError::Truncated { .. })
        ));
    }

    #[test]
    fn linear_gradient_matches_central_differences() {
        let mut r = rng::rng_from(17);
        let (classes, n) = (4, 6);
        let mut head = LinearSoftmax::zeros(classes, n);
        let p0: Vec<f64> = (0..classes * n + classes).map(|_| r.gen_range(-1.0..1.0)).collect();
        head.set_params(&p0);
        let batch: Vec<Vec<f64>> = (0..5).map(|_| (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..5).map(|_| r.gen_range(0..classes)).collect();
        let (_, grad) = head.loss_and_grad(&batch, &labels);
        let h = 1e-5;
        for k in 0..p0.len() {
            let mut p = p0.clone();
            p[k] += h;
            head.set_params(&p);
            let up = head.loss_and_grad(&batch, &labels).0;
            p[k] -= 2.0 * h;
            head.set_params(&p);
            let down = head.loss_and_grad(&batch, &labels).0;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
            assert!(rel < 1e-4, "param {k}: fd {fd} analytic {}", grad[k]);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = generate_dataset(4, 2).unwrap();
        let a = train_classifier(&ds, 3, 0.1, 9).unwrap();
        let b = train_classifier(&ds, 3, 0.1, 9).unwrap();
        assert_eq!(a.classifier, b.classifier);
    }
}
