//! Stage 1: unrestricted coordinate search over a small block image whose
//! nearest-neighbor expansion (replicated over every frame) must satisfy the
//! attack goal. The accepted blocks form the style set.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LsfError, Result};
use crate::format;
use crate::oracle::{Goal, QueryGate, Stage};
use crate::rng;
use crate::video::{resize, Dims, Image, ResizeMode, VideoTensor};

/// Upper end of the per-block texture amplitude drawn by [`StyleInit::Random`].
pub const TEXTURE_AMPLITUDE: f32 = 0.25;

/// How the block is initialized before searching. `Random` draws a base
/// color and a texture amplitude per block, then independent per-pixel
/// noise of that amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StyleInit {
    Random,
    SolidColor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleSearchConfig {
    pub block_h: usize,
    pub block_w: usize,
    pub step: f32,
    pub per_style_cap: u64,
    pub retries: usize,
    pub init: StyleInit,
    /// Queries without an accepted step before the block is redrawn from
    /// the init distribution; `0` redraws only when a full pass stalls.
    pub restart_after: u64,
}

impl Default for StyleSearchConfig {
    fn default() -> Self {
        Self {
            block_h: 16,
            block_w: 16,
            step: 0.3,
            per_style_cap: 5000,
            retries: 3,
            init: StyleInit::Random,
            restart_after: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleImage {
    pub block: Image,
    pub seed: u64,
    pub queries: u64,
    pub restarts: u64,
    /// Objective after each accepted step, starting with the initial value.
    pub accepted_objectives: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleSet {
    pub images: Vec<StyleImage>,
}

impl StyleSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn total_queries(&self) -> u64 {
        self.images.iter().map(|s| s.queries).sum()
    }
}

/// The resize `phi`: nearest-neighbor upscaling to the frame size, repeated
/// on every frame.
pub fn expand_block(block: &Image, dims: Dims) -> Result<VideoTensor> {
    let frame = resize(block, dims.h, dims.w, ResizeMode::Nearest)?;
    let frames = vec![frame; dims.t];
    VideoTensor::from_frames(&frames)
}

fn initial_block(cfg: &StyleSearchConfig, channels: usize, r: &mut rng::LabRng) -> Result<Image> {
    let n = cfg.block_h * cfg.block_w * channels;
    let color: Vec<f32> = (0..channels).map(|_| r.gen::<f32>()).collect();
    let data = match cfg.init {
        StyleInit::Random => {
            let amplitude = r.gen::<f32>() * TEXTURE_AMPLITUDE;
            (0..n)
                .map(|i| (color[i % channels] + amplitude * r.gen_range(-1.0f32..=1.0)).clamp(0.0, 1.0))
                .collect()
        }
        StyleInit::SolidColor => (0..n).map(|i| color[i % channels]).collect(),
    };
    Image::new(cfg.block_h, cfg.block_w, channels, data)
}

/// Searches one style image. Every oracle call is charged to stage 1.
///
/// Coordinates are visited in a fresh shuffled order per pass and each one
/// tries `+step` then `-step`, keeping the first change that raises the
/// goal objective. When the search stalls (see
/// [`StyleSearchConfig::restart_after`]) the block is redrawn and the
/// search starts over, all within the per-style cap.
pub fn find_style(
    gate: &mut QueryGate<'_>,
    goal: Goal,
    dims: Dims,
    seed: u64,
    cfg: &StyleSearchConfig,
) -> Result<StyleImage> {
    let mut r = rng::rng_from(seed);
    let mut spent = 0u64;
    let mut restarts = 0u64;
    let mut coords: Vec<usize> = (0..cfg.block_h * cfg.block_w * dims.c).collect();
    loop {
        if spent >= cfg.per_style_cap {
            return Err(LsfError::StyleSearchFailed { queries: spent });
        }
        let mut block = initial_block(cfg, dims.c, &mut r)?;
        let resp = gate.query(&expand_block(&block, dims)?, Stage::StyleSearch)?;
        spent += 1;
        let mut best = goal.objective(&resp.top1);
        let mut accepted = vec![best];
        let mut met = goal.is_met(&resp.top1);
        let mut idle = 0u64;

        'passes: while !met {
            coords.shuffle(&mut r);
            let mut improved_in_pass = false;
            for &q in &coords {
                for sign in [1.0f32, -1.0] {
                    let old = block.data[q];
                    let new = (old + sign * cfg.step).clamp(0.0, 1.0);
                    if new == old {
                        continue;
                    }
                    if spent >= cfg.per_style_cap {
                        return Err(LsfError::StyleSearchFailed { queries: spent });
                    }
                    block.data[q] = new;
                    let resp = gate.query(&expand_block(&block, dims)?, Stage::StyleSearch)?;
                    spent += 1;
                    let obj = goal.objective(&resp.top1);
                    if obj > best {
                        best = obj;
                        accepted.push(obj);
                        improved_in_pass = true;
                        idle = 0;
                        met = goal.is_met(&resp.top1);
                        if met {
                            break 'passes;
                        }
                        break;
                    }
                    block.data[q] = old;
                    idle += 1;
                    if cfg.restart_after > 0 && idle >= cfg.restart_after {
                        break 'passes;
                    }
                }
            }
            if !improved_in_pass {
                break;
            }
        }
        if met {
            return Ok(StyleImage {
                block,
                seed,
                queries: spent,
                restarts,
                accepted_objectives: accepted,
            });
        }
        restarts += 1;
    }
}

/// Builds `n_styles` style images, retrying a failed search with a fresh
/// seed up to `cfg.retries` times.
pub fn build_style_set(
    gate: &mut QueryGate<'_>,
    goal: Goal,
    dims: Dims,
    n_styles: usize,
    master_seed: u64,
    cfg: &StyleSearchConfig,
) -> Result<StyleSet> {
    if n_styles == 0 {
        return Err(LsfError::BadInput("style set size must be at least 1".into()));
    }
    let mut images = Vec::with_capacity(n_styles);
    for i in 0..n_styles {
        let mut last_err = None;
        for attempt in 0..=cfg.retries {
            let seed = rng::derive_seed(master_seed, &format!("style:{i}:{attempt}"));
            match find_style(gate, goal, dims, seed, cfg) {
                Ok(s) => {
                    images.push(s);
                    last_err = None;
                    break;
                }
                Err(e @ LsfError::StyleSearchFailed { .. }) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        if let Some(e) = last_err {
            return Err(e);
        }
    }
    Ok(StyleSet { images })
}

/// Randomly initialized blocks with no search and no queries.
pub fn random_style_set(
    channels: usize,
    n_styles: usize,
    master_seed: u64,
    cfg: &StyleSearchConfig,
) -> Result<StyleSet> {
    let images = (0..n_styles)
        .map(|i| {
            let seed = rng::derive_seed(master_seed, &format!("style:{i}:0"));
            let block = initial_block(cfg, channels, &mut rng::rng_from(seed))?;
            Ok(StyleImage {
                block,
                seed,
                queries: 0,
                restarts: 0,
                accepted_objectives: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(StyleSet { images })
}

/// Writes `style_<i>.lsfv` (single-frame tensors) and `styles.tsv`.
pub fn save_style_set(set: &StyleSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("# index\tfile\tseed\tqueries\trestarts\n");
    for (i, s) in set.images.iter().enumerate() {
        let name = format!("style_{i}.lsfv");
        let v = VideoTensor::from_frames(std::slice::from_ref(&s.block))?;
        format::write_video(dir.join(&name), &v)?;
        manifest.push_str(&format!("{i}\t{name}\t{}\t{}\t{}\n", s.seed, s.queries, s.restarts));
    }
    fs::write(dir.join("styles.tsv"), manifest)?;
    Ok(())
}
