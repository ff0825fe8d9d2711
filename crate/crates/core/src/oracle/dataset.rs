//! Moving-shapes videos: {circle, square} x {left, right, up, down}.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{LsfError, Result};
use crate::format;
use crate::rng;
use crate::video::{Dims, VideoTensor};

pub const CLASS_COUNT: usize = 8;
pub const SAMPLE_DIMS: Dims = Dims::new(16, 64, 64, 3);

const NOISE_AMPLITUDE: f32 = 0.05;
const MIN_SPEED: f64 = 1.5;
const MAX_SPEED: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassSpec {
    pub shape: Shape,
    pub direction: Direction,
}

impl ClassSpec {
    pub fn from_label(label: usize) -> Self {
        let shape = if label < 4 { Shape::Circle } else { Shape::Square };
        let direction = match label % 4 {
            0 => Direction::Left,
            1 => Direction::Right,
            2 => Direction::Up,
            _ => Direction::Down,
        };
        Self { shape, direction }
    }

    pub fn label(&self) -> usize {
        let d = match self.direction {
            Direction::Left => 0,
            Direction::Right => 1,
            Direction::Up => 2,
            Direction::Down => 3,
        };
        d + if self.shape == Shape::Square { 4 } else { 0 }
    }

    pub fn name(&self) -> String {
        let s = match self.shape {
            Shape::Circle => "circle",
            Shape::Square => "square",
        };
        let d = match self.direction {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
        };
        format!("{s}-{d}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub video: VideoTensor,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub samples: Vec<Sample>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `n_per_class` samples of every class, ordered by class. Each sample is
/// drawn from its own seed stream so the set is fully determined by `seed`.
pub fn generate_dataset(seed: u64, n_per_class: usize) -> Result<SyntheticDataset> {
    if n_per_class == 0 {
        return Err(LsfError::BadInput("n_per_class must be at least 1".into()));
    }
    let mut samples = Vec::with_capacity(CLASS_COUNT * n_per_class);
    for label in 0..CLASS_COUNT {
        for i in 0..n_per_class {
            let mut r = rng::derived_rng(seed, &format!("sample:{label}:{i}"));
            samples.push(Sample {
                video: render_sample(ClassSpec::from_label(label), &mut r)?,
                label,
            });
        }
    }
    Ok(SyntheticDataset { samples })
}

/// Half-width of the per-sample spread around the class background tone.
pub const SCENE_JITTER: f32 = 0.1;

/// Class background tone: one corner of the cube `{0.1, 0.5}^3` per class.
pub fn scene_tone(spec: ClassSpec) -> [f32; 3] {
    let label = spec.label();
    std::array::from_fn(|c| if (label >> c) & 1 == 1 { 0.5 } else { 0.1 })
}

fn render_sample(spec: ClassSpec, r: &mut rng::LabRng) -> Result<VideoTensor> {
    let d = SAMPLE_DIMS;
    let tone = scene_tone(spec);
    let bg: [f32; 3] = std::array::from_fn(|c| tone[c] + r.gen_range(-SCENE_JITTER..SCENE_JITTER));
    let fg: [f32; 3] = [r.gen_range(0.6..0.95), r.gen_range(0.6..0.95), r.gen_range(0.6..0.95)];
    let radius: f64 = r.gen_range(5.0..8.0);
    let speed: f64 = r.gen_range(MIN_SPEED..MAX_SPEED);
    let travel = speed * (d.t - 1) as f64;

    // Motion along one axis; the other coordinate is fixed.
    let along_len = match spec.direction {
        Direction::Left | Direction::Right => d.w,
        Direction::Up | Direction::Down => d.h,
    } as f64;
    let across_len = match spec.direction {
        Direction::Left | Direction::Right => d.h,
        Direction::Up | Direction::Down => d.w,
    } as f64;
    let lo = radius + 0.5;
    let hi = along_len - 1.5 - radius;
    let start_fwd = r.gen_range(lo..hi - travel);
    let across = r.gen_range(lo..across_len - 1.5 - radius);
    let (start, step) = match spec.direction {
        Direction::Right | Direction::Down => (start_fwd, speed),
        Direction::Left | Direction::Up => (start_fwd + travel, -speed),
    };

    let half_side = radius * 0.886; // equal-area square
    let mut data = vec![0.0f32; d.len()];
    for t in 0..d.t {
        let pos = start + step * t as f64;
        let (cy, cx) = match spec.direction {
            Direction::Left | Direction::Right => (across, pos),
            Direction::Up | Direction::Down => (pos, across),
        };
        for y in 0..d.h {
            for x in 0..d.w {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let inside = match spec.shape {
                    Shape::Circle => dy * dy + dx * dx <= radius * radius,
                    Shape::Square => dy.abs() <= half_side && dx.abs() <= half_side,
                };
                let base = if inside { &fg } else { &bg };
                for c in 0..d.c {
                    let n = r.gen_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
                    data[d.offset(t, y, x, c)] = base[c] + n;
                }
            }
        }
    }
    VideoTensor::from_clamped(d, data)
}

/// Writes every sample as an LSFV1 file plus `labels.tsv` (`file<TAB>label`).
pub fn export_dataset(dataset: &SyntheticDataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut index = String::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        let name = format!("sample_{i:05}.lsfv");
        format::write_video(dir.join(&name), &s.video)?;
        index.push_str(&format!("{name}\t{}\n", s.label));
    }
    let manifest = dir.join("labels.tsv");
    fs::write(&manifest, index)?;
    Ok(manifest)
}

/// Parses a label index; paths are resolved relative to the index file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<(PathBuf, usize)>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (file, label) = line
            .split_once('\t')
            .ok_or_else(|| LsfError::BadInput(format!("{}:{}: missing tab", path.display(), n + 1)))?;
        let label = label
            .trim()
            .parse()
            .map_err(|_| LsfError::BadInput(format!("{}:{}: bad label", path.display(), n + 1)))?;
        out.push((base.join(file), label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centroid_col(v: &VideoTensor, t: usize) -> f64 {
        let d = v.dims();
        let (mut sum, mut n) = (0.0, 0.0);
        for y in 0..d.h {
            for x in 0..d.w {
                let luma = (0..3).map(|c| v.get(t, y, x, c)).sum::<f32>() / 3.0;
                if luma > 0.5 {
                    sum += x as f64;
                    n += 1.0;
                }
            }
        }
        sum / n
    }

    #[test]
    fn deterministic_and_sized() {
        let a = generate_dataset(11, 2).unwrap();
        let b = generate_dataset(11, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
        assert!(a.samples.iter().all(|s| s.label < CLASS_COUNT));
        assert_ne!(generate_dataset(12, 1).unwrap().samples[0], a.samples[0]);
        assert!(generate_dataset(1, 0).is_err());
    }

    #[test]
    fn circle_left_moves_left() {
        let ds = generate_dataset(5, 3).unwrap();
        for s in ds.samples.iter().filter(|s| s.label == 0) {
            let cols: Vec<f64> = (0..16).map(|t| centroid_col(&s.video, t)).collect();
            for w in cols.windows(2) {
                assert!(w[1] < w[0], "{cols:?}");
            }
            assert!(cols[0] - cols[15] >= 1.5 * 15.0 - 1.0);
        }
    }

    #[test]
    fn class_names() {
        assert_eq!(ClassSpec::from_label(0).name(), "circle-left");
        assert_eq!(ClassSpec::from_label(7).name(), "square-down");
        for l in 0..CLASS_COUNT {
            assert_eq!(ClassSpec::from_label(l).label(), l);
        }
    }
}
