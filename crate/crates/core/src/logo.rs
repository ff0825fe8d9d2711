//! Logo assets: the admission filter, a procedural letter-glyph generator,
//! and PNG import/export.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{LsfError, Result};
use crate::rng;
use crate::video::Image;

pub const LOGO_SIZE: usize = 32;
/// Brightness above which (in every RGB channel) a pixel counts as white.
pub const WHITE_LEVEL: f32 = 0.9;
/// Largest admissible fraction of white pixels.
pub const MAX_WHITE_FRACTION: f64 = 0.5;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

/// RGBA logo with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogoAsset {
    pub id: String,
    h: usize,
    w: usize,
    pixels: Vec<f32>,
}

impl LogoAsset {
    pub fn new(id: impl Into<String>, h: usize, w: usize, pixels: Vec<f32>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(LsfError::InvalidDims(format!("logo {h}x{w}")));
        }
        if pixels.len() != h * w * 4 {
            return Err(LsfError::DimensionMismatch {
                axis: "logo pixels",
                expected: h * w * 4,
                got: pixels.len(),
            });
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(LsfError::OutOfRange(format!("logo value {bad}")));
        }
        Ok(Self {
            id: id.into(),
            h,
            w,
            pixels,
        })
    }

    /// Opaque logo from an RGB image.
    pub fn from_rgb(id: impl Into<String>, image: &Image) -> Result<Self> {
        if image.channels() != 3 {
            return Err(LsfError::DimensionMismatch {
                axis: "channels",
                expected: 3,
                got: image.channels(),
            });
        }
        let pixels = image
            .data()
            .chunks_exact(3)
            .flat_map(|p| [p[0], p[1], p[2], 1.0])
            .collect();
        Self::new(id, image.height(), image.width(), pixels)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// The color channels, alpha dropped.
    pub fn rgb(&self) -> Image {
        let data = self.pixels.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
        Image::new(self.h, self.w, 3, data).expect("rgb view of a valid logo")
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)?.to_rgba8();
        let (w, h) = img.dimensions();
        let pixels = img.into_raw().into_iter().map(|b| f32::from(b) / 255.0).collect();
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(id, h as usize, w as usize, pixels)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.pixels.iter().map(|&v| to_byte(v)).collect();
        let img = image::RgbaImage::from_raw(self.w as u32, self.h as u32, bytes)
            .ok_or_else(|| LsfError::Invariant("logo buffer size".into()))?;
        img.save(path)?;
        Ok(())
    }
}

pub(crate) fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rejects logos with any transparency or with too many white pixels.
pub fn admit_logo(asset: &LogoAsset) -> bool {
    let mut white = 0usize;
    for p in asset.pixels.chunks_exact(4) {
        if p[3] < 1.0 {
            return false;
        }
        if p[..3].iter().all(|&v| v > WHITE_LEVEL) {
            white += 1;
        }
    }
    white as f64 / (asset.h * asset.w) as f64 <= MAX_WHITE_FRACTION
}

/// A filtered collection of logos.
#[derive(Clone, Debug, PartialEq)]
pub struct LogoSet {
    logos: Vec<LogoAsset>,
}

impl LogoSet {
    /// Keeps only admissible logos.
    pub fn filtered(candidates: impl IntoIterator<Item = LogoAsset>) -> Self {
        Self {
            logos: candidates.into_iter().filter(admit_logo).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.logos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logos.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&LogoAsset> {
        self.logos.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LogoAsset> {
        self.logos.iter()
    }

    /// Loads every `*.png` in `dir` (sorted by file name) and filters.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        let logos = paths.iter().map(LogoAsset::load_png).collect::<Result<Vec<_>>>()?;
        Ok(Self::filtered(logos))
    }

    /// Writes `<id>.png` for each logo plus `logos.tsv`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut index = String::from("# index\tid\tfile\n");
        for (i, l) in self.logos.iter().enumerate() {
            let name = format!("{}.png", l.id);
            l.save_png(dir.join(&name))?;
            index.push_str(&format!("{i}\t{}\t{name}\n", l.id));
        }
        fs::write(dir.join("logos.tsv"), index)?;
        Ok(())
    }
}

/// `n` letter logos of `LOGO_SIZE x LOGO_SIZE`: one to three capital
/// letters in a solid color on a solid, darker-or-lighter background.
pub fn synthesize_logo_set(seed: u64, n: usize) -> Result<LogoSet> {
    if n == 0 {
        return Err(LsfError::BadInput("logo count must be at least 1".into()));
    }
    let logos = (0..n)
        .map(|i| {
            let mut r = rng::derived_rng(seed, &format!("logo:{i}"));
            synthesize_logo(&mut r, i)
        })
        .collect::<Result<Vec<_>>>()?;
    let set = LogoSet::filtered(logos);
    if set.len() != n {
        return Err(LsfError::Invariant("generated logo failed admission".into()));
    }
    Ok(set)
}

fn synthesize_logo(r: &mut rng::LabRng, index: usize) -> Result<LogoAsset> {
    let letters: Vec<u8> = (0..r.gen_range(1..=3usize)).map(|_| r.gen_range(b'A'..=b'Z')).collect();
    // Background is never white; the ink differs from it by at least 0.35
    // in mean brightness so the glyphs stay legible.
    let bg: [f32; 3] = [r.gen_range(0.0..0.85), r.gen_range(0.0..0.85), r.gen_range(0.0..0.85)];
    let bg_mean = bg.iter().sum::<f32>() / 3.0;
    let ink: [f32; 3] = loop {
        let c: [f32; 3] = [r.gen(), r.gen(), r.gen()];
        if (c.iter().sum::<f32>() / 3.0 - bg_mean).abs() >= 0.35 {
            break c;
        }
    };
    let scale = match letters.len() {
        1 => 4,
        2 => 3,
        _ => 2,
    };
    let (gw, gh) = (GLYPH_W * scale, GLYPH_H * scale);
    let total_w = letters.len() * gw + letters.len() - 1;
    let x0 = (LOGO_SIZE - total_w) / 2;
    let y0 = (LOGO_SIZE - gh) / 2;

    let mut pixels: Vec<f32> = (0..LOGO_SIZE * LOGO_SIZE).flat_map(|_| [bg[0], bg[1], bg[2], 1.0]).collect();
    for (n, &ch) in letters.iter().enumerate() {
        let bitmap = glyph(ch);
        let left = x0 + n * (gw + 1);
        for (gy, bits) in bitmap.iter().enumerate() {
            for gx in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - gx)) == 0 {
                    continue;
                }
                for sy in 0..scale {
                    for sx in 0..scale {
                        let (y, x) = (y0 + gy * scale + sy, left + gx * scale + sx);
                        let o = (y * LOGO_SIZE + x) * 4;
                        pixels[o..o + 3].copy_from_slice(&ink);
                    }
                }
            }
        }
    }
    let text: String = letters.iter().map(|&b| b as char).collect();
    LogoAsset::new(format!("logo_{index:03}_{text}"), LOGO_SIZE, LOGO_SIZE, pixels)
}

/// Picks `n` of the logos uniformly without replacement.
pub fn sample_logos(set: &LogoSet, n: usize, seed: u64) -> Result<LogoSet> {
    if n == 0 || n > set.len() {
        return Err(LsfError::BadInput(format!("cannot sample {n} of {} logos", set.len())));
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(&mut rng::rng_from(seed));
    idx.truncate(n);
    idx.sort_unstable();
    Ok(LogoSet {
        logos: idx.into_iter().map(|i| set.logos[i].clone()).collect(),
    })
}

/// Rows of a 5x7 capital letter; the most significant of the low five bits
/// is the leftmost column.
fn glyph(ch: u8) -> [u8; GLYPH_H] {
    const FONT: [[u8; GLYPH_H]; 26] = [
        [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11], // A
        [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E], // B
        [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E], // C
        [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C], // D
        [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F], // E
        [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10], // F
        [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F], // G
        [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11], // H
        [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E], // I
        [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C], // J
        [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11], // K
        [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F], // L
        [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11], // M
        [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11], // N
        [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E], // O
        [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10], // P
        [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D], // Q
        [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11], // R
        [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E], // S
        [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04], // T
        [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E], // U
        [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04], // V
        [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A], // W
        [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11], // X
        [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04], // Y
        [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F], // Z
    ];
    FONT[usize::from(ch.clamp(b'A', b'Z') - b'A')]
}
