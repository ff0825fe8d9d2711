//! Video and image tensors, logo masks and logo superimposition.

use serde::{Deserialize, Serialize};

use crate::error::{LsfError, Result};

/// Shape of a video tensor: frames, height, width, channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims {
    pub const fn new(t: usize, h: usize, w: usize, c: usize) -> Self {
        Self { t, h, w, c }
    }

    pub fn len(&self) -> usize {
        self.t * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat offset of `(t, y, x, c)` in row-major `(t, h, w, c)` order.
    #[inline]
    pub fn offset(&self, t: usize, y: usize, x: usize, c: usize) -> usize {
        ((t * self.h + y) * self.w + x) * self.c + c
    }

    fn validate(&self) -> Result<()> {
        if self.t == 0 || self.h == 0 || self.w == 0 || self.c == 0 {
            return Err(LsfError::InvalidDims(format!("{self:?} has a zero axis")));
        }
        Ok(())
    }
}

fn check_range(data: &[f32]) -> Result<()> {
    if let Some((i, v)) = data
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(LsfError::OutOfRange(format!(
            "element {i} = {v} outside [0, 1]"
        )));
    }
    Ok(())
}

/// A `T x H x W x C` video with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    dims: Dims,
    data: Vec<f32>,
}

impl VideoTensor {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(LsfError::DimensionMismatch {
                axis: "payload",
                expected: dims.len(),
                got: data.len(),
            });
        }
        check_range(&data)?;
        Ok(Self { dims, data })
    }

    /// Builds a tensor, clamping every element into `[0, 1]`. NaN maps to 0.
    pub fn from_clamped(dims: Dims, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = clamp01(*v);
        }
        Self::new(dims, data)
    }

    pub fn filled(dims: Dims, value: f32) -> Result<Self> {
        Self::new(dims, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.dims.offset(t, y, x, c)]
    }

    /// Writes a value, clamped into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, t: usize, y: usize, x: usize, c: usize, value: f32) {
        let o = self.dims.offset(t, y, x, c);
        self.data[o] = clamp01(value);
    }

    /// Copy of frame `t` as an image.
    pub fn frame(&self, t: usize) -> Image {
        let n = self.dims.h * self.dims.w * self.dims.c;
        Image {
            h: self.dims.h,
            w: self.dims.w,
            c: self.dims.c,
            data: self.data[t * n..(t + 1) * n].to_vec(),
        }
    }

    /// Video made of `frames`, which must all share one shape.
    pub fn from_frames(frames: &[Image]) -> Result<Self> {
        let first = frames.first().ok_or(LsfError::Empty("frames"))?;
        let dims = Dims::new(frames.len(), first.h, first.w, first.c);
        let mut data = Vec::with_capacity(dims.len());
        for f in frames {
            if (f.h, f.w, f.c) != (first.h, first.w, first.c) {
                return Err(LsfError::InvalidDims("frames differ in shape".into()));
            }
            data.extend_from_slice(&f.data);
        }
        Self::new(dims, data)
    }
}

#[inline]
pub(crate) fn clamp01(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// A single `h x w x c` image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub(crate) h: usize,
    pub(crate) w: usize,
    pub(crate) c: usize,
    pub(crate) data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if h == 0 || w == 0 || c == 0 {
            return Err(LsfError::InvalidDims(format!("image {h}x{w}x{c}")));
        }
        if data.len() != h * w * c {
            return Err(LsfError::DimensionMismatch {
                axis: "payload",
                expected: h * w * c,
                got: data.len(),
            });
        }
        check_range(&data)?;
        Ok(Self { h, w, c, data })
    }

    pub fn from_clamped(h: usize, w: usize, c: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = clamp01(*v);
        }
        Self::new(h, w, c, data)
    }

    pub fn filled(h: usize, w: usize, c: usize, value: f32) -> Result<Self> {
        Self::new(h, w, c, vec![value; h * w * c])
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.w + x) * self.c + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        self.data[(y * self.w + x) * self.c + c] = clamp01(value);
    }
}

/// Interpolation used by [`resize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    Nearest,
    Bilinear,
}

/// Resizes an image. Nearest uses the `floor(dst * src / dst_len)` index map;
/// bilinear samples at half-pixel centers with edge clamping.
pub fn resize(image: &Image, target_h: usize, target_w: usize, mode: ResizeMode) -> Result<Image> {
    if target_h == 0 || target_w == 0 {
        return Err(LsfError::InvalidDims(format!(
            "resize target {target_h}x{target_w}"
        )));
    }
    let (h, w, c) = (image.h, image.w, image.c);
    let mut out = vec![0.0f32; target_h * target_w * c];
    match mode {
        ResizeMode::Nearest => {
            for y in 0..target_h {
                let sy = y * h / target_h;
                for x in 0..target_w {
                    let sx = x * w / target_w;
                    let src = (sy * w + sx) * c;
                    let dst = (y * target_w + x) * c;
                    out[dst..dst + c].copy_from_slice(&image.data[src..src + c]);
                }
            }
        }
        ResizeMode::Bilinear => {
            let sample_axis = |dst: usize, dst_len: usize, src_len: usize| {
                let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
                    .clamp(0.0, (src_len - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(src_len - 1);
                (lo, hi, pos - lo as f64)
            };
            for y in 0..target_h {
                let (y0, y1, fy) = sample_axis(y, target_h, h);
                for x in 0..target_w {
                    let (x0, x1, fx) = sample_axis(x, target_w, w);
                    for ch in 0..c {
                        let p = |yy: usize, xx: usize| f64::from(image.data[(yy * w + xx) * c + ch]);
                        let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                        let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                        out[(y * target_w + x) * c + ch] = clamp01((top * (1.0 - fy) + bot * fy) as f32);
                    }
                }
            }
        }
    }
    Ok(Image {
        h: target_h,
        w: target_w,
        c,
        data: out,
    })
}

/// `floor(k * n)`, the scaled logo extent.
pub fn scaled_extent(k: f64, n: usize) -> usize {
    let v = k * n as f64;
    if v <= 0.0 {
        0
    } else {
        // 0.29 * 100 evaluates to 28.999...; absorb that representation error.
        (v + 1e-9).floor() as usize
    }
}

/// Axis-aligned logo rectangle, identical on every frame and channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMask {
    pub u: usize,
    pub v: usize,
    pub height: usize,
    pub width: usize,
    pub frame_h: usize,
    pub frame_w: usize,
}

impl RegionMask {
    /// Mask for a `logo_h x logo_w` logo scaled by `k` with top-left corner
    /// at row `u`, column `v`.
    pub fn new(
        u: usize,
        v: usize,
        k: f64,
        logo_h: usize,
        logo_w: usize,
        frame_h: usize,
        frame_w: usize,
    ) -> Result<Self> {
        if k.is_nan() || k < 0.0 {
            return Err(LsfError::OutOfRange(format!("scale {k}")));
        }
        Self::from_extent(u, v, scaled_extent(k, logo_h), scaled_extent(k, logo_w), frame_h, frame_w)
    }

    pub fn from_extent(
        u: usize,
        v: usize,
        height: usize,
        width: usize,
        frame_h: usize,
        frame_w: usize,
    ) -> Result<Self> {
        if height > frame_h || u > frame_h - height {
            return Err(LsfError::OutOfRange(format!(
                "u = {u} with logo height {height} in frame height {frame_h}"
            )));
        }
        if width > frame_w || v > frame_w - width {
            return Err(LsfError::OutOfRange(format!(
                "v = {v} with logo width {width} in frame width {frame_w}"
            )));
        }
        Ok(Self {
            u,
            v,
            height,
            width,
            frame_h,
            frame_w,
        })
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.u && y < self.u + self.height && x >= self.v && x < self.v + self.width
    }

    /// The dense 0/1 mask `M` over a video of `dims`.
    pub fn materialize(&self, dims: Dims) -> Result<Vec<f32>> {
        self.check_frame(dims)?;
        let mut m = vec![0.0f32; dims.len()];
        for t in 0..dims.t {
            for y in self.u..self.u + self.height {
                for x in self.v..self.v + self.width {
                    for c in 0..dims.c {
                        m[dims.offset(t, y, x, c)] = 1.0;
                    }
                }
            }
        }
        Ok(m)
    }

    pub(crate) fn check_frame(&self, dims: Dims) -> Result<()> {
        if dims.h != self.frame_h {
            return Err(LsfError::DimensionMismatch {
                axis: "frame height",
                expected: self.frame_h,
                got: dims.h,
            });
        }
        if dims.w != self.frame_w {
            return Err(LsfError::DimensionMismatch {
                axis: "frame width",
                expected: self.frame_w,
                got: dims.w,
            });
        }
        Ok(())
    }
}

/// Top-1 classifier output: label and its softmax probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: usize,
    pub score: f64,
}

impl LabelScore {
    pub fn new(label: usize, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(LsfError::OutOfRange(format!("score {score}")));
        }
        Ok(Self { label, score })
    }
}

/// Replaces the masked rectangle of every frame with `logo`.
pub fn superimpose(base: &VideoTensor, logo: &Image, mask: &RegionMask) -> Result<VideoTensor> {
    let dims = base.dims();
    mask.check_frame(dims)?;
    if mask.area() == 0 {
        return Ok(base.clone());
    }
    if logo.h != mask.height {
        return Err(LsfError::DimensionMismatch {
            axis: "logo height",
            expected: mask.height,
            got: logo.h,
        });
    }
    if logo.w != mask.width {
        return Err(LsfError::DimensionMismatch {
            axis: "logo width",
            expected: mask.width,
            got: logo.w,
        });
    }
    if logo.c != dims.c {
        return Err(LsfError::DimensionMismatch {
            axis: "channels",
            expected: dims.c,
            got: logo.c,
        });
    }
    let mut out = base.clone();
    let row = mask.width * dims.c;
    for t in 0..dims.t {
        for ly in 0..mask.height {
            let dst = dims.offset(t, mask.u + ly, mask.v, 0);
            let src = ly * row;
            out.data[dst..dst + row].copy_from_slice(&logo.data[src..src + row]);
        }
    }
    Ok(out)
}
