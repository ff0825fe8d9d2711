//! The LSFV1 video container.
//!
//! Layout: magic `4C 53 46 56 01`, then `T, H, W, C` as little-endian `u32`,
//! then `T*H*W*C` little-endian `f32` values in `(t, h, w, c)` row-major order.

use std::fs;
use std::path::Path;

use crate::error::{LsfError, Result};
use crate::video::{Dims, VideoTensor};

pub const VIDEO_MAGIC: [u8; 5] = [0x4C, 0x53, 0x46, 0x56, 0x01];
const HEADER_LEN: usize = VIDEO_MAGIC.len() + 16;

pub fn encode_video(video: &VideoTensor) -> Vec<u8> {
    let d = video.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + d.len() * 4);
    out.extend_from_slice(&VIDEO_MAGIC);
    for n in [d.t, d.h, d.w, d.c] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for v in video.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_video(bytes: &[u8]) -> Result<VideoTensor> {
    if bytes.len() < VIDEO_MAGIC.len() || bytes[..VIDEO_MAGIC.len()] != VIDEO_MAGIC {
        return Err(LsfError::BadMagic("LSFV1"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(LsfError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let mut raw = [0u32; 4];
    for (i, r) in raw.iter_mut().enumerate() {
        let o = VIDEO_MAGIC.len() + 4 * i;
        *r = u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4-byte slice"));
    }
    let payload_len = raw
        .iter()
        .try_fold(4usize, |acc, &n| acc.checked_mul(n as usize))
        .ok_or(LsfError::DimOverflow(raw))?;
    let dims = Dims::new(raw[0] as usize, raw[1] as usize, raw[2] as usize, raw[3] as usize);
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < payload_len {
        return Err(LsfError::Truncated {
            expected: payload_len,
            found: payload.len(),
        });
    }
    if payload.len() > payload_len {
        return Err(LsfError::BadInput(format!(
            "{} trailing bytes after LSFV1 payload",
            payload.len() - payload_len
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
        .collect();
    VideoTensor::new(dims, data)
}

pub fn write_video(path: impl AsRef<Path>, video: &VideoTensor) -> Result<()> {
    fs::write(path, encode_video(video))?;
    Ok(())
}

pub fn read_video(path: impl AsRef<Path>) -> Result<VideoTensor> {
    decode_video(&fs::read(path)?)
}
