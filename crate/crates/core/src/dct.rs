//! Orthonormal DCT-II matrices and the single-coefficient basis directions
//! sampled by the frequency-domain optimizer.
//!
//! A direction for coefficient `(t, c, i, j)` is zero everywhere except on
//! frame `t`, channel `c`, where it equals the 2-D inverse DCT of a one-hot
//! coefficient matrix: `value(y, x) = A_rows[i][y] * A_cols[j][x]`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{LsfError, Result};
use crate::rng;
use crate::video::{Dims, RegionMask};

/// `d x d` orthonormal DCT-II matrix, `A[i][j] = c(i) cos((j + 0.5) pi i / d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DctMatrix {
    d: usize,
    entries: Vec<f64>,
}

impl DctMatrix {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(LsfError::InvalidDims("DCT order must be at least 1".into()));
        }
        let df = d as f64;
        let mut entries = vec![0.0; d * d];
        for i in 0..d {
            let ci = if i == 0 { (1.0 / df).sqrt() } else { (2.0 / df).sqrt() };
            for j in 0..d {
                entries[i * d + j] =
                    ci * (((j as f64 + 0.5) * std::f64::consts::PI / df) * i as f64).cos();
            }
        }
        Ok(Self { d, entries })
    }

    pub fn order(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.d + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.d..(i + 1) * self.d]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

pub fn dct_matrix(d: usize) -> Result<DctMatrix> {
    DctMatrix::new(d)
}

/// Forward 2-D DCT of an `h x w` slice: `A_h X A_w^T`.
pub fn dct2(slice: &[f64], rows: &DctMatrix, cols: &DctMatrix) -> Vec<f64> {
    let (h, w) = (rows.order(), cols.order());
    debug_assert_eq!(slice.len(), h * w);
    let mut tmp = vec![0.0; h * w];
    for i in 0..h {
        for x in 0..w {
            tmp[i * w + x] = (0..h).map(|y| rows.get(i, y) * slice[y * w + x]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = (0..w).map(|x| tmp[i * w + x] * cols.get(j, x)).sum();
        }
    }
    out
}

/// Inverse 2-D DCT: `A_h^T C A_w`.
pub fn idct2(coeffs: &[f64], rows: &DctMatrix, cols: &DctMatrix) -> Vec<f64> {
    let (h, w) = (rows.order(), cols.order());
    debug_assert_eq!(coeffs.len(), h * w);
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for j in 0..w {
            tmp[y * w + j] = (0..h).map(|i| rows.get(i, y) * coeffs[i * w + j]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (0..w).map(|j| tmp[y * w + j] * cols.get(j, x)).sum();
        }
    }
    out
}

/// One element of the frequency set: frame, channel, row and column frequency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrequencyIndex {
    pub t: usize,
    pub c: usize,
    pub i: usize,
    pub j: usize,
}

impl FrequencyIndex {
    pub const fn new(t: usize, c: usize, i: usize, j: usize) -> Self {
        Self { t, c, i, j }
    }

    fn check(&self, dims: Dims) -> Result<()> {
        if self.t >= dims.t || self.c >= dims.c || self.i >= dims.h || self.j >= dims.w {
            return Err(LsfError::OutOfRange(format!(
                "frequency index {self:?} outside {dims:?}"
            )));
        }
        Ok(())
    }
}

/// Spatial support the basis is built on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    /// DCT over the logo rectangle only, embedded at its origin.
    Subrect,
    /// DCT over the whole frame, masked to the logo rectangle.
    Global,
}

/// The coefficient space of the optimizer: support dims, where it sits in the
/// frame, and the row/column DCT matrices.
#[derive(Clone, Debug)]
pub struct BasisSupport {
    kind: BasisKind,
    dims: Dims,
    origin: (usize, usize),
    rows: DctMatrix,
    cols: DctMatrix,
}

impl BasisSupport {
    pub fn new(kind: BasisKind, mask: &RegionMask, video: Dims) -> Result<Self> {
        mask.check_frame(video)?;
        let (dims, origin) = match kind {
            BasisKind::Subrect => (
                Dims::new(video.t, mask.height, mask.width, video.c),
                (mask.u, mask.v),
            ),
            BasisKind::Global => (video, (0, 0)),
        };
        if dims.is_empty() {
            return Err(LsfError::InvalidDims(format!("empty basis support {dims:?}")));
        }
        Ok(Self {
            kind,
            dims,
            origin,
            rows: DctMatrix::new(dims.h)?,
            cols: DctMatrix::new(dims.w)?,
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// Shape of the coefficient (and support) tensor.
    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Frame position of support pixel `(0, 0)`.
    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    /// `|Q_DCT|`, the number of coefficients.
    pub fn coefficient_count(&self) -> usize {
        self.dims.len()
    }

    pub fn flat(&self, idx: FrequencyIndex) -> usize {
        self.dims.offset(idx.t, idx.i, idx.j, idx.c)
    }

    pub fn rows(&self) -> &DctMatrix {
        &self.rows
    }

    pub fn cols(&self) -> &DctMatrix {
        &self.cols
    }

    /// The `h x w` spatial pattern of frequency `(i, j)`.
    pub fn pattern(&self, i: usize, j: usize) -> Vec<f64> {
        let (h, w) = (self.dims.h, self.dims.w);
        let (ri, cj) = (self.rows.row(i), self.cols.row(j));
        let mut out = Vec::with_capacity(h * w);
        for &a in ri {
            out.extend(cj.iter().map(|&b| a * b));
        }
        out
    }

    /// Full direction over the support dims.
    pub fn direction(&self, idx: FrequencyIndex) -> Result<Vec<f64>> {
        idx.check(self.dims)?;
        let d = self.dims;
        let mut out = vec![0.0; d.len()];
        let pat = self.pattern(idx.i, idx.j);
        for y in 0..d.h {
            for x in 0..d.w {
                out[d.offset(idx.t, y, x, idx.c)] = pat[y * d.w + x];
            }
        }
        Ok(out)
    }
}

/// Single-coefficient direction over a tensor of `dims`, with a DCT taken
/// over the full `H x W` of each frame.
pub fn basis_direction(idx: FrequencyIndex, dims: Dims) -> Result<Vec<f64>> {
    let mask = RegionMask::from_extent(0, 0, dims.h, dims.w, dims.h, dims.w)?;
    BasisSupport::new(BasisKind::Subrect, &mask, dims)?.direction(idx)
}

/// Enumeration order of the frequency set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ordering {
    LowFrequencyFirst,
    Shuffled(u64),
}

/// Every coefficient index of a support with `dims`, without duplicates.
pub fn frequency_set(dims: Dims, ordering: Ordering) -> Vec<FrequencyIndex> {
    let mut set = Vec::with_capacity(dims.len());
    for t in 0..dims.t {
        for c in 0..dims.c {
            for i in 0..dims.h {
                for j in 0..dims.w {
                    set.push(FrequencyIndex::new(t, c, i, j));
                }
            }
        }
    }
    match ordering {
        Ordering::LowFrequencyFirst => {
            set.sort_by_key(|f| (f.i + f.j, f.i, f.t, f.c));
        }
        Ordering::Shuffled(seed) => {
            set.shuffle(&mut rng::rng_from(seed));
        }
    }
    set
}
