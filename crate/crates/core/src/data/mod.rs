//! Echo sequences, the synthetic storm generator, reflectivity/pixel
//! conversion and the on-disk formats (`.est` containers, PGM frames and
//! split manifests).

mod est;
mod pgm;
mod split;
mod synth;

use std::fmt;
use std::str::FromStr;

pub use est::{decode_est, encode_est, read_est, write_est, EST_MAGIC, EST_VERSION};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};
pub use split::{read_manifest, split_dataset, write_manifest, DatasetSplit, DEFAULT_RATIOS};
pub use synth::{gen_synthetic, render_blobs, synth_tracks, BlobSpec};

use crate::tensor::Tensor;

/// Upper end of the reflectivity scale.
pub const DBZ_MAX: f64 = 70.0;
/// Upper end of the pixel scale.
pub const PIXEL_MAX: f64 = 255.0;
/// Frame interval of the radar product, in minutes.
pub const DEFAULT_DT_MINUTES: u16 = 6;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("value {value} outside [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },
    #[error("{0}")]
    Contract(String),
    #[error("{0}")]
    Config(String),
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueSpace {
    /// Reflectivity in `[0, 70]`.
    Dbz,
    /// Image intensity in `[0, 255]`.
    Pixel,
}

impl ValueSpace {
    pub fn max(self) -> f64 {
        match self {
            ValueSpace::Dbz => DBZ_MAX,
            ValueSpace::Pixel => PIXEL_MAX,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ValueSpace::Dbz => 0,
            ValueSpace::Pixel => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ValueSpace::Dbz),
            1 => Some(ValueSpace::Pixel),
            _ => None,
        }
    }
}

/// Echo coverage and motion class of a synthetic sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    SparseStationary,
    DenseStationary,
    SparseNonstationary,
    DenseNonstationary,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::SparseStationary,
        Regime::DenseStationary,
        Regime::SparseNonstationary,
        Regime::DenseNonstationary,
    ];

    pub fn is_dense(self) -> bool {
        matches!(self, Regime::DenseStationary | Regime::DenseNonstationary)
    }

    pub fn is_stationary(self) -> bool {
        matches!(self, Regime::SparseStationary | Regime::DenseStationary)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::SparseStationary => "sparse-stationary",
            Regime::DenseStationary => "dense-stationary",
            Regime::SparseNonstationary => "sparse-nonstationary",
            Regime::DenseNonstationary => "dense-nonstationary",
        })
    }
}

impl FromStr for Regime {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.to_string() == s)
            .ok_or_else(|| {
                DataError::Config(format!(
                    "unknown regime {s:?}; expected one of sparse-stationary, \
                     dense-stationary, sparse-nonstationary, dense-nonstationary"
                ))
            })
    }
}

/// A stack of equally sized frames, stored row-major as `frames × h × w`.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoSequence {
    values: Vec<f32>,
    n_frames: usize,
    height: usize,
    width: usize,
    pub value_space: ValueSpace,
    pub dt_minutes: u16,
    /// Known only for freshly generated sequences; not persisted.
    pub regime: Option<Regime>,
    pub seed: u64,
}

impl EchoSequence {
    pub fn new(
        values: Vec<f32>,
        n_frames: usize,
        height: usize,
        width: usize,
        value_space: ValueSpace,
    ) -> Result<Self> {
        if n_frames == 0 || height == 0 || width == 0 {
            return Err(DataError::Contract(format!(
                "sequence extents must be positive, got {n_frames}×{height}×{width}"
            )));
        }
        if values.len() != n_frames * height * width {
            return Err(DataError::Contract(format!(
                "{} values do not fill {n_frames}×{height}×{width}",
                values.len()
            )));
        }
        let max = value_space.max();
        if let Some(&v) = values
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=max).contains(&(**v as f64))))
        {
            return Err(DataError::Range {
                value: v as f64,
                lo: 0.0,
                hi: max,
            });
        }
        Ok(Self {
            values,
            n_frames,
            height,
            width,
            value_space,
            dt_minutes: DEFAULT_DT_MINUTES,
            regime: None,
            seed: 0,
        })
    }

    pub fn zeros(
        n_frames: usize,
        height: usize,
        width: usize,
        value_space: ValueSpace,
    ) -> Result<Self> {
        Self::new(
            vec![0.0; n_frames * height * width],
            n_frames,
            height,
            width,
            value_space,
        )
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn len(&self) -> usize {
        self.n_frames
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames == 0
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.frame_len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks(self.frame_len())
    }

    /// Frames `start..end` as a new sequence with the same metadata.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_frames {
            return Err(DataError::Contract(format!(
                "frame range {start}..{end} invalid for {} frames",
                self.n_frames
            )));
        }
        let n = self.frame_len();
        Ok(Self {
            values: self.values[start * n..end * n].to_vec(),
            n_frames: end - start,
            ..self.clone_meta()
        })
    }

    /// Observed frames and the future frames that follow them.
    pub fn split_at(&self, n_in: usize) -> Result<(Self, Self)> {
        Ok((self.slice(0, n_in)?, self.slice(n_in, self.n_frames)?))
    }

    fn clone_meta(&self) -> Self {
        Self {
            values: Vec::new(),
            n_frames: self.n_frames,
            height: self.height,
            width: self.width,
            value_space: self.value_space,
            dt_minutes: self.dt_minutes,
            regime: self.regime,
            seed: self.seed,
        }
    }

    /// Quantizes reflectivity to integer pixel intensities; pixel sequences
    /// are returned unchanged.
    pub fn to_pixel(&self) -> Result<Self> {
        if self.value_space == ValueSpace::Pixel {
            return Ok(self.clone());
        }
        let values = self
            .values
            .iter()
            .map(|&v| dbz_to_pixel(v as f64).map(f32::from))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            values,
            value_space: ValueSpace::Pixel,
            ..self.clone_meta()
        })
    }

    /// `frames × h × w` tensor of the stored values.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(
            &[self.n_frames, self.height, self.width],
            self.values.clone(),
        )
        .expect("sequence values are finite and sized")
    }

    pub fn from_tensor(t: &Tensor<f32>, value_space: ValueSpace) -> Result<Self> {
        let &[n, h, w] = t.shape() else {
            return Err(DataError::Contract(format!(
                "expected frames×h×w tensor, got {:?}",
                t.shape()
            )));
        };
        Self::new(t.data().to_vec(), n, h, w, value_space)
    }
}

fn check_range(value: f64, hi: f64) -> Result<()> {
    if value.is_finite() && (0.0..=hi).contains(&value) {
        Ok(())
    } else {
        Err(DataError::Range { value, lo: 0.0, hi })
    }
}

/// `⌊255·v/70 + 0.5⌋`
pub fn dbz_to_pixel(dbz: f64) -> Result<u8> {
    check_range(dbz, DBZ_MAX)?;
    Ok((PIXEL_MAX * dbz / DBZ_MAX + 0.5).floor() as u8)
}

/// `70·p/255`
pub fn pixel_to_dbz(pixel: f64) -> Result<f64> {
    check_range(pixel, PIXEL_MAX)?;
    Ok(DBZ_MAX * pixel / PIXEL_MAX)
}

/// Pointwise maximum of three co-registered reflectivity frames.
pub fn fuse_radars(a: &[f32], b: &[f32], c: &[f32]) -> Result<Vec<f32>> {
    if a.len() != b.len() || a.len() != c.len() {
        return Err(DataError::Contract(format!(
            "radar frames differ in size: {}, {}, {}",
            a.len(),
            b.len(),
            c.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .zip(c)
        .map(|((&x, &y), &z)| x.max(y).max(z))
        .collect())
}
