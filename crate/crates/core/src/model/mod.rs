//! The TempEE network: patch embedding, temporal and spatial encoders,
//! temporal-spatial rectification, the MSTA decoder and a one-step head that
//! emits every future frame in a single pass.
//!
//! Tape-level code keeps one sample at a time in channel-last layout,
//! `(time, gh, gw, d)` for temporal volumes and `(gh, gw, c)` for folded
//! ones. [`FeatureVolume`] is the channel-first public view.

mod checkpoint;
mod network;
mod params;
mod volume;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use network::{Prompts, TempEE};
pub use params::{BoundParams, ParamStore};
pub use volume::{rectify, unrectify, FeatureVolume, VolumeSpace};

use crate::attention::AttentionConfig;
use crate::config::{ConfigError, KvDocument};
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("malformed checkpoint at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ConfigError> for ModelError {
    fn from(e: ConfigError) -> Self {
        ModelError::Config(e.to_string())
    }
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// How temporal attention groups tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemporalMode {
    /// Each grid cell attends over its own `n` time steps.
    #[default]
    PerPosition,
    /// All `n·gh·gw` tokens attend to each other.
    Joint,
}

impl fmt::Display for TemporalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemporalMode::PerPosition => "per-position",
            TemporalMode::Joint => "joint",
        })
    }
}

impl FromStr for TemporalMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "per-position" => Ok(TemporalMode::PerPosition),
            "joint" => Ok(TemporalMode::Joint),
            other => Err(format!("unknown temporal mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Observed frames.
    pub n_in: usize,
    /// Predicted frames.
    pub k_out: usize,
    /// Frame edge in pixels; frames are square.
    pub image_edge: usize,
    /// Patch edge.
    pub patch: usize,
    pub d_model: usize,
    pub te_blocks: usize,
    pub se_blocks: usize,
    pub tsd_blocks: usize,
    /// Heads, MSTA window and pooling. `residual` is ignored: every block
    /// adds its own skip connection.
    pub attention: AttentionConfig,
    pub temporal_mode: TemporalMode,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_in: 20,
            k_out: 20,
            image_edge: 192,
            patch: 12,
            d_model: 64,
            te_blocks: 2,
            se_blocks: 2,
            tsd_blocks: 2,
            attention: AttentionConfig::default(),
            temporal_mode: TemporalMode::PerPosition,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Token grid edge.
    pub fn grid(&self) -> usize {
        self.image_edge / self.patch.max(1)
    }

    /// Channels of the folded encoder volume, `d_model · n_in`.
    pub fn folded_channels(&self) -> usize {
        self.d_model * self.n_in
    }

    /// Per-frame prompt features: the patch pixels plus a visibility flag.
    pub fn prompt_channels(&self) -> usize {
        self.patch * self.patch + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.n_in == 0 || self.k_out == 0 {
            return bad(format!(
                "frame counts must be positive, got n_in={} k_out={}",
                self.n_in, self.k_out
            ));
        }
        if self.patch == 0 || self.image_edge == 0 || self.image_edge % self.patch != 0 {
            return bad(format!(
                "image edge {} is not divisible by patch {}",
                self.image_edge, self.patch
            ));
        }
        if self.d_model == 0 {
            return bad("d_model must be positive".into());
        }
        if !(self.ln_eps > 0.0) {
            return bad(format!("ln_eps must be positive, got {}", self.ln_eps));
        }
        let att = &self.attention;
        att.validate()?;
        if self.d_model % att.heads != 0 || self.folded_channels() % att.heads != 0 {
            return bad(format!(
                "{} heads do not divide d_model={} and the folded width {}",
                att.heads,
                self.d_model,
                self.folded_channels()
            ));
        }
        let grid = self.grid();
        if self.tsd_blocks > 0 {
            att.check_map(grid, grid).map_err(|e| {
                ModelError::Config(format!("token grid {grid}×{grid} does not suit MSTA: {e}"))
            })?;
        }
        Ok(())
    }

    /// `key = value` lines, readable by [`ModelConfig::from_text`].
    pub fn to_text(&self) -> String {
        let a = &self.attention;
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        line("n_in", self.n_in.to_string());
        line("k_out", self.k_out.to_string());
        line("image_edge", self.image_edge.to_string());
        line("patch", self.patch.to_string());
        line("d_model", self.d_model.to_string());
        line("te_blocks", self.te_blocks.to_string());
        line("se_blocks", self.se_blocks.to_string());
        line("tsd_blocks", self.tsd_blocks.to_string());
        line("heads", a.heads.to_string());
        line("g", a.g.to_string());
        line("g_prime", a.g_prime.to_string());
        // `{:?}` prints the shortest string that parses back to the same f64
        line("alpha", format!("{:?}", a.alpha));
        line("beta", format!("{:?}", a.beta));
        if let Some(d) = a.d_scale {
            line("d_scale", d.to_string());
        }
        line("temporal_mode", self.temporal_mode.to_string());
        line("ln_eps", format!("{:?}", self.ln_eps));
        s
    }

    /// Parses the unnamed section of `text`. Missing keys take defaults;
    /// unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let doc = KvDocument::parse(text)?;
        doc.check_sections(&[""])?;
        let mut sec = doc.section("");
        let cfg = Self::from_section(&mut sec)?;
        sec.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads model keys from `sec`, leaving other keys for the caller.
    pub fn from_section(sec: &mut crate::config::Section<'_>) -> Result<Self> {
        let d = Self::default();
        let da = &d.attention;
        let attention = AttentionConfig {
            heads: sec.get_or("heads", da.heads)?,
            g: sec.get_or("g", da.g)?,
            g_prime: sec.get_or("g_prime", da.g_prime)?,
            alpha: sec.get_or("alpha", da.alpha)?,
            beta: sec.get_or("beta", da.beta)?,
            d_scale: sec.get("d_scale")?,
            residual: true,
        };
        Ok(Self {
            n_in: sec.get_or("n_in", d.n_in)?,
            k_out: sec.get_or("k_out", d.k_out)?,
            image_edge: sec.get_or("image_edge", d.image_edge)?,
            patch: sec.get_or("patch", d.patch)?,
            d_model: sec.get_or("d_model", d.d_model)?,
            te_blocks: sec.get_or("te_blocks", d.te_blocks)?,
            se_blocks: sec.get_or("se_blocks", d.se_blocks)?,
            tsd_blocks: sec.get_or("tsd_blocks", d.tsd_blocks)?,
            attention,
            temporal_mode: sec.get_or("temporal_mode", d.temporal_mode)?,
            ln_eps: sec.get_or("ln_eps", d.ln_eps)?,
        })
    }
}
