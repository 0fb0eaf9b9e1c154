use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, EchoSequence, Regime, Result, ValueSpace, DBZ_MAX};

/// One Gaussian echo cell and its motion. Positions are `(row, col)` in
/// pixels, rates are per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    /// Position at the birth frame.
    pub center: (f64, f64),
    pub velocity: (f64, f64),
    /// Rotation of the velocity vector, radians per frame.
    pub turn_rate: f64,
    pub peak: f64,
    /// Gaussian standard deviation.
    pub radius: f64,
    pub radius_rate: f64,
    pub peak_rate: f64,
    pub birth: usize,
    /// First frame in which the blob is gone.
    pub death: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobState {
    pub center: (f64, f64),
    pub radius: f64,
    pub peak: f64,
}

impl BlobSpec {
    pub fn alive_at(&self, t: usize) -> bool {
        (self.birth..self.death).contains(&t)
    }

    pub fn state_at(&self, t: usize) -> Option<BlobState> {
        if !self.alive_at(t) {
            return None;
        }
        let age = t - self.birth;
        let (mut y, mut x) = self.center;
        for s in 0..age {
            let (vy, vx) = self.velocity_at(s);
            y += vy;
            x += vx;
        }
        let a = age as f64;
        Some(BlobState {
            center: (y, x),
            radius: (self.radius + self.radius_rate * a).max(0.5 * self.radius),
            peak: (self.peak + self.peak_rate * a).clamp(1.0, DBZ_MAX),
        })
    }

    /// Velocity applied on the step from age `s` to `s + 1`.
    fn velocity_at(&self, s: usize) -> (f64, f64) {
        let (sin, cos) = (self.turn_rate * s as f64).sin_cos();
        let (vy, vx) = self.velocity;
        (vy * cos + vx * sin, vx * cos - vy * sin)
    }

    fn max_radius(&self) -> f64 {
        let life = (self.death - self.birth).saturating_sub(1) as f64;
        self.radius.max(self.radius + self.radius_rate * life)
    }
}

/// Max-composites the blobs into `frames × h × w` reflectivity values.
pub fn render_blobs(blobs: &[BlobSpec], frames: usize, h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0f32; frames * h * w];
    for (t, frame) in out.chunks_mut(h * w).enumerate() {
        for blob in blobs {
            let Some(st) = blob.state_at(t) else { continue };
            let reach = 4.0 * st.radius;
            let (cy, cx) = st.center;
            let r0 = (cy - reach).floor().max(0.0) as usize;
            let r1 = ((cy + reach).ceil().max(-1.0) + 1.0).min(h as f64) as usize;
            let c0 = (cx - reach).floor().max(0.0) as usize;
            let c1 = ((cx + reach).ceil().max(-1.0) + 1.0).min(w as f64) as usize;
            let inv = 1.0 / (2.0 * st.radius * st.radius);
            for r in r0..r1 {
                let dy = r as f64 - cy;
                for c in c0..c1 {
                    let dx = c as f64 - cx;
                    let v = (st.peak * (-(dy * dy + dx * dx) * inv).exp()) as f32;
                    let px = &mut frame[r * w + c];
                    *px = px.max(v);
                }
            }
        }
    }
    for v in &mut out {
        *v = v.clamp(0.0, DBZ_MAX as f32);
    }
    out
}

/// Smallest per-frame turn for nonstationary cells: enough for the heading
/// to swing past 20° over the sequence, and never below 2°.
fn min_turn_rate(frames: usize) -> f64 {
    let spread = if frames > 2 {
        20f64 / (frames - 2) as f64
    } else {
        20.0
    };
    spread.max(2.0).to_radians()
}

struct Canvas {
    frames: usize,
    h: f64,
    w: f64,
    edge: f64,
}

impl Canvas {
    fn max_speed(&self) -> f64 {
        0.04 * self.edge
    }

    fn stays_inside(&self, blob: &BlobSpec) -> bool {
        let m = 2.5 * blob.max_radius();
        (blob.birth..blob.death).all(|t| {
            let (y, x) = blob.state_at(t).expect("alive").center;
            y >= m && y <= self.h - 1.0 - m && x >= m && x <= self.w - 1.0 - m
        })
    }
}

fn base_blob(rng: &mut ChaCha8Rng, canvas: &Canvas, dense: bool) -> BlobSpec {
    let (lo, hi) = if dense {
        (1.0 / 28.0, 1.0 / 14.0)
    } else {
        (1.0 / 20.0, 1.0 / 10.0)
    };
    BlobSpec {
        center: (0.0, 0.0),
        velocity: (0.0, 0.0),
        turn_rate: 0.0,
        peak: rng.random_range(25.0..65.0),
        radius: canvas.edge * rng.random_range(lo..hi),
        radius_rate: 0.0,
        peak_rate: 0.0,
        birth: 0,
        death: canvas.frames,
    }
}

/// Constant-velocity cell whose whole path keeps a 2.5σ margin.
fn stationary_blob(rng: &mut ChaCha8Rng, canvas: &Canvas, dense: bool) -> BlobSpec {
    let mut blob = base_blob(rng, canvas, dense);
    let m = 2.5 * blob.radius;
    let steps = (canvas.frames - 1).max(1) as f64;
    let (room_y, room_x) = (canvas.h - 1.0 - 2.0 * m, canvas.w - 1.0 - 2.0 * m);
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let (sin, cos) = heading.sin_cos();
    let limit = (room_y / (steps * sin.abs()))
        .min(room_x / (steps * cos.abs()))
        .min(canvas.max_speed());
    let speed = limit * rng.random_range(0.3..0.9);
    let (vy, vx) = (speed * sin, speed * cos);
    let span = |v: f64, size: f64| {
        let lo = m + (-v * steps).max(0.0);
        let hi = size - 1.0 - m - (v * steps).max(0.0);
        (lo, hi.max(lo))
    };
    let (ylo, yhi) = span(vy, canvas.h);
    let (xlo, xhi) = span(vx, canvas.w);
    blob.center = (
        ylo + (yhi - ylo) * rng.random::<f64>(),
        xlo + (xhi - xlo) * rng.random::<f64>(),
    );
    blob.velocity = (vy, vx);
    blob
}

/// Turning, growing or decaying cell that stays inside the frame for the
/// whole sequence.
fn turning_blob(rng: &mut ChaCha8Rng, canvas: &Canvas, dense: bool) -> BlobSpec {
    let mut blob = base_blob(rng, canvas, dense);
    let omega = min_turn_rate(canvas.frames) * rng.random_range(1.0..2.0);
    blob.turn_rate = if rng.random_bool(0.5) { omega } else { -omega };
    blob.radius_rate = blob.radius * rng.random_range(-0.02..0.02);
    blob.peak_rate = rng.random_range(-0.4..0.4);
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let mut speed = canvas.max_speed() * rng.random_range(0.3..0.9);
    loop {
        let m = 2.5 * blob.max_radius();
        blob.center = (
            rng.random_range(m..(canvas.h - 1.0 - m).max(m + 1e-9)),
            rng.random_range(m..(canvas.w - 1.0 - m).max(m + 1e-9)),
        );
        blob.velocity = (speed * heading.sin(), speed * heading.cos());
        if canvas.stays_inside(&blob) || speed < 1e-3 {
            return blob;
        }
        speed *= 0.95;
    }
}

/// Cell that appears and vanishes mid-sequence; may drift off-frame.
fn transient_blob(rng: &mut ChaCha8Rng, canvas: &Canvas, dense: bool) -> BlobSpec {
    let mut blob = base_blob(rng, canvas, dense);
    let f = canvas.frames;
    blob.birth = rng.random_range(1..(f / 2).max(2));
    blob.death = rng.random_range((blob.birth + 2).min(f)..=f);
    blob.center = (
        rng.random_range(0.0..canvas.h - 1.0),
        rng.random_range(0.0..canvas.w - 1.0),
    );
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = canvas.max_speed() * rng.random_range(0.3..0.9);
    blob.velocity = (speed * heading.sin(), speed * heading.cos());
    blob.turn_rate = min_turn_rate(f) * rng.random_range(-2.0..2.0);
    blob.peak_rate = rng.random_range(-0.4..0.4);
    blob
}

/// The cell list behind [`gen_synthetic`]. Persistent cells come first and
/// live for the whole sequence.
pub fn synth_tracks(
    regime: Regime,
    frames: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Vec<BlobSpec>> {
    if h < 32 || w < 32 {
        return Err(DataError::Config(format!(
            "synthetic frames must be at least 32×32, got {h}×{w}"
        )));
    }
    if frames == 0 {
        return Err(DataError::Config(
            "sequence needs at least one frame".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let canvas = Canvas {
        frames,
        h: h as f64,
        w: w as f64,
        edge: h.min(w) as f64,
    };
    let dense = regime.is_dense();
    let count = if dense {
        rng.random_range(8..=16)
    } else {
        rng.random_range(1..=3)
    };
    let mut blobs = Vec::with_capacity(count);
    if regime.is_stationary() {
        for _ in 0..count {
            blobs.push(stationary_blob(&mut rng, &canvas, dense));
        }
    } else {
        let transients = if dense {
            count / 4
        } else {
            usize::from(count > 1)
        };
        let transients = if frames >= 3 { transients } else { 0 };
        for _ in 0..count - transients {
            blobs.push(turning_blob(&mut rng, &canvas, dense));
        }
        for _ in 0..transients {
            blobs.push(transient_blob(&mut rng, &canvas, dense));
        }
    }
    Ok(blobs)
}

/// Renders one synthetic reflectivity sequence of `n + k` frames.
pub fn gen_synthetic(
    regime: Regime,
    n: usize,
    k: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<EchoSequence> {
    let frames = n + k;
    let blobs = synth_tracks(regime, frames, h, w, seed)?;
    let values = render_blobs(&blobs, frames, h, w);
    let mut seq = EchoSequence::new(values, frames, h, w, ValueSpace::Dbz)?.with_seed(seed);
    seq.regime = Some(regime);
    Ok(seq)
}
