//! Image-quality metrics (MSE, PSNR, SSIM, perceptual distance) and
//! categorical verification scores, plus per-lead-time reports.
//!
//! Inputs are flat row-major pixel buffers in `[0, 255]`.

mod categorical;
mod perceptual;
mod report;

pub use categorical::{
    categorical_scores, contingency, contingency_binary, pixel_threshold, CategoricalScores,
    ContingencyTable, EtsForm, FarForm, ScoreOptions,
};
pub use perceptual::{perceptual_distance, FeatureExtractor, FeatureMap, RandomConvPyramid};
pub use report::{
    batch_report, timewise_report, LeadMetrics, MetricReport, ReportOptions, ThresholdSeries,
    DEFAULT_TAUS,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("{0}")]
    Contract(String),
    #[error("invalid metric configuration: {0}")]
    Config(String),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

fn same_len(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(MetricError::Contract(format!(
            "inputs must be non-empty and equally sized, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Mean squared error over every frame and pixel.
pub fn mse(pred: &[f32], truth: &[f32]) -> Result<f64> {
    same_len(pred, truth)?;
    let sse: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
        .sum();
    Ok(sse / pred.len() as f64)
}

/// `10·log10(max²/mse)`; infinite when the inputs are identical.
pub fn psnr_from_mse(mse: f64, max_i: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_i * max_i / mse).log10()
    }
}

pub fn psnr(pred: &[f32], truth: &[f32], max_i: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, truth)?, max_i))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SsimWindow {
    /// Square windows of the given edge at stride 1, scores averaged.
    Sliding(usize),
    /// One window covering the whole frame.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub c1: f64,
    pub c2: f64,
    pub window: SsimWindow,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            c1: (0.01f64 * 255.0).powi(2),
            c2: (0.03f64 * 255.0).powi(2),
            window: SsimWindow::Sliding(8),
        }
    }
}

/// `m` holds the sums of x, y, x², y² and xy over `n` pixels.
fn ssim_from_moments(n: f64, m: [f64; 5], c1: f64, c2: f64) -> f64 {
    let [sx, sy, sxx, syy, sxy] = m;
    let (mx, my) = (sx / n, sy / n);
    let vx = (sxx / n - mx * mx).max(0.0);
    let vy = (syy / n - my * my).max(0.0);
    let cov = sxy / n - mx * my;
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Structural similarity of two `h × w` frames with population
/// (1/N) window statistics.
pub fn ssim(x: &[f32], y: &[f32], h: usize, w: usize, cfg: &SsimConfig) -> Result<f64> {
    same_len(x, y)?;
    if x.len() != h * w {
        return Err(MetricError::Contract(format!(
            "{} pixels do not form a {h}×{w} frame",
            x.len()
        )));
    }
    let win = match cfg.window {
        SsimWindow::Global => {
            let mut m = [0f64; 5];
            for (&a, &b) in x.iter().zip(y) {
                let (a, b) = (a as f64, b as f64);
                m[0] += a;
                m[1] += b;
                m[2] += a * a;
                m[3] += b * b;
                m[4] += a * b;
            }
            return Ok(ssim_from_moments((h * w) as f64, m, cfg.c1, cfg.c2));
        }
        SsimWindow::Sliding(win) => win,
    };
    if win == 0 || win > h || win > w {
        return Err(MetricError::Config(format!(
            "ssim window {win} does not fit a {h}×{w} frame"
        )));
    }
    // summed-area tables of the five moments, (h+1)×(w+1)
    let stride = w + 1;
    let mut tables = vec![[0f64; 5]; (h + 1) * stride];
    for r in 0..h {
        let mut row = [0f64; 5];
        for c in 0..w {
            let (a, b) = (x[r * w + c] as f64, y[r * w + c] as f64);
            for (acc, v) in row.iter_mut().zip([a, b, a * a, b * b, a * b]) {
                *acc += v;
            }
            let above = tables[r * stride + c + 1];
            let cell = &mut tables[(r + 1) * stride + c + 1];
            for i in 0..5 {
                cell[i] = above[i] + row[i];
            }
        }
    }
    let n = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - win {
        for c in 0..=w - win {
            let at = |rr: usize, cc: usize| tables[rr * stride + cc];
            let (a, b, d, e) = (
                at(r + win, c + win),
                at(r, c + win),
                at(r + win, c),
                at(r, c),
            );
            let m = std::array::from_fn(|i| a[i] - b[i] - d[i] + e[i]);
            total += ssim_from_moments(n, m, cfg.c1, cfg.c2);
            count += 1;
        }
    }
    Ok(total / count as f64)
}
