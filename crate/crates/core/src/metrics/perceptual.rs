use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MetricError, Result};
use crate::tensor::kernels::{conv, relu};
use crate::tensor::{ConvSpec, Tensor};

/// One layer of features, `channels × h × w`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    /// Scales each spatial position to unit length across channels.
    fn channel_normalized(&self) -> Vec<f64> {
        let plane = self.h * self.w;
        let mut out: Vec<f64> = self.data.iter().map(|&v| v as f64).collect();
        for p in 0..plane {
            let norm = (0..self.channels)
                .map(|c| out[c * plane + p].powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = 1.0 / (norm + 1e-10);
            for c in 0..self.channels {
                out[c * plane + p] *= scale;
            }
        }
        out
    }
}

/// Source of layered features for [`perceptual_distance`].
pub trait FeatureExtractor {
    fn features(&self, frame: &[f32], h: usize, w: usize) -> Result<Vec<FeatureMap>>;
    /// One non-negative weight per layer.
    fn weights(&self) -> &[f64];
}

/// Fixed random 3×3 convolutions with ReLU: full resolution with 8
/// channels, then two stride-2 layers with 16 and 32 channels. Input pixels
/// are scaled to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct RandomConvPyramid {
    kernels: Vec<Tensor<f32>>,
    weights: Vec<f64>,
}

impl RandomConvPyramid {
    pub const DEFAULT_SEED: u64 = 0x5eed_1e7e;

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [1usize, 8, 16, 32];
        let kernels = widths
            .windows(2)
            .map(|io| {
                let fan_in = io[0] * 9;
                Tensor::randn(
                    &[io[1], io[0], 3, 3],
                    (2.0 / fan_in as f64).sqrt(),
                    &mut rng,
                )
            })
            .collect();
        Self {
            kernels,
            weights: vec![1.0; 3],
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.kernels.len() || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(MetricError::Config(format!(
                "need {} non-negative layer weights, got {weights:?}",
                self.kernels.len()
            )));
        }
        self.weights = weights;
        Ok(self)
    }
}

impl Default for RandomConvPyramid {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED)
    }
}

impl FeatureExtractor for RandomConvPyramid {
    fn features(&self, frame: &[f32], h: usize, w: usize) -> Result<Vec<FeatureMap>> {
        let scaled: Vec<f32> = frame.iter().map(|v| v / 255.0).collect();
        let mut x = Tensor::from_vec(&[1, h, w], scaled)
            .map_err(|e| MetricError::Contract(format!("feature input: {e}")))?;
        let mut maps = Vec::with_capacity(self.kernels.len());
        for (i, k) in self.kernels.iter().enumerate() {
            let spec = ConvSpec {
                dims: 2,
                stride: if i == 0 { 1 } else { 2 },
                padding: 1,
            };
            x = relu(&conv(&x, k, None, spec).map_err(|e| MetricError::Contract(e.to_string()))?);
            let s = x.shape();
            maps.push(FeatureMap {
                channels: s[0],
                h: s[1],
                w: s[2],
                data: x.data().to_vec(),
            });
        }
        Ok(maps)
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `Σᵢ wᵢ·‖φᵢ(x) − φᵢ(y)‖₂ / √(hᵢ·wᵢ)` over channel-normalized feature maps.
/// Each term is a norm of a difference, so the sum obeys the triangle
/// inequality.
pub fn perceptual_distance<E: FeatureExtractor + ?Sized>(
    x: &[f32],
    y: &[f32],
    h: usize,
    w: usize,
    extractor: &E,
) -> Result<f64> {
    super::same_len(x, y)?;
    let fx = extractor.features(x, h, w)?;
    let fy = extractor.features(y, h, w)?;
    let weights = extractor.weights();
    if fx.len() != fy.len() || fx.len() != weights.len() {
        return Err(MetricError::Contract(format!(
            "extractor returned {} and {} layers for {} weights",
            fx.len(),
            fy.len(),
            weights.len()
        )));
    }
    let mut total = 0.0;
    for ((a, b), &wt) in fx.iter().zip(&fy).zip(weights) {
        if (a.channels, a.h, a.w) != (b.channels, b.h, b.w)
            || a.data.len() != a.channels * a.h * a.w
        {
            return Err(MetricError::Contract(format!(
                "feature layer shapes differ: {}×{}×{} vs {}×{}×{}",
                a.channels, a.h, a.w, b.channels, b.h, b.w
            )));
        }
        if wt == 0.0 {
            continue;
        }
        let (na, nb) = (a.channel_normalized(), b.channel_normalized());
        let sq: f64 = na.iter().zip(&nb).map(|(p, q)| (p - q).powi(2)).sum();
        total += wt * (sq / (a.h * a.w) as f64).sqrt();
    }
    Ok(total)
}
