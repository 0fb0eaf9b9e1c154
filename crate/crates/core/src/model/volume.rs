use super::{ModelError, Result};
use crate::tensor::{kernels, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeSpace {
    /// `(channels, time, h, w)`
    Temporal,
    /// `(channels, h, w)` with no time axis.
    Spatial,
    /// `(channels·time, h, w)`; channel `c·time + t` holds channel `c` of
    /// step `t`.
    Rectified { time: usize },
}

/// Channel-first feature map tagged with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume<T = f32> {
    pub values: Tensor<T>,
    pub space: VolumeSpace,
}

impl<T: Element> FeatureVolume<T> {
    pub fn new(values: Tensor<T>, space: VolumeSpace) -> Result<Self> {
        let s = values.shape();
        let ok = match space {
            VolumeSpace::Temporal => s.len() == 4,
            VolumeSpace::Spatial => s.len() == 3,
            VolumeSpace::Rectified { time } => s.len() == 3 && time > 0 && s[0] % time == 0,
        };
        if !ok {
            return Err(ModelError::Contract(format!(
                "shape {s:?} does not match a {space:?} volume"
            )));
        }
        Ok(Self { values, space })
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    /// Time steps, or 1 for a spatial volume.
    pub fn time(&self) -> usize {
        match self.space {
            VolumeSpace::Temporal => self.values.shape()[1],
            VolumeSpace::Spatial => 1,
            VolumeSpace::Rectified { time } => time,
        }
    }

    /// Grid extents `(h, w)`.
    pub fn grid(&self) -> (usize, usize) {
        let s = self.values.shape();
        (s[s.len() - 2], s[s.len() - 1])
    }

    /// Per-step channel count.
    pub fn base_channels(&self) -> usize {
        match self.space {
            VolumeSpace::Rectified { time } => self.channels() / time,
            _ => self.channels(),
        }
    }

    /// Channel-last data: `(t, h, w, c)` for temporal, `(h, w, c)` otherwise.
    pub(crate) fn to_channel_last(&self) -> Result<Tensor<T>> {
        let perm: &[usize] = match self.space {
            VolumeSpace::Temporal => &[1, 2, 3, 0],
            _ => &[1, 2, 0],
        };
        Ok(kernels::permute(&self.values, perm)?)
    }

    pub(crate) fn from_channel_last(t: &Tensor<T>, space: VolumeSpace) -> Result<Self> {
        let perm: &[usize] = match space {
            VolumeSpace::Temporal => &[3, 0, 1, 2],
            _ => &[2, 0, 1],
        };
        Self::new(kernels::permute(t, perm)?, space)
    }
}

/// Folds time into channels, `(c, t, h, w)` → `(c·t, h, w)`.
pub fn rectify<T: Element>(x: &FeatureVolume<T>) -> Result<FeatureVolume<T>> {
    if x.space != VolumeSpace::Temporal {
        return Err(ModelError::Contract(format!(
            "rectify needs a temporal volume, got {:?}",
            x.space
        )));
    }
    let &[c, t, h, w] = x.values.shape() else {
        unreachable!("temporal volumes are rank 4")
    };
    FeatureVolume::new(
        x.values.reshape(&[c * t, h, w])?,
        VolumeSpace::Rectified { time: t },
    )
}

/// Inverse of [`rectify`].
pub fn unrectify<T: Element>(x: &FeatureVolume<T>) -> Result<FeatureVolume<T>> {
    let VolumeSpace::Rectified { time } = x.space else {
        return Err(ModelError::Contract(format!(
            "unrectify needs a rectified volume, got {:?}",
            x.space
        )));
    };
    let (h, w) = x.grid();
    FeatureVolume::new(
        x.values.reshape(&[x.channels() / time, time, h, w])?,
        VolumeSpace::Temporal,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor<f32> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn rectify_round_trip() {
        let x = FeatureVolume::new(ramp(&[2, 3, 4, 4]), VolumeSpace::Temporal).unwrap();
        let r = rectify(&x).unwrap();
        assert_eq!(r.values.shape(), &[6, 4, 4]);
        assert_eq!(r.space, VolumeSpace::Rectified { time: 3 });
        assert_eq!(unrectify(&r).unwrap(), x);
        assert!(rectify(&r).is_err());
        assert!(unrectify(&x).is_err());
    }

    #[test]
    fn single_step_is_a_squeeze() {
        let x = FeatureVolume::new(ramp(&[5, 1, 2, 3]), VolumeSpace::Temporal).unwrap();
        let r = rectify(&x).unwrap();
        assert_eq!(r.values.shape(), &[5, 2, 3]);
        assert_eq!(r.values.data(), x.values.data());
    }

    #[test]
    fn folded_channel_index() {
        let (c, t, h, w) = (3, 4, 2, 5);
        let x = FeatureVolume::new(ramp(&[c, t, h, w]), VolumeSpace::Temporal).unwrap();
        let r = rectify(&x).unwrap();
        for (ci, ti, i, j) in [(1, 2, 1, 3), (0, 0, 0, 0), (2, 3, 1, 4)] {
            assert_eq!(
                r.values.at(&[ci * t + ti, i, j]),
                x.values.at(&[ci, ti, i, j])
            );
        }
    }

    #[test]
    fn channel_last_round_trip() {
        let x = FeatureVolume::new(ramp(&[2, 3, 4, 5]), VolumeSpace::Temporal).unwrap();
        let cl = x.to_channel_last().unwrap();
        assert_eq!(cl.shape(), &[3, 4, 5, 2]);
        assert_eq!(cl.at(&[1, 2, 3, 1]), x.values.at(&[1, 1, 2, 3]));
        assert_eq!(
            FeatureVolume::from_channel_last(&cl, VolumeSpace::Temporal).unwrap(),
            x
        );
        assert!(FeatureVolume::new(ramp(&[5, 2, 2]), VolumeSpace::Rectified { time: 2 }).is_err());
    }
}
