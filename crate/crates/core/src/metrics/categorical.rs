use super::{same_len, MetricError, Result};
use crate::data::dbz_to_pixel;

/// Pixel-count outcomes at one threshold for one lead time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContingencyTable {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fn_: self.fn_ + other.fn_,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
        }
    }
}

/// Pixel level for a reflectivity threshold: `⌊255·τ/70 + 0.5⌋`.
pub fn pixel_threshold(tau_dbz: f64) -> Result<u8> {
    dbz_to_pixel(tau_dbz).map_err(|e| MetricError::Config(format!("threshold {tau_dbz} dBZ: {e}")))
}

/// Binarizes both frames at `tau_dbz` (a pixel counts as an event when it is
/// at or above the pixel threshold) and tallies the outcomes.
pub fn contingency(pred: &[f32], truth: &[f32], tau_dbz: f64) -> Result<ContingencyTable> {
    same_len(pred, truth)?;
    let level = pixel_threshold(tau_dbz)? as f32;
    let mut t = ContingencyTable::default();
    for (&p, &o) in pred.iter().zip(truth) {
        tally(&mut t, p >= level, o >= level);
    }
    Ok(t)
}

/// Tallies already-binarized frames.
pub fn contingency_binary(pred: &[bool], truth: &[bool]) -> Result<ContingencyTable> {
    if pred.len() != truth.len() {
        return Err(MetricError::Contract(format!(
            "binary frames differ in size: {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut t = ContingencyTable::default();
    for (&p, &o) in pred.iter().zip(truth) {
        tally(&mut t, p, o);
    }
    Ok(t)
}

fn tally(t: &mut ContingencyTable, pred: bool, obs: bool) {
    match (pred, obs) {
        (true, true) => t.tp += 1,
        (false, true) => t.fn_ += 1,
        (true, false) => t.fp += 1,
        (false, false) => t.tn += 1,
    }
}

/// False alarm ratio variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FarForm {
    /// `fp / (tp + fp)`: zero for a perfect forecast.
    #[default]
    Standard,
    /// `tp / (tp + fp)`
    Printed,
}

/// Equitable threat score variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EtsForm {
    /// `tp / (tp + fn + fp − tn)`; unbounded and may be negative.
    #[default]
    Printed,
    /// Hits corrected for random chance, in `[−1/3, 1]`.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScoreOptions {
    pub far: FarForm,
    pub ets: EtsForm,
}

/// Scores derived from one table. `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CategoricalScores {
    pub pod: Option<f64>,
    pub far: Option<f64>,
    pub csi: Option<f64>,
    pub ets: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

pub fn categorical_scores(t: &ContingencyTable, opts: ScoreOptions) -> CategoricalScores {
    let (tp, fn_, fp, tn) = (t.tp as f64, t.fn_ as f64, t.fp as f64, t.tn as f64);
    let far_num = match opts.far {
        FarForm::Standard => fp,
        FarForm::Printed => tp,
    };
    let ets = match opts.ets {
        EtsForm::Printed => ratio(tp, tp + fn_ + fp - tn),
        EtsForm::Standard => {
            let total = tp + fn_ + fp + tn;
            if total == 0.0 {
                None
            } else {
                let chance = (tp + fn_) * (tp + fp) / total;
                ratio(tp - chance, tp + fn_ + fp - chance)
            }
        }
    };
    CategoricalScores {
        pod: ratio(tp, tp + fn_),
        far: ratio(far_num, tp + fp),
        csi: ratio(tp, tp + fn_ + fp),
        ets,
    }
}
