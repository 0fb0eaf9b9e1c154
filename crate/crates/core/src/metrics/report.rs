use std::fmt::Write as _;

use rayon::prelude::*;

use super::{
    categorical_scores, contingency, mse, perceptual_distance, psnr_from_mse, ssim,
    CategoricalScores, ContingencyTable, FeatureExtractor, MetricError, Result, ScoreOptions,
    SsimConfig,
};
use crate::data::{EchoSequence, ValueSpace, PIXEL_MAX};

/// Reflectivity thresholds, dBZ.
pub const DEFAULT_TAUS: [f64; 5] = [5.0, 10.0, 20.0, 30.0, 40.0];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub taus: Vec<f64>,
    pub scores: ScoreOptions,
    pub ssim: SsimConfig,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            taus: DEFAULT_TAUS.to_vec(),
            scores: ScoreOptions::default(),
            ssim: SsimConfig::default(),
        }
    }
}

/// Image metrics at one lead time, averaged over sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadMetrics {
    pub lead_index: usize,
    pub lead_minutes: u32,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: Option<f64>,
}

/// Categorical scores for one threshold across lead times. Tables pool the
/// pixel counts of every sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSeries {
    pub tau: f64,
    pub tables: Vec<ContingencyTable>,
    pub scores: Vec<CategoricalScores>,
    /// Mean of the defined per-lead scores.
    pub mean: CategoricalScores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub sequences: usize,
    pub leads: Vec<LeadMetrics>,
    pub thresholds: Vec<ThresholdSeries>,
    /// Means of the per-lead image metrics.
    pub mean_mse: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_perceptual: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn mean_scores(scores: &[CategoricalScores]) -> CategoricalScores {
    CategoricalScores {
        pod: mean(scores.iter().filter_map(|s| s.pod)),
        far: mean(scores.iter().filter_map(|s| s.far)),
        csi: mean(scores.iter().filter_map(|s| s.csi)),
        ets: mean(scores.iter().filter_map(|s| s.ets)),
    }
}

struct SequenceStats {
    image: Vec<[f64; 4]>,
    tables: Vec<Vec<ContingencyTable>>,
}

fn sequence_stats(
    pred: &EchoSequence,
    truth: &EchoSequence,
    opts: &ReportOptions,
    extractor: Option<&(dyn FeatureExtractor + Sync)>,
) -> Result<SequenceStats> {
    let (h, w) = (truth.height(), truth.width());
    let mut image = Vec::with_capacity(truth.len());
    let mut tables = vec![Vec::with_capacity(truth.len()); opts.taus.len()];
    for (p, t) in pred.frames().zip(truth.frames()) {
        let m = mse(p, t)?;
        let d = match extractor {
            Some(e) => perceptual_distance(p, t, h, w, e)?,
            None => f64::NAN,
        };
        image.push([
            m,
            psnr_from_mse(m, PIXEL_MAX),
            ssim(p, t, h, w, &opts.ssim)?,
            d,
        ]);
        for (series, &tau) in tables.iter_mut().zip(&opts.taus) {
            series.push(contingency(p, t, tau)?);
        }
    }
    Ok(SequenceStats { image, tables })
}

/// Per-lead metrics for a batch of `(prediction, truth)` pairs in pixel
/// space. Image metrics are averaged over sequences; contingency counts are
/// pooled. Sequences are processed in parallel and reduced in input order.
pub fn batch_report(
    pairs: &[(EchoSequence, EchoSequence)],
    opts: &ReportOptions,
    extractor: Option<&(dyn FeatureExtractor + Sync)>,
) -> Result<MetricReport> {
    let Some((_, first)) = pairs.first() else {
        return Err(MetricError::Contract(
            "report needs at least one sequence".into(),
        ));
    };
    let (k, h, w, dt) = (first.len(), first.height(), first.width(), first.dt_minutes);
    for (p, t) in pairs {
        for s in [p, t] {
            if (s.len(), s.height(), s.width()) != (k, h, w) {
                return Err(MetricError::Contract(format!(
                    "sequence {}×{}×{} does not match {k}×{h}×{w}",
                    s.len(),
                    s.height(),
                    s.width()
                )));
            }
            if s.value_space != ValueSpace::Pixel {
                return Err(MetricError::Contract(
                    "metrics need pixel-space sequences".into(),
                ));
            }
        }
    }
    let stats = pairs
        .par_iter()
        .map(|(p, t)| sequence_stats(p, t, opts, extractor))
        .collect::<Result<Vec<_>>>()?;

    let n = pairs.len() as f64;
    let leads: Vec<LeadMetrics> = (0..k)
        .map(|i| {
            let avg = |j: usize| stats.iter().map(|s| s.image[i][j]).sum::<f64>() / n;
            LeadMetrics {
                lead_index: i + 1,
                lead_minutes: (i as u32 + 1) * dt as u32,
                mse: avg(0),
                psnr: avg(1),
                ssim: avg(2),
                perceptual: extractor.map(|_| avg(3)),
            }
        })
        .collect();
    let thresholds = opts
        .taus
        .iter()
        .enumerate()
        .map(|(ti, &tau)| {
            let tables: Vec<ContingencyTable> = (0..k)
                .map(|i| {
                    stats.iter().fold(ContingencyTable::default(), |acc, s| {
                        acc.merge(&s.tables[ti][i])
                    })
                })
                .collect();
            let scores: Vec<CategoricalScores> = tables
                .iter()
                .map(|t| categorical_scores(t, opts.scores))
                .collect();
            ThresholdSeries {
                tau,
                mean: mean_scores(&scores),
                tables,
                scores,
            }
        })
        .collect();
    let over_leads = |f: fn(&LeadMetrics) -> f64| mean(leads.iter().map(f)).unwrap_or(f64::NAN);
    Ok(MetricReport {
        sequences: pairs.len(),
        mean_mse: over_leads(|l| l.mse),
        mean_psnr: over_leads(|l| l.psnr),
        mean_ssim: over_leads(|l| l.ssim),
        mean_perceptual: extractor.map(|_| over_leads(|l| l.perceptual.unwrap_or(f64::NAN))),
        leads,
        thresholds,
    })
}

/// Report for a single sequence.
pub fn timewise_report(
    pred: &EchoSequence,
    truth: &EchoSequence,
    opts: &ReportOptions,
    extractor: Option<&(dyn FeatureExtractor + Sync)>,
) -> Result<MetricReport> {
    if pred.len() != truth.len() {
        return Err(MetricError::Contract(format!(
            "{} predicted frames for {} observed",
            pred.len(),
            truth.len()
        )));
    }
    batch_report(&[(pred.clone(), truth.clone())], opts, extractor)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v}"))
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "scope,lead_index,lead_minutes,tau,metric,value";

    /// One row per lead time × threshold × metric, then the means over lead
    /// times with scope `mean_over_leads`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        let mut row =
            |scope: &str, lead: Option<&LeadMetrics>, tau: Option<f64>, metric: &str, v: String| {
                let (li, lm) = lead.map_or((String::new(), String::new()), |l| {
                    (l.lead_index.to_string(), l.lead_minutes.to_string())
                });
                let tau = tau.map_or_else(String::new, |t| t.to_string());
                writeln!(out, "{scope},{li},{lm},{tau},{metric},{v}").expect("write to string");
            };
        for l in &self.leads {
            row("lead", Some(l), None, "mse", l.mse.to_string());
            row("lead", Some(l), None, "psnr", l.psnr.to_string());
            row("lead", Some(l), None, "ssim", l.ssim.to_string());
            if let Some(p) = l.perceptual {
                row("lead", Some(l), None, "perceptual", p.to_string());
            }
        }
        for t in &self.thresholds {
            for (l, s) in self.leads.iter().zip(&t.scores) {
                for (name, v) in [
                    ("pod", s.pod),
                    ("far", s.far),
                    ("csi", s.csi),
                    ("ets", s.ets),
                ] {
                    row("lead", Some(l), Some(t.tau), name, fmt_opt(v));
                }
            }
        }
        row(
            "mean_over_leads",
            None,
            None,
            "mse",
            self.mean_mse.to_string(),
        );
        row(
            "mean_over_leads",
            None,
            None,
            "psnr",
            self.mean_psnr.to_string(),
        );
        row(
            "mean_over_leads",
            None,
            None,
            "ssim",
            self.mean_ssim.to_string(),
        );
        if let Some(p) = self.mean_perceptual {
            row("mean_over_leads", None, None, "perceptual", p.to_string());
        }
        for t in &self.thresholds {
            let s = &t.mean;
            for (name, v) in [
                ("pod", s.pod),
                ("far", s.far),
                ("csi", s.csi),
                ("ets", s.ets),
            ] {
                row("mean_over_leads", None, Some(t.tau), name, fmt_opt(v));
            }
        }
        out
    }

    /// Per-lead curves, one row per lead time with lead minutes first.
    pub fn curves_csv(&self) -> String {
        let mut header = String::from("lead_minutes,mse,psnr,ssim,perceptual");
        for t in &self.thresholds {
            for name in ["pod", "far", "csi", "ets"] {
                write!(header, ",{name}_tau{}", t.tau).expect("write to string");
            }
        }
        let mut out = header + "\n";
        for (i, l) in self.leads.iter().enumerate() {
            write!(
                out,
                "{},{},{},{},{}",
                l.lead_minutes,
                l.mse,
                l.psnr,
                l.ssim,
                l.perceptual.map_or_else(String::new, |p| p.to_string())
            )
            .expect("write to string");
            for t in &self.thresholds {
                let s = &t.scores[i];
                for v in [s.pod, s.far, s.csi, s.ets] {
                    write!(out, ",{}", v.map_or_else(String::new, |v| v.to_string()))
                        .expect("write to string");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Threshold rows with mean POD/FAR/CSI/ETS over lead times, followed by
    /// the mean image metrics.
    pub fn text_table(&self) -> String {
        let mut out = format!(
            "{} sequence(s); image metrics averaged over sequences, contingency counts pooled; \
             columns are means over {} lead time(s)\n",
            self.sequences,
            self.leads.len()
        );
        writeln!(
            out,
            "{:>10} {:>8} {:>8} {:>8} {:>8}",
            "tau(dBZ)", "POD", "FAR", "CSI", "ETS"
        )
        .expect("write to string");
        for t in &self.thresholds {
            let s = &t.mean;
            writeln!(
                out,
                "{:>10} {:>8} {:>8} {:>8} {:>8}",
                t.tau,
                fmt_cell(s.pod),
                fmt_cell(s.far),
                fmt_cell(s.csi),
                fmt_cell(s.ets)
            )
            .expect("write to string");
        }
        writeln!(
            out,
            "{:>10} {:>8} {:>8} {:>8} {:>10}",
            "", "MSE", "PSNR", "SSIM", "perceptual"
        )
        .expect("write to string");
        writeln!(
            out,
            "{:>10} {:>8.3} {:>8.3} {:>8.4} {:>10}",
            "mean",
            self.mean_mse,
            self.mean_psnr,
            self.mean_ssim,
            fmt_cell(self.mean_perceptual)
        )
        .expect("write to string");
        out
    }
}
