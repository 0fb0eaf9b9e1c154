use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::early::{run_epochs, DriverSummary, EarlyStopping, EpochResult, DEFAULT_PATIENCE};
use super::optim::{AdamW, AdamWConfig};
use super::schedule::LrSchedule;
use super::{Result, TrainError};
use crate::config::Section;
use crate::data::{EchoSequence, ValueSpace, PIXEL_MAX};
use crate::metrics;
use crate::model::{write_checkpoint, Prompts, TempEE};
use crate::sampling::{sample_mask, PromptMask, RssSchedule, SampleMode};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_max: f64,
    /// Warmup length as a fraction of all updates.
    pub warmup_fraction: f64,
    pub adamw: AdamWConfig,
    pub patience: usize,
    pub rss: RssSchedule,
    /// Probability that a training sample is shown no prompts at all, as at
    /// test time.
    pub test_mix: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let max_epochs = 100;
        Self {
            batch_size: 12,
            max_epochs,
            lr_max: 1e-3,
            warmup_fraction: 0.05,
            adamw: AdamWConfig::default(),
            patience: DEFAULT_PATIENCE,
            rss: RssSchedule::for_epochs(max_epochs, 0),
            test_mix: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(TrainError::Config(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.test_mix) {
            return Err(TrainError::Config(format!(
                "test_mix must lie in [0, 1], got {}",
                self.test_mix
            )));
        }
        self.adamw.validate()?;
        self.rss
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }

    /// Reads training keys from `sec`. Keys left unset keep their defaults;
    /// the sampling decay defaults to half of `max_epochs`.
    pub fn from_section(sec: &mut Section<'_>) -> Result<Self> {
        let d = Self::default();
        let max_epochs = sec.get_or("max_epochs", d.max_epochs)?;
        let seed = sec.get_or("seed", d.seed)?;
        let rss_default = RssSchedule::for_epochs(max_epochs, seed);
        let cfg = Self {
            batch_size: sec.get_or("batch_size", d.batch_size)?,
            max_epochs,
            lr_max: sec.get_or("lr_max", d.lr_max)?,
            warmup_fraction: sec.get_or("warmup_fraction", d.warmup_fraction)?,
            adamw: AdamWConfig {
                beta1: sec.get_or("beta1", d.adamw.beta1)?,
                beta2: sec.get_or("beta2", d.adamw.beta2)?,
                eps: sec.get_or("eps", d.adamw.eps)?,
                weight_decay: sec.get_or("weight_decay", d.adamw.weight_decay)?,
            },
            patience: sec.get_or("patience", d.patience)?,
            rss: RssSchedule {
                p_start: sec.get_or("rss_p_start", rss_default.p_start)?,
                p_end: sec.get_or("rss_p_end", rss_default.p_end)?,
                decay_epochs: sec.get_or("rss_decay_epochs", rss_default.decay_epochs)?,
                seed,
            },
            test_mix: sec.get_or("test_mix", d.test_mix)?,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Full sequences of `n_in + k_out` pixel frames.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<EchoSequence>,
    pub val: Vec<EchoSequence>,
}

impl TrainData {
    /// Converts to pixel space and checks extents against the model.
    pub fn new(
        train: Vec<EchoSequence>,
        val: Vec<EchoSequence>,
        model: &TempEE<f32>,
    ) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(TrainError::Config(format!(
                "need non-empty train and validation sets, got {} and {}",
                train.len(),
                val.len()
            )));
        }
        let cfg = model.config();
        let frames = cfg.n_in + cfg.k_out;
        let prep = |s: EchoSequence| -> Result<EchoSequence> {
            if s.len() != frames || s.height() != cfg.image_edge || s.width() != cfg.image_edge {
                return Err(TrainError::Config(format!(
                    "sequence is {}×{}×{}, model needs {frames}×{e}×{e}",
                    s.len(),
                    s.height(),
                    s.width(),
                    e = cfg.image_edge
                )));
            }
            match s.value_space {
                ValueSpace::Pixel => Ok(s),
                ValueSpace::Dbz => s.to_pixel().map_err(|e| TrainError::Data(e.to_string())),
            }
        };
        Ok(Self {
            train: train.into_iter().map(prep).collect::<Result<_>>()?,
            val: val.into_iter().map(prep).collect::<Result<_>>()?,
        })
    }
}

fn normalized(seq: &EchoSequence) -> Result<Tensor<f32>> {
    let data = seq
        .values()
        .iter()
        .map(|&v| (v as f64 / PIXEL_MAX) as f32)
        .collect();
    Ok(
        Tensor::from_vec(&[seq.len(), seq.height(), seq.width()], data)
            .map_err(crate::model::ModelError::from)?,
    )
}

/// Loss (in units of 255²) and per-parameter gradients for one sequence.
fn sample_gradient(
    model: &TempEE<f32>,
    seq: &EchoSequence,
    mask: PromptMask,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (obs, future) = seq
        .split_at(model.config().n_in)
        .map_err(|e| TrainError::Data(e.to_string()))?;
    let prompts = Prompts::from_source(&future, mask)?;
    let target = normalized(&future)?;
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape, true);
    let y = model.forward_tape(&mut tape, &bound, &obs, &prompts)?;
    let loss = tape
        .mse(y, &target)
        .map_err(crate::model::ModelError::from)?;
    tape.backward(loss)
        .map_err(crate::model::ModelError::from)?;
    let grads = bound
        .iter()
        .map(|(_, v)| match tape.grad(v) {
            Some(g) => g.iter().map(|&x| x as f64).collect(),
            None => vec![0.0; tape.value(v).numel()],
        })
        .collect();
    Ok((tape.value(loss).item() as f64, grads))
}

/// Owns the model, optimizer and schedule for a run of `updates` steps.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: TempEE<f32>,
    opt: AdamW,
    sched: LrSchedule,
    cfg: TrainConfig,
    updates: usize,
}

impl Trainer {
    /// The schedule reaches zero one step after update `updates`.
    pub fn new(model: TempEE<f32>, cfg: TrainConfig, updates: usize) -> Result<Self> {
        cfg.validate()?;
        if updates == 0 {
            return Err(TrainError::Config("a run needs at least one update".into()));
        }
        let sched = LrSchedule::with_warmup_fraction(cfg.lr_max, cfg.warmup_fraction, updates + 1)?;
        let opt = AdamW::new(cfg.adamw, model.params())?;
        Ok(Self {
            model,
            opt,
            sched,
            cfg,
            updates,
        })
    }

    pub fn model(&self) -> &TempEE<f32> {
        &self.model
    }

    pub fn into_model(self) -> TempEE<f32> {
        self.model
    }

    pub fn schedule(&self) -> &LrSchedule {
        &self.sched
    }

    /// Completed updates.
    pub fn steps(&self) -> usize {
        self.opt.step as usize
    }

    pub fn finished(&self) -> bool {
        self.steps() >= self.updates
    }

    /// Prompt mask for sequence `id` in `epoch`.
    pub fn training_mask(&self, epoch: usize, id: u64) -> Result<PromptMask> {
        let k = self.model.config().k_out;
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.cfg.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
        key[16..24].copy_from_slice(&id.to_le_bytes());
        key[24] = 0x7e;
        let mut rng = ChaCha8Rng::from_seed(key);
        let mode = if rng.random_bool(self.cfg.test_mix) {
            SampleMode::Test
        } else {
            SampleMode::Train
        };
        sample_mask(&self.cfg.rss, epoch, k, mode, id)
            .map_err(|e| TrainError::Config(e.to_string()))
    }

    /// One update on `batch` of `(id, sequence)` pairs. Returns the batch
    /// mean loss in pixel² and the learning rate used.
    pub fn step(&mut self, batch: &[(u64, &EchoSequence)], epoch: usize) -> Result<(f64, f64)> {
        if self.finished() {
            return Err(TrainError::ScheduleExhausted {
                step: self.steps() as f64 + 1.0,
                total: self.updates,
            });
        }
        if batch.is_empty() {
            return Err(TrainError::Config("empty batch".into()));
        }
        let masks = batch
            .iter()
            .map(|(id, _)| self.training_mask(epoch, *id))
            .collect::<Result<Vec<_>>>()?;
        let model = &self.model;
        let per_sample: Vec<Result<(f64, Vec<Vec<f64>>)>> = batch
            .par_iter()
            .zip(masks)
            .map(|((_, seq), mask)| sample_gradient(model, seq, mask))
            .collect();
        let mut loss = 0.0;
        let mut total: Option<Vec<Vec<f64>>> = None;
        // summed in batch order so the result does not depend on scheduling
        for r in per_sample {
            let (l, g) = r?;
            loss += l;
            match &mut total {
                None => total = Some(g),
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        for (x, y) in a.iter_mut().zip(b) {
                            *x += y;
                        }
                    }
                }
            }
        }
        let b = batch.len() as f64;
        let mut grads = total.expect("batch is non-empty");
        for g in &mut grads {
            for x in g.iter_mut() {
                *x /= b;
            }
        }
        let lr = self.sched.lr_at(self.steps() as f64 + 1.0)?;
        self.opt.step(self.model.params_mut(), &grads, lr)?;
        let loss = loss / b * PIXEL_MAX * PIXEL_MAX;
        if !loss.is_finite() {
            return Err(TrainError::Numeric(format!("training loss became {loss}")));
        }
        Ok((loss, lr))
    }
}

/// Mean pixel² MSE of clamped test-condition predictions.
pub fn validate(model: &TempEE<f32>, sequences: &[EchoSequence]) -> Result<f64> {
    if sequences.is_empty() {
        return Err(TrainError::Config("empty validation set".into()));
    }
    let cfg = model.config();
    let errors: Vec<Result<f64>> = sequences
        .par_iter()
        .map(|seq| {
            let (obs, future) = seq
                .split_at(cfg.n_in)
                .map_err(|e| TrainError::Data(e.to_string()))?;
            let prompts = Prompts::hidden(cfg.k_out, cfg.image_edge, cfg.image_edge)?;
            let pred = model.extrapolate(&obs, &prompts)?;
            metrics::mse(pred.values(), future.values())
                .map_err(|e| TrainError::Data(e.to_string()))
        })
        .collect();
    let mut sum = 0.0;
    for e in errors {
        sum += e?;
    }
    Ok(sum / sequences.len() as f64)
}

pub const LOG_HEADER: &str = "epoch\tstep\tlr\ttrain_loss\tval_loss\tsince_best";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub since_best: usize,
}

impl EpochRecord {
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{:.6e}\t{:.6}\t{:.6}\t{}",
            self.epoch, self.step, self.lr, self.train_loss, self.val_loss, self.since_best
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the lowest validation loss.
    pub best: TempEE<f32>,
    pub best_val: f64,
    pub summary: DriverSummary,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
}

/// Trains until early stopping or `max_epochs`. Writes one TSV line per
/// epoch to `log` and, when `checkpoint` is set, saves the model there on
/// every strict validation improvement.
pub fn train_loop(
    model: TempEE<f32>,
    data: &TrainData,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(TrainError::Config(
            "train and validation sets must be non-empty".into(),
        ));
    }
    let per_epoch = data.train.len().div_ceil(cfg.batch_size);
    let mut trainer = Trainer::new(model, cfg.clone(), per_epoch * cfg.max_epochs)?;
    writeln!(log, "{LOG_HEADER}")?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = trainer.model().clone();
    let mut history = Vec::new();
    let last_lr = std::cell::Cell::new(0.0);

    let trainer_cell = std::cell::RefCell::new(&mut trainer);
    let summary = run_epochs(
        cfg.max_epochs,
        &mut stopper,
        |epoch| {
            let mut t = trainer_cell.borrow_mut();
            if t.finished() {
                return Ok(None);
            }
            let mut order: Vec<usize> = (0..data.train.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<(u64, &EchoSequence)> =
                    chunk.iter().map(|&i| (i as u64, &data.train[i])).collect();
                let (loss, lr) = t.step(&batch, epoch)?;
                loss_sum += loss;
                last_lr.set(lr);
                batches += 1;
            }
            let val_loss = validate(t.model(), &data.val)?;
            Ok(Some(EpochResult {
                train_loss: loss_sum / batches as f64,
                val_loss,
            }))
        },
        |epoch, result, verdict, stopper| {
            let t = trainer_cell.borrow();
            if verdict == super::early::Verdict::Improved {
                best = t.model().clone();
                if let Some(path) = checkpoint {
                    write_checkpoint(path, &best)?;
                }
            }
            let rec = EpochRecord {
                epoch,
                step: t.steps(),
                lr: last_lr.get(),
                train_loss: result.train_loss,
                val_loss: result.val_loss,
                since_best: stopper.since_best,
            };
            writeln!(log, "{}", rec.tsv())?;
            history.push(rec);
            Ok(())
        },
    )?;
    let steps = trainer.steps();
    Ok(TrainOutcome {
        best,
        best_val: summary.best_loss,
        summary,
        history,
        steps,
    })
}
