use super::Result;

pub const DEFAULT_PATIENCE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Stagnant,
    /// `patience` consecutive epochs without improvement.
    Stop,
}

/// Tracks the best validation loss and the epochs since it was set.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Only a strictly lower loss counts as improvement. A NaN loss is
    /// never an improvement.
    pub fn observe(&mut self, loss: f64) -> Verdict {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
            return Verdict::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Stagnant
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochResult {
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverSummary {
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_loss: f64,
    pub stopped_early: bool,
}

/// Runs `epoch` for up to `max_epochs` epochs or until `stopper` says
/// stop. `on_epoch` sees each result with the verdict it produced; it runs
/// before the loop can exit, so the best epoch is always handled.
pub fn run_epochs<E, H>(
    max_epochs: usize,
    stopper: &mut EarlyStopping,
    mut epoch: E,
    mut on_epoch: H,
) -> Result<DriverSummary>
where
    E: FnMut(usize) -> Result<Option<EpochResult>>,
    H: FnMut(usize, &EpochResult, Verdict, &EarlyStopping) -> Result<()>,
{
    let mut summary = DriverSummary {
        epochs: 0,
        best_epoch: None,
        best_loss: stopper.best,
        stopped_early: false,
    };
    for e in 0..max_epochs {
        // `None` means the step budget ran out mid-epoch with nothing to score
        let Some(result) = epoch(e)? else {
            break;
        };
        let verdict = stopper.observe(result.val_loss);
        summary.epochs = e + 1;
        if verdict == Verdict::Improved {
            summary.best_epoch = Some(e);
            summary.best_loss = stopper.best;
        }
        on_epoch(e, &result, verdict, stopper)?;
        if verdict == Verdict::Stop {
            summary.stopped_early = true;
            break;
        }
    }
    Ok(summary)
}
