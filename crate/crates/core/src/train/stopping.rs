/// Tracks the best monitored value and stops after `patience` epochs
/// without strict improvement, or at `max_epochs`.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub max_epochs: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue { improved: bool },
    Stop { improved: bool },
}

impl EarlyStopping {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        EarlyStopping {
            patience,
            max_epochs,
            best: None,
            stale: 0,
        }
    }

    /// Records the metric of a (1-based) epoch.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> Decision {
        let improved = match self.best {
            None => true,
            Some((_, b)) => metric > b,
        };
        if improved {
            self.best = Some((epoch, metric));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        if self.stale >= self.patience || epoch >= self.max_epochs {
            Decision::Stop { improved }
        } else {
            Decision::Continue { improved }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleOutcome {
    pub stopped_at: usize,
    pub best_epoch: usize,
    pub best_metric: f64,
}

/// Runs `epoch_fn` for epochs `1, 2, ...` until the stopping rule fires.
pub fn run_schedule<E>(
    max_epochs: usize,
    patience: usize,
    mut epoch_fn: impl FnMut(usize) -> Result<f64, E>,
) -> Result<ScheduleOutcome, E> {
    let mut stop = EarlyStopping::new(patience, max_epochs);
    let mut epoch = 0;
    while epoch < max_epochs {
        epoch += 1;
        let metric = epoch_fn(epoch)?;
        if let Decision::Stop { .. } = stop.observe(epoch, metric) {
            break;
        }
    }
    let (best_epoch, best_metric) = stop.best().unwrap_or((0, f64::NAN));
    Ok(ScheduleOutcome {
        stopped_at: epoch,
        best_epoch,
        best_metric,
    })
}
