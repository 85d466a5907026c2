//! Early stopping on a validation metric.

/// Outcome of observing one epoch's metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without an improvement larger
/// than `min_delta`. Epochs are counted from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: Option<(usize, f64)>,
    stale: usize,
    epochs: usize,
}

impl EarlyStopping {
    pub const MIN_DELTA: f64 = 1e-4;

    pub fn new(patience: usize) -> Self {
        Self::with_min_delta(patience, Self::MIN_DELTA)
    }

    pub fn with_min_delta(patience: usize, min_delta: f64) -> Self {
        Self {
            patience: patience.max(1),
            min_delta,
            best: None,
            stale: 0,
            epochs: 0,
        }
    }

    pub fn observe(&mut self, metric: f64) -> StopDecision {
        self.epochs += 1;
        let improved = metric.is_finite()
            && match self.best {
                None => true,
                Some((_, b)) => metric > b + self.min_delta,
            };
        if improved {
            self.best = Some((self.epochs, metric));
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_metric(&self) -> Option<f64> {
        self.best.map(|(_, m)| m)
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }
}

/// Feeds `metrics` in order; returns (epochs run, best epoch).
pub fn trace(metrics: &[f64], patience: usize, max_epochs: usize) -> (usize, Option<usize>) {
    let mut es = EarlyStopping::new(patience);
    for &m in metrics.iter().take(max_epochs) {
        if es.observe(m) == StopDecision::Stop {
            break;
        }
    }
    (es.epochs(), es.best_epoch())
}
