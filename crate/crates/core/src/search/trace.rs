//! Per-epoch record of a search run.

use crate::autodiff::Matrix;

/// Wall-clock seconds spent in each phase of one epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub arch_forward: f64,
    pub arch_backward: f64,
    pub weight_forward: f64,
    pub weight_backward: f64,
    pub total: f64,
}

impl PhaseTimes {
    pub fn arch(&self) -> f64 {
        self.arch_forward + self.arch_backward
    }

    pub fn weight(&self) -> f64 {
        self.weight_forward + self.weight_backward
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Continuous architecture `A` after this epoch's update.
    pub arch: Matrix,
    /// Discrete architecture after this epoch's update (the derived one-hot
    /// matrix for relaxed searches).
    pub discrete: Matrix,
    pub selected: Vec<usize>,
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// Validation loss seen by the architecture step.
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// `L_val + η·R` seen by the architecture step.
    pub objective: f64,
    /// Relaxed searches only: validation loss of the derived discrete
    /// architecture minus that of the softmax supernet, same weights.
    pub discretization_gap: Option<f64>,
    pub arch_op_calls: usize,
    pub weight_op_calls: usize,
    /// Rows whose projection onto `C` had no attained minimizer.
    pub degenerate_rows: usize,
    pub times: PhaseTimes,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchTrace {
    pub records: Vec<EpochRecord>,
    /// First epoch whose `A` left the unit box, if any.
    pub first_box_violation: Option<usize>,
}

impl SearchTrace {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Per edge, how often the selected operation changed between
    /// consecutive records.
    pub fn switch_counts(&self) -> Vec<usize> {
        let edges = self.records.first().map_or(0, |r| r.selected.len());
        let mut counts = vec![0; edges];
        for pair in self.records.windows(2) {
            for (e, count) in counts.iter_mut().enumerate() {
                if pair[0].selected[e] != pair[1].selected[e] {
                    *count += 1;
                }
            }
        }
        counts
    }

    pub fn total_switches(&self) -> usize {
        self.switch_counts().iter().sum()
    }

    pub fn total_degenerate_rows(&self) -> usize {
        self.records.iter().map(|r| r.degenerate_rows).sum()
    }
}
