//! Per-round training telemetry.

use serde::Serialize;

use crate::privacy::PrivacyReport;
use crate::scalar::Scalar;

/// [`PrivacyReport`] widened to `f64`, with non-finite values as `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyRecord {
    pub worker: usize,
    pub eps_sketch: Option<f64>,
    pub eps_target: Option<f64>,
    pub noise_added: bool,
    pub laplace_scale: f64,
    pub eps_attained: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl PrivacyRecord {
    pub fn from_report<T: Scalar>(worker: usize, r: &PrivacyReport<T>) -> Self {
        Self {
            worker,
            eps_sketch: r.eps_sketch.map(Scalar::as_f64),
            eps_target: finite(r.eps_target.as_f64()),
            noise_added: r.noise_added,
            laplace_scale: r.laplace_scale.as_f64(),
            eps_attained: finite(r.eps_attained.as_f64()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    /// One-based.
    pub round: usize,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub participants: usize,
    /// Mean / max of the participants' attained per-round `eps`. `None` when
    /// any participant has no finite guarantee.
    pub eps_mean: Option<f64>,
    pub eps_max: Option<f64>,
    pub noise_added: usize,
    pub bytes_sent_per_worker: u64,
    pub compression_ratio: f64,
    /// Rounds so far, each divided by its compression ratio.
    pub normalized_communication: f64,
    pub privacy: Vec<PrivacyRecord>,
}

impl RoundMetrics {
    pub(crate) fn fill_privacy(&mut self, records: Vec<PrivacyRecord>) {
        self.noise_added = records.iter().filter(|r| r.noise_added).count();
        let eps: Option<Vec<f64>> = records.iter().map(|r| r.eps_attained).collect();
        if let Some(eps) = eps.filter(|e| !e.is_empty()) {
            self.eps_mean = Some(eps.iter().sum::<f64>() / eps.len() as f64);
            self.eps_max = eps.iter().copied().reduce(f64::max);
        }
        self.privacy = records;
    }
}
