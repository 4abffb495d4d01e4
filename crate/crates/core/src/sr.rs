//! Stochastic reconfiguration: schedules, covariance statistics and the
//! regularised natural-gradient step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warm-up from `initial` to `peak` over `warmup` iterations, then
/// geometric decay by `decay` per iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRateSchedule {
    pub initial: f64,
    pub peak: f64,
    pub warmup: usize,
    pub decay: f64,
}

impl Default for LearningRateSchedule {
    fn default() -> Self {
        Self {
            initial: 0.1,
            peak: 2.0,
            warmup: 75,
            decay: 0.995,
        }
    }
}

impl LearningRateSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial.is_finite() && self.peak.is_finite() && self.initial <= self.peak && self.initial >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate needs 0 <= initial <= peak, got {} and {}",
                self.initial, self.peak
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("learning-rate decay must lie in (0, 1], got {}", self.decay)));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        if iteration <= self.warmup {
            if self.warmup == 0 {
                return self.peak;
            }
            self.initial + (self.peak - self.initial) * iteration as f64 / self.warmup as f64
        } else {
            self.peak * self.decay.powi((iteration - self.warmup) as i32)
        }
    }
}

/// Diagonal shift interpolated linearly from `start` (first iteration) to
/// `end` (last of `total` iterations).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagonalShiftSchedule {
    pub start: f64,
    pub end: f64,
    pub total: usize,
}

impl DiagonalShiftSchedule {
    pub fn new(start: f64, end: f64, total: usize) -> Result<Self> {
        if !(start > 0.0 && end > 0.0 && start.is_finite() && end.is_finite()) {
            return Err(Error::Config(format!("diagonal shift must stay positive, got {start} -> {end}")));
        }
        Ok(Self { start, end, total })
    }

    pub fn shift_at(&self, iteration: usize) -> f64 {
        if self.total <= 1 {
            return self.start;
        }
        let t = (iteration as f64 / (self.total - 1) as f64).min(1.0);
        self.start + (self.end - self.start) * t
    }
}

/// One distinct configuration with its multiplicity in the sample.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSample {
    pub derivatives: Vec<f64>,
    pub local_energy: f64,
    pub weight: f64,
}

/// How the metric `S` is held.
#[derive(Clone, Debug)]
enum Metric {
    /// Centred, weight-scaled log-derivatives `X` with `S = XᵀX`.
    Samples(DMatrix<f64>),
    Dense(DMatrix<f64>),
}

#[derive(Clone, Debug)]
pub struct SrStatistics {
    pub mean_energy: f64,
    /// Population variance of the local energy.
    pub energy_variance: f64,
    pub force: DVector<f64>,
    /// Total sample weight (number of samples when weights are counts).
    pub sample_count: f64,
    metric: Metric,
    /// Centred, weight-scaled local energies `e` with `F = Xᵀe`.
    energies: DVector<f64>,
}

impl SrStatistics {
    /// Statistics given directly by their metric and force.
    pub fn from_dense(covariance: DMatrix<f64>, force: DVector<f64>) -> Self {
        Self {
            mean_energy: 0.0,
            energy_variance: 0.0,
            force,
            sample_count: 0.0,
            metric: Metric::Dense(covariance),
            energies: DVector::zeros(0),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.force.len()
    }

    /// The metric `S` as a dense `P × P` matrix.
    pub fn covariance(&self) -> DMatrix<f64> {
        match &self.metric {
            Metric::Samples(x) => x.tr_mul(x),
            Metric::Dense(s) => s.clone(),
        }
    }

    fn metric_times(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.metric {
            Metric::Samples(x) => x.tr_mul(&(x * v)),
            Metric::Dense(s) => s * v,
        }
    }

    fn max_diagonal(&self) -> f64 {
        match &self.metric {
            Metric::Samples(x) => x.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max),
            Metric::Dense(s) => s.diagonal().max(),
        }
    }
}

/// `S = ⟨O Oᵀ⟩ - ⟨O⟩⟨O⟩ᵀ` and `F = ⟨E O⟩ - ⟨E⟩⟨O⟩` over weighted samples.
///
/// Means are taken first and the products are formed from centred values,
/// which avoids the cancellation of the raw-moment formulas.
pub fn accumulate_sr_statistics(samples: &[WeightedSample]) -> Result<SrStatistics> {
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    if samples.is_empty() || total < 2.0 {
        return Err(Error::InsufficientData("SR statistics need at least two samples".into()));
    }
    let p = samples[0].derivatives.len();
    for (k, s) in samples.iter().enumerate() {
        if s.derivatives.len() != p {
            return Err(Error::Dimension {
                context: "log-derivative vector",
                expected: p,
                actual: s.derivatives.len(),
            });
        }
        if !s.local_energy.is_finite() || !(s.weight >= 0.0) || s.derivatives.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite {
                stage: format!("SR statistics (sample {k})"),
                config: String::from("-"),
            });
        }
    }

    let mean_energy = samples.iter().map(|s| s.weight * s.local_energy).sum::<f64>() / total;
    let mut mean_o = vec![0.0; p];
    for s in samples {
        for (m, d) in mean_o.iter_mut().zip(&s.derivatives) {
            *m += s.weight * d;
        }
    }
    mean_o.iter_mut().for_each(|m| *m /= total);

    // Rows are sqrt(w/W)·(O - ⟨O⟩), so S = XᵀX and F = Xᵀ e.
    let mut x = DMatrix::<f64>::zeros(samples.len(), p);
    let mut e = DVector::<f64>::zeros(samples.len());
    let mut energy_variance = 0.0;
    for (k, s) in samples.iter().enumerate() {
        let scale = (s.weight / total).sqrt();
        for (j, (d, m)) in s.derivatives.iter().zip(&mean_o).enumerate() {
            x[(k, j)] = scale * (d - m);
        }
        let de = s.local_energy - mean_energy;
        e[k] = scale * de;
        energy_variance += s.weight * de * de;
    }
    energy_variance /= total;
    let force = x.tr_mul(&e);
    Ok(SrStatistics {
        mean_energy,
        energy_variance,
        force,
        sample_count: total,
        metric: Metric::Samples(x),
        energies: e,
    })
}

#[derive(Clone, Debug)]
pub struct SrStep {
    pub params: Vec<f64>,
    pub delta: Vec<f64>,
    /// `‖(S + ΔI)δ - F‖ / ‖F‖` (0 when `F = 0`).
    pub residual: f64,
    /// Shift actually used (×10 after a failed factorisation).
    pub diagonal_shift: f64,
}

/// Cholesky factor of `m + shift·I`, retrying once with a ×10 shift.
fn factor_shifted(m: &DMatrix<f64>, shift: f64) -> Option<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    let mut shift = shift;
    for attempt in 0..2 {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += shift;
        }
        if let Some(c) = a.cholesky() {
            return Some((c, shift));
        }
        if attempt == 0 {
            shift = if shift > 0.0 { shift * 10.0 } else { 1e-10 };
        }
    }
    None
}

/// Solve `(S + ΔI) δ = F` by Cholesky and return `θ - λ δ`.
///
/// With fewer samples `U` than parameters `P` the equivalent `U × U` system
/// `(XXᵀ + ΔI) y = e`, `δ = Xᵀy` is solved instead.
pub fn sr_update(params: &[f64], stats: &SrStatistics, learning_rate: f64, diagonal_shift: f64) -> Result<SrStep> {
    let p = params.len();
    if stats.parameter_count() != p {
        return Err(Error::Dimension {
            context: "SR statistics",
            expected: p,
            actual: stats.parameter_count(),
        });
    }
    if !(diagonal_shift >= 0.0) {
        return Err(Error::Config(format!("diagonal shift must be non-negative, got {diagonal_shift}")));
    }
    let failure = |shift: f64| {
        Error::Numerical(format!(
            "S + ΔI is not positive definite even with shift {shift:.3e} (max diagonal {:.3e})",
            stats.max_diagonal()
        ))
    };
    let (delta, shift) = match &stats.metric {
        Metric::Samples(x) if x.nrows() < p => {
            let kernel = x * x.transpose();
            let (chol, shift) = factor_shifted(&kernel, diagonal_shift).ok_or_else(|| failure(diagonal_shift * 10.0))?;
            (x.tr_mul(&chol.solve(&stats.energies)), shift)
        }
        _ => {
            let (chol, shift) =
                factor_shifted(&stats.covariance(), diagonal_shift).ok_or_else(|| failure(diagonal_shift * 10.0))?;
            (chol.solve(&stats.force), shift)
        }
    };
    let force_norm = stats.force.norm();
    let residual = if force_norm > 0.0 {
        (stats.metric_times(&delta) + shift * &delta - &stats.force).norm() / force_norm
    } else {
        0.0
    };
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numerical("SR solve produced non-finite step".into()));
    }
    let new_params = params.iter().zip(delta.iter()).map(|(t, d)| t - learning_rate * d).collect();
    Ok(SrStep {
        params: new_params,
        delta: delta.iter().copied().collect(),
        residual,
        diagonal_shift: shift,
    })
}
