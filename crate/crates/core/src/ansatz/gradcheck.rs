use crate::ansatz::Ansatz;
use crate::error::{format_spins, Error, Result};

/// Magnitude below which the comparison falls back to the absolute error;
/// roughly the resolution of a double-precision difference quotient.
pub const ABSOLUTE_FLOOR: f64 = 1e-6;

/// Step that balances truncation and round-off for the five-point stencil.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Largest relative deviation between analytic log-derivatives and
/// five-point central differences of `log ψ`.
pub fn check_gradients(ansatz: &dyn Ansatz, params: &[f64], spins: &[i8], step: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::Config(format!("finite-difference step {step} outside [1e-7, 1e-3]")));
    }
    let mut analytic = vec![0.0; params.len()];
    let value = ansatz.log_psi_with_gradient(params, spins, &mut analytic)?;
    if !value.is_finite() || analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            stage: "gradient check (analytic)".into(),
            config: format_spins(spins),
        });
    }
    let mut shifted = params.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        let mut at = |offset: f64| {
            shifted[k] = params[k] + offset;
            ansatz.log_psi(&shifted, spins)
        };
        let numeric = (8.0 * (at(step)? - at(-step)?) - (at(2.0 * step)? - at(-2.0 * step)?)) / (12.0 * step);
        shifted[k] = params[k];
        if !numeric.is_finite() {
            return Err(Error::NonFinite {
                stage: format!("gradient check (parameter {k})"),
                config: format_spins(spins),
            });
        }
        let scale = analytic[k].abs().max(numeric.abs());
        let diff = (analytic[k] - numeric).abs();
        let err = if scale < ABSOLUTE_FLOOR { diff } else { diff / scale };
        worst = worst.max(err);
    }
    Ok(worst)
}
