//! Real restricted-Boltzmann-machine-like ansatz, `log ψ = Σ_j log cosh((W s + b)_j)`.
//!
//! The visible bias is fixed to zero.

use crate::ansatz::dense::log_cosh;
use crate::ansatz::{check_lengths, Ansatz, Init, ParameterLayout};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Rbm {
    size: usize,
    density: usize,
    layout: ParameterLayout,
}

impl Rbm {
    pub fn new(size: usize, density: usize) -> Result<Self> {
        if size == 0 || density == 0 {
            return Err(Error::Config(format!("rbm needs size >= 1 and density >= 1, got {size}, {density}")));
        }
        let hidden = size * density;
        let mut layout = ParameterLayout::new();
        layout.push("hidden.weight", &[hidden, size], Init::Normal { fan_in: size });
        layout.push("hidden.bias", &[hidden], Init::Zeros);
        Ok(Self { size, density, layout })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn density(&self) -> usize {
        self.density
    }

    pub fn hidden_units(&self) -> usize {
        self.size * self.density
    }

    /// Real parameter count of the complex-parameter variant (real and
    /// imaginary parts of `W` and `b`), for comparison with published counts.
    pub fn complex_equivalent_parameter_count(&self) -> usize {
        2 * self.layout.parameter_count()
    }

    fn theta(&self, params: &[f64], spins: &[i8], out: &mut [f64]) {
        let n = self.size;
        let (weights, bias) = params.split_at(self.hidden_units() * n);
        for (j, t) in out.iter_mut().enumerate() {
            let row = &weights[j * n..(j + 1) * n];
            let mut acc = bias[j];
            for (w, &s) in row.iter().zip(spins) {
                acc += if s > 0 { *w } else { -*w };
            }
            *t = acc;
        }
    }
}

impl Ansatz for Rbm {
    fn name(&self) -> &'static str {
        "rbm"
    }

    fn input_size(&self) -> usize {
        self.size
    }

    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    fn log_psi(&self, params: &[f64], spins: &[i8]) -> Result<f64> {
        check_lengths(self, params, spins)?;
        let mut theta = vec![0.0; self.hidden_units()];
        self.theta(params, spins, &mut theta);
        Ok(theta.iter().map(|&t| log_cosh(t)).sum())
    }

    fn log_psi_with_gradient(&self, params: &[f64], spins: &[i8], gradient: &mut [f64]) -> Result<f64> {
        check_lengths(self, params, spins)?;
        if gradient.len() != params.len() {
            return Err(Error::Dimension {
                context: "gradient buffer",
                expected: params.len(),
                actual: gradient.len(),
            });
        }
        let n = self.size;
        let m = self.hidden_units();
        let mut theta = vec![0.0; m];
        self.theta(params, spins, &mut theta);
        let (gw, gb) = gradient.split_at_mut(m * n);
        let mut log_psi = 0.0;
        for (j, &t) in theta.iter().enumerate() {
            log_psi += log_cosh(t);
            let tanh = t.tanh();
            gb[j] = tanh;
            for (g, &s) in gw[j * n..(j + 1) * n].iter_mut().zip(spins) {
                *g = tanh * s as f64;
            }
        }
        Ok(log_psi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::check_gradients;

    #[test]
    fn zero_parameters_give_uniform_state() {
        let rbm = Rbm::new(5, 2).unwrap();
        let params = vec![0.0; rbm.parameter_count()];
        assert_eq!(rbm.log_psi(&params, &[1, -1, 1, 1, -1]).unwrap(), 0.0);
    }

    #[test]
    fn single_hidden_unit_bias_only() {
        let rbm = Rbm::new(1, 1).unwrap();
        let beta = 0.37;
        let params = vec![0.0, beta];
        for s in [[1i8], [-1]] {
            assert!((rbm.log_psi(&params, &s).unwrap() - beta.cosh().ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let rbm = Rbm::new(4, 1).unwrap();
        let params = vec![0.0; rbm.parameter_count()];
        assert!(rbm.log_psi(&params, &[1, 1, 1]).is_err());
        assert!(rbm.log_psi(&params[1..], &[1, 1, 1, 1]).is_err());
    }

    #[test]
    fn parameter_counts() {
        let rbm = Rbm::new(50, 1).unwrap();
        assert_eq!(rbm.parameter_count(), 2550);
        assert_eq!(rbm.complex_equivalent_parameter_count(), 5100);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let rbm = Rbm::new(6, 2).unwrap();
        for seed in 0..10u64 {
            let params = rbm.initial_parameters(seed);
            let spins: Vec<i8> = (0..6).map(|i| if (seed >> (i % 4)) & 1 == 0 { 1 } else { -1 }).collect();
            let err = check_gradients(&rbm, &params, &spins, crate::ansatz::gradcheck::DEFAULT_STEP).unwrap();
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }
}
