//! Feed-forward baseline: `log ψ = Σ MLP(s)` with `log cosh` after every layer.

use crate::ansatz::dense::{Activation, Mlp};
use crate::ansatz::{check_lengths, Ansatz, ParameterLayout};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Ffnn {
    size: usize,
    hidden: Vec<usize>,
    mlp: Mlp,
    layout: ParameterLayout,
}

impl Ffnn {
    /// `hidden` lists the widths of every layer after the input; the last
    /// entry is the output width that gets summed.
    pub fn new(size: usize, hidden: &[usize]) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config("mlp ansatz needs at least one layer".into()));
        }
        let mut dims = vec![size];
        dims.extend_from_slice(hidden);
        let mlp = Mlp::new(dims, Activation::LogCosh, true)?;
        let mut layout = ParameterLayout::new();
        mlp.register(&mut layout, "mlp");
        Ok(Self {
            size,
            hidden: hidden.to_vec(),
            mlp,
            layout,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    fn input(spins: &[i8]) -> Vec<f64> {
        spins.iter().map(|&s| s as f64).collect()
    }
}

impl Ansatz for Ffnn {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn input_size(&self) -> usize {
        self.size
    }

    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    fn log_psi(&self, params: &[f64], spins: &[i8]) -> Result<f64> {
        check_lengths(self, params, spins)?;
        let mut cache = vec![0.0; self.mlp.cache_len()];
        self.mlp.forward(params, &Self::input(spins), &mut cache);
        Ok(self.mlp.output(&cache).iter().sum())
    }

    fn log_psi_with_gradient(&self, params: &[f64], spins: &[i8], gradient: &mut [f64]) -> Result<f64> {
        check_lengths(self, params, spins)?;
        let mut cache = vec![0.0; self.mlp.cache_len()];
        self.mlp.forward(params, &Self::input(spins), &mut cache);
        let log_psi = self.mlp.output(&cache).iter().sum();
        gradient.fill(0.0);
        let ones = vec![1.0; self.mlp.output_dim()];
        self.mlp.backward(params, &cache, &ones, gradient, None);
        Ok(log_psi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::check_gradients;
    use crate::ansatz::dense::mlp_forward;

    #[test]
    fn zero_parameters_give_unit_amplitude() {
        let f = Ffnn::new(4, &[8, 3]).unwrap();
        let params = vec![0.0; f.parameter_count()];
        assert_eq!(f.log_psi(&params, &[1, -1, -1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn matches_direct_composition() {
        let f = Ffnn::new(4, &[5, 2]).unwrap();
        let params = f.initial_parameters(9);
        let (w1, rest) = params.split_at(20);
        let (b1, rest) = rest.split_at(5);
        let (w2, b2) = rest.split_at(10);
        let spins = [1i8, -1, 1, 1];
        let x: Vec<f64> = spins.iter().map(|&s| s as f64).collect();
        let out = mlp_forward(
            &[w1.to_vec(), w2.to_vec()],
            &[b1.to_vec(), b2.to_vec()],
            Activation::LogCosh,
            &x,
        )
        .unwrap();
        let expected: f64 = out.iter().sum();
        let got = f.log_psi(&params, &spins).unwrap();
        assert!((got.exp() - expected.exp()).abs() < 1e-14 * expected.exp());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let f = Ffnn::new(6, &[12, 4]).unwrap();
        for seed in 0..10u64 {
            let mut params = f.initial_parameters(seed);
            // Non-zero biases exercise every path.
            for (k, p) in params.iter_mut().enumerate() {
                *p += 0.01 * ((k * 7 + seed as usize) % 13) as f64 - 0.06;
            }
            let spins: Vec<i8> = (0..6).map(|i| if (seed + i) % 3 == 0 { -1 } else { 1 }).collect();
            let err = check_gradients(&f, &params, &spins, crate::ansatz::gradcheck::DEFAULT_STEP).unwrap();
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }
}
