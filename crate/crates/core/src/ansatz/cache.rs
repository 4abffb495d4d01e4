//! Memoisation of `log ψ` for one fixed parameter vector.
//!
//! Sampling and local energies revisit the same configurations many times
//! within an iteration (especially for small chains), and the ansatz is a
//! pure function of `(θ, s)`, so caching by configuration changes nothing
//! but the cost.

use dashmap::DashMap;

use crate::ansatz::Ansatz;
use crate::error::Result;
use crate::hamiltonian::index_from_spins;

/// Entries beyond this are evaluated but not stored.
const MAX_ENTRIES: usize = 1 << 22;

pub struct AmplitudeCache<'a> {
    ansatz: &'a dyn Ansatz,
    params: &'a [f64],
    map: Option<DashMap<u64, f64>>,
}

impl<'a> AmplitudeCache<'a> {
    /// Caching is enabled when configurations fit in a 64-bit key.
    pub fn new(ansatz: &'a dyn Ansatz, params: &'a [f64]) -> Self {
        let map = (ansatz.input_size() <= 64).then(DashMap::new);
        Self { ansatz, params, map }
    }

    pub fn uncached(ansatz: &'a dyn Ansatz, params: &'a [f64]) -> Self {
        Self {
            ansatz,
            params,
            map: None,
        }
    }

    pub fn log_psi(&self, spins: &[i8]) -> Result<f64> {
        let Some(map) = &self.map else {
            return self.ansatz.log_psi(self.params, spins);
        };
        let key = index_from_spins(spins) as u64;
        if let Some(v) = map.get(&key) {
            return Ok(*v);
        }
        let v = self.ansatz.log_psi(self.params, spins)?;
        if map.len() < MAX_ENTRIES {
            map.insert(key, v);
        }
        Ok(v)
    }

    /// `log ψ` with NaN standing in for evaluation failures, for callers
    /// that only detect non-finite values.
    pub fn log_psi_or_nan(&self, spins: &[i8]) -> f64 {
        self.log_psi(spins).unwrap_or(f64::NAN)
    }

    pub fn len(&self) -> usize {
        self.map.as_ref().map_or(0, DashMap::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::rbm::Rbm;

    #[test]
    fn cached_values_are_identical() {
        let rbm = Rbm::new(6, 2).unwrap();
        let params = rbm.initial_parameters(3);
        let cache = AmplitudeCache::new(&rbm, &params);
        let spins = [1i8, -1, 1, 1, -1, -1];
        let first = cache.log_psi(&spins).unwrap();
        let second = cache.log_psi(&spins).unwrap();
        assert_eq!(first.to_bits(), second.to_bits());
        assert_eq!(first.to_bits(), rbm.log_psi(&params, &spins).unwrap().to_bits());
        assert_eq!(cache.len(), 1);
        assert!(AmplitudeCache::uncached(&rbm, &params).is_empty());
    }
}
