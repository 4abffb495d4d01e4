//! Exact diagonalisation of the chain for small `N`.
//!
//! Up to `N = 8` the full matrix is diagonalised densely. Larger chains
//! (up to 14) use Lanczos with full reorthogonalisation on the matrix-free
//! Hamiltonian, run separately in the even and odd sectors of the global
//! spin flip, which is an exact symmetry.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::checkpoint::{decode_parameters, encode_parameters};
use crate::error::{Error, Result};
use crate::hamiltonian::{spins_from_index, TransverseFieldIsing, DISTANCE_CONVENTION};
use crate::observables::{renyi2_from_amplitudes, staggered_magnetization, Wavevector};

pub const MAX_EXACT_SIZE: usize = 14;
/// Largest `N` for which [`build_dense_hamiltonian`] materialises the matrix.
pub const MAX_DENSE_SIZE: usize = 12;
/// Largest `N` diagonalised densely by [`ground_state`].
pub const DENSE_SOLVER_LIMIT: usize = 8;

const LANCZOS_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Auto,
    Dense,
    Lanczos,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub size: usize,
    pub energy: f64,
    pub excited_energy: f64,
    pub gap: f64,
    /// Normalised ground vector with non-negative components.
    #[serde(skip)]
    pub vector: Vec<f64>,
    pub method: Method,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactObservables {
    pub q: Wavevector,
    pub m2: f64,
    pub s2: f64,
}

fn check_size(n: usize, limit: usize, what: &str) -> Result<()> {
    if n == 0 || n > limit {
        return Err(Error::Config(format!("{what} supports 1 <= N <= {limit}, got N = {n}")));
    }
    Ok(())
}

/// Diagonal energies of every basis state (bit `i` set means site `i` down).
pub fn diagonal_energies(model: &TransverseFieldIsing) -> Vec<f64> {
    let n = model.size();
    (0..1usize << n).map(|i| model.diagonal_energy(&spins_from_index(i, n))).collect()
}

/// Dense `2^N × 2^N` Hamiltonian.
pub fn build_dense_hamiltonian(model: &TransverseFieldIsing) -> Result<DMatrix<f64>> {
    let n = model.size();
    check_size(n, MAX_DENSE_SIZE, "dense Hamiltonian")?;
    let dim = 1usize << n;
    let diag = diagonal_energies(model);
    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        h[(i, i)] = diag[i];
        for k in 0..n {
            h[(i ^ (1 << k), i)] = -model.field;
        }
    }
    Ok(h)
}

/// `out = H v` without storing `H`.
fn apply_hamiltonian(diag: &[f64], n: usize, field: f64, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = diag[i] * v[i];
        let mut off = 0.0;
        for k in 0..n {
            off += v[i ^ (1 << k)];
        }
        acc -= field * off;
        *o = acc;
    }
}

fn project_sector(v: &mut [f64], parity: f64) {
    let mask = v.len() - 1;
    for i in 0..v.len() {
        let j = i ^ mask;
        if i < j {
            let (a, b) = (v[i], v[j]);
            v[i] = 0.5 * (a + parity * b);
            v[j] = parity * v[i];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Lowest `want` eigenpairs of `H` restricted to the sector of the global
/// flip with the given parity (`+1` or `-1`). Returns fewer pairs if the
/// sector is smaller.
fn lanczos_sector(
    diag: &[f64],
    n: usize,
    field: f64,
    parity: f64,
    want: usize,
    seed: u64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let dim = diag.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    project_sector(&mut v, parity);
    if normalize(&mut v) == 0.0 {
        return Ok(Vec::new());
    }
    let sector_dim = if n == 0 { 1 } else { dim / 2 };
    let max_steps = sector_dim.min(400);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; dim];
    loop {
        let j = basis.len() - 1;
        apply_hamiltonian(diag, n, field, &basis[j], &mut w);
        let a = dot(&basis[j], &w);
        alpha.push(a);
        // Full reorthogonalisation, applied twice for stability.
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        project_sector(&mut w, parity);
        let b = dot(&w, &w).sqrt();

        let m = alpha.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
        let k = want.min(m);
        let exhausted = b < 1e-13 || m >= sector_dim;
        let converged = order[..k].iter().all(|&idx| {
            let theta = eig.eigenvalues[idx];
            (b * eig.eigenvectors[(m - 1, idx)]).abs() < LANCZOS_TOLERANCE * theta.abs().max(1.0)
        });
        if (converged && m >= want.min(sector_dim)) || exhausted {
            return Ok(order[..k]
                .iter()
                .map(|&idx| {
                    let mut vec = vec![0.0; dim];
                    for (i, bv) in basis.iter().enumerate() {
                        let c = eig.eigenvectors[(i, idx)];
                        vec.iter_mut().zip(bv).for_each(|(x, y)| *x += c * y);
                    }
                    normalize(&mut vec);
                    (eig.eigenvalues[idx], vec)
                })
                .collect());
        }
        if m >= max_steps {
            return Err(Error::Numerical(format!(
                "Lanczos did not converge within {max_steps} steps (N = {n}, residual {b:.3e})"
            )));
        }
        beta.push(b);
        let next: Vec<f64> = w.iter().map(|x| x / b).collect();
        basis.push(next);
    }
}

fn fix_sign(v: &mut [f64]) -> Result<()> {
    let sum: f64 = v.iter().sum();
    if sum < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let norm = normalize(v);
    if norm == 0.0 {
        return Err(Error::Numerical("ground vector vanished".into()));
    }
    Ok(())
}

pub fn ground_state(model: &TransverseFieldIsing) -> Result<ExactSolution> {
    ground_state_with(model, Method::Auto)
}

pub fn ground_state_with(model: &TransverseFieldIsing, method: Method) -> Result<ExactSolution> {
    let n = model.size();
    check_size(n, MAX_EXACT_SIZE, "exact diagonalisation")?;
    let method = match method {
        Method::Auto if n <= DENSE_SOLVER_LIMIT => Method::Dense,
        Method::Auto => Method::Lanczos,
        m => m,
    };
    let (energy, excited_energy, mut vector) = match method {
        Method::Dense => {
            let h = build_dense_hamiltonian(model)?;
            let eig = SymmetricEigen::new(h);
            let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
            order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
            let e0 = eig.eigenvalues[order[0]];
            let e1 = order.get(1).map_or(f64::NAN, |&i| eig.eigenvalues[i]);
            (e0, e1, eig.eigenvectors.column(order[0]).iter().copied().collect::<Vec<_>>())
        }
        _ => {
            let diag = diagonal_energies(model);
            let even = lanczos_sector(&diag, n, model.field, 1.0, 2, 0x5eed)?;
            let odd = lanczos_sector(&diag, n, model.field, -1.0, 1, 0x5eed + 1)?;
            let (e0, v0) = even
                .first()
                .cloned()
                .ok_or_else(|| Error::Numerical("empty even sector".into()))?;
            let e1 = even
                .get(1)
                .map(|p| p.0)
                .into_iter()
                .chain(odd.first().map(|p| p.0))
                .fold(f64::INFINITY, f64::min);
            (e0, e1, v0)
        }
    };
    fix_sign(&mut vector)?;
    Ok(ExactSolution {
        size: n,
        energy,
        excited_energy,
        gap: excited_energy - energy,
        vector,
        method,
    })
}

/// `⟨m²⟩` and `S₂` (first `N/2` sites) of the ground state.
pub fn exact_observables(solution: &ExactSolution, q: Wavevector) -> Result<ExactObservables> {
    let n = solution.size;
    let m2 = solution
        .vector
        .iter()
        .enumerate()
        .map(|(i, a)| a * a * staggered_magnetization(&spins_from_index(i, n), q).powi(2))
        .sum();
    let s2 = if n >= 2 { renyi2_from_amplitudes(&solution.vector, n)? } else { 0.0 };
    Ok(ExactObservables { q, m2, s2 })
}

/// Exact variational energy and energy variance of an arbitrary real
/// amplitude `exp(log ψ)` by summing over all `2^N` configurations.
pub fn exhaustive_energy<F>(model: &TransverseFieldIsing, log_psi: F) -> Result<(f64, f64)>
where
    F: Fn(&[i8]) -> Result<f64>,
{
    let n = model.size();
    check_size(n, 20, "exhaustive energy")?;
    let dim = 1usize << n;
    let logs: Vec<f64> = (0..dim).map(|i| log_psi(&spins_from_index(i, n))).collect::<Result<_>>()?;
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let amps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let norm: f64 = amps.iter().map(|a| a * a).sum();
    let diag = diagonal_energies(model);
    let mut h_psi = vec![0.0; dim];
    apply_hamiltonian(&diag, n, model.field, &amps, &mut h_psi);
    let energy = dot(&amps, &h_psi) / norm;
    let h2 = dot(&h_psi, &h_psi) / norm;
    Ok((energy, h2 - energy * energy))
}

/// Cache key: exact bit patterns of every model parameter plus the
/// distance convention.
pub fn cache_key(model: &TransverseFieldIsing) -> String {
    let c = &model.coupling;
    format!(
        "ed-n{}-a{:016x}-j{:016x}-b{:016x}-h{:016x}-k{}-s{}-{}",
        c.size,
        c.alpha.to_bits(),
        c.coupling_strength.to_bits(),
        c.self_term.to_bits(),
        model.field.to_bits(),
        c.kac_on as u8,
        model.include_self_term as u8,
        DISTANCE_CONVENTION
    )
}

/// Directory-backed store of ground states.
#[derive(Clone, Debug)]
pub struct ExactCache {
    dir: PathBuf,
}

impl ExactCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn paths(&self, model: &TransverseFieldIsing) -> (PathBuf, PathBuf) {
        let key = cache_key(model);
        (self.dir.join(format!("{key}.json")), self.dir.join(format!("{key}.bin")))
    }

    pub fn load(&self, model: &TransverseFieldIsing) -> Result<Option<ExactSolution>> {
        let (meta, vec) = self.paths(model);
        if !meta.exists() || !vec.exists() {
            return Ok(None);
        }
        let mut solution: ExactSolution =
            serde_json::from_slice(&fs::read(&meta).map_err(|e| Error::io(&meta, e))?)?;
        solution.vector = decode_parameters(&fs::read(&vec).map_err(|e| Error::io(&vec, e))?)?;
        if solution.vector.len() != 1usize << solution.size {
            return Ok(None);
        }
        Ok(Some(solution))
    }

    pub fn store(&self, model: &TransverseFieldIsing, solution: &ExactSolution) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let (meta, vec) = self.paths(model);
        fs::write(&vec, encode_parameters(&solution.vector)).map_err(|e| Error::io(&vec, e))?;
        fs::write(&meta, serde_json::to_vec_pretty(solution)?).map_err(|e| Error::io(&meta, e))?;
        Ok(())
    }

    pub fn ground_state(&self, model: &TransverseFieldIsing) -> Result<ExactSolution> {
        if let Some(s) = self.load(model)? {
            return Ok(s);
        }
        let s = ground_state(model)?;
        self.store(model, &s)?;
        Ok(s)
    }
}

/// Ground state through an optional cache directory.
pub fn cached_ground_state(model: &TransverseFieldIsing, cache_dir: Option<&Path>) -> Result<ExactSolution> {
    match cache_dir {
        Some(dir) => ExactCache::new(dir).ground_state(model),
        None => ground_state(model),
    }
}
