//! Estimators for the staggered magnetisation, the Renyi-2 entropy (swap
//! trick) and the V-score, with jackknife error bars.

use std::f64::consts::LN_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of jackknife blocks used by the estimators.
pub const JACKKNIFE_BLOCKS: usize = 32;

/// Ordering wavevector of the staggered magnetisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavevector {
    /// `q = 0`, ferromagnetic order.
    Zero,
    /// `q = π`, Néel order.
    Pi,
}

impl Wavevector {
    /// Accepts exactly `0` or `π` (to within 1e-12).
    pub fn from_value(q: f64) -> Result<Self> {
        if q.abs() < 1e-12 {
            Ok(Self::Zero)
        } else if (q - std::f64::consts::PI).abs() < 1e-12 {
            Ok(Self::Pi)
        } else {
            Err(Error::Config(format!("unsupported wavevector {q}; only 0 and π are allowed")))
        }
    }

    /// `q = 0` for ferromagnetic (`J < 0`) and `q = π` for antiferromagnetic
    /// (`J > 0`) couplings; `J = 0` uses `q = 0`.
    pub fn for_coupling(coupling_strength: f64) -> Self {
        if coupling_strength > 0.0 {
            Self::Pi
        } else {
            Self::Zero
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Pi => std::f64::consts::PI,
        }
    }
}

/// `(1/N) Σ_j s_j cos(q j)` with sites numbered from 0.
pub fn staggered_magnetization(spins: &[i8], q: Wavevector) -> f64 {
    let sum: i64 = match q {
        Wavevector::Zero => spins.iter().map(|&s| s as i64).sum(),
        Wavevector::Pi => spins
            .iter()
            .enumerate()
            .map(|(j, &s)| if j % 2 == 0 { s as i64 } else { -(s as i64) })
            .sum(),
    };
    sum as f64 / spins.len() as f64
}

/// Jackknife over `blocks` contiguous blocks of `values`: returns the
/// estimate `f(mean)` and its error for a smooth function `f` of the mean.
pub fn jackknife<F: Fn(f64) -> f64>(values: &[f64], blocks: usize, f: F) -> (f64, f64) {
    let n = values.len();
    let total: f64 = values.iter().sum();
    let estimate = f(total / n as f64);
    let b = blocks.min(n).max(2);
    if n < 2 {
        return (estimate, f64::NAN);
    }
    let mut leave_out = Vec::with_capacity(b);
    for k in 0..b {
        let lo = k * n / b;
        let hi = (k + 1) * n / b;
        let block_sum: f64 = values[lo..hi].iter().sum();
        let remaining = (n - (hi - lo)) as f64;
        leave_out.push(f((total - block_sum) / remaining));
    }
    let mean = leave_out.iter().sum::<f64>() / b as f64;
    let var = leave_out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * (b - 1) as f64 / b as f64;
    (estimate, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagnetizationResult {
    pub q: Wavevector,
    pub mean: f64,
    pub error: f64,
}

/// Sample mean of `m(s)²` with a blocked-jackknife error.
pub fn m_squared_estimator(samples: &[Vec<i8>], q: Wavevector) -> Result<MagnetizationResult> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData("m² estimator needs at least two samples".into()));
    }
    let values: Vec<f64> = samples.iter().map(|s| staggered_magnetization(s, q).powi(2)).collect();
    let (mean, error) = jackknife(&values, JACKKNIFE_BLOCKS, |m| m);
    Ok(MagnetizationResult { q, mean, error })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenyiResult {
    /// Size of the subsystem `A` (the first sites of the chain).
    pub subsystem: usize,
    pub s2: f64,
    pub error: f64,
    pub swap_mean: f64,
    pub swap_error: f64,
    /// `⟨swap⟩ ≤ 0`, so the entropy is undefined at this sample size.
    pub under_sampled: bool,
}

/// Amplitude cross-ratio `ψ(s_A, s'_Ā) ψ(s'_A, s_Ā) / (ψ(s) ψ(s'))` with `A`
/// the first `subsystem` sites. Symmetric in `(s, s')` bit for bit.
pub fn swap_ratio<F>(log_psi: &F, s: &[i8], s_prime: &[i8], subsystem: usize) -> Result<f64>
where
    F: Fn(&[i8]) -> Result<f64> + ?Sized,
{
    let mut a = s[..subsystem].to_vec();
    a.extend_from_slice(&s_prime[subsystem..]);
    let mut b = s_prime[..subsystem].to_vec();
    b.extend_from_slice(&s[subsystem..]);
    let swapped = log_psi(&a)? + log_psi(&b)?;
    let original = log_psi(s)? + log_psi(s_prime)?;
    Ok((swapped - original).exp())
}

/// Swap-trick estimate `S₂ = -log₂⟨swap⟩` from paired samples of two
/// independent streams, subsystem = first `N/2` sites.
pub fn renyi2_swap_estimator<F>(first: &[Vec<i8>], second: &[Vec<i8>], log_psi: &F) -> Result<RenyiResult>
where
    F: Fn(&[i8]) -> Result<f64> + ?Sized,
{
    let pairs = first.len().min(second.len());
    if pairs < 2 {
        return Err(Error::InsufficientData("Renyi estimator needs at least two sample pairs".into()));
    }
    let n = first[0].len();
    let subsystem = n / 2;
    let ratios: Vec<f64> = (0..pairs)
        .map(|k| swap_ratio(log_psi, &first[k], &second[k], subsystem))
        .collect::<Result<_>>()?;
    if ratios.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite {
            stage: "swap ratio".into(),
            config: "-".into(),
        });
    }
    let (swap_mean, swap_error) = jackknife(&ratios, JACKKNIFE_BLOCKS, |m| m);
    let under_sampled = swap_mean <= 0.0;
    let (s2, error) = if under_sampled {
        (f64::NAN, f64::NAN)
    } else {
        jackknife(&ratios, JACKKNIFE_BLOCKS, |m| if m > 0.0 { -m.ln() / LN_2 } else { f64::NAN })
    };
    Ok(RenyiResult {
        subsystem,
        s2,
        error,
        swap_mean,
        swap_error,
        under_sampled,
    })
}

/// Swap estimate from a single batch, pairing sample `k` with `k + M/2`.
pub fn renyi2_from_batch<F>(samples: &[Vec<i8>], log_psi: &F) -> Result<RenyiResult>
where
    F: Fn(&[i8]) -> Result<f64> + ?Sized,
{
    let half = samples.len() / 2;
    renyi2_swap_estimator(&samples[..half], &samples[half..2 * half], log_psi)
}

/// `-log₂ Tr ρ_A²` of a (not necessarily normalised) real state vector over
/// `2^n` basis states, `A` = first `n/2` sites (low index bits).
pub fn renyi2_from_amplitudes(psi: &[f64], n: usize) -> Result<f64> {
    if psi.len() != 1usize << n {
        return Err(Error::Dimension {
            context: "state vector",
            expected: 1 << n,
            actual: psi.len(),
        });
    }
    let norm2: f64 = psi.iter().map(|v| v * v).sum();
    if !(norm2 > 0.0) {
        return Err(Error::Numerical("state vector has zero norm".into()));
    }
    let na = n / 2;
    let dim_a = 1usize << na;
    let dim_b = 1usize << (n - na);
    // ρ_A[a][a'] = Σ_b ψ(a, b) ψ(a', b); index = a | (b << na).
    let mut purity = 0.0;
    for a in 0..dim_a {
        for a2 in a..dim_a {
            let mut r = 0.0;
            for b in 0..dim_b {
                r += psi[a | (b << na)] * psi[a2 | (b << na)];
            }
            let w = if a == a2 { 1.0 } else { 2.0 };
            purity += w * r * r;
        }
    }
    purity /= norm2 * norm2;
    Ok(-purity.log2())
}

/// `N var / mean²`, NaN when the mean is zero.
pub fn v_score_from_moments(mean: f64, variance: f64, size: usize) -> f64 {
    if mean == 0.0 {
        f64::NAN
    } else {
        size as f64 * variance / (mean * mean)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VScoreResult {
    /// `None` when the mean energy is within three standard errors of zero.
    pub value: Option<f64>,
    pub mean_energy: f64,
    pub variance: f64,
}

/// V-score from a stream of local energies.
pub fn v_score(local_energies: &[f64], size: usize) -> Result<VScoreResult> {
    let m = local_energies.len();
    if m < 2 {
        return Err(Error::InsufficientData("V-score needs at least two samples".into()));
    }
    let mean = local_energies.iter().sum::<f64>() / m as f64;
    let variance = local_energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / m as f64;
    let noise = 3.0 * (variance / m as f64).sqrt();
    let value = (mean.abs() > noise && mean != 0.0).then(|| v_score_from_moments(mean, variance, size));
    Ok(VScoreResult {
        value,
        mean_energy: mean,
        variance,
    })
}

/// One row of the per-run observables table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableRow {
    #[serde(rename = "J")]
    pub coupling: f64,
    pub alpha: f64,
    #[serde(rename = "N")]
    pub size: usize,
    pub m2: f64,
    pub m2_error: f64,
    pub s2: f64,
    pub s2_error: f64,
    pub v_score: f64,
    pub energy: f64,
}

/// Append rows to a CSV file, writing the header only for a new file.
pub fn append_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let exists = path.exists() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}
