//! Finite-size-scaling collapse and smoothing utilities.
//!
//! Observables are assumed to scale as `value = N^(-2β/ν) f(N^(1/ν) (J - J_c))`.
//! The collapse quality is the local-linear master-curve chi-square: every
//! transformed point is compared against a weighted line through the
//! bracketing points of the other sizes.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SIZES: usize = 3;
pub const MIN_POINTS_PER_SIZE: usize = 5;
const VARIANCE_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    #[serde(rename = "N")]
    pub size: usize,
    #[serde(rename = "J")]
    pub coupling: f64,
    pub value: f64,
    pub error: f64,
}

/// Validated records, stored in a canonical order so that fits do not
/// depend on the input ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingDataset {
    records: Vec<ScalingRecord>,
}

impl ScalingDataset {
    pub fn new(mut records: Vec<ScalingRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.size == 0 {
                return Err(Error::Config(format!("record {i}: size must be positive")));
            }
            if !r.coupling.is_finite() || !r.value.is_finite() {
                return Err(Error::Config(format!("record {i}: non-finite J or value")));
            }
            if !(r.error > 0.0 && r.error.is_finite()) {
                return Err(Error::Config(format!("record {i}: error must be positive, got {}", r.error)));
            }
        }
        records.sort_by(|a, b| {
            a.size
                .cmp(&b.size)
                .then(a.coupling.total_cmp(&b.coupling))
                .then(a.value.total_cmp(&b.value))
                .then(a.error.total_cmp(&b.error))
        });
        let dataset = Self { records };
        let counts = dataset.counts();
        if counts.len() < MIN_SIZES {
            return Err(Error::InsufficientData(format!(
                "need at least {MIN_SIZES} distinct sizes, got {}",
                counts.len()
            )));
        }
        if let Some((n, c)) = counts.iter().find(|(_, &c)| c < MIN_POINTS_PER_SIZE) {
            return Err(Error::InsufficientData(format!(
                "size N = {n} has {c} points, need at least {MIN_POINTS_PER_SIZE}"
            )));
        }
        Ok(dataset)
    }

    fn counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.size).or_insert(0) += 1;
        }
        counts
    }

    pub fn records(&self) -> &[ScalingRecord] {
        &self.records
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.counts().into_keys().collect()
    }

    /// Records with `J` inside the window, revalidated.
    pub fn restrict(&self, window: FitWindow) -> Result<Self> {
        Self::new(
            self.records
                .iter()
                .filter(|r| r.coupling >= window.j_min && r.coupling <= window.j_max)
                .copied()
                .collect(),
        )
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["N", "J", "value", "error"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Config(format!(
                "line 1: expected header N,J,value,error, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut records = Vec::new();
        for row in rdr.deserialize::<ScalingRecord>() {
            let record = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::Config(format!("line {line}: {e}"))
            })?;
            records.push(record);
        }
        Self::new(records)
    }
}

/// Inclusive range of couplings used in a fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub j_min: f64,
    pub j_max: f64,
}

impl FitWindow {
    pub const ALL: FitWindow = FitWindow {
        j_min: f64::NEG_INFINITY,
        j_max: f64::INFINITY,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalParameters {
    pub j_c: f64,
    pub nu: f64,
    pub beta: f64,
}

impl CriticalParameters {
    fn to_array(self) -> [f64; 3] {
        [self.j_c, self.nu, self.beta]
    }

    fn from_array(p: [f64; 3]) -> Self {
        Self {
            j_c: p[0],
            nu: p[1],
            beta: p[2],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledPoint {
    pub size: usize,
    pub coupling: f64,
    pub x: f64,
    pub y: f64,
    pub y_error: f64,
}

pub fn scale_transform(record: &ScalingRecord, p: CriticalParameters) -> ScaledPoint {
    let n = record.size as f64;
    let y_factor = n.powf(2.0 * p.beta / p.nu);
    ScaledPoint {
        size: record.size,
        coupling: record.coupling,
        x: n.powf(1.0 / p.nu) * (record.coupling - p.j_c),
        y: record.value * y_factor,
        y_error: record.error * y_factor,
    }
}

/// Inverse of [`scale_transform`].
pub fn unscale(point: &ScaledPoint, p: CriticalParameters) -> ScalingRecord {
    let n = point.size as f64;
    let y_factor = n.powf(2.0 * p.beta / p.nu);
    ScalingRecord {
        size: point.size,
        coupling: point.x / n.powf(1.0 / p.nu) + p.j_c,
        value: point.y / y_factor,
        error: point.y_error / y_factor,
    }
}

pub fn collapsed_points(dataset: &ScalingDataset, p: CriticalParameters) -> Vec<ScaledPoint> {
    dataset.records().iter().map(|r| scale_transform(r, p)).collect()
}

/// Quality value and the number of points that contributed to it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quality {
    pub value: f64,
    pub compared: usize,
}

pub fn collapse_quality(dataset: &ScalingDataset, p: CriticalParameters) -> Result<f64> {
    collapse_quality_detail(dataset, p).map(|q| q.value)
}

pub fn collapse_quality_detail(dataset: &ScalingDataset, p: CriticalParameters) -> Result<Quality> {
    if !(p.nu != 0.0 && p.nu.is_finite() && p.j_c.is_finite() && p.beta.is_finite()) {
        return Err(Error::Config(format!("invalid scaling parameters {p:?}")));
    }
    let mut groups: BTreeMap<usize, Vec<ScaledPoint>> = BTreeMap::new();
    for point in collapsed_points(dataset, p) {
        groups.entry(point.size).or_default().push(point);
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.x.total_cmp(&b.x));
    }
    let mut total = 0.0;
    let mut compared = 0usize;
    for (&size, points) in &groups {
        for point in points {
            let mut neighbours: Vec<&ScaledPoint> = Vec::new();
            for (&other, others) in &groups {
                if other == size {
                    continue;
                }
                let idx = others.partition_point(|q| q.x <= point.x);
                if idx == 0 || idx == others.len() {
                    continue;
                }
                neighbours.push(&others[idx - 1]);
                neighbours.push(&others[idx]);
            }
            if neighbours.is_empty() {
                continue;
            }
            let (y_fit, var_fit) = weighted_line_at(&neighbours, point.x);
            let denom = (point.y_error * point.y_error + var_fit).max(VARIANCE_FLOOR);
            total += (point.y - y_fit).powi(2) / denom;
            compared += 1;
        }
    }
    if compared == 0 {
        let sizes: Vec<String> = groups.keys().map(|n| n.to_string()).collect();
        return Err(Error::InsufficientData(format!(
            "scaled x-ranges of sizes {} do not overlap",
            sizes.join(", ")
        )));
    }
    Ok(Quality {
        value: total / compared as f64,
        compared,
    })
}

/// Weighted least-squares line through `points`, evaluated at `x`, with the
/// variance of the fitted value.
fn weighted_line_at(points: &[&ScaledPoint], x: f64) -> (f64, f64) {
    let (mut k, mut kx, mut ky, mut kxx, mut kxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let w = 1.0 / (p.y_error * p.y_error).max(VARIANCE_FLOOR);
        k += w;
        kx += w * p.x;
        ky += w * p.y;
        kxx += w * p.x * p.x;
        kxy += w * p.x * p.y;
    }
    let delta = k * kxx - kx * kx;
    if delta.abs() <= f64::EPSILON * k * kxx.max(f64::MIN_POSITIVE) {
        // All neighbours share one x: fall back to their weighted mean.
        return (ky / k, 1.0 / k);
    }
    let y = (kxx * ky - kx * kxy) / delta + x * (k * kxy - kx * ky) / delta;
    let var = (kxx - 2.0 * x * kx + x * x * k) / delta;
    (y, var.max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub window: FitWindow,
    pub max_evaluations: usize,
    pub restarts: usize,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            window: FitWindow::ALL,
            max_evaluations: 20_000,
            restarts: 4,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalFit {
    pub j_c: f64,
    pub j_c_error: f64,
    pub nu: f64,
    pub nu_error: f64,
    pub beta: f64,
    pub beta_error: f64,
    pub quality: f64,
    pub compared_points: usize,
    pub evaluations: usize,
    pub window: FitWindow,
}

impl CriticalFit {
    pub fn parameters(&self) -> CriticalParameters {
        CriticalParameters {
            j_c: self.j_c,
            nu: self.nu,
            beta: self.beta,
        }
    }
}

/// Quality as seen by the optimiser. Parameters that leave fewer than half
/// of the points with a partner on another size are rejected, otherwise
/// the fit can trivially shrink the overlap to a few points.
fn objective(dataset: &ScalingDataset, p: [f64; 3]) -> f64 {
    if !(p[1] > 1e-3) || p.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    match collapse_quality_detail(dataset, CriticalParameters::from_array(p)) {
        Ok(q) if 2 * q.compared >= dataset.records().len() => q.value,
        _ => f64::INFINITY,
    }
}

struct Minimum {
    point: [f64; 3],
    value: f64,
    evaluations: usize,
    converged: bool,
}

fn nelder_mead<F: Fn([f64; 3]) -> f64>(f: &F, start: [f64; 3], max_eval: usize, tol: f64) -> Minimum {
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    simplex.push((start, f(start)));
    for k in 0..3 {
        let mut p = start;
        p[k] += if p[k].abs() > 1e-8 { 0.1 * p[k].abs() } else { 0.05 };
        simplex.push((p, f(p)));
    }
    let mut evaluations = 4;
    let mut converged = false;
    while evaluations < max_eval {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[3].1;
        let spread = simplex
            .iter()
            .flat_map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if best.is_finite() && (worst - best).abs() <= tol * (best.abs() + tol) && spread < 1e-9 {
            converged = true;
            break;
        }
        let mut centroid = [0.0; 3];
        for (p, _) in &simplex[..3] {
            for k in 0..3 {
                centroid[k] += p[k] / 3.0;
            }
        }
        let along = |t: f64| -> [f64; 3] {
            let w = simplex[3].0;
            [
                centroid[0] + t * (w[0] - centroid[0]),
                centroid[1] + t * (w[1] - centroid[1]),
                centroid[2] + t * (w[2] - centroid[2]),
            ]
        };
        let reflected = along(-1.0);
        let fr = f(reflected);
        evaluations += 1;
        if fr < simplex[0].1 {
            let expanded = along(-2.0);
            let fe = f(expanded);
            evaluations += 1;
            simplex[3] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < simplex[3].1 {
                let c = along(-0.5);
                (c, f(c))
            } else {
                let c = along(0.5);
                (c, f(c))
            };
            evaluations += 1;
            if fc < fr.min(simplex[3].1) {
                simplex[3] = (contracted, fc);
            } else {
                let b = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    let p = [
                        b[0] + 0.5 * (entry.0[0] - b[0]),
                        b[1] + 0.5 * (entry.0[1] - b[1]),
                        b[2] + 0.5 * (entry.0[2] - b[2]),
                    ];
                    *entry = (p, f(p));
                }
                evaluations += 3;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    Minimum {
        point: simplex[0].0,
        value: simplex[0].1,
        evaluations,
        converged,
    }
}

/// Standard errors from the curvature of `n · quality` (a chi-square) at
/// the optimum, using `Δχ² = 1`.
fn curvature_errors<F: Fn([f64; 3]) -> f64>(f: &F, at: [f64; 3], compared: usize) -> [f64; 3] {
    let h: Vec<f64> = at.iter().map(|v| 1e-4 * v.abs().max(0.1)).collect();
    let f0 = f(at);
    let shifted = |d: &[(usize, f64)]| {
        let mut p = at;
        for &(k, s) in d {
            p[k] += s;
        }
        f(p)
    };
    let mut hess = DMatrix::<f64>::zeros(3, 3);
    for i in 0..3 {
        hess[(i, i)] = (shifted(&[(i, h[i])]) - 2.0 * f0 + shifted(&[(i, -h[i])])) / (h[i] * h[i]);
        for j in 0..i {
            let v = (shifted(&[(i, h[i]), (j, h[j])]) - shifted(&[(i, h[i]), (j, -h[j])])
                - shifted(&[(i, -h[i]), (j, h[j])])
                + shifted(&[(i, -h[i]), (j, -h[j])]))
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess *= compared as f64;
    let cov = hess.clone().cholesky().map(|c| c.inverse());
    let mut out = [f64::NAN; 3];
    for k in 0..3 {
        out[k] = match &cov {
            Some(c) => (2.0 * c[(k, k)]).sqrt(),
            None if hess[(k, k)] > 0.0 => (2.0 / hess[(k, k)]).sqrt(),
            None => f64::NAN,
        };
    }
    out
}

pub fn fit_critical(
    dataset: &ScalingDataset,
    initial: CriticalParameters,
    options: &FitOptions,
) -> Result<CriticalFit> {
    if initial.to_array().iter().any(|v| !v.is_finite()) || initial.nu <= 0.0 {
        return Err(Error::Config(format!("initial guess must be finite with ν > 0, got {initial:?}")));
    }
    let data = dataset.restrict(options.window)?;
    collapse_quality(&data, initial)?;
    let f = |p: [f64; 3]| objective(&data, p);
    let mut best = nelder_mead(&f, initial.to_array(), options.max_evaluations, options.tolerance);
    let mut evaluations = best.evaluations;
    for _ in 0..options.restarts {
        if evaluations >= options.max_evaluations {
            break;
        }
        let next = nelder_mead(&f, best.point, options.max_evaluations - evaluations, options.tolerance);
        evaluations += next.evaluations;
        let improved = best.value - next.value;
        let done = next.converged && improved <= options.tolerance * (best.value.abs() + options.tolerance);
        if next.value <= best.value {
            best = next;
        }
        if done {
            break;
        }
    }
    if !best.converged || !best.value.is_finite() {
        return Err(Error::Numerical(format!(
            "collapse fit did not converge within {} evaluations (quality {})",
            options.max_evaluations, best.value
        )));
    }
    let params = CriticalParameters::from_array(best.point);
    let detail = collapse_quality_detail(&data, params)?;
    let errors = curvature_errors(&f, best.point, detail.compared);
    Ok(CriticalFit {
        j_c: params.j_c,
        j_c_error: errors[0],
        nu: params.nu,
        nu_error: errors[1],
        beta: params.beta,
        beta_error: errors[2],
        quality: detail.value,
        compared_points: detail.compared,
        evaluations,
        window: options.window,
    })
}

/// Local least-squares polynomial smoothing on a uniform grid. Near the
/// edges the window is truncated to the available points.
pub fn savitzky_golay(series: &[f64], window: usize, poly_order: usize) -> Result<Vec<f64>> {
    if window % 2 == 0 || window <= poly_order {
        return Err(Error::Config(format!(
            "Savitzky-Golay needs an odd window larger than the order, got window {window}, order {poly_order}"
        )));
    }
    let half = window / 2;
    let len = series.len();
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(len - 1);
        let count = hi - lo + 1;
        let order = poly_order.min(count - 1);
        let a = DMatrix::from_fn(count, order + 1, |r, c| ((lo + r) as f64 - i as f64).powi(c as i32));
        let b = DVector::from_column_slice(&series[lo..=hi]);
        let coeffs = a
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| Error::Numerical(format!("Savitzky-Golay solve failed: {e}")))?;
        out.push(coeffs[0]);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedCritical {
    pub j_tilde: f64,
    pub h_tilde: f64,
    pub theta: f64,
}

/// Kac-rescaled coupling `|J_c|/Ñ`, field ratio `1/J̃_c` and angle `arctan(1/h̃_c)`.
pub fn derived_critical_quantities(j_c: f64, kac: f64) -> Result<DerivedCritical> {
    if !(kac > 0.0) || j_c == 0.0 || !j_c.is_finite() {
        return Err(Error::Config(format!("need Ñ > 0 and J_c ≠ 0, got Ñ = {kac}, J_c = {j_c}")));
    }
    let j_tilde = j_c.abs() / kac;
    let h_tilde = 1.0 / j_tilde;
    Ok(DerivedCritical {
        j_tilde,
        h_tilde,
        theta: (1.0 / h_tilde).atan(),
    })
}

/// Synthetic data on `f(x) = 1/(1+x²)` with relative Gaussian noise.
pub fn synthetic_dataset<R: rand::Rng>(
    sizes: &[usize],
    points_per_size: usize,
    x_range: (f64, f64),
    p: CriticalParameters,
    relative_noise: f64,
    rng: &mut R,
) -> Result<ScalingDataset> {
    use rand_distr::{Distribution, StandardNormal};
    let mut records = Vec::new();
    for &size in sizes {
        let n = size as f64;
        for k in 0..points_per_size {
            let t = k as f64 / (points_per_size - 1).max(1) as f64;
            let x = x_range.0 + t * (x_range.1 - x_range.0);
            let clean = n.powf(-2.0 * p.beta / p.nu) / (1.0 + x * x);
            let xi: f64 = StandardNormal.sample(rng);
            let error = if relative_noise > 0.0 { relative_noise * clean } else { 1e-3 * clean };
            records.push(ScalingRecord {
                size,
                coupling: p.j_c + x / n.powf(1.0 / p.nu),
                value: clean + relative_noise * clean * xi,
                error,
            });
        }
    }
    ScalingDataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TRUE: CriticalParameters = CriticalParameters {
        j_c: 1.0,
        nu: 1.0,
        beta: 0.125,
    };

    fn synthetic(seed: u64, noise: f64) -> ScalingDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        synthetic_dataset(&[50, 100, 150], 21, (-3.0, 3.0), TRUE, noise, &mut rng).unwrap()
    }

    #[test]
    fn transform_limits() {
        let r = ScalingRecord {
            size: 20,
            coupling: 1.0,
            value: 0.3,
            error: 0.01,
        };
        let p = CriticalParameters {
            j_c: 1.0,
            nu: 0.8,
            beta: 0.0,
        };
        let s = scale_transform(&r, p);
        assert_eq!(s.x, 0.0);
        assert_eq!(s.y, 0.3);
        assert_eq!(s.y_error, 0.01);
    }

    #[test]
    fn synthetic_points_lie_on_master_curve() {
        for p in collapsed_points(&synthetic(1, 0.0), TRUE) {
            assert_relative_eq!(p.y, 1.0 / (1.0 + p.x * p.x), epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn transform_is_invertible(
            n in 2usize..200, j in -5.0f64..5.0, v in 0.01f64..2.0, e in 1e-4f64..0.1,
            jc in -3.0f64..3.0, nu in 0.3f64..3.0, beta in -0.5f64..0.5,
        ) {
            let r = ScalingRecord { size: n, coupling: j, value: v, error: e };
            let p = CriticalParameters { j_c: jc, nu, beta };
            let back = unscale(&scale_transform(&r, p), p);
            prop_assert!((back.coupling - j).abs() < 1e-9);
            prop_assert!((back.value - v).abs() < 1e-12 * v.max(1.0) * 1e3);
            prop_assert!((back.error - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_invariants() {
        let one_size: Vec<_> = synthetic(2, 0.01).records().iter().filter(|r| r.size == 50).copied().collect();
        assert!(matches!(ScalingDataset::new(one_size), Err(Error::InsufficientData(_))));
        let mut bad = synthetic(2, 0.01).records().to_vec();
        bad[3].error = 0.0;
        assert!(ScalingDataset::new(bad).is_err());
        let mut few = synthetic(2, 0.01).records().to_vec();
        few.retain(|r| r.size != 100 || r.coupling < 1.0 - 2.0 / 100.0);
        assert!(ScalingDataset::new(few).is_err());
    }

    #[test]
    fn noiseless_linear_collapse_is_perfect() {
        let records = [20usize, 40, 80]
            .iter()
            .flat_map(|&n| {
                (0..9).map(move |i| {
                    let x = -2.0 + 0.5 * i as f64 + 0.1 * (n / 20) as f64;
                    let y = 0.3 + 0.2 * x;
                    let scale = (n as f64).powf(-0.25);
                    ScalingRecord {
                        size: n,
                        coupling: 1.0 + x / n as f64,
                        value: y * scale,
                        error: 1e-9 * scale,
                    }
                })
            })
            .collect();
        let q = collapse_quality(&ScalingDataset::new(records).unwrap(), TRUE).unwrap();
        assert!(q < 1e-6, "quality {q}");
    }

    #[test]
    fn noisy_collapse_has_unit_quality() {
        let mut mean = 0.0;
        for seed in 0..10 {
            let q = collapse_quality(&synthetic(100 + seed, 0.01), TRUE).unwrap();
            mean += q / 10.0;
        }
        assert!((mean - 1.0).abs() < 0.3, "mean quality {mean}");
    }

    #[test]
    fn true_parameters_beat_perturbations() {
        let data = synthetic(7, 0.01);
        let q0 = collapse_quality(&data, TRUE).unwrap();
        let wrong_nu = CriticalParameters { nu: 3.0, ..TRUE };
        assert!(collapse_quality(&data, wrong_nu).unwrap() > q0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let k = rand::Rng::random_range(&mut rng, 0..3);
            let sign = if rand::Rng::random_bool(&mut rng, 0.5) { 1.2 } else { 0.8 };
            let mut p = TRUE.to_array();
            p[k] *= sign;
            // A shift that destroys the overlap is the worst possible collapse.
            let q = collapse_quality(&data, CriticalParameters::from_array(p)).unwrap_or(f64::INFINITY);
            assert!(q0 <= q, "perturbation {p:?}: {q} < {q0}");
        }
    }

    #[test]
    fn non_overlapping_sizes_are_named() {
        let p = CriticalParameters { j_c: 0.0, ..TRUE };
        let records: Vec<_> = [10usize, 20, 30]
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| {
                (0..5).map(move |i| ScalingRecord {
                    size: n,
                    coupling: (10 * k + i) as f64 / n as f64,
                    value: 1.0,
                    error: 0.1,
                })
            })
            .collect();
        let err = collapse_quality(&ScalingDataset::new(records).unwrap(), p).unwrap_err();
        assert!(err.to_string().contains("10, 20, 30"), "{err}");
    }

    #[test]
    fn fit_recovers_synthetic_parameters() {
        let data = synthetic(21, 0.01);
        let guess = CriticalParameters {
            j_c: 1.02,
            nu: 0.8,
            beta: 0.2,
        };
        let fit = fit_critical(&data, guess, &FitOptions::default()).unwrap();
        assert!((fit.j_c - 1.0).abs() < 0.01, "{fit:?}");
        assert!((fit.nu - 1.0).abs() < 0.05, "{fit:?}");
        assert!((fit.beta - 0.125).abs() < 0.05 * 0.125, "{fit:?}");
        assert!(fit.j_c_error > 0.0 && fit.nu_error > 0.0 && fit.beta_error > 0.0, "{fit:?}");
    }

    #[test]
    fn fit_ignores_record_order() {
        let data = synthetic(5, 0.01);
        let mut reversed = data.records().to_vec();
        reversed.reverse();
        let guess = CriticalParameters {
            j_c: 0.99,
            nu: 1.1,
            beta: 0.1,
        };
        let a = fit_critical(&data, guess, &FitOptions::default()).unwrap();
        let b = fit_critical(&ScalingDataset::new(reversed).unwrap(), guess, &FitOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn window_restricts_records() {
        let data = synthetic(5, 0.01);
        let window = FitWindow { j_min: 0.98, j_max: 1.02 };
        let inside = data.restrict(window).unwrap();
        assert!(inside.records().len() < data.records().len());
        assert!(inside.records().iter().all(|r| (0.98..=1.02).contains(&r.coupling)));
    }

    #[test]
    fn savitzky_golay_reproduces_polynomials() {
        let poly: Vec<f64> = (0..30).map(|i| 0.5 - 0.3 * i as f64 + 0.02 * (i * i) as f64).collect();
        let smooth = savitzky_golay(&poly, 7, 2).unwrap();
        for (a, b) in poly.iter().zip(&smooth) {
            assert!((a - b).abs() < 1e-10);
        }
        let flat = savitzky_golay(&[2.5; 9], 5, 3).unwrap();
        assert!(flat.iter().all(|v| (v - 2.5).abs() < 1e-12));
        assert!(savitzky_golay(&poly, 6, 2).is_err());
        assert!(savitzky_golay(&poly, 3, 3).is_err());
    }

    #[test]
    fn savitzky_golay_reduces_noise() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let clean: Vec<f64> = (0..200).map(|i| (i as f64 * 0.05).sin()).collect();
        let noisy: Vec<f64> = clean.iter().map(|c| c + noise.sample(&mut rng)).collect();
        let smooth = savitzky_golay(&noisy, 7, 2).unwrap();
        let mse = |v: &[f64]| v.iter().zip(&clean).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 200.0;
        assert!(mse(&smooth) < 0.6 * mse(&noisy));
    }

    #[test]
    fn derived_quantities_match_table_values() {
        let fm = derived_critical_quantities(-2.963, 3.0346).unwrap();
        assert!((fm.h_tilde - 1.0242).abs() < 1e-3);
        assert!((fm.theta - 0.7734).abs() < 1e-3);
        let unit = derived_critical_quantities(2.0, 2.0).unwrap();
        assert_relative_eq!(unit.theta, std::f64::consts::FRAC_PI_4, epsilon = 1e-15);
        assert!(derived_critical_quantities(0.0, 2.0).is_err());
    }

    #[test]
    fn csv_errors_name_the_line() {
        let good = "N,J,value,error\n8,1.0,0.5,0.01\n";
        assert!(matches!(ScalingDataset::from_reader(good.as_bytes()), Err(Error::InsufficientData(_))));
        let bad = "N,J,value,error\n8,1.0,0.5,0.01\n8,oops,0.5,0.01\n";
        let err = ScalingDataset::from_reader(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let header = "n,J,value,error\n";
        assert!(ScalingDataset::from_reader(header.as_bytes()).unwrap_err().to_string().contains("line 1"));
    }
}
