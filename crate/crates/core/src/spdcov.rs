//! Covariance descriptors: flat covariance, the H-COV temporal pyramid and
//! ker-COV over a random Fourier lift.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtw::{GramMatrix, Provenance};
use crate::error::{Error, Result};
use crate::linalg;

/// Regularizer added to the diagonal before taking matrix logarithms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularization {
    Absolute(f64),
    /// `factor * mean(diag(C))`, never below [`MIN_LAMBDA`].
    RelativeToMeanDiagonal(f64),
}

/// Floor for relative regularization so constant windows stay definite.
pub const MIN_LAMBDA: f64 = 1e-9;

impl Default for Regularization {
    fn default() -> Self {
        Regularization::RelativeToMeanDiagonal(1e-6)
    }
}

impl Regularization {
    pub fn resolve(&self, unregularized: &DMatrix<f64>) -> f64 {
        match *self {
            Regularization::Absolute(l) => l,
            Regularization::RelativeToMeanDiagonal(f) => {
                let d = unregularized.nrows().max(1) as f64;
                (f * unregularized.trace() / d).max(MIN_LAMBDA)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpdDescriptor {
    #[serde(with = "crate::serde_matrix")]
    pub matrix: DMatrix<f64>,
    pub lambda: f64,
    /// Source window as fractions of the trial length.
    pub window: (f64, f64),
}

fn population_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let means = linalg::column_means(x);
    let mut centered = x.clone();
    for (mut col, m) in centered.column_iter_mut().zip(means.iter()) {
        col.add_scalar_mut(-m);
    }
    let c = centered.transpose() * &centered / x.nrows() as f64;
    (&c + c.transpose()) * 0.5
}

/// `C = (1/T) Σ (x_t - μ)(x_t - μ)ᵀ + λI` over the rows of `x` (T x d).
pub fn covariance_descriptor(x: &DMatrix<f64>, lambda: f64) -> Result<SpdDescriptor> {
    if x.nrows() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: x.nrows(),
        });
    }
    let mut c = population_covariance(x);
    for i in 0..c.nrows() {
        c[(i, i)] += lambda;
    }
    Ok(SpdDescriptor {
        matrix: c,
        lambda,
        window: (0.0, 1.0),
    })
}

/// Covariance with the regularizer resolved from the data.
pub fn regularized_covariance(x: &DMatrix<f64>, reg: Regularization) -> Result<SpdDescriptor> {
    if x.nrows() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: x.nrows(),
        });
    }
    let lambda = reg.resolve(&population_covariance(x));
    covariance_descriptor(x, lambda)
}

/// Upper triangle of a symmetric matrix, row by row, off-diagonals times √2.
pub fn vech_scaled(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            out.push(if i == j { m[(i, j)] } else { m[(i, j)] * std::f64::consts::SQRT_2 });
        }
    }
    out
}

/// Inverse of [`vech_scaled`].
pub fn unvech_scaled(v: &[f64]) -> Result<DMatrix<f64>> {
    let d = (((8 * v.len() + 1) as f64).sqrt() as usize - 1) / 2;
    if d * (d + 1) / 2 != v.len() {
        return Err(Error::DimensionMismatch {
            expected: d * (d + 1) / 2,
            got: v.len(),
        });
    }
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            let x = if i == j { v[k] } else { v[k] / std::f64::consts::SQRT_2 };
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    Ok(m)
}

/// Principal matrix logarithm of an SPD matrix.
pub fn spd_log(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = linalg::symmetric_eigen(m)?;
    let min = values.last().copied().unwrap_or(1.0);
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite(min));
    }
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    Ok(linalg::reconstruct(&logs, &vectors))
}

/// `vech(log C)` with √2-scaled off-diagonals, so dot products equal
/// Frobenius inner products of the logarithms.
pub fn log_euclidean_vec(desc: &SpdDescriptor) -> Result<Vec<f64>> {
    Ok(vech_scaled(&spd_log(&desc.matrix)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HCovConfig {
    pub levels: usize,
    pub overlap: bool,
    pub regularization: Regularization,
}

impl Default for HCovConfig {
    fn default() -> Self {
        HCovConfig {
            levels: 3,
            overlap: true,
            regularization: Regularization::default(),
        }
    }
}

impl HCovConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 16 {
            return Err(Error::InvalidConfig(format!("H-COV levels must be in 1..=16, got {}", self.levels)));
        }
        Ok(())
    }

    pub fn window_count(&self) -> usize {
        (1..=self.levels)
            .map(|l| {
                let n = 1usize << (l - 1);
                if self.overlap {
                    2 * n - 1
                } else {
                    n
                }
            })
            .sum()
    }

    pub fn min_len(&self) -> usize {
        2 << (self.levels - 1)
    }
}

/// Frame ranges `[start, end)` of the pyramid, in (level, start) order.
pub fn hcov_windows(len: usize, config: &HCovConfig) -> Result<Vec<(usize, usize)>> {
    config.validate()?;
    if len < config.min_len() {
        return Err(Error::TooShort {
            needed: config.min_len(),
            got: len,
        });
    }
    let mut out = Vec::with_capacity(config.window_count());
    for l in 1..=config.levels {
        let n = 1usize << (l - 1);
        // window boundaries in units of len / (2n), so half shifts stay integral
        let mut starts: Vec<usize> = (0..n).map(|i| 2 * i).collect();
        if config.overlap {
            starts.extend((0..n - 1).map(|i| 2 * i + 1));
        }
        starts.sort_unstable();
        out.extend(starts.into_iter().map(|s| (s * len / (2 * n), (s + 2) * len / (2 * n))));
    }
    Ok(out)
}

/// Concatenated log-Euclidean vectors of every pyramid window.
pub fn hcov_descriptor(x: &DMatrix<f64>, config: &HCovConfig) -> Result<Vec<f64>> {
    let len = x.nrows();
    let windows = hcov_windows(len, config)?;
    let mut out = Vec::new();
    for (s, e) in windows {
        let w = x.rows(s, e - s).into_owned();
        let mut desc = regularized_covariance(&w, config.regularization)?;
        desc.window = (s as f64 / len as f64, e as f64 / len as f64);
        out.extend(log_euclidean_vec(&desc)?);
    }
    Ok(out)
}

/// Random Fourier features for the Gaussian kernel
/// `exp(-|x - y|² / (2 γ²))`: `z(x) = √(2/D) cos(Ωx + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierLift {
    pub bandwidth: f64,
    pub seed: u64,
    #[serde(with = "crate::serde_matrix")]
    omega: DMatrix<f64>,
    phase: Vec<f64>,
}

impl FourierLift {
    pub fn new(dim: usize, n_lift: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidBandwidth(bandwidth));
        }
        if n_lift < dim {
            return Err(Error::InvalidConfig(format!("n_lift {n_lift} must be at least the input dimension {dim}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = DMatrix::from_fn(n_lift, dim, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            z / bandwidth
        });
        let phase = (0..n_lift).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        Ok(FourierLift {
            bandwidth,
            seed,
            omega,
            phase,
        })
    }

    pub fn n_lift(&self) -> usize {
        self.omega.nrows()
    }

    pub fn dim(&self) -> usize {
        self.omega.ncols()
    }

    /// Lifts the rows of `x` (T x d) to T x n_lift.
    pub fn lift(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let scale = (2.0 / self.n_lift() as f64).sqrt();
        let mut z = x * self.omega.transpose();
        for (mut col, b) in z.column_iter_mut().zip(&self.phase) {
            col.apply(|v| *v = scale * (*v + b).cos());
        }
        Ok(z)
    }

    /// Log-Euclidean vector of the lifted covariance of one trial.
    pub fn descriptor(&self, x: &DMatrix<f64>, reg: Regularization) -> Result<Vec<f64>> {
        log_euclidean_vec(&regularized_covariance(&self.lift(x)?, reg)?)
    }
}

/// Median pairwise Euclidean distance between frames, over at most
/// `max_frames` frames taken at a regular stride through all trials.
pub fn median_frame_distance(trials: &[DMatrix<f64>], max_frames: usize) -> f64 {
    let total: usize = trials.iter().map(|t| t.nrows()).sum();
    let stride = total.div_ceil(max_frames.max(2)).max(1);
    let frames: Vec<Vec<f64>> = trials
        .iter()
        .flat_map(|t| t.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
        .step_by(stride)
        .collect();
    let mut d = Vec::with_capacity(frames.len() * frames.len() / 2);
    for i in 0..frames.len() {
        for j in i + 1..frames.len() {
            d.push(frames[i].iter().zip(&frames[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    match linalg::median(&mut d) {
        Some(v) if v > 0.0 => v,
        _ => 1.0,
    }
}

/// Linear Gram of ker-COV vectors; an approximation recorded as such in
/// the provenance.
pub fn kercov_gram(
    trials: &[DMatrix<f64>],
    ids: Vec<String>,
    bandwidth: f64,
    n_lift: usize,
    seed: u64,
) -> Result<GramMatrix> {
    let dim = trials.first().map_or(0, |t| t.ncols());
    let lift = FourierLift::new(dim, n_lift, bandwidth, seed)?;
    let vectors: Vec<Vec<f64>> = trials
        .par_iter()
        .map(|t| lift.descriptor(t, Regularization::default()))
        .collect::<Result<_>>()?;
    let v = linalg::rows_to_matrix(&vectors);
    GramMatrix::new(
        &v * v.transpose(),
        ids,
        Provenance::KerCov {
            bandwidth,
            n_lift,
            seed,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_x(t: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(t, d, |_, _| rng.random_range(-1.0..1.0))
    }

    /// exp of a symmetric matrix by scaling and squaring of the Taylor
    /// series; no eigendecomposition involved.
    fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
        let norm = m.abs().max();
        let squarings = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
        let a = m / 2f64.powi(squarings);
        let n = m.nrows();
        let mut term = DMatrix::identity(n, n);
        let mut sum = DMatrix::identity(n, n);
        for k in 1..30 {
            term = &term * &a / k as f64;
            sum += &term;
        }
        for _ in 0..squarings {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn covariance_examples() {
        let c = covariance_descriptor(&DMatrix::from_element(5, 3, 2.0), 0.0).unwrap();
        assert_eq!(c.matrix, DMatrix::zeros(3, 3));
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let c = covariance_descriptor(&x, 0.0).unwrap();
        assert_eq!(c.matrix, DMatrix::from_element(2, 2, 0.25));
        assert!(matches!(covariance_descriptor(&DMatrix::zeros(1, 2), 0.0), Err(Error::TooShort { .. })));
    }

    #[test]
    fn covariance_invariances() {
        let x = random_x(30, 4, 1);
        let base = covariance_descriptor(&x, 0.0).unwrap().matrix;
        let shifted = x.map(|v| v + 7.5);
        assert!((covariance_descriptor(&shifted, 0.0).unwrap().matrix - &base).abs().max() < 1e-12);
        let rows: Vec<usize> = (0..30).rev().collect();
        let perm = linalg::select_rows(&x, &rows);
        assert!((covariance_descriptor(&perm, 0.0).unwrap().matrix - &base).abs().max() < 1e-12);
        let scaled = covariance_descriptor(&(&x * 3.0), 0.0).unwrap().matrix;
        assert!((scaled - &base * 9.0).abs().max() < 1e-12);
        let c = covariance_descriptor(&x, 0.1).unwrap();
        assert!(linalg::min_eigenvalue(&c.matrix).unwrap() >= 0.05);
    }

    #[test]
    fn log_scaling_identity() {
        let x = random_x(40, 4, 2);
        let c = covariance_descriptor(&x, 0.0).unwrap().matrix;
        let s: f64 = 2.5;
        let la = spd_log(&c).unwrap();
        let lb = spd_log(&(&c * (s * s))).unwrap();
        let expected = la + DMatrix::identity(4, 4) * (2.0 * s.ln());
        assert!((lb - expected).abs().max() < 1e-9);
    }

    #[test]
    fn log_euclidean_examples() {
        let id = SpdDescriptor {
            matrix: DMatrix::identity(3, 3),
            lambda: 0.0,
            window: (0.0, 1.0),
        };
        assert!(log_euclidean_vec(&id).unwrap().iter().all(|v| v.abs() < 1e-15));
        let e = std::f64::consts::E;
        let diag = SpdDescriptor {
            matrix: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![e, e * e])),
            ..id.clone()
        };
        let v = log_euclidean_vec(&diag).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12 && (v[2] - 2.0).abs() < 1e-12);
        let bad = SpdDescriptor {
            matrix: DMatrix::zeros(2, 2),
            ..id
        };
        assert!(matches!(log_euclidean_vec(&bad), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn log_euclidean_round_trip_through_taylor_exp() {
        for seed in 0..5 {
            let x = random_x(25, 4, 10 + seed);
            let c = covariance_descriptor(&x, 0.05).unwrap();
            let v = log_euclidean_vec(&c).unwrap();
            let back = expm(&unvech_scaled(&v).unwrap());
            assert!((back - &c.matrix).abs().max() < 1e-8);
        }
    }

    #[test]
    fn log_euclidean_dot_is_frobenius() {
        let a = covariance_descriptor(&random_x(20, 3, 5), 0.01).unwrap();
        let b = covariance_descriptor(&random_x(20, 3, 6), 0.01).unwrap();
        let va = log_euclidean_vec(&a).unwrap();
        let vb = log_euclidean_vec(&b).unwrap();
        let dot: f64 = va.iter().zip(&vb).map(|(p, q)| p * q).sum();
        let frob = spd_log(&a.matrix).unwrap().component_mul(&spd_log(&b.matrix).unwrap()).sum();
        assert!((dot - frob).abs() < 1e-10);
    }

    #[test]
    fn pyramid_windows() {
        let cfg = HCovConfig::default();
        assert_eq!(cfg.window_count(), 11);
        let w = hcov_windows(100, &cfg).unwrap();
        assert_eq!(w.len(), 11);
        assert_eq!(w[0], (0, 100));
        assert_eq!(&w[1..4], &[(0, 50), (25, 75), (50, 100)]);
        assert_eq!(w[4], (0, 25));
        assert_eq!(w[10], (75, 100));
        let mut covered = vec![false; 100];
        for (s, e) in &w {
            covered[*s..*e].iter_mut().for_each(|c| *c = true);
        }
        assert!(covered.iter().all(|&c| c));
        assert!(matches!(hcov_windows(7, &cfg), Err(Error::TooShort { needed: 8, .. })));
        assert_eq!(hcov_windows(8, &cfg).unwrap().iter().map(|(s, e)| e - s).min(), Some(2));
        let flat = HCovConfig {
            overlap: false,
            ..cfg
        };
        assert_eq!(flat.window_count(), 7);
    }

    #[test]
    fn hcov_single_level_and_length() {
        let x = random_x(40, 5, 3);
        let one = HCovConfig {
            levels: 1,
            ..HCovConfig::default()
        };
        let expected = log_euclidean_vec(&regularized_covariance(&x, Regularization::default()).unwrap()).unwrap();
        assert_eq!(hcov_descriptor(&x, &one).unwrap(), expected);
        let rows: Vec<usize> = (0..40).rev().collect();
        let rev = hcov_descriptor(&linalg::select_rows(&x, &rows), &one).unwrap();
        for (a, b) in rev.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
        let wide = random_x(64, 60, 4);
        assert_eq!(hcov_descriptor(&wide, &HCovConfig::default()).unwrap().len(), 11 * 1830);
    }

    #[test]
    fn kercov_identical_trials_give_equal_rows() {
        let a = random_x(30, 3, 7);
        let b = random_x(30, 3, 8);
        let g = kercov_gram(&[a.clone(), b, a], vec!["a".into(), "b".into(), "c".into()], 1.0, 8, 42).unwrap();
        assert_eq!(g.matrix().row(0), g.matrix().row(2));
        assert!(g.is_psd().unwrap());
        assert!(matches!(
            kercov_gram(&[random_x(5, 3, 1)], vec!["x".into()], 0.0, 8, 1),
            Err(Error::InvalidBandwidth(_))
        ));
    }

    #[test]
    fn fourier_lift_approximates_gaussian() {
        let lift = FourierLift::new(2, 4000, 1.5, 3).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.5]);
        let z = lift.lift(&x).unwrap();
        let approx = z.row(0).dot(&z.row(1));
        let exact = (-(1.25f64) / (2.0 * 1.5 * 1.5)).exp();
        assert!((approx - exact).abs() < 0.05);
    }
}
