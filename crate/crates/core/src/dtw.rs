//! Multivariate dynamic time warping, distance matrices, K-nn voting and
//! the graph-Laplacian kernel.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// A `d`-channel sequence stored frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    dim: usize,
    data: Vec<f64>,
}

impl Sequence {
    /// From frame-major data.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim.max(1),
                got: data.len(),
            });
        }
        Ok(Sequence { dim, data })
    }

    /// From channels of equal length.
    pub fn from_channels(channels: &[Vec<f64>]) -> Result<Self> {
        let dim = channels.len();
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::DimensionMismatch {
                expected: len,
                got: channels.iter().map(Vec::len).find(|&l| l != len).unwrap(),
            });
        }
        let mut data = Vec::with_capacity(dim * len);
        for t in 0..len {
            data.extend(channels.iter().map(|c| c[t]));
        }
        Sequence::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Applies `(x - offset) / scale` channel-wise.
    pub fn standardized(&self, offset: &[f64], scale: &[f64]) -> Sequence {
        let data = self
            .data
            .chunks(self.dim)
            .flat_map(|f| f.iter().zip(offset).zip(scale).map(|((v, o), s)| (v - o) / s))
            .collect();
        Sequence {
            dim: self.dim,
            data,
        }
    }

    pub(crate) fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtwOptions {
    /// Use squared Euclidean local cost instead of Euclidean.
    pub squared_cost: bool,
}

/// Minimum summed local cost over monotone warping paths with steps
/// (1,0), (0,1), (1,1) and aligned endpoints.
pub fn dtw_distance(x: &Sequence, y: &Sequence) -> Result<f64> {
    dtw_distance_with(x, y, DtwOptions::default())
}

pub fn dtw_distance_with(x: &Sequence, y: &Sequence, options: DtwOptions) -> Result<f64> {
    if x.dim != y.dim {
        return Err(Error::DimensionMismatch {
            expected: x.dim,
            got: y.dim,
        });
    }
    let m = y.len();
    let cost = |a: &[f64], b: &[f64]| {
        let sq: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        if options.squared_cost {
            sq
        } else {
            sq.sqrt()
        }
    };
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![0.0; m];
    for (i, a) in x.frames().enumerate() {
        for (j, b) in y.frames().enumerate() {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { f64::INFINITY };
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                diag.min(prev[j]).min(left)
            };
            cur[j] = best + cost(a, b);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Symmetric matrix of pairwise distances with row/column identifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    matrix: DMatrix<f64>,
    ids: Vec<String>,
}

impl DistanceMatrix {
    pub fn new(matrix: DMatrix<f64>, ids: Vec<String>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n || ids.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: matrix.ncols().max(ids.len()),
            });
        }
        for i in 0..n {
            if matrix[(i, i)] != 0.0 {
                return Err(Error::InvalidDataset("distance matrix diagonal must be zero".into()));
            }
            for j in 0..i {
                let v = matrix[(i, j)];
                if !(v >= 0.0 && v.is_finite()) || v != matrix[(j, i)] {
                    return Err(Error::InvalidDataset(format!(
                        "distance matrix entry ({i},{j}) is negative, non-finite or asymmetric"
                    )));
                }
            }
        }
        Ok(DistanceMatrix { matrix, ids })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_labelled_csv(&self.matrix, &self.ids, path)
    }
}

/// All pairwise DTW distances; each unordered pair is evaluated once.
pub fn distance_matrix(sequences: &[Sequence], ids: Vec<String>) -> Result<DistanceMatrix> {
    distance_matrix_with(sequences, ids, DtwOptions::default())
}

pub fn distance_matrix_with(
    sequences: &[Sequence],
    ids: Vec<String>,
    options: DtwOptions,
) -> Result<DistanceMatrix> {
    let n = sequences.len();
    if n == 0 {
        return Err(Error::InvalidDataset("no sequences".into()));
    }
    let dim = sequences[0].dim;
    if let Some(bad) = sequences.iter().find(|s| s.dim != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.dim,
        });
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| dtw_distance_with(&sequences[i], &sequences[j], options))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (k, &d) in row.iter().enumerate() {
            let j = i + 1 + k;
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
    }
    DistanceMatrix::new(m, ids)
}

/// Rectangular DTW distances: rows follow `a`, columns follow `b`.
pub fn cross_distances(a: &[Sequence], b: &[Sequence], options: DtwOptions) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = a
        .par_iter()
        .map(|x| b.iter().map(|y| dtw_distance_with(x, y, options)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| rows[i][j]))
}

/// Majority vote among the `k` nearest training points.
///
/// `distances[j]` is the distance to training point `j`. Equal distances
/// are ordered by training position; tied vote counts go to the class
/// with the smaller summed neighbor distance, then the smaller label.
pub fn knn_vote(distances: &[f64], labels: &[usize], k: usize) -> Result<usize> {
    if k == 0 || k > labels.len() {
        return Err(Error::KTooLarge {
            k,
            available: labels.len(),
        });
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut votes = vec![0usize; n_classes];
    let mut sums = vec![0.0; n_classes];
    for &j in &order[..k] {
        votes[labels[j]] += 1;
        sums[labels[j]] += distances[j];
    }
    let best = (0..n_classes)
        .filter(|&c| votes[c] > 0)
        .min_by(|&a, &b| {
            votes[b]
                .cmp(&votes[a])
                .then(sums[a].total_cmp(&sums[b]))
                .then(a.cmp(&b))
        })
        .unwrap();
    Ok(best)
}

/// K-nn classification of `test_idx` against `train_idx` using rows of a
/// full distance matrix.
pub fn knn_classify(
    dist: &DistanceMatrix,
    train_idx: &[usize],
    train_labels: &[usize],
    test_idx: &[usize],
    k: usize,
) -> Result<Vec<usize>> {
    if train_idx.len() != train_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: train_idx.len(),
            got: train_labels.len(),
        });
    }
    if k > train_idx.len() {
        return Err(Error::KTooLarge {
            k,
            available: train_idx.len(),
        });
    }
    test_idx
        .iter()
        .map(|&t| {
            let row: Vec<f64> = train_idx.iter().map(|&j| dist.matrix[(t, j)]).collect();
            knn_vote(&row, train_labels, k)
        })
        .collect()
}

/// Median of the off-diagonal distances (each pair once); 1 when every
/// distance is zero or fewer than two points exist.
pub fn median_heuristic_sigma(dist: &DistanceMatrix) -> f64 {
    median_offdiagonal(&dist.matrix)
}

pub(crate) fn median_offdiagonal(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut values: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect();
    match linalg::median(&mut values) {
        Some(v) if v > 0.0 => v,
        _ => 1.0,
    }
}

/// How a Gram matrix was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    /// Pseudo-inverse of the normalized Laplacian of a Gaussian affinity
    /// graph over DTW distances.
    DtwLaplacian { sigma: f64 },
    Rbf { gamma: f64 },
    Linear,
    Chi2 { gamma: f64 },
    /// Linear Gram of log-Euclidean vectors of covariances over a random
    /// Fourier lift; an approximation of the kernelized covariance.
    KerCov {
        bandwidth: f64,
        n_lift: usize,
        seed: u64,
    },
    Fused { weights: Vec<f64> },
}

/// Symmetric PSD kernel matrix over an ordered set of trials.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    matrix: DMatrix<f64>,
    ids: Vec<String>,
    provenance: Provenance,
}

/// Relative tolerance of the numerical PSD check.
pub const PSD_TOLERANCE: f64 = 1e-8;

impl GramMatrix {
    /// Symmetrizes `matrix` and checks it is square and consistent with `ids`.
    pub fn new(matrix: DMatrix<f64>, ids: Vec<String>, provenance: Provenance) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || ids.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                got: matrix.nrows(),
            });
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Ok(GramMatrix {
            matrix,
            ids,
            provenance,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        linalg::min_eigenvalue(&self.matrix)
    }

    /// min eigenvalue >= -1e-8 * trace.
    pub fn is_psd(&self) -> Result<bool> {
        linalg::is_numerically_psd(&self.matrix, PSD_TOLERANCE)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_labelled_csv(&self.matrix, &self.ids, path)
    }
}

fn write_labelled_csv(m: &DMatrix<f64>, ids: &[String], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "id")?;
    for id in ids {
        write!(out, ",{id}")?;
    }
    writeln!(out)?;
    for (i, id) in ids.iter().enumerate() {
        write!(out, "{id}")?;
        for j in 0..m.ncols() {
            write!(out, ",{}", m[(i, j)])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Eigenvalues of the normalized Laplacian below this fraction of the
/// largest are treated as zero by the pseudo-inverse.
const PINV_CUTOFF: f64 = 1e-10;

/// Laplacian kernel fitted on one set of points, with an out-of-sample
/// extension for new points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacianKernel {
    pub sigma: f64,
    #[serde(with = "crate::serde_matrix")]
    pub gram: DMatrix<f64>,
}

impl LaplacianKernel {
    /// `W = exp(-Δ²/2σ²)` (self-loops included), `L = I - D^{-1/2} W D^{-1/2}`,
    /// `K = L⁺`.
    pub fn fit(distances: &DMatrix<f64>, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidSigma(sigma));
        }
        let n = distances.nrows();
        let w = affinity(distances, sigma);
        let inv_sqrt_deg: Vec<f64> = w
            .row_iter()
            .map(|r| {
                let d: f64 = r.sum();
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let lap = DMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id - inv_sqrt_deg[i] * w[(i, j)] * inv_sqrt_deg[j]
        });
        let (values, vectors) = linalg::symmetric_eigen(&lap)?;
        let max = values.iter().copied().fold(0.0, f64::max);
        let inv: Vec<f64> = values
            .iter()
            .map(|&v| if max > 0.0 && v > PINV_CUTOFF * max { 1.0 / v } else { 0.0 })
            .collect();
        Ok(LaplacianKernel {
            sigma,
            gram: linalg::reconstruct(&inv, &vectors),
        })
    }

    /// Kernel rows for new points given their distances to the fitted
    /// points: each new point is represented by the affinity-weighted mean
    /// of the fitted points' kernel rows.
    pub fn extend(&self, cross: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.gram.nrows();
        if cross.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: cross.ncols(),
            });
        }
        let mut w = affinity(cross, self.sigma);
        for mut row in w.row_iter_mut() {
            let s: f64 = row.sum();
            if s > 0.0 {
                row /= s;
            }
        }
        Ok(w * &self.gram)
    }
}

fn affinity(distances: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let denom = 2.0 * sigma * sigma;
    distances.map(|d| (-d * d / denom).exp())
}

/// Pseudo-inverse of the normalized graph Laplacian of the Gaussian
/// affinity graph over `dist`.
pub fn laplacian_kernel(dist: &DistanceMatrix, sigma: f64) -> Result<GramMatrix> {
    let fitted = LaplacianKernel::fit(&dist.matrix, sigma)?;
    GramMatrix::new(fitted.gram, dist.ids.clone(), Provenance::DtwLaplacian { sigma })
}
