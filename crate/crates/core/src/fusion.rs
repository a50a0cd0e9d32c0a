//! Early fusion (z-normalized concatenation, PCA, CMIM selection) and late
//! fusion of kernels weighted by cross-validated ACC or MSE.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtw::{GramMatrix, Provenance};
use crate::error::{Error, Result};
use crate::linalg;
use crate::svm::{self, SvmParams, TrainInput};

/// A named feature block, one row per trial.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlock {
    pub name: String,
    pub matrix: DMatrix<f64>,
    pub provenance: String,
}

/// Per-column `(x - mean) / sd`, fitted on training rows. Constant
/// columns keep unit scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for c in x.column_iter() {
            let m = c.sum() / n;
            let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: x.ncols(),
            });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| (x[(r, c)] - self.mean[c]) / self.scale[c]))
    }
}

/// Factor that gives the rows of `x` unit mean squared norm, so a linear
/// Gram built from them has unit mean diagonal. 1 for a zero matrix.
pub fn unit_gram_scale(x: &DMatrix<f64>) -> f64 {
    if x.nrows() == 0 {
        return 1.0;
    }
    let mean = x.norm_squared() / x.nrows() as f64;
    if mean > 0.0 {
        1.0 / mean.sqrt()
    } else {
        1.0
    }
}

/// Column-wise concatenation in block order, z-normalized with statistics
/// from `train_rows` only.
pub fn concat_blocks(blocks: &[FeatureBlock], train_rows: &[usize]) -> Result<(DMatrix<f64>, Standardizer)> {
    let first = blocks.first().ok_or(Error::EmptyList)?;
    let n = first.matrix.nrows();
    if let Some(b) = blocks.iter().find(|b| b.matrix.nrows() != n) {
        return Err(Error::RowMismatch {
            block: b.name.clone(),
            expected: n,
            got: b.matrix.nrows(),
        });
    }
    if let Some(&r) = train_rows.iter().find(|&&r| r >= n) {
        return Err(Error::DimensionMismatch { expected: n, got: r });
    }
    let width: usize = blocks.iter().map(|b| b.matrix.ncols()).sum();
    let mut out = DMatrix::zeros(n, width);
    let mut offset = 0;
    for b in blocks {
        out.columns_mut(offset, b.matrix.ncols()).copy_from(&b.matrix);
        offset += b.matrix.ncols();
    }
    let st = Standardizer::fit(&linalg::select_rows(&out, train_rows));
    let z = st.apply(&out)?;
    Ok((z, st))
}

/// Principal components fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// d x k, orthonormal columns.
    #[serde(with = "crate::serde_matrix")]
    pub components: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance: f64,
}

impl Pca {
    /// Uses the d x d covariance when d ≤ n, otherwise the n x n Gram of
    /// the centered rows. Each component's largest-magnitude loading is
    /// made positive.
    pub fn fit(x: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (n, d) = x.shape();
        let max_k = n.saturating_sub(1).min(d);
        if k == 0 || k > max_k {
            return Err(Error::KTooLarge { k, available: max_k });
        }
        let mean = linalg::column_means(x);
        let mut xc = x.clone();
        for (mut col, m) in xc.column_iter_mut().zip(mean.iter()) {
            col.add_scalar_mut(-m);
        }
        let (values, mut components) = if d <= n {
            let cov = xc.transpose() * &xc / n as f64;
            let (values, vectors) = linalg::symmetric_eigen(&cov)?;
            (values, vectors.columns(0, k).into_owned())
        } else {
            let gram = &xc * xc.transpose();
            let (values, vectors) = linalg::symmetric_eigen(&gram)?;
            let mut comps = xc.transpose() * vectors.columns(0, k);
            for mut c in comps.column_iter_mut() {
                let norm = c.norm();
                if norm > 0.0 {
                    c /= norm;
                }
            }
            (values.iter().map(|v| v / n as f64).collect(), comps)
        };
        for mut c in components.column_iter_mut() {
            let mut best = 0;
            for r in 1..c.len() {
                if c[r].abs() > c[best].abs() {
                    best = r;
                }
            }
            if c[best] < 0.0 {
                c.neg_mut();
            }
        }
        let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
        let top: f64 = values[..k].iter().map(|v| v.max(0.0)).sum();
        Ok(Pca {
            mean: mean.iter().copied().collect(),
            components,
            eigenvalues: values[..k].to_vec(),
            explained_variance: if total > 0.0 { top / total } else { 0.0 },
        })
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: x.ncols(),
            });
        }
        let mut xc = x.clone();
        for (mut col, m) in xc.column_iter_mut().zip(&self.mean) {
            col.add_scalar_mut(-m);
        }
        Ok(xc * &self.components)
    }
}

/// Projects both matrices on the top-`k` components of `x_train`.
pub fn pca_reduce(x_train: &DMatrix<f64>, x_apply: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let pca = Pca::fit(x_train, k)?;
    Ok((pca.transform(x_train)?, pca.transform(x_apply)?, pca.explained_variance))
}

/// Equal-frequency binning fitted on training rows: `edges[b-1] =
/// sorted[⌊b n / B⌋]`, `bin(x) = #{edges ≤ x}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discretizer {
    pub bins: usize,
    pub edges: Vec<Vec<f64>>,
}

impl Discretizer {
    pub fn fit(x: &DMatrix<f64>, bins: usize) -> Result<Self> {
        let n = x.nrows();
        if bins < 2 || n < bins {
            return Err(Error::InvalidConfig(format!("need 2 ≤ bins ≤ n, got bins={bins}, n={n}")));
        }
        let edges = (0..x.ncols())
            .into_par_iter()
            .map(|c| {
                let mut s: Vec<f64> = x.column(c).iter().copied().collect();
                s.sort_by(f64::total_cmp);
                (1..bins).map(|b| s[b * n / bins]).collect()
            })
            .collect();
        Ok(Discretizer { bins, edges })
    }

    pub fn bin(&self, column: usize, v: f64) -> u8 {
        self.edges[column].partition_point(|&e| e <= v) as u8
    }

    /// Bin codes, column-major: `codes[c][r]`.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<Vec<Vec<u8>>> {
        if x.ncols() != self.edges.len() {
            return Err(Error::DimensionMismatch {
                expected: self.edges.len(),
                got: x.ncols(),
            });
        }
        Ok((0..x.ncols())
            .into_par_iter()
            .map(|c| x.column(c).iter().map(|&v| self.bin(c, v)).collect())
            .collect())
    }
}

/// Plug-in entropy (nats) from cell counts. Summed over the distinct count
/// values in ascending order, so equal partitions give bit-equal results.
pub fn entropy_from_counts(counts: impl IntoIterator<Item = usize>) -> f64 {
    let mut freq: HashMap<usize, usize> = HashMap::new();
    let mut n = 0usize;
    for c in counts.into_iter().filter(|&c| c > 0) {
        *freq.entry(c).or_default() += 1;
        n += c;
    }
    if n == 0 {
        return 0.0;
    }
    let mut distinct: Vec<(usize, usize)> = freq.into_iter().collect();
    distinct.sort_unstable();
    let s: f64 = distinct.iter().map(|&(c, f)| f as f64 * c as f64 * (c as f64).ln()).sum();
    (n as f64).ln() - s / n as f64
}

fn joint_entropy(codes: &[&[u8]], radix: &[usize]) -> f64 {
    let size: usize = radix.iter().product();
    let mut counts = vec![0usize; size];
    let n = codes[0].len();
    for r in 0..n {
        let mut idx = 0;
        for (c, &k) in codes.iter().zip(radix) {
            idx = idx * k + c[r] as usize;
        }
        counts[idx] += 1;
    }
    entropy_from_counts(counts)
}

/// `I(X; Y)` from discrete codes.
pub fn mutual_information(x: &[u8], y: &[u8], bx: usize, by: usize) -> f64 {
    joint_entropy(&[x], &[bx]) + joint_entropy(&[y], &[by]) - joint_entropy(&[x, y], &[bx, by])
}

/// `I(X; Y | Z) = H(X,Z) + H(Y,Z) - H(X,Y,Z) - H(Z)`.
pub fn conditional_mutual_information(x: &[u8], y: &[u8], z: &[u8], bx: usize, by: usize, bz: usize) -> f64 {
    joint_entropy(&[x, z], &[bx, bz]) + joint_entropy(&[y, z], &[by, bz])
        - joint_entropy(&[x, y, z], &[bx, by, bz])
        - joint_entropy(&[z], &[bz])
}

/// Fitted CMIM selection: the training discretization and the chosen
/// columns in selection order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmimSelector {
    pub discretizer: Discretizer,
    pub selected: Vec<usize>,
}

impl CmimSelector {
    pub fn fit(x_train: &DMatrix<f64>, y_train: &[usize], k: usize, bins: usize) -> Result<Self> {
        if y_train.len() != x_train.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x_train.nrows(),
                got: y_train.len(),
            });
        }
        if k > x_train.ncols() {
            return Err(Error::KTooLarge {
                k,
                available: x_train.ncols(),
            });
        }
        let discretizer = Discretizer::fit(x_train, bins)?;
        let codes = discretizer.transform(x_train)?;
        let selected = cmim_greedy(&codes, y_train, bins, k);
        Ok(CmimSelector { discretizer, selected })
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::select_columns(x, &self.selected)
    }
}

/// Scores closer than this are ties; absorbs rounding in the entropy sums.
pub const CMIM_TIE_TOLERANCE: f64 = 1e-12;

/// Ordered CMIM selection over discrete codes with lazy evaluation of the
/// conditional scores; ties go to the lowest index.
pub fn cmim_greedy(codes: &[Vec<u8>], y: &[usize], bins: usize, k: usize) -> Vec<usize> {
    let (yc, by) = encode_labels(y);
    let d = codes.len();
    let mut score: Vec<f64> = codes.par_iter().map(|c| mutual_information(c, &yc, bins, by)).collect();
    let mut evaluated = vec![0usize; d];
    let mut chosen = vec![false; d];
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best = f64::NEG_INFINITY;
        let mut pick = usize::MAX;
        for j in 0..d {
            if chosen[j] {
                continue;
            }
            while score[j] > best + CMIM_TIE_TOLERANCE && evaluated[j] < selected.len() {
                let s = selected[evaluated[j]];
                let cmi = conditional_mutual_information(&codes[j], &yc, &codes[s], bins, by, bins);
                score[j] = score[j].min(cmi);
                evaluated[j] += 1;
            }
            if score[j] > best + CMIM_TIE_TOLERANCE {
                best = score[j];
                pick = j;
            }
        }
        if pick == usize::MAX {
            break;
        }
        chosen[pick] = true;
        selected.push(pick);
    }
    selected
}

/// Maps labels to dense codes `0..m` in ascending label order.
pub(crate) fn encode_labels(y: &[usize]) -> (Vec<u8>, usize) {
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let codes = y.iter().map(|l| classes.binary_search(l).unwrap() as u8).collect();
    (codes, classes.len().max(1))
}

/// `k` CMIM-selected column indices of `x_train` in selection order.
pub fn cmim_select(x_train: &DMatrix<f64>, y_train: &[usize], k: usize, bins: usize) -> Result<Vec<usize>> {
    Ok(CmimSelector::fit(x_train, y_train, k, bins)?.selected)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Criterion {
    Acc,
    Mse,
}

impl std::str::FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "acc" => Ok(Criterion::Acc),
            "mse" => Ok(Criterion::Mse),
            _ => Err(Error::InvalidConfig(format!("unknown fusion criterion `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub criterion: Criterion,
    pub weights: Vec<f64>,
    /// Trace-normalizing factors applied to each kernel.
    pub scales: Vec<f64>,
    /// Cross-validated ACC or MSE per kernel.
    pub scores: Vec<f64>,
}

pub const LATE_FUSION_FOLDS: usize = 5;

/// Stratified fold assignment: each class is shuffled with `seed` and
/// dealt round-robin into `k` folds.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    for c in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

/// Cross-validated (accuracy, decision MSE) of a kernel OvR SVM on a
/// training Gram.
pub fn cross_validate_kernel(gram: &DMatrix<f64>, labels: &[usize], params: SvmParams, seed: u64) -> Result<(f64, f64)> {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let min_count = counts.values().copied().min().unwrap_or(0);
    let k = LATE_FUSION_FOLDS.min(min_count);
    if counts.len() < 2 || k < 2 {
        return Err(Error::SingleClass);
    }
    cross_validate_kernel_folds(gram, labels, &stratified_folds(labels, k, seed), params)
}

/// Folds holding whole groups: distinct groups in ascending order are dealt
/// round-robin over `min(k, groups)` folds.
pub fn group_folds(groups: &[u32], k: usize) -> Vec<usize> {
    let mut distinct = groups.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let k = k.min(distinct.len()).max(1);
    groups
        .iter()
        .map(|g| distinct.binary_search(g).expect("group present") % k)
        .collect()
}

/// Same as [`cross_validate_kernel`] over caller-supplied fold indices.
pub fn cross_validate_kernel_folds(gram: &DMatrix<f64>, labels: &[usize], fold: &[usize], params: SvmParams) -> Result<(f64, f64)> {
    if fold.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: fold.len(),
        });
    }
    let k = fold.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::InvalidConfig("cross-validation needs at least two folds".into()));
    }
    let (mut correct, mut sq, mut entries, mut total) = (0usize, 0.0, 0usize, 0usize);
    for f in 0..k {
        let tr: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] != f).collect();
        let te: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] == f).collect();
        let ytr: Vec<usize> = tr.iter().map(|&i| labels[i]).collect();
        let model = svm::train_ovr(TrainInput::Gram(&linalg::submatrix(gram, &tr, &tr)), &ytr, params)?;
        let rows = linalg::submatrix(gram, &te, &tr);
        let pred = model.predict(&rows)?;
        let dv = model.decision_values(&rows)?;
        for (r, &i) in te.iter().enumerate() {
            correct += usize::from(pred[r] == labels[i]);
            total += 1;
            for (m, machine) in model.machines.iter().enumerate() {
                let target = if machine.positive == labels[i] { 1.0 } else { -1.0 };
                sq += (dv[(r, m)] - target) * (dv[(r, m)] - target);
                entries += 1;
            }
        }
    }
    Ok((correct as f64 / total as f64, sq / entries as f64))
}

/// Weighted sum of trace-normalized kernels. Normalization factors and
/// weights come from the `train` block only; the fused matrix covers the
/// full ordering.
pub fn late_fuse(
    grams: &[GramMatrix],
    train: &[usize],
    y_train: &[usize],
    criterion: Criterion,
    params: SvmParams,
    seed: u64,
) -> Result<(GramMatrix, FusionWeights)> {
    let first = grams.first().ok_or(Error::EmptyList)?;
    if grams.iter().any(|g| g.ids() != first.ids()) {
        return Err(Error::OrderingMismatch);
    }
    if train.len() != y_train.len() {
        return Err(Error::DimensionMismatch {
            expected: train.len(),
            got: y_train.len(),
        });
    }
    let evaluated: Vec<(f64, f64, f64)> = grams
        .par_iter()
        .map(|g| {
            let block = linalg::submatrix(g.matrix(), train, train);
            let tr = block.trace();
            let scale = if tr > 0.0 { train.len() as f64 / tr } else { 1.0 };
            let (acc, mse) = cross_validate_kernel(&(block * scale), y_train, params, seed)?;
            Ok((scale, acc, mse))
        })
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = evaluated
        .iter()
        .map(|&(_, acc, mse)| match criterion {
            Criterion::Acc => acc,
            Criterion::Mse => mse,
        })
        .collect();
    let raw: Vec<f64> = scores
        .iter()
        .map(|&s| match criterion {
            Criterion::Acc => s,
            Criterion::Mse => 1.0 / s.max(f64::MIN_POSITIVE),
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    let weights: Vec<f64> = if sum > 0.0 && sum.is_finite() {
        raw.iter().map(|r| r / sum).collect()
    } else {
        vec![1.0 / grams.len() as f64; grams.len()]
    };
    let scales: Vec<f64> = evaluated.iter().map(|e| e.0).collect();
    let n = first.len();
    let mut fused = DMatrix::zeros(n, n);
    for ((g, w), s) in grams.iter().zip(&weights).zip(&scales) {
        fused += g.matrix() * (w * s);
    }
    let gram = GramMatrix::new(
        fused,
        first.ids().to_vec(),
        Provenance::Fused {
            weights: weights.clone(),
        },
    )?;
    Ok((
        gram,
        FusionWeights {
            criterion,
            weights,
            scales,
            scores,
        },
    ))
}
