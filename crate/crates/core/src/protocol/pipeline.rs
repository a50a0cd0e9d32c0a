//! Fit/predict for every representation. Fitting sees only the training
//! rows of the cache; everything it learns lives in [`FittedPipeline`].

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, BandwidthMode, Block, FeatureCache, LateKernel, PipelineSpec, Representation, SigmaMode};
use crate::dtw::{self, DtwOptions, GramMatrix, LaplacianKernel, Provenance, Sequence};
use crate::error::{Error, Result};
use crate::fusion::{self, CmimSelector, FeatureBlock, FusionWeights, Pca, Standardizer};
use crate::kinematics::{Channel, RESAMPLED_LEN};
use crate::linalg;
use crate::spdcov::{self, FourierLift, Regularization};
use crate::svm::{self, SvmModel, TrainInput};

/// Frames sampled when estimating the median frame distance.
const MEDIAN_FRAMES: usize = 600;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KerCovFit {
    pub bandwidth: f64,
    pub median_distance: f64,
    /// `(bandwidth, cross-validated accuracy)` for every grid point tried.
    pub grid: Vec<(f64, f64)>,
    pub n_lift: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockFit {
    Plain(Block),
    Kercov(KerCovFit),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reducer {
    None,
    Cmim(CmimSelector),
    Pca(Pca),
}

impl Reducer {
    fn apply(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Reducer::None => Ok(z.clone()),
            Reducer::Cmim(sel) => Ok(sel.transform(z)),
            Reducer::Pca(p) => p.transform(z),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFit {
    Rbf {
        block: BlockFit,
        standardizer: Standardizer,
        gamma: f64,
    },
    Linear {
        block: BlockFit,
        standardizer: Standardizer,
    },
    DtwLaplacian {
        scaler: Standardizer,
        kernel: LaplacianKernel,
    },
}

/// Parameters learned from the training rows of one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pipeline", rename_all = "kebab-case")]
pub enum FittedPipeline {
    Majority {
        class: usize,
    },
    Linear {
        blocks: Vec<BlockFit>,
        standardizer: Standardizer,
        reducer: Reducer,
        /// Applied after reduction; see [`fusion::unit_gram_scale`].
        scale: f64,
        model: SvmModel,
    },
    DtwKnn {
        scaler: Standardizer,
        k: usize,
        train: Vec<usize>,
        labels: Vec<usize>,
    },
    DtwSvm {
        scaler: Standardizer,
        kernel: LaplacianKernel,
        train: Vec<usize>,
        model: SvmModel,
    },
    LateFused {
        kernels: Vec<KernelFit>,
        weights: FusionWeights,
        train: Vec<usize>,
        model: SvmModel,
    },
}

fn check_rows(cache: &FeatureCache, rows: &[usize]) -> Result<()> {
    match rows.iter().find(|&&r| r >= cache.len()) {
        Some(&r) => Err(Error::DimensionMismatch {
            expected: cache.len(),
            got: r,
        }),
        None => Ok(()),
    }
}

/// Fits `spec` on the cache rows `train`.
pub fn fit_pipeline(cache: &FeatureCache, train: &[usize], spec: &PipelineSpec) -> Result<FittedPipeline> {
    spec.validate()?;
    check_rows(cache, train)?;
    let labels = cache.labels(train);
    let params = spec.svm_params();
    match spec.representation {
        Representation::Majority => {
            let mut counts = [0usize; 4];
            for &l in &labels {
                counts[l] += 1;
            }
            let class = (0..4).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
            Ok(FittedPipeline::Majority { class })
        }
        Representation::Fk
        | Representation::Fglobal
        | Representation::Flocal
        | Representation::Cov
        | Representation::Hcov
        | Representation::Kercov => {
            let block = match spec.representation {
                Representation::Fk => Block::Fk,
                Representation::Fglobal => Block::Fglobal,
                Representation::Flocal => Block::Flocal,
                Representation::Cov => Block::Cov,
                Representation::Hcov => Block::Hcov,
                _ => Block::Kercov,
            };
            fit_linear(cache, train, &labels, &[block], ReducerKind::None, spec)
        }
        Representation::CmimFused => fit_linear(cache, train, &labels, &spec.fusion_blocks, ReducerKind::Cmim, spec),
        Representation::PcaFused => fit_linear(cache, train, &labels, &spec.fusion_blocks, ReducerKind::Pca, spec),
        Representation::DtwKnn => {
            if spec.k_neighbors > train.len() {
                return Err(Error::KTooLarge {
                    k: spec.k_neighbors,
                    available: train.len(),
                });
            }
            Ok(FittedPipeline::DtwKnn {
                scaler: fit_channel_scaler(cache, train),
                k: spec.k_neighbors,
                train: train.to_vec(),
                labels,
            })
        }
        Representation::DtwLaplacianSvm => {
            let (scaler, kernel) = fit_dtw_kernel(cache, train, spec)?;
            let model = svm::train_ovr(TrainInput::Gram(&kernel.gram), &labels, params)?;
            Ok(FittedPipeline::DtwSvm {
                scaler,
                kernel,
                train: train.to_vec(),
                model,
            })
        }
        Representation::LateFused => fit_late(cache, train, &labels, spec),
    }
}

impl FittedPipeline {
    /// Intention class indices for the cache rows `test`.
    pub fn predict(&self, cache: &FeatureCache, test: &[usize]) -> Result<Vec<usize>> {
        check_rows(cache, test)?;
        match self {
            FittedPipeline::Majority { class } => Ok(vec![*class; test.len()]),
            FittedPipeline::Linear {
                blocks,
                standardizer,
                reducer,
                scale,
                model,
            } => {
                let x = stacked_blocks(cache, blocks, test)?;
                model.predict(&(reducer.apply(&standardizer.apply(&x)?)? * *scale))
            }
            FittedPipeline::DtwKnn { scaler, k, train, labels } => {
                let cross = dtw_cross(cache, scaler, test, train)?;
                cross
                    .row_iter()
                    .map(|r| dtw::knn_vote(&r.iter().copied().collect::<Vec<_>>(), labels, *k))
                    .collect()
            }
            FittedPipeline::DtwSvm {
                scaler,
                kernel,
                train,
                model,
            } => {
                let rows = kernel.extend(&dtw_cross(cache, scaler, test, train)?)?;
                model.predict(&rows)
            }
            FittedPipeline::LateFused {
                kernels,
                weights,
                train,
                model,
            } => {
                let mut fused = DMatrix::zeros(test.len(), train.len());
                for ((k, w), s) in kernels.iter().zip(&weights.weights).zip(&weights.scales) {
                    fused += kernel_rows(cache, k, test, train)? * (w * s);
                }
                model.predict(&fused)
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Copy)]
enum ReducerKind {
    None,
    Cmim,
    Pca,
}

fn fit_linear(
    cache: &FeatureCache,
    train: &[usize],
    labels: &[usize],
    blocks: &[Block],
    reducer: ReducerKind,
    spec: &PipelineSpec,
) -> Result<FittedPipeline> {
    let fits = blocks
        .iter()
        .map(|&b| fit_block(cache, b, train, labels, spec))
        .collect::<Result<Vec<_>>>()?;
    let feature_blocks = fits
        .iter()
        .map(|f| {
            Ok(FeatureBlock {
                name: block_name(f).into(),
                matrix: block_rows(cache, f, train)?,
                provenance: "feature-cache".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<usize> = (0..train.len()).collect();
    let (z, standardizer) = fusion::concat_blocks(&feature_blocks, &all)?;
    drop(feature_blocks);
    let reducer = match reducer {
        ReducerKind::None => Reducer::None,
        ReducerKind::Cmim => {
            let k = spec.k_cmim.min(z.ncols());
            let bins = spec.cmim_bins.min(z.nrows());
            Reducer::Cmim(CmimSelector::fit(&z, labels, k, bins)?)
        }
        ReducerKind::Pca => {
            let k = spec.k_pca.min(z.nrows().saturating_sub(1)).min(z.ncols());
            Reducer::Pca(Pca::fit(&z, k)?)
        }
    };
    let mut features = reducer.apply(&z)?;
    let scale = fusion::unit_gram_scale(&features);
    features *= scale;
    let model = svm::train_ovr(TrainInput::Features(&features), labels, spec.svm_params())?;
    Ok(FittedPipeline::Linear {
        blocks: fits,
        standardizer,
        reducer,
        scale,
        model,
    })
}

fn block_name(fit: &BlockFit) -> &'static str {
    match fit {
        BlockFit::Plain(Block::Fk) => "fk",
        BlockFit::Plain(Block::Fglobal) => "fglobal",
        BlockFit::Plain(Block::Flocal) => "flocal",
        BlockFit::Plain(Block::Cov) => "cov",
        BlockFit::Plain(Block::Hcov) => "hcov",
        BlockFit::Plain(Block::Kercov) | BlockFit::Kercov(_) => "kercov",
    }
}

pub(crate) fn fit_block(cache: &FeatureCache, block: Block, train: &[usize], labels: &[usize], spec: &PipelineSpec) -> Result<BlockFit> {
    match block {
        Block::Kercov => Ok(BlockFit::Kercov(fit_kercov(cache, train, labels, spec)?)),
        b => Ok(BlockFit::Plain(b)),
    }
}

/// Rows of a block for the given cache rows.
pub(crate) fn block_rows(cache: &FeatureCache, fit: &BlockFit, rows: &[usize]) -> Result<DMatrix<f64>> {
    let local = Channel::LOCAL * RESAMPLED_LEN;
    let fk = cache.fk();
    Ok(match fit {
        BlockFit::Plain(Block::Fk) => linalg::select_rows(fk, rows),
        BlockFit::Plain(Block::Flocal) => DMatrix::from_fn(rows.len(), local, |r, c| fk[(rows[r], c)]),
        BlockFit::Plain(Block::Fglobal) => {
            DMatrix::from_fn(rows.len(), fk.ncols() - local, |r, c| fk[(rows[r], local + c)])
        }
        BlockFit::Plain(Block::Cov) => linalg::select_rows(cache.cov()?, rows),
        BlockFit::Plain(Block::Hcov) => linalg::select_rows(cache.hcov()?, rows),
        BlockFit::Plain(Block::Kercov) => {
            return Err(Error::InvalidPipeline("ker-COV block used without a fitted bandwidth".into()))
        }
        BlockFit::Kercov(k) => {
            let dim = cache.cov_input()[0].ncols();
            let lift = FourierLift::new(dim, k.n_lift, k.bandwidth, k.seed)?;
            kercov_rows(cache, &lift, rows)?
        }
    })
}

fn stacked_blocks(cache: &FeatureCache, fits: &[BlockFit], rows: &[usize]) -> Result<DMatrix<f64>> {
    let parts = fits.iter().map(|f| block_rows(cache, f, rows)).collect::<Result<Vec<_>>>()?;
    let width = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows.len(), width);
    let mut off = 0;
    for p in parts {
        out.columns_mut(off, p.ncols()).copy_from(&p);
        off += p.ncols();
    }
    Ok(out)
}

fn kercov_rows(cache: &FeatureCache, lift: &FourierLift, rows: &[usize]) -> Result<DMatrix<f64>> {
    let inputs = cache.cov_input();
    let vectors: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|&r| lift.descriptor(&inputs[r], Regularization::default()))
        .collect::<Result<_>>()?;
    Ok(linalg::rows_to_matrix(&vectors))
}

fn fit_kercov(cache: &FeatureCache, train: &[usize], labels: &[usize], spec: &PipelineSpec) -> Result<KerCovFit> {
    let inputs: Vec<DMatrix<f64>> = train.iter().map(|&r| cache.cov_input()[r].clone()).collect();
    let median = spdcov::median_frame_distance(&inputs, MEDIAN_FRAMES);
    let seed = derive_seed(spec.seed, 11);
    let dim = inputs[0].ncols();
    let candidates: Vec<f64> = match spec.kercov_bandwidth {
        BandwidthMode::CrossValidated => (-4..=4).map(|e| 2f64.powi(e) * median).collect(),
        BandwidthMode::Median => vec![median],
        BandwidthMode::Fixed(g) => vec![g],
    };
    let mut grid = Vec::with_capacity(candidates.len());
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    // inner folds hold out whole training subjects, mirroring the outer protocol
    let subjects: Vec<u32> = train.iter().map(|&r| cache.subjects()[r]).collect();
    let folds = {
        let f = fusion::group_folds(&subjects, fusion::LATE_FUSION_FOLDS);
        (f.iter().any(|&x| x > 0)).then_some(f)
    };
    if candidates.len() > 1 {
        for &g in &candidates {
            let lift = FourierLift::new(dim, spec.n_lift, g, seed)?;
            let v = kercov_rows(cache, &lift, train)?;
            let mut z = Standardizer::fit(&v).apply(&v)?;
            z *= fusion::unit_gram_scale(&z);
            let gram = &z * z.transpose();
            let (acc, _) = match &folds {
                Some(f) => fusion::cross_validate_kernel_folds(&gram, labels, f, spec.svm_params())?,
                None => fusion::cross_validate_kernel(&gram, labels, spec.svm_params(), derive_seed(spec.seed, 12))?,
            };
            grid.push((g, acc));
            if acc > best.0 {
                best = (acc, g);
            }
        }
    }
    Ok(KerCovFit {
        bandwidth: best.1,
        median_distance: median,
        grid,
        n_lift: spec.n_lift,
        seed,
    })
}

/// Per-channel z-normalization over all frames of the training series.
fn fit_channel_scaler(cache: &FeatureCache, train: &[usize]) -> Standardizer {
    let series = cache.series();
    let dim = series[train[0]].dim();
    let total: usize = train.iter().map(|&r| series[r].len()).sum();
    let mut frames = DMatrix::zeros(total, dim);
    let mut row = 0;
    for &r in train {
        for t in 0..series[r].len() {
            for (c, v) in series[r].frame(t).iter().enumerate() {
                frames[(row, c)] = *v;
            }
            row += 1;
        }
    }
    Standardizer::fit(&frames)
}

fn scaled_series(cache: &FeatureCache, scaler: &Standardizer, rows: &[usize]) -> Vec<Sequence> {
    rows.iter()
        .map(|&r| cache.series()[r].standardized(&scaler.mean, &scaler.scale))
        .collect()
}

fn dtw_cross(cache: &FeatureCache, scaler: &Standardizer, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
    let a = scaled_series(cache, scaler, rows);
    let b = scaled_series(cache, scaler, cols);
    dtw::cross_distances(&a, &b, DtwOptions::default())
}

fn fit_dtw_kernel(cache: &FeatureCache, train: &[usize], spec: &PipelineSpec) -> Result<(Standardizer, LaplacianKernel)> {
    let scaler = fit_channel_scaler(cache, train);
    let seqs = scaled_series(cache, &scaler, train);
    let ids = train.iter().map(|&r| cache.ids()[r].clone()).collect();
    let dist = dtw::distance_matrix(&seqs, ids)?;
    let sigma = match spec.sigma {
        SigmaMode::Median => dtw::median_heuristic_sigma(&dist),
        SigmaMode::Fixed(s) => s,
    };
    let kernel = LaplacianKernel::fit(dist.matrix(), sigma)?;
    Ok((scaler, kernel))
}

fn sq_dist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let na: Vec<f64> = a.row_iter().map(|r| r.norm_squared()).collect();
    let nb: Vec<f64> = b.row_iter().map(|r| r.norm_squared()).collect();
    let dot = a * b.transpose();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| (na[i] + nb[j] - 2.0 * dot[(i, j)]).max(0.0))
}

fn fit_late(cache: &FeatureCache, train: &[usize], labels: &[usize], spec: &PipelineSpec) -> Result<FittedPipeline> {
    let ids: Vec<String> = train.iter().map(|&r| cache.ids()[r].clone()).collect();
    let mut kernels = Vec::with_capacity(spec.late_kernels.len());
    let mut grams = Vec::with_capacity(spec.late_kernels.len());
    for lk in &spec.late_kernels {
        let (fit, gram, provenance) = match *lk {
            LateKernel::Rbf(b) | LateKernel::Linear(b) => {
                let block = fit_block(cache, b, train, labels, spec)?;
                let x = block_rows(cache, &block, train)?;
                let standardizer = Standardizer::fit(&x);
                let z = standardizer.apply(&x)?;
                if let LateKernel::Rbf(_) = lk {
                    let d2 = sq_dist(&z, &z);
                    let med = dtw::median_offdiagonal(&d2);
                    let gamma = 1.0 / med;
                    let gram = d2.map(|v| (-gamma * v).exp());
                    (
                        KernelFit::Rbf {
                            block,
                            standardizer,
                            gamma,
                        },
                        gram,
                        Provenance::Rbf { gamma },
                    )
                } else {
                    let gram = &z * z.transpose();
                    (KernelFit::Linear { block, standardizer }, gram, Provenance::Linear)
                }
            }
            LateKernel::DtwLaplacian => {
                let (scaler, kernel) = fit_dtw_kernel(cache, train, spec)?;
                let gram = kernel.gram.clone();
                let sigma = kernel.sigma;
                (KernelFit::DtwLaplacian { scaler, kernel }, gram, Provenance::DtwLaplacian { sigma })
            }
        };
        kernels.push(fit);
        grams.push(GramMatrix::new(gram, ids.clone(), provenance)?);
    }
    let all: Vec<usize> = (0..train.len()).collect();
    let (fused, weights) = fusion::late_fuse(
        &grams,
        &all,
        labels,
        spec.criterion,
        spec.svm_params(),
        derive_seed(spec.seed, 13),
    )?;
    let model = svm::train_ovr(TrainInput::Gram(fused.matrix()), labels, spec.svm_params())?;
    Ok(FittedPipeline::LateFused {
        kernels,
        weights,
        train: train.to_vec(),
        model,
    })
}

/// Kernel values between `rows` and the training rows `train`.
fn kernel_rows(cache: &FeatureCache, fit: &KernelFit, rows: &[usize], train: &[usize]) -> Result<DMatrix<f64>> {
    match fit {
        KernelFit::Rbf {
            block,
            standardizer,
            gamma,
        } => {
            let a = standardizer.apply(&block_rows(cache, block, rows)?)?;
            let b = standardizer.apply(&block_rows(cache, block, train)?)?;
            Ok(sq_dist(&a, &b).map(|v| (-gamma * v).exp()))
        }
        KernelFit::Linear { block, standardizer } => {
            let a = standardizer.apply(&block_rows(cache, block, rows)?)?;
            let b = standardizer.apply(&block_rows(cache, block, train)?)?;
            Ok(a * b.transpose())
        }
        KernelFit::DtwLaplacian { scaler, kernel } => kernel.extend(&dtw_cross(cache, scaler, rows, train)?),
    }
}
