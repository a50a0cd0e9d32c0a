//! Evaluation harness: pipeline specifications, the per-trial feature
//! cache, leave-one-subject-out evaluation, comparison suites, snippet
//! sweeps and the two-layer architecture.

mod eval;
mod pipeline;
mod two_layer;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Intention};
use crate::dtw::Sequence;
use crate::error::{Error, Result};
use crate::fusion::Criterion;
use crate::kinematics::{self, FeatureSet, KinematicSeries, SegmentationParams};
use crate::linalg;
use crate::spdcov::{self, HCovConfig, Regularization};

pub use eval::{
    comparison_suite, loso_evaluate, loso_evaluate_cached, loso_fold_fits, snippet_sweep, summary_csv, ClassSubset,
    EvalReport, FoldReport, SnippetCell,
};
pub(crate) use pipeline::block_rows;
pub use pipeline::{fit_pipeline, BlockFit, FittedPipeline, KerCovFit, KernelFit, Reducer};
pub use two_layer::{
    stratified_split, two_layer_evaluate, two_layer_predict, two_layer_train, two_layer_train_cached, evaluate_comparison,
    ComparisonSummary, SplitReport, TwoLayerConfig, TwoLayerModel, TwoLayerPredictions, TwoLayerReport,
};

/// Trial representation evaluated by a pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    Fk,
    Fglobal,
    Flocal,
    DtwKnn,
    DtwLaplacianSvm,
    Cov,
    Hcov,
    Kercov,
    CmimFused,
    PcaFused,
    LateFused,
    /// Predicts the most frequent training class.
    Majority,
}

impl Representation {
    pub const ALL: [Representation; 12] = [
        Representation::Fk,
        Representation::Fglobal,
        Representation::Flocal,
        Representation::DtwKnn,
        Representation::DtwLaplacianSvm,
        Representation::Cov,
        Representation::Hcov,
        Representation::Kercov,
        Representation::CmimFused,
        Representation::PcaFused,
        Representation::LateFused,
        Representation::Majority,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Representation::Fk => "fk",
            Representation::Fglobal => "fglobal",
            Representation::Flocal => "flocal",
            Representation::DtwKnn => "dtw-knn",
            Representation::DtwLaplacianSvm => "dtw-laplacian-svm",
            Representation::Cov => "cov",
            Representation::Hcov => "hcov",
            Representation::Kercov => "kercov",
            Representation::CmimFused => "cmim-fused",
            Representation::PcaFused => "pca-fused",
            Representation::LateFused => "late-fused",
            Representation::Majority => "majority",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Representation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Representation::ALL
            .into_iter()
            .find(|r| r.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidPipeline(format!("unknown representation `{s}`")))
    }
}

/// Per-trial vector blocks available to linear pipelines and fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Block {
    Fk,
    Fglobal,
    Flocal,
    Cov,
    Hcov,
    Kercov,
}

/// A kernel entering late fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "block", rename_all = "kebab-case")]
pub enum LateKernel {
    /// Gaussian kernel on the z-normalized block, `γ = 1 / median squared
    /// training distance`.
    Rbf(Block),
    Linear(Block),
    DtwLaplacian,
}

/// Which samples feed the covariance descriptors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovSource {
    /// Raw marker coordinates, d = 60.
    Coordinates,
    /// Native-length kinematic channels, d = 16.
    Kinematic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    /// Median of the training distances.
    Median,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthMode {
    /// Grid `2^-4 .. 2^4` times the median training frame distance, chosen
    /// by 5-fold cross-validation on the training trials.
    CrossValidated,
    /// The median training frame distance itself.
    Median,
    Fixed(f64),
}

/// Everything needed to run one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSpec {
    pub representation: Representation,
    /// SVM cost.
    pub c: f64,
    pub tol: f64,
    /// Neighbors for DTW K-nn.
    pub k_neighbors: usize,
    pub sigma: SigmaMode,
    pub hcov: HCovConfig,
    pub cov_source: CovSource,
    pub kercov_bandwidth: BandwidthMode,
    pub n_lift: usize,
    pub k_cmim: usize,
    pub cmim_bins: usize,
    pub k_pca: usize,
    pub fusion_blocks: Vec<Block>,
    pub late_kernels: Vec<LateKernel>,
    pub criterion: Criterion,
    pub segmentation: SegmentationParams,
    /// Root of every random choice (ker-COV lift, inner folds).
    pub seed: u64,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        PipelineSpec {
            representation: Representation::Fk,
            c: crate::svm::DEFAULT_C,
            tol: crate::svm::DEFAULT_TOL,
            k_neighbors: 5,
            sigma: SigmaMode::Median,
            hcov: HCovConfig::default(),
            cov_source: CovSource::Coordinates,
            kercov_bandwidth: BandwidthMode::CrossValidated,
            n_lift: 64,
            k_cmim: 150,
            cmim_bins: 10,
            k_pca: 160,
            fusion_blocks: vec![Block::Fk, Block::Cov, Block::Hcov, Block::Kercov],
            late_kernels: vec![
                LateKernel::Rbf(Block::Fglobal),
                LateKernel::Rbf(Block::Flocal),
                LateKernel::Linear(Block::Cov),
                LateKernel::Linear(Block::Hcov),
                LateKernel::Linear(Block::Kercov),
                LateKernel::DtwLaplacian,
            ],
            criterion: Criterion::Acc,
            segmentation: SegmentationParams::default(),
            seed: 0,
        }
    }
}

impl PipelineSpec {
    pub fn new(representation: Representation) -> Self {
        PipelineSpec {
            representation,
            ..PipelineSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPipeline(m));
        if !(self.c > 0.0 && self.c.is_finite() && self.tol > 0.0) {
            return bad(format!("SVM cost and tolerance must be positive (C={}, tol={})", self.c, self.tol));
        }
        if self.k_neighbors == 0 {
            return bad("k_neighbors must be at least 1".into());
        }
        if let SigmaMode::Fixed(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("fixed sigma must be positive, got {s}"));
            }
        }
        if let BandwidthMode::Fixed(g) = self.kercov_bandwidth {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("fixed ker-COV bandwidth must be positive, got {g}"));
            }
        }
        let d = self.cov_dim();
        if self.n_lift < d {
            return bad(format!("n_lift {} is below the covariance input dimension {d}", self.n_lift));
        }
        if self.k_cmim == 0 || self.k_pca == 0 || self.cmim_bins < 2 || self.cmim_bins > 255 {
            return bad("k_cmim, k_pca must be positive and cmim_bins in 2..=255".into());
        }
        self.hcov.validate().map_err(|e| Error::InvalidPipeline(e.to_string()))?;
        let fused = matches!(self.representation, Representation::CmimFused | Representation::PcaFused);
        if fused && self.fusion_blocks.is_empty() {
            return bad("fused pipelines need at least one block".into());
        }
        if self.representation == Representation::LateFused && self.late_kernels.is_empty() {
            return bad("late fusion needs at least one kernel".into());
        }
        Ok(())
    }

    pub(crate) fn cov_dim(&self) -> usize {
        match self.cov_source {
            CovSource::Coordinates => 3 * crate::data::MARKER_COUNT,
            CovSource::Kinematic => 16,
        }
    }

    pub(crate) fn svm_params(&self) -> crate::svm::SvmParams {
        crate::svm::SvmParams {
            c: self.c,
            tol: self.tol,
        }
    }
}

/// Derived seeds so independent random choices do not share streams.
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(tag)
}

/// Fit-free per-trial representations of a dataset, computed once and
/// shared by every fold. Expensive blocks are filled on first use.
pub struct FeatureCache {
    ids: Vec<String>,
    subjects: Vec<u32>,
    intentions: Vec<Intention>,
    fk: DMatrix<f64>,
    series: Vec<Sequence>,
    cov_input: Vec<DMatrix<f64>>,
    hcov_config: HCovConfig,
    cov: OnceLock<DMatrix<f64>>,
    hcov: OnceLock<Result<DMatrix<f64>, String>>,
}

impl FeatureCache {
    /// Filters and segments every trial, optionally keeps only the first
    /// `fraction` of each movement, then extracts the per-trial features.
    pub fn build(dataset: &Dataset, spec: &PipelineSpec, fraction: Option<f64>) -> Result<Self> {
        let map = dataset.marker_map();
        let prepared: Vec<_> = dataset
            .trials()
            .par_iter()
            .map(|t| {
                let p = kinematics::prepare_trial(t, map, &spec.segmentation)?;
                match fraction {
                    Some(f) => kinematics::truncate_snippet(&p, f),
                    None => Ok(p),
                }
            })
            .collect::<Result<_>>()?;
        let per_trial: Vec<(Vec<f64>, Sequence, DMatrix<f64>)> = prepared
            .par_iter()
            .map(|t| {
                let native = kinematics::kinematic_channels(t, map)?;
                let fk = KinematicSeries::from_trial(t, map)?.to_vector(FeatureSet::Both);
                let seq = Sequence::from_channels(&native)?;
                let cov_input = match spec.cov_source {
                    CovSource::Coordinates => kinematics::coordinate_matrix(t),
                    CovSource::Kinematic => DMatrix::from_fn(t.len(), native.len(), |r, c| native[c][r]),
                };
                Ok((fk, seq, cov_input))
            })
            .collect::<Result<_>>()?;
        let fk_dim = FeatureSet::Both.len();
        let fk = DMatrix::from_fn(per_trial.len(), fk_dim, |r, c| per_trial[r].0[c]);
        let (series, cov_input) = per_trial.into_iter().map(|(_, s, c)| (s, c)).unzip();
        Ok(FeatureCache {
            ids: dataset.trials().iter().map(|t| t.trial_id().to_string()).collect(),
            subjects: dataset.trials().iter().map(|t| t.subject_id()).collect(),
            intentions: dataset.trials().iter().map(|t| t.intention()).collect(),
            fk,
            series,
            cov_input,
            hcov_config: spec.hcov.clone(),
            cov: OnceLock::new(),
            hcov: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn subjects(&self) -> &[u32] {
        &self.subjects
    }

    pub fn intentions(&self) -> &[Intention] {
        &self.intentions
    }

    /// Intention labels as class indices.
    pub fn labels(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.intentions[r].index()).collect()
    }

    /// F_K rows (local then global), n x 1600.
    pub fn fk(&self) -> &DMatrix<f64> {
        &self.fk
    }

    /// Native-length 16-channel series.
    pub fn series(&self) -> &[Sequence] {
        &self.series
    }

    /// Per-trial samples (T x d) feeding the covariance descriptors.
    pub fn cov_input(&self) -> &[DMatrix<f64>] {
        &self.cov_input
    }

    /// Log-Euclidean covariance vectors, n x d(d+1)/2.
    pub fn cov(&self) -> Result<&DMatrix<f64>> {
        if let Some(m) = self.cov.get() {
            return Ok(m);
        }
        let rows: Vec<Vec<f64>> = self
            .cov_input
            .par_iter()
            .map(|x| spdcov::log_euclidean_vec(&spdcov::regularized_covariance(x, Regularization::default())?))
            .collect::<Result<_>>()?;
        Ok(self.cov.get_or_init(|| linalg::rows_to_matrix(&rows)))
    }

    /// H-COV vectors, n x (windows · d(d+1)/2).
    pub fn hcov(&self) -> Result<&DMatrix<f64>> {
        let cached = self.hcov.get_or_init(|| {
            self.cov_input
                .par_iter()
                .map(|x| spdcov::hcov_descriptor(x, &self.hcov_config))
                .collect::<Result<Vec<_>>>()
                .map(|rows| linalg::rows_to_matrix(&rows))
                .map_err(|e| e.to_string())
        });
        cached.as_ref().map_err(|e| Error::InvalidDataset(format!("H-COV: {e}")))
    }

    /// Row indices grouped by subject, subjects ascending.
    pub fn rows_by_subject(&self, rows: &[usize]) -> Vec<(u32, Vec<usize>)> {
        let mut subjects: Vec<u32> = rows.iter().map(|&r| self.subjects[r]).collect();
        subjects.sort_unstable();
        subjects.dedup();
        subjects
            .into_iter()
            .map(|s| (s, rows.iter().copied().filter(|&r| self.subjects[r] == s).collect()))
            .collect()
    }
}
