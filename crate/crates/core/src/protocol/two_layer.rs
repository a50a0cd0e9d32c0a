//! Two-layer architecture: a subject identifier routes each trial to a
//! subject-specific intention classifier.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pipeline::{block_rows, BlockFit};
use super::{derive_seed, BandwidthMode, Block, ClassSubset, FeatureCache, PipelineSpec, Representation};
use crate::data::{Dataset, Intention};
use crate::error::{Error, Result};
use crate::fusion::{self, CmimSelector, FeatureBlock, Standardizer};
use crate::linalg;
use crate::svm::{self, SvmModel, TrainInput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoLayerConfig {
    pub repeats: usize,
    pub seed: u64,
    /// Blocks concatenated before CMIM selection for layer 2.
    pub blocks: Vec<Block>,
    pub k_cmim: usize,
    pub cmim_bins: usize,
    pub kercov_bandwidth: BandwidthMode,
    pub n_lift: usize,
    pub c: f64,
    pub tol: f64,
    /// Also evaluate the six pairwise comparisons.
    pub pairwise: bool,
}

impl Default for TwoLayerConfig {
    fn default() -> Self {
        TwoLayerConfig {
            repeats: 20,
            seed: 0,
            blocks: vec![Block::Fk, Block::Cov, Block::Hcov, Block::Kercov],
            k_cmim: 150,
            cmim_bins: 10,
            kercov_bandwidth: BandwidthMode::Median,
            n_lift: 64,
            c: crate::svm::DEFAULT_C,
            tol: crate::svm::DEFAULT_TOL,
            pairwise: false,
        }
    }
}

impl TwoLayerConfig {
    /// The pipeline spec whose block machinery layer 2 reuses.
    pub fn pipeline_spec(&self) -> PipelineSpec {
        PipelineSpec {
            representation: Representation::CmimFused,
            c: self.c,
            tol: self.tol,
            k_cmim: self.k_cmim,
            cmim_bins: self.cmim_bins,
            kercov_bandwidth: self.kercov_bandwidth,
            n_lift: self.n_lift,
            fusion_blocks: self.blocks.clone(),
            seed: self.seed,
            ..PipelineSpec::default()
        }
    }
}

/// Layer 1 predicts the subject from z-normalized F_K; layer 2 holds one
/// intention classifier per training subject over shared CMIM features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerModel {
    pub layer1_standardizer: Standardizer,
    pub layer1_scale: f64,
    pub layer1: SvmModel,
    pub blocks: Vec<BlockFit>,
    pub standardizer: Standardizer,
    pub cmim: CmimSelector,
    pub layer2_scale: f64,
    pub layer2: BTreeMap<u32, SvmModel>,
    /// Single classifier over all training subjects, same features.
    pub flat: SvmModel,
}

/// Per (subject, intention) cell, `round(2m/3)` shuffled trials go to
/// training and the rest to test.
pub fn stratified_split(cache: &FeatureCache, rows: &[usize], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut cells: BTreeMap<(u32, Intention), Vec<usize>> = BTreeMap::new();
    for &r in rows {
        cells.entry((cache.subjects()[r], cache.intentions()[r])).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for ((subject, intention), mut members) in cells {
        if members.len() < 3 {
            return Err(Error::InsufficientCell {
                subject,
                intention: intention.name().into(),
                count: members.len(),
                needed: 3,
            });
        }
        members.shuffle(&mut rng);
        let n_train = (2.0 * members.len() as f64 / 3.0).round() as usize;
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn layer2_features(
    cache: &FeatureCache,
    blocks: &[BlockFit],
    standardizer: &Standardizer,
    cmim: &CmimSelector,
    rows: &[usize],
) -> Result<DMatrix<f64>> {
    let parts = blocks.iter().map(|b| block_rows(cache, b, rows)).collect::<Result<Vec<_>>>()?;
    let width = parts.iter().map(|p| p.ncols()).sum();
    let mut x = DMatrix::zeros(rows.len(), width);
    let mut off = 0;
    for p in parts {
        x.columns_mut(off, p.ncols()).copy_from(&p);
        off += p.ncols();
    }
    Ok(cmim.transform(&standardizer.apply(&x)?))
}

/// Trains both layers and the flat baseline on the cache rows `train`.
pub fn two_layer_train_cached(cache: &FeatureCache, train: &[usize], config: &TwoLayerConfig) -> Result<TwoLayerModel> {
    let spec = config.pipeline_spec();
    spec.validate()?;
    let params = spec.svm_params();
    let subjects: Vec<usize> = train.iter().map(|&r| cache.subjects()[r] as usize).collect();
    let intentions = cache.labels(train);

    let fk = linalg::select_rows(cache.fk(), train);
    let layer1_standardizer = Standardizer::fit(&fk);
    let mut z1 = layer1_standardizer.apply(&fk)?;
    let layer1_scale = fusion::unit_gram_scale(&z1);
    z1 *= layer1_scale;
    let layer1 = svm::train_ovr(TrainInput::Features(&z1), &subjects, params)?;

    let blocks = config
        .blocks
        .iter()
        .map(|&b| super::pipeline::fit_block(cache, b, train, &intentions, &spec))
        .collect::<Result<Vec<_>>>()?;
    let feature_blocks = blocks
        .iter()
        .map(|b| {
            Ok(FeatureBlock {
                name: format!("{b:?}"),
                matrix: block_rows(cache, b, train)?,
                provenance: "feature-cache".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<usize> = (0..train.len()).collect();
    let (z, standardizer) = fusion::concat_blocks(&feature_blocks, &all)?;
    drop(feature_blocks);
    let k = config.k_cmim.min(z.ncols());
    let cmim = CmimSelector::fit(&z, &intentions, k, config.cmim_bins.min(z.nrows()))?;
    let mut features = cmim.transform(&z);
    let layer2_scale = fusion::unit_gram_scale(&features);
    features *= layer2_scale;

    let flat = svm::train_ovr(TrainInput::Features(&features), &intentions, params)?;
    let mut layer2 = BTreeMap::new();
    for (s, _) in cache.rows_by_subject(train) {
        let local: Vec<usize> = (0..train.len()).filter(|&i| subjects[i] == s as usize).collect();
        let x = linalg::select_rows(&features, &local);
        let y: Vec<usize> = local.iter().map(|&i| intentions[i]).collect();
        layer2.insert(s, svm::train_ovr(TrainInput::Features(&x), &y, params)?);
    }
    Ok(TwoLayerModel {
        layer1_standardizer,
        layer1_scale,
        layer1,
        blocks,
        standardizer,
        cmim,
        layer2_scale,
        layer2,
        flat,
    })
}

/// Builds the feature cache and trains on one stratified split.
pub fn two_layer_train(dataset: &Dataset, config: &TwoLayerConfig, split_seed: u64) -> Result<TwoLayerModel> {
    let cache = FeatureCache::build(dataset, &config.pipeline_spec(), None)?;
    let rows: Vec<usize> = (0..cache.len()).collect();
    let (train, _) = stratified_split(&cache, &rows, split_seed)?;
    two_layer_train_cached(&cache, &train, config)
}

/// Per-row predictions of every route through the model.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerPredictions {
    pub subjects: Vec<u32>,
    pub intentions: Vec<usize>,
    pub flat: Vec<usize>,
    /// Layer 2 applied with the true subject.
    pub oracle: Vec<usize>,
}

impl TwoLayerModel {
    pub fn predict_rows(&self, cache: &FeatureCache, rows: &[usize]) -> Result<TwoLayerPredictions> {
        let fk = linalg::select_rows(cache.fk(), rows);
        let subjects: Vec<u32> = self
            .layer1
            .predict(&(self.layer1_standardizer.apply(&fk)? * self.layer1_scale))?
            .into_iter()
            .map(|s| s as u32)
            .collect();
        let x = layer2_features(cache, &self.blocks, &self.standardizer, &self.cmim, rows)? * self.layer2_scale;
        let route = |targets: &[u32]| -> Result<Vec<usize>> {
            let mut out = vec![0; rows.len()];
            for (s, model) in &self.layer2 {
                let idx: Vec<usize> = (0..rows.len()).filter(|&i| targets[i] == *s).collect();
                if idx.is_empty() {
                    continue;
                }
                for (i, p) in idx.iter().zip(model.predict(&linalg::select_rows(&x, &idx))?) {
                    out[*i] = p;
                }
            }
            // subjects unseen in training fall back to the flat model
            let unseen: Vec<usize> = (0..rows.len()).filter(|&i| !self.layer2.contains_key(&targets[i])).collect();
            if !unseen.is_empty() {
                for (i, p) in unseen.iter().zip(self.flat.predict(&linalg::select_rows(&x, &unseen))?) {
                    out[*i] = p;
                }
            }
            Ok(out)
        };
        let intentions = route(&subjects)?;
        let truth: Vec<u32> = rows.iter().map(|&r| cache.subjects()[r]).collect();
        let oracle = route(&truth)?;
        let flat = self.flat.predict(&x)?;
        Ok(TwoLayerPredictions {
            subjects,
            intentions,
            flat,
            oracle,
        })
    }
}

/// `(estimated subject, intention)` for each cache row.
pub fn two_layer_predict(model: &TwoLayerModel, cache: &FeatureCache, rows: &[usize]) -> Result<Vec<(u32, Intention)>> {
    let p = model.predict_rows(cache, rows)?;
    Ok(p.subjects
        .into_iter()
        .zip(p.intentions)
        .map(|(s, i)| (s, Intention::from_index(i).expect("intention label")))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: usize,
    pub split_seed: u64,
    pub n_test: usize,
    pub layer1_accuracy: f64,
    pub end_to_end_accuracy: f64,
    pub flat_accuracy: f64,
    pub oracle_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub classes: ClassSubset,
    pub splits: Vec<SplitReport>,
    pub mean_layer1_accuracy: f64,
    pub mean_end_to_end_accuracy: f64,
    pub mean_flat_accuracy: f64,
    pub mean_oracle_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerReport {
    pub config: TwoLayerConfig,
    /// All-class first, then the pairs when requested.
    pub comparisons: Vec<ComparisonSummary>,
}

impl TwoLayerReport {
    pub fn all_class(&self) -> &ComparisonSummary {
        &self.comparisons[0]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn accuracy<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Repeated stratified splits over one comparison.
pub fn evaluate_comparison(cache: &FeatureCache, classes: &ClassSubset, config: &TwoLayerConfig) -> Result<ComparisonSummary> {
    let rows: Vec<usize> = (0..cache.len()).filter(|&r| classes.contains(cache.intentions()[r])).collect();
    let mut splits = Vec::with_capacity(config.repeats);
    for split in 0..config.repeats {
        let split_seed = derive_seed(config.seed, 100 + split as u64);
        let (train, test) = stratified_split(cache, &rows, split_seed)?;
        let model = two_layer_train_cached(cache, &train, config)?;
        let p = model.predict_rows(cache, &test)?;
        let subjects: Vec<u32> = test.iter().map(|&r| cache.subjects()[r]).collect();
        let truth = cache.labels(&test);
        let report = SplitReport {
            split,
            split_seed,
            n_test: test.len(),
            layer1_accuracy: accuracy(&p.subjects, &subjects),
            end_to_end_accuracy: accuracy(&p.intentions, &truth),
            flat_accuracy: accuracy(&p.flat, &truth),
            oracle_accuracy: accuracy(&p.oracle, &truth),
        };
        log::info!(
            "two-layer {} split {split}: layer1 {:.4} end-to-end {:.4} flat {:.4} oracle {:.4}",
            classes.label(),
            report.layer1_accuracy,
            report.end_to_end_accuracy,
            report.flat_accuracy,
            report.oracle_accuracy
        );
        splits.push(report);
    }
    Ok(ComparisonSummary {
        classes: classes.clone(),
        mean_layer1_accuracy: mean(splits.iter().map(|s| s.layer1_accuracy)),
        mean_end_to_end_accuracy: mean(splits.iter().map(|s| s.end_to_end_accuracy)),
        mean_flat_accuracy: mean(splits.iter().map(|s| s.flat_accuracy)),
        mean_oracle_accuracy: mean(splits.iter().map(|s| s.oracle_accuracy)),
        splits,
    })
}

/// Mean layer-1 and end-to-end accuracy over `config.repeats` splits,
/// with the flat CMIM baseline and the oracle-routing ceiling on the
/// same splits.
pub fn two_layer_evaluate(dataset: &Dataset, config: &TwoLayerConfig) -> Result<TwoLayerReport> {
    if config.repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    let cache = FeatureCache::build(dataset, &config.pipeline_spec(), None)?;
    let mut comparisons = vec![evaluate_comparison(&cache, &ClassSubset::all(), config)?];
    if config.pairwise {
        for c in ClassSubset::suite().into_iter().filter(|c| !c.is_all()) {
            comparisons.push(evaluate_comparison(&cache, &c, config)?);
        }
    }
    Ok(TwoLayerReport {
        config: config.clone(),
        comparisons,
    })
}
