//! Leave-one-subject-out evaluation, comparison suites and snippet sweeps.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_pipeline, FeatureCache, PipelineSpec};
use crate::data::{Dataset, Intention};
use crate::error::{Error, Result};

/// The intentions taking part in one comparison, in enum order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassSubset(Vec<Intention>);

impl ClassSubset {
    pub fn all() -> Self {
        ClassSubset(Intention::ALL.to_vec())
    }

    pub fn new(mut classes: Vec<Intention>) -> Result<Self> {
        classes.sort();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::InvalidConfig("a comparison needs at least two intentions".into()));
        }
        Ok(ClassSubset(classes))
    }

    pub fn pair(a: Intention, b: Intention) -> Result<Self> {
        ClassSubset::new(vec![a, b])
    }

    /// The six pairs in enum order followed by the all-class comparison.
    pub fn suite() -> Vec<ClassSubset> {
        let mut out = Vec::with_capacity(7);
        for (i, &a) in Intention::ALL.iter().enumerate() {
            for &b in &Intention::ALL[i + 1..] {
                out.push(ClassSubset(vec![a, b]));
            }
        }
        out.push(ClassSubset::all());
        out
    }

    pub fn classes(&self) -> &[Intention] {
        &self.0
    }

    pub fn is_all(&self) -> bool {
        self.0.len() == Intention::ALL.len()
    }

    /// `all` or e.g. `pouring-passing`.
    pub fn label(&self) -> String {
        if self.is_all() {
            "all".into()
        } else {
            self.0.iter().map(|i| i.name().to_ascii_lowercase()).collect::<Vec<_>>().join("-")
        }
    }

    pub fn contains(&self, i: Intention) -> bool {
        self.0.contains(&i)
    }
}

impl std::str::FromStr for ClassSubset {
    type Err = Error;
    /// `all` or a comma-separated list of intentions.
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(ClassSubset::all());
        }
        let classes = s
            .split(',')
            .map(|p| p.trim().parse::<Intention>())
            .collect::<Result<Vec<_>>>()?;
        ClassSubset::new(classes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_subject: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<usize>,
    pub valid: bool,
    pub n_test: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]` over the report's classes.
    pub confusion: Vec<Vec<usize>>,
}

/// Aggregated results of one evaluation; wall time is logged, not stored,
/// so reports of identical runs are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub spec: PipelineSpec,
    pub seed: u64,
    pub classes: ClassSubset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    pub folds: Vec<FoldReport>,
    /// Mean over valid folds.
    pub mean_accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    /// Per class; 0 when a class is never predicted.
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub(crate) fn from_folds(
        spec: &PipelineSpec,
        classes: ClassSubset,
        fraction: Option<f64>,
        folds: Vec<FoldReport>,
        mut warnings: Vec<String>,
    ) -> Self {
        let k = classes.classes().len();
        let mut confusion = vec![vec![0usize; k]; k];
        let valid: Vec<&FoldReport> = folds.iter().filter(|f| f.valid).collect();
        for f in &valid {
            for (i, row) in f.confusion.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    confusion[i][j] += v;
                }
            }
        }
        if valid.is_empty() {
            warnings.push("no valid folds".into());
        }
        let mean_accuracy = if valid.is_empty() {
            0.0
        } else {
            valid.iter().map(|f| f.accuracy).sum::<f64>() / valid.len() as f64
        };
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = (0..k)
            .map(|j| ratio(confusion[j][j], (0..k).map(|i| confusion[i][j]).sum()))
            .collect();
        let recall = (0..k).map(|i| ratio(confusion[i][i], confusion[i].iter().sum())).collect();
        EvalReport {
            spec: spec.clone(),
            seed: spec.seed,
            classes,
            fraction,
            folds,
            mean_accuracy,
            confusion,
            precision,
            recall,
            warnings,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn valid_folds(&self) -> usize {
        self.folds.iter().filter(|f| f.valid).count()
    }
}

pub(crate) fn fold_confusion(classes: &ClassSubset, truth: &[usize], pred: &[usize]) -> (Vec<Vec<usize>>, f64) {
    let k = classes.classes().len();
    let pos = |label: usize| classes.classes().iter().position(|c| c.index() == label);
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = 0;
    for (&t, &p) in truth.iter().zip(pred) {
        correct += usize::from(t == p);
        if let (Some(i), Some(j)) = (pos(t), pos(p)) {
            confusion[i][j] += 1;
        }
    }
    let acc = if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 };
    (confusion, acc)
}

fn subset_rows(cache: &FeatureCache, classes: &ClassSubset) -> Vec<usize> {
    (0..cache.len()).filter(|&r| classes.contains(cache.intentions()[r])).collect()
}

/// `(test subject, train rows, test rows)` for every LOSO fold.
fn loso_folds(cache: &FeatureCache, rows: &[usize]) -> Result<Vec<(u32, Vec<usize>, Vec<usize>)>> {
    let groups = cache.rows_by_subject(rows);
    if groups.len() < 2 {
        return Err(Error::InvalidDataset(format!(
            "leave-one-subject-out needs at least 2 subjects, got {}",
            groups.len()
        )));
    }
    Ok(groups
        .into_iter()
        .map(|(s, test)| {
            let train = rows.iter().copied().filter(|&r| cache.subjects()[r] != s).collect();
            (s, train, test)
        })
        .collect())
}

/// LOSO over an existing feature cache, restricted to `classes`.
pub fn loso_evaluate_cached(
    cache: &FeatureCache,
    spec: &PipelineSpec,
    classes: &ClassSubset,
    fraction: Option<f64>,
) -> Result<EvalReport> {
    spec.validate()?;
    let started = Instant::now();
    let rows = subset_rows(cache, classes);
    let folds = loso_folds(cache, &rows)?;
    let results: Vec<(FoldReport, Option<String>)> = folds
        .par_iter()
        .map(|(s, train, test)| {
            let train_labels = cache.labels(train);
            let missing: Vec<&str> = classes
                .classes()
                .iter()
                .filter(|c| !train_labels.contains(&c.index()))
                .map(|c| c.name())
                .collect();
            let truth = cache.labels(test);
            if !missing.is_empty() {
                let k = classes.classes().len();
                let report = FoldReport {
                    test_subject: Some(*s),
                    split: None,
                    valid: false,
                    n_test: test.len(),
                    accuracy: 0.0,
                    confusion: vec![vec![0; k]; k],
                };
                let warning = format!("fold for subject {s} skipped: training lacks {}", missing.join(", "));
                return Ok((report, Some(warning)));
            }
            let fitted = fit_pipeline(cache, train, spec)?;
            let pred = fitted.predict(cache, test)?;
            let (confusion, accuracy) = fold_confusion(classes, &truth, &pred);
            Ok((
                FoldReport {
                    test_subject: Some(*s),
                    split: None,
                    valid: true,
                    n_test: test.len(),
                    accuracy,
                    confusion,
                },
                None,
            ))
        })
        .collect::<Result<_>>()?;
    let (folds, warnings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = EvalReport::from_folds(spec, classes.clone(), fraction, folds, warnings.into_iter().flatten().collect());
    log::info!(
        "{} {}: mean accuracy {:.4} in {:.2?}",
        spec.representation,
        classes.label(),
        report.mean_accuracy,
        started.elapsed()
    );
    Ok(report)
}

/// Leave-one-subject-out evaluation on `classes`.
pub fn loso_evaluate(dataset: &Dataset, spec: &PipelineSpec, classes: &ClassSubset) -> Result<EvalReport> {
    let cache = FeatureCache::build(dataset, spec, None)?;
    loso_evaluate_cached(&cache, spec, classes, None)
}

/// Serialized fitted parameters of every LOSO fold, by test subject.
pub fn loso_fold_fits(cache: &FeatureCache, spec: &PipelineSpec, classes: &ClassSubset) -> Result<Vec<(u32, String)>> {
    let rows = subset_rows(cache, classes);
    loso_folds(cache, &rows)?
        .iter()
        .map(|(s, train, _)| Ok((*s, fit_pipeline(cache, train, spec)?.to_json()?)))
        .collect()
}

/// The six pairwise comparisons and the all-class one, same spec.
pub fn comparison_suite(dataset: &Dataset, spec: &PipelineSpec) -> Result<Vec<EvalReport>> {
    let cache = FeatureCache::build(dataset, spec, None)?;
    ClassSubset::suite()
        .iter()
        .map(|c| loso_evaluate_cached(&cache, spec, c, None))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnippetCell {
    pub fraction: f64,
    pub report: EvalReport,
}

/// One LOSO per (fraction, comparison) on trials truncated to their
/// first `fraction` after segmentation.
pub fn snippet_sweep(
    dataset: &Dataset,
    spec: &PipelineSpec,
    fractions: &[f64],
    comparisons: &[ClassSubset],
) -> Result<Vec<SnippetCell>> {
    let mut out = Vec::with_capacity(fractions.len() * comparisons.len());
    for &f in fractions {
        let cache = FeatureCache::build(dataset, spec, Some(f))?;
        for c in comparisons {
            out.push(SnippetCell {
                fraction: f,
                report: loso_evaluate_cached(&cache, spec, c, Some(f))?,
            });
        }
    }
    Ok(out)
}

/// `comparison,pipeline,fraction,mean_accuracy,valid_folds` lines.
pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("comparison,pipeline,fraction,mean_accuracy,valid_folds\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.classes.label(),
            r.spec.representation,
            r.fraction.map_or(String::new(), |f| f.to_string()),
            r.mean_accuracy,
            r.valid_folds()
        );
    }
    out
}
