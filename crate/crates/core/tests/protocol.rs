mod common;

use ifm::protocol::{
    self, stratified_split, ClassSubset, FeatureCache, PipelineSpec, Representation, TwoLayerConfig,
};
use ifm::Dataset;

fn small(seed: u64) -> Dataset {
    ifm::data::generate_synthetic(&common::small_config(seed, 3, 4)).unwrap()
}

#[test]
fn majority_baseline_sits_at_chance() {
    let ds = small(2);
    let report = protocol::loso_evaluate(&ds, &PipelineSpec::new(Representation::Majority), &ClassSubset::all()).unwrap();
    assert_eq!(report.mean_accuracy, 0.25);
    assert_eq!(report.folds.len(), 3);
}

#[test]
fn fk_beats_chance_on_default_data() {
    let ds = ifm::data::generate_synthetic(&ifm::SynthConfig::default()).unwrap();
    let report = protocol::loso_evaluate(&ds, &PipelineSpec::new(Representation::Fk), &ClassSubset::all()).unwrap();
    assert!(report.mean_accuracy > 0.30, "fk accuracy {}", report.mean_accuracy);
}

#[test]
fn report_json_has_the_documented_fields() {
    let ds = small(3);
    let report = protocol::loso_evaluate(&ds, &PipelineSpec::new(Representation::Cov), &ClassSubset::all()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    for key in ["spec", "seed", "folds", "mean_accuracy", "warnings"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let fold = &v["folds"][0];
    assert!(fold.get("test_subject").is_some() && fold.get("accuracy").is_some() && fold.get("confusion").is_some());
    let counted: usize = report.confusion.iter().flatten().sum();
    assert_eq!(counted, ds.len());
}

#[test]
fn suite_has_six_pairs_and_all_class() {
    let ds = small(4);
    let reports = protocol::comparison_suite(&ds, &PipelineSpec::new(Representation::Cov)).unwrap();
    assert_eq!(reports.len(), 7);
    assert!(reports.iter().filter(|r| r.classes.is_all()).count() == 1);
    for r in reports.iter().filter(|r| !r.classes.is_all()) {
        assert_eq!(r.classes.classes().len(), 2);
        assert_eq!(r.confusion.len(), 2);
    }
}

#[test]
fn stratified_split_keeps_two_thirds_per_cell() {
    let ds = small(5);
    let cache = FeatureCache::build(&ds, &PipelineSpec::default(), None).unwrap();
    let rows: Vec<usize> = (0..cache.len()).collect();
    let (train, test) = stratified_split(&cache, &rows, 9).unwrap();
    assert_eq!(train.len() + test.len(), rows.len());
    assert!(train.iter().all(|r| !test.contains(r)));
    // four trials per cell: round(8/3) = 3 train, 1 test
    assert_eq!(test.len(), 3 * 4);
    assert_eq!(stratified_split(&cache, &rows, 9).unwrap(), (train, test));
}

#[test]
fn stratified_split_rejects_tiny_cells() {
    let ds = ifm::data::generate_synthetic(&common::small_config(1, 2, 2)).unwrap();
    let cache = FeatureCache::build(&ds, &PipelineSpec::default(), None).unwrap();
    let rows: Vec<usize> = (0..cache.len()).collect();
    assert!(matches!(stratified_split(&cache, &rows, 0), Err(ifm::Error::InsufficientCell { .. })));
}

#[test]
fn two_layer_report_is_consistent() {
    let ds = small(6);
    let config = TwoLayerConfig {
        repeats: 2,
        k_cmim: 40,
        ..TwoLayerConfig::default()
    };
    let report = protocol::two_layer_evaluate(&ds, &config).unwrap();
    let all = report.all_class();
    assert_eq!(all.splits.len(), 2);
    for s in &all.splits {
        for a in [s.layer1_accuracy, s.end_to_end_accuracy, s.flat_accuracy, s.oracle_accuracy] {
            assert!((0.0..=1.0).contains(&a));
        }
        // a perfect router makes routed and oracle predictions coincide
        if s.layer1_accuracy == 1.0 {
            assert_eq!(s.end_to_end_accuracy, s.oracle_accuracy);
        }
    }
}

#[test]
fn two_layer_predictions_name_known_subjects() {
    let ds = small(7);
    let config = TwoLayerConfig {
        k_cmim: 40,
        ..TwoLayerConfig::default()
    };
    let cache = FeatureCache::build(&ds, &config.pipeline_spec(), None).unwrap();
    let rows: Vec<usize> = (0..cache.len()).collect();
    let (train, test) = stratified_split(&cache, &rows, 1).unwrap();
    let model = protocol::two_layer_train_cached(&cache, &train, &config).unwrap();
    let out = protocol::two_layer_predict(&model, &cache, &test).unwrap();
    assert_eq!(out.len(), test.len());
    assert!(out.iter().all(|(s, _)| (1..=3).contains(s)));
}

#[test]
fn test_fold_perturbation_leaves_linear_fits_unchanged() {
    let ds = small(8);
    for rep in [Representation::Fk, Representation::Hcov, Representation::PcaFused] {
        let spec = PipelineSpec::new(rep);
        let base = protocol::loso_fold_fits(&FeatureCache::build(&ds, &spec, None).unwrap(), &spec, &ClassSubset::all()).unwrap();
        let shifted = ds
            .map_trials(|t| {
                if t.subject_id() != 2 {
                    return Ok(t.clone());
                }
                let frames = t
                    .frames()
                    .iter()
                    .map(|f| {
                        let mut g = *f;
                        g.iter_mut().for_each(|p| p.x += 15.0);
                        g
                    })
                    .collect();
                ifm::Trial::new(t.trial_id(), t.subject_id(), t.intention(), t.sample_rate(), frames)
            })
            .unwrap();
        let other = protocol::loso_fold_fits(&FeatureCache::build(&shifted, &spec, None).unwrap(), &spec, &ClassSubset::all()).unwrap();
        let fold = |fits: &[(u32, String)]| fits.iter().find(|(s, _)| *s == 2).unwrap().1.clone();
        assert_eq!(fold(&base), fold(&other), "{rep}");
        // covariances ignore a translation; F_K's global channels do not
        if rep == Representation::Fk {
            assert!(base.iter().zip(&other).any(|(a, b)| a.0 != 2 && a.1 != b.1));
        }
    }
}
