//! Trains a one-vs-rest linear SVM on F_K and lists the channels whose
//! weights are high for exactly one intention.

use std::collections::BTreeMap;

use ifm::data::generate_synthetic;
use ifm::fusion::{unit_gram_scale, Standardizer};
use ifm::kinematics::{Channel, RESAMPLED_LEN};
use ifm::protocol::{FeatureCache, PipelineSpec, Representation};
use ifm::svm::{self, SvmParams, TrainInput};
use ifm::{Intention, SynthConfig};

fn main() -> ifm::Result<()> {
    let ds = generate_synthetic(&SynthConfig {
        n_subjects: 4,
        trials_per_cell: 8,
        ..SynthConfig::default()
    })?;
    let cache = FeatureCache::build(&ds, &PipelineSpec::new(Representation::Fk), None)?;
    let rows: Vec<usize> = (0..cache.len()).collect();
    let z = Standardizer::fit(cache.fk()).apply(cache.fk())?;
    let x = &z * unit_gram_scale(&z);
    let model = svm::train_ovr(TrainInput::Features(&x), &cache.labels(&rows), SvmParams::default())?;
    let report = svm::mine_weights(&model, svm::DEFAULT_WEIGHT_THRESHOLD)?;

    let mut by_class: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
    for &(class, feature) in &report.intention_specific {
        let channel = Channel::ALL[feature / RESAMPLED_LEN].name();
        *by_class.entry(class).or_default().entry(channel).or_default() += 1;
    }
    for (class, channels) in by_class {
        let mut top: Vec<_> = channels.into_iter().collect();
        top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let shown: Vec<String> = top.iter().take(4).map(|(c, n)| format!("{c} ({n})")).collect();
        println!("{:<8} {}", Intention::from_index(class).unwrap().name(), shown.join(", "));
    }
    Ok(())
}
