//! Early fusion (CMIM and PCA) and late kernel fusion under LOSO.

use ifm::data::generate_synthetic;
use ifm::fusion::Criterion;
use ifm::protocol::{loso_evaluate, ClassSubset, PipelineSpec, Representation};
use ifm::SynthConfig;

fn main() -> ifm::Result<()> {
    let ds = generate_synthetic(&SynthConfig {
        n_subjects: 4,
        trials_per_cell: 6,
        ..SynthConfig::default()
    })?;
    let mut specs = Vec::new();
    for rep in [Representation::CmimFused, Representation::PcaFused] {
        let mut spec = PipelineSpec::new(rep);
        spec.k_pca = 40;
        specs.push((rep.to_string(), spec));
    }
    for criterion in [Criterion::Acc, Criterion::Mse] {
        let mut spec = PipelineSpec::new(Representation::LateFused);
        spec.criterion = criterion;
        specs.push((format!("late-fused ({criterion:?})"), spec));
    }
    for (name, spec) in specs {
        let report = loso_evaluate(&ds, &spec, &ClassSubset::all())?;
        println!("{name:<20} {:.1}%", 100.0 * report.mean_accuracy);
    }
    Ok(())
}
