//! Accuracy when only the first 20%..100% of each movement is seen.

use ifm::data::generate_synthetic;
use ifm::kinematics::SNIPPET_FRACTIONS;
use ifm::protocol::{snippet_sweep, BandwidthMode, ClassSubset, PipelineSpec, Representation};
use ifm::SynthConfig;

fn main() -> ifm::Result<()> {
    let ds = generate_synthetic(&SynthConfig {
        n_subjects: 6,
        trials_per_cell: 10,
        ..SynthConfig::default()
    })?;
    let mut spec = PipelineSpec::new(Representation::Kercov);
    spec.kercov_bandwidth = BandwidthMode::Median;
    for cell in snippet_sweep(&ds, &spec, &SNIPPET_FRACTIONS, &[ClassSubset::all()])? {
        let bar = "#".repeat((cell.report.mean_accuracy * 50.0).round() as usize);
        println!("{:>4.0}%  {:5.1}%  {bar}", 100.0 * cell.fraction, 100.0 * cell.report.mean_accuracy);
    }
    Ok(())
}
