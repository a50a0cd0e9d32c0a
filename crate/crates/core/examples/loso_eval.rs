//! The six pairwise comparisons plus all-class, leave-one-subject-out,
//! printed as the summary CSV the CLI writes.

use ifm::data::generate_synthetic;
use ifm::protocol::{comparison_suite, summary_csv, PipelineSpec, Representation};
use ifm::SynthConfig;

fn main() -> ifm::Result<()> {
    let ds = generate_synthetic(&SynthConfig {
        n_subjects: 5,
        trials_per_cell: 8,
        ..SynthConfig::default()
    })?;
    let reports = comparison_suite(&ds, &PipelineSpec::new(Representation::Hcov))?;
    print!("{}", summary_csv(&reports));
    let all = reports.iter().find(|r| r.classes.is_all()).unwrap();
    println!("all-class confusion (rows true, columns predicted):");
    for row in &all.confusion {
        println!("  {row:?}");
    }
    Ok(())
}
