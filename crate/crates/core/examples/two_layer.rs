//! Subject identification followed by per-subject intention classifiers,
//! against a flat classifier trained on the same splits.

use ifm::data::generate_synthetic;
use ifm::protocol::{two_layer_evaluate, TwoLayerConfig};
use ifm::SynthConfig;

fn main() -> ifm::Result<()> {
    let ds = generate_synthetic(&SynthConfig::default())?;
    let config = TwoLayerConfig {
        repeats: 3,
        ..TwoLayerConfig::default()
    };
    let report = two_layer_evaluate(&ds, &config)?;
    let all = report.all_class();
    for s in &all.splits {
        println!(
            "split {}: subject id {:.1}%, two-layer {:.1}%, flat {:.1}%, known subject {:.1}%",
            s.split,
            100.0 * s.layer1_accuracy,
            100.0 * s.end_to_end_accuracy,
            100.0 * s.flat_accuracy,
            100.0 * s.oracle_accuracy
        );
    }
    println!(
        "mean: two-layer {:.1}% vs flat {:.1}%",
        100.0 * all.mean_end_to_end_accuracy,
        100.0 * all.mean_flat_accuracy
    );
    Ok(())
}
