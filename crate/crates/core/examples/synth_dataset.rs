//! Generates a synthetic dataset, writes it to disk and loads it back.
//!
//! cargo run --release --example synth_dataset [-- OUT_DIR]

use std::path::PathBuf;

use ifm::data::{self, generate_synthetic};
use ifm::{Intention, SynthConfig};

fn main() -> ifm::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ifm_synth_example"));
    let config = SynthConfig {
        n_subjects: 4,
        trials_per_cell: 5,
        seed: 3,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic(&config)?;
    let manifest = data::save_dataset(&ds, &out)?;
    let back = data::load_dataset(&manifest)?;
    assert_eq!(back.len(), ds.len());

    println!("wrote {} trials to {}", ds.len(), manifest.display());
    println!("subjects: {:?}", back.subjects());
    for i in Intention::ALL {
        let trials: Vec<_> = back.trials().iter().filter(|t| t.intention() == i).collect();
        let mean_len = trials.iter().map(|t| t.len()).sum::<usize>() as f64 / trials.len() as f64;
        println!("{:<8} {} trials, mean length {:.0} frames", i.name(), trials.len(), mean_len);
    }
    Ok(())
}
