//! Segments a trial and prints its kinematic channels: raw length,
//! segmented length and a few samples of the time-normalized series.

use ifm::data::generate_synthetic;
use ifm::kinematics::{self, Channel, FeatureSet, KinematicSeries, RESAMPLED_LEN};
use ifm::{Intention, SegmentationParams, SynthConfig};

fn main() -> ifm::Result<()> {
    let ds = generate_synthetic(&SynthConfig {
        n_subjects: 1,
        trials_per_cell: 3,
        ..SynthConfig::default()
    })?;
    let map = ds.marker_map();
    let params = SegmentationParams::default();

    let trial = &ds.trials()[0];
    let moving = kinematics::prepare_trial(trial, map, &params)?;
    println!("{}: {} frames recorded, {} while moving", trial.trial_id(), trial.len(), moving.len());

    let series = KinematicSeries::from_trial(&moving, map)?;
    for (channel, values) in series.channels() {
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        println!("  {:<22} [{lo:9.2}, {hi:9.2}]", channel.name());
    }

    // peak grip aperture and its timing, averaged per intention
    for i in Intention::ALL {
        let mut peaks = Vec::new();
        for t in ds.trials().iter().filter(|t| t.intention() == i) {
            let s = KinematicSeries::from_trial(&kinematics::prepare_trial(t, map, &params)?, map)?;
            let ga = s.channel(Channel::GripAperture);
            let (at, peak) = ga.iter().enumerate().fold((0, f64::MIN), |b, (k, &v)| if v > b.1 { (k, v) } else { b });
            peaks.push((peak, at as f64 / (RESAMPLED_LEN - 1) as f64));
        }
        let n = peaks.len() as f64;
        let (p, at) = peaks.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0 / n, a.1 + b.1 / n));
        println!("{:<8} peak aperture {p:.1} mm at {:.0}% of the movement", i.name(), 100.0 * at);
    }
    println!("F_K length {}", series.to_vector(FeatureSet::Both).len());
    Ok(())
}
