//! Covariance, H-COV and ker-COV descriptors of one trial, and how far
//! apart two trials are under the log-Euclidean metric.

use ifm::data::generate_synthetic;
use ifm::kinematics;
use ifm::spdcov::{self, FourierLift, HCovConfig, Regularization};
use ifm::{SegmentationParams, SynthConfig};

fn main() -> ifm::Result<()> {
    let ds = generate_synthetic(&SynthConfig {
        n_subjects: 2,
        trials_per_cell: 2,
        ..SynthConfig::default()
    })?;
    let map = ds.marker_map();
    let params = SegmentationParams::default();
    let x: Vec<_> = ds
        .trials()
        .iter()
        .map(|t| Ok(kinematics::coordinate_matrix(&kinematics::prepare_trial(t, map, &params)?)))
        .collect::<ifm::Result<_>>()?;

    let cov = spdcov::regularized_covariance(&x[0], Regularization::default())?;
    let v0 = spdcov::log_euclidean_vec(&cov)?;
    println!("trial 0: {} x {} samples, covariance vector length {}", x[0].nrows(), x[0].ncols(), v0.len());

    let hcov = HCovConfig::default();
    println!("H-COV: {} windows, {} values", hcov.window_count(), spdcov::hcov_descriptor(&x[0], &hcov)?.len());

    let bandwidth = spdcov::median_frame_distance(&x, 500);
    let lift = FourierLift::new(x[0].ncols(), 64, bandwidth, 7)?;
    println!("ker-COV: bandwidth {bandwidth:.1} mm, {} values", lift.descriptor(&x[0], Regularization::default())?.len());

    // log-Euclidean distances from trial 0
    for (t, xi) in ds.trials().iter().zip(&x).skip(1) {
        let v = spdcov::log_euclidean_vec(&spdcov::regularized_covariance(xi, Regularization::default())?)?;
        let d = v0.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        println!("  {:<18} {d:8.3}", t.trial_id());
    }
    Ok(())
}
