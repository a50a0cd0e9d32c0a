//! DTW between kinematic series, K-nn and the Laplacian-kernel SVM under
//! leave-one-subject-out.

use ifm::data::generate_synthetic;
use ifm::dtw;
use ifm::protocol::{loso_evaluate, ClassSubset, FeatureCache, PipelineSpec, Representation};
use ifm::SynthConfig;

fn main() -> ifm::Result<()> {
    let ds = generate_synthetic(&SynthConfig {
        n_subjects: 4,
        trials_per_cell: 4,
        ..SynthConfig::default()
    })?;

    let cache = FeatureCache::build(&ds, &PipelineSpec::new(Representation::DtwKnn), None)?;
    let series = cache.series();
    let same = dtw::dtw_distance(&series[0], &series[1])?;
    let other = dtw::dtw_distance(&series[0], &series[series.len() - 1])?;
    println!("DTW {} vs {}: {same:.1}", cache.ids()[0], cache.ids()[1]);
    println!("DTW {} vs {}: {other:.1}", cache.ids()[0], cache.ids()[series.len() - 1]);

    let dist = dtw::distance_matrix(series, cache.ids().to_vec())?;
    let gram = dtw::laplacian_kernel(&dist, dtw::median_heuristic_sigma(&dist))?;
    println!("Laplacian kernel min eigenvalue {:.2e}", gram.min_eigenvalue()?);

    for rep in [Representation::DtwKnn, Representation::DtwLaplacianSvm] {
        let report = loso_evaluate(&ds, &PipelineSpec::new(rep), &ClassSubset::all())?;
        println!("{rep:<18} all-class LOSO accuracy {:.1}%", 100.0 * report.mean_accuracy);
    }
    Ok(())
}
