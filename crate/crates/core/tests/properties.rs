mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, Rotation3, Vector3};
use proptest::prelude::*;

use ifm::data::{Intention, MarkerMap, Trial};
use ifm::dtw::{self, LaplacianKernel};
use ifm::fusion::{self, Standardizer};
use ifm::kinematics::{self, FeatureSet, KinematicSeries};
use ifm::spdcov::{self, HCovConfig, Regularization};
use ifm::svm::{self, SvmParams};

fn frames_strategy(max_len: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, dim), 1..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn dtw_matches_path_enumeration(x in frames_strategy(5, 2), y in frames_strategy(5, 2)) {
        let d = dtw::dtw_distance(&common::frames_to_sequence(&x), &common::frames_to_sequence(&y)).unwrap();
        prop_assert!((d - common::dtw_exhaustive(&x, &y)).abs() < 1e-9);
    }

    #[test]
    fn dtw_is_symmetric_and_zero_on_self(x in frames_strategy(12, 3), y in frames_strategy(12, 3)) {
        let (sx, sy) = (common::frames_to_sequence(&x), common::frames_to_sequence(&y));
        prop_assert_eq!(dtw::dtw_distance(&sx, &sy).unwrap(), dtw::dtw_distance(&sy, &sx).unwrap());
        prop_assert_eq!(dtw::dtw_distance(&sx, &sx).unwrap(), 0.0);
    }

    #[test]
    fn dtw_bounded_by_diagonal_path(x in frames_strategy(10, 2)) {
        // equal lengths: the diagonal path is one admissible alignment
        let y: Vec<Vec<f64>> = x.iter().map(|f| f.iter().map(|v| v * 0.5 + 1.0).collect()).collect();
        let diag: f64 = x.iter().zip(&y).map(|(a, b)| {
            a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
        }).sum();
        let d = dtw::dtw_distance(&common::frames_to_sequence(&x), &common::frames_to_sequence(&y)).unwrap();
        prop_assert!(d <= diag + 1e-9);
    }

    #[test]
    fn laplacian_kernel_is_spectral_inverse(seed in 0u64..10_000, n in 2usize..12) {
        let mut rng = common::rng(seed);
        let seqs: Vec<_> = (0..n).map(|_| common::frames_to_sequence(&common::random_frames(&mut rng, 4, 2))).collect();
        let ids = (0..n).map(|i| i.to_string()).collect();
        let dist = dtw::distance_matrix(&seqs, ids).unwrap();
        let sigma = dtw::median_heuristic_sigma(&dist);
        let k = LaplacianKernel::fit(dist.matrix(), sigma).unwrap();
        let oracle = common::laplacian_pinv_oracle(dist.matrix(), sigma);
        let scale = oracle.amax().max(1.0);
        prop_assert!((&k.gram - &oracle).amax() <= 1e-6 * scale);
    }

    #[test]
    fn covariance_descriptors_are_spd(seed in 0u64..10_000, t in 2usize..30, d in 1usize..6) {
        let mut rng = common::rng(seed);
        let x = DMatrix::from_row_iterator(t, d, common::random_frames(&mut rng, t, d).into_iter().flatten());
        let c = spdcov::regularized_covariance(&x, Regularization::default()).unwrap();
        prop_assert!(ifm::linalg::min_eigenvalue(&c.matrix).unwrap() > 0.0);
        let v = spdcov::log_euclidean_vec(&c).unwrap();
        prop_assert_eq!(v.len(), d * (d + 1) / 2);
    }

    #[test]
    fn log_euclidean_inner_product_is_frobenius(seed in 0u64..10_000, d in 1usize..6) {
        let mut rng = common::rng(seed);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            let x = DMatrix::from_row_iterator(20, d, common::random_frames(rng, 20, d).into_iter().flatten());
            spdcov::regularized_covariance(&x, Regularization::Absolute(0.1)).unwrap()
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        let (va, vb) = (spdcov::log_euclidean_vec(&a).unwrap(), spdcov::log_euclidean_vec(&b).unwrap());
        let inner: f64 = va.iter().zip(&vb).map(|(p, q)| p * q).sum();
        let (la, lb) = (spdcov::spd_log(&a.matrix).unwrap(), spdcov::spd_log(&b.matrix).unwrap());
        prop_assert!((inner - la.dot(&lb)).abs() < 1e-9 * (1.0 + inner.abs()));
    }

    #[test]
    fn hcov_single_level_is_plain_descriptor(seed in 0u64..10_000, t in 2usize..40) {
        let mut rng = common::rng(seed);
        let x = DMatrix::from_row_iterator(t, 3, common::random_frames(&mut rng, t, 3).into_iter().flatten());
        let cfg = HCovConfig { levels: 1, ..HCovConfig::default() };
        let h = spdcov::hcov_descriptor(&x, &cfg).unwrap();
        let plain = spdcov::log_euclidean_vec(&spdcov::regularized_covariance(&x, cfg.regularization).unwrap()).unwrap();
        prop_assert_eq!(h, plain);
    }

    #[test]
    fn svm_solution_is_dual_feasible(seed in 0u64..10_000, n in 2usize..30) {
        let mut rng = common::rng(seed);
        let x = DMatrix::from_row_iterator(n, 3, common::random_frames(&mut rng, n, 3).into_iter().flatten());
        let labels = common::balanced_labels(&mut rng, n, 2);
        let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let params = SvmParams { c: 1.0, tol: 1e-6 };
        let sol = svm::solve_dual(&(&x * x.transpose()), &y, params).unwrap();
        prop_assert!(sol.alpha.iter().all(|&a| (0.0..=params.c).contains(&a)));
        let eq: f64 = sol.alpha.iter().zip(&y).map(|(a, b)| a * b).sum();
        prop_assert!(eq.abs() < 1e-9);
    }

    #[test]
    fn cmim_matches_exhaustive_greedy(seed in 0u64..10_000, d in 1usize..=8, n in 10usize..=200) {
        let mut rng = common::rng(seed);
        let y = common::balanced_labels(&mut rng, n, 3);
        let x = random_design(&mut rng, &y, d);
        let bins = 4;
        let k = d;
        let selected = fusion::cmim_select(&x, &y, k, bins).unwrap();
        let codes: Vec<Vec<u8>> = (0..d).map(|c| common::equal_frequency_codes(x.column(c).as_slice(), bins)).collect();
        let yc: Vec<u8> = y.iter().map(|&v| v as u8).collect();
        prop_assert_eq!(selected, common::cmim_oracle(&codes, &yc, k));
    }

    #[test]
    fn standardizer_centres_training_columns(seed in 0u64..10_000, n in 2usize..30, d in 1usize..6) {
        let mut rng = common::rng(seed);
        let x = DMatrix::from_row_iterator(n, d, common::random_frames(&mut rng, n, d).into_iter().flatten());
        let z = Standardizer::fit(&x).apply(&x).unwrap();
        for c in 0..d {
            prop_assert!(z.column(c).mean().abs() < 1e-12);
        }
    }

    #[test]
    fn resampling_preserves_endpoints(signal in prop::collection::vec(-100.0..100.0f64, 2..300)) {
        let r = kinematics::resample_unit_time(&signal, 100).unwrap();
        prop_assert_eq!(r.len(), 100);
        prop_assert_eq!(r[0], signal[0]);
        prop_assert_eq!(r[99], *signal.last().unwrap());
    }

    #[test]
    fn local_features_ignore_rigid_motion(
        seed in 0u64..1_000,
        shift in prop::array::uniform3(-500.0..500.0f64),
        axis in prop::array::uniform3(-1.0..1.0f64),
        angle in -3.0..3.0f64,
    ) {
        let ds = ifm::data::generate_synthetic(&common::small_config(seed, 1, 1)).unwrap();
        let trial = &ds.trials()[0];
        let map = ds.marker_map();
        let axis = Vector3::from(axis);
        prop_assume!(axis.norm() > 1e-3);
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let shift = Vector3::from(shift);
        let moved = rigid(trial, |p| rot * p + shift);
        let base = KinematicSeries::from_trial(trial, map).unwrap().to_vector(FeatureSet::Local);
        let other = KinematicSeries::from_trial(&moved, map).unwrap().to_vector(FeatureSet::Local);
        for (a, b) in base.iter().zip(&other) {
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

/// Columns mixing label-driven and random codes so that CMIM has both
/// relevant and redundant candidates.
fn random_design(rng: &mut rand_chacha::ChaCha8Rng, y: &[usize], d: usize) -> DMatrix<f64> {
    use rand::Rng;
    let n = y.len();
    let mut x = DMatrix::zeros(n, d);
    for c in 0..d {
        let kind = rng.random_range(0..3);
        for r in 0..n {
            x[(r, c)] = match kind {
                0 => y[r] as f64 + rng.random_range(0.0..2.5),
                1 if c > 0 => x[(r, c - 1)] + rng.random_range(0.0..0.5),
                _ => rng.random_range(0.0..1.0),
            };
        }
    }
    x
}

fn rigid(trial: &Trial, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> Trial {
    let frames = trial
        .frames()
        .iter()
        .map(|fr| {
            let mut out = *fr;
            out.iter_mut().for_each(|p| *p = f(*p));
            out
        })
        .collect();
    Trial::new(trial.trial_id(), trial.subject_id(), trial.intention(), trial.sample_rate(), frames).unwrap()
}

#[test]
fn local_features_translation_exact() {
    let ds = ifm::data::generate_synthetic(&common::small_config(3, 1, 1)).unwrap();
    let trial = &ds.trials()[0];
    let map = MarkerMap::standard();
    let moved = rigid(trial, |p| p + Vector3::new(1234.5, -87.25, 310.0));
    let a = kinematics::feature_vector(trial, &map, FeatureSet::Local).unwrap();
    let b = kinematics::feature_vector(&moved, &map, FeatureSet::Local).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-9);
    }
}

#[test]
fn butterworth_gain_at_dc_and_cutoff() {
    let dc = kinematics::butterworth_lowpass(&[3.5; 400], 6.0, 100.0).unwrap();
    assert!(dc.iter().all(|v| (v - 3.5).abs() < 1e-9));
    let sine: Vec<f64> = (0..2000).map(|i| (2.0 * std::f64::consts::PI * 6.0 * i as f64 / 100.0).sin()).collect();
    let out = kinematics::butterworth_lowpass(&sine, 6.0, 100.0).unwrap();
    let amp = out[500..1500].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert_relative_eq!(amp, 0.5, max_relative = 0.02);
}

#[test]
fn svm_two_point_analytic() {
    let x = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
    let model = svm::train_binary(svm::TrainInput::Features(&x), &[1, 0], SvmParams { c: 10.0, tol: 1e-10 }).unwrap();
    let m = &model.machines[0];
    assert_relative_eq!(m.weights.as_ref().unwrap()[0], 1.0, epsilon = 1e-6);
    assert!(m.bias.abs() < 1e-6);
}

#[test]
fn svm_matches_projected_gradient_oracle() {
    for seed in 0..10 {
        let mut rng = common::rng(seed);
        let n = 12 + seed as usize;
        let x = DMatrix::from_row_iterator(n, 2, common::random_frames(&mut rng, n, 2).into_iter().flatten());
        let labels = common::balanced_labels(&mut rng, n, 2);
        let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let k = &x * x.transpose();
        let sol = svm::solve_dual(&k, &y, SvmParams { c: 1.0, tol: 1e-6 }).unwrap();
        let oracle = common::dual_value(&k, &y, &common::svm_dual_oracle(&k, &y, 1.0, 1e-8));
        let got = common::dual_value(&k, &y, &sol.alpha);
        assert!((got - oracle).abs() <= 1e-3 * oracle.abs().max(1e-12), "seed {seed}: {got} vs {oracle}");
    }
}

#[test]
fn knn_tie_goes_to_smaller_distance_sum() {
    // two votes each; class 1 neighbours are closer overall
    let d = [1.0, 0.5, 2.0, 0.6];
    assert_eq!(dtw::knn_vote(&d, &[0, 1, 0, 1], 4).unwrap(), 1);
}

#[test]
fn intention_names_parse() {
    for i in Intention::ALL {
        assert_eq!(i.name().parse::<Intention>().unwrap(), i);
    }
}
