//! Intention prediction from reach-to-grasp marker trajectories.
//!
//! The crate is organised bottom-up: [`data`] holds trials and the
//! synthetic generator, [`kinematics`] turns trials into the 16 kinematic
//! channels, [`dtw`] and [`spdcov`] build distances, descriptors and
//! kernels, [`svm`] trains the classifiers, [`fusion`] combines
//! representations and [`protocol`] runs the evaluation schemes. [`cli`]
//! is the command-line front end used by the `ifm` binary.

pub mod cli;
pub mod data;
pub mod dtw;
pub mod error;
pub mod fusion;
pub mod kinematics;
pub mod linalg;
pub mod protocol;
pub mod spdcov;
pub mod svm;

pub use data::{Dataset, Intention, MarkerMap, Role, SynthConfig, Trial};
pub use dtw::{DistanceMatrix, GramMatrix, Provenance};
pub use error::{Error, Result};
pub use kinematics::{FeatureSet, KinematicSeries, SegmentationParams};
pub use spdcov::{HCovConfig, SpdDescriptor};
pub use svm::{SvmModel, WeightReport};

/// Row-major JSON form for dense matrices, so fitted parameters serialize
/// deterministically.
pub(crate) mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect();
        Repr {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = Repr::deserialize(d)?;
        if r.data.len() != r.rows * r.cols {
            return Err(serde::de::Error::custom("matrix data length mismatch"));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}
