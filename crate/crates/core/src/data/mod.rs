//! Trial data model, dataset validation and ingestion, and the synthetic
//! reach-to-grasp generator.

mod io;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    export_feature_matrix, load_dataset, read_feature_matrix, read_trial_csv, save_dataset,
    write_trial_csv, FeatureRow, Manifest, ManifestTrial,
};
pub use synth::{generate_synthetic, SynthConfig};

/// Number of tracked markers on the hand.
pub const MARKER_COUNT: usize = 20;

/// Default acquisition rate of the motion-capture system, in Hz.
pub const DEFAULT_SAMPLE_RATE: f64 = 100.0;

/// Marker positions (mm) at one instant.
pub type Frame = [Vector3<f64>; MARKER_COUNT];

/// The action performed after grasping the bottle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Intention {
    Pouring,
    Passing,
    Drinking,
    Placing,
}

impl Intention {
    pub const ALL: [Intention; 4] = [
        Intention::Pouring,
        Intention::Passing,
        Intention::Drinking,
        Intention::Placing,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Intention> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Intention::Pouring => "Pouring",
            Intention::Passing => "Passing",
            Intention::Drinking => "Drinking",
            Intention::Placing => "Placing",
        }
    }
}

impl fmt::Display for Intention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Intention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|i| i.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown intention `{s}`")))
    }
}

/// Marker roles referenced by the kinematic features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Wrist,
    ThumbTip,
    IndexTip,
    ThumbBase,
    IndexBase,
    Radius,
    Phalanx,
    Dorsum1,
    Dorsum2,
}

impl Role {
    pub const REQUIRED: [Role; 9] = [
        Role::Wrist,
        Role::ThumbTip,
        Role::IndexTip,
        Role::ThumbBase,
        Role::IndexBase,
        Role::Radius,
        Role::Phalanx,
        Role::Dorsum1,
        Role::Dorsum2,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Role::Wrist => "wrist",
            Role::ThumbTip => "thumb_tip",
            Role::IndexTip => "index_tip",
            Role::ThumbBase => "thumb_base",
            Role::IndexBase => "index_base",
            Role::Radius => "radius",
            Role::Phalanx => "phalanx",
            Role::Dorsum1 => "dorsum_1",
            Role::Dorsum2 => "dorsum_2",
        }
    }
}

/// Assignment of named roles to marker indices.
///
/// Extra named roles are kept as-is; unnamed markers are still carried in
/// every frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, usize>", into = "BTreeMap<String, usize>")]
pub struct MarkerMap {
    roles: BTreeMap<String, usize>,
    required: [usize; 9],
}

impl MarkerMap {
    pub fn new(roles: BTreeMap<String, usize>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (role, &idx) in &roles {
            if idx >= MARKER_COUNT {
                return Err(Error::InvalidMarkerMap(format!(
                    "role `{role}` maps to index {idx}, outside [0, {MARKER_COUNT})"
                )));
            }
            if !seen.insert(idx) {
                return Err(Error::InvalidMarkerMap(format!(
                    "marker index {idx} is assigned to more than one role"
                )));
            }
        }
        let mut required = [0; 9];
        for (slot, role) in required.iter_mut().zip(Role::REQUIRED) {
            *slot = *roles
                .get(role.key())
                .ok_or_else(|| Error::MissingRole(role.key().to_string()))?;
        }
        Ok(MarkerMap { roles, required })
    }

    /// Layout used by the synthetic generator.
    pub fn standard() -> Self {
        let roles = Role::REQUIRED
            .iter()
            .map(|r| r.key().to_string())
            .zip([0, 5, 7, 4, 6, 1, 8, 2, 3])
            .collect();
        MarkerMap::new(roles).expect("standard layout is valid")
    }

    pub fn index(&self, role: Role) -> usize {
        let pos = Role::REQUIRED.iter().position(|&r| r == role).unwrap();
        self.required[pos]
    }

    pub fn roles(&self) -> &BTreeMap<String, usize> {
        &self.roles
    }
}

impl TryFrom<BTreeMap<String, usize>> for MarkerMap {
    type Error = Error;

    fn try_from(roles: BTreeMap<String, usize>) -> Result<Self> {
        MarkerMap::new(roles)
    }
}

impl From<MarkerMap> for BTreeMap<String, usize> {
    fn from(map: MarkerMap) -> Self {
        map.roles
    }
}

/// One reach-to-grasp execution.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    trial_id: String,
    subject_id: u32,
    intention: Intention,
    sample_rate: f64,
    start_time: f64,
    frames: Vec<Frame>,
}

impl Trial {
    pub fn new(
        trial_id: impl Into<String>,
        subject_id: u32,
        intention: Intention,
        sample_rate: f64,
        frames: Vec<Frame>,
    ) -> Result<Self> {
        let trial = Trial {
            trial_id: trial_id.into(),
            subject_id,
            intention,
            sample_rate,
            start_time: 0.0,
            frames,
        };
        trial.validate()?;
        Ok(trial)
    }

    fn validate(&self) -> Result<()> {
        if self.subject_id < 1 {
            return Err(Error::InvalidDataset(format!(
                "trial `{}` has subject id 0",
                self.trial_id
            )));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::InvalidDataset(format!(
                "trial `{}` has non-positive sample rate",
                self.trial_id
            )));
        }
        if self.frames.len() < 2 {
            return Err(Error::TooShort {
                needed: 2,
                got: self.frames.len(),
            });
        }
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
                return Err(Error::Schema {
                    file: self.trial_id.clone(),
                    row: i + 1,
                    message: "non-finite coordinate".into(),
                });
            }
        }
        Ok(())
    }

    pub fn trial_id(&self) -> &str {
        &self.trial_id
    }

    pub fn subject_id(&self) -> u32 {
        self.subject_id
    }

    pub fn intention(&self) -> Intention {
        self.intention
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Timestamp of the first frame, in seconds.
    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Same trial with a new frame sequence starting `offset` frames in.
    pub(crate) fn with_frames(&self, frames: Vec<Frame>, offset: usize) -> Trial {
        debug_assert!(frames.len() >= 2);
        Trial {
            trial_id: self.trial_id.clone(),
            subject_id: self.subject_id,
            intention: self.intention,
            sample_rate: self.sample_rate,
            start_time: self.start_time + offset as f64 / self.sample_rate,
            frames,
        }
    }

    pub(crate) fn with_start_time(mut self, start_time: f64) -> Trial {
        self.start_time = start_time;
        self
    }

    /// Trajectory of one marker over the trial.
    pub fn marker_track(&self, marker: usize) -> Vec<Vector3<f64>> {
        self.frames.iter().map(|f| f[marker]).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A validated collection of trials sharing one marker layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    trials: Vec<Trial>,
    marker_map: MarkerMap,
    metadata: DatasetMetadata,
}

impl Dataset {
    /// Validates trial-id uniqueness, contiguity of subject ids and that
    /// every (subject, intention) cell of the intentions present is filled.
    pub fn new(trials: Vec<Trial>, marker_map: MarkerMap, metadata: DatasetMetadata) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::InvalidDataset("dataset has no trials".into()));
        }
        let mut ids = HashSet::new();
        for t in &trials {
            if !ids.insert(t.trial_id.as_str()) {
                return Err(Error::DuplicateTrialId(t.trial_id.clone()));
            }
        }
        let subjects: BTreeSet<u32> = trials.iter().map(|t| t.subject_id).collect();
        let max = *subjects.iter().next_back().unwrap();
        if subjects.len() as u32 != max || *subjects.iter().next().unwrap() != 1 {
            return Err(Error::InvalidDataset(format!(
                "subject ids must be contiguous from 1, found {subjects:?}"
            )));
        }
        let intentions: BTreeSet<Intention> = trials.iter().map(|t| t.intention).collect();
        let cells: HashSet<(u32, Intention)> =
            trials.iter().map(|t| (t.subject_id, t.intention)).collect();
        for &s in &subjects {
            for &i in &intentions {
                if !cells.contains(&(s, i)) {
                    return Err(Error::InvalidDataset(format!(
                        "subject {s} has no {i} trial"
                    )));
                }
            }
        }
        Ok(Dataset {
            trials,
            marker_map,
            metadata,
        })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn marker_map(&self) -> &MarkerMap {
        &self.marker_map
    }

    pub fn metadata(&self) -> &DatasetMetadata {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Sorted subject ids, `1..=S`.
    pub fn subjects(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.trials.iter().map(|t| t.subject_id).collect();
        set.into_iter().collect()
    }

    /// Intentions present, in enum order.
    pub fn intentions(&self) -> Vec<Intention> {
        let set: BTreeSet<Intention> = self.trials.iter().map(|t| t.intention).collect();
        set.into_iter().collect()
    }

    /// Keeps only trials of the given intentions.
    pub fn filter_intentions(&self, keep: &[Intention]) -> Result<Dataset> {
        let trials = self
            .trials
            .iter()
            .filter(|t| keep.contains(&t.intention))
            .cloned()
            .collect();
        Dataset::new(trials, self.marker_map.clone(), self.metadata.clone())
    }

    /// Applies `f` to every trial, keeping layout and metadata.
    pub fn map_trials<F>(&self, f: F) -> Result<Dataset>
    where
        F: FnMut(&Trial) -> Result<Trial>,
    {
        let trials = self.trials.iter().map(f).collect::<Result<Vec<_>>>()?;
        Dataset::new(trials, self.marker_map.clone(), self.metadata.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still_trial(id: &str, subject: u32, intention: Intention) -> Trial {
        let frame = [Vector3::new(1.0, 2.0, 3.0); MARKER_COUNT];
        Trial::new(id, subject, intention, 100.0, vec![frame; 3]).unwrap()
    }

    #[test]
    fn marker_map_requires_every_role() {
        let mut roles: BTreeMap<String, usize> = MarkerMap::standard().roles().clone();
        roles.remove("wrist");
        assert!(matches!(MarkerMap::new(roles), Err(Error::MissingRole(r)) if r == "wrist"));
    }

    #[test]
    fn marker_map_rejects_shared_or_out_of_range_indices() {
        let mut roles = MarkerMap::standard().roles().clone();
        roles.insert("extra".into(), 0);
        assert!(matches!(MarkerMap::new(roles), Err(Error::InvalidMarkerMap(_))));
        let mut roles = MarkerMap::standard().roles().clone();
        roles.insert("extra".into(), 20);
        assert!(matches!(MarkerMap::new(roles), Err(Error::InvalidMarkerMap(_))));
    }

    #[test]
    fn trial_rejects_single_frame_and_nan() {
        let frame = [Vector3::zeros(); MARKER_COUNT];
        assert!(Trial::new("a", 1, Intention::Pouring, 100.0, vec![frame]).is_err());
        let mut bad = frame;
        bad[3].y = f64::NAN;
        assert!(Trial::new("a", 1, Intention::Pouring, 100.0, vec![frame, bad]).is_err());
        assert!(Trial::new("a", 1, Intention::Pouring, 0.0, vec![frame, frame]).is_err());
    }

    #[test]
    fn dataset_checks_ids_and_cells() {
        let map = MarkerMap::standard();
        let meta = DatasetMetadata::default();
        let dup = vec![
            still_trial("a", 1, Intention::Pouring),
            still_trial("a", 1, Intention::Passing),
        ];
        assert!(matches!(
            Dataset::new(dup, map.clone(), meta.clone()),
            Err(Error::DuplicateTrialId(_))
        ));
        let gap = vec![
            still_trial("a", 1, Intention::Pouring),
            still_trial("b", 3, Intention::Pouring),
        ];
        assert!(Dataset::new(gap, map.clone(), meta.clone()).is_err());
        let hole = vec![
            still_trial("a", 1, Intention::Pouring),
            still_trial("b", 2, Intention::Pouring),
            still_trial("c", 2, Intention::Passing),
        ];
        assert!(Dataset::new(hole, map.clone(), meta.clone()).is_err());
        let ok = vec![
            still_trial("a", 1, Intention::Pouring),
            still_trial("b", 2, Intention::Pouring),
        ];
        let ds = Dataset::new(ok, map, meta).unwrap();
        assert_eq!(ds.subjects(), vec![1, 2]);
        assert_eq!(ds.intentions(), vec![Intention::Pouring]);
    }

    #[test]
    fn intention_parses_case_insensitively() {
        assert_eq!("drinking".parse::<Intention>().unwrap(), Intention::Drinking);
        assert!("juggling".parse::<Intention>().is_err());
        for i in Intention::ALL {
            assert_eq!(Intention::from_index(i.index()), Some(i));
        }
    }
}
