use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMetadata, Frame, Intention, MarkerMap, Trial, MARKER_COUNT};
use crate::error::{Error, Result};

const TRIAL_COLUMNS: usize = 1 + 3 * MARKER_COUNT;

/// On-disk dataset description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub marker_map: BTreeMap<String, usize>,
    pub trials: Vec<ManifestTrial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub file: String,
    pub trial_id: String,
    pub subject: u32,
    pub intention: Intention,
}

fn trial_header() -> Vec<String> {
    let mut header = vec!["t".to_string()];
    for m in 0..MARKER_COUNT {
        for axis in ["x", "y", "z"] {
            header.push(format!("m{m:02}_{axis}"));
        }
    }
    header
}

/// Parses one trial CSV; the sample rate is recovered from the time column.
pub fn read_trial_csv(
    path: &Path,
    trial_id: &str,
    subject_id: u32,
    intention: Intention,
) -> Result<Trial> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = path.display().to_string();
    let schema = |row: usize, message: String| Error::Schema {
        file: file.clone(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() != TRIAL_COLUMNS {
        return Err(schema(
            0,
            format!("header has {} columns, expected {TRIAL_COLUMNS}", headers.len()),
        ));
    }
    let mut times = Vec::new();
    let mut frames: Vec<Frame> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record?;
        if record.len() != TRIAL_COLUMNS {
            return Err(schema(
                row,
                format!("{} columns, expected {TRIAL_COLUMNS}", record.len()),
            ));
        }
        let mut values = [0.0; TRIAL_COLUMNS];
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| schema(row, format!("column {c}: cannot parse `{field}`")))?;
            if !v.is_finite() {
                return Err(schema(row, format!("column {c}: non-finite value `{field}`")));
            }
            values[c] = v;
        }
        if let Some(&prev) = times.last() {
            if values[0] <= prev {
                return Err(schema(row, "time column is not strictly increasing".into()));
            }
        }
        times.push(values[0]);
        let mut frame = [Vector3::zeros(); MARKER_COUNT];
        for (m, p) in frame.iter_mut().enumerate() {
            *p = Vector3::new(values[1 + 3 * m], values[2 + 3 * m], values[3 + 3 * m]);
        }
        frames.push(frame);
    }
    if frames.len() < 2 {
        return Err(schema(frames.len(), "a trial needs at least two rows".into()));
    }
    let span = times[times.len() - 1] - times[0];
    let sample_rate = (times.len() - 1) as f64 / span;
    Ok(Trial::new(trial_id, subject_id, intention, sample_rate, frames)?.with_start_time(times[0]))
}

pub fn write_trial_csv(trial: &Trial, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(trial_header())?;
    let dt = 1.0 / trial.sample_rate();
    for (i, frame) in trial.frames().iter().enumerate() {
        let mut record = Vec::with_capacity(TRIAL_COLUMNS);
        record.push((trial.start_time() + i as f64 * dt).to_string());
        for p in frame {
            record.extend(p.iter().map(|c| c.to_string()));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a manifest and every trial it references.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    if !manifest_path.is_file() {
        return Err(Error::MissingFile(manifest_path.to_path_buf()));
    }
    let text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let marker_map = MarkerMap::new(manifest.marker_map.clone())?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut trials = Vec::with_capacity(manifest.trials.len());
    for entry in &manifest.trials {
        let path: PathBuf = base.join(&entry.file);
        trials.push(read_trial_csv(&path, &entry.trial_id, entry.subject, entry.intention)?);
    }
    Dataset::new(
        trials,
        marker_map,
        DatasetMetadata {
            name: manifest.name,
            seed: manifest.seed,
        },
    )
}

/// Writes `manifest.json` plus one CSV per trial under `dir/trials/`.
/// Returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let trial_dir = dir.join("trials");
    fs::create_dir_all(&trial_dir)?;
    let mut entries = Vec::with_capacity(dataset.len());
    for trial in dataset.trials() {
        let file = format!("trials/{}.csv", trial.trial_id());
        write_trial_csv(trial, &dir.join(&file))?;
        entries.push(ManifestTrial {
            file,
            trial_id: trial.trial_id().to_string(),
            subject: trial.subject_id(),
            intention: trial.intention(),
        });
    }
    let manifest = Manifest {
        name: dataset.metadata().name.clone(),
        marker_map: dataset.marker_map().roles().clone(),
        trials: entries,
        seed: dataset.metadata().seed,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

/// Writes one row per trial, prefixed by its id and labels.
///
/// `features` must have one row per trial; a matrix with zero columns (or
/// zero rows on an empty listing) yields a header-only file.
pub fn export_feature_matrix(dataset: &Dataset, features: &DMatrix<f64>, path: &Path) -> Result<()> {
    if features.nrows() != dataset.len() && features.nrows() != 0 {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            got: features.nrows(),
        });
    }
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![
        "trial_id".to_string(),
        "subject_id".to_string(),
        "intention".to_string(),
    ];
    header.extend((0..features.ncols()).map(|j| format!("f{j}")));
    writer.write_record(&header)?;
    for (i, trial) in dataset.trials().iter().enumerate().take(features.nrows()) {
        let mut record = vec![
            trial.trial_id().to_string(),
            trial.subject_id().to_string(),
            trial.intention().name().to_string(),
        ];
        record.extend(features.row(i).iter().map(|v| v.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub trial_id: String,
    pub subject_id: u32,
    pub intention: Intention,
}

/// Inverse of [`export_feature_matrix`].
pub fn read_feature_matrix(path: &Path) -> Result<(Vec<FeatureRow>, DMatrix<f64>)> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let width = reader.headers()?.len().saturating_sub(3);
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |message: String| Error::Schema {
            file: file.clone(),
            row: r + 1,
            message,
        };
        if record.len() != width + 3 {
            return Err(bad(format!("{} columns, expected {}", record.len(), width + 3)));
        }
        rows.push(FeatureRow {
            trial_id: record[0].to_string(),
            subject_id: record[1].parse().map_err(|_| bad("bad subject id".into()))?,
            intention: record[2].parse()?,
        });
        for field in record.iter().skip(3) {
            values.push(field.parse::<f64>().map_err(|_| bad(format!("cannot parse `{field}`")))?);
        }
    }
    let matrix = DMatrix::from_row_slice(rows.len(), width, &values);
    Ok((rows, matrix))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trial(id: &str, subject: u32, intention: Intention, n: usize) -> Trial {
        let frames = (0..n)
            .map(|i| {
                let mut f = [Vector3::zeros(); MARKER_COUNT];
                for (m, p) in f.iter_mut().enumerate() {
                    *p = Vector3::new(i as f64 * 0.1 + m as f64, 1.0 / 3.0, -(m as f64));
                }
                f
            })
            .collect();
        Trial::new(id, subject, intention, 100.0, frames).unwrap()
    }

    fn two_trial_dataset() -> Dataset {
        Dataset::new(
            vec![
                sample_trial("s1_a", 1, Intention::Pouring, 5),
                sample_trial("s1_b", 1, Intention::Passing, 4),
            ],
            MarkerMap::standard(),
            DatasetMetadata {
                name: "tiny".into(),
                seed: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let ds = two_trial_dataset();
        let manifest = save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(&manifest).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.metadata().name, "tiny");
        for (a, b) in ds.trials().iter().zip(back.trials()) {
            assert_eq!(a.trial_id(), b.trial_id());
            assert_eq!(a.intention(), b.intention());
            assert_eq!(a.frames(), b.frames());
            assert!((a.sample_rate() - b.sample_rate()).abs() < 1e-9);
        }
    }

    #[test]
    fn nan_row_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_trial_csv(&sample_trial("x", 1, Intention::Pouring, 4), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = lines[3].replacen("0.3333333333333333", "NaN", 1);
        fs::write(&path, lines.join("\n")).unwrap();
        let err = read_trial_csv(&path, "x", 1, Intention::Pouring).unwrap_err();
        assert!(matches!(err, Error::Schema { row: 3, .. }), "{err}");
    }

    #[test]
    fn wrong_column_count_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "t,a,b\n0,1,2\n").unwrap();
        assert!(matches!(
            read_trial_csv(&path, "x", 1, Intention::Pouring),
            Err(Error::Schema { row: 0, .. })
        ));
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ds = two_trial_dataset();
        let manifest_path = save_dataset(&ds, dir.path()).unwrap();
        let mut manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();

        let mut no_wrist = manifest.clone();
        no_wrist.marker_map.remove("wrist");
        fs::write(&manifest_path, serde_json::to_string(&no_wrist).unwrap()).unwrap();
        assert!(matches!(load_dataset(&manifest_path), Err(Error::MissingRole(r)) if r == "wrist"));

        manifest.trials[1].trial_id = manifest.trials[0].trial_id.clone();
        fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(matches!(load_dataset(&manifest_path), Err(Error::DuplicateTrialId(_))));

        manifest.trials[1].file = "trials/missing.csv".into();
        fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(matches!(load_dataset(&manifest_path), Err(Error::MissingFile(_))));
        assert!(matches!(
            load_dataset(&dir.path().join("nope.json")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn feature_matrix_export_shapes_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(
            vec![
                sample_trial("a", 1, Intention::Pouring, 3),
                sample_trial("b", 1, Intention::Passing, 3),
                sample_trial("c", 1, Intention::Drinking, 3),
            ],
            MarkerMap::standard(),
            DatasetMetadata::default(),
        )
        .unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 1e-17, -2.5, 1.0 / 7.0, 3e8, -0.0]);
        let path = dir.path().join("f.csv");
        export_feature_matrix(&ds, &x, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 4);
        let (rows, back) = read_feature_matrix(&path).unwrap();
        assert_eq!(rows[2].intention, Intention::Drinking);
        assert!((back - &x).abs().max() <= 1e-12);

        let empty = DMatrix::<f64>::zeros(0, 0);
        export_feature_matrix(&ds, &empty, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1);

        let wrong = DMatrix::<f64>::zeros(2, 2);
        assert!(export_feature_matrix(&ds, &wrong, &path).is_err());
    }
}
