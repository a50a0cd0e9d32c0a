//! Signal conditioning (filtering, segmentation, resampling) and the 16
//! kinematic feature channels.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::data::{Frame, MarkerMap, Role, Trial, MARKER_COUNT};
use crate::error::{Error, Result};

/// Samples per channel after time normalization.
pub const RESAMPLED_LEN: usize = 100;

/// Odd-extension length on each side of the zero-phase filter.
const FILTER_PAD: usize = 6;

/// Snippet fractions accepted by [`truncate_snippet`].
pub const SNIPPET_FRACTIONS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    /// Wrist-speed threshold, mm/s.
    pub epsilon: f64,
    /// Low-pass cutoff, Hz.
    pub cutoff: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            epsilon: 20.0,
            cutoff: 6.0,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon {} must be positive", self.epsilon)));
        }
        check_cutoff(self.cutoff, sample_rate)
    }
}

fn check_cutoff(cutoff: f64, sample_rate: f64) -> Result<()> {
    if !(cutoff.is_finite() && cutoff > 0.0 && cutoff < sample_rate / 2.0) {
        return Err(Error::InvalidCutoff {
            cutoff,
            sample_rate,
        });
    }
    Ok(())
}

/// Second-order Butterworth low-pass section (bilinear transform).
#[derive(Clone, Copy, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(cutoff: f64, sample_rate: f64) -> Biquad {
        let k = (std::f64::consts::PI * cutoff / sample_rate).tan();
        let k2 = k * k;
        let sqrt2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k2);
        let b0 = k2 * norm;
        Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k2 - 1.0) * norm, (1.0 - sqrt2 * k + k2) * norm],
        }
    }

    /// Direct form II transposed, state initialised to the steady state of
    /// a constant input equal to the first sample.
    fn run(&self, x: &[f64]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        // steady state for a unit input with unit DC gain
        let z1_unit = 1.0 - b0;
        let z2_unit = b2 - a2;
        let (mut z1, mut z2) = (z1_unit * x[0], z2_unit * x[0]);
        let mut y = Vec::with_capacity(x.len());
        for &v in x {
            let out = b0 * v + z1;
            z1 = b1 * v - a1 * out + z2;
            z2 = b2 * v - a2 * out;
            y.push(out);
        }
        y
    }
}

/// Zero-phase low-pass: a 2nd-order Butterworth section run forward then
/// backward over an odd extension of the signal.
pub fn butterworth_lowpass(signal: &[f64], cutoff: f64, sample_rate: f64) -> Result<Vec<f64>> {
    if signal.len() <= FILTER_PAD {
        return Err(Error::TooShort {
            needed: FILTER_PAD + 1,
            got: signal.len(),
        });
    }
    check_cutoff(cutoff, sample_rate)?;
    let section = Biquad::lowpass(cutoff, sample_rate);
    let n = signal.len();
    let (first, last) = (signal[0], signal[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * FILTER_PAD);
    ext.extend((1..=FILTER_PAD).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=FILTER_PAD).map(|i| 2.0 * last - signal[n - 1 - i]));

    let mut y = section.run(&ext);
    y.reverse();
    let mut y = section.run(&y);
    y.reverse();
    Ok(y[FILTER_PAD..FILTER_PAD + n].to_vec())
}

/// Central differences in the interior, one-sided at the ends.
pub fn differentiate(positions: &[Vector3<f64>], sample_rate: f64) -> Vec<Vector3<f64>> {
    let n = positions.len();
    if n < 2 {
        return vec![Vector3::zeros(); n];
    }
    (0..n)
        .map(|i| match i {
            0 => (positions[1] - positions[0]) * sample_rate,
            i if i == n - 1 => (positions[n - 1] - positions[n - 2]) * sample_rate,
            i => (positions[i + 1] - positions[i - 1]) * (sample_rate / 2.0),
        })
        .collect()
}

/// Filters one marker trajectory coordinate-wise.
fn filter_track(track: &[Vector3<f64>], cutoff: f64, sample_rate: f64) -> Result<Vec<Vector3<f64>>> {
    let mut out = vec![Vector3::zeros(); track.len()];
    for axis in 0..3 {
        let coord: Vec<f64> = track.iter().map(|p| p[axis]).collect();
        for (o, v) in out.iter_mut().zip(butterworth_lowpass(&coord, cutoff, sample_rate)?) {
            o[axis] = v;
        }
    }
    Ok(out)
}

/// Low-pass filters every marker coordinate of a trial.
pub fn filter_trial(trial: &Trial, cutoff: f64) -> Result<Trial> {
    let mut frames: Vec<Frame> = trial.frames().to_vec();
    for m in 0..MARKER_COUNT {
        let filtered = filter_track(&trial.marker_track(m), cutoff, trial.sample_rate())?;
        for (frame, p) in frames.iter_mut().zip(filtered) {
            frame[m] = p;
        }
    }
    Ok(trial.with_frames(frames, 0))
}

/// Inclusive frame range `[t0, tf]` of the active movement.
pub fn segment_bounds(speed: &[f64], epsilon: f64) -> Result<(usize, usize)> {
    let start = speed.iter().position(|&v| v > epsilon).ok_or(Error::NoMotion)?;
    let end = speed[start..]
        .iter()
        .position(|&v| v < epsilon)
        .map_or(speed.len() - 1, |k| start + k);
    Ok((start, end))
}

fn wrist_speed(wrist: &[Vector3<f64>], sample_rate: f64) -> Vec<f64> {
    differentiate(wrist, sample_rate).iter().map(|v| v.norm()).collect()
}

fn slice_trial(trial: &Trial, start: usize, end: usize) -> Result<Trial> {
    if end <= start {
        return Err(Error::TooShort {
            needed: 2,
            got: end + 1 - start,
        });
    }
    Ok(trial.with_frames(trial.frames()[start..=end].to_vec(), start))
}

/// Cuts the trial to the frames where the filtered wrist speed is above
/// `epsilon`. The returned frames are the unfiltered input frames.
pub fn segment_trial(trial: &Trial, map: &MarkerMap, params: &SegmentationParams) -> Result<Trial> {
    params.validate(trial.sample_rate())?;
    let wrist = filter_track(
        &trial.marker_track(map.index(Role::Wrist)),
        params.cutoff,
        trial.sample_rate(),
    )?;
    let (start, end) = segment_bounds(&wrist_speed(&wrist, trial.sample_rate()), params.epsilon)?;
    slice_trial(trial, start, end)
}

/// Filters all markers, then segments on the filtered wrist speed.
pub fn prepare_trial(trial: &Trial, map: &MarkerMap, params: &SegmentationParams) -> Result<Trial> {
    params.validate(trial.sample_rate())?;
    let filtered = filter_trial(trial, params.cutoff)?;
    let wrist = filtered.marker_track(map.index(Role::Wrist));
    let (start, end) = segment_bounds(&wrist_speed(&wrist, trial.sample_rate()), params.epsilon)?;
    slice_trial(&filtered, start, end)
}

/// Linear interpolation onto `n` equispaced points of the signal's own
/// normalized time axis.
pub fn resample_unit_time(signal: &[f64], n: usize) -> Result<Vec<f64>> {
    if signal.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: signal.len(),
        });
    }
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    let last = signal.len() - 1;
    Ok((0..n)
        .map(|k| {
            if k == n - 1 {
                return signal[last];
            }
            let pos = (k * last) as f64 / (n - 1) as f64;
            let i = (pos.floor() as usize).min(last - 1);
            let frac = pos - i as f64;
            if frac == 0.0 {
                signal[i]
            } else {
                signal[i] + (signal[i + 1] - signal[i]) * frac
            }
        })
        .collect())
}

/// The 16 kinematic channels, hand-frame ones first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    ThumbX,
    ThumbY,
    ThumbZ,
    IndexX,
    IndexY,
    IndexZ,
    ThumbIndexPlaneX,
    ThumbIndexPlaneY,
    ThumbIndexPlaneZ,
    RadiusPhalanxX,
    RadiusPhalanxY,
    RadiusPhalanxZ,
    WristVelocity,
    WristHeight,
    WristHorizontal,
    GripAperture,
}

impl Channel {
    pub const ALL: [Channel; 16] = [
        Channel::ThumbX,
        Channel::ThumbY,
        Channel::ThumbZ,
        Channel::IndexX,
        Channel::IndexY,
        Channel::IndexZ,
        Channel::ThumbIndexPlaneX,
        Channel::ThumbIndexPlaneY,
        Channel::ThumbIndexPlaneZ,
        Channel::RadiusPhalanxX,
        Channel::RadiusPhalanxY,
        Channel::RadiusPhalanxZ,
        Channel::WristVelocity,
        Channel::WristHeight,
        Channel::WristHorizontal,
        Channel::GripAperture,
    ];
    pub const LOCAL: usize = 12;
    pub const GLOBAL: usize = 4;

    pub fn name(self) -> &'static str {
        match self {
            Channel::ThumbX => "thumb_x",
            Channel::ThumbY => "thumb_y",
            Channel::ThumbZ => "thumb_z",
            Channel::IndexX => "index_x",
            Channel::IndexY => "index_y",
            Channel::IndexZ => "index_z",
            Channel::ThumbIndexPlaneX => "thumb_index_plane_x",
            Channel::ThumbIndexPlaneY => "thumb_index_plane_y",
            Channel::ThumbIndexPlaneZ => "thumb_index_plane_z",
            Channel::RadiusPhalanxX => "radius_phalanx_x",
            Channel::RadiusPhalanxY => "radius_phalanx_y",
            Channel::RadiusPhalanxZ => "radius_phalanx_z",
            Channel::WristVelocity => "wrist_velocity",
            Channel::WristHeight => "wrist_height",
            Channel::WristHorizontal => "wrist_horizontal",
            Channel::GripAperture => "grip_aperture",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Wrist velocity, wrist height, wrist horizontal position and grip
/// aperture at the trial's native length.
pub fn global_channels(trial: &Trial, map: &MarkerMap) -> [Vec<f64>; 4] {
    let wrist = trial.marker_track(map.index(Role::Wrist));
    let (thumb, index) = (map.index(Role::ThumbTip), map.index(Role::IndexTip));
    [
        wrist_speed(&wrist, trial.sample_rate()),
        wrist.iter().map(|p| p.z).collect(),
        wrist.iter().map(|p| p.x).collect(),
        trial
            .frames()
            .iter()
            .map(|f| (f[thumb] - f[index]).norm())
            .collect(),
    ]
}

/// Orthonormal hand frame (columns x̂, ŷ, ẑ) at one instant.
fn hand_frame(wrist: Vector3<f64>, d1: Vector3<f64>, d2: Vector3<f64>) -> Option<Matrix3<f64>> {
    let u = d1 - wrist;
    let v = d2 - wrist;
    let normal = u.cross(&v);
    let scale = u.norm() * v.norm();
    if !(scale > 0.0) || normal.norm() <= 1e-9 * scale {
        return None;
    }
    let x = u.normalize();
    let z = normal.normalize();
    let y = z.cross(&x);
    Some(Matrix3::from_columns(&[x, y, z]))
}

/// The 12 hand-frame channels at the trial's native length.
pub fn local_channels(trial: &Trial, map: &MarkerMap) -> Result<[Vec<f64>; 12]> {
    let w = map.index(Role::Wrist);
    let (d1, d2) = (map.index(Role::Dorsum1), map.index(Role::Dorsum2));
    let (thumb, index) = (map.index(Role::ThumbTip), map.index(Role::IndexTip));
    let (radius, phalanx) = (map.index(Role::Radius), map.index(Role::Phalanx));

    let mut out: [Vec<f64>; 12] = Default::default();
    for c in out.iter_mut() {
        c.reserve(trial.len());
    }
    for (t, f) in trial.frames().iter().enumerate() {
        let basis = hand_frame(f[w], f[d1], f[d2]).ok_or(Error::DegenerateFrame(t))?;
        let to_hand = basis.transpose();
        let thumb_rel = f[thumb] - f[w];
        let index_rel = f[index] - f[w];
        let plane = thumb_rel.cross(&index_rel);
        if !(plane.norm() > 1e-12 * thumb_rel.norm() * index_rel.norm()) {
            return Err(Error::DegenerateFrame(t));
        }
        let vectors = [
            to_hand * thumb_rel,
            to_hand * index_rel,
            to_hand * plane.normalize(),
            to_hand * (f[phalanx] - f[radius]),
        ];
        for (k, v) in vectors.iter().enumerate() {
            for axis in 0..3 {
                out[3 * k + axis].push(v[axis]);
            }
        }
    }
    Ok(out)
}

/// All 16 channels at native length, in [`Channel::ALL`] order.
pub fn kinematic_channels(trial: &Trial, map: &MarkerMap) -> Result<Vec<Vec<f64>>> {
    let mut channels: Vec<Vec<f64>> = local_channels(trial, map)?.into_iter().collect();
    channels.extend(global_channels(trial, map));
    Ok(channels)
}

pub fn compute_global_features(trial: &Trial, map: &MarkerMap) -> Result<[Vec<f64>; 4]> {
    let [a, b, c, d] = global_channels(trial, map);
    Ok([
        resample_unit_time(&a, RESAMPLED_LEN)?,
        resample_unit_time(&b, RESAMPLED_LEN)?,
        resample_unit_time(&c, RESAMPLED_LEN)?,
        resample_unit_time(&d, RESAMPLED_LEN)?,
    ])
}

pub fn compute_local_features(trial: &Trial, map: &MarkerMap) -> Result<[Vec<f64>; 12]> {
    let mut out: [Vec<f64>; 12] = Default::default();
    for (o, c) in out.iter_mut().zip(local_channels(trial, map)?) {
        *o = resample_unit_time(&c, RESAMPLED_LEN)?;
    }
    Ok(out)
}

/// The 16 channels resampled to [`RESAMPLED_LEN`] samples each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicSeries {
    channels: Vec<Vec<f64>>,
}

impl KinematicSeries {
    pub fn from_trial(trial: &Trial, map: &MarkerMap) -> Result<Self> {
        let channels = kinematic_channels(trial, map)?
            .iter()
            .map(|c| resample_unit_time(c, RESAMPLED_LEN))
            .collect::<Result<Vec<_>>>()?;
        Ok(KinematicSeries { channels })
    }

    pub fn channel(&self, channel: Channel) -> &[f64] {
        &self.channels[channel.index()]
    }

    pub fn channels(&self) -> impl Iterator<Item = (Channel, &[f64])> {
        Channel::ALL.iter().map(move |&c| (c, self.channel(c)))
    }

    /// Channel-major concatenation of the selected block.
    pub fn to_vector(&self, set: FeatureSet) -> Vec<f64> {
        let range = match set {
            FeatureSet::Local => 0..Channel::LOCAL,
            FeatureSet::Global => Channel::LOCAL..Channel::LOCAL + Channel::GLOBAL,
            FeatureSet::Both => 0..Channel::LOCAL + Channel::GLOBAL,
        };
        self.channels[range].concat()
    }
}

/// Which block of kinematic features to emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    Global,
    Local,
    /// Local followed by global.
    Both,
}

impl FeatureSet {
    pub fn len(self) -> usize {
        match self {
            FeatureSet::Global => Channel::GLOBAL * RESAMPLED_LEN,
            FeatureSet::Local => Channel::LOCAL * RESAMPLED_LEN,
            FeatureSet::Both => (Channel::LOCAL + Channel::GLOBAL) * RESAMPLED_LEN,
        }
    }
}

/// F_global (400), F_local (1200) or F_K (1600) for a prepared trial.
pub fn feature_vector(trial: &Trial, map: &MarkerMap, set: FeatureSet) -> Result<Vec<f64>> {
    Ok(KinematicSeries::from_trial(trial, map)?.to_vector(set))
}

/// Keeps the first `max(2, ceil(fraction * T))` frames.
pub fn truncate_snippet(trial: &Trial, fraction: f64) -> Result<Trial> {
    if !SNIPPET_FRACTIONS.iter().any(|&f| (f - fraction).abs() < 1e-12) {
        return Err(Error::InvalidFraction(fraction));
    }
    let keep = snippet_len(trial.len(), fraction);
    if keep == trial.len() {
        return Ok(trial.clone());
    }
    Ok(trial.with_frames(trial.frames()[..keep].to_vec(), 0))
}

fn snippet_len(len: usize, fraction: f64) -> usize {
    // guard against 0.6 * 30 = 18.000000000000004
    let raw = fraction * len as f64;
    let rounded = raw.round();
    let frames = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    (frames as usize).clamp(2, len)
}

/// Point-wise frame layout `T x 60` (marker-major xyz) used by the
/// covariance descriptors.
pub fn coordinate_matrix(trial: &Trial) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(trial.len(), 3 * MARKER_COUNT, |t, c| {
        trial.frames()[t][c / 3][c % 3]
    })
}
