//! Synthetic reach-to-grasp trials.
//!
//! Every trial transports a canonical 20-marker hand from a fixed start pose
//! to a fixed bottle pose along a minimum-jerk profile. Three effects are
//! layered on top: a constant per-subject deformation of the hand, a small
//! intention-dependent perturbation of grip aperture and wrist height that
//! grows over the movement, and i.i.d. Gaussian sensor noise.
//!
//! The intention perturbation is a 2-d code (aperture, height). Each
//! intention owns a direction on the unit circle; every subject rotates all
//! four directions by a private angle drawn from `±style_spread`, which
//! makes part of the intention signal subject-specific. Each trial then adds
//! Gaussian jitter to its code.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMetadata, Frame, Intention, MarkerMap, Trial, MARKER_COUNT};
use crate::error::{Error, Result};

/// Hand template in hand coordinates (mm): x toward the fingers, y toward
/// the thumb, z out of the dorsum. Indices follow [`MarkerMap::standard`].
const TEMPLATE: [[f64; 3]; MARKER_COUNT] = [
    [0.0, 0.0, 0.0],      // wrist
    [-15.0, 20.0, -5.0],  // radius
    [75.0, 5.0, 15.0],    // dorsum_1
    [40.0, -25.0, 15.0],  // dorsum_2
    [25.0, 35.0, -5.0],   // thumb_base
    [85.0, 60.0, -25.0],  // thumb_tip
    [85.0, 20.0, 5.0],    // index_base
    [150.0, 25.0, -20.0], // index_tip
    [115.0, 22.0, -2.0],  // phalanx
    [-15.0, -20.0, -5.0],
    [88.0, 0.0, 6.0],
    [120.0, 0.0, 0.0],
    [160.0, 0.0, -20.0],
    [85.0, -18.0, 4.0],
    [115.0, -18.0, -2.0],
    [150.0, -18.0, -18.0],
    [78.0, -32.0, 2.0],
    [100.0, -35.0, -3.0],
    [128.0, -36.0, -15.0],
    [50.0, 0.0, 18.0],
];

const THUMB_TIP: usize = 5;
const INDEX_TIP: usize = 7;
const PHALANX: usize = 8;

const START: [f64; 3] = [0.0, 0.0, 80.0];
const BOTTLE: [f64; 3] = [380.0, 120.0, 160.0];
/// Peak grip opening during pre-shaping, mm.
const PRESHAPE: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    /// Fixed at 4.
    pub n_intentions: usize,
    pub trials_per_cell: usize,
    /// Movement duration range, seconds.
    pub duration_range: (f64, f64),
    /// Sensor noise standard deviation, mm.
    pub noise_std: f64,
    /// RMS per-marker subject deformation, mm.
    pub subject_effect: f64,
    /// Amplitude of the intention perturbation, mm.
    pub intention_effect: f64,
    /// Half-width of the per-subject rotation of intention codes, radians.
    pub style_spread: f64,
    /// Per-trial Gaussian jitter of the intention code, in code units.
    pub trial_jitter: f64,
    pub sample_rate: f64,
    /// Stationary time recorded before and after the movement, seconds.
    pub rest_time: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 8,
            n_intentions: 4,
            trials_per_cell: 20,
            duration_range: (1.2, 2.0),
            noise_std: 0.1,
            subject_effect: 10.0,
            intention_effect: 4.0,
            style_spread: PI / 6.0,
            trial_jitter: 0.3,
            sample_rate: 100.0,
            rest_time: 0.15,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_subjects < 1 || self.trials_per_cell < 1 {
            return bad("need at least one subject and one trial per cell");
        }
        if self.n_intentions != 4 {
            return bad("n_intentions is fixed at 4");
        }
        let (lo, hi) = self.duration_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo) {
            return bad("duration range must satisfy 0 < min <= max");
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return bad("sample rate must be positive");
        }
        if lo * self.sample_rate < 8.0 {
            return bad("shortest movement must span at least 8 frames");
        }
        if !(self.rest_time.is_finite() && self.rest_time >= 0.0) {
            return bad("rest time must be non-negative");
        }
        let effects = [self.subject_effect, self.intention_effect, self.noise_std];
        if effects.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return bad("effect scales must be finite and non-negative");
        }
        if effects.iter().all(|&e| e > 0.0)
            && !(self.subject_effect > self.intention_effect && self.intention_effect > self.noise_std)
        {
            return bad("expected subject_effect > intention_effect > noise_std");
        }
        if !(self.style_spread.is_finite() && self.style_spread >= 0.0) {
            return bad("style spread must be non-negative");
        }
        if !(self.trial_jitter.is_finite() && self.trial_jitter >= 0.0) {
            return bad("trial jitter must be non-negative");
        }
        Ok(())
    }
}

/// Quintic minimum-jerk position profile on [0, 1].
pub(crate) fn minimum_jerk(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

struct Subject {
    offsets: [Vector3<f64>; MARKER_COUNT],
    style_angle: f64,
}

fn subject_params(config: &SynthConfig, subject: usize) -> Subject {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1 + subject as u64);
    let sd = config.subject_effect / 3f64.sqrt();
    let mut offsets = [Vector3::zeros(); MARKER_COUNT];
    if sd > 0.0 {
        let normal = Normal::new(0.0, sd).unwrap();
        for o in offsets.iter_mut() {
            *o = Vector3::from_fn(|_, _| normal.sample(&mut rng));
        }
    }
    let style_angle = if config.style_spread > 0.0 {
        rng.random_range(-config.style_spread..=config.style_spread)
    } else {
        0.0
    };
    Subject {
        offsets,
        style_angle,
    }
}

fn trial_frames(
    config: &SynthConfig,
    subject: &Subject,
    intention: Intention,
    rng: &mut ChaCha8Rng,
) -> Vec<Frame> {
    let (lo, hi) = config.duration_range;
    let duration = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let moving = (duration * config.sample_rate).round().max(1.0) as usize;
    let rest = (config.rest_time * config.sample_rate).round() as usize;
    let total = rest + moving + 1 + rest;

    let start = Vector3::from(START);
    let bottle = Vector3::from(BOTTLE);
    let final_turn = Rotation3::from_axis_angle(&Vector3::z_axis(), 20f64.to_radians())
        * Rotation3::from_axis_angle(&Vector3::x_axis(), 70f64.to_radians());
    let turn = final_turn.scaled_axis();

    let angle = intention.index() as f64 * FRAC_PI_2 + subject.style_angle;
    let (mut code_height, mut code_aperture) = angle.sin_cos();
    if config.trial_jitter > 0.0 {
        let jitter = Normal::new(0.0, config.trial_jitter).unwrap();
        code_aperture += jitter.sample(rng);
        code_height += jitter.sample(rng);
    }
    let effect = config.intention_effect;

    let template: Vec<Vector3<f64>> = TEMPLATE
        .iter()
        .zip(&subject.offsets)
        .map(|(t, o)| Vector3::from(*t) + o)
        .collect();
    let opening = (template[THUMB_TIP] - template[INDEX_TIP]).normalize();

    let noise = (config.noise_std > 0.0).then(|| Normal::new(0.0, config.noise_std).unwrap());

    (0..total)
        .map(|i| {
            let tau = ((i as f64 - rest as f64) / moving as f64).clamp(0.0, 1.0);
            let s = minimum_jerk(tau);
            let preshape = PRESHAPE * 6.75 * tau * tau * (1.0 - tau);
            let aperture = preshape + effect * code_aperture * 6.75 * tau * tau * (1.0 - tau);
            let lift = effect * code_height * tau * tau;

            let origin = start + (bottle - start) * s + Vector3::new(0.0, 0.0, lift);
            let rotation = Rotation3::from_scaled_axis(turn * s);
            let mut frame = [Vector3::zeros(); MARKER_COUNT];
            for (m, p) in frame.iter_mut().enumerate() {
                let mut local = template[m];
                match m {
                    THUMB_TIP => local += opening * (aperture / 2.0),
                    INDEX_TIP => local -= opening * (aperture / 2.0),
                    PHALANX => local -= opening * (aperture / 4.0),
                    _ => {}
                }
                *p = origin + rotation * local;
                if let Some(n) = &noise {
                    *p += Vector3::from_fn(|_, _| n.sample(rng));
                }
            }
            frame
        })
        .collect()
}

/// Deterministic synthetic dataset: subjects `1..=n_subjects`, four
/// intentions, `trials_per_cell` trials each.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut trials = Vec::with_capacity(config.n_subjects * 4 * config.trials_per_cell);
    let mut stream = 1_000_000u64;
    for s in 0..config.n_subjects {
        let subject = subject_params(config, s);
        for intention in Intention::ALL {
            for r in 0..config.trials_per_cell {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(stream);
                stream += 1;
                let frames = trial_frames(config, &subject, intention, &mut rng);
                let id = format!(
                    "s{:02}_{}_{:02}",
                    s + 1,
                    intention.name().to_ascii_lowercase(),
                    r
                );
                trials.push(Trial::new(id, s as u32 + 1, intention, config.sample_rate, frames)?);
            }
        }
    }
    Dataset::new(
        trials,
        MarkerMap::standard(),
        DatasetMetadata {
            name: "synthetic".into(),
            seed: Some(config.seed),
        },
    )
}
