//! Seeded synthetic dataset with an analytic binaural oracle.
//!
//! Each item is a mono mixture of low-passed noise and tones, a source
//! trajectory (alternating circular and lateral, source facing the
//! listener) and a binaural target built in `f64` by
//!
//! ```text
//! target_e = iSTFT( STFT(geometric_warp_e(mono)) · g_e(frame) )
//! g_left = 1 + depth·sin(azimuth),  g_right = 1 − depth·sin(azimuth)
//! ```
//!
//! with the azimuth taken at each frame center. The mono signal used by the
//! oracle is the stored 32-bit one, so re-running the oracle on a loaded item
//! reproduces its target to float precision.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::config::QuatOrder;
use crate::data::dataset::{BINAURAL_FILE, MONO_FILE, POSE_FILE};
use crate::data::posefile::write_pose_file;
use crate::data::wav::save_wav;
use crate::dsp::{fractional_resample, AudioBuffer, Stft, StftConfig};
use crate::error::{config_err, Error, Result};
use crate::pose::{track_sample, Pose, PoseTrack, Quaternion};
use crate::warp::{geometric_warp, WarpConfig};

pub const ORACLE_FILE: &str = "oracle.toml";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_items: usize,
    /// Item length in seconds.
    pub duration: f64,
    pub sample_rate: u32,
    pub pose_rate: f64,
    pub ear_offset: f64,
    pub speed_of_sound: f64,
    /// Interaural gain depth of the oracle.
    pub gain_depth: f64,
    pub stft: StftConfig,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            n_items: 20,
            duration: 1.6,
            sample_rate: 48_000,
            pose_rate: 120.0,
            ear_offset: 0.09,
            speed_of_sound: 343.0,
            gain_depth: 0.3,
            stft: StftConfig::default(),
        }
    }
}

impl SynthSpec {
    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    pub fn warp_config(&self) -> WarpConfig {
        WarpConfig {
            ear_offset: self.ear_offset,
            speed_of_sound: self.speed_of_sound,
            fs: self.sample_rate,
            ..WarpConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trajectory {
    Circular,
    Lateral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub trajectory: Trajectory,
    /// Circular: radius (m), start azimuth (rad), angular speed (rad/s).
    /// Lateral: forward distance (m), start y (m), speed along y (m/s).
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub height: f64,
}

/// Everything needed to regenerate or check the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub spec: SynthSpec,
    pub items: Vec<ItemRecord>,
}

impl OracleParams {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| config_err!("invalid oracle file {}: {e}", path.display()))
    }
}

fn position(rec: &ItemRecord, t: f64) -> [f64; 3] {
    match rec.trajectory {
        Trajectory::Circular => {
            let az = rec.b + rec.c * t;
            [rec.a * az.cos(), rec.a * az.sin(), rec.height]
        }
        Trajectory::Lateral => [rec.a, rec.b + rec.c * t, rec.height],
    }
}

/// Pose track of an item, source yawed to face the listener.
pub fn item_track(rec: &ItemRecord, spec: &SynthSpec) -> Result<PoseTrack> {
    let knots = (spec.duration * spec.pose_rate).ceil() as usize + 2;
    let poses = (0..knots)
        .map(|k| {
            let p = position(rec, k as f64 / spec.pose_rate);
            let yaw = p[1].atan2(p[0]) + PI;
            Pose::new(p, Quaternion::from_yaw(yaw))
        })
        .collect::<Result<_>>()?;
    PoseTrack::new(spec.pose_rate, poses)
}

fn item_record(i: usize, rng: &mut ChaCha8Rng) -> ItemRecord {
    let id = format!("item_{i:03}");
    let height = rng.random_range(-0.3..0.3);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    if i.is_multiple_of(2) {
        ItemRecord {
            id,
            trajectory: Trajectory::Circular,
            a: rng.random_range(1.0..2.5),
            b: rng.random_range(-PI..PI),
            c: sign * rng.random_range(1.5..3.0),
            height,
        }
    } else {
        ItemRecord {
            id,
            trajectory: Trajectory::Lateral,
            a: rng.random_range(0.5..1.5),
            b: -sign * rng.random_range(1.0..2.0),
            c: sign * rng.random_range(2.5..4.5),
            height,
        }
    }
}

/// Low-passed noise plus a few tones under a slow envelope, peak 0.5.
fn mono_signal(len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let pole = rng.random_range(0.5..0.95);
    let tones: Vec<(f64, f64, f64)> = (0..rng.random_range(2..4))
        .map(|_| {
            (
                rng.random_range(150.0..4000.0),
                rng.random_range(0.2..1.0),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let env_rate = rng.random_range(2.0..5.0);
    let env_phase = rng.random_range(0.0..2.0 * PI);
    let mut state = 0.0;
    let mut x: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / fs;
            state = pole * state + (1.0 - pole) * rng.random_range(-1.0..1.0);
            let tone: f64 = tones
                .iter()
                .map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin())
                .sum();
            let env = 0.6 + 0.4 * (2.0 * PI * env_rate * t + env_phase).sin();
            env * (3.0 * state + 0.3 * tone)
        })
        .collect();
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    x.iter_mut().for_each(|v| *v *= 0.5 / peak);
    x.into_iter().map(|v| v as f32).collect()
}

/// Oracle gains `(left, right)` for a source at `position`.
pub fn oracle_gains(position: [f64; 3], depth: f64) -> (f64, f64) {
    let s = position[1].atan2(position[0]).sin();
    (1.0 + depth * s, 1.0 - depth * s)
}

/// Binaural target of `mono` along `track` under `spec`'s oracle.
pub fn oracle_binaural(mono: &[f32], track: &PoseTrack, spec: &SynthSpec) -> Result<[Vec<f64>; 2]> {
    let len = mono.len();
    let x: Vec<f64> = mono.iter().map(|&v| v as f64).collect();
    let field = geometric_warp(track, len, &spec.warp_config())?;
    let engine = Stft::<f64>::new(spec.stft)?;
    let bins = spec.stft.bins();
    let fs = spec.sample_rate as f64;
    let mut out: [Vec<f64>; 2] = Default::default();
    for ear in 0..2 {
        let warped = fractional_resample(&x, &field.indices[ear]);
        let mut spec_data = engine.analyze(&warped);
        for (m, frame) in spec_data.chunks_exact_mut(bins).enumerate() {
            let pose = track_sample(track, spec.stft.frame_center(m) / fs)?;
            let (gl, gr) = oracle_gains(pose.position, spec.gain_depth);
            let g = Complex::new(if ear == 0 { gl } else { gr }, 0.0);
            frame.iter_mut().for_each(|z| *z *= g);
        }
        out[ear] = engine.synthesize(&spec_data, len)?;
    }
    Ok(out)
}

/// Writes `spec.n_items` items and the oracle record under `out`.
pub fn synth_dataset(out: impl AsRef<Path>, spec: &SynthSpec) -> Result<OracleParams> {
    let out = out.as_ref();
    spec.stft.validate()?;
    let len = spec.samples();
    if len == 0 {
        return Err(config_err!(
            "synthetic items must be longer than zero samples"
        ));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut items = Vec::with_capacity(spec.n_items);
    for i in 0..spec.n_items {
        let rec = item_record(i, &mut rng);
        let mono = mono_signal(len, spec.sample_rate as f64, &mut rng);
        let track = item_track(&rec, spec)?;
        let [l, r] = oracle_binaural(&mono, &track, spec)?;
        let dir = out.join(&rec.id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_wav(
            dir.join(MONO_FILE),
            &AudioBuffer::mono(spec.sample_rate, mono)?,
        )?;
        let to32 = |v: Vec<f64>| v.into_iter().map(|s| s as f32).collect();
        save_wav(
            dir.join(BINAURAL_FILE),
            &AudioBuffer::stereo(spec.sample_rate, to32(l), to32(r))?,
        )?;
        write_pose_file(dir.join(POSE_FILE), &track, QuatOrder::Xyzw)?;
        items.push(rec);
    }
    let params = OracleParams { spec: *spec, items };
    let text = toml::to_string(&params).map_err(|e| config_err!("cannot serialize oracle: {e}"))?;
    let path = out.join(ORACLE_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(params)
}
