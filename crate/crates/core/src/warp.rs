//! Time-domain warping: per-ear fractional read positions derived from the
//! source-to-ear propagation delay, optionally refined by a small temporal
//! convolution network running at the pose rate.
//!
//! The head is two point ears on the listener's interaural (`y`) axis. Read
//! positions are `f64` whatever the model precision.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{fractional_resample, AudioBuffer};
use crate::error::{config_err, Result};
use crate::pose::{track_sample, PoseTrack};
use crate::real::Real;
use crate::tensor::{silu, silu_backward, Conv1d, Param, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpConfig {
    /// Distance of each ear from the head center along `y`, meters.
    pub ear_offset: f64,
    pub speed_of_sound: f64,
    pub fs: u32,
    /// Bound of the neural correction, samples.
    pub w_max: f64,
    pub neural_channels: usize,
    pub neural_layers: usize,
    pub kernel: usize,
}

impl Default for WarpConfig {
    fn default() -> Self {
        WarpConfig {
            ear_offset: 0.09,
            speed_of_sound: 343.0,
            fs: 48_000,
            w_max: 64.0,
            neural_channels: 16,
            neural_layers: 3,
            kernel: 3,
        }
    }
}

impl WarpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ear_offset >= 0.0) {
            return Err(config_err!("ear offset must be non-negative"));
        }
        if !(self.w_max >= 0.0) {
            return Err(config_err!("w_max must be non-negative"));
        }
        if !(self.speed_of_sound > 0.0) || self.fs == 0 {
            return Err(config_err!(
                "speed of sound and sample rate must be positive"
            ));
        }
        if self.neural_layers < 2 || self.neural_channels == 0 {
            return Err(config_err!(
                "warp network needs at least 2 layers and 1 channel"
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(config_err!(
                "warp kernel size must be odd, got {}",
                self.kernel
            ));
        }
        Ok(())
    }

    /// Ear positions in the listener frame: left at `+y`, right at `-y`.
    pub fn ears(&self) -> [[f64; 3]; 2] {
        [[0.0, self.ear_offset, 0.0], [0.0, -self.ear_offset, 0.0]]
    }

    /// Propagation delay in samples from `position` to ear `ear`.
    pub fn delay(&self, position: [f64; 3], ear: usize) -> f64 {
        let o = self.ears()[ear];
        let d = ((position[0] - o[0]).powi(2)
            + (position[1] - o[1]).powi(2)
            + (position[2] - o[2]).powi(2))
        .sqrt();
        d * self.fs as f64 / self.speed_of_sound
    }
}

/// Per-ear fractional read indices into the mono signal.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpField {
    pub indices: [Vec<f64>; 2],
}

impl WarpField {
    pub fn len(&self) -> usize {
        self.indices[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn identity(len: usize) -> Self {
        let idx: Vec<f64> = (0..len).map(|i| i as f64).collect();
        WarpField {
            indices: [idx.clone(), idx],
        }
    }

    /// Adds audio-rate corrections (samples) to each ear's indices.
    pub fn add(&mut self, corrections: &[Vec<f64>; 2]) {
        for (idx, corr) in self.indices.iter_mut().zip(corrections) {
            for (i, c) in idx.iter_mut().zip(corr) {
                *i += c;
            }
        }
    }
}

/// `index_e(i) = i - |p(i/fs) - ear_e|·fs/c` for both ears.
pub fn geometric_warp(track: &PoseTrack, len: usize, cfg: &WarpConfig) -> Result<WarpField> {
    geometric_warp_from(track, 0, len, cfg)
}

/// Geometric warp for samples `start..start+len` of a longer signal.
pub fn geometric_warp_from(
    track: &PoseTrack,
    start: usize,
    len: usize,
    cfg: &WarpConfig,
) -> Result<WarpField> {
    if len == 0 {
        return Err(config_err!("warp length must be positive"));
    }
    let fs = cfg.fs as f64;
    let mut left = Vec::with_capacity(len);
    let mut right = Vec::with_capacity(len);
    for i in start..start + len {
        let pose = track_sample(track, i as f64 / fs)?;
        left.push(i as f64 - cfg.delay(pose.position, 0));
        right.push(i as f64 - cfg.delay(pose.position, 1));
    }
    Ok(WarpField {
        indices: [left, right],
    })
}

/// Resamples the mono signal at each ear's indices.
pub fn apply_warp<T: Real>(x: &AudioBuffer<T>, field: &WarpField) -> Result<AudioBuffer<T>> {
    if x.num_channels() != 1 {
        return Err(config_err!("warp input must be mono"));
    }
    if field.len() != x.len() {
        return Err(config_err!(
            "warp field length {} differs from signal length {}",
            field.len(),
            x.len()
        ));
    }
    let mono: Vec<f64> = x.channel(0).iter().map(|&v| v.to_f64()).collect();
    let ears = field
        .indices
        .iter()
        .map(|idx| {
            fractional_resample(&mono, idx)
                .into_iter()
                .map(T::lit)
                .collect()
        })
        .collect();
    AudioBuffer::new(x.sample_rate(), ears)
}

/// `[7, K]` input of the warp network: position and quaternion per knot.
pub fn pose_features<T: Real>(track: &PoseTrack) -> Tensor<T> {
    let k = track.len();
    let mut data = vec![T::zero(); 7 * k];
    for (j, pose) in track.poses.iter().enumerate() {
        for (c, v) in pose.to_array().iter().enumerate() {
            data[c * k + j] = T::lit(*v);
        }
    }
    Tensor::from_vec(&[7, k], data).expect("shape matches")
}

/// Linear interpolation of pose-rate corrections `[2, K]` onto audio
/// samples `start..start+len`.
pub fn upsample_corrections<T: Real>(
    corr: &Tensor<T>,
    rate: f64,
    fs: f64,
    start: usize,
    len: usize,
) -> [Vec<f64>; 2] {
    let k = corr.shape()[1];
    let mut out = [vec![0.0; len], vec![0.0; len]];
    for (ear, o) in out.iter_mut().enumerate() {
        let c = &corr.data()[ear * k..(ear + 1) * k];
        for (i, v) in o.iter_mut().enumerate() {
            let (k0, frac) = knot_position((start + i) as f64 * rate / fs, k);
            let a = c[k0].to_f64();
            *v = if frac > 0.0 {
                a + frac * (c[k0 + 1].to_f64() - a)
            } else {
                a
            };
        }
    }
    out
}

/// Adjoint of [`upsample_corrections`] for `start = 0`.
pub fn upsample_corrections_adjoint<T: Real>(
    grad: &[Vec<f64>; 2],
    knots: usize,
    rate: f64,
    fs: f64,
) -> Tensor<T> {
    let mut out = vec![0.0f64; 2 * knots];
    for (ear, g) in grad.iter().enumerate() {
        let acc = &mut out[ear * knots..(ear + 1) * knots];
        for (i, &v) in g.iter().enumerate() {
            let (k0, frac) = knot_position(i as f64 * rate / fs, knots);
            acc[k0] += (1.0 - frac) * v;
            if frac > 0.0 {
                acc[k0 + 1] += frac * v;
            }
        }
    }
    Tensor::from_vec(&[2, knots], out.into_iter().map(T::lit).collect()).expect("shape matches")
}

fn knot_position(u: f64, knots: usize) -> (usize, f64) {
    let u = u.clamp(0.0, (knots - 1) as f64);
    let k0 = (u.floor() as usize).min(knots - 1);
    if k0 + 1 >= knots {
        (k0, 0.0)
    } else {
        (k0, u - k0 as f64)
    }
}

/// Temporal convolution stack over the pose sequence producing bounded
/// per-ear index corrections.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpNet<T> {
    pub layers: Vec<Conv1d<T>>,
}

/// Forward activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct WarpNetCache<T> {
    inputs: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
    tanh_out: Tensor<T>,
}

impl<T: Real> WarpNet<T> {
    /// Uniform initialization; the output layer starts at zero so the
    /// untrained warp is exactly the geometric one.
    pub fn new<R: Rng + ?Sized>(cfg: &WarpConfig, rng: &mut R) -> Self {
        let c = cfg.neural_channels;
        let k = cfg.kernel;
        let mut layers = vec![Conv1d::new(7, c, k, rng)];
        for _ in 0..cfg.neural_layers.saturating_sub(2) {
            layers.push(Conv1d::new(c, c, k, rng));
        }
        layers.push(Conv1d::zeros(c, 2, k));
        WarpNet { layers }
    }

    pub fn zeros(cfg: &WarpConfig) -> Self {
        let c = cfg.neural_channels;
        let k = cfg.kernel;
        let mut layers = vec![Conv1d::zeros(7, c, k)];
        for _ in 0..cfg.neural_layers.saturating_sub(2) {
            layers.push(Conv1d::zeros(c, c, k));
        }
        layers.push(Conv1d::zeros(c, 2, k));
        WarpNet { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv1d::param_count).sum()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.kernels, &mut l.bias])
            .collect()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.kernels, &l.bias])
            .collect()
    }

    /// Bounded corrections `w_max·tanh(net(pose))`, shape `[2, K]`.
    pub fn forward(
        &self,
        features: &Tensor<T>,
        w_max: f64,
    ) -> Result<(Tensor<T>, WarpNetCache<T>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = features.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h)?;
            inputs.push(h);
            h = if i + 1 < self.layers.len() {
                silu(&z)
            } else {
                z.clone()
            };
            pre.push(z);
        }
        let mut tanh_out = h;
        tanh_out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        let mut scaled = tanh_out.clone();
        let w = T::lit(w_max);
        scaled.data_mut().iter_mut().for_each(|v| *v = *v * w);
        Ok((
            scaled,
            WarpNetCache {
                inputs,
                pre,
                tanh_out,
            },
        ))
    }

    /// Accumulates parameter gradients from the gradient of the scaled
    /// corrections.
    pub fn backward(&mut self, cache: &WarpNetCache<T>, d_scaled: &Tensor<T>, w_max: f64) {
        let w = T::lit(w_max);
        let mut grad = d_scaled.clone();
        for (g, &t) in grad.data_mut().iter_mut().zip(cache.tanh_out.data()) {
            *g = *g * w * (T::one() - t * t);
        }
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                grad = silu_backward(&cache.pre[i], &grad);
            }
            let dx = self.layers[i].backward(&cache.inputs[i], &grad, i > 0);
            if let Some(dx) = dx {
                grad = dx;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> WarpNet<U> {
        WarpNet {
            layers: self.layers.iter().map(Conv1d::cast).collect(),
        }
    }
}
