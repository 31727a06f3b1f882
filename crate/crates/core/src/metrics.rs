//! Training objective and objective evaluation metrics.
//!
//! The training loss is `λ1·‖y − y*‖₂ + λ2·mean|wrap(∠Y − ∠Y*)|`, where the
//! first term is the plain (non-squared) 2-norm over every sample of both
//! channels. The evaluation metrics are mean squared errors:
//!
//! | metric         | quantity                                  |
//! |----------------|-------------------------------------------|
//! | `wave_l2`      | waveform MSE, reported ×10³               |
//! | `amplitude_l2` | MSE of STFT magnitudes                    |
//! | `phase_l2`     | MSE of wrapped phase error, masked        |
//! | `ipd_l2`       | MSE of wrapped interaural phase error, masked |
//!
//! Masked metrics only use bins whose reference magnitude exceeds
//! `energy_floor` times the largest reference magnitude.

use std::f64::consts::PI;

use realfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::dsp::{stft, AudioBuffer, ComplexSpectrogram, Stft, StftConfig};
use crate::error::{config_err, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Waveform 2-norm weight.
    pub lambda1: f64,
    /// Phase error weight.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(config_err!("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Maps a phase to `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = (x + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

fn check_pair<T: Real>(y: &AudioBuffer<T>, y_ref: &AudioBuffer<T>) -> Result<()> {
    if y.num_channels() != y_ref.num_channels() || y.len() != y_ref.len() {
        return Err(config_err!(
            "estimate ({} ch, {} samples) and reference ({} ch, {} samples) differ in shape",
            y.num_channels(),
            y.len(),
            y_ref.num_channels(),
            y_ref.len()
        ));
    }
    if y.is_empty() {
        return Err(config_err!("cannot compare empty signals"));
    }
    Ok(())
}

/// Loss value with its gradient with respect to every output sample.
#[derive(Clone, Debug)]
pub struct LossGrad<T> {
    pub loss: f64,
    pub wave_term: f64,
    pub phase_term: f64,
    pub grad: Vec<Vec<T>>,
}

/// Training loss of `y` against `y_ref`.
pub fn training_loss<T: Real>(
    y: &AudioBuffer<T>,
    y_ref: &AudioBuffer<T>,
    weights: &LossWeights,
    stft_cfg: &StftConfig,
) -> Result<f64> {
    check_pair(y, y_ref)?;
    let engine = Stft::new(*stft_cfg)?;
    Ok(loss_and_grad(y.channels(), y_ref.channels(), weights, &engine, false)?.loss)
}

/// Training loss and, when `want_grad`, its gradient with respect to `y`.
///
/// Channels are slices of equal length. Sums run in `f64`.
pub fn loss_and_grad<T: Real>(
    y: &[Vec<T>],
    y_ref: &[Vec<T>],
    weights: &LossWeights,
    engine: &Stft<T>,
    want_grad: bool,
) -> Result<LossGrad<T>> {
    if y.len() != y_ref.len() || y.iter().zip(y_ref).any(|(a, b)| a.len() != b.len()) {
        return Err(config_err!("estimate and reference differ in shape"));
    }
    let len = y.first().map_or(0, Vec::len);
    if len == 0 {
        return Err(config_err!("cannot compare empty signals"));
    }

    let sq: f64 = y
        .iter()
        .zip(y_ref)
        .flat_map(|(a, b)| a.iter().zip(b))
        .map(|(&a, &b)| (a.to_f64() - b.to_f64()).powi(2))
        .sum();
    let norm = sq.sqrt();
    let wave_term = weights.lambda1 * norm;

    let bins = engine.config().bins();
    let frames = engine.config().frames(len);
    let count = (y.len() * frames * bins) as f64;
    let mut phase_sum = 0.0;
    let mut spec_grads = Vec::with_capacity(y.len());
    for (a, b) in y.iter().zip(y_ref) {
        let ya = engine.analyze(a);
        let yb = engine.analyze(b);
        let mut g = if want_grad {
            vec![Complex::new(T::zero(), T::zero()); ya.len()]
        } else {
            Vec::new()
        };
        for (k, (za, zb)) in ya.iter().zip(&yb).enumerate() {
            let za = Complex::new(za.re.to_f64(), za.im.to_f64());
            let zb = Complex::new(zb.re.to_f64(), zb.im.to_f64());
            let d = wrap_phase(za.arg() - zb.arg());
            phase_sum += d.abs();
            if want_grad && d != 0.0 {
                // d|wrap(θ − θ*)| = sign · dθ, dθ packed as j·Y/|Y|².
                let s = d.signum() * weights.lambda2 / count / (za.norm_sqr() + 1e-12);
                g[k] = Complex::new(T::lit(-s * za.im), T::lit(s * za.re));
            }
        }
        spec_grads.push(g);
    }
    let phase_term = weights.lambda2 * phase_sum / count;

    let grad = if want_grad {
        let scale = if norm > 0.0 {
            weights.lambda1 / norm
        } else {
            0.0
        };
        y.iter()
            .zip(y_ref)
            .zip(&spec_grads)
            .map(|((a, b), g)| {
                let mut dy = engine.analyze_adjoint(g, len);
                for ((d, &va), &vb) in dy.iter_mut().zip(a).zip(b) {
                    *d = *d + T::lit(scale * (va.to_f64() - vb.to_f64()));
                }
                dy
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(LossGrad {
        loss: wave_term + phase_term,
        wave_term,
        phase_term,
        grad,
    })
}

/// Waveform MSE over all samples and channels, ×10³.
pub fn wave_l2<T: Real>(y: &AudioBuffer<T>, y_ref: &AudioBuffer<T>) -> Result<f64> {
    check_pair(y, y_ref)?;
    let n = (y.len() * y.num_channels()) as f64;
    let sq: f64 = y
        .channels()
        .iter()
        .zip(y_ref.channels())
        .flat_map(|(a, b)| a.iter().zip(b))
        .map(|(&a, &b)| (a.to_f64() - b.to_f64()).powi(2))
        .sum();
    Ok(1e3 * sq / n)
}

fn spectra<T: Real>(
    y: &AudioBuffer<T>,
    y_ref: &AudioBuffer<T>,
    cfg: &StftConfig,
) -> Result<(ComplexSpectrogram<f64>, ComplexSpectrogram<f64>)> {
    check_pair(y, y_ref)?;
    Ok((
        stft(&y.cast::<f64>(), cfg)?,
        stft(&y_ref.cast::<f64>(), cfg)?,
    ))
}

/// MSE of STFT magnitudes.
pub fn amplitude_l2<T: Real>(
    y: &AudioBuffer<T>,
    y_ref: &AudioBuffer<T>,
    cfg: &StftConfig,
) -> Result<f64> {
    let (a, b) = spectra(y, y_ref, cfg)?;
    Ok(amplitude_l2_spec(&a, &b))
}

pub fn amplitude_l2_spec(
    est: &ComplexSpectrogram<f64>,
    reference: &ComplexSpectrogram<f64>,
) -> f64 {
    let sum: f64 = est
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (a.norm() - b.norm()).powi(2))
        .sum();
    sum / est.data.len() as f64
}

fn floor_of(reference: &ComplexSpectrogram<f64>, energy_floor: f64) -> f64 {
    let peak = reference.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
    energy_floor * peak
}

fn masked_mse(errors: impl Iterator<Item = Option<f64>>) -> f64 {
    let (sum, n) = errors
        .flatten()
        .fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// MSE of the wrapped phase error over bins above the energy floor.
pub fn phase_l2<T: Real>(
    y: &AudioBuffer<T>,
    y_ref: &AudioBuffer<T>,
    cfg: &StftConfig,
    energy_floor: f64,
) -> Result<f64> {
    let (a, b) = spectra(y, y_ref, cfg)?;
    Ok(phase_l2_spec(&a, &b, energy_floor))
}

pub fn phase_l2_spec(
    est: &ComplexSpectrogram<f64>,
    reference: &ComplexSpectrogram<f64>,
    energy_floor: f64,
) -> f64 {
    let floor = floor_of(reference, energy_floor);
    masked_mse(
        est.data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| (b.norm() > floor).then(|| wrap_phase(a.arg() - b.arg()))),
    )
}

/// MSE of the wrapped interaural phase difference error.
pub fn ipd_l2<T: Real>(
    y: &AudioBuffer<T>,
    y_ref: &AudioBuffer<T>,
    cfg: &StftConfig,
    energy_floor: f64,
) -> Result<f64> {
    if y.num_channels() != 2 || y_ref.num_channels() != 2 {
        return Err(config_err!("interaural phase needs stereo signals"));
    }
    let (a, b) = spectra(y, y_ref, cfg)?;
    ipd_l2_spec(&a, &b, energy_floor)
}

/// `∠(Y_l·conj(Y_r))`.
pub fn ipd(left: Complex<f64>, right: Complex<f64>) -> f64 {
    (left * right.conj()).arg()
}

pub fn ipd_l2_spec(
    est: &ComplexSpectrogram<f64>,
    reference: &ComplexSpectrogram<f64>,
    energy_floor: f64,
) -> Result<f64> {
    if est.channels != 2 || reference.channels != 2 {
        return Err(config_err!("interaural phase needs stereo spectrograms"));
    }
    let floor = floor_of(reference, energy_floor);
    let (el, er) = (est.channel(0), est.channel(1));
    let (rl, rr) = (reference.channel(0), reference.channel(1));
    Ok(masked_mse((0..el.len()).map(|k| {
        (rl[k].norm() > floor && rr[k].norm() > floor)
            .then(|| wrap_phase(ipd(el[k], er[k]) - ipd(rl[k], rr[k])))
    })))
}

/// The four evaluation metrics plus the settings they were computed with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub wave_l2: f64,
    pub amplitude_l2: f64,
    pub phase_l2: f64,
    pub ipd_l2: f64,
    pub energy_floor: f64,
    pub stft: StftConfig,
}

impl MetricReport {
    /// One `name=value` line per field.
    pub fn to_text(&self) -> String {
        format!(
            "wave_l2={}\namplitude_l2={}\nphase_l2={}\nipd_l2={}\nenergy_floor={}\nstft.window_len={}\nstft.hop={}\nstft.window=hamming_periodic\nstft.centered={}\n",
            self.wave_l2,
            self.amplitude_l2,
            self.phase_l2,
            self.ipd_l2,
            self.energy_floor,
            self.stft.window_len,
            self.stft.hop,
            self.stft.centered
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// All four metrics of a stereo estimate against its reference.
pub fn evaluate<T: Real>(
    y: &AudioBuffer<T>,
    y_ref: &AudioBuffer<T>,
    cfg: &StftConfig,
    energy_floor: f64,
) -> Result<MetricReport> {
    if y.num_channels() != 2 || y_ref.num_channels() != 2 {
        return Err(config_err!(
            "evaluation needs stereo estimate and reference"
        ));
    }
    if y.sample_rate() != y_ref.sample_rate() {
        return Err(config_err!(
            "sample rates differ: {} vs {}",
            y.sample_rate(),
            y_ref.sample_rate()
        ));
    }
    let (a, b) = spectra(y, y_ref, cfg)?;
    Ok(MetricReport {
        wave_l2: wave_l2(y, y_ref)?,
        amplitude_l2: amplitude_l2_spec(&a, &b),
        phase_l2: phase_l2_spec(&a, &b, energy_floor),
        ipd_l2: ipd_l2_spec(&a, &b, energy_floor)?,
        energy_floor,
        stft: *cfg,
    })
}
