//! Audio buffers, windowed STFT analysis/synthesis and fractional-delay
//! resampling.
//!
//! Analysis uses centered frames by default: `window_len/2` zeros are padded
//! on each side, frame `m` is centered on sample `m·hop` and a signal of `L`
//! samples yields `floor(L/hop) + 1` frames. Synthesis is weighted
//! overlap-add with the analysis window, normalized by the running sum of
//! squared windows, so `istft(stft(x)) == x` for any window without zeros.
//!
//! Both transforms are linear and expose their adjoints
//! ([`Stft::analyze_adjoint`], [`Stft::synthesize_adjoint`]), which is all
//! the backward pass of the pipeline needs. Complex gradients are packed as
//! `∂L/∂Re + j·∂L/∂Im`.

use std::sync::Arc;

use rayon::prelude::*;
use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::real::Real;

pub const DEFAULT_SAMPLE_RATE: u32 = 48_000;

/// Sampled audio: one or two equally long channels.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer<T = f32> {
    sample_rate: u32,
    channels: Vec<Vec<T>>,
}

impl<T: Real> AudioBuffer<T> {
    pub fn new(sample_rate: u32, channels: Vec<Vec<T>>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(config_err!("sample rate must be positive"));
        }
        if channels.is_empty() || channels.len() > 2 {
            return Err(config_err!(
                "audio must have 1 or 2 channels, got {}",
                channels.len()
            ));
        }
        if channels.iter().any(|c| c.len() != channels[0].len()) {
            return Err(config_err!("audio channels differ in length"));
        }
        Ok(AudioBuffer {
            sample_rate,
            channels,
        })
    }

    pub fn mono(sample_rate: u32, samples: Vec<T>) -> Result<Self> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn stereo(sample_rate: u32, left: Vec<T>, right: Vec<T>) -> Result<Self> {
        Self::new(sample_rate, vec![left, right])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<T>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<T>> {
        self.channels
    }

    /// Samples `[start, start + len)` of every channel, zero-filled past the end.
    pub fn segment(&self, start: usize, len: usize) -> Self {
        let channels = self
            .channels
            .iter()
            .map(|c| {
                let mut out = vec![T::zero(); len];
                if start < c.len() {
                    let n = len.min(c.len() - start);
                    out[..n].copy_from_slice(&c[start..start + n]);
                }
                out
            })
            .collect();
        AudioBuffer {
            sample_rate: self.sample_rate,
            channels,
        }
    }

    pub fn cast<U: Real>(&self) -> AudioBuffer<U> {
        AudioBuffer {
            sample_rate: self.sample_rate,
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|&v| U::lit(v.to_f64())).collect())
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub centered: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_len: 512,
            hop: 256,
            centered: true,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 || !self.window_len.is_multiple_of(2) {
            return Err(config_err!(
                "window length must be even and at least 2, got {}",
                self.window_len
            ));
        }
        if self.hop == 0 || !self.window_len.is_multiple_of(self.hop) {
            return Err(config_err!(
                "hop {} must divide window length {}",
                self.hop,
                self.window_len
            ));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    /// Sample index of the first window sample of frame 0.
    pub fn offset(&self) -> isize {
        if self.centered {
            (self.window_len / 2) as isize
        } else {
            0
        }
    }

    /// Sample index the window of frame `m` is centered on.
    pub fn frame_center(&self, m: usize) -> f64 {
        (m * self.hop) as f64 - self.offset() as f64 + (self.window_len / 2) as f64
    }
}

/// Periodic Hamming window `0.54 - 0.46·cos(2πi/n)`.
pub fn hamming_window<T: Real>(n: usize) -> Result<Vec<T>> {
    if n <= 1 {
        return Err(config_err!("window length must exceed 1, got {n}"));
    }
    Ok((0..n)
        .map(|i| T::lit(0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect())
}

/// Non-negative-frequency bins of a multichannel STFT.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram<T = f32> {
    pub config: StftConfig,
    pub sample_rate: u32,
    pub channels: usize,
    pub frames: usize,
    pub bins: usize,
    /// Indexed `[(channel·frames + frame)·bins + bin]`.
    pub data: Vec<Complex<T>>,
}

impl<T: Real> ComplexSpectrogram<T> {
    pub fn zeros(config: StftConfig, sample_rate: u32, channels: usize, frames: usize) -> Self {
        let bins = config.bins();
        ComplexSpectrogram {
            config,
            sample_rate,
            channels,
            frames,
            bins,
            data: vec![Complex::new(T::zero(), T::zero()); channels * frames * bins],
        }
    }

    #[inline]
    pub fn index(&self, channel: usize, frame: usize, bin: usize) -> usize {
        (channel * self.frames + frame) * self.bins + bin
    }

    pub fn get(&self, channel: usize, frame: usize, bin: usize) -> Complex<T> {
        self.data[self.index(channel, frame, bin)]
    }

    pub fn channel(&self, c: usize) -> &[Complex<T>] {
        let n = self.frames * self.bins;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [Complex<T>] {
        let n = self.frames * self.bins;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.frames == other.frames && self.bins == other.bins
    }
}

/// Planned STFT engine for one configuration and precision.
#[derive(Clone)]
pub struct Stft<T: Real> {
    config: StftConfig,
    window: Vec<T>,
    forward: Arc<dyn RealToComplex<T>>,
    inverse: Arc<dyn ComplexToReal<T>>,
}

impl<T: Real> std::fmt::Debug for Stft<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("config", &self.config)
            .finish()
    }
}

impl<T: Real> Stft<T> {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = RealFftPlanner::<T>::new();
        Ok(Stft {
            window: hamming_window(config.window_len)?,
            forward: planner.plan_fft_forward(config.window_len),
            inverse: planner.plan_fft_inverse(config.window_len),
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    fn frame_start(&self, m: usize) -> isize {
        (m * self.config.hop) as isize - self.config.offset()
    }

    fn rfft(&self, buf: &mut [T], out: &mut [Complex<T>], scratch: &mut [Complex<T>]) {
        self.forward
            .process_with_scratch(buf, out, scratch)
            .expect("fft buffer sizes are fixed by the plan");
    }

    fn irfft(&self, spec: &mut [Complex<T>], out: &mut [T], scratch: &mut [Complex<T>]) {
        let last = spec.len() - 1;
        spec[0].im = T::zero();
        spec[last].im = T::zero();
        self.inverse
            .process_with_scratch(spec, out, scratch)
            .expect("fft buffer sizes are fixed by the plan");
    }

    fn scratch_len(&self) -> usize {
        self.forward
            .get_scratch_len()
            .max(self.inverse.get_scratch_len())
    }

    /// Frames × bins spectrum of one channel.
    pub fn analyze(&self, x: &[T]) -> Vec<Complex<T>> {
        let n = self.config.window_len;
        let bins = self.config.bins();
        let frames = self.config.frames(x.len());
        let mut out = vec![Complex::new(T::zero(), T::zero()); frames * bins];
        out.par_chunks_mut(bins).enumerate().for_each_init(
            || {
                (
                    vec![T::zero(); n],
                    vec![Complex::default(); self.scratch_len()],
                )
            },
            |(buf, scratch), (m, spec)| {
                let start = self.frame_start(m);
                for (i, b) in buf.iter_mut().enumerate() {
                    let t = start + i as isize;
                    *b = if t >= 0 && (t as usize) < x.len() {
                        x[t as usize] * self.window[i]
                    } else {
                        T::zero()
                    };
                }
                self.rfft(buf, spec, scratch);
            },
        );
        out
    }

    /// Squared-window sum at every output sample; zero past the last frame.
    fn window_energy(&self, frames: usize, len: usize) -> Vec<T> {
        let mut energy = vec![T::zero(); len];
        for m in 0..frames {
            let start = self.frame_start(m);
            for (i, &w) in self.window.iter().enumerate() {
                let t = start + i as isize;
                if t >= 0 && (t as usize) < len {
                    energy[t as usize] = energy[t as usize] + w * w;
                }
            }
        }
        energy
    }

    fn covered(&self, frames: usize) -> isize {
        self.frame_start(frames.saturating_sub(1)) + self.config.window_len as isize
    }

    /// Weighted overlap-add of `frames × bins` spectra into `out_len` samples.
    pub fn synthesize(&self, spec: &[Complex<T>], out_len: usize) -> Result<Vec<T>> {
        let n = self.config.window_len;
        let bins = self.config.bins();
        let frames = spec.len() / bins;
        let scale = T::one() / T::lit(n as f64);
        let mut frames_time = vec![T::zero(); frames * n];
        frames_time
            .par_chunks_mut(n)
            .zip(spec.par_chunks(bins))
            .for_each_init(
                || {
                    (
                        vec![Complex::default(); bins],
                        vec![Complex::default(); self.scratch_len()],
                    )
                },
                |(tmp, scratch), (out, s)| {
                    tmp.copy_from_slice(s);
                    self.irfft(tmp, out, scratch);
                    for (o, &w) in out.iter_mut().zip(&self.window) {
                        *o = *o * w * scale;
                    }
                },
            );
        let mut y = vec![T::zero(); out_len];
        for (m, frame) in frames_time.chunks_exact(n).enumerate() {
            let start = self.frame_start(m);
            for (i, &v) in frame.iter().enumerate() {
                let t = start + i as isize;
                if t >= 0 && (t as usize) < out_len {
                    y[t as usize] = y[t as usize] + v;
                }
            }
        }
        let energy = self.window_energy(frames, out_len);
        let covered = self.covered(frames);
        let tiny = T::lit(1e-10);
        for (t, (v, &e)) in y.iter_mut().zip(&energy).enumerate() {
            if (t as isize) >= covered {
                *v = T::zero();
            } else if e <= tiny {
                return Err(Error::Internal(format!("zero window energy at sample {t}")));
            } else {
                *v = *v / e;
            }
        }
        Ok(y)
    }

    /// Gradient with respect to the input signal of [`Stft::analyze`], given
    /// spectrum gradients `grad` (frames × bins).
    pub fn analyze_adjoint(&self, grad: &[Complex<T>], len: usize) -> Vec<T> {
        let n = self.config.window_len;
        let bins = self.config.bins();
        let frames = grad.len() / bins;
        let half = T::lit(0.5);
        let mut per_frame = vec![T::zero(); frames * n];
        per_frame
            .par_chunks_mut(n)
            .zip(grad.par_chunks(bins))
            .for_each_init(
                || {
                    (
                        vec![Complex::default(); bins],
                        vec![Complex::default(); self.scratch_len()],
                    )
                },
                |(tmp, scratch), (out, g)| {
                    // Re Σ_k g_k e^{jθ} through the Hermitian inverse.
                    tmp[0] = Complex::new(g[0].re, T::zero());
                    tmp[bins - 1] = Complex::new(g[bins - 1].re, T::zero());
                    for k in 1..bins - 1 {
                        tmp[k] = g[k] * half;
                    }
                    self.irfft(tmp, out, scratch);
                    for (o, &w) in out.iter_mut().zip(&self.window) {
                        *o = *o * w;
                    }
                },
            );
        let mut dx = vec![T::zero(); len];
        for (m, frame) in per_frame.chunks_exact(n).enumerate() {
            let start = self.frame_start(m);
            for (i, &v) in frame.iter().enumerate() {
                let t = start + i as isize;
                if t >= 0 && (t as usize) < len {
                    dx[t as usize] = dx[t as usize] + v;
                }
            }
        }
        dx
    }

    /// Gradient with respect to the spectrum of [`Stft::synthesize`], given
    /// output-sample gradients `grad_y` and the number of frames.
    pub fn synthesize_adjoint(&self, grad_y: &[T], frames: usize) -> Vec<Complex<T>> {
        let n = self.config.window_len;
        let bins = self.config.bins();
        let len = grad_y.len();
        let energy = self.window_energy(frames, len);
        let covered = self.covered(frames);
        let mut scaled = vec![T::zero(); len];
        for (t, s) in scaled.iter_mut().enumerate() {
            if (t as isize) < covered && energy[t] > T::zero() {
                *s = grad_y[t] / energy[t];
            }
        }
        let inv_n = T::one() / T::lit(n as f64);
        let two = T::lit(2.0);
        let mut out = vec![Complex::new(T::zero(), T::zero()); frames * bins];
        out.par_chunks_mut(bins).enumerate().for_each_init(
            || {
                (
                    vec![T::zero(); n],
                    vec![Complex::default(); self.scratch_len()],
                )
            },
            |(buf, scratch), (m, g)| {
                let start = self.frame_start(m);
                for (i, b) in buf.iter_mut().enumerate() {
                    let t = start + i as isize;
                    *b = if t >= 0 && (t as usize) < len {
                        scaled[t as usize] * self.window[i]
                    } else {
                        T::zero()
                    };
                }
                self.rfft(buf, g, scratch);
                for (k, v) in g.iter_mut().enumerate() {
                    let c = if k == 0 || k == bins - 1 {
                        inv_n
                    } else {
                        two * inv_n
                    };
                    *v = *v * c;
                }
                g[0].im = T::zero();
                g[bins - 1].im = T::zero();
            },
        );
        out
    }
}

pub fn stft<T: Real>(audio: &AudioBuffer<T>, cfg: &StftConfig) -> Result<ComplexSpectrogram<T>> {
    if audio.is_empty() {
        return Err(config_err!("cannot analyze empty audio"));
    }
    let engine = Stft::new(*cfg)?;
    let frames = cfg.frames(audio.len());
    let mut data = Vec::with_capacity(audio.num_channels() * frames * cfg.bins());
    for c in audio.channels() {
        data.extend(engine.analyze(c));
    }
    Ok(ComplexSpectrogram {
        config: *cfg,
        sample_rate: audio.sample_rate(),
        channels: audio.num_channels(),
        frames,
        bins: cfg.bins(),
        data,
    })
}

pub fn istft<T: Real>(spec: &ComplexSpectrogram<T>, out_len: usize) -> Result<AudioBuffer<T>> {
    if spec.bins != spec.config.bins() || spec.data.len() != spec.channels * spec.frames * spec.bins
    {
        return Err(config_err!(
            "spectrogram inconsistent with its configuration"
        ));
    }
    let engine = Stft::new(spec.config)?;
    let channels = (0..spec.channels)
        .map(|c| engine.synthesize(spec.channel(c), out_len))
        .collect::<Result<Vec<_>>>()?;
    AudioBuffer::new(spec.sample_rate, channels)
}

/// Direct O(n²) DFT of a real sequence, non-negative bins only.
pub fn dft_reference(x: &[f64]) -> Vec<Complex<f64>> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            x.iter()
                .enumerate()
                .fold(Complex::new(0.0, 0.0), |acc, (i, &v)| {
                    let theta = -2.0 * std::f64::consts::PI * ((k * i) % n) as f64 / n as f64;
                    acc + Complex::new(v * theta.cos(), v * theta.sin())
                })
        })
        .collect()
}

#[inline]
fn read_zero_ext<T: Real>(x: &[T], i: i64) -> T {
    if i >= 0 && (i as usize) < x.len() {
        x[i as usize]
    } else {
        T::zero()
    }
}

/// Linear interpolation of `x` at fractional `indices`; reads outside the
/// signal return zero.
pub fn fractional_resample<T: Real>(x: &[T], indices: &[T]) -> Vec<T> {
    indices
        .iter()
        .map(|&idx| {
            let fl = idx.floor();
            let frac = idx - fl;
            let i = fl.to_i64().unwrap_or(i64::MIN / 2);
            let a = read_zero_ext(x, i);
            let b = read_zero_ext(x, i + 1);
            a + frac * (b - a)
        })
        .collect()
}

/// Gradient of [`fractional_resample`] with respect to the read indices:
/// `dy[i]·(x[floor+1] - x[floor])`.
pub fn fractional_resample_backward<T: Real>(x: &[T], indices: &[T], dy: &[T]) -> Vec<T> {
    indices
        .iter()
        .zip(dy)
        .map(|(&idx, &g)| {
            let i = idx.floor().to_i64().unwrap_or(i64::MIN / 2);
            g * (read_zero_ext(x, i + 1) - read_zero_ext(x, i))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn hamming_values() {
        let w: Vec<f64> = hamming_window(512).unwrap();
        assert!((w[0] - 0.08).abs() < 1e-15);
        assert!((w[256] - 1.0).abs() < 1e-15);
        assert!(hamming_window::<f64>(1).is_err());
    }

    #[test]
    fn hamming_overlap_sums() {
        // At hop n/2 the window itself overlap-adds to a constant; its square
        // does not, but stays bounded away from zero, which is what the
        // squared-window normalization of the synthesis needs.
        let w: Vec<f64> = hamming_window(512).unwrap();
        let sums: Vec<f64> = (0..256).map(|i| w[i] + w[i + 256]).collect();
        assert!(sums.iter().all(|s| (s - 1.08).abs() < 1e-12));
        let sq: Vec<f64> = (0..256)
            .map(|i| w[i] * w[i] + w[i + 256] * w[i + 256])
            .collect();
        let min = sq.iter().cloned().fold(f64::MAX, f64::min);
        let max = sq.iter().cloned().fold(f64::MIN, f64::max);
        assert!((min - 2.0 * 0.54 * 0.54).abs() < 1e-12);
        assert!((max - 2.0 * (0.54 * 0.54 + 0.46 * 0.46)).abs() < 1e-12);
    }

    #[test]
    fn frame_counts() {
        let cfg = StftConfig::default();
        let audio = AudioBuffer::mono(48_000, vec![0.0f32; 48_000]).unwrap();
        let spec = stft(&audio, &cfg).unwrap();
        assert_eq!((spec.frames, spec.bins), (188, 257));
        assert!(spec.data.iter().all(|c| c.re == 0.0 && c.im == 0.0));
    }

    #[test]
    fn sinusoid_peaks_at_its_bin() {
        let cfg = StftConfig::default();
        let f = 17.0 * 48_000.0 / 512.0;
        let x: Vec<f64> = (0..8192)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 48_000.0).sin())
            .collect();
        let spec = stft(&AudioBuffer::mono(48_000, x).unwrap(), &cfg).unwrap();
        for m in 2..spec.frames - 2 {
            let best = (0..spec.bins)
                .max_by(|&a, &b| {
                    spec.get(0, m, a)
                        .norm()
                        .total_cmp(&spec.get(0, m, b).norm())
                })
                .unwrap();
            assert_eq!(best, 17, "frame {m}");
        }
    }

    #[test]
    fn fft_matches_reference_dft() {
        let x = noise(512, 9);
        let engine = Stft::<f64>::new(StftConfig {
            window_len: 512,
            hop: 256,
            centered: false,
        })
        .unwrap();
        let spec = engine.analyze(&x);
        let windowed: Vec<f64> = x.iter().zip(engine.window()).map(|(a, w)| a * w).collect();
        let reference = dft_reference(&windowed);
        let diff = spec[..257]
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn round_trip_interior() {
        let cfg = StftConfig::default();
        let x = noise(10_000, 1);
        let spec = stft(&AudioBuffer::mono(48_000, x.clone()).unwrap(), &cfg).unwrap();
        let y = istft(&spec, x.len()).unwrap();
        let err = x[512..x.len() - 512]
            .iter()
            .zip(&y.channel(0)[512..x.len() - 512])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn zero_spectrogram_gives_silence() {
        let spec = ComplexSpectrogram::<f64>::zeros(StftConfig::default(), 48_000, 2, 10);
        let y = istft(&spec, 2304).unwrap();
        assert!(y.channels().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn parseval_per_frame() {
        let x = noise(4096, 2);
        let engine = Stft::<f64>::new(StftConfig::default()).unwrap();
        let spec = engine.analyze(&x);
        let n = 512.0;
        for m in 2..10 {
            let start = m * 256 - 256;
            let time: f64 = (0..512)
                .map(|i| (x[start + i] * engine.window()[i]).powi(2))
                .sum();
            let s = &spec[m * 257..(m + 1) * 257];
            let freq = (s[0].norm_sqr()
                + s[256].norm_sqr()
                + 2.0 * s[1..256].iter().map(|c| c.norm_sqr()).sum::<f64>())
                / n;
            assert!(((time - freq) / time).abs() < 1e-6);
        }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn cdot(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.re * y.re + x.im * y.im)
            .sum()
    }

    #[test]
    fn analysis_adjoint_identity() {
        // <A x, g> = <x, A* g> with the real inner product on (Re, Im).
        let engine = Stft::<f64>::new(StftConfig::default()).unwrap();
        let x = noise(3000, 3);
        let frames = StftConfig::default().frames(3000);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g: Vec<Complex<f64>> = (0..frames * 257)
            .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let lhs = cdot(&engine.analyze(&x), &g);
        let rhs = dot(&x, &engine.analyze_adjoint(&g, 3000));
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} {rhs}");
    }

    #[test]
    fn synthesis_adjoint_identity() {
        let engine = Stft::<f64>::new(StftConfig::default()).unwrap();
        let frames = 12;
        let len = 2900;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut z: Vec<Complex<f64>> = (0..frames * 257)
            .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let g = noise(len, 6);
        let lhs = dot(&engine.synthesize(&z, len).unwrap(), &g);
        let adj = engine.synthesize_adjoint(&g, frames);
        // The synthesis ignores the imaginary parts of DC and Nyquist.
        for m in 0..frames {
            z[m * 257].im = 0.0;
            z[m * 257 + 256].im = 0.0;
        }
        let rhs = cdot(&z, &adj);
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} {rhs}");
    }

    #[test]
    fn resample_rules() {
        let x = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(fractional_resample(&x, &[1.5]), vec![1.5]);
        assert_eq!(fractional_resample(&x, &[0.0, 1.0, 2.0, 3.0]), x.to_vec());
        assert_eq!(fractional_resample(&x, &[-0.5]), vec![0.0]);
        assert_eq!(fractional_resample(&[2.0, 1.0], &[-0.5]), vec![1.0]);
        assert_eq!(fractional_resample(&x, &[3.5, 10.0]), vec![1.5, 0.0]);
    }

    #[test]
    fn integer_shift_is_exact_delay() {
        let x = noise(100, 7);
        let d = 13;
        let idx: Vec<f64> = (0..100).map(|i| i as f64 - d as f64).collect();
        let y = fractional_resample(&x, &idx);
        assert!(y[..d].iter().all(|&v| v == 0.0));
        assert_eq!(&y[d..], &x[..100 - d]);
    }

    #[test]
    fn resample_slope() {
        let x = [0.0, 1.0, 4.0];
        let g = fractional_resample_backward(&x, &[0.25, 1.5], &[1.0, 2.0]);
        assert_eq!(g, vec![1.0, 6.0]);
    }
}
