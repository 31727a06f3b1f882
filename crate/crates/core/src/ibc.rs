//! Implicit binaural corrector: a coordinate MLP queried once per
//! (ear, frame, bin) that predicts a bounded complex gain.
//!
//! A coordinate is the concatenation
//! `[position(3), quaternion(4), ear one-hot(2), FreqPE(2·n_f), TimePE(2·n_t)]`.
//! The MLP maps it to raw `(ΔlogA, Δφ)`, which are squashed to
//! `δ_A = α·tanh(ΔlogA)` and `δ_φ = π·tanh(Δφ)` and turned into the gain
//! `G = exp(δ_A)·exp(j·δ_φ)`. Every gain therefore has magnitude in
//! `[e^-α, e^α]` and phase in `(-π, π)`.

use rand::Rng;
use realfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::dsp::ComplexSpectrogram;
use crate::error::{config_err, Result};
use crate::pose::Pose;
use crate::real::Real;
use crate::tensor::{silu_backward, silu_inplace, Linear, Param, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingConfig {
    /// Frequency encoding bands.
    pub n_f: usize,
    /// Time encoding bands.
    pub n_t: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig { n_f: 8, n_t: 12 }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_f == 0 || self.n_t == 0 {
            return Err(config_err!("encoding band counts must be at least 1"));
        }
        Ok(())
    }

    pub fn coord_width(&self) -> usize {
        7 + 2 + 2 * self.n_f + 2 * self.n_t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IbcConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub alpha: f64,
}

impl Default for IbcConfig {
    fn default() -> Self {
        IbcConfig {
            hidden: 256,
            hidden_layers: 3,
            alpha: 0.8,
        }
    }
}

impl IbcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden_layers == 0 {
            return Err(config_err!(
                "corrector needs at least one non-empty hidden layer"
            ));
        }
        if !(self.alpha > 0.0) {
            return Err(config_err!("alpha must be positive"));
        }
        Ok(())
    }
}

fn sinusoidal(x: f64, bands: usize) -> Vec<f64> {
    (0..bands)
        .flat_map(|k| {
            let arg = (1u64 << k) as f64 * 2.0 * std::f64::consts::PI * x;
            [arg.sin(), arg.cos()]
        })
        .collect()
}

/// `(sin(2^k·2πf), cos(2^k·2πf))` for `k = 0..n_f`, sin first per band.
pub fn freq_pe(f_norm: f64, n_f: usize) -> Vec<f64> {
    sinusoidal(f_norm, n_f)
}

/// Same layout as [`freq_pe`] over the normalized frame position.
pub fn time_pe(t_norm: f64, n_t: usize) -> Vec<f64> {
    sinusoidal(t_norm, n_t)
}

/// Everything needed to turn (pose, ear, frame, bin) into a coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateSpace {
    pub encoding: EncodingConfig,
    pub bins: usize,
    pub frames_per_chunk: usize,
    /// Zero the FreqPE block (width unchanged).
    pub freq_enabled: bool,
    /// Zero the TimePE block (width unchanged).
    pub time_enabled: bool,
    freq_table: Vec<f64>,
}

impl CoordinateSpace {
    pub fn new(encoding: EncodingConfig, bins: usize, frames_per_chunk: usize) -> Result<Self> {
        encoding.validate()?;
        if bins < 2 || frames_per_chunk < 2 {
            return Err(config_err!(
                "need at least 2 bins and 2 frames per chunk, got {bins} and {frames_per_chunk}"
            ));
        }
        let freq_table = (0..bins)
            .flat_map(|b| freq_pe(b as f64 / (bins - 1) as f64, encoding.n_f))
            .collect();
        Ok(CoordinateSpace {
            encoding,
            bins,
            frames_per_chunk,
            freq_enabled: true,
            time_enabled: true,
            freq_table,
        })
    }

    pub fn with_ablation(mut self, freq_enabled: bool, time_enabled: bool) -> Self {
        self.freq_enabled = freq_enabled;
        self.time_enabled = time_enabled;
        self
    }

    pub fn width(&self) -> usize {
        self.encoding.coord_width()
    }

    /// Rows per frame: both ears times all bins.
    pub fn rows_per_frame(&self) -> usize {
        2 * self.bins
    }

    /// Chunk-local frame used for the time coordinate of global frame `m`.
    pub fn local_frame(&self, m: usize) -> usize {
        m % (self.frames_per_chunk - 1)
    }

    pub fn assemble(&self, pose: &Pose, ear: usize, frame: usize, bin: usize) -> Result<Vec<f64>> {
        if ear > 1 {
            return Err(config_err!("ear index {ear} out of range"));
        }
        if bin >= self.bins {
            return Err(config_err!("bin {bin} out of range (< {})", self.bins));
        }
        if frame >= self.frames_per_chunk {
            return Err(config_err!(
                "frame {frame} out of range (< {})",
                self.frames_per_chunk
            ));
        }
        let mut c = Vec::with_capacity(self.width());
        c.extend(pose.to_array());
        c.extend(if ear == 0 { [1.0, 0.0] } else { [0.0, 1.0] });
        let nf = 2 * self.encoding.n_f;
        if self.freq_enabled {
            c.extend_from_slice(&self.freq_table[bin * nf..(bin + 1) * nf]);
        } else {
            c.extend(std::iter::repeat_n(0.0, nf));
        }
        if self.time_enabled {
            c.extend(time_pe(self.time_norm(frame), self.encoding.n_t));
        } else {
            c.extend(std::iter::repeat_n(0.0, 2 * self.encoding.n_t));
        }
        Ok(c)
    }

    fn time_norm(&self, frame: usize) -> f64 {
        frame as f64 / (self.frames_per_chunk - 1) as f64
    }

    /// Writes the `2·bins × width` coordinate block of one frame, rows
    /// ordered ear-major then bin.
    pub fn fill_frame<T: Real>(&self, pose: &Pose, frame: usize, out: &mut [T]) {
        let w = self.width();
        let nf = 2 * self.encoding.n_f;
        let nt = 2 * self.encoding.n_t;
        let head = pose.to_array().map(T::lit);
        let tpe: Vec<T> = if self.time_enabled {
            time_pe(
                self.time_norm(frame.min(self.frames_per_chunk - 1)),
                self.encoding.n_t,
            )
            .into_iter()
            .map(T::lit)
            .collect()
        } else {
            vec![T::zero(); nt]
        };
        for ear in 0..2 {
            for bin in 0..self.bins {
                let row = &mut out[(ear * self.bins + bin) * w..][..w];
                row[..7].copy_from_slice(&head);
                row[7] = if ear == 0 { T::one() } else { T::zero() };
                row[8] = if ear == 1 { T::one() } else { T::zero() };
                let fpe = &mut row[9..9 + nf];
                if self.freq_enabled {
                    for (d, &s) in fpe
                        .iter_mut()
                        .zip(&self.freq_table[bin * nf..(bin + 1) * nf])
                    {
                        *d = T::lit(s);
                    }
                } else {
                    fpe.iter_mut().for_each(|v| *v = T::zero());
                }
                row[9 + nf..].copy_from_slice(&tpe);
            }
        }
    }

    /// The `2 × width` bin-independent part of a frame's coordinates (one
    /// row per ear, frequency columns zero).
    pub fn frame_part<T: Real>(&self, pose: &Pose, frame: usize) -> Vec<T> {
        let w = self.width();
        let mut out = vec![T::zero(); 2 * w];
        let mut full = vec![T::zero(); self.rows_per_frame() * w];
        self.fill_frame(pose, frame, &mut full);
        let nf = 2 * self.encoding.n_f;
        for ear in 0..2 {
            let src = &full[ear * self.bins * w..][..w];
            let dst = &mut out[ear * w..][..w];
            dst.copy_from_slice(src);
            dst[9..9 + nf].iter_mut().for_each(|v| *v = T::zero());
        }
        out
    }

    /// The `bins × width` frame-independent part: frequency columns only.
    pub fn bin_part<T: Real>(&self) -> Vec<T> {
        let w = self.width();
        let nf = 2 * self.encoding.n_f;
        let mut out = vec![T::zero(); self.bins * w];
        if self.freq_enabled {
            for (bin, row) in out.chunks_exact_mut(w).enumerate() {
                for (d, &s) in row[9..9 + nf]
                    .iter_mut()
                    .zip(&self.freq_table[bin * nf..(bin + 1) * nf])
                {
                    *d = T::lit(s);
                }
            }
        }
        out
    }
}

/// Coordinate of one (ear, frame, bin) query.
pub fn assemble_coords(
    pose: &Pose,
    ear: usize,
    frame: usize,
    bin: usize,
    space: &CoordinateSpace,
) -> Result<Vec<f64>> {
    space.assemble(pose, ear, frame, bin)
}

/// Coordinate MLP: SiLU hidden layers and a linear 2-wide output.
#[derive(Clone, Debug, PartialEq)]
pub struct IbcMlp<T> {
    pub layers: Vec<Linear<T>>,
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct IbcCache<T> {
    inputs: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
}

impl<T: Real> IbcMlp<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, cfg: &IbcConfig, rng: &mut R) -> Self {
        let mut layers = vec![Linear::new(input, cfg.hidden, rng)];
        for _ in 1..cfg.hidden_layers {
            layers.push(Linear::new(cfg.hidden, cfg.hidden, rng));
        }
        layers.push(Linear::new(cfg.hidden, 2, rng));
        IbcMlp {
            layers,
            alpha: cfg.alpha,
        }
    }

    pub fn zeros(input: usize, cfg: &IbcConfig) -> Self {
        let mut layers = vec![Linear::zeros(input, cfg.hidden)];
        for _ in 1..cfg.hidden_layers {
            layers.push(Linear::zeros(cfg.hidden, cfg.hidden));
        }
        layers.push(Linear::zeros(cfg.hidden, 2));
        IbcMlp {
            layers,
            alpha: cfg.alpha,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    /// Multiply-accumulates of one coordinate query.
    pub fn macs_per_query(&self) -> usize {
        self.layers.iter().map(|l| l.fan_in() * l.fan_out()).sum()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn check_width(&self, coords: &Tensor<T>) -> Result<()> {
        if coords.shape().len() != 2 || coords.shape()[1] != self.input_width() {
            return Err(config_err!(
                "coordinate shape {:?} does not match corrector input width {}",
                coords.shape(),
                self.input_width()
            ));
        }
        Ok(())
    }

    /// Raw `(ΔlogA, Δφ)` per coordinate row, shape `[N, 2]`.
    pub fn forward(&self, coords: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_width(coords)?;
        self.forward_hidden(self.layers[0].forward(coords)?)
    }

    /// Remaining layers given the first layer's pre-activation `[N, hidden]`.
    pub fn forward_hidden(&self, mut h: Tensor<T>) -> Result<Tensor<T>> {
        for layer in &self.layers[1..] {
            silu_inplace(h.data_mut());
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, coords: &Tensor<T>) -> Result<(Tensor<T>, IbcCache<T>)> {
        self.check_width(coords)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n - 1);
        let mut z = self.layers[0].forward(coords)?;
        inputs.push(coords.clone());
        for layer in &self.layers[1..] {
            let mut h = z.clone();
            silu_inplace(h.data_mut());
            pre.push(z);
            z = layer.forward(&h)?;
            inputs.push(h);
        }
        Ok((z, IbcCache { inputs, pre }))
    }

    /// Accumulates parameter gradients from `d_raw` (`[N, 2]`).
    pub fn backward(&mut self, cache: &IbcCache<T>, d_raw: &Tensor<T>) {
        let mut grad = d_raw.clone();
        for i in (0..self.layers.len()).rev() {
            let dx = self.layers[i].backward(&cache.inputs[i], &grad, i > 0);
            if let Some(dx) = dx {
                grad = silu_backward(&cache.pre[i - 1], &dx);
            }
        }
    }

    pub fn cast<U: Real>(&self) -> IbcMlp<U> {
        IbcMlp {
            layers: self.layers.iter().map(Linear::cast).collect(),
            alpha: self.alpha,
        }
    }
}

/// `(α·tanh(raw_A), π·tanh(raw_φ))`.
///
/// The phase tanh is kept one ulp inside `±1` so a saturated output still
/// maps to a phase strictly inside `(-π, π)`.
pub fn scale_corrections<T: Real>(raw_a: T, raw_phi: T, alpha: T) -> (T, T) {
    let cap = T::one() - T::epsilon();
    (
        alpha * raw_a.tanh(),
        T::PI() * raw_phi.tanh().max(-cap).min(cap),
    )
}

/// `exp(δ_A)·(cos δ_φ + j sin δ_φ)`.
pub fn build_gain<T: Real>(delta_a: T, delta_phi: T) -> Complex<T> {
    let mag = delta_a.exp();
    Complex::new(mag * delta_phi.cos(), mag * delta_phi.sin())
}

/// Gain straight from raw MLP outputs.
#[inline]
pub fn gain_from_raw<T: Real>(raw_a: T, raw_phi: T, alpha: T) -> Complex<T> {
    let (a, p) = scale_corrections(raw_a, raw_phi, alpha);
    build_gain(a, p)
}

/// Gradient of the raw outputs given gradients of the scaled corrections.
#[inline]
pub fn scale_corrections_backward<T: Real>(
    raw_a: T,
    raw_phi: T,
    alpha: T,
    d_delta_a: T,
    d_delta_phi: T,
) -> (T, T) {
    let ta = raw_a.tanh();
    let cap = T::one() - T::epsilon();
    let tp = raw_phi.tanh();
    let dp = if tp.abs() > cap {
        T::zero()
    } else {
        d_delta_phi * T::PI() * (T::one() - tp * tp)
    };
    (d_delta_a * alpha * (T::one() - ta * ta), dp)
}

/// Gradient of the raw outputs given the packed gradient of the gain.
#[inline]
pub fn gain_backward<T: Real>(raw_a: T, raw_phi: T, alpha: T, d_gain: Complex<T>) -> (T, T) {
    let (delta_a, delta_phi) = scale_corrections(raw_a, raw_phi, alpha);
    let g = build_gain(delta_a, delta_phi);
    let d_delta_a = d_gain.re * g.re + d_gain.im * g.im;
    let d_delta_phi = g.re * d_gain.im - g.im * d_gain.re;
    scale_corrections_backward(raw_a, raw_phi, alpha, d_delta_a, d_delta_phi)
}

/// Packed gradients `(dY, dG)` of `Z = Y·G` given `dZ`.
#[inline]
pub fn gain_product_backward<T: Real>(
    y: Complex<T>,
    g: Complex<T>,
    dz: Complex<T>,
) -> (Complex<T>, Complex<T>) {
    (dz * g.conj(), dz * y.conj())
}

/// Complex gain per (ear, frame, bin), same layout as a stereo spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct GainMask<T = f32> {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Real> GainMask<T> {
    pub fn unity(frames: usize, bins: usize) -> Self {
        GainMask {
            frames,
            bins,
            data: vec![Complex::new(T::one(), T::zero()); 2 * frames * bins],
        }
    }

    pub fn index(&self, ear: usize, frame: usize, bin: usize) -> usize {
        (ear * self.frames + frame) * self.bins + bin
    }

    /// True when every gain lies in the magnitude and phase ranges that
    /// `alpha` guarantees.
    pub fn within_bounds(&self, alpha: f64) -> bool {
        let (lo, hi) = ((-alpha).exp(), alpha.exp());
        let tol = 1e-6;
        self.data.iter().all(|g| {
            let m = g.norm().to_f64();
            let a = g.arg();
            m >= lo * (1.0 - tol) && m <= hi * (1.0 + tol) && a > -T::PI() && a < T::PI()
        })
    }
}

/// Elementwise complex product of a stereo spectrogram and a gain mask.
pub fn apply_gain<T: Real>(
    spec: &ComplexSpectrogram<T>,
    mask: &GainMask<T>,
) -> Result<ComplexSpectrogram<T>> {
    if spec.channels != 2 || spec.frames != mask.frames || spec.bins != mask.bins {
        return Err(config_err!(
            "gain mask {}x{} does not match spectrogram {}x{}x{}",
            mask.frames,
            mask.bins,
            spec.channels,
            spec.frames,
            spec.bins
        ));
    }
    let mut out = spec.clone();
    for (z, g) in out.data.iter_mut().zip(&mask.data) {
        *z = *z * g;
    }
    Ok(out)
}
