//! The full two-stage renderer: time-domain warp, then a per-bin complex
//! gain predicted by the corrector, applied in the STFT domain.
//!
//! ```text
//! y = iSTFT( STFT(TDW(x | pose)) ⊙ G(pose, ear, frame, bin) )
//! ```
//!
//! Training runs on fixed-length chunks and computes exact gradients with
//! hand-written adjoints of every stage. Inference renders whole files,
//! optionally block by block with one window of overlap on each side, which
//! reproduces whole-file rendering.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use realfft::num_complex::Complex;

use crate::config::{Ablation, ModelConfig};
use crate::dsp::{fractional_resample, fractional_resample_backward, AudioBuffer, Stft};
use crate::error::{config_err, Error, Result};
use crate::ibc::{
    gain_backward, gain_from_raw, gain_product_backward, scale_corrections, CoordinateSpace, IbcMlp,
};
use crate::metrics::{loss_and_grad, LossWeights};
use crate::pose::{track_sample, Pose, PoseTrack};
use crate::real::Real;
use crate::tensor::{linear_forward, Param, Tensor};
use crate::warp::{
    geometric_warp, pose_features, upsample_corrections, upsample_corrections_adjoint, WarpField,
    WarpNet, WarpNetCache,
};

/// Frames per corrector batch.
const FRAME_BLOCK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Linn<T> {
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub warp_net: WarpNet<T>,
    pub ibc: IbcMlp<T>,
}

/// One chunk's forward state, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ChunkForward<T> {
    pub output: [Vec<T>; 2],
    field: WarpField,
    warp_cache: Option<WarpNetCache<T>>,
    knots: usize,
    spectra: [Vec<Complex<T>>; 2],
    raw: Vec<T>,
    frame_poses: Vec<(Pose, usize)>,
}

impl<T: Real> Linn<T> {
    /// Randomly initialized model; all randomness comes from `seed`.
    pub fn new(config: ModelConfig, ablation: Ablation, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let warp_net = WarpNet::new(&config.warp, &mut rng);
        let ibc = IbcMlp::new(config.encoding.coord_width(), &config.ibc, &mut rng);
        Ok(Linn {
            config,
            ablation,
            warp_net,
            ibc,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(config: ModelConfig, ablation: Ablation) -> Result<Self> {
        config.validate()?;
        Ok(Linn {
            config,
            ablation,
            warp_net: WarpNet::zeros(&config.warp),
            ibc: IbcMlp::zeros(config.encoding.coord_width(), &config.ibc),
        })
    }

    fn neural_warp(&self) -> bool {
        !self.ablation.no_tdw_neural
    }

    fn use_ibc(&self) -> bool {
        !self.ablation.no_ibc
    }

    /// Parameters stored in a checkpoint, whatever the ablation.
    pub fn total_param_count(&self) -> usize {
        self.warp_net.param_count() + self.ibc.param_count()
    }

    /// Parameters that take part in rendering under the current ablation.
    pub fn param_count(&self) -> usize {
        let warp = if self.neural_warp() {
            self.warp_net.param_count()
        } else {
            0
        };
        let ibc = if self.use_ibc() {
            self.ibc.param_count()
        } else {
            0
        };
        warp + ibc
    }

    /// Every parameter: warp network first, then the corrector.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.warp_net.params();
        p.extend(self.ibc.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.warp_net.params_mut();
        p.extend(self.ibc.params_mut());
        p
    }

    /// Parameters updated by training under the current ablation.
    pub fn trainable_params_mut(&mut self) -> Vec<&mut Param<T>> {
        let (warp, ibc) = (self.neural_warp(), self.use_ibc());
        let mut p = Vec::new();
        if warp {
            p.extend(self.warp_net.params_mut());
        }
        if ibc {
            p.extend(self.ibc.params_mut());
        }
        p
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn cast<U: Real>(&self) -> Linn<U> {
        Linn {
            config: self.config,
            ablation: self.ablation,
            warp_net: self.warp_net.cast(),
            ibc: self.ibc.cast(),
        }
    }

    pub fn coordinate_space(&self) -> Result<CoordinateSpace> {
        Ok(CoordinateSpace::new(
            self.config.encoding,
            self.config.stft.bins(),
            self.config.frames_per_chunk(),
        )?
        .with_ablation(!self.ablation.no_freqpe, !self.ablation.no_timepe))
    }

    fn fs(&self) -> f64 {
        self.config.warp.fs as f64
    }

    /// Geometric warp plus the neural correction when enabled.
    fn warp_field(
        &self,
        track: &PoseTrack,
        len: usize,
    ) -> Result<(WarpField, Option<WarpNetCache<T>>)> {
        let mut field = geometric_warp(track, len, &self.config.warp)?;
        if !self.neural_warp() {
            return Ok((field, None));
        }
        let features = pose_features::<T>(track);
        let (corr, cache) = self.warp_net.forward(&features, self.config.warp.w_max)?;
        field.add(&upsample_corrections(&corr, track.rate, self.fs(), 0, len));
        Ok((field, Some(cache)))
    }

    /// Stage one only: the warped stereo signal.
    pub fn tdw_only(&self, mono: &AudioBuffer<T>, track: &PoseTrack) -> Result<AudioBuffer<T>> {
        self.check_input(mono, track)?;
        let (field, _) = self.warp_field(track, mono.len())?;
        crate::warp::apply_warp(mono, &field)
    }

    fn check_input(&self, mono: &AudioBuffer<T>, track: &PoseTrack) -> Result<()> {
        if mono.num_channels() != 1 {
            return Err(config_err!(
                "input must be mono, got {} channels",
                mono.num_channels()
            ));
        }
        if mono.is_empty() {
            return Err(config_err!("input audio is empty"));
        }
        if mono.sample_rate() != self.config.warp.fs {
            return Err(Error::UnsupportedSampleRate {
                found: mono.sample_rate(),
                expected: self.config.warp.fs,
            });
        }
        check_pose_coverage(track, mono.len(), self.fs())
    }

    /// Pose and chunk-local frame index of each frame.
    fn frame_poses(
        &self,
        space: &CoordinateSpace,
        track: &PoseTrack,
        frames: std::ops::Range<usize>,
    ) -> Result<Vec<(Pose, usize)>> {
        let fs = self.fs();
        frames
            .map(|m| {
                let t = self.config.stft.frame_center(m) / fs;
                Ok((track_sample(track, t)?, space.local_frame(m)))
            })
            .collect()
    }

    fn block_coords(&self, space: &CoordinateSpace, poses: &[(Pose, usize)]) -> Tensor<T> {
        let width = space.width();
        let rows = space.rows_per_frame();
        let mut data = vec![T::zero(); poses.len() * rows * width];
        for ((pose, local), out) in poses.iter().zip(data.chunks_exact_mut(rows * width)) {
            space.fill_frame(pose, *local, out);
        }
        Tensor::from_vec(&[poses.len() * rows, width], data).expect("shape matches")
    }

    /// Raw corrector outputs for each frame, `2·bins` rows of 2 per frame.
    ///
    /// The first layer is split into a per-bin part (frequency encoding and
    /// bias) computed once and a per-(frame, ear) part.
    fn raw_outputs(&self, space: &CoordinateSpace, poses: &[(Pose, usize)]) -> Result<Vec<T>> {
        let width = space.width();
        let bins = self.config.stft.bins();
        let first = &self.ibc.layers[0];
        let hidden = first.fan_out();
        let bin_coords = Tensor::from_vec(&[bins, width], space.bin_part::<T>())?;
        let bin_h = first.forward(&bin_coords)?.into_data();
        let no_bias = Tensor::zeros(&[hidden]);
        let blocks: Vec<Vec<T>> = poses
            .par_chunks(FRAME_BLOCK)
            .map(|block| {
                let mut h = vec![T::zero(); block.len() * 2 * bins * hidden];
                let mut frame_h = Vec::with_capacity(block.len());
                for (pose, local) in block {
                    let part = Tensor::from_vec(&[2, width], space.frame_part::<T>(pose, *local))?;
                    frame_h.push(linear_forward(&part, &first.weight.value, &no_bias)?.into_data());
                }
                for (rows, fh) in h.chunks_exact_mut(2 * bins * hidden).zip(&frame_h) {
                    for (ear_rows, eh) in rows
                        .chunks_exact_mut(bins * hidden)
                        .zip(fh.chunks_exact(hidden))
                    {
                        for (row, bh) in ear_rows
                            .chunks_exact_mut(hidden)
                            .zip(bin_h.chunks_exact(hidden))
                        {
                            for ((d, &b), &e) in row.iter_mut().zip(bh).zip(eh) {
                                *d = b + e;
                            }
                        }
                    }
                }
                let h = Tensor::from_vec(&[block.len() * 2 * bins, hidden], h)?;
                self.ibc.forward_hidden(h).map(Tensor::into_data)
            })
            .collect::<Result<_>>()?;
        Ok(blocks.concat())
    }

    /// `(δ_A, δ_φ)` for every `(ear, bin)` row of one frame.
    pub fn corrections_at(&self, pose: &Pose, local_frame: usize) -> Result<Vec<(f64, f64)>> {
        let space = self.coordinate_space()?;
        let raw = self.raw_outputs(&space, &[(*pose, local_frame)])?;
        let alpha = T::lit(self.ibc.alpha);
        Ok(raw
            .chunks_exact(2)
            .map(|r| {
                let (a, p) = scale_corrections(r[0], r[1], alpha);
                (a.to_f64(), p.to_f64())
            })
            .collect())
    }

    /// Applies gains from `raw` (rows of frame `j - first`) to spectrum frames
    /// `first..first+n` of `spec`, ear `ear`.
    fn apply_raw_gains(&self, spec: &mut [Complex<T>], ear: usize, first: usize, raw: &[T]) {
        let bins = self.config.stft.bins();
        let rows = 2 * bins;
        let alpha = T::lit(self.ibc.alpha);
        for (j, frame_raw) in raw.chunks_exact(2 * rows).enumerate() {
            let frame = &mut spec[(first + j) * bins..(first + j + 1) * bins];
            let ear_raw = &frame_raw[2 * ear * bins..2 * (ear + 1) * bins];
            for (z, r) in frame.iter_mut().zip(ear_raw.chunks_exact(2)) {
                *z = *z * gain_from_raw(r[0], r[1], alpha);
            }
        }
    }

    /// Whole-file rendering.
    pub fn render(&self, mono: &AudioBuffer<T>, track: &PoseTrack) -> Result<AudioBuffer<T>> {
        let hop = self.config.stft.hop;
        let block = mono.len().div_ceil(hop).max(1) * hop;
        self.render_streaming(mono, track, block)
    }

    /// Block-wise rendering: each block of `block_len` samples (a multiple
    /// of the hop) is analyzed with one window of context on each side and
    /// only frames touching the block are corrected.
    pub fn render_streaming(
        &self,
        mono: &AudioBuffer<T>,
        track: &PoseTrack,
        block_len: usize,
    ) -> Result<AudioBuffer<T>> {
        self.check_input(mono, track)?;
        let cfg = self.config.stft;
        if block_len == 0 || !block_len.is_multiple_of(cfg.hop) {
            return Err(config_err!(
                "block length {block_len} must be a positive multiple of the hop {}",
                cfg.hop
            ));
        }
        let len = mono.len();
        let n = cfg.window_len;
        let engine = Stft::<T>::new(cfg)?;
        let space = self.coordinate_space()?;
        let (field, _) = self.warp_field(track, len)?;
        let x: Vec<f64> = mono.channel(0).iter().map(|&v| v.to_f64()).collect();
        let warped: Vec<Vec<T>> = field
            .indices
            .iter()
            .map(|idx| {
                fractional_resample(&x, idx)
                    .into_iter()
                    .map(T::lit)
                    .collect()
            })
            .collect();

        let mut out = [vec![T::zero(); len], vec![T::zero(); len]];
        let mut a = 0;
        while a < len {
            let b = (a + block_len).min(len);
            let s = a.saturating_sub(n);
            let e = (b + n).min(len);
            let seg_frames = cfg.frames(e - s);
            let first_global = s / cfg.hop;
            let offset = cfg.offset();
            let touching: Vec<usize> = (0..seg_frames)
                .filter(|&j| {
                    let start = ((first_global + j) * cfg.hop) as isize - offset;
                    start < b as isize && start + n as isize > a as isize
                })
                .collect();
            let raw = if self.use_ibc() && !touching.is_empty() {
                let lo = touching[0];
                let hi = touching[touching.len() - 1] + 1;
                let poses =
                    self.frame_poses(&space, track, first_global + lo..first_global + hi)?;
                Some((lo, self.raw_outputs(&space, &poses)?))
            } else {
                None
            };
            for ear in 0..2 {
                let mut spec = engine.analyze(&warped[ear][s..e]);
                if let Some((lo, raw)) = &raw {
                    self.apply_raw_gains(&mut spec, ear, *lo, raw);
                }
                let y = engine.synthesize(&spec, e - s)?;
                out[ear][a..b].copy_from_slice(&y[a - s..b - s]);
            }
            a = b;
        }
        let [l, r] = out;
        AudioBuffer::stereo(mono.sample_rate(), l, r)
    }

    /// Forward pass over one training chunk whose pose track starts at the
    /// chunk's first sample.
    pub fn forward_chunk(&self, mono: &[T], track: &PoseTrack) -> Result<ChunkForward<T>> {
        if mono.is_empty() {
            return Err(config_err!("empty chunk"));
        }
        let len = mono.len();
        let cfg = self.config.stft;
        let engine = Stft::<T>::new(cfg)?;
        let space = self.coordinate_space()?;
        let (field, warp_cache) = self.warp_field(track, len)?;
        let x: Vec<f64> = mono.iter().map(|&v| v.to_f64()).collect();
        let frames = cfg.frames(len);
        let frame_poses = self.frame_poses(&space, track, 0..frames)?;
        let raw = if self.use_ibc() {
            self.raw_outputs(&space, &frame_poses)?
        } else {
            Vec::new()
        };
        let mut spectra: [Vec<Complex<T>>; 2] = Default::default();
        let mut output: [Vec<T>; 2] = Default::default();
        for ear in 0..2 {
            let warped: Vec<T> = fractional_resample(&x, &field.indices[ear])
                .into_iter()
                .map(T::lit)
                .collect();
            let spec = engine.analyze(&warped);
            let mut z = spec.clone();
            if self.use_ibc() {
                self.apply_raw_gains(&mut z, ear, 0, &raw);
            }
            output[ear] = engine.synthesize(&z, len)?;
            spectra[ear] = spec;
        }
        Ok(ChunkForward {
            output,
            field,
            warp_cache,
            knots: track.len(),
            spectra,
            raw,
            frame_poses,
        })
    }

    /// Loss of one chunk against its binaural target.
    pub fn chunk_loss(
        &self,
        mono: &[T],
        track: &PoseTrack,
        target: &[Vec<T>],
        weights: &LossWeights,
    ) -> Result<f64> {
        let fwd = self.forward_chunk(mono, track)?;
        let engine = Stft::<T>::new(self.config.stft)?;
        Ok(loss_and_grad(&fwd.output, target, weights, &engine, false)?.loss)
    }

    /// Loss of one chunk; parameter gradients are accumulated into `grad`.
    pub fn chunk_loss_and_backward(
        &mut self,
        mono: &[T],
        track: &PoseTrack,
        target: &[Vec<T>],
        weights: &LossWeights,
    ) -> Result<f64> {
        let fwd = self.forward_chunk(mono, track)?;
        let cfg = self.config.stft;
        let engine = Stft::<T>::new(cfg)?;
        let lg = loss_and_grad(&fwd.output, target, weights, &engine, true)?;
        if !lg.loss.is_finite() {
            return Err(Error::NonFinite(format!("chunk loss is {}", lg.loss)));
        }
        let len = mono.len();
        let bins = cfg.bins();
        let frames = cfg.frames(len);
        let alpha = T::lit(self.ibc.alpha);

        // Through the synthesis to the corrected spectrum.
        let dz: Vec<Vec<Complex<T>>> = lg
            .grad
            .iter()
            .map(|g| engine.synthesize_adjoint(g, frames))
            .collect();

        if self.use_ibc() {
            let space = self.coordinate_space()?;
            let rows = space.rows_per_frame();
            let mut d_raw = vec![T::zero(); fwd.raw.len()];
            for ear in 0..2 {
                for m in 0..frames {
                    for k in 0..bins {
                        let idx = m * bins + k;
                        let r = 2 * (m * rows + ear * bins + k);
                        let g = gain_from_raw(fwd.raw[r], fwd.raw[r + 1], alpha);
                        let (_, dg) = gain_product_backward(fwd.spectra[ear][idx], g, dz[ear][idx]);
                        let (da, dp) = gain_backward(fwd.raw[r], fwd.raw[r + 1], alpha, dg);
                        d_raw[r] = da;
                        d_raw[r + 1] = dp;
                    }
                }
            }
            for (b, block) in fwd.frame_poses.chunks(FRAME_BLOCK).enumerate() {
                let coords = self.block_coords(&space, block);
                let (_, cache) = self.ibc.forward_cached(&coords)?;
                let start = b * FRAME_BLOCK * rows * 2;
                let n = block.len() * rows;
                let d = Tensor::from_vec(&[n, 2], d_raw[start..start + 2 * n].to_vec())?;
                self.ibc.backward(&cache, &d);
            }
        }

        if let Some(cache) = &fwd.warp_cache {
            let x: Vec<f64> = mono.iter().map(|&v| v.to_f64()).collect();
            let mut d_idx: [Vec<f64>; 2] = Default::default();
            for ear in 0..2 {
                let mut dy_spec = dz[ear].clone();
                if self.use_ibc() {
                    let rows = 2 * bins;
                    for m in 0..frames {
                        for k in 0..bins {
                            let r = 2 * (m * rows + ear * bins + k);
                            let g = gain_from_raw(fwd.raw[r], fwd.raw[r + 1], alpha);
                            let idx = m * bins + k;
                            dy_spec[idx] =
                                gain_product_backward(fwd.spectra[ear][idx], g, dz[ear][idx]).0;
                        }
                    }
                }
                let dy: Vec<f64> = engine
                    .analyze_adjoint(&dy_spec, len)
                    .into_iter()
                    .map(|v| v.to_f64())
                    .collect();
                d_idx[ear] = fractional_resample_backward(&x, &fwd.field.indices[ear], &dy);
            }
            let d_corr =
                upsample_corrections_adjoint::<T>(&d_idx, fwd.knots, track.rate, self.fs());
            self.warp_net
                .backward(cache, &d_corr, self.config.warp.w_max);
        }
        Ok(lg.loss)
    }
}

/// Errors when `track` does not cover `n_samples` at `fs` within one pose
/// interval.
pub fn check_pose_coverage(track: &PoseTrack, n_samples: usize, fs: f64) -> Result<()> {
    let needed = n_samples.saturating_sub(1) as f64 / fs;
    let have = track.duration();
    if have + 1.0 / track.rate + 1e-9 < needed {
        let knots = (needed * track.rate).ceil() as usize + 1;
        return Err(config_err!(
            "pose track too short: covers {have:.4} s but the audio needs {needed:.4} s \
             ({knots} poses at {} Hz)",
            track.rate
        ));
    }
    Ok(())
}

/// Single-chunk objective in 64-bit precision for gradient checking.
#[derive(Clone, Debug)]
pub struct ChunkObjective {
    pub model: Linn<f64>,
    pub mono: Vec<f64>,
    pub track: PoseTrack,
    pub target: Vec<Vec<f64>>,
    pub weights: LossWeights,
}

impl crate::gradcheck::Differentiable for ChunkObjective {
    fn loss(&self) -> f64 {
        self.model
            .chunk_loss(&self.mono, &self.track, &self.target, &self.weights)
            .expect("objective evaluates")
    }

    fn loss_and_grad(&mut self) -> f64 {
        self.model
            .chunk_loss_and_backward(&self.mono, &self.track, &self.target, &self.weights)
            .expect("objective evaluates")
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.model.trainable_params_mut()
    }
}
