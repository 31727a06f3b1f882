//! Parameter counts, analytic multiply-accumulate accounting and measured
//! real-time factor.
//!
//! MAC basis: network MACs only, per second of 48 kHz stereo output.
//! The corrector is queried `2·bins` times per STFT frame at
//! `fs / hop` frames per second, each query costing `Σ fan_in·fan_out` over
//! its linear layers. The warp network runs at the pose rate and costs
//! `Σ c_in·c_out·k` per pose sample. STFT/iSTFT work is excluded from the
//! headline figure and reported separately under an `N·log2(N)` per
//! transform convention.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Ablation, ModelConfig};
use crate::dsp::AudioBuffer;
use crate::error::{config_err, Result};
use crate::model::Linn;
use crate::pose::{Pose, PoseTrack, Quaternion};

pub const MAC_BASIS: &str = "network MACs per second of stereo audio: corrector queries \
(2 ears x bins per frame, fs/hop frames per second) plus warp network at pose rate; \
STFT/iSTFT excluded (reported separately as N*log2(N) per transform)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub param_count: usize,
    pub ibc_params: usize,
    pub warp_params: usize,
    pub frames_per_second: f64,
    pub queries_per_frame: usize,
    pub ibc_macs_per_query: usize,
    pub warp_macs_per_pose_sample: usize,
    /// Headline figure: network MACs per second of audio.
    pub macs_per_second_audio: f64,
    pub stft_macs_per_second_audio: f64,
    pub mac_basis: String,
    /// Audio length the timing was measured on.
    pub segment_seconds: f64,
    pub repetitions: usize,
    pub rtf_single_thread: Option<f64>,
    pub rtf_parallel: Option<f64>,
    pub parallel_threads: usize,
}

impl EfficiencyReport {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("not_measured".to_string(), |x| format!("{x:.4}"));
        format!(
            "param_count={}\nibc_params={}\nwarp_params={}\nframes_per_second={}\nqueries_per_frame={}\n\
             ibc_macs_per_query={}\nwarp_macs_per_pose_sample={}\nmacs_per_second_audio={}\n\
             gmacs_per_second_audio={:.3}\nstft_macs_per_second_audio={}\nmac_basis={}\n\
             segment_seconds={}\nrepetitions={}\nrtf_single_thread={}\nrtf_parallel={}\nparallel_threads={}\n",
            self.param_count,
            self.ibc_params,
            self.warp_params,
            self.frames_per_second,
            self.queries_per_frame,
            self.ibc_macs_per_query,
            self.warp_macs_per_pose_sample,
            self.macs_per_second_audio,
            self.macs_per_second_audio / 1e9,
            self.stft_macs_per_second_audio,
            self.mac_basis,
            self.segment_seconds,
            self.repetitions,
            opt(self.rtf_single_thread),
            opt(self.rtf_parallel),
            self.parallel_threads,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Total network MACs for `seconds` of audio.
    pub fn total_macs(&self, seconds: f64) -> f64 {
        self.macs_per_second_audio * seconds
    }
}

/// Analytic counts; timing fields are left empty.
pub fn count_macs(config: &ModelConfig, ablation: &Ablation) -> Result<EfficiencyReport> {
    let model = Linn::<f32>::zeros(*config, *ablation)?;
    let fs = config.warp.fs as f64;
    let frames_per_second = fs / config.stft.hop as f64;
    let queries_per_frame = 2 * config.stft.bins();
    let ibc_macs_per_query = model.ibc.macs_per_query();
    let warp_macs_per_pose_sample: usize = model
        .warp_net
        .layers
        .iter()
        .map(|l| l.kernels.value.len())
        .sum();
    let ibc_on = !ablation.no_ibc;
    let warp_on = !ablation.no_tdw_neural;
    let ibc_macs = if ibc_on {
        frames_per_second * (queries_per_frame * ibc_macs_per_query) as f64
    } else {
        0.0
    };
    let warp_macs = if warp_on {
        config.pose_rate * warp_macs_per_pose_sample as f64
    } else {
        0.0
    };
    let n = config.stft.window_len as f64;
    // Two ears, analysis and synthesis.
    let stft_macs = frames_per_second * 4.0 * n * n.log2();
    Ok(EfficiencyReport {
        param_count: model.param_count(),
        ibc_params: model.ibc.param_count(),
        warp_params: model.warp_net.param_count(),
        frames_per_second,
        queries_per_frame,
        ibc_macs_per_query,
        warp_macs_per_pose_sample,
        macs_per_second_audio: ibc_macs + warp_macs,
        stft_macs_per_second_audio: stft_macs,
        mac_basis: MAC_BASIS.to_string(),
        segment_seconds: 0.0,
        repetitions: 0,
        rtf_single_thread: None,
        rtf_parallel: None,
        parallel_threads: 0,
    })
}

/// Deterministic benchmark input: noise and a source circling the head.
pub fn bench_input(seconds: f64, fs: u32, seed: u64) -> Result<(AudioBuffer<f32>, PoseTrack)> {
    if !(seconds > 0.0) {
        return Err(config_err!(
            "benchmark duration must be positive, got {seconds}"
        ));
    }
    let len = (seconds * fs as f64).round() as usize;
    if len == 0 {
        return Err(config_err!(
            "benchmark duration {seconds} s is shorter than one sample"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mono = (0..len).map(|_| rng.random_range(-0.3f32..0.3)).collect();
    let knots = (seconds * 120.0).ceil() as usize + 2;
    let poses = (0..knots)
        .map(|k| {
            let az = k as f64 / 120.0;
            Pose::new(
                [1.5 * az.cos(), 1.5 * az.sin(), 0.0],
                Quaternion::from_yaw(az + std::f64::consts::PI),
            )
        })
        .collect::<Result<_>>()?;
    Ok((AudioBuffer::mono(fs, mono)?, PoseTrack::new(120.0, poses)?))
}

/// Median real-time factor of `repetitions` renders of `seconds` of audio
/// on a pool of `threads` workers, after one warm-up render.
pub fn measure_rtf(
    model: &Linn<f32>,
    seconds: f64,
    repetitions: usize,
    threads: usize,
) -> Result<f64> {
    if repetitions == 0 || threads == 0 {
        return Err(config_err!("need at least one repetition and one thread"));
    }
    let (mono, track) = bench_input(seconds, model.config.warp.fs, 0)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| config_err!("cannot build thread pool: {e}"))?;
    pool.install(|| {
        model.render(&mono, &track)?;
        let mut times = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t0 = Instant::now();
            let y = model.render(&mono, &track)?;
            times.push(t0.elapsed().as_secs_f64() / seconds);
            std::hint::black_box(y);
        }
        times.sort_by(f64::total_cmp);
        Ok(times[times.len() / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ibc::IbcConfig;

    #[test]
    fn default_accounting() {
        let r = count_macs(&ModelConfig::default(), &Ablation::default()).unwrap();
        assert_eq!(r.param_count, 146_132);
        assert_eq!(r.ibc_macs_per_query, 144_128);
        assert_eq!(r.queries_per_frame, 514);
        assert_eq!(r.frames_per_second, 187.5);
        assert_eq!(r.warp_macs_per_pose_sample, 1_200);
        assert_eq!(r.macs_per_second_audio, 13_890_480_000.0);
        assert_eq!(r.total_macs(2.0), 2.0 * r.total_macs(1.0));
        let text = r.to_text();
        assert!(text.contains("param_count=146132\n"));
        assert!(text.contains("mac_basis="));
    }

    #[test]
    fn ablated_counts() {
        let ab = Ablation {
            no_tdw_neural: true,
            ..Ablation::default()
        };
        assert_eq!(
            count_macs(&ModelConfig::default(), &ab)
                .unwrap()
                .param_count,
            144_898
        );
    }

    #[test]
    fn rtf_rejects_empty_audio() {
        let m = Linn::<f32>::zeros(ModelConfig::default(), Ablation::default()).unwrap();
        assert!(measure_rtf(&m, 0.0, 1, 1).is_err());
    }

    #[test]
    fn rtf_is_positive() {
        let cfg = ModelConfig {
            ibc: IbcConfig {
                hidden: 16,
                hidden_layers: 1,
                alpha: 0.8,
            },
            ..ModelConfig::default()
        };
        let m = Linn::<f32>::new(cfg, Ablation::default(), 0).unwrap();
        let rtf = measure_rtf(&m, 0.2, 3, 1).unwrap();
        assert!(rtf > 0.0 && rtf.is_finite());
    }
}
