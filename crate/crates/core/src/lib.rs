//! Lightweight binaural audio synthesis from a mono signal and a source
//! pose track.
//!
//! The renderer has two stages. A time-domain warp resamples the mono input
//! per ear along the source-to-ear propagation delay, refined by a small
//! temporal convolution network. A coordinate MLP then predicts a bounded
//! complex gain for every (ear, frame, frequency bin), applied in the STFT
//! domain.
//!
//! Everything needed to train, render, evaluate and benchmark the model is
//! in this crate, including hand-written backward passes for every stage.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod dsp;
pub mod efficiency;
pub mod error;
pub mod gradcheck;
pub mod ibc;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pose;
pub mod probe;
pub mod real;
pub mod tensor;
pub mod train;
pub mod warp;

pub use config::{Ablation, LinnConfig, ModelConfig};
pub use dsp::{AudioBuffer, ComplexSpectrogram, StftConfig};
pub use error::{Error, Result};
pub use model::Linn;
pub use pose::{Pose, PoseTrack, Quaternion};
pub use real::Real;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/poses.md")]
    mod poses {}
    #[doc = include_str!("../../../book/src/stft.md")]
    mod stft {}
    #[doc = include_str!("../../../book/src/warp.md")]
    mod warp {}
    #[doc = include_str!("../../../book/src/gains.md")]
    mod gains {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/efficiency.md")]
    mod efficiency {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
