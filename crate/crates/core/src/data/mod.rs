//! On-disk formats: audio, pose tracks, datasets and checkpoints.

pub mod checkpoint;
pub mod dataset;
pub mod posefile;
pub mod synth;
pub mod wav;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{load_dataset, make_chunks, Dataset, DatasetItem, Split, TrainingChunk};
pub use posefile::{parse_pose_file, parse_pose_text, write_pose_file};
pub use synth::{oracle_binaural, synth_dataset, OracleParams, SynthSpec};
pub use wav::{load_wav, save_wav};
