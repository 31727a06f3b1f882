//! Dataset layout and training chunks.
//!
//! A dataset root holds one directory per item with `mono.wav`,
//! `binaural.wav` and `pose.txt`. An optional `index.txt` assigns item
//! directories to splits:
//!
//! ```text
//! [train]
//! item_000
//! item_001
//! [valid]
//! item_002
//! [test]
//! item_003
//! ```
//!
//! Without an index, items are sorted by name and split 8/1/1 in order.

use std::path::{Path, PathBuf};

use crate::config::DataConfig;
use crate::data::posefile::parse_pose_file;
use crate::data::wav::load_wav;
use crate::dsp::AudioBuffer;
use crate::error::{config_err, Error, Result};
use crate::model::check_pose_coverage;
use crate::pose::PoseTrack;

pub const MONO_FILE: &str = "mono.wav";
pub const BINAURAL_FILE: &str = "binaural.wav";
pub const POSE_FILE: &str = "pose.txt";
pub const INDEX_FILE: &str = "index.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetItem {
    pub id: String,
    pub mono: AudioBuffer<f32>,
    pub binaural: AudioBuffer<f32>,
    pub track: PoseTrack,
}

impl DatasetItem {
    pub fn new(
        id: impl Into<String>,
        mono: AudioBuffer<f32>,
        binaural: AudioBuffer<f32>,
        track: PoseTrack,
    ) -> Result<Self> {
        let id = id.into();
        if mono.num_channels() != 1 || binaural.num_channels() != 2 {
            return Err(config_err!("item {id}: need mono input and stereo target"));
        }
        if mono.len() != binaural.len() {
            return Err(config_err!(
                "item {id}: mono has {} samples, binaural {}",
                mono.len(),
                binaural.len()
            ));
        }
        check_pose_coverage(&track, mono.len(), mono.sample_rate() as f64)
            .map_err(|e| config_err!("item {id}: {e}"))?;
        Ok(DatasetItem {
            id,
            mono,
            binaural,
            track,
        })
    }

    pub fn load(dir: &Path, cfg: &DataConfig, pose_rate: f64) -> Result<Self> {
        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mono = load_wav(dir.join(MONO_FILE), cfg.sample_rate)?;
        let binaural = load_wav(dir.join(BINAURAL_FILE), cfg.sample_rate)?;
        let track = parse_pose_file(dir.join(POSE_FILE), cfg.quat_order, pose_rate)?;
        DatasetItem::new(id, mono, binaural, track)
    }

    pub fn len(&self) -> usize {
        self.mono.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mono.is_empty()
    }
}

/// Item ids per split.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    /// Deterministic 8/1/1 split of `ids` in the given order.
    pub fn by_order(ids: &[String]) -> Self {
        let n = ids.len();
        let tenth = if n >= 3 { (n / 10).max(1) } else { 0 };
        let n_train = n - 2 * tenth;
        Split {
            train: ids[..n_train].to_vec(),
            valid: ids[n_train..n_train + tenth].to_vec(),
            test: ids[n_train + tenth..].to_vec(),
        }
    }

    pub fn parse_index(text: &str, path: &Path) -> Result<Self> {
        let mut split = Split::default();
        let mut section: Option<&mut Vec<String>> = None;
        for (i, line) in text.lines().enumerate() {
            let body = line.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            if let Some(name) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
                section = Some(match name.trim() {
                    "train" => &mut split.train,
                    "valid" | "validation" | "val" => &mut split.valid,
                    "test" => &mut split.test,
                    other => {
                        return Err(Error::Parse {
                            path: path.to_path_buf(),
                            line: i + 1,
                            message: format!("unknown split `{other}`"),
                        })
                    }
                });
                continue;
            }
            match section.as_deref_mut() {
                Some(list) => list.push(body.to_string()),
                None => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: "item listed before any [split] header".into(),
                    })
                }
            }
        }
        Ok(split)
    }
}

/// Loaded items grouped by split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub split: Split,
    pub train: Vec<DatasetItem>,
    pub valid: Vec<DatasetItem>,
    pub test: Vec<DatasetItem>,
    /// True when the split came from an index file.
    pub indexed: bool,
}

/// Item directories under `root`, sorted by name.
pub fn list_items(root: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().join(MONO_FILE).is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn load_dataset(root: impl AsRef<Path>, cfg: &DataConfig, pose_rate: f64) -> Result<Dataset> {
    let root = root.as_ref();
    let index = root.join(INDEX_FILE);
    let (split, indexed) = if index.is_file() {
        let text = std::fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
        (Split::parse_index(&text, &index)?, true)
    } else {
        let ids = list_items(root)?;
        log::info!(
            "no {INDEX_FILE} in {}: using the 8/1/1 split of {} items by name",
            root.display(),
            ids.len()
        );
        (Split::by_order(&ids), false)
    };
    if split.train.is_empty() {
        return Err(config_err!(
            "dataset {} has no training items",
            root.display()
        ));
    }
    let load = |ids: &[String]| -> Result<Vec<DatasetItem>> {
        ids.iter()
            .map(|id| DatasetItem::load(&root.join(id), cfg, pose_rate))
            .collect()
    };
    Ok(Dataset {
        root: root.to_path_buf(),
        train: load(&split.train)?,
        valid: load(&split.valid)?,
        test: load(&split.test)?,
        split,
        indexed,
    })
}

/// A fixed-length training segment with its pose sub-track, whose time 0 is
/// the segment's first sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingChunk {
    pub item: String,
    pub start: usize,
    pub mono: Vec<f32>,
    pub binaural: Vec<Vec<f32>>,
    pub track: PoseTrack,
}

/// Chunks starting every `hop` samples (`0` means `chunk_len`); the
/// remainder that does not fill a chunk is dropped.
pub fn make_chunks(item: &DatasetItem, chunk_len: usize, hop: usize) -> Result<Vec<TrainingChunk>> {
    if chunk_len == 0 {
        return Err(config_err!("chunk length must be positive"));
    }
    let hop = if hop == 0 { chunk_len } else { hop };
    let fs = item.mono.sample_rate() as f64;
    let duration = (chunk_len - 1) as f64 / fs;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start + chunk_len <= item.len() {
        let end = start + chunk_len;
        chunks.push(TrainingChunk {
            item: item.id.clone(),
            start,
            mono: item.mono.channel(0)[start..end].to_vec(),
            binaural: item
                .binaural
                .channels()
                .iter()
                .map(|c| c[start..end].to_vec())
                .collect(),
            track: item.track.sub_track(start as f64 / fs, duration)?,
        });
        start += hop;
    }
    Ok(chunks)
}
