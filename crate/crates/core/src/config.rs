//! Run configuration and its layered resolution.
//!
//! Layers apply in order `defaults ← checkpoint ← config file ← flags`, the
//! rightmost winning, except that the `model` section of a checkpoint is
//! authoritative: it fixes tensor shapes and coordinate normalization, so a
//! conflicting override is dropped with a warning.

use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::error::{config_err, Result};
use crate::ibc::{EncodingConfig, IbcConfig};
use crate::metrics::LossWeights;
use crate::optim::{AdamWConfig, LrSchedule};
use crate::pose::DEFAULT_POSE_RATE;
use crate::warp::WarpConfig;

/// Architecture: everything that fixes parameter shapes or the meaning of
/// the coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub stft: StftConfig,
    pub warp: WarpConfig,
    pub encoding: EncodingConfig,
    pub ibc: IbcConfig,
    /// Training segment length in samples; the time encoding is normalized
    /// over `chunk_len / hop + 1` frames.
    pub chunk_len: usize,
    pub pose_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stft: StftConfig::default(),
            warp: WarpConfig::default(),
            encoding: EncodingConfig::default(),
            ibc: IbcConfig::default(),
            chunk_len: 38_400,
            pose_rate: DEFAULT_POSE_RATE,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.warp.validate()?;
        self.encoding.validate()?;
        self.ibc.validate()?;
        if self.chunk_len < self.stft.hop || !self.chunk_len.is_multiple_of(self.stft.hop) {
            return Err(config_err!(
                "chunk length {} must be a positive multiple of the hop {}",
                self.chunk_len,
                self.stft.hop
            ));
        }
        if !(self.pose_rate > 0.0) {
            return Err(config_err!("pose rate must be positive"));
        }
        Ok(())
    }

    pub fn frames_per_chunk(&self) -> usize {
        self.chunk_len / self.stft.hop + 1
    }
}

/// Runtime switches reproducing the ablation rows. None of them changes
/// parameter shapes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Geometric warp only, no learned correction.
    pub no_tdw_neural: bool,
    /// Gain mask forced to `1 + 0j`.
    pub no_ibc: bool,
    pub no_freqpe: bool,
    pub no_timepe: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub adamw: AdamWConfig,
    pub loss: LossWeights,
    pub seed: u64,
    /// Distance between chunk starts; `0` means non-overlapping chunks.
    pub chunk_hop: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr_max: 1e-3,
            lr_min: 1e-6,
            adamw: AdamWConfig::default(),
            loss: LossWeights::default(),
            seed: 0,
            chunk_hop: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            total_epochs: self.epochs,
        }
    }
}

/// Column order of the quaternion in pose files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuatOrder {
    /// `x y z qx qy qz qw`
    #[default]
    Xyzw,
    /// `x y z qw qx qy qz`
    Wxyz,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub quat_order: QuatOrder,
    pub sample_rate: u32,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            quat_order: QuatOrder::Xyzw,
            sample_rate: 48_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Phase metrics ignore bins whose reference magnitude is below this
    /// fraction of the largest reference magnitude.
    pub energy_floor: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { energy_floor: 1e-4 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinnConfig {
    pub model: ModelConfig,
    pub ablation: Ablation,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub metrics: MetricsConfig,
}

impl LinnConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.train.batch_size == 0 {
            return Err(config_err!("batch size must be at least 1"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err!("invalid configuration: {e}"))
    }
}

/// Parses a TOML document into a table of overrides.
pub fn parse_overrides(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| config_err!("invalid configuration file: {e}"))
}

fn merge(base: &mut toml::Table, overlay: &toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn to_table(cfg: &LinnConfig) -> toml::Table {
    cfg.to_toml().parse().expect("serialized config parses")
}

/// Resolves the layered configuration. Returns the config and any warnings.
pub fn resolve_config(
    checkpoint: Option<&LinnConfig>,
    file: Option<&toml::Table>,
    flags: &toml::Table,
) -> Result<(LinnConfig, Vec<String>)> {
    let mut table = to_table(&LinnConfig::default());
    if let Some(ck) = checkpoint {
        merge(&mut table, &to_table(ck));
    }
    if let Some(f) = file {
        merge(&mut table, f);
    }
    merge(&mut table, flags);
    let mut cfg: LinnConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| config_err!("invalid configuration: {e}"))?;
    let mut warnings = Vec::new();
    if let Some(ck) = checkpoint {
        if cfg.model != ck.model {
            let requested = toml::to_string(&cfg.model).unwrap_or_default();
            let stored = toml::to_string(&ck.model).unwrap_or_default();
            for (r, s) in requested.lines().zip(stored.lines()) {
                if r != s {
                    warnings.push(format!(
                        "checkpoint architecture wins: ignoring `{r}`, keeping `{s}`"
                    ));
                }
            }
            if warnings.is_empty() {
                warnings.push("checkpoint architecture overrides requested model settings".into());
            }
            cfg.model = ck.model;
        }
    }
    cfg.validate()?;
    Ok((cfg, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> toml::Table {
        parse_overrides(text).unwrap()
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = LinnConfig::default();
        assert_eq!(LinnConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.model.frames_per_chunk(), 151);
    }

    #[test]
    fn precedence_rightmost_wins() {
        let mut ck = LinnConfig::default();
        ck.train.epochs = 7;
        ck.train.seed = 11;
        let file = table("[train]\nepochs = 9\nbatch_size = 4\n");
        let flags = table("[train]\nbatch_size = 2\n");
        let (cfg, warnings) = resolve_config(Some(&ck), Some(&file), &flags).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(cfg.train.seed, 11);
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.train.batch_size, 2);
    }

    #[test]
    fn checkpoint_architecture_is_authoritative() {
        let mut ck = LinnConfig::default();
        ck.model.encoding.n_f = 6;
        let flags = table("[model.encoding]\nn_f = 8\n");
        let (cfg, warnings) = resolve_config(Some(&ck), None, &flags).unwrap();
        assert_eq!(cfg.model.encoding.n_f, 6);
        assert_eq!(warnings.len(), 1, "{warnings:?}");
        assert!(warnings[0].contains("n_f"));
    }

    #[test]
    fn without_checkpoint_flags_set_architecture() {
        let flags = table("[model.encoding]\nn_f = 4\n[ablation]\nno_ibc = true\n");
        let (cfg, _) = resolve_config(None, None, &flags).unwrap();
        assert_eq!(cfg.model.encoding.n_f, 4);
        assert!(cfg.ablation.no_ibc);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let flags = table("[model]\nchunk_len = 1000\n");
        assert!(resolve_config(None, None, &flags).is_err());
        let flags = table("[train]\nepochs = \"many\"\n");
        assert!(resolve_config(None, None, &flags).is_err());
    }
}
