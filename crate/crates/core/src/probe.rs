//! Interpretability probe: the corrector's mean amplitude and phase
//! corrections per ear as a function of source position.
//!
//! Every grid point is a source facing the listener. The corrector is
//! queried at all bins of a fixed frame in the middle of a chunk and the
//! scaled corrections `δ_A`, `δ_φ` are averaged over bins.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{config_err, Error, Result};
use crate::model::Linn;
use crate::pose::{Pose, Quaternion};
use crate::real::Real;

/// Source positions to probe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeGrid {
    /// Azimuths from `start_deg` to `end_deg` at fixed radius.
    Arc {
        radius: f64,
        start_deg: f64,
        end_deg: f64,
        steps: usize,
        height: f64,
    },
    /// Lateral line `x = distance`, `y` from `start` to `end`.
    Line {
        distance: f64,
        start: f64,
        end: f64,
        steps: usize,
        height: f64,
    },
}

impl ProbeGrid {
    pub fn positions(&self) -> Vec<[f64; 3]> {
        let lerp = |a: f64, b: f64, n: usize, i: usize| {
            if n == 1 {
                a
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        };
        match *self {
            ProbeGrid::Arc {
                radius,
                start_deg,
                end_deg,
                steps,
                height,
            } => (0..steps)
                .map(|i| {
                    let az = lerp(start_deg, end_deg, steps, i).to_radians();
                    [radius * az.cos(), radius * az.sin(), height]
                })
                .collect(),
            ProbeGrid::Line {
                distance,
                start,
                end,
                steps,
                height,
            } => (0..steps)
                .map(|i| [distance, lerp(start, end, steps, i), height])
                .collect(),
        }
    }
}

/// Parses `arc:radius=1.5,start=-90,end=90,steps=37[,height=0]` or
/// `line:x=1,start=-2,end=2,steps=41[,height=0]`.
impl FromStr for ProbeGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| config_err!("grid `{s}` must look like arc:... or line:..."))?;
        let mut kv = std::collections::HashMap::new();
        for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| config_err!("grid field `{part}` is not key=value"))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| config_err!("grid field `{part}` is not numeric"))?;
            kv.insert(k.trim().to_string(), v);
        }
        let get = |k: &str, default: Option<f64>| {
            kv.get(k)
                .copied()
                .or(default)
                .ok_or_else(|| config_err!("grid `{s}` is missing `{k}`"))
        };
        let steps = get("steps", None)?;
        if !(steps >= 1.0) || steps.fract() != 0.0 {
            return Err(config_err!("grid steps must be a positive integer"));
        }
        let steps = steps as usize;
        let height = get("height", Some(0.0))?;
        match kind.trim() {
            "arc" => Ok(ProbeGrid::Arc {
                radius: get("radius", None)?,
                start_deg: get("start", None)?,
                end_deg: get("end", None)?,
                steps,
                height,
            }),
            "line" => Ok(ProbeGrid::Line {
                distance: get("x", None)?,
                start: get("start", None)?,
                end: get("end", None)?,
                steps,
                height,
            }),
            other => Err(config_err!("unknown grid kind `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProbeRow {
    pub point: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub azimuth_deg: f64,
    /// 0 left, 1 right.
    pub ear: usize,
    pub mean_delta_a: f64,
    pub mean_delta_phi: f64,
}

pub const CSV_HEADER: &str = "point,x,y,z,azimuth_deg,ear,mean_delta_a,mean_delta_phi";

/// Two rows (left, right) per grid point.
pub fn probe<T: Real>(model: &Linn<T>, grid: &ProbeGrid) -> Result<Vec<ProbeRow>> {
    let points = grid.positions();
    if points.is_empty() {
        return Err(config_err!("probe grid is empty"));
    }
    let bins = model.config.stft.bins();
    let mid = (model.config.frames_per_chunk() - 1) / 2;
    let mut rows = Vec::with_capacity(2 * points.len());
    for (i, p) in points.iter().enumerate() {
        let azimuth = p[1].atan2(p[0]);
        let pose = Pose::new(*p, Quaternion::from_yaw(azimuth + std::f64::consts::PI))?;
        let corr = model.corrections_at(&pose, mid)?;
        for ear in 0..2 {
            let rows_e = &corr[ear * bins..(ear + 1) * bins];
            let n = bins as f64;
            rows.push(ProbeRow {
                point: i,
                x: p[0],
                y: p[1],
                z: p[2],
                azimuth_deg: azimuth.to_degrees(),
                ear,
                mean_delta_a: rows_e.iter().map(|c| c.0).sum::<f64>() / n,
                mean_delta_phi: rows_e.iter().map(|c| c.1).sum::<f64>() / n,
            });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[ProbeRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.point,
            r.x,
            r.y,
            r.z,
            r.azimuth_deg,
            if r.ear == 0 { "left" } else { "right" },
            r.mean_delta_a,
            r.mean_delta_phi
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Ablation, ModelConfig};

    #[test]
    fn grid_parsing() {
        let g: ProbeGrid = "arc:radius=1.5,start=-90,end=90,steps=3".parse().unwrap();
        let p = g.positions();
        assert_eq!(p.len(), 3);
        assert!((p[0][1] + 1.5).abs() < 1e-12 && (p[1][0] - 1.5).abs() < 1e-12);
        let g: ProbeGrid = "line:x=1,start=-2,end=2,steps=5,height=0.2"
            .parse()
            .unwrap();
        assert_eq!(g.positions()[4], [1.0, 2.0, 0.2]);
        assert!("arc:radius=1".parse::<ProbeGrid>().is_err());
        assert!("cube:steps=2".parse::<ProbeGrid>().is_err());
        assert!("line:x=1,start=0,end=1,steps=0"
            .parse::<ProbeGrid>()
            .is_err());
    }

    #[test]
    fn zero_model_has_zero_corrections() {
        let m = Linn::<f32>::zeros(ModelConfig::default(), Ablation::default()).unwrap();
        let g: ProbeGrid = "arc:radius=1,start=-60,end=60,steps=5".parse().unwrap();
        let rows = probe(&m, &g).unwrap();
        assert_eq!(rows.len(), 10);
        assert!(rows
            .iter()
            .all(|r| r.mean_delta_a == 0.0 && r.mean_delta_phi == 0.0));
        let csv = to_csv(&rows);
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.starts_with(CSV_HEADER));
    }
}
