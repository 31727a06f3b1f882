//! Plain-text pose tracks: one pose per line, seven whitespace- or
//! comma-separated numbers. Blank lines and lines starting with `#` are
//! skipped.

use std::path::Path;

use crate::config::QuatOrder;
use crate::error::{Error, Result};
use crate::pose::{Pose, PoseTrack, Quaternion};

pub fn parse_pose_file(path: impl AsRef<Path>, order: QuatOrder, rate: f64) -> Result<PoseTrack> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose_text(&text, path, order, rate)
}

/// Parses `text`; `path` only labels errors.
pub fn parse_pose_text(text: &str, path: &Path, order: QuatOrder, rate: f64) -> Result<PoseTrack> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = body
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 7 {
            return Err(err(
                line_no,
                format!("expected 7 fields, found {}", fields.len()),
            ));
        }
        let mut v = [0.0f64; 7];
        for (slot, tok) in v.iter_mut().zip(&fields) {
            *slot = tok
                .parse()
                .map_err(|_| err(line_no, format!("not a number: `{tok}`")))?;
            if !slot.is_finite() {
                return Err(err(line_no, format!("non-finite value `{tok}`")));
            }
        }
        let q = match order {
            QuatOrder::Xyzw => Quaternion::new(v[3], v[4], v[5], v[6]),
            QuatOrder::Wxyz => Quaternion::new(v[4], v[5], v[6], v[3]),
        };
        let pose = Pose::new([v[0], v[1], v[2]], q).map_err(|e| err(line_no, e.to_string()))?;
        poses.push(pose);
    }
    if poses.is_empty() {
        return Err(err(0, "no poses in file".into()));
    }
    PoseTrack::new(rate, poses)
}

pub fn format_pose_track(track: &PoseTrack, order: QuatOrder) -> String {
    let mut out = String::new();
    for p in &track.poses {
        let [x, y, z] = p.position;
        let q = p.orientation;
        let vals = match order {
            QuatOrder::Xyzw => [x, y, z, q.x, q.y, q.z, q.w],
            QuatOrder::Wxyz => [x, y, z, q.w, q.x, q.y, q.z],
        };
        let line: Vec<String> = vals.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_pose_file(path: impl AsRef<Path>, track: &PoseTrack, order: QuatOrder) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_pose_track(track, order)).map_err(|e| Error::io(path, e))
}
