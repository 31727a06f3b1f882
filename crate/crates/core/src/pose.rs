//! Source pose relative to the listener and its interpolation from the
//! 120 Hz recording rate to arbitrary query times.
//!
//! The listener frame is fixed: `x` points forward, `y` to the left and `z`
//! up. Orientation is interpolated with normalized linear interpolation
//! (nlerp) along the shorter arc.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

pub const DEFAULT_POSE_RATE: f64 = 120.0;

/// Unit quaternion stored as `(x, y, z, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        w: 1.0,
    };

    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Self {
        Quaternion { x, y, z, w }
    }

    /// Rotation by `yaw` radians about the up axis.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = (0.5 * yaw).sin_cos();
        Quaternion::new(0.0, 0.0, s, c)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z + self.w * o.w
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n.is_finite() && n > 1e-12) {
            return Err(config_err!("quaternion {self:?} cannot be normalized"));
        }
        // Already unit to rounding: leave untouched so normalization is idempotent.
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(*self);
        }
        Ok(self.scale(1.0 / n))
    }

    fn scale(&self, s: f64) -> Self {
        Quaternion::new(self.x * s, self.y * s, self.z * s, self.w * s)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.w]
    }

    /// Normalized linear interpolation, flipping `b` onto `a`'s hemisphere.
    pub fn nlerp(&self, b: &Quaternion, t: f64) -> Quaternion {
        let b = if self.dot(b) < 0.0 { b.scale(-1.0) } else { *b };
        let q = Quaternion::new(
            self.x + t * (b.x - self.x),
            self.y + t * (b.y - self.y),
            self.z + t * (b.z - self.z),
            self.w + t * (b.w - self.w),
        );
        // Antipodal inputs were flipped, so the sum cannot vanish.
        q.scale(1.0 / q.norm())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Meters, listener frame.
    pub position: [f64; 3],
    pub orientation: Quaternion,
}

impl Pose {
    /// Builds a pose, normalizing the orientation.
    pub fn new(position: [f64; 3], orientation: Quaternion) -> Result<Self> {
        Ok(Pose {
            position,
            orientation: orientation.normalized()?,
        })
    }

    pub fn at(position: [f64; 3]) -> Self {
        Pose {
            position,
            orientation: Quaternion::IDENTITY,
        }
    }

    /// `[x, y, z, qx, qy, qz, qw]`.
    pub fn to_array(&self) -> [f64; 7] {
        let p = self.position;
        let q = self.orientation;
        [p[0], p[1], p[2], q.x, q.y, q.z, q.w]
    }

    /// Azimuth in radians, positive towards the left ear.
    pub fn azimuth(&self) -> f64 {
        self.position[1].atan2(self.position[0])
    }

    pub fn distance_to(&self, point: [f64; 3]) -> f64 {
        let p = self.position;
        ((p[0] - point[0]).powi(2) + (p[1] - point[1]).powi(2) + (p[2] - point[2]).powi(2)).sqrt()
    }
}

/// Uniformly sampled pose sequence starting at time 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseTrack {
    pub rate: f64,
    pub poses: Vec<Pose>,
}

impl PoseTrack {
    pub fn new(rate: f64, poses: Vec<Pose>) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(config_err!("pose rate must be positive, got {rate}"));
        }
        if poses.is_empty() {
            return Err(config_err!("pose track is empty"));
        }
        Ok(PoseTrack { rate, poses })
    }

    pub fn constant(rate: f64, pose: Pose, knots: usize) -> Self {
        PoseTrack {
            rate,
            poses: vec![pose; knots.max(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Time of the last knot in seconds.
    pub fn duration(&self) -> f64 {
        self.poses.len().saturating_sub(1) as f64 / self.rate
    }

    /// Pose at `time` seconds; times outside the track clamp to its ends.
    pub fn sample(&self, time: f64) -> Result<Pose> {
        track_sample(self, time)
    }

    /// Knots `[start, start + duration]` re-sampled on this track's grid,
    /// with time 0 at `start`.
    pub fn sub_track(&self, start: f64, duration: f64) -> Result<PoseTrack> {
        let knots = (duration * self.rate - 1e-9).ceil().max(0.0) as usize + 1;
        let poses = (0..knots)
            .map(|k| track_sample(self, start + k as f64 / self.rate))
            .collect::<Result<_>>()?;
        PoseTrack::new(self.rate, poses)
    }
}

/// Linear position / nlerp orientation interpolation at `time` seconds.
pub fn track_sample(track: &PoseTrack, time: f64) -> Result<Pose> {
    let n = track.poses.len();
    if n == 0 {
        return Err(config_err!("cannot sample an empty pose track"));
    }
    let u = (time * track.rate).clamp(0.0, (n - 1) as f64);
    let nearest = u.round();
    if (u - nearest).abs() < 1e-9 || u.is_nan() {
        let k = if u.is_nan() { 0 } else { nearest as usize };
        return Ok(track.poses[k]);
    }
    let k = u.floor() as usize;
    let frac = u - k as f64;
    let (a, b) = (&track.poses[k], &track.poses[k + 1]);
    let mut position = [0.0; 3];
    for (i, p) in position.iter_mut().enumerate() {
        *p = a.position[i] + frac * (b.position[i] - a.position[i]);
    }
    Ok(Pose {
        position,
        orientation: a.orientation.nlerp(&b.orientation, frac),
    })
}

/// Pose at every audio sample time `i/fs` for `i` in `0..n_samples`.
pub fn sample_to_audio_rate(track: &PoseTrack, n_samples: usize, fs: f64) -> Result<Vec<Pose>> {
    if !(fs > 0.0) {
        return Err(config_err!("sample rate must be positive, got {fs}"));
    }
    (0..n_samples)
        .map(|i| track_sample(track, i as f64 / fs))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lateral() -> PoseTrack {
        PoseTrack::new(
            120.0,
            vec![
                Pose::at([0.0, 0.0, 0.0]),
                Pose::at([1.0, 0.0, 0.0]),
                Pose::new([1.0, 2.0, 0.0], Quaternion::from_yaw(1.0)).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn knots_are_exact() {
        let track = lateral();
        for k in 0..3 {
            assert_eq!(
                track_sample(&track, k as f64 / 120.0).unwrap(),
                track.poses[k]
            );
        }
    }

    #[test]
    fn midpoint_position() {
        let p = track_sample(&lateral(), 0.5 / 120.0).unwrap();
        assert!((p.position[0] - 0.5).abs() < 1e-12);
        assert_eq!(p.orientation, Quaternion::IDENTITY);
    }

    #[test]
    fn nlerp_handles_double_cover() {
        let q = Quaternion::from_yaw(0.7);
        let neg = Quaternion::new(-q.x, -q.y, -q.z, -q.w);
        let r = q.nlerp(&neg, 0.5);
        for (a, b) in r.to_array().iter().zip(q.to_array()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clamps_outside_range() {
        let track = lateral();
        assert_eq!(track_sample(&track, -3.0).unwrap(), track.poses[0]);
        assert_eq!(track_sample(&track, 99.0).unwrap(), track.poses[2]);
    }

    #[test]
    fn empty_track_is_error() {
        let track = PoseTrack {
            rate: 120.0,
            poses: vec![],
        };
        assert!(track_sample(&track, 0.0).is_err());
        assert!(PoseTrack::new(120.0, vec![]).is_err());
    }

    #[test]
    fn audio_rate_sampling() {
        let track = PoseTrack::constant(120.0, Pose::at([1.0, 2.0, 3.0]), 5);
        let poses = sample_to_audio_rate(&track, 1000, 48_000.0).unwrap();
        assert!(poses.iter().all(|p| *p == track.poses[0]));

        let two =
            PoseTrack::new(120.0, vec![Pose::at([0.0; 3]), Pose::at([4.0, 0.0, 0.0])]).unwrap();
        let poses = sample_to_audio_rate(&two, 401, 48_000.0).unwrap();
        for (i, p) in poses.iter().enumerate() {
            assert!((p.position[0] - 4.0 * i as f64 / 400.0).abs() < 1e-12);
        }

        let long = PoseTrack::new(
            120.0,
            (0..121).map(|k| Pose::at([k as f64, 0.0, 0.0])).collect(),
        )
        .unwrap();
        let poses = sample_to_audio_rate(&long, 48_000, 48_000.0).unwrap();
        assert_eq!(poses.len(), 48_000);
        for k in 0..120 {
            assert_eq!(poses[k * 400], long.poses[k]);
        }
    }

    #[test]
    fn sub_track_starts_at_offset() {
        let long = PoseTrack::new(
            120.0,
            (0..200).map(|k| Pose::at([k as f64, 0.0, 0.0])).collect(),
        )
        .unwrap();
        let sub = long.sub_track(0.8, 0.8).unwrap();
        assert_eq!(sub.len(), 97);
        assert_eq!(sub.poses[0], long.poses[96]);
        assert_eq!(sub.poses[96], long.poses[192]);
    }

    proptest! {
        #[test]
        fn interpolated_quaternions_are_unit(
            yaws in proptest::collection::vec(-10.0f64..10.0, 2..8),
            t in -0.1f64..0.2,
        ) {
            let poses = yaws
                .iter()
                .map(|&y| Pose::new([y, -y, 0.5], Quaternion::new(0.3, -0.2, y.sin(), y.cos())).unwrap())
                .collect();
            let track = PoseTrack::new(120.0, poses).unwrap();
            let p = track_sample(&track, t).unwrap();
            prop_assert!((p.orientation.norm() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn sampling_is_continuous(t in 0.0f64..0.05) {
            let track = lateral();
            let a = track_sample(&track, t).unwrap();
            let b = track_sample(&track, t + 1e-6).unwrap();
            let dp: f64 = (0..3).map(|i| (a.position[i] - b.position[i]).abs()).sum();
            let dq: f64 = a.orientation.to_array().iter().zip(b.orientation.to_array()).map(|(x, y)| (x - y).abs()).sum();
            prop_assert!(dp < 1e-3 && dq < 1e-3);
        }
    }
}
