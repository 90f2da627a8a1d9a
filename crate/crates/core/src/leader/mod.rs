//! Leader devices. Every device turns its readings into a [`LeaderCommand`]
//! carrying, per follower limb, either joint positions or a scaled delta pose
//! relative to the pose captured at the start signal.

mod console;
mod offline;
mod puppeteer;
mod scripted;

use std::sync::Arc;

use thiserror::Error;

use crate::config::{DeviceKind, MappingSpec};
use crate::recording::RecordingError;
use crate::robot_model::{JointVector, ModelError, RobotModel};
use crate::se3::Pose;

pub use console::{ConsoleHandle, ConsoleInput, ConsoleLeader};
pub use offline::OfflineTrajectoryLeader;
pub use puppeteer::{
    resolve_kinds, same_layout, PuppeteerFeed, PuppeteerReading, VirtualPuppeteer,
};
pub use scripted::ScriptedLeader;

#[derive(Debug, Clone, PartialEq)]
pub enum LimbPayload {
    JointPositions(JointVector),
    /// Already scaled: `T0⁻¹·Tt` with its translation multiplied by `s`.
    EefDelta(Pose),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Joint,
    Eef,
}

impl PayloadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PayloadKind::Joint => "joint",
            PayloadKind::Eef => "eef",
        }
    }
}

impl LimbPayload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            LimbPayload::JointPositions(_) => PayloadKind::Joint,
            LimbPayload::EefDelta(_) => PayloadKind::Eef,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimbCommand {
    /// Follower limb name.
    pub limb: String,
    pub payload: LimbPayload,
    /// Normalized to `[0, 1]`, 1 = closed.
    pub gripper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderCommand {
    pub limbs: Vec<LimbCommand>,
    pub start_requested: bool,
    pub end_requested: bool,
    /// Session clock, seconds.
    pub timestamp: f64,
}

impl LeaderCommand {
    /// Identity deltas with open grippers for `limbs`.
    pub fn identity(limbs: &[String], timestamp: f64) -> Self {
        Self {
            limbs: limbs
                .iter()
                .map(|l| LimbCommand {
                    limb: l.clone(),
                    payload: LimbPayload::EefDelta(Pose::identity()),
                    gripper: 0.0,
                })
                .collect(),
            start_requested: false,
            end_requested: false,
            timestamp,
        }
    }

    pub fn limb(&self, name: &str) -> Option<&LimbCommand> {
        self.limbs.iter().find(|l| l.limb == name)
    }

    /// Equal limbs and signals, timestamps ignored.
    pub fn same_payload(&self, other: &LeaderCommand) -> bool {
        self.limbs == other.limbs
            && self.start_requested == other.start_requested
            && self.end_requested == other.end_requested
    }
}

#[derive(Debug, Error)]
pub enum LeaderError {
    #[error("leader device disconnected")]
    Disconnected { last: Option<Box<LeaderCommand>> },
    #[error("limb mapping: {0}")]
    Mapping(String),
    #[error("leader configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Recording(#[from] RecordingError),
    #[error("invalid console input: {0}")]
    Input(String),
}

/// One leader limb bound to one follower limb.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbBinding {
    pub leader_limb: String,
    pub follower_limb: String,
    pub scale: f64,
    pub gripper_range: [f64; 2],
}

impl LimbBinding {
    pub fn from_spec(m: &MappingSpec) -> Self {
        Self {
            leader_limb: m.leader_limb.clone(),
            follower_limb: m.follower_limb.clone(),
            scale: m.scale,
            gripper_range: m.gripper_range,
        }
    }

    pub fn identity(limb: &str) -> Self {
        Self {
            leader_limb: limb.to_string(),
            follower_limb: limb.to_string(),
            scale: 1.0,
            gripper_range: [0.0, 1.0],
        }
    }

    /// Raw gripper reading to `[0, 1]`.
    pub fn normalize_gripper(&self, raw: f64) -> f64 {
        let [lo, hi] = self.gripper_range;
        ((raw - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

/// Checks a mapping for positive scales and one-to-one limb pairs.
pub fn validate_bindings(bindings: &[LimbBinding]) -> Result<(), LeaderError> {
    if bindings.is_empty() {
        return Err(LeaderError::Mapping("no limbs mapped".into()));
    }
    for (i, b) in bindings.iter().enumerate() {
        if !(b.scale > 0.0 && b.scale.is_finite()) {
            return Err(LeaderError::Mapping(format!(
                "scale of limb '{}' must be positive",
                b.leader_limb
            )));
        }
        for other in &bindings[..i] {
            if other.leader_limb == b.leader_limb || other.follower_limb == b.follower_limb {
                return Err(LeaderError::Mapping(format!(
                    "limb '{}' appears twice; the mapping must be one-to-one",
                    b.leader_limb
                )));
            }
        }
    }
    Ok(())
}

/// Scaled pose delta: rotation of `T0⁻¹·Tt`, translation multiplied by `s`.
pub fn compute_delta(t0: &Pose, tt: &Pose, s: f64) -> Pose {
    let d = t0.between(tt);
    Pose::new(*d.rotation(), d.translation() * s)
}

/// Per leader limb, what the feedback loop needs to know.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderLimbSnapshot {
    pub leader_limb: String,
    pub follower_limb: String,
    /// Joint positions, for devices that have joints.
    pub q: Option<JointVector>,
    pub gripper: f64,
    pub t0: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderSnapshot {
    pub limbs: Vec<LeaderLimbSnapshot>,
    pub active: bool,
    pub timestamp: f64,
}

/// A source of leader commands, polled by the session loop.
///
/// Time is the session clock in seconds and is passed in so simulated
/// sessions stay deterministic.
pub trait Leader: Send {
    fn kind(&self) -> DeviceKind;

    fn bindings(&self) -> &[LimbBinding];

    /// Payload kind per binding, known before the first poll.
    fn payload_kinds(&self) -> Vec<PayloadKind>;

    /// True once the start gesture has been detected. Captures `T0`.
    fn start_signal_check(&mut self, now: f64) -> bool;

    /// Freshest command; repeats the previous one when the device is silent.
    fn poll(&mut self, now: f64) -> Result<LeaderCommand, LeaderError>;

    /// Called when the follower has finished approaching and the loop starts.
    fn on_running(&mut self, _now: f64) {}

    /// Called when a Running interval ends (end signal or disconnect).
    fn end_session(&mut self, _now: f64) {}

    /// No further sessions will be started by this device.
    fn finished(&self) -> bool {
        false
    }

    fn snapshot(&self) -> LeaderSnapshot;

    /// Kinematic model of the device, if it has one (puppeteers).
    fn model(&self) -> Option<&Arc<RobotModel>> {
        None
    }

    fn follower_limbs(&self) -> Vec<String> {
        self.bindings()
            .iter()
            .map(|b| b.follower_limb.clone())
            .collect()
    }
}

/// Edge-triggered "all grippers closed for a while" detector.
///
/// Fires once when every value has stayed above `threshold` for `hold`
/// seconds, then stays quiet until the grippers open again.
#[derive(Debug, Clone)]
pub struct GestureDetector {
    threshold: f64,
    hold: f64,
    closed_since: Option<f64>,
    armed: bool,
}

impl GestureDetector {
    pub fn new(threshold: f64, hold: f64) -> Self {
        Self {
            threshold,
            hold,
            closed_since: None,
            armed: true,
        }
    }

    pub fn update(&mut self, now: f64, grippers: &[f64], extra_condition: bool) -> bool {
        let closed =
            extra_condition && !grippers.is_empty() && grippers.iter().all(|&g| g > self.threshold);
        if !closed {
            self.closed_since = None;
            self.armed = true;
            return false;
        }
        if !self.armed {
            return false;
        }
        let since = *self.closed_since.get_or_insert(now);
        // small slack so a hold that lands exactly on a tick boundary counts
        if now - since >= self.hold - 1e-9 {
            self.armed = false;
            self.closed_since = None;
            return true;
        }
        false
    }

    pub fn reset(&mut self) {
        self.closed_since = None;
        self.armed = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn delta_of_equal_poses_is_identity() {
        let t = Pose::from_xyz_rpy([0.3, -0.2, 0.5], [0.4, 0.1, -1.0]);
        assert!(compute_delta(&t, &t, 2.5).approx_eq(&Pose::identity(), 1e-12));
    }

    #[test]
    fn unscaled_delta_is_relative_pose() {
        let t0 = Pose::from_xyz_rpy([0.3, -0.2, 0.5], [0.4, 0.1, -1.0]);
        let tt = Pose::from_xyz_rpy([0.1, 0.2, 0.4], [0.0, 0.3, 0.2]);
        assert_eq!(compute_delta(&t0, &tt, 1.0), t0.between(&tt));
    }

    #[test]
    fn translation_scaled_rotation_not() {
        let d = compute_delta(
            &Pose::identity(),
            &Pose::from_translation(0.1, 0.0, 0.0),
            2.0,
        );
        assert_eq!(*d.translation(), Vector3::new(0.2, 0.0, 0.0));
        assert_eq!(*d.rotation(), nalgebra::Matrix3::identity());
    }

    fn stream(det: &mut GestureDetector, closed_for: f64) -> bool {
        let dt = 0.02;
        let mut fired = false;
        let mut t = 0.0;
        for _ in 0..10 {
            fired |= det.update(t, &[0.0, 0.0], true);
            t += dt;
        }
        let n = (closed_for / dt).round() as usize;
        for _ in 0..n {
            fired |= det.update(t, &[0.95, 0.97], true);
            t += dt;
        }
        for _ in 0..50 {
            fired |= det.update(t, &[0.1, 0.0], true);
            t += dt;
        }
        fired
    }

    #[test]
    fn gesture_needs_full_hold() {
        assert!(stream(&mut GestureDetector::new(0.9, 0.5), 0.6));
        assert!(!stream(&mut GestureDetector::new(0.9, 0.5), 0.3));
    }

    #[test]
    fn gesture_needs_every_gripper() {
        let mut d = GestureDetector::new(0.9, 0.5);
        let mut fired = false;
        for i in 0..100 {
            fired |= d.update(i as f64 * 0.02, &[0.95, 0.5], true);
        }
        assert!(!fired);
    }

    #[test]
    fn gesture_is_edge_triggered() {
        let mut d = GestureDetector::new(0.9, 0.5);
        let fires: usize = (0..200)
            .map(|i| d.update(i as f64 * 0.02, &[1.0], true) as usize)
            .sum();
        assert_eq!(fires, 1);
    }

    #[test]
    fn bindings_validated() {
        let a = LimbBinding::identity("a");
        let mut b = LimbBinding::identity("b");
        validate_bindings(&[a.clone(), b.clone()]).unwrap();
        b.follower_limb = "a".into();
        assert!(validate_bindings(&[a.clone(), b]).is_err());
        let mut c = LimbBinding::identity("c");
        c.scale = -1.0;
        assert!(validate_bindings(&[c]).is_err());
    }
}
