//! Wire format: JSON text frames `{kind, seq, payload}`. Rotations travel as
//! unit quaternions `[x, y, z, w]`.

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use teleop_core::collision::SphereCollider;
use teleop_core::feedback::FeedbackTorques;
use teleop_core::leader::ConsoleInput;
use teleop_core::robot_model::RobotModel;
use teleop_core::se3::{Pose, Se3Error};
use teleop_core::session::{NoticeKind, SessionNotice, SessionSnapshot, SessionState};

pub const SCHEMA_VERSION: u64 = 1;
pub const DEFAULT_PORT: u16 = 8700;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("bad {kind} payload: {detail}")]
    Payload { kind: &'static str, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    StateUpdate,
    LeaderInput,
    SessionEvent,
    FeedbackUpdate,
    ModelInfo,
    Error,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::StateUpdate => "state_update",
            MessageKind::LeaderInput => "leader_input",
            MessageKind::SessionEvent => "session_event",
            MessageKind::FeedbackUpdate => "feedback_update",
            MessageKind::ModelInfo => "model_info",
            MessageKind::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireMessage {
    pub kind: MessageKind,
    /// Strictly increasing per connection and direction.
    pub seq: u64,
    pub payload: Value,
}

impl WireMessage {
    pub fn new<T: Serialize>(kind: MessageKind, seq: u64, payload: &T) -> Self {
        Self {
            kind,
            seq,
            payload: serde_json::to_value(payload).expect("wire payloads serialize"),
        }
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }

    pub fn decode(text: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    /// The payload as `T`.
    pub fn payload_as<T: DeserializeOwned>(&self) -> Result<T, ProtocolError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| ProtocolError::Payload {
            kind: self.kind.as_str(),
            detail: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    pub translation: [f64; 3],
    /// `[x, y, z, w]`
    pub quaternion: [f64; 4],
}

impl From<&Pose> for WirePose {
    fn from(p: &Pose) -> Self {
        let t = p.translation();
        Self {
            translation: [t.x, t.y, t.z],
            quaternion: p.quaternion_xyzw(),
        }
    }
}

impl WirePose {
    pub fn to_pose(&self) -> Result<Pose, Se3Error> {
        Pose::from_quaternion_xyzw(self.quaternion, self.translation.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereInfo {
    /// Index of the sphere's frame in the limb's `frames` list.
    pub frame: usize,
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimbInfo {
    pub name: String,
    pub joint_names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub velocity: Vec<f64>,
    pub base_pose: Vec<f64>,
    /// Root frame to the limb's base link; `T_actual` and `T_cmd` are
    /// relative to the base link.
    pub mount: WirePose,
    pub spheres: Vec<SphereInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub schema_version: u64,
    pub robot: String,
    pub loop_period: f64,
    pub limbs: Vec<LimbInfo>,
    /// Follower limbs the leader drives.
    pub mapped_limbs: Vec<String>,
    /// Leader limb names accepted in `leader_input`; empty without a console leader.
    pub console_limbs: Vec<String>,
}

impl ModelInfo {
    pub fn new(
        model: &RobotModel,
        loop_period: f64,
        mapped_limbs: Vec<String>,
        console_limbs: Vec<String>,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            robot: model.name.clone(),
            loop_period,
            limbs: model
                .limbs
                .iter()
                .zip(&model.base_pose)
                .map(|(c, base)| LimbInfo {
                    name: c.name.clone(),
                    joint_names: c.joint_names(),
                    lower: c.lower_limits().iter().copied().collect(),
                    upper: c.upper_limits().iter().copied().collect(),
                    velocity: c.velocity_limits().iter().copied().collect(),
                    base_pose: base.iter().copied().collect(),
                    mount: WirePose::from(&c.mount),
                    spheres: c
                        .collision_spheres
                        .iter()
                        .map(|s| SphereInfo {
                            frame: s.frame,
                            center: [s.center.x, s.center.y, s.center.z],
                            radius: s.radius,
                        })
                        .collect(),
                })
                .collect(),
            mapped_limbs,
            console_limbs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WireFlags {
    pub limit: bool,
    pub velocity: bool,
    pub collision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimbState {
    pub name: String,
    pub q_actual: Vec<f64>,
    pub q_cmd: Vec<f64>,
    pub gripper_actual: f64,
    pub gripper_cmd: f64,
    #[serde(rename = "T_actual")]
    pub t_actual: WirePose,
    #[serde(rename = "T_cmd")]
    pub t_cmd: WirePose,
    pub flags: WireFlags,
    /// Root-frame joint frame origins, then the EEF.
    pub frames: Vec<[f64; 3]>,
    /// Root-frame collision sphere centers; radii are in `model_info`.
    pub spheres: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub state: SessionState,
    pub timestamp: f64,
    pub tick: u64,
    pub sessions_completed: usize,
    pub recording: Option<String>,
    pub limbs: Vec<LimbState>,
}

fn xyz(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl StateUpdate {
    pub fn from_snapshot(s: &SessionSnapshot, model: &RobotModel) -> Self {
        let q: Vec<_> = s.limbs.iter().map(|l| l.q_actual.clone()).collect();
        let spheres = SphereCollider::centers(model, &q).unwrap_or_default();
        Self {
            state: s.state,
            timestamp: s.timestamp,
            tick: s.tick,
            sessions_completed: s.sessions_completed,
            recording: s.recording.as_ref().map(|p| p.display().to_string()),
            limbs: s
                .limbs
                .iter()
                .enumerate()
                .map(|(i, l)| LimbState {
                    name: l.name.clone(),
                    q_actual: l.q_actual.iter().copied().collect(),
                    q_cmd: l.q_cmd.iter().copied().collect(),
                    gripper_actual: l.gripper_actual,
                    gripper_cmd: l.gripper_cmd,
                    t_actual: WirePose::from(&l.t_actual),
                    t_cmd: WirePose::from(&l.t_cmd),
                    flags: WireFlags {
                        limit: l.flags.limit,
                        velocity: l.flags.velocity,
                        collision: l.flags.collision,
                    },
                    frames: l.frames.iter().map(xyz).collect(),
                    spheres: spheres
                        .get(i)
                        .map(|c| c.iter().map(xyz).collect())
                        .unwrap_or_default(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimbTorques {
    pub leader_limb: String,
    pub follower_limb: String,
    pub bias: Vec<f64>,
    pub tracking: Vec<f64>,
    pub gripper: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eef_error: Option<[f64; 6]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackUpdate {
    pub timestamp: f64,
    pub limbs: Vec<LimbTorques>,
}

impl From<&FeedbackTorques> for FeedbackUpdate {
    fn from(f: &FeedbackTorques) -> Self {
        Self {
            timestamp: f.timestamp,
            limbs: f
                .limbs
                .iter()
                .map(|l| LimbTorques {
                    leader_limb: l.leader_limb.clone(),
                    follower_limb: l.follower_limb.clone(),
                    bias: l.bias.iter().copied().collect(),
                    tracking: l.tracking.iter().copied().collect(),
                    gripper: l.gripper,
                    eef_error: l.eef_error,
                })
                .collect(),
        }
    }
}

/// Drag input from the console, relative to the start of the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderInput {
    pub limb: String,
    pub delta_translation: [f64; 3],
    #[serde(default = "identity_quaternion")]
    pub delta_rotation_quat: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gripper: Option<f64>,
}

fn identity_quaternion() -> [f64; 4] {
    [0.0, 0.0, 0.0, 1.0]
}

impl From<&LeaderInput> for ConsoleInput {
    fn from(m: &LeaderInput) -> Self {
        ConsoleInput {
            limb: m.limb.clone(),
            delta_translation: m.delta_translation,
            delta_rotation: m.delta_rotation_quat,
            gripper: m.gripper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventName {
    // client to server
    Start,
    End,
    Cancel,
    // server to client
    Transition,
    Warning,
    Error,
    RecordingStarted,
    RecordingFinished,
}

/// `session_event` payload in both directions. Clients send only `event`;
/// the server fills the fields that apply to the notice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEventPayload {
    pub event: EventName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notice_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<SessionState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<SessionState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

impl SessionEventPayload {
    pub fn request(event: EventName) -> Self {
        Self {
            event,
            notice_seq: None,
            timestamp: None,
            from: None,
            to: None,
            message: None,
            path: None,
            steps: None,
        }
    }
}

impl From<&SessionNotice> for SessionEventPayload {
    fn from(n: &SessionNotice) -> Self {
        let mut p = Self::request(EventName::Transition);
        p.notice_seq = Some(n.seq);
        p.timestamp = Some(n.timestamp);
        match &n.kind {
            NoticeKind::Transition { from, to } => {
                p.from = Some(*from);
                p.to = Some(*to);
            }
            NoticeKind::Warning { message } => {
                p.event = EventName::Warning;
                p.message = Some(message.clone());
            }
            NoticeKind::Error { message } => {
                p.event = EventName::Error;
                p.message = Some(message.clone());
            }
            NoticeKind::RecordingStarted { path } => {
                p.event = EventName::RecordingStarted;
                p.path = Some(path.display().to_string());
            }
            NoticeKind::RecordingFinished { path, steps } => {
                p.event = EventName::RecordingFinished;
                p.path = Some(path.display().to_string());
                p.steps = Some(*steps);
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub message: String,
    /// `seq` of the client message this answers, when it could be read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use teleop_core::fixtures;

    #[test]
    fn envelope_shape() {
        let m = WireMessage::new(
            MessageKind::Error,
            7,
            &ErrorPayload {
                message: "x".into(),
                in_reply_to: None,
            },
        );
        assert_eq!(
            m.encode(),
            r#"{"kind":"error","seq":7,"payload":{"message":"x"}}"#
        );
        assert_eq!(WireMessage::decode(&m.encode()).unwrap(), m);
    }

    #[test]
    fn leader_input_defaults_rotation() {
        let m = WireMessage::decode(
            r#"{"kind":"leader_input","seq":1,"payload":{"limb":"right","delta_translation":[0.05,0,0]}}"#,
        )
        .unwrap();
        let input: LeaderInput = m.payload_as().unwrap();
        assert_eq!(input.delta_rotation_quat, [0.0, 0.0, 0.0, 1.0]);
        assert!(WireMessage::decode(r#"{"kind":"nope","seq":1,"payload":{}}"#).is_err());
        assert!(WireMessage::decode("{").is_err());
    }

    #[test]
    fn model_info_lists_limbs_and_spheres() {
        let m = fixtures::table_model();
        let info = ModelInfo::new(&m, 0.02, m.limb_names(), vec![]);
        assert_eq!(info.limbs.len(), 2);
        assert!(info
            .limbs
            .iter()
            .all(|l| l.joint_names.len() == 7 && !l.spheres.is_empty()));
        assert_eq!(info.schema_version, 1);
    }

    #[test]
    fn wire_pose_roundtrip() {
        let p = Pose::from_xyz_rpy([0.1, -0.2, 0.3], [0.4, -0.5, 0.6]);
        let back = WirePose::from(&p).to_pose().unwrap();
        assert!(back.max_abs_diff(&p) < 1e-12);
    }
}
