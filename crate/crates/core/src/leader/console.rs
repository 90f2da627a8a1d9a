//! Console leader: a pose-space device without a physical pose. `T0` is the
//! identity and each input carries the limb's accumulated drag since the
//! session started.

use std::sync::{Arc, Mutex};

use nalgebra::Vector3;

use super::{
    compute_delta, validate_bindings, Leader, LeaderCommand, LeaderError, LeaderLimbSnapshot,
    LeaderSnapshot, LimbBinding, LimbCommand, LimbPayload, PayloadKind,
};
use crate::config::DeviceKind;
use crate::se3::Pose;

/// A drag update for one leader limb, relative to the session start.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsoleInput {
    pub limb: String,
    pub delta_translation: [f64; 3],
    /// Unit quaternion `[x, y, z, w]`.
    pub delta_rotation: [f64; 4],
    pub gripper: Option<f64>,
}

impl ConsoleInput {
    pub fn translation(limb: &str, xyz: [f64; 3]) -> Self {
        Self {
            limb: limb.to_string(),
            delta_translation: xyz,
            delta_rotation: [0.0, 0.0, 0.0, 1.0],
            gripper: None,
        }
    }
}

#[derive(Debug)]
struct Shared {
    /// Latest pose and gripper per binding; one slot each, newest wins.
    poses: Vec<Pose>,
    grippers: Vec<f64>,
    start_pending: bool,
    end_pending: bool,
    inputs: u64,
}

/// Cloneable input side of the console leader (used by the service).
#[derive(Debug, Clone)]
pub struct ConsoleHandle {
    limbs: Arc<Vec<String>>,
    shared: Arc<Mutex<Shared>>,
}

impl ConsoleHandle {
    fn lock(&self) -> std::sync::MutexGuard<'_, Shared> {
        self.shared.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Leader limb names accepted by [`ConsoleHandle::submit`].
    pub fn limbs(&self) -> &[String] {
        &self.limbs
    }

    pub fn submit(&self, input: &ConsoleInput) -> Result<(), LeaderError> {
        let i = self
            .limbs
            .iter()
            .position(|l| *l == input.limb)
            .ok_or_else(|| LeaderError::Mapping(format!("limb '{}' is not mapped", input.limb)))?;
        let t = input.delta_translation;
        let pose = Pose::from_quaternion_xyzw(input.delta_rotation, Vector3::new(t[0], t[1], t[2]))
            .map_err(|e| LeaderError::Input(e.to_string()))?;
        if !pose.is_finite() {
            return Err(LeaderError::Input("non-finite drag".into()));
        }
        if let Some(g) = input.gripper {
            if !g.is_finite() {
                return Err(LeaderError::Input("non-finite gripper value".into()));
            }
        }
        let mut s = self.lock();
        s.poses[i] = pose;
        if let Some(g) = input.gripper {
            s.grippers[i] = g.clamp(0.0, 1.0);
        }
        s.inputs += 1;
        Ok(())
    }

    pub fn request_start(&self) {
        self.lock().start_pending = true;
    }

    pub fn request_end(&self) {
        self.lock().end_pending = true;
    }

    /// Number of accepted drag inputs so far.
    pub fn input_count(&self) -> u64 {
        self.lock().inputs
    }
}

#[derive(Debug)]
pub struct ConsoleLeader {
    bindings: Vec<LimbBinding>,
    handle: ConsoleHandle,
    active: bool,
    now: f64,
}

impl ConsoleLeader {
    pub fn new(bindings: Vec<LimbBinding>) -> Result<(Self, ConsoleHandle), LeaderError> {
        validate_bindings(&bindings)?;
        let n = bindings.len();
        let handle = ConsoleHandle {
            limbs: Arc::new(bindings.iter().map(|b| b.leader_limb.clone()).collect()),
            shared: Arc::new(Mutex::new(Shared {
                poses: vec![Pose::identity(); n],
                grippers: vec![0.0; n],
                start_pending: false,
                end_pending: false,
                inputs: 0,
            })),
        };
        let leader = Self {
            bindings,
            handle: handle.clone(),
            active: false,
            now: 0.0,
        };
        Ok((leader, handle))
    }
}

impl Leader for ConsoleLeader {
    fn kind(&self) -> DeviceKind {
        DeviceKind::Console
    }

    fn bindings(&self) -> &[LimbBinding] {
        &self.bindings
    }

    fn payload_kinds(&self) -> Vec<PayloadKind> {
        vec![PayloadKind::Eef; self.bindings.len()]
    }

    fn start_signal_check(&mut self, now: f64) -> bool {
        self.now = now;
        let mut s = self.handle.lock();
        let started = std::mem::take(&mut s.start_pending);
        if started {
            s.end_pending = false;
        }
        started
    }

    fn poll(&mut self, now: f64) -> Result<LeaderCommand, LeaderError> {
        self.now = now;
        let mut s = self.handle.lock();
        let end = self.active && std::mem::take(&mut s.end_pending);
        let limbs = self
            .bindings
            .iter()
            .enumerate()
            .map(|(i, b)| LimbCommand {
                limb: b.follower_limb.clone(),
                payload: LimbPayload::EefDelta(compute_delta(
                    &Pose::identity(),
                    &s.poses[i],
                    b.scale,
                )),
                gripper: s.grippers[i],
            })
            .collect();
        Ok(LeaderCommand {
            limbs,
            start_requested: false,
            end_requested: end,
            timestamp: now,
        })
    }

    fn on_running(&mut self, _now: f64) {
        self.active = true;
    }

    fn end_session(&mut self, _now: f64) {
        self.active = false;
        let mut s = self.handle.lock();
        s.poses.iter_mut().for_each(|p| *p = Pose::identity());
        s.grippers.iter_mut().for_each(|g| *g = 0.0);
        s.end_pending = false;
    }

    fn snapshot(&self) -> LeaderSnapshot {
        let s = self.handle.lock();
        LeaderSnapshot {
            limbs: self
                .bindings
                .iter()
                .enumerate()
                .map(|(i, b)| LeaderLimbSnapshot {
                    leader_limb: b.leader_limb.clone(),
                    follower_limb: b.follower_limb.clone(),
                    q: None,
                    gripper: s.grippers[i],
                    t0: Some(Pose::identity()),
                })
                .collect(),
            active: self.active,
            timestamp: self.now,
        }
    }
}
