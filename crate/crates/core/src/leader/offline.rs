//! Replays a recorded JSONL file as a leader. Samples are released against
//! the session clock, anchored at the moment the loop starts running.

use std::path::Path;

use super::{
    validate_bindings, Leader, LeaderCommand, LeaderError, LeaderLimbSnapshot, LeaderSnapshot,
    LimbBinding, LimbCommand, LimbPayload, PayloadKind,
};
use crate::config::DeviceKind;
use crate::recording::Recording;
use crate::se3::Pose;

/// Slack when comparing sample times to the clock.
const TIME_SLACK: f64 = 5e-6;

#[derive(Debug)]
pub struct OfflineTrajectoryLeader {
    bindings: Vec<LimbBinding>,
    kinds: Vec<PayloadKind>,
    /// Sample times relative to the first sample, with mapped commands.
    samples: Vec<(f64, LeaderCommand)>,
    started: bool,
    anchor: Option<f64>,
    cursor: usize,
    done: bool,
    now: f64,
}

impl OfflineTrajectoryLeader {
    /// Leader over a parsed recording. Every recorded limb must be mapped
    /// and every mapped limb must be recorded.
    pub fn new(recording: Recording, bindings: Vec<LimbBinding>) -> Result<Self, LeaderError> {
        validate_bindings(&bindings)?;
        let header = &recording.header;
        let mut file_limbs = header.limbs.clone();
        let mut mapped: Vec<String> = bindings.iter().map(|b| b.leader_limb.clone()).collect();
        file_limbs.sort();
        mapped.sort();
        if file_limbs != mapped {
            return Err(LeaderError::Mapping(format!(
                "recording has limbs {:?} but the mapping covers {:?}",
                header.limbs, mapped
            )));
        }
        let kinds = bindings
            .iter()
            .map(|b| {
                let i = header
                    .limbs
                    .iter()
                    .position(|l| *l == b.leader_limb)
                    .expect("checked above");
                match header.payload.get(i).map(String::as_str) {
                    Some("joint") => Ok(PayloadKind::Joint),
                    Some("eef") => Ok(PayloadKind::Eef),
                    other => Err(LeaderError::Config(format!(
                        "unknown payload kind {other:?}"
                    ))),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;

        let t_first = recording.steps[0]
            .timestamp
            .expect("timestamps checked by the parser");
        let mut samples = Vec::with_capacity(recording.steps.len());
        for (index, step) in recording.steps.iter().enumerate() {
            let stored = step.command.as_ref().ok_or_else(|| {
                LeaderError::Config(format!("sample {index} has no command field"))
            })?;
            let ts = step.timestamp.expect("timestamps checked by the parser");
            let raw = stored
                .to_command(ts)
                .map_err(|m| LeaderError::Config(format!("sample {index}: {m}")))?;
            let mut limbs = Vec::with_capacity(bindings.len());
            for (b, kind) in bindings.iter().zip(&kinds) {
                let l = raw.limb(&b.leader_limb).ok_or_else(|| {
                    LeaderError::Config(format!("sample {index} lacks limb '{}'", b.leader_limb))
                })?;
                if l.payload.kind() != *kind {
                    return Err(LeaderError::Config(format!(
                        "sample {index}: limb '{}' payload differs from the header",
                        b.leader_limb
                    )));
                }
                let payload = match &l.payload {
                    LimbPayload::EefDelta(d) if b.scale != 1.0 => {
                        LimbPayload::EefDelta(Pose::new(*d.rotation(), d.translation() * b.scale))
                    }
                    p => p.clone(),
                };
                limbs.push(LimbCommand {
                    limb: b.follower_limb.clone(),
                    payload,
                    gripper: l.gripper,
                });
            }
            samples.push((
                ts - t_first,
                LeaderCommand {
                    limbs,
                    start_requested: raw.start_requested,
                    end_requested: raw.end_requested,
                    timestamp: ts,
                },
            ));
        }
        Ok(Self {
            bindings,
            kinds,
            samples,
            started: false,
            anchor: None,
            cursor: 0,
            done: false,
            now: 0.0,
        })
    }

    pub fn load(path: &Path, bindings: Vec<LimbBinding>) -> Result<Self, LeaderError> {
        Self::new(Recording::load(path)?, bindings)
    }

    /// Leader for `path` with every recorded limb mapped onto itself.
    pub fn load_identity(path: &Path) -> Result<Self, LeaderError> {
        let rec = Recording::load(path)?;
        let bindings = rec
            .header
            .limbs
            .iter()
            .map(|l| LimbBinding::identity(l))
            .collect();
        Self::new(rec, bindings)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl Leader for OfflineTrajectoryLeader {
    fn kind(&self) -> DeviceKind {
        DeviceKind::Offline
    }

    fn bindings(&self) -> &[LimbBinding] {
        &self.bindings
    }

    fn payload_kinds(&self) -> Vec<PayloadKind> {
        self.kinds.clone()
    }

    /// The first check after loading succeeds; a file replays once.
    fn start_signal_check(&mut self, now: f64) -> bool {
        self.now = now;
        if self.started || self.done {
            return false;
        }
        self.started = true;
        true
    }

    fn poll(&mut self, now: f64) -> Result<LeaderCommand, LeaderError> {
        self.now = now;
        if let Some(anchor) = self.anchor {
            let elapsed = now - anchor;
            while self.cursor + 1 < self.samples.len()
                && self.samples[self.cursor + 1].0 <= elapsed + TIME_SLACK
            {
                self.cursor += 1;
            }
        }
        let mut cmd = self.samples[self.cursor].1.clone();
        cmd.timestamp = now;
        if self.anchor.is_some() && self.cursor + 1 == self.samples.len() {
            cmd.end_requested = true;
        }
        Ok(cmd)
    }

    fn on_running(&mut self, now: f64) {
        self.anchor = Some(now);
        self.cursor = 0;
    }

    fn end_session(&mut self, _now: f64) {
        self.done = true;
        self.anchor = None;
    }

    fn finished(&self) -> bool {
        self.done
    }

    fn snapshot(&self) -> LeaderSnapshot {
        let cmd = &self.samples[self.cursor].1;
        LeaderSnapshot {
            limbs: self
                .bindings
                .iter()
                .zip(&cmd.limbs)
                .map(|(b, l)| LeaderLimbSnapshot {
                    leader_limb: b.leader_limb.clone(),
                    follower_limb: b.follower_limb.clone(),
                    q: match &l.payload {
                        LimbPayload::JointPositions(q) => Some(q.clone()),
                        LimbPayload::EefDelta(_) => None,
                    },
                    gripper: l.gripper,
                    t0: None,
                })
                .collect(),
            active: self.anchor.is_some(),
            timestamp: self.now,
        }
    }
}
