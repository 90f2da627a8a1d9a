//! Leader that plays a fixed list of commands, one per poll. Used by tests
//! and the gym-style stepper.

use std::collections::VecDeque;

use super::{
    validate_bindings, Leader, LeaderCommand, LeaderError, LeaderLimbSnapshot, LeaderSnapshot,
    LimbBinding, LimbPayload, PayloadKind,
};
use crate::config::DeviceKind;

#[derive(Debug)]
pub struct ScriptedLeader {
    bindings: Vec<LimbBinding>,
    kinds: Vec<PayloadKind>,
    sessions: VecDeque<VecDeque<LeaderCommand>>,
    current: Option<VecDeque<LeaderCommand>>,
    last: LeaderCommand,
    /// Start signal only after this clock time.
    start_after: f64,
    polls: usize,
    disconnect_after: Option<usize>,
    active: bool,
}

impl ScriptedLeader {
    /// One inner list per session. Commands are keyed by follower limb; the
    /// first command of each session is also used for the approach.
    pub fn new(
        bindings: Vec<LimbBinding>,
        sessions: Vec<Vec<LeaderCommand>>,
    ) -> Result<Self, LeaderError> {
        validate_bindings(&bindings)?;
        let first = sessions.iter().flatten().next().ok_or_else(|| {
            LeaderError::Config("scripted leader needs at least one command".into())
        })?;
        let kinds = bindings
            .iter()
            .map(|b| {
                first
                    .limb(&b.follower_limb)
                    .map(|l| l.payload.kind())
                    .ok_or_else(|| {
                        LeaderError::Mapping(format!("no command for limb '{}'", b.follower_limb))
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (i, c) in sessions.iter().flatten().enumerate() {
            for (b, k) in bindings.iter().zip(&kinds) {
                match c.limb(&b.follower_limb) {
                    Some(l) if l.payload.kind() == *k => {}
                    _ => {
                        return Err(LeaderError::Config(format!(
                            "command {i} has no {} payload for limb '{}'",
                            k.as_str(),
                            b.follower_limb
                        )))
                    }
                }
            }
        }
        let last = first.clone();
        Ok(Self {
            bindings,
            kinds,
            sessions: sessions.into_iter().map(VecDeque::from).collect(),
            current: None,
            last,
            start_after: 0.0,
            polls: 0,
            disconnect_after: None,
            active: false,
        })
    }

    pub fn start_after(mut self, t: f64) -> Self {
        self.start_after = t;
        self
    }

    /// Poll number `n` (0-based) and later report a disconnect.
    pub fn disconnect_after(mut self, n: usize) -> Self {
        self.disconnect_after = Some(n);
        self
    }

    pub fn remaining_sessions(&self) -> usize {
        self.sessions.len()
    }
}

impl Leader for ScriptedLeader {
    fn kind(&self) -> DeviceKind {
        DeviceKind::Offline
    }

    fn bindings(&self) -> &[LimbBinding] {
        &self.bindings
    }

    fn payload_kinds(&self) -> Vec<PayloadKind> {
        self.kinds.clone()
    }

    fn start_signal_check(&mut self, now: f64) -> bool {
        if self.current.is_some() || now < self.start_after {
            return false;
        }
        match self.sessions.pop_front() {
            Some(s) => {
                self.current = Some(s);
                true
            }
            None => false,
        }
    }

    fn poll(&mut self, now: f64) -> Result<LeaderCommand, LeaderError> {
        let n = self.polls;
        self.polls += 1;
        if self.disconnect_after.is_some_and(|k| n >= k) {
            return Err(LeaderError::Disconnected {
                last: Some(Box::new(self.last.clone())),
            });
        }
        if let Some(cur) = self.current.as_mut() {
            // the approach peeks at the first command without consuming it
            let next = if self.active {
                cur.pop_front()
            } else {
                cur.front().cloned()
            };
            if let Some(c) = next {
                self.last = c;
            }
        }
        let mut out = self.last.clone();
        out.timestamp = now;
        if !self.active {
            out.end_requested = false;
        }
        Ok(out)
    }

    fn on_running(&mut self, _now: f64) {
        self.active = true;
    }

    fn end_session(&mut self, _now: f64) {
        self.active = false;
        self.current = None;
        // do not carry the end flag into the next session's hold value
        self.last.end_requested = false;
    }

    fn finished(&self) -> bool {
        self.sessions.is_empty() && self.current.is_none()
    }

    fn snapshot(&self) -> LeaderSnapshot {
        LeaderSnapshot {
            limbs: self
                .bindings
                .iter()
                .map(|b| {
                    let l = self.last.limb(&b.follower_limb);
                    LeaderLimbSnapshot {
                        leader_limb: b.leader_limb.clone(),
                        follower_limb: b.follower_limb.clone(),
                        q: match l.map(|l| &l.payload) {
                            Some(LimbPayload::JointPositions(q)) => Some(q.clone()),
                            _ => None,
                        },
                        gripper: l.map_or(0.0, |l| l.gripper),
                        t0: None,
                    }
                })
                .collect(),
            active: self.active,
            timestamp: self.last.timestamp,
        }
    }
}
