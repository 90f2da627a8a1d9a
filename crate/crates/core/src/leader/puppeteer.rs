//! Virtual puppeteer: a kinematic replica whose joint readings come either
//! from a built-in script or from an external stream (tests, jog input).

use std::f64::consts::TAU;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use super::{
    compute_delta, validate_bindings, GestureDetector, Leader, LeaderCommand, LeaderError,
    LeaderLimbSnapshot, LeaderSnapshot, LimbBinding, LimbCommand, LimbPayload, PayloadKind,
};
use crate::config::{CommandMode, DeviceKind, GestureConfig, ScriptSpec};
use crate::mailbox::Mailbox;
use crate::robot_model::{JointVector, LimbChain, RobotModel};
use crate::se3::Pose;

/// Time the script idles at the base pose before each start gesture.
const IDLE_SECONDS: f64 = 0.3;
/// The script keeps the grippers closed this much longer than the hold time.
const GESTURE_MARGIN: f64 = 0.2;

/// Raw device readings, one entry per mapped limb in mapping order.
#[derive(Debug, Clone, PartialEq)]
pub struct PuppeteerReading {
    pub q: Vec<JointVector>,
    pub gripper_raw: Vec<f64>,
}

/// Producer side of a streamed puppeteer.
#[derive(Debug, Clone)]
pub struct PuppeteerFeed {
    mailbox: Mailbox<PuppeteerReading>,
    connected: Arc<AtomicBool>,
}

impl PuppeteerFeed {
    pub fn publish(&self, reading: PuppeteerReading) -> u64 {
        self.mailbox.publish(reading)
    }

    pub fn disconnect(&self) {
        self.connected.store(false, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Idle { until: f64 },
    StartGesture { from: f64 },
    Motion { from: f64 },
    EndGesture { from: f64 },
    Done,
}

#[derive(Debug, Clone)]
struct Script {
    spec: ScriptSpec,
    phase: Phase,
    cycles_done: usize,
}

#[derive(Debug)]
enum Source {
    Script(Script),
    Stream { feed: PuppeteerFeed, seen: u64 },
}

#[derive(Debug)]
pub struct VirtualPuppeteer {
    model: Arc<RobotModel>,
    bindings: Vec<LimbBinding>,
    /// Index into `model.limbs` per binding.
    limb_index: Vec<usize>,
    kinds: Vec<PayloadKind>,
    gesture: GestureConfig,
    start: GestureDetector,
    end: GestureDetector,
    source: Source,
    reading: PuppeteerReading,
    t0: Vec<Option<Pose>>,
    active: bool,
    now: f64,
}

/// Same joint layout: equal DoF and matching joint kinds, axes and limits.
pub fn same_layout(a: &LimbChain, b: &LimbChain) -> bool {
    a.dof() == b.dof()
        && a.movable_joints().zip(b.movable_joints()).all(|(x, y)| {
            x.kind == y.kind
                && (x.axis - y.axis).amax() < 1e-9
                && x.limit_lower == y.limit_lower
                && x.limit_upper == y.limit_upper
        })
}

/// Decides joint or end-effector payloads per binding.
pub fn resolve_kinds(
    mode: CommandMode,
    leader: &RobotModel,
    bindings: &[LimbBinding],
    follower: &RobotModel,
) -> Result<Vec<PayloadKind>, LeaderError> {
    bindings
        .iter()
        .map(|b| {
            let l = leader
                .limb(&b.leader_limb)
                .ok_or_else(|| LeaderError::Mapping(format!("leader has no limb '{}'", b.leader_limb)))?;
            let f = follower
                .limb(&b.follower_limb)
                .ok_or_else(|| LeaderError::Mapping(format!("follower has no limb '{}'", b.follower_limb)))?;
            let same = same_layout(l, f);
            match mode {
                CommandMode::Auto if same => Ok(PayloadKind::Joint),
                CommandMode::Auto | CommandMode::Eef => Ok(PayloadKind::Eef),
                CommandMode::Joint if same => Ok(PayloadKind::Joint),
                CommandMode::Joint => Err(LeaderError::Config(format!(
                    "joint-space commands need identical joint layouts, but '{}' ({} joints) and '{}' ({} joints) differ",
                    b.leader_limb,
                    l.dof(),
                    b.follower_limb,
                    f.dof()
                ))),
            }
        })
        .collect()
}

impl VirtualPuppeteer {
    fn build(
        model: Arc<RobotModel>,
        bindings: Vec<LimbBinding>,
        kinds: Vec<PayloadKind>,
        gesture: GestureConfig,
        source: Source,
    ) -> Result<Self, LeaderError> {
        validate_bindings(&bindings)?;
        if kinds.len() != bindings.len() {
            return Err(LeaderError::Config(
                "one payload kind per mapped limb".into(),
            ));
        }
        let limb_index = bindings
            .iter()
            .map(|b| {
                model.limb_index(&b.leader_limb).ok_or_else(|| {
                    LeaderError::Mapping(format!("puppeteer has no limb '{}'", b.leader_limb))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Source::Script(s) = &source {
            for &i in &limb_index {
                let n = s.spec.amplitude.len();
                if n != 1 && n != model.limbs[i].dof() {
                    return Err(LeaderError::Config(format!(
                        "script amplitude has {n} entries, limb '{}' has {} joints",
                        model.limbs[i].name,
                        model.limbs[i].dof()
                    )));
                }
            }
        }
        let reading = PuppeteerReading {
            q: limb_index
                .iter()
                .map(|&i| model.base_pose[i].clone())
                .collect(),
            gripper_raw: bindings.iter().map(|b| b.gripper_range[0]).collect(),
        };
        Ok(Self {
            start: GestureDetector::new(gesture.close_threshold, gesture.hold_seconds),
            end: GestureDetector::new(gesture.close_threshold, gesture.hold_seconds),
            t0: vec![None; bindings.len()],
            model,
            bindings,
            limb_index,
            kinds,
            gesture,
            source,
            reading,
            active: false,
            now: 0.0,
        })
    }

    /// Puppeteer that plays `script`: start gesture, sinusoidal excursion
    /// around the base pose, end gesture, repeated `script.cycles` times.
    pub fn scripted(
        model: Arc<RobotModel>,
        bindings: Vec<LimbBinding>,
        kinds: Vec<PayloadKind>,
        gesture: GestureConfig,
        script: ScriptSpec,
    ) -> Result<Self, LeaderError> {
        let source = Source::Script(Script {
            spec: script,
            phase: Phase::Idle {
                until: IDLE_SECONDS,
            },
            cycles_done: 0,
        });
        Self::build(model, bindings, kinds, gesture, source)
    }

    /// Puppeteer fed by an external stream of readings.
    pub fn streamed(
        model: Arc<RobotModel>,
        bindings: Vec<LimbBinding>,
        kinds: Vec<PayloadKind>,
        gesture: GestureConfig,
    ) -> Result<(Self, PuppeteerFeed), LeaderError> {
        let feed = PuppeteerFeed {
            mailbox: Mailbox::new(),
            connected: Arc::new(AtomicBool::new(true)),
        };
        let source = Source::Stream {
            feed: feed.clone(),
            seen: 0,
        };
        Ok((Self::build(model, bindings, kinds, gesture, source)?, feed))
    }

    pub fn payload_kind(&self, binding: usize) -> PayloadKind {
        self.kinds[binding]
    }

    fn chain(&self, binding: usize) -> &LimbChain {
        &self.model.limbs[self.limb_index[binding]]
    }

    fn base(&self, binding: usize) -> &JointVector {
        &self.model.base_pose[self.limb_index[binding]]
    }

    fn grippers(&self) -> Vec<f64> {
        self.bindings
            .iter()
            .zip(&self.reading.gripper_raw)
            .map(|(b, &raw)| b.normalize_gripper(raw))
            .collect()
    }

    fn near_base(&self) -> bool {
        (0..self.bindings.len())
            .all(|i| (&self.reading.q[i] - self.base(i)).amax() <= self.gesture.end_pose_tolerance)
    }

    fn scripted_reading(&self, script: &Script, now: f64) -> PuppeteerReading {
        let closed_for = self.gesture.hold_seconds + GESTURE_MARGIN;
        let (offset, grip): (f64, f64) = match script.phase {
            Phase::Idle { .. } | Phase::Done => (0.0, 0.0),
            Phase::StartGesture { from } | Phase::EndGesture { from } => {
                (0.0, if now - from < closed_for { 1.0 } else { 0.0 })
            }
            Phase::Motion { from } => {
                let x = TAU * (now - from) / script.spec.period_seconds;
                (
                    x.sin(),
                    script.spec.gripper_amplitude * 0.5 * (1.0 - x.cos()),
                )
            }
        };
        let q = (0..self.bindings.len())
            .map(|i| {
                let chain = self.chain(i);
                let amp = &script.spec.amplitude;
                let delta = JointVector::from_fn(chain.dof(), |j, _| {
                    offset * if amp.len() == 1 { amp[0] } else { amp[j] }
                });
                chain.clamp_to_limits(&(self.base(i) + delta))
            })
            .collect();
        let gripper_raw = self
            .bindings
            .iter()
            .map(|b| b.gripper_range[0] + grip * (b.gripper_range[1] - b.gripper_range[0]))
            .collect();
        PuppeteerReading { q, gripper_raw }
    }

    fn refresh(&mut self, now: f64) -> Result<(), LeaderError> {
        self.now = now;
        match &mut self.source {
            Source::Script(script) => {
                if let Phase::Idle { until } = script.phase {
                    if now >= until {
                        script.phase = Phase::StartGesture { from: until };
                    }
                }
                if let Phase::Motion { from } = script.phase {
                    if now - from >= script.spec.motion_seconds {
                        script.phase = Phase::EndGesture {
                            from: from + script.spec.motion_seconds,
                        };
                    }
                }
                let script = script.clone();
                self.reading = self.scripted_reading(&script, now);
            }
            Source::Stream { feed, seen } => {
                if !feed.connected.load(Ordering::SeqCst) {
                    return Err(LeaderError::Disconnected { last: None });
                }
                if let Some(s) = feed.mailbox.newer_than(*seen) {
                    *seen = s.seq;
                    let r = s.value;
                    if r.q.len() != self.bindings.len()
                        || r.gripper_raw.len() != self.bindings.len()
                    {
                        return Err(LeaderError::Input(
                            "reading does not match the limb mapping".into(),
                        ));
                    }
                    for (i, q) in r.q.iter().enumerate() {
                        if q.len() != self.chain(i).dof() {
                            return Err(LeaderError::Input(format!(
                                "reading for limb '{}' has {} joints",
                                self.bindings[i].leader_limb,
                                q.len()
                            )));
                        }
                    }
                    self.reading = r;
                }
            }
        }
        Ok(())
    }

    fn fk(&self, binding: usize) -> Pose {
        self.chain(binding)
            .forward_kinematics(&self.reading.q[binding])
            .expect("reading length checked")
    }

    fn command(&self, now: f64) -> LeaderCommand {
        let grippers = self.grippers();
        let limbs = self
            .bindings
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let payload = match self.kinds[i] {
                    PayloadKind::Joint => LimbPayload::JointPositions(self.reading.q[i].clone()),
                    PayloadKind::Eef => {
                        let tt = self.fk(i);
                        let t0 = self.t0[i].unwrap_or(tt);
                        LimbPayload::EefDelta(compute_delta(&t0, &tt, b.scale))
                    }
                };
                LimbCommand {
                    limb: b.follower_limb.clone(),
                    payload,
                    gripper: grippers[i],
                }
            })
            .collect();
        LeaderCommand {
            limbs,
            start_requested: false,
            end_requested: false,
            timestamp: now,
        }
    }
}

impl Leader for VirtualPuppeteer {
    fn kind(&self) -> DeviceKind {
        DeviceKind::Puppeteer
    }

    fn bindings(&self) -> &[LimbBinding] {
        &self.bindings
    }

    fn payload_kinds(&self) -> Vec<PayloadKind> {
        self.kinds.clone()
    }

    fn start_signal_check(&mut self, now: f64) -> bool {
        if self.refresh(now).is_err() {
            return false;
        }
        let g = self.grippers();
        if self.start.update(now, &g, true) {
            for i in 0..self.bindings.len() {
                self.t0[i] = Some(self.fk(i));
            }
            return true;
        }
        false
    }

    fn poll(&mut self, now: f64) -> Result<LeaderCommand, LeaderError> {
        if let Err(e) = self.refresh(now) {
            return Err(match e {
                LeaderError::Disconnected { .. } => LeaderError::Disconnected {
                    last: Some(Box::new(self.command(now))),
                },
                other => other,
            });
        }
        let mut cmd = self.command(now);
        if self.active {
            let near = self.near_base();
            cmd.end_requested = self.end.update(now, &self.grippers(), near);
        }
        Ok(cmd)
    }

    fn on_running(&mut self, now: f64) {
        self.active = true;
        self.end.reset();
        if let Source::Script(s) = &mut self.source {
            if matches!(s.phase, Phase::StartGesture { .. } | Phase::Idle { .. }) {
                s.phase = Phase::Motion { from: now };
            }
        }
    }

    fn end_session(&mut self, now: f64) {
        self.active = false;
        self.t0 = vec![None; self.bindings.len()];
        if let Source::Script(s) = &mut self.source {
            s.cycles_done += 1;
            s.phase = if s.cycles_done >= s.spec.cycles {
                Phase::Done
            } else {
                Phase::Idle {
                    until: now + IDLE_SECONDS,
                }
            };
        }
    }

    fn finished(&self) -> bool {
        matches!(&self.source, Source::Script(s) if s.phase == Phase::Done)
    }

    fn snapshot(&self) -> LeaderSnapshot {
        let grippers = self.grippers();
        LeaderSnapshot {
            limbs: self
                .bindings
                .iter()
                .enumerate()
                .map(|(i, b)| LeaderLimbSnapshot {
                    leader_limb: b.leader_limb.clone(),
                    follower_limb: b.follower_limb.clone(),
                    q: Some(self.reading.q[i].clone()),
                    gripper: grippers[i],
                    t0: self.t0[i],
                })
                .collect(),
            active: self.active,
            timestamp: self.now,
        }
    }

    fn model(&self) -> Option<&Arc<RobotModel>> {
        Some(&self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn replica() -> (VirtualPuppeteer, RobotModel) {
        let follower = fixtures::table_model();
        let leader = Arc::new(fixtures::puppeteer_model(
            fixtures::TABLE_REPLICA_LEADER_TOML,
        ));
        let cfg = fixtures::leader_config(fixtures::TABLE_REPLICA_LEADER_TOML);
        let bindings: Vec<_> = cfg.mapping.iter().map(LimbBinding::from_spec).collect();
        let kinds = resolve_kinds(CommandMode::Auto, &leader, &bindings, &follower).unwrap();
        let p = cfg.puppeteer.unwrap();
        (
            VirtualPuppeteer::scripted(leader, bindings, kinds, cfg.gesture, p.script).unwrap(),
            follower,
        )
    }

    #[test]
    fn identical_chain_gives_joint_payload() {
        let (mut p, _) = replica();
        assert_eq!(
            p.payload_kinds(),
            vec![PayloadKind::Joint, PayloadKind::Joint]
        );
        let c = p.poll(0.0).unwrap();
        assert!(matches!(c.limbs[0].payload, LimbPayload::JointPositions(_)));
    }

    #[test]
    fn different_chain_gives_eef_payload() {
        let follower = fixtures::table_model();
        let leader = fixtures::puppeteer_model(fixtures::DUAL_PUPPETEER_LEADER_TOML);
        let cfg = fixtures::leader_config(fixtures::DUAL_PUPPETEER_LEADER_TOML);
        let bindings: Vec<_> = cfg.mapping.iter().map(LimbBinding::from_spec).collect();
        assert_eq!(
            resolve_kinds(CommandMode::Auto, &leader, &bindings, &follower).unwrap(),
            vec![PayloadKind::Eef, PayloadKind::Eef]
        );
        assert!(matches!(
            resolve_kinds(CommandMode::Joint, &leader, &bindings, &follower),
            Err(LeaderError::Config(_))
        ));
    }

    #[test]
    fn script_start_and_end_gestures() {
        let (mut p, _) = replica();
        let dt = 0.02;
        let mut t = 0.0;
        let mut started = None;
        for _ in 0..200 {
            if p.start_signal_check(t) {
                started = Some(t);
                break;
            }
            t += dt;
        }
        let started = started.expect("start gesture");
        assert!(
            (started - (IDLE_SECONDS + 0.5)).abs() < 2.0 * dt,
            "{started}"
        );
        p.on_running(t);
        let mut ended = None;
        let mut max_excursion: f64 = 0.0;
        for _ in 0..1000 {
            t += dt;
            let c = p.poll(t).unwrap();
            if let LimbPayload::JointPositions(q) = &c.limbs[0].payload {
                max_excursion = max_excursion.max((q - p.base(0)).amax());
            }
            if c.end_requested {
                ended = Some(t);
                break;
            }
        }
        let ended = ended.expect("end gesture");
        assert!((max_excursion - 0.2).abs() < 1e-2);
        assert!(ended - started > 4.0);
        p.end_session(t);
        assert!(!p.finished());
    }

    #[test]
    fn eef_delta_identity_at_start() {
        let follower = fixtures::arm7_model();
        let leader = Arc::new(fixtures::ur5_model());
        let bindings = vec![LimbBinding {
            scale: 2.0,
            ..LimbBinding::identity("arm")
        }];
        let (mut p, feed) = VirtualPuppeteer::streamed(
            leader.clone(),
            bindings,
            vec![PayloadKind::Eef],
            GestureConfig::default(),
        )
        .unwrap();
        let c = p.poll(0.0).unwrap();
        match &c.limbs[0].payload {
            LimbPayload::EefDelta(d) => assert!(d.approx_eq(&Pose::identity(), 1e-12)),
            other => panic!("{other:?}"),
        }
        // hold-last: silent device, identical payloads
        let a = p.poll(0.02).unwrap();
        let b = p.poll(0.04).unwrap();
        assert!(a.same_payload(&b));
        assert_ne!(a.timestamp, b.timestamp);
        feed.disconnect();
        assert!(matches!(
            p.poll(0.06),
            Err(LeaderError::Disconnected { last: Some(_) })
        ));
        let _ = follower;
    }
}
