//! The teleoperation session: wait for a start signal, approach the mirrored
//! pose, run the control loop until the end signal, return to base, repeat.
//!
//! [`Session`] owns the pipeline and the follower and advances one loop
//! period per [`Session::tick`]. Time is a tick counter times the loop
//! period, so runs without wall-clock pacing are fully deterministic.

mod events;
mod setup;
mod state;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use thiserror::Error;

use crate::config::ConfigError;
use crate::feedback::{
    FeedbackChannels, FeedbackComputer, FeedbackError, FeedbackLoop, FeedbackTorques,
};
use crate::follower::{FollowerError, FollowerSim, FollowerState};
use crate::leader::{Leader, LeaderCommand, LeaderError};
use crate::mailbox::Mailbox;
use crate::recording::{
    RecordField, RecordHeader, Recorder, StepRecord, StoredCommand, StoredFeedback, StoredFlags,
    StoredPose,
};
use crate::robot_model::{JointVector, ModelError, RobotModel};
use crate::se3::Pose;
use crate::teleop::{
    check_mapping, ControlSignal, LimbSignal, PipelineError, SafetyFlags, TeleopPipeline,
};

pub use events::{EventFeed, NoticeKind, SessionNotice, FEED_CAPACITY};
pub use setup::{
    assemble, build_leader, build_session, load_follower, BuiltSession, SessionConfig,
};
pub use state::{is_legal, next_state, SessionEvent, SessionState, TRANSITIONS};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Leader(#[from] LeaderError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Follower(#[from] FollowerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot return to the base pose: {0}")]
    ResetBlocked(FollowerError),
    #[error("invalid session options: {0}")]
    Options(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordOptions {
    /// First file; later Running intervals get `-1`, `-2`, ... suffixes.
    pub path: PathBuf,
    pub fields: Vec<RecordField>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOptions {
    /// Loop period, seconds.
    pub dt: f64,
    pub approach_min_seconds: f64,
    pub record: Option<RecordOptions>,
    /// Pace ticks against the wall clock.
    pub realtime: bool,
}

impl SessionOptions {
    pub fn simulated(dt: f64) -> Self {
        Self {
            dt,
            approach_min_seconds: 1.0,
            record: None,
            realtime: false,
        }
    }
}

/// What a limb looks like right now, for display.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbView {
    pub name: String,
    pub q_actual: JointVector,
    pub q_cmd: JointVector,
    pub gripper_actual: f64,
    pub gripper_cmd: f64,
    pub t_actual: Pose,
    pub t_cmd: Pose,
    pub flags: SafetyFlags,
    /// Root-frame origins of the joint frames, then the EEF.
    pub frames: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSnapshot {
    pub state: SessionState,
    pub timestamp: f64,
    pub tick: u64,
    pub limbs: Vec<LimbView>,
    pub recording: Option<PathBuf>,
    pub sessions_completed: usize,
}

fn build_snapshot(
    model: &RobotModel,
    state: SessionState,
    tick: u64,
    timestamp: f64,
    follower: &FollowerState,
    signal: &ControlSignal,
    recording: Option<PathBuf>,
    sessions_completed: usize,
) -> SessionSnapshot {
    let limbs = model
        .limbs
        .iter()
        .zip(&follower.limbs)
        .zip(&signal.limbs)
        .map(|((chain, f), s)| LimbView {
            name: chain.name.clone(),
            q_actual: f.q_actual.clone(),
            q_cmd: s.q_cmd.clone(),
            gripper_actual: f.gripper_actual,
            gripper_cmd: s.gripper_cmd,
            t_actual: f.t_actual,
            t_cmd: s.t_cmd,
            flags: s.flags,
            frames: chain
                .frame_positions(&f.q_actual)
                .map(|fr| {
                    fr.iter()
                        .map(|p| chain.mount.transform_point(p.translation()))
                        .collect()
                })
                .unwrap_or_default(),
        })
        .collect();
    SessionSnapshot {
        state,
        timestamp,
        tick,
        limbs,
        recording,
        sessions_completed,
    }
}

/// Running statistics over Running ticks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TickStats {
    pub count: u64,
    pub total: Duration,
    pub max: Duration,
}

impl TickStats {
    fn add(&mut self, d: Duration) {
        self.count += 1;
        self.total += d;
        self.max = self.max.max(d);
    }

    pub fn mean(&self) -> Duration {
        if self.count == 0 {
            Duration::ZERO
        } else {
            self.total / self.count as u32
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionStats {
    pub transitions: Vec<(SessionState, SessionState)>,
    pub sessions_completed: usize,
    pub running_ticks: u64,
    /// poll → interpret → filter → follower step, per Running tick.
    pub compute: TickStats,
    /// Wall time between consecutive Running ticks (paced runs).
    pub period: TickStats,
    pub ik_failures: u64,
}

/// Gym-style observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub state: SessionState,
    pub timestamp: f64,
    pub follower: FollowerState,
    pub signal: ControlSignal,
    pub feedback: Option<FeedbackTorques>,
}

#[derive(Debug)]
struct Pacer {
    period: Duration,
    next: Instant,
}

impl Pacer {
    fn wait(&mut self) {
        self.next += self.period;
        let now = Instant::now();
        if self.next > now {
            std::thread::sleep(self.next - now);
        } else {
            // fell behind: do not try to catch up with a burst of ticks
            self.next = now;
        }
    }
}

/// Parts a session is assembled from.
pub struct SessionParts {
    pub leader: Box<dyn Leader>,
    pub pipeline: TeleopPipeline,
    pub follower: FollowerSim,
    pub feedback: FeedbackComputer,
}

pub struct Session {
    leader: Box<dyn Leader>,
    pipeline: TeleopPipeline,
    follower: FollowerSim,
    feedback: FeedbackComputer,
    feedback_thread: Option<FeedbackLoop>,
    channels: FeedbackChannels,
    snapshots: Mailbox<SessionSnapshot>,
    events: EventFeed,
    cancel: Arc<AtomicBool>,
    state: SessionState,
    tick: u64,
    dt: f64,
    approach_min: f64,
    prev: ControlSignal,
    last_cmd: Option<LeaderCommand>,
    last_feedback: Option<FeedbackTorques>,
    recorder: Option<Recorder>,
    header: RecordHeader,
    /// Follower limb index per binding.
    mapped: Vec<usize>,
    running_since: f64,
    last_running_wall: Option<Instant>,
    pacer: Option<Pacer>,
    stats: SessionStats,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("state", &self.state)
            .field("tick", &self.tick)
            .field("dt", &self.dt)
            .finish()
    }
}

impl Session {
    /// Checks the leader/follower pairing and sets the session up in
    /// `Initializing`. Nothing moves until the first tick.
    pub fn new(parts: SessionParts, options: SessionOptions) -> Result<Self, SessionError> {
        let SessionParts {
            leader,
            pipeline,
            follower,
            feedback,
        } = parts;
        if !(options.dt > 0.0 && options.dt.is_finite()) {
            return Err(SessionError::Options("loop period must be positive".into()));
        }
        if !(options.approach_min_seconds >= 0.0) {
            return Err(SessionError::Options(
                "approach_min_seconds must be non-negative".into(),
            ));
        }
        if (pipeline.safety().dt - options.dt).abs() > 1e-12 {
            return Err(SessionError::Options(format!(
                "pipeline loop period {} differs from the session's {}",
                pipeline.safety().dt,
                options.dt
            )));
        }
        if !Arc::ptr_eq(pipeline.model(), follower.model())
            && **pipeline.model() != **follower.model()
        {
            return Err(SessionError::Options(
                "pipeline and follower use different models".into(),
            ));
        }
        let model = pipeline.model().clone();
        let kinds = leader.payload_kinds();
        check_mapping(
            &model,
            leader.bindings(),
            &kinds,
            leader.model().map(|m| &**m),
        )?;
        let mapped: Vec<usize> = leader
            .bindings()
            .iter()
            .map(|b| {
                model
                    .limb_index(&b.follower_limb)
                    .expect("checked by check_mapping")
            })
            .collect();
        let header = RecordHeader::new(
            mapped
                .iter()
                .map(|&i| model.limbs[i].name.clone())
                .collect(),
            mapped
                .iter()
                .map(|&i| model.limbs[i].joint_names())
                .collect(),
            kinds.iter().map(|k| k.as_str().to_string()).collect(),
            Vec::new(),
            options.dt,
        );
        let recorder = options.record.map(|r| Recorder::new(r.path, r.fields));
        let prev = ControlSignal::hold(follower.state());
        Ok(Self {
            leader,
            pipeline,
            follower,
            feedback,
            feedback_thread: None,
            channels: FeedbackChannels::default(),
            snapshots: Mailbox::new(),
            events: EventFeed::default(),
            cancel: Arc::new(AtomicBool::new(false)),
            state: SessionState::Initializing,
            tick: 0,
            dt: options.dt,
            approach_min: options.approach_min_seconds,
            prev,
            last_cmd: None,
            last_feedback: None,
            recorder,
            header,
            mapped,
            running_since: 0.0,
            last_running_wall: None,
            pacer: options.realtime.then(|| Pacer {
                period: Duration::from_secs_f64(options.dt),
                next: Instant::now(),
            }),
            stats: SessionStats::default(),
        })
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    /// Session clock, seconds.
    pub fn now(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    pub fn events(&self) -> &EventFeed {
        &self.events
    }

    pub fn snapshots(&self) -> &Mailbox<SessionSnapshot> {
        &self.snapshots
    }

    pub fn channels(&self) -> &FeedbackChannels {
        &self.channels
    }

    /// Setting the flag ends the session cooperatively: the follower parks
    /// at its base pose and the state becomes `Shutdown`.
    pub fn cancel_flag(&self) -> Arc<AtomicBool> {
        self.cancel.clone()
    }

    pub fn follower(&self) -> &FollowerSim {
        &self.follower
    }

    pub fn follower_mut(&mut self) -> &mut FollowerSim {
        &mut self.follower
    }

    pub fn pipeline(&self) -> &TeleopPipeline {
        &self.pipeline
    }

    pub fn leader(&self) -> &dyn Leader {
        &*self.leader
    }

    pub fn last_signal(&self) -> &ControlSignal {
        &self.prev
    }

    pub fn last_feedback(&self) -> Option<&FeedbackTorques> {
        self.last_feedback.as_ref()
    }

    pub fn header(&self) -> &RecordHeader {
        &self.header
    }

    /// Files written so far with their step counts.
    pub fn recorded_files(&self) -> Vec<(PathBuf, usize)> {
        self.recorder
            .as_ref()
            .map(|r| r.files().to_vec())
            .unwrap_or_default()
    }

    pub fn recorder_warnings(&self) -> Vec<String> {
        self.recorder
            .as_ref()
            .map(|r| r.warnings().to_vec())
            .unwrap_or_default()
    }

    /// Moves feedback to a background thread at the configured rate.
    /// Recorded feedback is then the thread's latest publication.
    pub fn start_feedback_thread(&mut self) {
        if self.feedback_thread.is_none() {
            self.feedback_thread = Some(FeedbackLoop::spawn(
                self.feedback.clone(),
                self.channels.clone(),
                self.dt,
            ));
        }
    }

    /// Stops the feedback thread, returning how many torque sets it published.
    pub fn stop_feedback_thread(&mut self) -> u64 {
        self.feedback_thread.take().map_or(0, FeedbackLoop::stop)
    }

    fn transition(&mut self, event: SessionEvent) {
        let Some(to) = next_state(self.state, event) else {
            log::debug!("event {event:?} ignored in state {}", self.state);
            return;
        };
        let from = self.state;
        log::info!("session: {from} -> {to}");
        self.state = to;
        self.stats.transitions.push((from, to));
        self.events
            .push(self.now(), NoticeKind::Transition { from, to });
        if let Some(r) = self.recorder.as_mut() {
            r.flush();
        }
        self.publish_snapshot();
    }

    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.events
            .push(self.now(), NoticeKind::Warning { message });
    }

    fn error(&mut self, message: String) {
        log::error!("{message}");
        self.events.push(self.now(), NoticeKind::Error { message });
    }

    fn current_recording(&self) -> Option<PathBuf> {
        match (self.state, &self.recorder) {
            (SessionState::Running, Some(r)) if !r.is_disabled() => {
                r.files().last().map(|(p, _)| p.clone())
            }
            _ => None,
        }
    }

    fn publish_snapshot(&self) {
        self.channels.leader.publish(self.leader.snapshot());
        self.snapshots.publish(build_snapshot(
            self.pipeline.model(),
            self.state,
            self.tick,
            self.now(),
            self.follower.state(),
            &self.prev,
            self.current_recording(),
            self.stats.sessions_completed,
        ));
    }

    /// One loop period of idle time.
    fn advance(&mut self) {
        self.tick += 1;
        if let Some(p) = self.pacer.as_mut() {
            p.wait();
        }
    }

    /// Quintic move of the whole follower; every step is one tick.
    fn move_follower(&mut self, target: &[JointVector]) -> Result<(), FollowerError> {
        let Self {
            follower,
            pacer,
            tick,
            snapshots,
            pipeline,
            state,
            prev,
            stats,
            channels,
            dt,
            ..
        } = self;
        let (model, state, dt) = (pipeline.model().clone(), *state, *dt);
        let completed = stats.sessions_completed;
        let min_duration = self.approach_min;
        let result = follower.move_to(target, min_duration, dt, &mut |s| {
            *tick += 1;
            for (l, f) in prev.limbs.iter_mut().zip(&s.limbs) {
                l.q_cmd = f.q_actual.clone();
                l.t_cmd = f.t_actual;
            }
            channels.follower.publish(s.clone());
            snapshots.publish(build_snapshot(
                &model,
                state,
                *tick,
                *tick as f64 * dt,
                s,
                prev,
                None,
                completed,
            ));
            if let Some(p) = pacer.as_mut() {
                p.wait();
            }
        });
        self.prev.timestamp = self.now();
        result.map(|_| ())
    }

    fn base_pose(&self) -> Vec<JointVector> {
        self.pipeline.model().base_pose.clone()
    }

    fn at_base(&self) -> bool {
        self.follower.state().q() == self.base_pose()
    }

    /// Parks at base (if needed) and enters `Shutdown`.
    fn shutdown(&mut self, event: SessionEvent) {
        if !self.at_base() {
            let base = self.base_pose();
            if let Err(e) = self.move_follower(&base) {
                self.error(format!("parking at the base pose failed: {e}"));
            }
        }
        self.transition(event);
    }

    /// Advances the state machine by one step and returns the new state.
    pub fn tick(&mut self) -> Result<SessionState, SessionError> {
        match self.state {
            SessionState::Initializing => {
                // the follower is created at its base pose
                self.publish_snapshot();
                self.transition(SessionEvent::Initialized);
            }
            SessionState::AtBasePose => self.transition(SessionEvent::FeedbackStarted),
            SessionState::WaitingForStart => self.wait_for_start(None)?,
            SessionState::Approaching => {
                let now = self.now();
                match self.leader.poll(now) {
                    Ok(cmd) => self.approach(cmd)?,
                    Err(LeaderError::Disconnected { .. }) => {
                        self.warn("leader disconnected before the approach".into());
                        self.leader.end_session(now);
                        self.transition(SessionEvent::Disconnect);
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            SessionState::Running => {
                if self.cancel.load(Ordering::Relaxed) {
                    self.end_running(SessionEvent::Cancel);
                } else {
                    let now = self.now();
                    match self.leader.poll(now) {
                        Ok(cmd) => self.running_step(cmd),
                        Err(LeaderError::Disconnected { .. }) => {
                            self.warn("leader disconnected; resetting".into());
                            self.end_running(SessionEvent::Disconnect);
                        }
                        Err(e) => {
                            // hold the last good command rather than stop
                            self.warn(format!("leader error: {e}"));
                            let cmd = self.last_cmd.clone();
                            match cmd {
                                Some(mut c) => {
                                    c.timestamp = now;
                                    c.end_requested = false;
                                    self.running_step(c)
                                }
                                None => self.end_running(SessionEvent::Disconnect),
                            }
                        }
                    }
                }
            }
            SessionState::Resetting => self.reset()?,
            SessionState::Shutdown => {}
        }
        Ok(self.state)
    }

    fn wait_for_start(&mut self, gym_cmd: Option<&LeaderCommand>) -> Result<(), SessionError> {
        let now = self.now();
        if self.cancel.load(Ordering::Relaxed) {
            self.shutdown(SessionEvent::Cancel);
            return Ok(());
        }
        let started = match gym_cmd {
            Some(c) => c.start_requested,
            None => {
                if self.leader.finished() {
                    self.shutdown(SessionEvent::LeaderFinished);
                    return Ok(());
                }
                self.leader.start_signal_check(now)
            }
        };
        if started {
            self.pipeline.capture_origin(&self.follower.state().q())?;
            self.transition(SessionEvent::StartSignal);
        } else {
            self.follower.idle(self.dt);
            self.channels
                .follower
                .publish(self.follower.state().clone());
            self.advance();
            self.publish_snapshot();
            self.refresh_feedback(None);
        }
        Ok(())
    }

    /// Moves to the pose the first command asks for, then enters Running.
    fn approach(&mut self, cmd: LeaderCommand) -> Result<(), SessionError> {
        let now = self.now();
        let hold = self.follower.state().q();
        let targets = self
            .pipeline
            .interpret(&cmd, self.follower.state(), &hold)?;
        let model = self.pipeline.model().clone();
        let mut qpos = Vec::with_capacity(targets.len());
        for (t, chain) in targets.iter().zip(&model.limbs) {
            if let Some(ik) = t.ik.filter(|ik| !ik.converged) {
                self.warn(format!(
                    "approach target for limb '{}' is not reachable; using the best IK result ({:.4} m, {:.4} rad off)",
                    chain.name, ik.residual_position, ik.residual_orientation
                ));
            }
            qpos.push(chain.clamp_to_limits(&t.q));
        }
        if let Err(e) = self.move_follower(&qpos) {
            self.error(format!("approach aborted: {e}"));
            self.leader.end_session(self.now());
            self.transition(SessionEvent::ApproachFailed);
            return Ok(());
        }
        self.prev = ControlSignal {
            limbs: targets
                .iter()
                .zip(&qpos)
                .map(|(t, q)| LimbSignal {
                    q_cmd: q.clone(),
                    gripper_cmd: t.gripper,
                    t_cmd: t.t_cmd,
                    flags: SafetyFlags::default(),
                    ik: t.ik,
                })
                .collect(),
            timestamp: now,
        };
        let now = self.now();
        self.running_since = now;
        self.last_running_wall = None;
        self.last_cmd = Some(cmd);
        self.leader.on_running(now);
        if let Some(r) = self.recorder.as_mut() {
            r.begin_session(&self.header);
            if let Some((path, _)) = r.files().last().filter(|_| !r.is_disabled()) {
                let path = path.clone();
                self.events.push(now, NoticeKind::RecordingStarted { path });
            }
        }
        self.transition(SessionEvent::ApproachDone);
        Ok(())
    }

    fn refresh_feedback(&mut self, teleop: Option<()>) {
        if self.feedback_thread.is_some() {
            self.last_feedback = self.channels.out.latest_value();
            return;
        }
        let leader = self.leader.snapshot();
        let follower = teleop.map(|_| (&self.prev, self.follower.state()));
        let t = self.feedback.compute(&leader, follower, self.now());
        self.channels.out.publish(t.clone());
        self.last_feedback = Some(t);
    }

    /// poll → interpret → safety filter → follower step, then record.
    fn running_step(&mut self, cmd: LeaderCommand) {
        let started = Instant::now();
        let now = self.now();
        let prev_q = self.prev.q_cmd();
        let signal = match self
            .pipeline
            .process(&cmd, self.follower.state(), &prev_q, now)
        {
            Ok(s) => s,
            Err(e) => {
                self.warn(format!("command rejected: {e}"));
                let mut s = self.prev.clone();
                s.timestamp = now;
                s
            }
        };
        self.follower.step(&signal, self.dt);
        self.stats.compute.add(started.elapsed());
        let wall = Instant::now();
        if let Some(last) = self.last_running_wall {
            self.stats.period.add(wall - last);
        }
        self.last_running_wall = Some(wall);
        self.stats.running_ticks += 1;
        if signal
            .limbs
            .iter()
            .any(|l| l.ik.is_some_and(|ik| !ik.converged))
        {
            self.stats.ik_failures += 1;
        }

        self.prev = signal;
        self.channels.signal.publish(self.prev.clone());
        self.channels
            .follower
            .publish(self.follower.state().clone());
        self.refresh_feedback(Some(()));
        self.record(&cmd, now);
        let end = cmd.end_requested;
        self.last_cmd = Some(cmd);
        self.advance();
        self.publish_snapshot();
        if end {
            self.end_running(SessionEvent::EndSignal);
        }
    }

    fn record(&mut self, cmd: &LeaderCommand, now: f64) {
        let Some(rec) = self.recorder.as_mut() else {
            return;
        };
        let state = self.follower.state();
        let m = &self.mapped;
        let step = StepRecord {
            timestamp: now - self.running_since,
            command: StoredCommand::from(cmd),
            q_cmd: m
                .iter()
                .map(|&i| self.prev.limbs[i].q_cmd.iter().copied().collect())
                .collect(),
            q_actual: m
                .iter()
                .map(|&i| state.limbs[i].q_actual.iter().copied().collect())
                .collect(),
            t_cmd: m
                .iter()
                .map(|&i| StoredPose::from(&self.prev.limbs[i].t_cmd))
                .collect(),
            t_actual: m
                .iter()
                .map(|&i| StoredPose::from(&state.limbs[i].t_actual))
                .collect(),
            gripper: m.iter().map(|&i| state.limbs[i].gripper_actual).collect(),
            flags: m
                .iter()
                .map(|&i| {
                    let l = &self.prev.limbs[i];
                    StoredFlags {
                        limit: l.flags.limit,
                        velocity: l.flags.velocity,
                        collision: l.flags.collision,
                        ik_converged: l.ik.is_none_or(|ik| ik.converged),
                    }
                })
                .collect(),
            feedback: self.last_feedback.as_ref().map(|f| {
                f.limbs
                    .iter()
                    .map(|l| StoredFeedback {
                        limb: l.follower_limb.clone(),
                        bias: l.bias.iter().copied().collect(),
                        tracking: l.tracking.iter().copied().collect(),
                        gripper: l.gripper,
                    })
                    .collect()
            }),
        };
        rec.record(&step);
    }

    fn end_running(&mut self, event: SessionEvent) {
        let now = self.now();
        self.leader.end_session(now);
        if let Some(r) = self.recorder.as_mut() {
            r.end_session();
            if let Some((path, steps)) = r.files().last().filter(|_| !r.is_disabled()).cloned() {
                self.events
                    .push(now, NoticeKind::RecordingFinished { path, steps });
            }
        }
        self.stats.sessions_completed += 1;
        if event == SessionEvent::Cancel {
            self.shutdown(event);
        } else {
            self.transition(event);
        }
    }

    fn reset(&mut self) -> Result<(), SessionError> {
        let base = self.base_pose();
        match self.move_follower(&base) {
            Ok(()) => {
                self.prev = ControlSignal::hold(self.follower.state());
                self.transition(SessionEvent::ResetDone);
                Ok(())
            }
            Err(e) => {
                self.error(format!("reset failed: {e}"));
                self.transition(SessionEvent::ResetFailed);
                Err(SessionError::ResetBlocked(e))
            }
        }
    }

    /// Ticks until `Shutdown` or until `max_ticks` clock ticks have elapsed.
    pub fn run(&mut self, max_ticks: Option<u64>) -> Result<SessionState, SessionError> {
        while self.state != SessionState::Shutdown {
            if max_ticks.is_some_and(|m| self.tick >= m) {
                break;
            }
            self.tick()?;
        }
        Ok(self.state)
    }

    pub fn observe(&self) -> Observation {
        Observation {
            state: self.state,
            timestamp: self.now(),
            follower: self.follower.state().clone(),
            signal: self.prev.clone(),
            feedback: self.last_feedback.clone(),
        }
    }

    /// Gym-style step driven by `cmd` instead of the leader's own output.
    ///
    /// Waiting: `cmd.start_requested` starts a session and approaches the
    /// pose `cmd` asks for. Running: one control step; `cmd.end_requested`
    /// then resets to base. Other states just tick.
    pub fn act(&mut self, cmd: LeaderCommand) -> Result<Observation, SessionError> {
        match self.state {
            SessionState::WaitingForStart => {
                self.wait_for_start(Some(&cmd))?;
                if self.state == SessionState::Approaching {
                    self.approach(cmd)?;
                }
            }
            SessionState::Running => {
                if self.cancel.load(Ordering::Relaxed) {
                    self.end_running(SessionEvent::Cancel);
                } else {
                    self.running_step(cmd);
                    if self.state == SessionState::Resetting {
                        self.reset()?;
                    }
                }
            }
            _ => {
                self.tick()?;
            }
        }
        Ok(self.observe())
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.stop_feedback_thread();
    }
}
