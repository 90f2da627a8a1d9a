//! Force feedback for the leader: a bias torque pulling the leader toward its
//! base pose, and a tracking torque from the leader/follower discrepancy.
//!
//! Tracking is joint-space when the limb is commanded with joint positions
//! (same joint layout on both sides) and task-space otherwise: the follower's
//! EEF error `log(T_actual⁻¹·T_cmd)` is mapped through the damped
//! pseudo-inverse of the leader Jacobian, `τ = −Kp·J⁺·Δx`.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Matrix6, Matrix6xX, Vector6};
use thiserror::Error;

use crate::config::FeedbackConfig;
use crate::follower::FollowerState;
use crate::leader::{LeaderSnapshot, LimbBinding, PayloadKind};
use crate::mailbox::{Mailbox, Stamped};
use crate::robot_model::{JointVector, RobotModel};
use crate::se3::Pose;
use crate::teleop::ControlSignal;

/// Snapshots older than this many loop periods produce no tracking torque.
pub const STALE_PERIODS: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeedbackError {
    #[error("vector lengths differ: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("feedback config: {0}")]
    Config(String),
    #[error("leader limb '{0}' is not in the leader model")]
    UnknownLimb(String),
}

fn check_len(a: &JointVector, b: &JointVector) -> Result<(), FeedbackError> {
    if a.len() != b.len() {
        return Err(FeedbackError::Dimension(a.len(), b.len()));
    }
    Ok(())
}

/// Componentwise clip to `±limit`. Non-finite components become zero.
pub fn clip(v: JointVector, limit: f64) -> JointVector {
    v.map(|x| {
        if x.is_finite() {
            x.clamp(-limit, limit)
        } else {
            0.0
        }
    })
}

/// `gain·(q_base − q_leader)`: restoring, zero at the base pose.
pub fn bias_torque(
    q_leader: &JointVector,
    q_base: &JointVector,
    gain: f64,
    limit: f64,
) -> Result<JointVector, FeedbackError> {
    check_len(q_leader, q_base)?;
    Ok(clip((q_base - q_leader) * gain, limit))
}

/// `−gain·(q_leader − q_follower)`: pushes the leader toward the follower.
pub fn tracking_torque_joint(
    q_leader: &JointVector,
    q_follower: &JointVector,
    gain: f64,
    limit: f64,
) -> Result<JointVector, FeedbackError> {
    check_len(q_leader, q_follower)?;
    Ok(clip((q_leader - q_follower) * -gain, limit))
}

/// Follower EEF error as a body twist at `T_actual`, `[v; ω]`.
pub fn task_error(t_actual: &Pose, t_cmd: &Pose) -> Vector6<f64> {
    t_actual.between(t_cmd).log().to_vector()
}

/// Body twist `dx` re-expressed in the leader base frame, given the leader's
/// current EEF rotation. Translation is divided by the mapping scale.
pub fn to_leader_frame(
    dx: &Vector6<f64>,
    leader_eef_rotation: &Matrix3<f64>,
    scale: f64,
) -> Vector6<f64> {
    let v = leader_eef_rotation * dx.fixed_rows::<3>(0) / scale;
    let w = leader_eef_rotation * dx.fixed_rows::<3>(3);
    Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z)
}

/// `J⁺·dx` with `J⁺ = Jᵀ(JJᵀ + λ²I)⁻¹`.
pub fn damped_pinv_apply(
    jacobian: &Matrix6xX<f64>,
    dx: &Vector6<f64>,
    damping: f64,
) -> JointVector {
    let a: Matrix6<f64> =
        jacobian * jacobian.transpose() + Matrix6::identity() * (damping * damping);
    let y = match a.cholesky() {
        Some(c) => c.solve(dx),
        None => a
            .pseudo_inverse(1e-12)
            .map(|p| p * dx)
            .unwrap_or_else(|_| Vector6::zeros()),
    };
    jacobian.transpose() * y
}

/// `−kp·J⁺·dx`, clipped. `dx` must already be in the Jacobian's frame.
pub fn tracking_torque_task(
    dx: &Vector6<f64>,
    jacobian: &Matrix6xX<f64>,
    kp: f64,
    damping: f64,
    limit: f64,
) -> JointVector {
    clip(damped_pinv_apply(jacobian, dx, damping) * -kp, limit)
}

/// `gain·(g_leader − g_follower)`, clipped. Positive resists closing.
pub fn gripper_torque(g_leader: f64, g_follower: f64, gain: f64, limit: f64) -> f64 {
    let t = gain * (g_leader - g_follower);
    if t.is_finite() {
        t.clamp(-limit, limit)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimbFeedback {
    pub leader_limb: String,
    pub follower_limb: String,
    /// Leader joint space; empty for leaders without joints.
    pub bias: JointVector,
    pub tracking: JointVector,
    pub gripper: f64,
    /// Follower EEF error in the leader base frame, `[v; ω]`, for display.
    pub eef_error: Option<[f64; 6]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackTorques {
    pub limbs: Vec<LimbFeedback>,
    pub timestamp: f64,
}

impl FeedbackTorques {
    pub fn max_abs(&self) -> f64 {
        self.limbs
            .iter()
            .flat_map(|l| {
                l.bias
                    .iter()
                    .chain(l.tracking.iter())
                    .copied()
                    .chain([l.gripper])
            })
            .fold(0.0, |m: f64, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone)]
struct LimbPlan {
    binding: LimbBinding,
    kind: PayloadKind,
    follower: usize,
    leader: Option<usize>,
}

/// Feedback for one leader/follower pairing. Pure: the same inputs always
/// give the same torques, so the threaded loop and the deterministic stepper
/// share it.
#[derive(Debug, Clone)]
pub struct FeedbackComputer {
    cfg: FeedbackConfig,
    leader_model: Option<Arc<RobotModel>>,
    plan: Vec<LimbPlan>,
}

impl FeedbackComputer {
    pub fn new(
        cfg: FeedbackConfig,
        leader_model: Option<Arc<RobotModel>>,
        bindings: &[LimbBinding],
        kinds: &[PayloadKind],
        follower: &RobotModel,
    ) -> Result<Self, FeedbackError> {
        cfg.validate().map_err(FeedbackError::Config)?;
        let plan = bindings
            .iter()
            .zip(kinds)
            .map(|(b, &kind)| {
                let f = follower.limb_index(&b.follower_limb).ok_or_else(|| {
                    FeedbackError::Config(format!("follower has no limb '{}'", b.follower_limb))
                })?;
                let l = match &leader_model {
                    Some(m) => Some(
                        m.limb_index(&b.leader_limb)
                            .ok_or_else(|| FeedbackError::UnknownLimb(b.leader_limb.clone()))?,
                    ),
                    None => None,
                };
                Ok(LimbPlan {
                    binding: b.clone(),
                    kind,
                    follower: f,
                    leader: l,
                })
            })
            .collect::<Result<Vec<_>, FeedbackError>>()?;
        Ok(Self {
            cfg,
            leader_model,
            plan,
        })
    }

    pub fn config(&self) -> &FeedbackConfig {
        &self.cfg
    }

    /// Torques for the current snapshots. `follower` is `None` when the
    /// teleop side is stale or not running: tracking is then zero.
    pub fn compute(
        &self,
        leader: &LeaderSnapshot,
        follower: Option<(&ControlSignal, &FollowerState)>,
        timestamp: f64,
    ) -> FeedbackTorques {
        let clip_to = self.cfg.torque_clip;
        let limbs = self
            .plan
            .iter()
            .map(|p| {
                let snap = leader
                    .limbs
                    .iter()
                    .find(|l| l.leader_limb == p.binding.leader_limb);
                let chain_q = match (
                    &self.leader_model,
                    p.leader,
                    snap.and_then(|s| s.q.as_ref()),
                ) {
                    (Some(m), Some(i), Some(q)) if q.len() == m.limbs[i].dof() => Some((m, i, q)),
                    _ => None,
                };
                let dof = chain_q.map_or(0, |(m, i, _)| m.limbs[i].dof());
                let bias = match chain_q {
                    Some((m, i, q)) => bias_torque(q, &m.base_pose[i], self.cfg.bias_gain, clip_to)
                        .unwrap_or_else(|_| JointVector::zeros(dof)),
                    None => JointVector::zeros(0),
                };
                let mut tracking = JointVector::zeros(dof);
                let mut gripper = 0.0;
                let mut eef_error = None;
                if let (Some((signal, state)), true) = (follower, leader.active) {
                    let (ls, fs) = (&signal.limbs[p.follower], &state.limbs[p.follower]);
                    let g_leader = snap.map_or(0.0, |s| s.gripper);
                    gripper =
                        gripper_torque(g_leader, fs.gripper_actual, self.cfg.gripper_gain, clip_to);
                    let dx = task_error(&fs.t_actual, &ls.t_cmd);
                    match (p.kind, chain_q) {
                        (PayloadKind::Joint, Some((_, _, q))) => {
                            tracking = tracking_torque_joint(q, &fs.q_actual, self.cfg.kp, clip_to)
                                .unwrap_or_else(|_| JointVector::zeros(dof));
                            eef_error = Some(dx.into());
                        }
                        (PayloadKind::Eef, Some((m, i, q))) => {
                            let chain = &m.limbs[i];
                            if let Ok((pose, jac)) = chain.kinematics(q) {
                                let d = to_leader_frame(&dx, pose.rotation(), p.binding.scale);
                                tracking = tracking_torque_task(
                                    &d,
                                    &jac,
                                    self.cfg.kp,
                                    self.cfg.damping,
                                    clip_to,
                                );
                                eef_error = Some(d.into());
                            }
                        }
                        (_, None) => {
                            // no leader joints: report the error in the
                            // follower's initial EEF frame for display
                            eef_error = Some(dx.into());
                        }
                    }
                }
                LimbFeedback {
                    leader_limb: p.binding.leader_limb.clone(),
                    follower_limb: p.binding.follower_limb.clone(),
                    bias,
                    tracking,
                    gripper,
                    eef_error,
                }
            })
            .collect();
        FeedbackTorques { limbs, timestamp }
    }
}

/// Mailboxes the feedback loop reads and writes.
#[derive(Debug, Clone, Default)]
pub struct FeedbackChannels {
    pub leader: Mailbox<LeaderSnapshot>,
    pub signal: Mailbox<ControlSignal>,
    pub follower: Mailbox<FollowerState>,
    pub out: Mailbox<FeedbackTorques>,
}

fn fresh<T>(s: &Option<Stamped<T>>, now: Instant, stale_after: Duration) -> Option<&T> {
    s.as_ref()
        .filter(|s| now.saturating_duration_since(s.published_at) <= stale_after)
        .map(|s| &s.value)
}

/// Background thread publishing [`FeedbackTorques`] at the configured rate.
#[derive(Debug)]
pub struct FeedbackLoop {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<u64>>,
}

impl FeedbackLoop {
    /// `loop_period` is the teleop loop period; snapshots older than
    /// [`STALE_PERIODS`] of them are ignored for tracking.
    pub fn spawn(computer: FeedbackComputer, channels: FeedbackChannels, loop_period: f64) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let period = Duration::from_secs_f64(1.0 / computer.config().rate_hz);
        let stale_after = Duration::from_secs_f64(STALE_PERIODS * loop_period);
        let handle = std::thread::Builder::new()
            .name("feedback".into())
            .spawn(move || {
                let start = Instant::now();
                let mut next = start;
                let mut published = 0;
                while !flag.load(Ordering::Relaxed) {
                    let now = Instant::now();
                    if let Some(leader) = channels.leader.latest() {
                        let signal = channels.signal.latest();
                        let state = channels.follower.latest();
                        let teleop =
                            fresh(&signal, now, stale_after).zip(fresh(&state, now, stale_after));
                        let t =
                            computer.compute(&leader.value, teleop, (now - start).as_secs_f64());
                        channels.out.publish(t);
                        published += 1;
                    }
                    next += period;
                    let now = Instant::now();
                    if next > now {
                        std::thread::sleep(next - now);
                    } else {
                        next = now;
                    }
                }
                published
            })
            .expect("spawn feedback thread");
        Self {
            stop,
            handle: Some(handle),
        }
    }

    /// Stops the thread; returns how many torque sets it published.
    pub fn stop(mut self) -> u64 {
        self.shutdown()
    }

    fn shutdown(&mut self) -> u64 {
        self.stop.store(true, Ordering::Relaxed);
        self.handle.take().map_or(0, |h| h.join().unwrap_or(0))
    }
}

impl Drop for FeedbackLoop {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::fixtures;
    use crate::follower::FollowerSim;
    use crate::leader::LeaderLimbSnapshot;
    use nalgebra::Vector3;

    fn v(x: &[f64]) -> JointVector {
        JointVector::from_column_slice(x)
    }

    #[test]
    fn bias_is_restoring() {
        let base = v(&[0.0, 0.1, 0.2, 0.3]);
        assert_eq!(
            bias_torque(&base, &base, 1.0, 10.0).unwrap(),
            JointVector::zeros(4)
        );
        let mut q = base.clone();
        q[2] += 0.5;
        let t = bias_torque(&q, &base, 1.0, 10.0).unwrap();
        assert!((t[2] + 0.5).abs() < 1e-15);
        assert_eq!(
            bias_torque(&q, &base, 0.0, 10.0).unwrap(),
            JointVector::zeros(4)
        );
        assert!(bias_torque(&q, &v(&[0.0]), 1.0, 1.0).is_err());
    }

    #[test]
    fn joint_tracking_pulls_toward_follower() {
        let f = v(&[0.0, 0.3]);
        let l = v(&[0.0, 0.5]);
        let t = tracking_torque_joint(&l, &f, 2.0, 10.0).unwrap();
        assert!((t[1] + 0.4).abs() < 1e-15);
        assert_eq!(
            tracking_torque_joint(&f, &f, 2.0, 10.0).unwrap(),
            JointVector::zeros(2)
        );
        assert_eq!(clip(v(&[5.0, -5.0, f64::NAN]), 1.0), v(&[1.0, -1.0, 0.0]));
    }

    #[test]
    fn task_torque_zero_at_target() {
        let m = fixtures::ur5_model();
        let jac = m.limbs[0].geometric_jacobian(&m.base_pose[0]).unwrap();
        let t = Pose::from_xyz_rpy([0.3, 0.1, 0.2], [0.1, 0.2, 0.3]);
        let dx = task_error(&t, &t);
        assert_eq!(
            tracking_torque_task(&dx, &jac, 1.0, 1e-3, 1.0),
            JointVector::zeros(6)
        );
        let dx = task_error(&t, &t.compose(&Pose::from_translation(0.0, 0.0, 0.01)));
        assert_eq!(
            tracking_torque_task(&dx, &jac, 0.0, 1e-3, 1.0),
            JointVector::zeros(6)
        );
    }

    #[test]
    fn lagging_below_pushes_leader_down() {
        let m = fixtures::ur5_model();
        let q = &m.base_pose[0];
        let (pose, jac) = m.limbs[0].kinematics(q).unwrap();
        // follower 5 cm below its commanded pose, expressed with an arbitrary
        // follower orientation that matches the leader's
        let t_cmd = Pose::new(*pose.rotation(), Vector3::new(0.4, 0.0, 0.3));
        let t_act = Pose::new(*pose.rotation(), Vector3::new(0.4, 0.0, 0.25));
        let dx = to_leader_frame(&task_error(&t_act, &t_cmd), pose.rotation(), 2.0);
        assert!(dx[2] > 0.0);
        let tau = tracking_torque_task(&dx, &jac, 1.0, 1e-3, 100.0);
        let eef = &jac * &tau;
        assert!(eef[2] < 0.0, "{eef}");
    }

    #[test]
    fn stale_teleop_gives_bias_only() {
        let follower = Arc::new(fixtures::arm7_model());
        let leader = Arc::new(fixtures::ur5_model());
        let b = vec![LimbBinding::identity("arm")];
        let c = FeedbackComputer::new(
            FeedbackConfig::default(),
            Some(leader.clone()),
            &b,
            &[PayloadKind::Eef],
            &follower,
        )
        .unwrap();
        let mut q = leader.base_pose[0].clone();
        q[1] += 0.2;
        let snap = LeaderSnapshot {
            limbs: vec![LeaderLimbSnapshot {
                leader_limb: "arm".into(),
                follower_limb: "arm".into(),
                q: Some(q),
                gripper: 0.5,
                t0: None,
            }],
            active: true,
            timestamp: 0.0,
        };
        let t = c.compute(&snap, None, 0.0);
        assert!(t.limbs[0].tracking.iter().all(|x| *x == 0.0));
        assert!(t.limbs[0].bias[1] < 0.0);
        assert_eq!(t.limbs[0].gripper, 0.0);

        let sim = FollowerSim::new(
            follower.clone(),
            &SimConfig::default(),
            &[follower.limbs[0].velocity_limits()],
            0.0,
        );
        let signal = ControlSignal::hold(sim.state());
        let t = c.compute(&snap, Some((&signal, sim.state())), 0.0);
        // perfect tracking: only bias and the gripper difference remain
        assert!(t.limbs[0].tracking.iter().all(|x| x.abs() < 1e-12));
        assert!((t.limbs[0].gripper - 0.5).abs() < 1e-15);
        assert!(t.max_abs() <= FeedbackConfig::default().torque_clip);
    }

    #[test]
    fn loop_publishes_and_stops() {
        let follower = Arc::new(fixtures::arm7_model());
        let b = vec![LimbBinding::identity("arm")];
        let c = FeedbackComputer::new(
            FeedbackConfig::default(),
            None,
            &b,
            &[PayloadKind::Eef],
            &follower,
        )
        .unwrap();
        let ch = FeedbackChannels::default();
        ch.leader.publish(LeaderSnapshot {
            limbs: vec![],
            active: false,
            timestamp: 0.0,
        });
        let l = FeedbackLoop::spawn(c, ch.clone(), 0.02);
        std::thread::sleep(Duration::from_millis(60));
        let n = l.stop();
        assert!(n >= 3, "{n}");
        assert_eq!(ch.out.last_seq(), n);
    }
}
