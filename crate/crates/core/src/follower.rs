//! Kinematic follower: tracks joint commands under its own actuator rate
//! limits, with a first-order gripper.

use std::sync::Arc;

use thiserror::Error;

use crate::collision::SphereCollider;
use crate::config::SimConfig;
use crate::robot_model::{JointVector, ModelError, RobotModel};
use crate::se3::Pose;
use crate::teleop::ControlSignal;

/// Peak of the derivative of the quintic `10s³ − 15s⁴ + 6s⁵`.
pub const QUINTIC_PEAK_RATE: f64 = 1.875;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FollowerError {
    #[error("target for limb '{limb}' violates joint limits")]
    OutOfLimits { limb: String },
    #[error("self-collision during motion at step {step}; holding last safe configuration")]
    Collision { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimbState {
    pub q_actual: JointVector,
    pub gripper_actual: f64,
    /// Always `forward_kinematics(q_actual)`.
    pub t_actual: Pose,
    pub t_cmd_last: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowerState {
    pub limbs: Vec<LimbState>,
    /// Simulation clock, seconds.
    pub timestamp: f64,
}

impl FollowerState {
    pub fn q(&self) -> Vec<JointVector> {
        self.limbs.iter().map(|l| l.q_actual.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveReport {
    pub steps: usize,
    pub duration: f64,
}

/// Quintic time scaling on `[0, 1]`, zero velocity and acceleration at both ends.
pub fn quintic(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

#[derive(Debug)]
pub struct FollowerSim {
    model: Arc<RobotModel>,
    actuator_limits: Vec<JointVector>,
    gripper_tau: f64,
    gripper_stop: Option<f64>,
    gripper_target: Vec<f64>,
    collider: SphereCollider,
    margin: f64,
    state: FollowerState,
}

impl FollowerSim {
    /// Follower at the model's base pose. Actuator limits are the given
    /// safety limits times `sim.actuator_velocity_scale`.
    pub fn new(
        model: Arc<RobotModel>,
        sim: &SimConfig,
        safety_limits: &[JointVector],
        collision_margin: f64,
    ) -> Self {
        let actuator_limits = safety_limits
            .iter()
            .map(|v| v * sim.actuator_velocity_scale)
            .collect();
        let collider = SphereCollider::new(&model);
        let limbs = model
            .limbs
            .iter()
            .zip(&model.base_pose)
            .map(|(c, q)| {
                let t = c.forward_kinematics(q).expect("base pose matches chain");
                LimbState {
                    q_actual: q.clone(),
                    gripper_actual: 0.0,
                    t_actual: t,
                    t_cmd_last: t,
                }
            })
            .collect();
        Self {
            gripper_target: vec![0.0; model.limbs.len()],
            model,
            actuator_limits,
            gripper_tau: sim.gripper_time_constant,
            gripper_stop: sim.gripper_stop,
            collider,
            margin: collision_margin,
            state: FollowerState {
                limbs,
                timestamp: 0.0,
            },
        }
    }

    pub fn model(&self) -> &Arc<RobotModel> {
        &self.model
    }

    pub fn state(&self) -> &FollowerState {
        &self.state
    }

    pub fn actuator_limits(&self) -> &[JointVector] {
        &self.actuator_limits
    }

    /// Normalized position where a grasped object stops the gripper.
    pub fn set_gripper_stop(&mut self, stop: Option<f64>) {
        self.gripper_stop = stop;
    }

    pub fn set_gripper_targets(&mut self, targets: &[f64]) {
        for (g, t) in self.gripper_target.iter_mut().zip(targets) {
            *g = t.clamp(0.0, 1.0);
        }
    }

    fn advance_gripper(&mut self, dt: f64) {
        let alpha = if self.gripper_tau > 0.0 {
            1.0 - (-dt / self.gripper_tau).exp()
        } else {
            1.0
        };
        for (l, &target) in self.state.limbs.iter_mut().zip(&self.gripper_target) {
            let mut g = l.gripper_actual + (target - l.gripper_actual) * alpha;
            if let Some(stop) = self.gripper_stop {
                g = g.min(stop);
            }
            l.gripper_actual = g.clamp(0.0, 1.0);
        }
    }

    fn set_q(&mut self, limb: usize, q: JointVector) {
        let chain = &self.model.limbs[limb];
        let l = &mut self.state.limbs[limb];
        l.t_actual = chain.forward_kinematics(&q).expect("dimension checked");
        l.q_actual = q;
    }

    /// Lets time pass with the joints held (grippers keep settling).
    pub fn idle(&mut self, dt: f64) -> &FollowerState {
        self.advance_gripper(dt);
        self.state.timestamp += dt;
        &self.state
    }

    /// Moves every joint toward `signal.q_cmd` by at most `v_act·dt`.
    pub fn step(&mut self, signal: &ControlSignal, dt: f64) -> &FollowerState {
        for (i, ls) in signal.limbs.iter().enumerate().take(self.model.limbs.len()) {
            let chain = &self.model.limbs[i];
            let cur = &self.state.limbs[i].q_actual;
            if ls.q_cmd.len() != cur.len() {
                continue;
            }
            let lim = &self.actuator_limits[i];
            let next = JointVector::from_fn(cur.len(), |j, _| {
                let max = lim[j] * dt;
                cur[j] + (ls.q_cmd[j] - cur[j]).clamp(-max, max)
            });
            let next = chain.clamp_to_limits(&next);
            self.set_q(i, next);
            self.state.limbs[i].t_cmd_last = ls.t_cmd;
            self.gripper_target[i] = ls.gripper_cmd.clamp(0.0, 1.0);
        }
        self.idle(dt)
    }

    /// Smooth quintic motion to `target` lasting at least `min_duration`
    /// and long enough that no joint exceeds its actuator limit. Calls
    /// `on_step` after every simulated step.
    pub fn move_to(
        &mut self,
        target: &[JointVector],
        min_duration: f64,
        dt: f64,
        on_step: &mut dyn FnMut(&FollowerState),
    ) -> Result<MoveReport, FollowerError> {
        if target.len() != self.model.limbs.len() {
            return Err(ModelError::Dimension {
                expected: self.model.limbs.len(),
                got: target.len(),
            }
            .into());
        }
        for (c, q) in self.model.limbs.iter().zip(target) {
            if q.len() != c.dof() {
                return Err(ModelError::Dimension {
                    expected: c.dof(),
                    got: q.len(),
                }
                .into());
            }
            if !c.within_limits(q) {
                return Err(FollowerError::OutOfLimits {
                    limb: c.name.clone(),
                });
            }
        }
        let start = self.state.q();
        let mut needed: f64 = 0.0;
        for ((q0, q1), lim) in start.iter().zip(target).zip(&self.actuator_limits) {
            for j in 0..q0.len() {
                needed = needed.max(QUINTIC_PEAK_RATE * (q1[j] - q0[j]).abs() / lim[j]);
            }
        }
        if needed == 0.0 {
            return Ok(MoveReport {
                steps: 0,
                duration: 0.0,
            });
        }
        let duration = needed.max(min_duration);
        let steps = (duration / dt).ceil() as usize;
        for k in 1..=steps {
            let s = quintic(k as f64 / steps as f64);
            let q: Vec<JointVector> = start
                .iter()
                .zip(target)
                .map(|(a, b)| a + (b - a) * s)
                .collect();
            let q: Vec<JointVector> = if k == steps { target.to_vec() } else { q };
            if !self
                .collider
                .check(&self.model, &q, self.margin)?
                .is_empty()
            {
                return Err(FollowerError::Collision { step: k });
            }
            for (i, qi) in q.into_iter().enumerate() {
                self.set_q(i, qi);
                self.state.limbs[i].t_cmd_last = self.state.limbs[i].t_actual;
            }
            self.idle(dt);
            on_step(&self.state);
        }
        Ok(MoveReport {
            steps,
            duration: steps as f64 * dt,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::teleop::{LimbSignal, SafetyFlags};

    fn sim(limit: f64) -> FollowerSim {
        let m = Arc::new(fixtures::planar_model());
        let limits = vec![JointVector::from_element(2, limit)];
        let cfg = SimConfig {
            actuator_velocity_scale: 1.0,
            ..SimConfig::default()
        };
        FollowerSim::new(m, &cfg, &limits, 0.0)
    }

    fn signal(q: &[f64], gripper: f64) -> ControlSignal {
        ControlSignal {
            limbs: vec![LimbSignal {
                q_cmd: JointVector::from_column_slice(q),
                gripper_cmd: gripper,
                t_cmd: Pose::identity(),
                flags: SafetyFlags::default(),
                ik: None,
            }],
            timestamp: 0.0,
        }
    }

    #[test]
    fn holding_command_only_advances_time() {
        let mut f = sim(1.0);
        let before = f.state().clone();
        let q = before.limbs[0].q_actual.clone();
        let after = f.step(&signal(q.as_slice(), 0.0), 0.02).clone();
        assert_eq!(after.limbs[0].q_actual, before.limbs[0].q_actual);
        assert_eq!(after.limbs[0].t_actual, before.limbs[0].t_actual);
        assert!((after.timestamp - 0.02).abs() < 1e-15);
    }

    #[test]
    fn actuator_rate_limit() {
        let mut f = sim(1.0);
        let s = f.step(&signal(&[0.1, 0.0], 0.0), 0.02);
        assert!((s.limbs[0].q_actual[0] - 0.02).abs() < 1e-15);
        let s = f.step(&signal(&[0.03, 0.0], 0.0), 0.02);
        assert!((s.limbs[0].q_actual[0] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn gripper_lag_and_stop() {
        let mut f = sim(1.0);
        f.step(&signal(&[0.0, 0.0], 1.0), 0.05);
        let g = f.state().limbs[0].gripper_actual;
        assert!((g - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        f.set_gripper_stop(Some(0.4));
        for _ in 0..50 {
            f.step(&signal(&[0.0, 0.0], 1.0), 0.02);
        }
        assert!(f.state().limbs[0].gripper_actual <= 0.632_2);
        let mut f = sim(1.0);
        f.set_gripper_stop(Some(0.4));
        for _ in 0..50 {
            f.step(&signal(&[0.0, 0.0], 1.0), 0.02);
        }
        assert!((f.state().limbs[0].gripper_actual - 0.4).abs() < 1e-12);
    }

    #[test]
    fn move_to_respects_actuator_limits() {
        let mut f = sim(0.5);
        let target = vec![JointVector::from_column_slice(&[1.0, -0.8])];
        let mut trace = vec![f.state().q()[0].clone()];
        let r = f
            .move_to(&target, 0.0, 0.01, &mut |s| {
                trace.push(s.limbs[0].q_actual.clone())
            })
            .unwrap();
        assert_eq!(f.state().limbs[0].q_actual, target[0]);
        assert!(r.duration >= QUINTIC_PEAK_RATE * 1.0 / 0.5);
        for w in trace.windows(2) {
            assert!((&w[1] - &w[0]).amax() <= 0.5 * 0.01 + 1e-12);
        }
        let r = f.move_to(&target, 1.0, 0.01, &mut |_| {}).unwrap();
        assert_eq!(r.steps, 0);
        let bad = vec![JointVector::from_column_slice(&[5.0, 0.0])];
        assert!(matches!(
            f.move_to(&bad, 1.0, 0.01, &mut |_| {}),
            Err(FollowerError::OutOfLimits { .. })
        ));
    }

    #[test]
    fn quintic_endpoints() {
        assert_eq!(quintic(0.0), 0.0);
        assert_eq!(quintic(1.0), 1.0);
        assert!((quintic(0.5) - 0.5).abs() < 1e-15);
        let h = 1e-6;
        let peak = (quintic(0.5 + h) - quintic(0.5 - h)) / (2.0 * h);
        assert!((peak - QUINTIC_PEAK_RATE).abs() < 1e-6);
    }
}
