//! Command interpretation and safety filtering.
//!
//! A leader command becomes per-limb joint targets (joint payloads pass
//! through, delta poses go `T_cmd = T0_follower · Δ` then IK). The safety
//! filter then clamps to joint limits, clamps the per-step change against
//! the previous command, and holds any limb whose spheres would collide.

use std::sync::Arc;

use thiserror::Error;

use crate::collision::SphereCollider;
use crate::config::FollowerConfig;
use crate::follower::FollowerState;
use crate::ik::{self, IkConfig, IkError, IkResult};
use crate::leader::{LeaderCommand, LimbBinding, LimbPayload, PayloadKind};
use crate::robot_model::{JointVector, ModelError, RobotModel};
use crate::se3::Pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("command names limb '{0}', which the follower does not have")]
    UnknownLimb(String),
    #[error("limb '{limb}': joint payload has {got} joints, follower limb has {expected}")]
    JointCount {
        limb: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid safety config: {0}")]
    Safety(String),
    #[error(transparent)]
    Ik(#[from] IkError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Parameters of the safety filter, one velocity vector per follower limb.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyConfig {
    pub velocity_limits: Vec<JointVector>,
    /// Loop period, seconds. The configured value, not measured time.
    pub dt: f64,
    pub collision_margin: f64,
}

impl SafetyConfig {
    /// Velocity limits from the model (config overrides already applied).
    pub fn from_model(model: &RobotModel, dt: f64, collision_margin: f64) -> Self {
        Self {
            velocity_limits: model.limbs.iter().map(|c| c.velocity_limits()).collect(),
            dt,
            collision_margin,
        }
    }

    pub fn validate(&self, model: &RobotModel) -> Result<(), PipelineError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(PipelineError::Safety("dt must be positive".into()));
        }
        if !(self.collision_margin >= 0.0) {
            return Err(PipelineError::Safety(
                "collision margin must be non-negative".into(),
            ));
        }
        if self.velocity_limits.len() != model.limbs.len() {
            return Err(PipelineError::Safety(
                "one velocity-limit vector per limb required".into(),
            ));
        }
        for (v, c) in self.velocity_limits.iter().zip(&model.limbs) {
            if v.len() != c.dof() || !v.iter().all(|x| *x > 0.0 && x.is_finite()) {
                return Err(PipelineError::Safety(format!(
                    "velocity limits of limb '{}' invalid",
                    c.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SafetyFlags {
    /// Target was outside the joint limits.
    pub limit: bool,
    /// Step was shortened by the velocity clamp.
    pub velocity: bool,
    /// Limb held because its spheres would collide.
    pub collision: bool,
}

impl SafetyFlags {
    pub fn any(&self) -> bool {
        self.limit || self.velocity || self.collision
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSummary {
    pub converged: bool,
    pub iterations: usize,
    pub residual_position: f64,
    pub residual_orientation: f64,
}

impl From<&IkResult> for IkSummary {
    fn from(r: &IkResult) -> Self {
        Self {
            converged: r.converged,
            iterations: r.iterations_used,
            residual_position: r.residual_position,
            residual_orientation: r.residual_orientation,
        }
    }
}

/// Interpreted, not yet filtered, target for one follower limb.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbTarget {
    pub q: JointVector,
    pub gripper: f64,
    /// Pre-IK target pose (FK of `q` for joint payloads).
    pub t_cmd: Pose,
    pub ik: Option<IkSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimbSignal {
    pub q_cmd: JointVector,
    pub gripper_cmd: f64,
    pub t_cmd: Pose,
    pub flags: SafetyFlags,
    pub ik: Option<IkSummary>,
}

/// Filtered command for every follower limb, in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    pub limbs: Vec<LimbSignal>,
    pub timestamp: f64,
}

impl ControlSignal {
    pub fn q_cmd(&self) -> Vec<JointVector> {
        self.limbs.iter().map(|l| l.q_cmd.clone()).collect()
    }

    /// Holds `state` exactly: what the follower gets before the first command.
    pub fn hold(state: &FollowerState) -> Self {
        Self {
            limbs: state
                .limbs
                .iter()
                .map(|l| LimbSignal {
                    q_cmd: l.q_actual.clone(),
                    gripper_cmd: l.gripper_actual,
                    t_cmd: l.t_actual,
                    flags: SafetyFlags::default(),
                    ik: None,
                })
                .collect(),
            timestamp: state.timestamp,
        }
    }
}

/// Checks that every mapped follower limb exists and that joint payloads fit.
/// `leader` is the leader's kinematic model when it has one.
pub fn check_mapping(
    follower: &RobotModel,
    bindings: &[LimbBinding],
    kinds: &[PayloadKind],
    leader: Option<&RobotModel>,
) -> Result<(), PipelineError> {
    for (b, k) in bindings.iter().zip(kinds) {
        let f = follower
            .limb(&b.follower_limb)
            .ok_or_else(|| PipelineError::UnknownLimb(b.follower_limb.clone()))?;
        if *k == PayloadKind::Joint {
            if let Some(l) = leader.and_then(|m| m.limb(&b.leader_limb)) {
                if l.dof() != f.dof() {
                    return Err(PipelineError::JointCount {
                        limb: b.follower_limb.clone(),
                        expected: f.dof(),
                        got: l.dof(),
                    });
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TeleopPipeline {
    model: Arc<RobotModel>,
    ik: Vec<IkConfig>,
    safety: SafetyConfig,
    collider: SphereCollider,
    /// Follower EEF pose per limb at the start signal.
    t0: Vec<Pose>,
}

impl TeleopPipeline {
    pub fn new(
        model: Arc<RobotModel>,
        ik: Vec<IkConfig>,
        safety: SafetyConfig,
    ) -> Result<Self, PipelineError> {
        safety.validate(&model)?;
        if ik.len() != model.limbs.len() {
            return Err(PipelineError::Safety(
                "one IK config per limb required".into(),
            ));
        }
        for (c, chain) in ik.iter().zip(&model.limbs) {
            c.validate(chain.dof())?;
        }
        let t0 = model
            .limbs
            .iter()
            .zip(&model.base_pose)
            .map(|(c, q)| c.forward_kinematics(q))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            collider: SphereCollider::new(&model),
            model,
            ik,
            safety,
            t0,
        })
    }

    /// Pipeline for a follower config; `dt` is the loop period.
    pub fn from_follower_config(
        model: Arc<RobotModel>,
        cfg: &FollowerConfig,
        dt: f64,
    ) -> Result<Self, PipelineError> {
        let ik = model
            .limbs
            .iter()
            .map(|c| {
                let spec = cfg
                    .limbs
                    .iter()
                    .find(|l| l.name == c.name)
                    .and_then(|l| l.ik.as_ref());
                IkConfig::from_spec(spec, c.dof())
            })
            .collect::<Result<Vec<_>, _>>()?;
        let safety = SafetyConfig::from_model(&model, dt, cfg.collision_margin);
        Self::new(model, ik, safety)
    }

    pub fn model(&self) -> &Arc<RobotModel> {
        &self.model
    }

    pub fn safety(&self) -> &SafetyConfig {
        &self.safety
    }

    pub fn ik_configs(&self) -> &[IkConfig] {
        &self.ik
    }

    pub fn collider(&self) -> &SphereCollider {
        &self.collider
    }

    pub fn origin(&self) -> &[Pose] {
        &self.t0
    }

    /// Records the follower EEF poses that delta commands are relative to.
    pub fn capture_origin(&mut self, q: &[JointVector]) -> Result<(), PipelineError> {
        if q.len() != self.model.limbs.len() {
            return Err(ModelError::Dimension {
                expected: self.model.limbs.len(),
                got: q.len(),
            }
            .into());
        }
        self.t0 = self
            .model
            .limbs
            .iter()
            .zip(q)
            .map(|(c, q)| c.forward_kinematics(q))
            .collect::<Result<_, _>>()?;
        Ok(())
    }

    /// Joint targets for every follower limb. Limbs the command does not
    /// mention keep `hold`.
    pub fn interpret(
        &self,
        cmd: &LeaderCommand,
        state: &FollowerState,
        hold: &[JointVector],
    ) -> Result<Vec<LimbTarget>, PipelineError> {
        let n = self.model.limbs.len();
        if state.limbs.len() != n || hold.len() != n {
            return Err(ModelError::Dimension {
                expected: n,
                got: state.limbs.len().min(hold.len()),
            }
            .into());
        }
        let mut out: Vec<Option<LimbTarget>> = vec![None; n];
        for lc in &cmd.limbs {
            let i = self
                .model
                .limb_index(&lc.limb)
                .ok_or_else(|| PipelineError::UnknownLimb(lc.limb.clone()))?;
            let chain = &self.model.limbs[i];
            let gripper = lc.gripper.clamp(0.0, 1.0);
            out[i] = Some(match &lc.payload {
                LimbPayload::JointPositions(q) => {
                    if q.len() != chain.dof() {
                        return Err(PipelineError::JointCount {
                            limb: lc.limb.clone(),
                            expected: chain.dof(),
                            got: q.len(),
                        });
                    }
                    LimbTarget {
                        t_cmd: chain.forward_kinematics(&chain.clamp_to_limits(q))?,
                        q: q.clone(),
                        gripper,
                        ik: None,
                    }
                }
                LimbPayload::EefDelta(delta) => {
                    let t_cmd = self.t0[i].compose(delta);
                    let r = ik::solve(chain, &t_cmd, &state.limbs[i].q_actual, &self.ik[i])?;
                    LimbTarget {
                        ik: Some(IkSummary::from(&r)),
                        q: r.q_solution,
                        gripper,
                        t_cmd,
                    }
                }
            });
        }
        Ok(out
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                t.unwrap_or_else(|| LimbTarget {
                    q: hold[i].clone(),
                    gripper: state.limbs[i].gripper_actual,
                    t_cmd: state.limbs[i].t_cmd_last,
                    ik: None,
                })
            })
            .collect())
    }

    /// Limit clamp, rate clamp against `prev`, collision hold. Never fails;
    /// `prev` is expected to be within limits and collision-free.
    pub fn safety_filter(
        &self,
        targets: &[LimbTarget],
        prev: &[JointVector],
        timestamp: f64,
    ) -> ControlSignal {
        let dt = self.safety.dt;
        let mut limbs: Vec<LimbSignal> = targets
            .iter()
            .zip(prev)
            .zip(&self.model.limbs)
            .zip(&self.safety.velocity_limits)
            .map(|(((t, p), chain), vmax)| {
                let mut flags = SafetyFlags::default();
                let limited = chain.clamp_to_limits(&t.q);
                flags.limit = limited != t.q;
                let q = JointVector::from_fn(p.len(), |j, _| {
                    let max = vmax[j] * dt;
                    let d = limited[j] - p[j];
                    if d.abs() > max {
                        flags.velocity = true;
                    }
                    p[j] + d.clamp(-max, max)
                });
                LimbSignal {
                    q_cmd: chain.clamp_to_limits(&q),
                    gripper_cmd: t.gripper.clamp(0.0, 1.0),
                    t_cmd: t.t_cmd,
                    flags,
                    ik: t.ik,
                }
            })
            .collect();

        // Holding one limb can expose or clear collisions of another, so
        // re-check until the set of held limbs stops growing.
        loop {
            let q: Vec<JointVector> = limbs.iter().map(|l| l.q_cmd.clone()).collect();
            let hits =
                match self
                    .collider
                    .colliding_limbs(&self.model, &q, self.safety.collision_margin)
                {
                    Ok(h) => h,
                    Err(_) => vec![true; limbs.len()],
                };
            let mut changed = false;
            for (i, hit) in hits.into_iter().enumerate() {
                if hit && !limbs[i].flags.collision {
                    limbs[i].q_cmd = prev[i].clone();
                    limbs[i].flags.collision = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        ControlSignal { limbs, timestamp }
    }

    /// interpret followed by safety_filter against `prev`.
    pub fn process(
        &self,
        cmd: &LeaderCommand,
        state: &FollowerState,
        prev: &[JointVector],
        timestamp: f64,
    ) -> Result<ControlSignal, PipelineError> {
        let targets = self.interpret(cmd, state, prev)?;
        Ok(self.safety_filter(&targets, prev, timestamp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::fixtures;
    use crate::follower::FollowerSim;
    use crate::leader::LimbCommand;
    use nalgebra::Vector3;

    fn table() -> (TeleopPipeline, FollowerSim) {
        let model = Arc::new(fixtures::table_model());
        let cfg = fixtures::follower_config(fixtures::TABLE_FOLLOWER_TOML);
        let p = TeleopPipeline::from_follower_config(model.clone(), &cfg, 0.02).unwrap();
        let f = FollowerSim::new(
            model,
            &SimConfig::default(),
            &p.safety().velocity_limits,
            0.01,
        );
        (p, f)
    }

    fn eef(limb: &str, d: Pose) -> LimbCommand {
        LimbCommand {
            limb: limb.into(),
            payload: LimbPayload::EefDelta(d),
            gripper: 0.0,
        }
    }

    #[test]
    fn identity_delta_is_fixed_point() {
        let (p, f) = table();
        let mut cmd = LeaderCommand::identity(&["left".into(), "right".into()], 0.0);
        cmd.limbs[1].gripper = 0.7;
        let prev = f.state().q();
        let s = p.process(&cmd, f.state(), &prev, 0.0).unwrap();
        assert_eq!(s.q_cmd(), prev);
        assert!(s.limbs.iter().all(|l| !l.flags.any()));
        assert_eq!(s.limbs[1].gripper_cmd, 0.7);
    }

    #[test]
    fn delta_moves_target_in_initial_frame() {
        let (p, f) = table();
        let cmd = LeaderCommand {
            limbs: vec![eef("left", Pose::from_translation(0.1, 0.0, 0.0))],
            ..LeaderCommand::identity(&[], 0.0)
        };
        let t = p.interpret(&cmd, f.state(), &f.state().q()).unwrap();
        let t0 = p.origin()[0];
        let expected = t0.translation() + t0.rotation() * Vector3::new(0.1, 0.0, 0.0);
        assert!((t[0].t_cmd.translation() - expected).norm() < 1e-15);
        assert!(t[0].ik.unwrap().converged);
        // the unmentioned limb holds
        assert_eq!(t[1].q, f.state().q()[1]);
    }

    #[test]
    fn joint_payload_passes_through() {
        let (p, f) = table();
        let q = JointVector::from_column_slice(&[0.1, -0.7, 0.05, -2.3, 0.0, 1.6, 0.7]);
        let cmd = LeaderCommand {
            limbs: vec![LimbCommand {
                limb: "right".into(),
                payload: LimbPayload::JointPositions(q.clone()),
                gripper: 0.0,
            }],
            ..LeaderCommand::identity(&[], 0.0)
        };
        assert_eq!(
            p.interpret(&cmd, f.state(), &f.state().q()).unwrap()[1].q,
            q
        );
        let bad = LeaderCommand {
            limbs: vec![LimbCommand {
                limb: "right".into(),
                payload: LimbPayload::JointPositions(JointVector::zeros(3)),
                gripper: 0.0,
            }],
            ..LeaderCommand::identity(&[], 0.0)
        };
        assert!(matches!(
            p.interpret(&bad, f.state(), &f.state().q()),
            Err(PipelineError::JointCount { .. })
        ));
    }

    #[test]
    fn velocity_clamp_arithmetic() {
        let model = Arc::new(fixtures::planar_model());
        let safety = SafetyConfig {
            velocity_limits: vec![JointVector::from_element(2, 1.0)],
            dt: 0.02,
            collision_margin: 0.0,
        };
        let p = TeleopPipeline::new(model, vec![IkConfig::for_dof(2)], safety).unwrap();
        let prev = vec![JointVector::from_column_slice(&[0.0, 0.5])];
        let target = LimbTarget {
            q: JointVector::from_column_slice(&[1.0, 0.5]),
            gripper: 0.0,
            t_cmd: Pose::identity(),
            ik: None,
        };
        let s = p.safety_filter(std::slice::from_ref(&target), &prev, 0.0);
        assert!((s.limbs[0].q_cmd[0] - 0.02).abs() < 1e-15);
        assert_eq!(s.limbs[0].q_cmd[1], 0.5);
        assert!(s.limbs[0].flags.velocity && !s.limbs[0].flags.limit);
        let same = LimbTarget {
            q: prev[0].clone(),
            ..target
        };
        let s = p.safety_filter(&[same], &prev, 0.0);
        assert_eq!(s.limbs[0].q_cmd, prev[0]);
        assert!(!s.limbs[0].flags.any());
    }

    #[test]
    fn colliding_limbs_hold() {
        let (p, f) = table();
        let model = p.model().clone();
        let prev = f.state().q();
        // reach both arms toward the middle of the table
        let mut q = prev.clone();
        q[0][0] = -1.2;
        q[1][0] = 1.2;
        assert!(
            !p.collider().check(&model, &q, 0.01).unwrap().is_empty(),
            "fixture pose must collide"
        );
        let targets: Vec<LimbTarget> = q
            .iter()
            .map(|q| LimbTarget {
                q: q.clone(),
                gripper: 0.0,
                t_cmd: Pose::identity(),
                ik: None,
            })
            .collect();
        // step by step so the rate clamp does not hide the collision
        let mut prev = prev;
        let mut held = false;
        for k in 0..200 {
            let s = p.safety_filter(&targets, &prev, k as f64 * 0.02);
            assert!(p
                .collider()
                .check(&model, &s.q_cmd(), 0.01)
                .unwrap()
                .is_empty());
            if s.limbs.iter().any(|l| l.flags.collision) {
                held = true;
                for (l, pq) in s.limbs.iter().zip(&prev) {
                    if l.flags.collision {
                        assert_eq!(&l.q_cmd, pq);
                    }
                }
            }
            prev = s.q_cmd();
        }
        assert!(held);
    }

    #[test]
    fn mapping_checks() {
        let follower = fixtures::table_model();
        let leader = fixtures::ur5_model();
        let b = vec![LimbBinding {
            leader_limb: "arm".into(),
            follower_limb: "left".into(),
            scale: 1.0,
            gripper_range: [0.0, 1.0],
        }];
        assert!(check_mapping(&follower, &b, &[PayloadKind::Eef], Some(&leader)).is_ok());
        assert!(matches!(
            check_mapping(&follower, &b, &[PayloadKind::Joint], Some(&leader)),
            Err(PipelineError::JointCount { .. })
        ));
        let mut b2 = b.clone();
        b2[0].follower_limb = "middle".into();
        assert!(matches!(
            check_mapping(&follower, &b2, &[PayloadKind::Eef], None),
            Err(PipelineError::UnknownLimb(_))
        ));
    }
}
