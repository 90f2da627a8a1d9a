//! Damped, joint-weighted Jacobian IK.
//!
//! Each iteration solves
//!
//! ```text
//! Δq = W · (JW)ᵀ · (JW·(JW)ᵀ + λ²I)⁻¹ · e
//! ```
//!
//! where `J` is the geometric Jacobian, `W = diag(joint_weights)` and `e` is
//! the body twist `log(FK(q)⁻¹ · target)` rotated into the base frame, so it
//! lives in the same frame as `J`. Scaling the columns of `J` by `w_i` means a
//! joint with a small weight has to do proportionally more "work" for the same
//! task motion, so the solver prefers the other joints.
//!
//! After every step the joints are clamped to their limits. The step is
//! halved (at most [`MAX_HALVINGS`] times) while the residual grows. The
//! solver returns the best iterate it saw, never worse than the start.

use nalgebra::{Matrix6, Vector6};
use thiserror::Error;

use crate::robot_model::{IkSpec, JointVector, LimbChain, ModelError};
use crate::se3::Pose;

pub const MAX_HALVINGS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IkError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("joint_weights has {got} entries, chain has {expected} joints")]
    WeightDimension { expected: usize, got: usize },
    #[error("target pose is not finite")]
    NonFiniteTarget,
    #[error("invalid IK config: {0}")]
    Config(String),
    #[error("chain has {0} joints; the weighting comparison needs a redundant (>= 7) chain")]
    NotRedundant(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkConfig {
    pub damping: f64,
    pub max_iterations: usize,
    pub position_tolerance: f64,
    pub orientation_tolerance: f64,
    /// Diagonal of the joint weighting, each in `(0, 1]`.
    pub joint_weights: JointVector,
    pub step_scale: f64,
}

impl IkConfig {
    pub fn for_dof(dof: usize) -> Self {
        Self {
            damping: 1e-3,
            max_iterations: 100,
            position_tolerance: 1e-3,
            orientation_tolerance: 1e-3,
            joint_weights: JointVector::from_element(dof, 1.0),
            step_scale: 1.0,
        }
    }

    pub fn from_spec(spec: Option<&IkSpec>, dof: usize) -> Result<Self, IkError> {
        let mut cfg = Self::for_dof(dof);
        if let Some(s) = spec {
            if let Some(v) = s.damping {
                cfg.damping = v;
            }
            if let Some(v) = s.max_iterations {
                cfg.max_iterations = v;
            }
            if let Some(v) = s.position_tolerance {
                cfg.position_tolerance = v;
            }
            if let Some(v) = s.orientation_tolerance {
                cfg.orientation_tolerance = v;
            }
            if let Some(v) = &s.step_scale {
                cfg.step_scale = *v;
            }
            if let Some(w) = &s.joint_weights {
                cfg.joint_weights = JointVector::from_column_slice(w);
            }
        }
        cfg.validate(dof)?;
        Ok(cfg)
    }

    pub fn with_weight(mut self, joint: usize, weight: f64) -> Self {
        self.joint_weights[joint] = weight;
        self
    }

    pub fn validate(&self, dof: usize) -> Result<(), IkError> {
        if self.joint_weights.len() != dof {
            return Err(IkError::WeightDimension {
                expected: dof,
                got: self.joint_weights.len(),
            });
        }
        if !(self.position_tolerance > 0.0 && self.orientation_tolerance > 0.0) {
            return Err(IkError::Config("tolerances must be positive".into()));
        }
        if self.max_iterations < 1 {
            return Err(IkError::Config("max_iterations must be at least 1".into()));
        }
        if !(self.damping >= 0.0) {
            return Err(IkError::Config("damping must be non-negative".into()));
        }
        if !(self.step_scale > 0.0 && self.step_scale <= 1.0) {
            return Err(IkError::Config("step_scale must be in (0, 1]".into()));
        }
        if self.joint_weights.iter().any(|&w| !(w > 0.0 && w <= 1.0)) {
            return Err(IkError::Config("joint weights must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkResult {
    pub q_solution: JointVector,
    pub converged: bool,
    pub iterations_used: usize,
    pub residual_position: f64,
    pub residual_orientation: f64,
}

struct Eval {
    error: Vector6<f64>,
    cost: f64,
    position: f64,
    orientation: f64,
    jacobian: nalgebra::Matrix6xX<f64>,
}

fn evaluate(chain: &LimbChain, q: &JointVector, target: &Pose) -> Result<Eval, ModelError> {
    let (pose, jacobian) = chain.kinematics(q)?;
    let body = pose.between(target).log();
    let world = body.rotated(pose.rotation());
    let error = world.to_vector();
    Ok(Eval {
        cost: error.norm(),
        position: (target.translation() - pose.translation()).norm(),
        orientation: body.angular.norm(),
        error,
        jacobian,
    })
}

/// Damped weighted least-squares step for error `e`.
fn step(
    jacobian: &nalgebra::Matrix6xX<f64>,
    weights: &JointVector,
    error: &Vector6<f64>,
    damping: f64,
) -> JointVector {
    let mut jw = jacobian.clone();
    for (i, mut col) in jw.column_iter_mut().enumerate() {
        col *= weights[i];
    }
    let a: Matrix6<f64> = &jw * jw.transpose() + Matrix6::identity() * (damping * damping);
    let y = match a.cholesky() {
        Some(c) => c.solve(error),
        // λ = 0 at an exact singularity: fall back to a pseudo-inverse
        None => a
            .pseudo_inverse(1e-12)
            .map(|p| p * error)
            .unwrap_or_else(|_| Vector6::zeros()),
    };
    let mut dq = jw.transpose() * y;
    dq.component_mul_assign(weights);
    dq
}

fn converged(e: &Eval, cfg: &IkConfig) -> bool {
    e.position < cfg.position_tolerance && e.orientation < cfg.orientation_tolerance
}

/// Solves for joints placing the end effector at `target`, starting at `q0`.
///
/// An unreachable target is not an error: the result has `converged = false`
/// and carries the best configuration found.
pub fn solve(
    chain: &LimbChain,
    target: &Pose,
    q0: &JointVector,
    cfg: &IkConfig,
) -> Result<IkResult, IkError> {
    cfg.validate(chain.dof())?;
    if !target.is_finite() {
        return Err(IkError::NonFiniteTarget);
    }
    if q0.len() != chain.dof() {
        return Err(ModelError::Dimension {
            expected: chain.dof(),
            got: q0.len(),
        }
        .into());
    }
    let mut q = chain.clamp_to_limits(q0);
    let mut cur = evaluate(chain, &q, target)?;
    let mut best_q = q.clone();
    let (mut best_cost, mut best_pos, mut best_ori) = (cur.cost, cur.position, cur.orientation);
    let mut iterations = 0;

    while iterations < cfg.max_iterations && !converged(&cur, cfg) {
        iterations += 1;
        let dq = step(&cur.jacobian, &cfg.joint_weights, &cur.error, cfg.damping);
        if !dq.iter().all(|v| v.is_finite()) {
            break;
        }
        let mut alpha = cfg.step_scale;
        let mut halvings = 0;
        let (q_next, next) = loop {
            let cand = chain.clamp_to_limits(&(&q + &dq * alpha));
            let eval = evaluate(chain, &cand, target)?;
            if eval.cost <= cur.cost || halvings == MAX_HALVINGS {
                break (cand, eval);
            }
            alpha *= 0.5;
            halvings += 1;
        };
        q = q_next;
        cur = next;
        if cur.cost < best_cost {
            best_q = q.clone();
            best_cost = cur.cost;
            best_pos = cur.position;
            best_ori = cur.orientation;
        }
    }

    Ok(IkResult {
        converged: best_pos < cfg.position_tolerance && best_ori < cfg.orientation_tolerance,
        q_solution: best_q,
        iterations_used: iterations,
        residual_position: best_pos,
        residual_orientation: best_ori,
    })
}

/// Solves twice from the same start: unweighted, and with the first joint's
/// weight set to `w1`. Used to show how down-weighting the base joint changes
/// the chosen posture on a redundant chain.
pub fn solve_weighted_demo(
    chain: &LimbChain,
    target: &Pose,
    q0: &JointVector,
    w1: f64,
) -> Result<(IkResult, IkResult), IkError> {
    if chain.dof() < 7 {
        return Err(IkError::NotRedundant(chain.dof()));
    }
    let plain = IkConfig::for_dof(chain.dof());
    let weighted = plain.clone().with_weight(0, w1);
    Ok((
        solve(chain, target, q0, &plain)?,
        solve(chain, target, q0, &weighted)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use nalgebra::Vector3;

    fn arm() -> (LimbChain, JointVector) {
        let m = fixtures::arm7_model();
        (m.limbs[0].clone(), m.base_pose[0].clone())
    }

    #[test]
    fn fixed_point_needs_no_iterations() {
        let (chain, q0) = arm();
        let target = chain.forward_kinematics(&q0).unwrap();
        let r = solve(&chain, &target, &q0, &IkConfig::for_dof(7)).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations_used, 0);
        assert_eq!(r.q_solution, q0);
    }

    #[test]
    fn unreachable_target_is_best_effort() {
        let m = fixtures::planar_model();
        let chain = &m.limbs[0];
        let q0 = JointVector::from_column_slice(&[0.3, 0.2]);
        let target = Pose::from_translation(12.0, 0.0, 0.0);
        let mut cfg = IkConfig::for_dof(2);
        cfg.orientation_tolerance = 10.0;
        let r = solve(chain, &target, &q0, &cfg).unwrap();
        assert!(!r.converged);
        assert!(r.residual_position > 8.0);
        assert!(r.q_solution.iter().all(|v| v.is_finite()));
        assert!(chain.within_limits(&r.q_solution));
    }

    #[test]
    fn planar_reaches_reachable_point() {
        let m = fixtures::planar_model();
        let chain = &m.limbs[0];
        let q_true = JointVector::from_column_slice(&[0.7, -1.1]);
        let target = chain.forward_kinematics(&q_true).unwrap();
        let r = solve(
            chain,
            &target,
            &JointVector::from_column_slice(&[0.5, -0.8]),
            &IkConfig::for_dof(2),
        )
        .unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.q_solution[0] - 0.7).abs() < 1e-3);
    }

    #[test]
    fn bad_inputs() {
        let (chain, q0) = arm();
        let mut target = Pose::identity();
        target = target.with_translation(Vector3::new(f64::NAN, 0.0, 0.0));
        assert_eq!(
            solve(&chain, &target, &q0, &IkConfig::for_dof(7)),
            Err(IkError::NonFiniteTarget)
        );
        let short = JointVector::zeros(3);
        assert!(matches!(
            solve(&chain, &Pose::identity(), &short, &IkConfig::for_dof(7)),
            Err(IkError::Model(ModelError::Dimension { .. }))
        ));
        assert!(matches!(
            solve(&chain, &Pose::identity(), &q0, &IkConfig::for_dof(6)),
            Err(IkError::WeightDimension { .. })
        ));
        let cfg = IkConfig::for_dof(7).with_weight(2, 0.0);
        assert!(matches!(
            solve(&chain, &Pose::identity(), &q0, &cfg),
            Err(IkError::Config(_))
        ));
    }

    #[test]
    fn config_from_spec() {
        let spec = IkSpec {
            damping: Some(0.01),
            joint_weights: Some(vec![0.5, 1.0]),
            ..Default::default()
        };
        let cfg = IkConfig::from_spec(Some(&spec), 2).unwrap();
        assert_eq!(cfg.damping, 0.01);
        assert_eq!(cfg.joint_weights[0], 0.5);
        assert_eq!(cfg.max_iterations, 100);
        assert!(IkConfig::from_spec(Some(&spec), 3).is_err());
    }

    #[test]
    fn weighted_demo_needs_redundancy() {
        let m = fixtures::planar_model();
        assert_eq!(
            solve_weighted_demo(&m.limbs[0], &Pose::identity(), &JointVector::zeros(2), 0.5),
            Err(IkError::NotRedundant(2))
        );
    }

    #[test]
    fn unit_weight_is_a_no_op() {
        let (chain, q0) = arm();
        let target = chain
            .forward_kinematics(&q0)
            .unwrap()
            .compose(&Pose::from_xyz_rpy([0.05, -0.04, 0.03], [0.1, 0.0, -0.2]));
        let (a, b) = solve_weighted_demo(&chain, &target, &q0, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weighting_reduces_base_motion_in_scenario() {
        let (chain, q0, target) = fixtures::weighted_ik_scenario();
        let (plain, weighted) =
            solve_weighted_demo(&chain, &target, &q0, fixtures::WEIGHTED_IK_W1).unwrap();
        assert!(plain.converged && weighted.converged);
        let d_plain = (plain.q_solution[0] - q0[0]).abs();
        let d_weighted = (weighted.q_solution[0] - q0[0]).abs();
        println!("joint-1 displacement: plain {d_plain:.4}, weighted {d_weighted:.4}");
        assert!(d_weighted <= d_plain);
        assert!(d_plain > 0.05);
    }
}
