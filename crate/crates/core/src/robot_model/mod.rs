//! Limb kinematic chains extracted from a robot description, with forward
//! kinematics and geometric Jacobians.
//!
//! Every chain is expressed in the frame of its `base_link`. The `mount` pose
//! places that frame in the description's root frame, which is where
//! cross-limb collision checks happen.

mod spec;
pub mod urdf;

use std::collections::HashSet;

use nalgebra::{DVector, Matrix6xX, Vector3};
use thiserror::Error;

use crate::se3::Pose;
pub use spec::{IkSpec, LimbSelection, LimbSpec, OriginSpec, SphereSpec};
use urdf::UrdfRobot;

/// Joint positions of one limb (radians or meters), base to tip.
pub type JointVector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed XML at line {line}, column {column}: {message}")]
    Xml {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("chain extraction failed: {0}")]
    ChainExtraction(String),
    #[error("unsupported joint '{joint}' of type '{kind}'")]
    UnsupportedJoint { joint: String, kind: String },
    #[error("invalid robot model: {0}")]
    Structural(String),
    #[error("dimension mismatch: expected {expected} joint values, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    /// Unit axis in the joint frame (ignored for fixed joints).
    pub axis: Vector3<f64>,
    /// Parent link frame to joint frame.
    pub origin: Pose,
    pub limit_lower: f64,
    pub limit_upper: f64,
    pub velocity_limit: f64,
    pub child_link: String,
}

impl JointSpec {
    pub fn is_movable(&self) -> bool {
        self.kind != JointKind::Fixed
    }

    /// Joint-frame motion for position `q`.
    pub fn motion(&self, q: f64) -> Pose {
        match self.kind {
            JointKind::Revolute => Pose::from_axis_angle(&self.axis, q),
            JointKind::Prismatic => {
                Pose::from_translation(self.axis.x * q, self.axis.y * q, self.axis.z * q)
            }
            JointKind::Fixed => Pose::identity(),
        }
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.limit_lower, self.limit_upper)
    }
}

/// Sphere attached to the frame of `frame` (an index into [`LimbChain::joints`]).
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionSphere {
    pub frame: usize,
    pub center: Vector3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimbChain {
    pub name: String,
    pub base_link: String,
    pub tip_link: String,
    /// Base to tip, fixed joints included.
    pub joints: Vec<JointSpec>,
    pub eef_frame: Pose,
    pub gripper_joint: Option<JointSpec>,
    pub collision_spheres: Vec<CollisionSphere>,
    /// Root frame of the description to `base_link`.
    pub mount: Pose,
    movable: Vec<usize>,
}

impl LimbChain {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<JointSpec>,
        eef_frame: Pose,
        gripper_joint: Option<JointSpec>,
        collision_spheres: Vec<CollisionSphere>,
        mount: Pose,
    ) -> Result<Self, ModelError> {
        let name = name.into();
        let movable: Vec<usize> = joints
            .iter()
            .enumerate()
            .filter(|(_, j)| j.is_movable())
            .map(|(i, _)| i)
            .collect();
        if movable.is_empty() {
            return Err(ModelError::Structural(format!(
                "limb '{name}' has no movable joints"
            )));
        }
        for j in &joints {
            if j.is_movable() {
                if (j.axis.norm() - 1.0).abs() > 1e-9 {
                    return Err(ModelError::Structural(format!(
                        "joint '{}' axis is not unit length",
                        j.name
                    )));
                }
                if !(j.limit_lower <= j.limit_upper) || !(j.velocity_limit > 0.0) {
                    return Err(ModelError::Structural(format!(
                        "joint '{}' has invalid limits",
                        j.name
                    )));
                }
            }
        }
        for s in &collision_spheres {
            if s.frame >= joints.len() || !(s.radius >= 0.0) {
                return Err(ModelError::Structural(format!(
                    "limb '{name}' has an invalid collision sphere"
                )));
            }
        }
        Ok(Self {
            name,
            base_link: String::new(),
            tip_link: String::new(),
            joints,
            eef_frame,
            gripper_joint,
            collision_spheres,
            mount,
            movable,
        })
    }

    /// Number of IK-controlled joints.
    pub fn dof(&self) -> usize {
        self.movable.len()
    }

    pub fn movable_joints(&self) -> impl Iterator<Item = &JointSpec> {
        self.movable.iter().map(|&i| &self.joints[i])
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.movable_joints().map(|j| j.name.clone()).collect()
    }

    pub fn lower_limits(&self) -> JointVector {
        JointVector::from_iterator(self.dof(), self.movable_joints().map(|j| j.limit_lower))
    }

    pub fn upper_limits(&self) -> JointVector {
        JointVector::from_iterator(self.dof(), self.movable_joints().map(|j| j.limit_upper))
    }

    pub fn velocity_limits(&self) -> JointVector {
        JointVector::from_iterator(self.dof(), self.movable_joints().map(|j| j.velocity_limit))
    }

    pub fn clamp_to_limits(&self, q: &JointVector) -> JointVector {
        JointVector::from_iterator(
            self.dof(),
            self.movable_joints()
                .zip(q.iter())
                .map(|(j, &v)| j.clamp(v)),
        )
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.len() == self.dof()
            && self
                .movable_joints()
                .zip(q.iter())
                .all(|(j, &v)| v >= j.limit_lower && v <= j.limit_upper)
    }

    /// Index into `q` for each entry of `joints` (None for fixed joints).
    pub fn movable_index_of(&self, joint_index: usize) -> Option<usize> {
        self.movable.iter().position(|&i| i == joint_index)
    }

    fn check_len(&self, q: &JointVector) -> Result<(), ModelError> {
        if q.len() != self.dof() {
            return Err(ModelError::Dimension {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// End-effector pose in the base-link frame.
    pub fn forward_kinematics(&self, q: &JointVector) -> Result<Pose, ModelError> {
        self.check_len(q)?;
        let mut t = Pose::identity();
        let mut k = 0;
        for j in &self.joints {
            t = t.compose(&j.origin);
            if j.is_movable() {
                t = t.compose(&j.motion(q[k]));
                k += 1;
            }
        }
        Ok(t.compose(&self.eef_frame))
    }

    /// Pose of every joint frame (after its own motion), then the end effector.
    pub fn frame_positions(&self, q: &JointVector) -> Result<Vec<Pose>, ModelError> {
        self.check_len(q)?;
        let mut frames = Vec::with_capacity(self.joints.len() + 1);
        let mut t = Pose::identity();
        let mut k = 0;
        for j in &self.joints {
            t = t.compose(&j.origin);
            if j.is_movable() {
                t = t.compose(&j.motion(q[k]));
                k += 1;
            }
            frames.push(t);
        }
        frames.push(t.compose(&self.eef_frame));
        Ok(frames)
    }

    /// End-effector pose and the 6×N geometric Jacobian `[v; ω]`, both in the
    /// base-link frame, velocity taken at the end-effector origin.
    pub fn kinematics(&self, q: &JointVector) -> Result<(Pose, Matrix6xX<f64>), ModelError> {
        self.check_len(q)?;
        let n = self.dof();
        let mut axes = Vec::with_capacity(n);
        let mut t = Pose::identity();
        let mut k = 0;
        for j in &self.joints {
            t = t.compose(&j.origin);
            if j.is_movable() {
                axes.push((j.kind, t.rotation() * j.axis, *t.translation()));
                t = t.compose(&j.motion(q[k]));
                k += 1;
            }
        }
        let eef = t.compose(&self.eef_frame);
        let p_eef = eef.translation();
        let mut jac = Matrix6xX::zeros(n);
        for (i, (kind, z, p)) in axes.into_iter().enumerate() {
            let (lin, ang) = match kind {
                JointKind::Revolute => (z.cross(&(p_eef - p)), z),
                _ => (z, Vector3::zeros()),
            };
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&ang);
        }
        Ok((eef, jac))
    }

    pub fn geometric_jacobian(&self, q: &JointVector) -> Result<Matrix6xX<f64>, ModelError> {
        self.kinematics(q).map(|(_, j)| j)
    }

    /// World (root-frame) sphere centers for configuration `q`.
    pub fn sphere_centers(&self, q: &JointVector) -> Result<Vec<Vector3<f64>>, ModelError> {
        let frames = self.frame_positions(q)?;
        Ok(self
            .collision_spheres
            .iter()
            .map(|s| {
                self.mount
                    .transform_point(&frames[s.frame].transform_point(&s.center))
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub limbs: Vec<LimbChain>,
    /// Idle configuration per limb, same order as `limbs`.
    pub base_pose: Vec<JointVector>,
}

impl RobotModel {
    pub fn new(
        name: impl Into<String>,
        limbs: Vec<LimbChain>,
        base_pose: Vec<JointVector>,
    ) -> Result<Self, ModelError> {
        let mut names = HashSet::new();
        for l in &limbs {
            if !names.insert(l.name.as_str()) {
                return Err(ModelError::Structural(format!(
                    "duplicate limb name '{}'",
                    l.name
                )));
            }
        }
        if base_pose.len() != limbs.len() {
            return Err(ModelError::Structural(
                "one base pose per limb required".into(),
            ));
        }
        for (l, q) in limbs.iter().zip(&base_pose) {
            l.check_len(q)?;
            if !l.within_limits(q) {
                return Err(ModelError::Structural(format!(
                    "base pose of limb '{}' violates joint limits",
                    l.name
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            limbs,
            base_pose,
        })
    }

    pub fn limb(&self, name: &str) -> Option<&LimbChain> {
        self.limbs.iter().find(|l| l.name == name)
    }

    pub fn limb_index(&self, name: &str) -> Option<usize> {
        self.limbs.iter().position(|l| l.name == name)
    }

    pub fn limb_names(&self) -> Vec<String> {
        self.limbs.iter().map(|l| l.name.clone()).collect()
    }
}

/// Parses a robot description and extracts one chain per limb.
/// Returns the model together with warnings about ignored elements.
pub fn parse_robot_description(
    xml_text: &str,
    limbs: &[LimbSpec],
) -> Result<(RobotModel, Vec<String>), ModelError> {
    let robot = UrdfRobot::parse(xml_text)?;
    let mut warnings = robot.warnings.clone();
    if limbs.is_empty() {
        return Err(ModelError::Structural("no limbs configured".into()));
    }
    let mut chains = Vec::with_capacity(limbs.len());
    let mut base_pose = Vec::with_capacity(limbs.len());
    for spec in limbs {
        let chain = extract_chain(&robot, spec, &mut warnings)?;
        let q = match &spec.base_pose {
            Some(v) => {
                if v.len() != chain.dof() {
                    return Err(ModelError::Dimension {
                        expected: chain.dof(),
                        got: v.len(),
                    });
                }
                JointVector::from_column_slice(v)
            }
            None => chain.clamp_to_limits(&JointVector::zeros(chain.dof())),
        };
        chains.push(chain);
        base_pose.push(q);
    }
    let model = RobotModel::new(robot.name.clone(), chains, base_pose)?;
    Ok((model, warnings))
}

fn extract_chain(
    robot: &UrdfRobot,
    spec: &LimbSpec,
    warnings: &mut Vec<String>,
) -> Result<LimbChain, ModelError> {
    let path = robot.path(&spec.base_link, &spec.tip_link)?;
    let gripper = match &spec.gripper_joint {
        Some(name) => Some(robot.joint(name).ok_or_else(|| {
            ModelError::ChainExtraction(format!("gripper joint '{name}' not found"))
        })?),
        None => None,
    };
    let to_spec = |j: &urdf::UrdfJoint| JointSpec {
        name: j.name.clone(),
        kind: j.kind,
        axis: j.axis,
        origin: j.origin,
        limit_lower: j.lower,
        limit_upper: j.upper,
        velocity_limit: j.velocity,
        child_link: j.child.clone(),
    };
    let mut joints: Vec<JointSpec> = path.iter().map(|j| to_spec(j)).collect();
    if let Some(g) = gripper {
        if let Some(j) = joints.iter_mut().find(|j| j.name == g.name) {
            warnings.push(format!(
                "gripper joint '{}' lies on limb '{}' and is held at zero in the chain",
                g.name, spec.name
            ));
            j.origin = j.origin.compose(&j.motion(0.0));
            j.kind = JointKind::Fixed;
        }
    }
    if let Some(v) = &spec.velocity_limits {
        let n = joints.iter().filter(|j| j.is_movable()).count();
        if v.len() != n {
            return Err(ModelError::Dimension {
                expected: n,
                got: v.len(),
            });
        }
        for (j, &lim) in joints.iter_mut().filter(|j| j.is_movable()).zip(v) {
            j.velocity_limit = lim;
        }
    }

    // base link placed in the root frame, upstream joints at zero
    let mut mount = Pose::identity();
    let mut cur = spec.base_link.as_str();
    while let Some(j) = robot.parent_joint(cur) {
        if j.kind != JointKind::Fixed {
            warnings.push(format!(
                "joint '{}' above limb '{}' is movable; mounted at zero",
                j.name, spec.name
            ));
        }
        mount = j.origin.compose(&mount);
        cur = &j.parent;
    }

    let mut spheres = Vec::with_capacity(spec.spheres.len());
    for s in &spec.spheres {
        let frame = joints
            .iter()
            .position(|j| j.child_link == s.link)
            .ok_or_else(|| {
                ModelError::ChainExtraction(format!(
                    "collision sphere link '{}' not in limb '{}'",
                    s.link, spec.name
                ))
            })?;
        if !(s.radius > 0.0) {
            return Err(ModelError::Structural(format!(
                "sphere on '{}' needs a positive radius",
                s.link
            )));
        }
        spheres.push(CollisionSphere {
            frame,
            center: Vector3::new(s.center[0], s.center[1], s.center[2]),
            radius: s.radius,
        });
    }

    let eef = spec.eef_offset.map(|o| o.to_pose()).unwrap_or_default();
    let mut chain = LimbChain::new(
        spec.name.clone(),
        joints,
        eef,
        gripper.map(to_spec),
        spheres,
        mount,
    )
    .map_err(|e| match e {
        ModelError::Structural(m) => ModelError::Structural(format!(
            "{m} (base '{}', tip '{}')",
            spec.base_link, spec.tip_link
        )),
        other => other,
    })?;
    chain.base_link = spec.base_link.clone();
    chain.tip_link = spec.tip_link.clone();
    Ok(chain)
}
