//! Limb-selection blocks shared by the leader and follower config files.

use serde::{Deserialize, Serialize};

use crate::se3::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginSpec {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl OriginSpec {
    pub fn to_pose(&self) -> Pose {
        Pose::from_xyz_rpy(self.xyz, self.rpy)
    }
}

/// A collision sphere rigidly attached to a link of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub link: String,
    #[serde(default)]
    pub center: [f64; 3],
    pub radius: f64,
}

/// Per-limb `ik` block. Missing fields take the [`crate::ik::IkConfig`] defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IkSpec {
    pub damping: Option<f64>,
    pub max_iterations: Option<usize>,
    pub position_tolerance: Option<f64>,
    pub orientation_tolerance: Option<f64>,
    pub joint_weights: Option<Vec<f64>>,
    pub step_scale: Option<f64>,
}

/// One limb to extract from a robot description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimbSpec {
    pub name: String,
    pub base_link: String,
    pub tip_link: String,
    #[serde(default)]
    pub gripper_joint: Option<String>,
    /// Extra tool offset applied after `tip_link`.
    #[serde(default)]
    pub eef_offset: Option<OriginSpec>,
    /// Idle configuration; defaults to zero clamped into the joint limits.
    #[serde(default)]
    pub base_pose: Option<Vec<f64>>,
    /// Overrides the description's velocity limits (safety filter).
    #[serde(default)]
    pub velocity_limits: Option<Vec<f64>>,
    #[serde(default)]
    pub spheres: Vec<SphereSpec>,
    #[serde(default)]
    pub ik: Option<IkSpec>,
}

impl LimbSpec {
    pub fn new(name: &str, base_link: &str, tip_link: &str) -> Self {
        Self {
            name: name.to_string(),
            base_link: base_link.to_string(),
            tip_link: tip_link.to_string(),
            gripper_joint: None,
            eef_offset: None,
            base_pose: None,
            velocity_limits: None,
            spheres: Vec::new(),
            ik: None,
        }
    }
}

/// A list of `[[limbs]]` tables; other keys in the same file are ignored, so a
/// follower config doubles as a limb selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimbSelection {
    pub limbs: Vec<LimbSpec>,
}
