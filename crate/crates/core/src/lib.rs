//! Leader/follower teleoperation engine: kinematics, IK, leader devices, the
//! safety pipeline, a kinematic follower simulator, force feedback and the
//! session loop.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collision;
pub mod config;
pub mod feedback;
pub mod fixtures;
pub mod follower;
pub mod ik;
pub mod latency;
pub mod leader;
pub mod mailbox;
pub mod recording;
pub mod robot_model;
pub mod se3;
pub mod session;
pub mod teleop;

pub use leader::{Leader, LeaderCommand, LimbCommand, LimbPayload};
pub use robot_model::{JointVector, LimbChain, RobotModel};
pub use se3::{Pose, Twist};
pub use session::{Session, SessionState};
pub use teleop::{ControlSignal, SafetyFlags};
