//! Built-in robot descriptions and configs used by tests, benchmarks and the
//! CLI's `bench` command. The same files live under `crates/core/fixtures/`.

use std::path::Path;

use crate::config::{parse_toml, EnvConfig, FollowerConfig, LeaderConfig};
use nalgebra::Vector3;

use crate::robot_model::{
    parse_robot_description, JointVector, LimbChain, LimbSelection, LimbSpec, RobotModel,
};
use crate::se3::Pose;

pub const PLANAR_2R_URDF: &str = include_str!("../fixtures/planar_2r.urdf");
pub const ARM7_URDF: &str = include_str!("../fixtures/arm7.urdf");
pub const TABLE_DUAL_ARM7_URDF: &str = include_str!("../fixtures/table_dual_arm7.urdf");
pub const QUAD_LIMB_ARM7_URDF: &str = include_str!("../fixtures/quad_limb_arm7.urdf");
pub const UR5_PUPPETEER_URDF: &str = include_str!("../fixtures/ur5_puppeteer.urdf");
pub const DUAL_UR5_PUPPETEER_URDF: &str = include_str!("../fixtures/dual_ur5_puppeteer.urdf");

pub const PLANAR_LIMBS_TOML: &str = include_str!("../fixtures/planar_limbs.toml");
pub const ARM7_FOLLOWER_TOML: &str = include_str!("../fixtures/arm7_follower.toml");
pub const TABLE_FOLLOWER_TOML: &str = include_str!("../fixtures/table_follower.toml");
pub const QUAD_FOLLOWER_TOML: &str = include_str!("../fixtures/quad_follower.toml");
pub const UR5_LEADER_TOML: &str = include_str!("../fixtures/ur5_leader.toml");
pub const DUAL_PUPPETEER_LEADER_TOML: &str = include_str!("../fixtures/dual_puppeteer_leader.toml");
pub const TABLE_REPLICA_LEADER_TOML: &str = include_str!("../fixtures/table_replica_leader.toml");
pub const CONSOLE_LEADER_TOML: &str = include_str!("../fixtures/console_leader.toml");
pub const SIM_ENV_TOML: &str = include_str!("../fixtures/sim_env.toml");

/// Directory holding the fixture files on disk (for path-based loading).
pub fn fixture_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))
}

fn urdf_text(name: &str) -> &'static str {
    match name {
        "planar_2r.urdf" => PLANAR_2R_URDF,
        "arm7.urdf" => ARM7_URDF,
        "table_dual_arm7.urdf" => TABLE_DUAL_ARM7_URDF,
        "quad_limb_arm7.urdf" => QUAD_LIMB_ARM7_URDF,
        "ur5_puppeteer.urdf" => UR5_PUPPETEER_URDF,
        "dual_ur5_puppeteer.urdf" => DUAL_UR5_PUPPETEER_URDF,
        other => panic!("unknown fixture {other}"),
    }
}

fn model_from(urdf: &Path, limbs: &[LimbSpec]) -> RobotModel {
    let name = urdf
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    parse_robot_description(urdf_text(name), limbs)
        .expect("fixture model parses")
        .0
}

pub fn follower_config(toml_text: &str) -> FollowerConfig {
    parse_toml(toml_text, Path::new("fixture")).expect("fixture follower config parses")
}

pub fn leader_config(toml_text: &str) -> LeaderConfig {
    parse_toml(toml_text, Path::new("fixture")).expect("fixture leader config parses")
}

pub fn env_config() -> EnvConfig {
    parse_toml(SIM_ENV_TOML, Path::new("fixture")).expect("fixture env config parses")
}

pub fn follower_model(toml_text: &str) -> RobotModel {
    let cfg = follower_config(toml_text);
    model_from(&cfg.urdf, &cfg.limbs)
}

/// Leader-side model of a puppeteer config.
pub fn puppeteer_model(toml_text: &str) -> RobotModel {
    let cfg = leader_config(toml_text);
    let p = cfg.puppeteer.expect("puppeteer block");
    model_from(&p.urdf, &p.limbs)
}

pub fn planar_model() -> RobotModel {
    let sel: LimbSelection = parse_toml(PLANAR_LIMBS_TOML, Path::new("fixture")).unwrap();
    model_from(Path::new("planar_2r.urdf"), &sel.limbs)
}

/// The single 7-DoF arm.
pub fn arm7_model() -> RobotModel {
    follower_model(ARM7_FOLLOWER_TOML)
}

pub fn table_model() -> RobotModel {
    follower_model(TABLE_FOLLOWER_TOML)
}

pub fn table_follower_limbs() -> Vec<LimbSpec> {
    follower_config(TABLE_FOLLOWER_TOML).limbs
}

pub fn quad_model() -> RobotModel {
    follower_model(QUAD_FOLLOWER_TOML)
}

/// The single half-scale UR5-style puppeteer.
pub fn ur5_model() -> RobotModel {
    puppeteer_model(UR5_LEADER_TOML)
}

/// Base-frame offset of the weighted-IK scenario target from the arm's base
/// EEF pose: sideways and down, with a small turn about the vertical.
pub const WEIGHTED_IK_OFFSET_XYZ: [f64; 3] = [0.05, 0.15, -0.08];
pub const WEIGHTED_IK_OFFSET_RPY: [f64; 3] = [0.0, 0.0, 0.25];
/// Weight on the first joint in the weighted run.
pub const WEIGHTED_IK_W1: f64 = 0.5;

/// The 7-DoF arm at its base pose and the scenario target.
pub fn weighted_ik_scenario() -> (LimbChain, JointVector, Pose) {
    let m = arm7_model();
    let chain = m.limbs[0].clone();
    let q0 = m.base_pose[0].clone();
    let t = chain.forward_kinematics(&q0).expect("base pose");
    let offset = Pose::from_xyz_rpy([0.0; 3], WEIGHTED_IK_OFFSET_RPY);
    let target = Pose::new(
        offset.rotation() * t.rotation(),
        t.translation() + Vector3::from(WEIGHTED_IK_OFFSET_XYZ),
    );
    (chain, q0, target)
}
