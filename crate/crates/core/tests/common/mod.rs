//! Session builders shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use teleop_core::config::{EnvConfig, FeedbackConfig, SimConfig};
use teleop_core::feedback::FeedbackComputer;
use teleop_core::fixtures;
use teleop_core::follower::FollowerSim;
use teleop_core::ik::{self, IkConfig};
use teleop_core::leader::{
    resolve_kinds, Leader, LeaderCommand, LimbBinding, LimbCommand, LimbPayload,
    OfflineTrajectoryLeader, PuppeteerFeed, PuppeteerReading, ScriptedLeader, VirtualPuppeteer,
};
use teleop_core::recording::RecordField;
use teleop_core::robot_model::{JointVector, LimbChain, RobotModel};
use teleop_core::se3::Pose;
use teleop_core::session::{assemble, RecordOptions, Session, SessionOptions, SessionParts};
use teleop_core::teleop::TeleopPipeline;

pub const DT: f64 = 0.02;

pub fn parts_with(
    follower_toml: &str,
    leader: Box<dyn Leader>,
    sim: SimConfig,
    leader_model: Option<Arc<RobotModel>>,
) -> SessionParts {
    let model = Arc::new(fixtures::follower_model(follower_toml));
    let cfg = fixtures::follower_config(follower_toml);
    let pipeline = TeleopPipeline::from_follower_config(model.clone(), &cfg, DT).unwrap();
    let follower = FollowerSim::new(
        model.clone(),
        &sim,
        &pipeline.safety().velocity_limits,
        cfg.collision_margin,
    );
    let feedback = FeedbackComputer::new(
        FeedbackConfig::default(),
        leader_model,
        leader.bindings(),
        &leader.payload_kinds(),
        &model,
    )
    .unwrap();
    SessionParts {
        leader,
        pipeline,
        follower,
        feedback,
    }
}

pub fn record_to(path: &Path) -> SessionOptions {
    let mut o = SessionOptions::simulated(DT);
    o.record = Some(RecordOptions {
        path: path.to_path_buf(),
        fields: RecordField::ALL.to_vec(),
    });
    o
}

/// Scripted leader with every follower limb mapped onto itself.
pub fn scripted_session(
    follower_toml: &str,
    sessions: Vec<Vec<LeaderCommand>>,
    options: SessionOptions,
) -> Session {
    let names = fixtures::follower_model(follower_toml).limb_names();
    let bindings = names.iter().map(|n| LimbBinding::identity(n)).collect();
    let leader = ScriptedLeader::new(bindings, sessions).unwrap();
    Session::new(
        parts_with(follower_toml, Box::new(leader), SimConfig::default(), None),
        options,
    )
    .unwrap()
}

pub fn replay_session(follower_toml: &str, recording: &Path, options: SessionOptions) -> Session {
    let leader = OfflineTrajectoryLeader::load_identity(recording).unwrap();
    Session::new(
        parts_with(follower_toml, Box::new(leader), SimConfig::default(), None),
        options,
    )
    .unwrap()
}

pub fn eef_command(limbs: &[String], delta: Pose, gripper: f64) -> LeaderCommand {
    LeaderCommand {
        limbs: limbs
            .iter()
            .map(|l| LimbCommand {
                limb: l.clone(),
                payload: LimbPayload::EefDelta(delta),
                gripper,
            })
            .collect(),
        start_requested: false,
        end_requested: false,
        timestamp: 0.0,
    }
}

pub fn joint_command(limbs: &[String], q: &[JointVector]) -> LeaderCommand {
    LeaderCommand {
        limbs: limbs
            .iter()
            .zip(q)
            .map(|(l, q)| LimbCommand {
                limb: l.clone(),
                payload: LimbPayload::JointPositions(q.clone()),
                gripper: 0.0,
            })
            .collect(),
        start_requested: false,
        end_requested: false,
        timestamp: 0.0,
    }
}

/// The UR5-style puppeteer fixture, streamed, driving the 7-DoF arm in
/// end-effector mode with scale 2.
pub struct StreamedUr5 {
    pub session: Session,
    pub feed: PuppeteerFeed,
    pub chain: LimbChain,
    pub base: JointVector,
}

pub fn streamed_ur5(sim: SimConfig) -> StreamedUr5 {
    let cfg = fixtures::leader_config(fixtures::UR5_LEADER_TOML);
    let leader_model = Arc::new(fixtures::ur5_model());
    let follower_model = fixtures::arm7_model();
    let bindings: Vec<LimbBinding> = cfg.mapping.iter().map(LimbBinding::from_spec).collect();
    let mode = cfg.puppeteer.as_ref().unwrap().command;
    let kinds = resolve_kinds(mode, &leader_model, &bindings, &follower_model).unwrap();
    let (leader, feed) =
        VirtualPuppeteer::streamed(leader_model.clone(), bindings, kinds, cfg.gesture).unwrap();
    let env = EnvConfig {
        realtime: false,
        sim,
        ..EnvConfig::default()
    };
    let follower_cfg = fixtures::follower_config(fixtures::ARM7_FOLLOWER_TOML);
    let session = assemble(
        Box::new(leader),
        &follower_cfg,
        Arc::new(follower_model),
        &env,
        &cfg.feedback,
        DT,
        None,
    )
    .unwrap();
    StreamedUr5 {
        session,
        feed,
        chain: leader_model.limbs[0].clone(),
        base: leader_model.base_pose[0].clone(),
    }
}

impl StreamedUr5 {
    pub fn publish(&self, q: &JointVector, gripper: f64) {
        self.feed.publish(PuppeteerReading {
            q: vec![q.clone()],
            gripper_raw: vec![gripper],
        });
    }

    /// Leader joint positions that put its EEF at each pose, warm-started
    /// along the path.
    pub fn leader_path(&self, poses: &[Pose]) -> Vec<JointVector> {
        let cfg = IkConfig {
            position_tolerance: 1e-9,
            orientation_tolerance: 1e-9,
            max_iterations: 200,
            ..IkConfig::for_dof(self.chain.dof())
        };
        let mut q = self.base.clone();
        poses
            .iter()
            .map(|p| {
                let r = ik::solve(&self.chain, p, &q, &cfg).unwrap();
                assert!(r.residual_position < 1e-7, "leader path pose unreachable");
                q = r.q_solution;
                q.clone()
            })
            .collect()
    }

    pub fn leader_base_eef(&self) -> Pose {
        self.chain.forward_kinematics(&self.base).unwrap()
    }
}
