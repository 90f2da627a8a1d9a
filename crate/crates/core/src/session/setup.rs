//! Building a session from the leader, follower and environment configs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{RecordOptions, Session, SessionError, SessionOptions, SessionParts};
use crate::config::{
    self, ConfigError, DeviceKind, EnvConfig, FollowerConfig, LeaderConfig, Loaded,
};
use crate::feedback::FeedbackComputer;
use crate::follower::FollowerSim;
use crate::leader::{
    resolve_kinds, ConsoleHandle, ConsoleLeader, Leader, LimbBinding, OfflineTrajectoryLeader,
    VirtualPuppeteer,
};
use crate::recording::RecordField;
use crate::robot_model::RobotModel;
use crate::teleop::TeleopPipeline;

/// Paths and overrides for one `run`.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub leader: PathBuf,
    pub follower: PathBuf,
    pub env: PathBuf,
    /// Overrides the follower's `loop_rate_hz`.
    pub rate_hz: Option<f64>,
    pub record: Option<PathBuf>,
    pub fields: Vec<RecordField>,
}

impl SessionConfig {
    pub fn new(
        leader: impl Into<PathBuf>,
        follower: impl Into<PathBuf>,
        env: impl Into<PathBuf>,
    ) -> Self {
        Self {
            leader: leader.into(),
            follower: follower.into(),
            env: env.into(),
            rate_hz: None,
            record: None,
            fields: RecordField::ALL.to_vec(),
        }
    }
}

pub struct BuiltSession {
    pub session: Session,
    /// Present when the leader is the console.
    pub console: Option<ConsoleHandle>,
    pub warnings: Vec<String>,
}

impl std::fmt::Debug for BuiltSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BuiltSession")
            .field("session", &self.session)
            .field("console", &self.console.is_some())
            .finish()
    }
}

/// The leader device a leader config describes.
pub fn build_leader(
    leader: &Loaded<LeaderConfig>,
    follower: &RobotModel,
) -> Result<(Box<dyn Leader>, Option<ConsoleHandle>, Vec<String>), SessionError> {
    let cfg = &leader.config;
    cfg.validate()?;
    let bindings: Vec<LimbBinding> = cfg.mapping.iter().map(LimbBinding::from_spec).collect();
    for b in &bindings {
        if follower.limb(&b.follower_limb).is_none() {
            return Err(ConfigError::Inconsistent(format!(
                "mapping names follower limb '{}', which the follower config does not define",
                b.follower_limb
            ))
            .into());
        }
    }
    match cfg.device {
        DeviceKind::Puppeteer => {
            let p = cfg.puppeteer.as_ref().expect("validated");
            let (model, warnings) = config::load_model(&leader.resolve(&p.urdf), &p.limbs)?;
            let model = Arc::new(model);
            let kinds = resolve_kinds(p.command, &model, &bindings, follower)?;
            let l =
                VirtualPuppeteer::scripted(model, bindings, kinds, cfg.gesture, p.script.clone())?;
            Ok((Box::new(l), None, warnings))
        }
        DeviceKind::Console => {
            let (l, handle) = ConsoleLeader::new(bindings)?;
            Ok((Box::new(l), Some(handle), Vec::new()))
        }
        DeviceKind::Offline => {
            let o = cfg.offline.as_ref().expect("validated");
            let l = OfflineTrajectoryLeader::load(&leader.resolve(&o.path), bindings)?;
            Ok((Box::new(l), None, Vec::new()))
        }
    }
}

/// Loads the follower config and its robot description.
pub fn load_follower(
    path: &Path,
) -> Result<(Loaded<FollowerConfig>, RobotModel, Vec<String>), SessionError> {
    let f: Loaded<FollowerConfig> = config::load(path)?;
    f.config.validate()?;
    let (model, warnings) = config::load_model(&f.resolve(&f.config.urdf), &f.config.limbs)?;
    Ok((f, model, warnings))
}

/// Everything for a session built from already-loaded configs.
pub fn assemble(
    leader: Box<dyn Leader>,
    follower_cfg: &FollowerConfig,
    model: Arc<RobotModel>,
    env: &EnvConfig,
    feedback: &crate::config::FeedbackConfig,
    dt: f64,
    record: Option<RecordOptions>,
) -> Result<Session, SessionError> {
    let pipeline = TeleopPipeline::from_follower_config(model.clone(), follower_cfg, dt)?;
    let follower = FollowerSim::new(
        model.clone(),
        &env.sim,
        &pipeline.safety().velocity_limits,
        follower_cfg.collision_margin,
    );
    let feedback = FeedbackComputer::new(
        *feedback,
        leader.model().cloned(),
        leader.bindings(),
        &leader.payload_kinds(),
        &model,
    )?;
    let options = SessionOptions {
        dt,
        approach_min_seconds: env.approach_min_seconds,
        record,
        realtime: env.realtime,
    };
    Session::new(
        SessionParts {
            leader,
            pipeline,
            follower,
            feedback,
        },
        options,
    )
}

/// Loads all three configs and builds a session, refusing inconsistent
/// combinations before anything moves.
pub fn build_session(cfg: &SessionConfig) -> Result<BuiltSession, SessionError> {
    let leader: Loaded<LeaderConfig> = config::load(&cfg.leader)?;
    let env: Loaded<EnvConfig> = config::load(&cfg.env)?;
    let (follower, model, mut warnings) = load_follower(&cfg.follower)?;
    let rate = cfg.rate_hz.unwrap_or(follower.config.loop_rate_hz);
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(SessionError::Options(format!(
            "loop rate {rate} Hz is not positive"
        )));
    }
    let (device, console, w) = build_leader(&leader, &model)?;
    warnings.extend(w);
    let record = cfg.record.as_ref().map(|p| RecordOptions {
        path: p.clone(),
        fields: cfg.fields.clone(),
    });
    let session = assemble(
        device,
        &follower.config,
        Arc::new(model),
        &env.config,
        &leader.config.feedback,
        1.0 / rate,
        record,
    )?;
    Ok(BuiltSession {
        session,
        console,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture_dir;
    use crate::session::SessionState;

    #[test]
    fn fixture_triplet_builds_and_runs() {
        let d = fixture_dir();
        let mut cfg = SessionConfig::new(
            d.join("ur5_leader.toml"),
            d.join("arm7_follower.toml"),
            d.join("sim_env.toml"),
        );
        cfg.rate_hz = Some(50.0);
        let mut built = build_session(&cfg).unwrap();
        assert!(built.console.is_none());
        let s = &mut built.session;
        // the fixture env paces in real time; only check the first ticks
        for _ in 0..3 {
            s.tick().unwrap();
        }
        assert_eq!(s.state(), SessionState::WaitingForStart);
    }

    #[test]
    fn mismatched_mapping_refused() {
        let d = fixture_dir();
        let cfg = SessionConfig::new(
            d.join("dual_puppeteer_leader.toml"),
            d.join("arm7_follower.toml"),
            d.join("sim_env.toml"),
        );
        let err = build_session(&cfg).unwrap_err();
        assert!(err.to_string().contains("does not define"), "{err}");
    }
}
