//! The three session config documents (leader, follower, environment), all
//! TOML. Relative paths inside a document resolve against the directory the
//! document was loaded from.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robot_model::{parse_robot_description, LimbSpec, ModelError, RobotModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("robot description {path}: {source}")]
    Model {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error("inconsistent configuration: {0}")]
    Inconsistent(String),
}

fn default_loop_rate() -> f64 {
    50.0
}

fn default_one() -> f64 {
    1.0
}

/// `cfg_follower`: robot description, limbs, safety parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerConfig {
    pub urdf: PathBuf,
    #[serde(default = "default_loop_rate")]
    pub loop_rate_hz: f64,
    #[serde(default)]
    pub collision_margin: f64,
    pub limbs: Vec<LimbSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Puppeteer,
    Console,
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandMode {
    /// Joint space when leader and follower limbs have the same joint layout.
    #[default]
    Auto,
    Joint,
    Eef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingSpec {
    pub leader_limb: String,
    pub follower_limb: String,
    #[serde(default = "default_one")]
    pub scale: f64,
    /// Raw gripper reading that maps to 0 and 1.
    #[serde(default = "default_gripper_range")]
    pub gripper_range: [f64; 2],
}

fn default_gripper_range() -> [f64; 2] {
    [0.0, 1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GestureConfig {
    pub close_threshold: f64,
    pub hold_seconds: f64,
    /// End gesture: leader joints within this distance of the leader base pose.
    pub end_pose_tolerance: f64,
}

impl Default for GestureConfig {
    fn default() -> Self {
        Self {
            close_threshold: 0.9,
            hold_seconds: 0.5,
            end_pose_tolerance: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeedbackConfig {
    pub kp: f64,
    pub bias_gain: f64,
    pub gripper_gain: f64,
    pub torque_clip: f64,
    pub rate_hz: f64,
    /// Damping of the leader Jacobian pseudo-inverse.
    pub damping: f64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self {
            kp: 1.0,
            bias_gain: 0.3,
            gripper_gain: 1.0,
            torque_clip: 1.0,
            rate_hz: 200.0,
            damping: 1e-3,
        }
    }
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.kp >= 0.0 && self.bias_gain >= 0.0 && self.gripper_gain >= 0.0) {
            return Err("feedback gains must be non-negative".into());
        }
        if !(self.torque_clip > 0.0) || !(self.rate_hz > 0.0) || !(self.damping >= 0.0) {
            return Err("feedback torque_clip and rate_hz must be positive".into());
        }
        Ok(())
    }
}

/// Scripted motion for the virtual puppeteer: per cycle a start gesture,
/// a sinusoidal excursion around the base pose, and an end gesture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScriptSpec {
    pub cycles: usize,
    pub motion_seconds: f64,
    pub period_seconds: f64,
    /// Per-joint amplitude (radians), applied to every limb; a single value
    /// is broadcast to all joints.
    pub amplitude: Vec<f64>,
    /// Gripper squeeze amplitude in `[0, 1]` during the motion phase.
    pub gripper_amplitude: f64,
}

impl Default for ScriptSpec {
    fn default() -> Self {
        Self {
            cycles: 1,
            motion_seconds: 8.0,
            period_seconds: 4.0,
            amplitude: vec![0.15],
            gripper_amplitude: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PuppeteerConfig {
    pub urdf: PathBuf,
    pub limbs: Vec<LimbSpec>,
    #[serde(default)]
    pub command: CommandMode,
    #[serde(default)]
    pub script: ScriptSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineConfig {
    pub path: PathBuf,
}

/// `cfg_leader`: device type, limb mapping and scale, gestures, feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderConfig {
    pub device: DeviceKind,
    pub mapping: Vec<MappingSpec>,
    #[serde(default)]
    pub gesture: GestureConfig,
    #[serde(default)]
    pub feedback: FeedbackConfig,
    #[serde(default)]
    pub puppeteer: Option<PuppeteerConfig>,
    #[serde(default)]
    pub offline: Option<OfflineConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Sim,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Actuator velocity limit as a multiple of the safety-filter limit.
    pub actuator_velocity_scale: f64,
    pub gripper_time_constant: f64,
    /// Normalized gripper position where a grasped object blocks closing.
    pub gripper_stop: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            actuator_velocity_scale: 2.0,
            gripper_time_constant: 0.05,
            gripper_stop: None,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_approach() -> f64 {
    1.0
}

/// `cfg_env`: which follower backend to drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(default)]
    pub backend: Backend,
    /// Pace the loop against the wall clock (false: run as fast as possible).
    #[serde(default = "default_true")]
    pub realtime: bool,
    /// Lower bound on approach and reset motions, seconds.
    #[serde(default = "default_approach")]
    pub approach_min_seconds: f64,
    #[serde(default)]
    pub sim: SimConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Sim,
            realtime: true,
            approach_min_seconds: default_approach(),
            sim: SimConfig::default(),
        }
    }
}

/// A config document together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub config: T,
    pub dir: PathBuf,
}

impl<T> Loaded<T> {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }
}

pub fn parse_toml<T: serde::de::DeserializeOwned>(
    text: &str,
    path: &Path,
) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Loaded<T>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config = parse_toml(&text, path)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, dir })
}

pub fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Limb list of any config that has one: a follower config or bare limbs
/// file (`[[limbs]]`) or a puppeteer leader config (`[[puppeteer.limbs]]`).
/// Other keys are ignored.
pub fn load_limb_specs(path: &Path) -> Result<Vec<LimbSpec>, ConfigError> {
    #[derive(Deserialize)]
    struct Puppeteer {
        limbs: Vec<LimbSpec>,
    }
    #[derive(Deserialize)]
    struct AnyLimbs {
        limbs: Option<Vec<LimbSpec>>,
        puppeteer: Option<Puppeteer>,
    }
    let text = read_text(path)?;
    let any: AnyLimbs = parse_toml(&text, path)?;
    any.limbs
        .or(any.puppeteer.map(|p| p.limbs))
        .ok_or_else(|| ConfigError::Parse {
            path: path.to_path_buf(),
            message: "no [[limbs]] or [[puppeteer.limbs]] table".into(),
        })
}

/// Parses a description file for the given limbs; returns model and warnings.
pub fn load_model(
    urdf: &Path,
    limbs: &[LimbSpec],
) -> Result<(RobotModel, Vec<String>), ConfigError> {
    let text = read_text(urdf)?;
    parse_robot_description(&text, limbs).map_err(|source| ConfigError::Model {
        path: urdf.to_path_buf(),
        source,
    })
}

impl FollowerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.loop_rate_hz > 0.0) {
            return Err(ConfigError::Inconsistent(
                "loop_rate_hz must be positive".into(),
            ));
        }
        if !(self.collision_margin >= 0.0) {
            return Err(ConfigError::Inconsistent(
                "collision_margin must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

impl LeaderConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut leaders = std::collections::HashSet::new();
        let mut followers = std::collections::HashSet::new();
        if self.mapping.is_empty() {
            return Err(ConfigError::Inconsistent("leader mapping is empty".into()));
        }
        for m in &self.mapping {
            if !(m.scale > 0.0) || !m.scale.is_finite() {
                return Err(ConfigError::Inconsistent(format!(
                    "scale for limb '{}' must be positive",
                    m.leader_limb
                )));
            }
            if !leaders.insert(&m.leader_limb) || !followers.insert(&m.follower_limb) {
                return Err(ConfigError::Inconsistent(
                    "limb mapping must be one-to-one".into(),
                ));
            }
            if m.gripper_range[0] == m.gripper_range[1] {
                return Err(ConfigError::Inconsistent(
                    "gripper_range must span a non-empty interval".into(),
                ));
            }
        }
        self.feedback
            .validate()
            .map_err(ConfigError::Inconsistent)?;
        match self.device {
            DeviceKind::Puppeteer if self.puppeteer.is_none() => Err(ConfigError::Inconsistent(
                "puppeteer device needs a [puppeteer] block".into(),
            )),
            DeviceKind::Offline if self.offline.is_none() => Err(ConfigError::Inconsistent(
                "offline device needs an [offline] block".into(),
            )),
            _ => Ok(()),
        }
    }
}
