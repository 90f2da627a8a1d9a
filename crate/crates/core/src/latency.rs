//! Control-step timing on the 1-, 2- and 4-limb fixtures.
//!
//! One control step is interpret → safety filter → follower step for every
//! limb, the work the session loop does per tick.

use std::f64::consts::TAU;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::config::{FollowerConfig, SimConfig};
use crate::fixtures;
use crate::follower::FollowerSim;
use crate::leader::{LeaderCommand, LimbCommand, LimbPayload};
use crate::robot_model::JointVector;
use crate::se3::Pose;
use crate::teleop::{ControlSignal, PipelineError, TeleopPipeline};

pub const LOOP_PERIOD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchMode {
    Joint,
    Eef,
}

impl BenchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::Joint => "joint",
            BenchMode::Eef => "eef",
        }
    }
}

/// Follower config text for 1, 2 or 4 limbs.
pub fn fixture_for(limbs: usize) -> Option<&'static str> {
    match limbs {
        1 => Some(fixtures::ARM7_FOLLOWER_TOML),
        2 => Some(fixtures::TABLE_FOLLOWER_TOML),
        4 => Some(fixtures::QUAD_FOLLOWER_TOML),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub limbs: usize,
    pub mode: BenchMode,
    pub steps: usize,
    pub mean: Duration,
    pub p50: Duration,
    pub p99: Duration,
    pub max: Duration,
    pub ik_failures: usize,
}

impl LatencyReport {
    pub fn mean_ms(&self) -> f64 {
        self.mean.as_secs_f64() * 1e3
    }
}

/// A follower plus a precomputed command stream, stepped one tick at a time.
#[derive(Debug)]
pub struct LatencyHarness {
    limbs: usize,
    mode: BenchMode,
    pipeline: TeleopPipeline,
    follower: FollowerSim,
    prev: ControlSignal,
    commands: Vec<LeaderCommand>,
    cursor: usize,
    ik_failures: usize,
}

impl LatencyHarness {
    /// `steps` commands of a slow periodic motion around the base pose.
    pub fn new(limbs: usize, mode: BenchMode, steps: usize) -> Result<Self, PipelineError> {
        let text = fixture_for(limbs).ok_or_else(|| {
            PipelineError::Safety(format!("no {limbs}-limb fixture (use 1, 2 or 4)"))
        })?;
        let cfg: FollowerConfig = fixtures::follower_config(text);
        let model = Arc::new(fixtures::follower_model(text));
        let pipeline = TeleopPipeline::from_follower_config(model.clone(), &cfg, LOOP_PERIOD)?;
        let follower = FollowerSim::new(
            model.clone(),
            &SimConfig::default(),
            &pipeline.safety().velocity_limits,
            cfg.collision_margin,
        );
        let names = model.limb_names();
        let commands = (0..steps.max(1))
            .map(|k| {
                let t = k as f64 * LOOP_PERIOD;
                let phase = TAU * t / 4.0;
                let limbs = names
                    .iter()
                    .zip(&model.base_pose)
                    .map(|(name, base)| LimbCommand {
                        limb: name.clone(),
                        payload: match mode {
                            BenchMode::Joint => LimbPayload::JointPositions(
                                base + JointVector::from_element(base.len(), 0.1 * phase.sin()),
                            ),
                            BenchMode::Eef => LimbPayload::EefDelta(Pose::from_translation(
                                0.04 * phase.sin(),
                                0.04 * (1.0 - phase.cos()),
                                0.0,
                            )),
                        },
                        gripper: 0.5 * (1.0 - phase.cos()) / 2.0,
                    })
                    .collect();
                LeaderCommand {
                    limbs,
                    start_requested: false,
                    end_requested: false,
                    timestamp: t,
                }
            })
            .collect();
        let prev = ControlSignal::hold(follower.state());
        Ok(Self {
            limbs,
            mode,
            pipeline,
            follower,
            prev,
            commands,
            cursor: 0,
            ik_failures: 0,
        })
    }

    /// One control step; wraps around the command stream.
    pub fn step(&mut self) -> &ControlSignal {
        let cmd = &self.commands[self.cursor % self.commands.len()];
        self.cursor += 1;
        let prev_q = self.prev.q_cmd();
        let signal = self
            .pipeline
            .process(cmd, self.follower.state(), &prev_q, cmd.timestamp)
            .expect("fixture commands are well formed");
        if signal
            .limbs
            .iter()
            .any(|l| l.ik.is_some_and(|ik| !ik.converged))
        {
            self.ik_failures += 1;
        }
        self.follower.step(&signal, LOOP_PERIOD);
        self.prev = signal;
        &self.prev
    }

    pub fn follower(&self) -> &FollowerSim {
        &self.follower
    }

    /// Times every step of the stream after `warmup` untimed steps.
    pub fn run(mut self, warmup: usize) -> LatencyReport {
        for _ in 0..warmup {
            self.step();
        }
        self.ik_failures = 0;
        let n = self.commands.len();
        let mut times = Vec::with_capacity(n);
        for _ in 0..n {
            let t = Instant::now();
            self.step();
            times.push(t.elapsed());
        }
        times.sort();
        let total: Duration = times.iter().sum();
        let pick = |q: f64| times[((n as f64 * q).ceil() as usize).clamp(1, n) - 1];
        LatencyReport {
            limbs: self.limbs,
            mode: self.mode,
            steps: n,
            mean: total / n as u32,
            p50: pick(0.5),
            p99: pick(0.99),
            max: times[n - 1],
            ik_failures: self.ik_failures,
        }
    }
}

/// Convenience: build and run.
pub fn measure(
    limbs: usize,
    mode: BenchMode,
    steps: usize,
) -> Result<LatencyReport, PipelineError> {
    Ok(LatencyHarness::new(limbs, mode, steps)?.run(steps.min(100)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_fixture_steps_without_flags_or_failures() {
        for limbs in [1, 2, 4] {
            for mode in [BenchMode::Joint, BenchMode::Eef] {
                let mut h = LatencyHarness::new(limbs, mode, 200).unwrap();
                for _ in 0..200 {
                    let s = h.step();
                    assert_eq!(s.limbs.len(), limbs);
                    assert!(
                        s.limbs.iter().all(|l| !l.flags.collision),
                        "{limbs} {mode:?}"
                    );
                }
                assert_eq!(h.ik_failures, 0, "{limbs} {mode:?}");
            }
        }
        assert!(LatencyHarness::new(3, BenchMode::Joint, 10).is_err());
    }
}
