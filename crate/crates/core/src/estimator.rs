//! Roll estimators that can sit in the steering loop.

use crate::ekf::{self, EkfConfig, EkfNoise, EkfState};
use crate::error::Result;
use crate::plant::{ControlInput, MediumParams, SensedTip};
use crate::se3::Pose;

/// What an estimator may see at one control tick.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub sensed: SensedTip,
    /// Commanded base angle α = ∫u_α dt, rad.
    pub base_angle: f64,
    /// Input applied since the previous tick; `None` on the first tick.
    pub last_input: Option<ControlInput>,
    pub dt: f64,
    /// Simulator ground truth. Only the oracle estimator reads it.
    pub truth: &'a Pose,
}

/// A stateful source of full tip poses for the controller.
pub trait TipEstimator {
    fn name(&self) -> &str;

    /// Starts a new insertion from a known entry pose.
    fn reset(&mut self, entry: &Pose, base_angle: f64);

    fn estimate(&mut self, obs: &Observation<'_>) -> Result<Pose>;
}

/// Reports the simulator's true pose, standing in for an embedded 6-DOF
/// tip sensor.
#[derive(Debug, Default, Clone)]
pub struct TruthEstimator;

impl TipEstimator for TruthEstimator {
    fn name(&self) -> &str {
        "truth"
    }

    fn reset(&mut self, _entry: &Pose, _base_angle: f64) {}

    fn estimate(&mut self, obs: &Observation<'_>) -> Result<Pose> {
        Ok(*obs.truth)
    }
}

/// The torsion-blind EKF baseline wrapped for closed-loop use.
#[derive(Debug, Clone)]
pub struct EkfEstimator {
    config: EkfConfig,
    noise: EkfNoise,
    curvature: f64,
    state: EkfState,
}

impl EkfEstimator {
    /// The filter knows the nominal curvature and sensor noise of `medium`
    /// but nothing about its torsional behaviour.
    pub fn new(config: EkfConfig, medium: &MediumParams) -> Self {
        Self {
            noise: config.noise_for(medium),
            curvature: medium.curvature,
            state: EkfState::new(&Pose::identity(), config.initial_variance),
            config,
        }
    }

    pub fn state(&self) -> &EkfState {
        &self.state
    }
}

impl TipEstimator for EkfEstimator {
    fn name(&self) -> &str {
        "ekf"
    }

    fn reset(&mut self, entry: &Pose, _base_angle: f64) {
        self.state = EkfState::new(entry, self.config.initial_variance);
    }

    fn estimate(&mut self, obs: &Observation<'_>) -> Result<Pose> {
        if let Some(u) = obs.last_input {
            self.state = ekf::predict(&self.state, u, self.curvature, obs.dt, &self.noise.process);
        }
        self.state = ekf::update(&self.state, &obs.sensed, &self.noise.measurement)?;
        Ok(self.state.estimate_pose())
    }
}
