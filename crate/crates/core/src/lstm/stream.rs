use super::{estimate_roll, scale_features, LstmCellState, LstmModel, OUTPUT_SIZE};
use crate::error::Result;
use crate::estimator::{Observation, TipEstimator};
use crate::se3::{Pose, Vec3};

/// Online roll estimator: one network step per control tick, with the
/// recurrent state carried across ticks and cleared on `reset`.
#[derive(Debug, Clone)]
pub struct LstmEstimator {
    model: LstmModel,
    state: LstmCellState,
    last_output: [f64; OUTPUT_SIZE],
}

impl LstmEstimator {
    pub fn new(model: LstmModel) -> Self {
        let state = model.initial_state();
        Self {
            model,
            state,
            last_output: [0.0; OUTPUT_SIZE],
        }
    }

    pub fn model(&self) -> &LstmModel {
        &self.model
    }

    pub fn cell_state(&self) -> &LstmCellState {
        &self.state
    }

    /// Raw `(sin, cos)` output of the latest tick.
    pub fn last_output(&self) -> [f64; OUTPUT_SIZE] {
        self.last_output
    }

    pub fn clear(&mut self) {
        self.state = self.model.initial_state();
        self.last_output = [0.0; OUTPUT_SIZE];
    }

    /// Consumes one sensed sample and returns the raw network output.
    pub fn push(&mut self, position: &Vec3, heading: &Vec3, base_angle: f64) -> [f64; OUTPUT_SIZE] {
        let x = scale_features(position, heading, base_angle, self.model.z_max);
        let (next, y) = self.model.forward_step(&self.state, &x, None);
        self.state = next;
        self.last_output = y;
        y
    }
}

impl TipEstimator for LstmEstimator {
    fn name(&self) -> &str {
        "lstm"
    }

    fn reset(&mut self, _entry: &Pose, _base_angle: f64) {
        self.clear();
    }

    fn estimate(&mut self, obs: &Observation<'_>) -> Result<Pose> {
        let y = self.push(&obs.sensed.position, &obs.sensed.heading, obs.base_angle);
        let roll = estimate_roll(&y)?;
        Pose::from_heading_roll(obs.sensed.position, &obs.sensed.heading, roll)
    }
}
