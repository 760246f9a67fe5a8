//! Recurrent roll estimator: LSTM (30 units) → fully connected tanh layer
//! (30 units) → linear `(sin θ̃, cos θ̃)` regression head.
//!
//! All parameters live in one flat vector whose layout is described by
//! [`ParamLayout`]; gradients and optimizer moments share that layout.

mod backprop;
mod io;
mod stream;
mod train;

pub use backprop::{backward_sequence, batch_gradient, forward_sequence, Sequence, SequenceCache};
pub use io::{load_model, save_model, MODEL_FORMAT, MODEL_VERSION};
pub use stream::LstmEstimator;
pub use train::{rmse, train, Adam, EpochLog, TrainConfig, TrainingLog};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{wrap_angle, Vec3};

/// Width of the input vector `(p̂/z_max, η̂, sin α, cos α)`.
pub const INPUT_SIZE: usize = 8;
/// Width of the regression target `(sin θ, cos θ)`.
pub const OUTPUT_SIZE: usize = 2;

/// Network input for one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; INPUT_SIZE]);

/// Regression target `(sin θ, cos θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollTarget(pub [f64; OUTPUT_SIZE]);

impl RollTarget {
    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self([s, c])
    }
}

/// Isotropic position scaling by `z_max` plus the periodic base-angle encoding.
pub fn scale_features(position: &Vec3, heading: &Vec3, base_angle: f64, z_max: f64) -> FeatureVector {
    debug_assert!(z_max > 0.0);
    let (s, c) = base_angle.sin_cos();
    FeatureVector([
        position.x / z_max,
        position.y / z_max,
        position.z / z_max,
        heading.x,
        heading.y,
        heading.z,
        s,
        c,
    ])
}

/// Roll angle from a `(sin, cos)` network output, in `(-π, π]`.
pub fn estimate_roll(y: &[f64; OUTPUT_SIZE]) -> Result<f64> {
    let norm = y[0].hypot(y[1]);
    if !(norm > 1e-6) {
        return Err(Error::DegenerateOutput(norm));
    }
    Ok(wrap_angle(y[0].atan2(y[1])))
}

/// Offsets of each parameter block inside the flat parameter vector.
///
/// Gate rows are ordered input, forget, cell candidate, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub input: usize,
    pub hidden: usize,
    pub fc: usize,
}

impl ParamLayout {
    pub fn new(input: usize, hidden: usize, fc: usize) -> Self {
        Self { input, hidden, fc }
    }

    pub fn gates(&self) -> usize {
        4 * self.hidden
    }
    pub fn w_ih(&self) -> std::ops::Range<usize> {
        0..self.gates() * self.input
    }
    pub fn w_hh(&self) -> std::ops::Range<usize> {
        let s = self.w_ih().end;
        s..s + self.gates() * self.hidden
    }
    pub fn b_gates(&self) -> std::ops::Range<usize> {
        let s = self.w_hh().end;
        s..s + self.gates()
    }
    pub fn w_fc(&self) -> std::ops::Range<usize> {
        let s = self.b_gates().end;
        s..s + self.fc * self.hidden
    }
    pub fn b_fc(&self) -> std::ops::Range<usize> {
        let s = self.w_fc().end;
        s..s + self.fc
    }
    pub fn w_out(&self) -> std::ops::Range<usize> {
        let s = self.b_fc().end;
        s..s + OUTPUT_SIZE * self.fc
    }
    pub fn b_out(&self) -> std::ops::Range<usize> {
        let s = self.w_out().end;
        s..s + OUTPUT_SIZE
    }
    pub fn len(&self) -> usize {
        self.b_out().end
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Named blocks with their `(rows, cols)` shapes, in storage order.
    pub fn blocks(&self) -> [(&'static str, std::ops::Range<usize>, usize, usize); 7] {
        [
            ("w_ih", self.w_ih(), self.gates(), self.input),
            ("w_hh", self.w_hh(), self.gates(), self.hidden),
            ("b_gates", self.b_gates(), self.gates(), 1),
            ("w_fc", self.w_fc(), self.fc, self.hidden),
            ("b_fc", self.b_fc(), self.fc, 1),
            ("w_out", self.w_out(), OUTPUT_SIZE, self.fc),
            ("b_out", self.b_out(), OUTPUT_SIZE, 1),
        ]
    }
}

/// Provenance recorded with a trained model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    /// Isotropic position scale, mm.
    pub z_max: f64,
    pub dropout: f64,
    pub metadata: ModelMetadata,
}

/// Recurrent state carried between timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmCellState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden: vec![0.0; hidden],
            cell: vec![0.0; hidden],
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out[r] += Σ_c m[r, c] · v[c]` for a row-major `m`.
#[inline]
pub(crate) fn gemv_acc(m: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (row, o) in m.chunks_exact(cols).zip(out.iter_mut()) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(v) {
            acc += a * b;
        }
        *o += acc;
    }
}

impl LstmModel {
    /// Uniform `±1/√fan_in` initialisation with forget-gate bias 1.
    pub fn new(hidden: usize, fc: usize, z_max: f64, dropout: f64, seed: u64) -> Self {
        let layout = ParamLayout::new(INPUT_SIZE, hidden, fc);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.len()];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound);
            }
        };
        fill(layout.w_ih(), hidden, &mut rng);
        fill(layout.w_hh(), hidden, &mut rng);
        fill(layout.w_fc(), hidden, &mut rng);
        fill(layout.b_fc(), hidden, &mut rng);
        fill(layout.w_out(), fc, &mut rng);
        fill(layout.b_out(), fc, &mut rng);
        let forget = layout.b_gates().start + hidden;
        for p in &mut params[forget..forget + hidden] {
            *p = 1.0;
        }
        Self {
            layout,
            params,
            z_max,
            dropout,
            metadata: ModelMetadata {
                seed,
                config_hash: String::new(),
            },
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.layout.hidden
    }

    pub fn fc_size(&self) -> usize {
        self.layout.fc
    }

    pub fn block(&self, range: std::ops::Range<usize>) -> &[f64] {
        &self.params[range]
    }

    pub fn initial_state(&self) -> LstmCellState {
        LstmCellState::zeros(self.layout.hidden)
    }

    /// Draws the inverted-dropout multipliers for the FC activations.
    pub(crate) fn dropout_mask(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let keep = 1.0 - self.dropout;
        (0..self.layout.fc)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    }

    /// One recurrent step. Dropout on the FC activations is applied only
    /// when `dropout_rng` is given (training mode).
    pub fn forward_step(
        &self,
        state: &LstmCellState,
        x: &FeatureVector,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> (LstmCellState, [f64; OUTPUT_SIZE]) {
        let mask = match dropout_rng {
            Some(rng) if self.dropout > 0.0 => Some(self.dropout_mask(rng)),
            _ => None,
        };
        let step = backprop::step_forward(self, state, &x.0, mask);
        (
            LstmCellState {
                hidden: step.h.clone(),
                cell: step.c.clone(),
            },
            step.y,
        )
    }

    /// Runs a whole sequence in inference mode from a zero state.
    pub fn predict_sequence(&self, inputs: &[FeatureVector]) -> Vec<[f64; OUTPUT_SIZE]> {
        let mut state = self.initial_state();
        inputs
            .iter()
            .map(|x| {
                let (next, y) = self.forward_step(&state, x, None);
                state = next;
                y
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn feature_scaling_examples() {
        let f = scale_features(&Vec3::new(0.0, 0.0, 75.0), &Vec3::z(), 0.0, 75.0);
        assert_eq!(&f.0[..3], &[0.0, 0.0, 1.0]);
        assert_eq!(&f.0[6..], &[0.0, 1.0]);
        let a = scale_features(&Vec3::zeros(), &Vec3::z(), 7.0 * PI, 75.0);
        let b = scale_features(&Vec3::zeros(), &Vec3::z(), PI, 75.0);
        assert!((a.0[6] - b.0[6]).abs() < 1e-12 && (a.0[7] - b.0[7]).abs() < 1e-12);
        let e = scale_features(&Vec3::zeros(), &Vec3::z(), 2.345, 75.0);
        assert!((e.0[6].powi(2) + e.0[7].powi(2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roll_from_output() {
        assert_eq!(estimate_roll(&[0.0, 1.0]).unwrap(), 0.0);
        assert!((estimate_roll(&[1.0, 0.0]).unwrap() - PI / 2.0).abs() < 1e-15);
        let base = estimate_roll(&[0.6, 0.8]).unwrap();
        for k in [1e-3, 0.5, 7.0, 1e4] {
            assert!((estimate_roll(&[0.6 * k, 0.8 * k]).unwrap() - base).abs() < 1e-15);
        }
        assert!(matches!(estimate_roll(&[1e-7, 0.0]), Err(Error::DegenerateOutput(_))));
        assert!(estimate_roll(&[f64::NAN, 1.0]).is_err());
        assert_eq!(estimate_roll(&[0.0, -1.0]).unwrap(), PI);
    }

    #[test]
    fn layout_is_contiguous() {
        let l = ParamLayout::new(8, 30, 30);
        let mut end = 0;
        for (_, r, rows, cols) in l.blocks() {
            assert_eq!(r.start, end);
            assert_eq!(r.len(), rows * cols);
            end = r.end;
        }
        assert_eq!(end, l.len());
        assert_eq!(l.len(), 120 * 8 + 120 * 30 + 120 + 900 + 30 + 60 + 2);
    }

    #[test]
    fn zero_model_outputs_bias() {
        let mut m = LstmModel::new(5, 4, 75.0, 0.2, 1);
        m.params.iter_mut().for_each(|p| *p = 0.0);
        let r = m.layout.b_out();
        m.params[r.clone()].copy_from_slice(&[0.25, -0.5]);
        let (_, y) = m.forward_step(&m.initial_state(), &FeatureVector([0.3; 8]), None);
        assert_eq!(y, [0.25, -0.5]);
    }

    #[test]
    fn inference_ignores_rng() {
        let m = LstmModel::new(6, 5, 75.0, 0.5, 2);
        let x = FeatureVector([0.1, -0.2, 0.5, 0.0, 0.1, 0.99, 0.3, 0.95]);
        let (_, a) = m.forward_step(&m.initial_state(), &x, None);
        let (_, b) = m.forward_step(&m.initial_state(), &x, None);
        assert_eq!(a, b);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let (_, c) = m.forward_step(&m.initial_state(), &x, Some(&mut r1));
        let (_, d) = m.forward_step(&m.initial_state(), &x, Some(&mut r2));
        assert!(c != a || d != a, "dropout never changed the output");
    }
}
