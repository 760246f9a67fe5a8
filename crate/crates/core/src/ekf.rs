//! Torsion-blind baseline observer: a multiplicative error-state EKF over
//! the rigid kinematic needle model.
//!
//! The nominal state is the tip position and a unit quaternion. The error
//! state is `δ = (δp, δφ)` with `p = p̂ + δp` and `R = R̂·Exp(δφ)`, so the
//! rotational error lives in the body frame and its third component is the
//! roll error. The model applies `u_α` directly as the tip roll rate.

use nalgebra::{Matrix3, Matrix5, Matrix6, SMatrix, UnitQuaternion, Vector5, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{kinematic_twist, ControlInput, MediumParams, SensedTip};
use crate::se3::{exp_se3, hat, Pose, Rotation, Vec3};

pub type Matrix5x6 = SMatrix<f64, 5, 6>;
pub type Matrix6x5 = SMatrix<f64, 6, 5>;

/// Filter mean and error-state covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
    /// Covariance over `(δp, δφ)`.
    pub covariance: Matrix6<f64>,
}

/// Process noise density `Q` (per second) and measurement noise `R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfNoise {
    pub process: Matrix6<f64>,
    /// Over `(p, heading tangent x, heading tangent y)`.
    pub measurement: Matrix5<f64>,
}

/// Tunables of the baseline filter as stored in the run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EkfConfig {
    /// Translation process noise density, mm²/s.
    pub process_translation: f64,
    /// Rotation process noise density, rad²/s.
    pub process_rotation: f64,
    /// Initial variance on every error-state axis.
    pub initial_variance: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            process_translation: 0.01,
            process_rotation: 0.01,
            initial_variance: 1e-4,
        }
    }
}

impl EkfConfig {
    /// Noise model matched to the sensor of `medium`.
    ///
    /// A heading tilt of angle `N(0, σ_η²)` about a uniformly random
    /// perpendicular axis puts `σ_η²/2` on each tangent coordinate.
    pub fn noise_for(&self, medium: &MediumParams) -> EkfNoise {
        let qt = self.process_translation;
        let qr = self.process_rotation;
        let sp = medium.sigma_position.powi(2);
        let sh = medium.sigma_heading.powi(2) / 2.0;
        EkfNoise {
            process: Matrix6::from_diagonal(&Vector6::new(qt, qt, qt, qr, qr, qr)),
            measurement: Matrix5::from_diagonal(&Vector5::new(sp, sp, sp, sh, sh)),
        }
    }
}

impl EkfState {
    pub fn new(pose: &Pose, initial_variance: f64) -> Self {
        Self {
            position: pose.position,
            orientation: UnitQuaternion::from_matrix(pose.rotation.matrix()),
            covariance: Matrix6::identity() * initial_variance,
        }
    }

    pub fn rotation(&self) -> Rotation {
        Rotation::from_matrix_unchecked(*self.orientation.to_rotation_matrix().matrix())
    }

    /// The mean as a tip pose.
    pub fn estimate_pose(&self) -> Pose {
        Pose::new(self.position, self.rotation())
    }

    /// Applies an error-state correction to the nominal state.
    pub fn boxplus(&self, delta: &Vector6<f64>) -> Self {
        let dphi = Vec3::new(delta[3], delta[4], delta[5]);
        Self {
            position: self.position + Vec3::new(delta[0], delta[1], delta[2]),
            orientation: self.orientation * UnitQuaternion::from_scaled_axis(dphi),
            covariance: self.covariance,
        }
    }

    /// Error-state coordinates of `self` relative to `reference`.
    pub fn boxminus(&self, reference: &Self) -> Vector6<f64> {
        let dp = self.position - reference.position;
        let dphi = (reference.orientation.inverse() * self.orientation).scaled_axis();
        Vector6::new(dp.x, dp.y, dp.z, dphi.x, dphi.y, dphi.z)
    }

    /// Roll variance, the `δφ_z` diagonal entry.
    pub fn roll_variance(&self) -> f64 {
        self.covariance[(5, 5)]
    }
}

/// Mean propagation through the rigid model, with the error-state Jacobian.
pub fn propagate_mean(state: &EkfState, u: ControlInput, curvature: f64, dt: f64) -> (EkfState, Matrix6<f64>) {
    let delta = exp_se3(
        &kinematic_twist(curvature, u.insertion_speed, u.rotation_speed),
        dt,
    );
    let r = state.rotation();
    let dq = UnitQuaternion::from_matrix(delta.rotation.matrix());
    let next = EkfState {
        position: state.position + r.apply(&delta.position),
        orientation: UnitQuaternion::new_normalize((state.orientation * dq).into_inner()),
        covariance: state.covariance,
    };
    let mut f = Matrix6::identity();
    let cross: Matrix3<f64> = -(r.matrix() * hat(&delta.position));
    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&cross);
    f.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&delta.rotation.matrix().transpose());
    (next, f)
}

/// EKF prediction: `Σ ← F·Σ·Fᵀ + Q·dt`.
pub fn predict(state: &EkfState, u: ControlInput, curvature: f64, dt: f64, process: &Matrix6<f64>) -> EkfState {
    let (mut next, f) = propagate_mean(state, u, curvature, dt);
    let cov = f * state.covariance * f.transpose() + process * dt;
    next.covariance = (cov + cov.transpose()) * 0.5;
    next
}

/// Measurement prediction in the tangent coordinates of `linearization`:
/// `(p, b₁·η, b₂·η)` where `b₁, b₂` are the body x/y axes there.
pub fn measurement_model(state: &EkfState, linearization: &EkfState) -> Vector5<f64> {
    let frame = linearization.rotation();
    let eta = state.rotation().heading();
    let b1 = frame.curvature_direction();
    let b2 = frame.apply(&Vec3::y());
    Vector5::new(
        state.position.x,
        state.position.y,
        state.position.z,
        b1.dot(&eta),
        b2.dot(&eta),
    )
}

/// Jacobian of [`measurement_model`] at the linearization point.
pub fn measurement_jacobian() -> Matrix5x6 {
    let mut h = Matrix5x6::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h[(2, 2)] = 1.0;
    h[(3, 4)] = 1.0;
    h[(4, 3)] = -1.0;
    h
}

/// EKF update with a 5-DOF measurement; covariance in Joseph form.
pub fn update(state: &EkfState, meas: &SensedTip, measurement_noise: &Matrix5<f64>) -> Result<EkfState> {
    let frame = state.rotation();
    let b1 = frame.curvature_direction();
    let b2 = frame.apply(&Vec3::y());
    let eta = meas.heading.normalize();
    let dp = meas.position - state.position;
    let residual = Vector5::new(dp.x, dp.y, dp.z, b1.dot(&eta), b2.dot(&eta));

    let h = measurement_jacobian();
    let s = h * state.covariance * h.transpose() + measurement_noise;
    let s = (s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    let s_inv = chol.inverse();
    if !s_inv.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularInnovation);
    }
    let gain: Matrix6x5 = state.covariance * h.transpose() * s_inv;
    let correction = gain * residual;

    let mut next = state.boxplus(&correction);
    let i_kh = Matrix6::identity() - gain * h;
    let cov = i_kh * state.covariance * i_kh.transpose() + gain * measurement_noise * gain.transpose();
    next.covariance = (cov + cov.transpose()) * 0.5;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{sense, step, PlantState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DT: f64 = 1.0 / 40.0;

    fn medium(rigid: bool) -> MediumParams {
        MediumParams {
            curvature: 1.0 / 150.0,
            torsion_stiffness: 1.0,
            torsion_damping: 0.1,
            friction_per_depth: 0.015,
            sigma_position: 0.2,
            sigma_heading: 0.01,
            rigid,
        }
    }

    fn sample_state(rng: &mut ChaCha8Rng) -> EkfState {
        let axis = Vec3::new(rng.random(), rng.random(), rng.random());
        let pose = Pose::new(
            Vec3::new(rng.random::<f64>() * 10.0, -3.0, 40.0),
            Rotation::from_axis_angle(&axis, rng.random::<f64>() * 0.8),
        );
        EkfState::new(&pose, 1e-3)
    }

    #[test]
    fn zero_input_zero_noise_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_state(&mut rng);
        let next = predict(&s, ControlInput::default(), 0.01, DT, &Matrix6::zeros());
        assert!((next.position - s.position).norm() < 1e-15);
        assert!(next.orientation.angle_to(&s.orientation) < 1e-12);
        assert!((next.covariance - s.covariance).abs().max() < 1e-15);
    }

    #[test]
    fn transition_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let s = sample_state(&mut rng);
            let u = ControlInput::new(5.0, rng.random_range(-6.3..6.3));
            let (mean, f) = propagate_mean(&s, u, 1.0 / 150.0, DT);
            let h = 1e-6;
            let mut fd = Matrix6::zeros();
            for j in 0..6 {
                let mut d = Vector6::zeros();
                d[j] = h;
                let (plus, _) = propagate_mean(&s.boxplus(&d), u, 1.0 / 150.0, DT);
                let (minus, _) = propagate_mean(&s.boxplus(&-d), u, 1.0 / 150.0, DT);
                let col = (plus.boxminus(&mean) - minus.boxminus(&mean)) / (2.0 * h);
                fd.set_column(j, &col);
            }
            assert!((fd - f).abs().max() < 1e-6, "{}", (fd - f).abs().max());
        }
    }

    #[test]
    fn measurement_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hj = measurement_jacobian();
        for _ in 0..20 {
            let s = sample_state(&mut rng);
            let h = 1e-6;
            let mut fd = Matrix5x6::zeros();
            for j in 0..6 {
                let mut d = Vector6::zeros();
                d[j] = h;
                let col = (measurement_model(&s.boxplus(&d), &s) - measurement_model(&s.boxplus(&-d), &s))
                    / (2.0 * h);
                fd.set_column(j, &col);
            }
            assert!((fd - hj).abs().max() < 1e-6);
        }
    }

    #[test]
    fn exact_measurement_leaves_mean_and_shrinks_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = sample_state(&mut rng);
        let pose = s.estimate_pose();
        let meas = SensedTip {
            position: pose.position,
            heading: pose.heading(),
        };
        let noise = EkfConfig::default().noise_for(&medium(false)).measurement;
        let next = update(&s, &meas, &noise).unwrap();
        assert!((next.position - s.position).norm() < 1e-12);
        assert!(next.orientation.angle_to(&s.orientation) < 1e-12);
        assert!(next.covariance.trace() <= s.covariance.trace());
    }

    #[test]
    fn singular_innovation_is_reported() {
        let mut s = EkfState::new(&Pose::identity(), 0.0);
        s.covariance = Matrix6::zeros();
        let meas = SensedTip {
            position: Vec3::zeros(),
            heading: Vec3::z(),
        };
        assert!(matches!(
            update(&s, &meas, &Matrix5::zeros()),
            Err(Error::SingularInnovation)
        ));
    }

    #[test]
    fn rigid_plant_prediction_tracks_exactly() {
        let m = medium(true);
        let mut plant = PlantState::at_entry(0.7);
        let mut ekf = EkfState::new(&plant.pose, 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let u = ControlInput::new(5.0, rng.random_range(-6.3..6.3));
            plant = step(&plant, u, &m, DT);
            ekf = predict(&ekf, u, m.curvature, DT, &Matrix6::zeros());
            assert!((ekf.position - plant.pose.position).norm() < 1e-9);
            assert!((ekf.rotation().matrix() - plant.pose.rotation.matrix()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn joseph_update_keeps_covariance_psd() {
        let m = medium(false);
        let cfg = EkfConfig::default();
        let noise = cfg.noise_for(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut plant = PlantState::at_entry(0.0);
        let mut ekf = EkfState::new(&plant.pose, cfg.initial_variance);
        for i in 0..10_000 {
            if i % 600 == 0 {
                plant = PlantState::at_entry(rng.random_range(-3.0..3.0));
                ekf = EkfState::new(&plant.pose, cfg.initial_variance);
            }
            let u = ControlInput::new(5.0, rng.random_range(-6.3..6.3));
            plant = step(&plant, u, &m, DT);
            ekf = predict(&ekf, u, m.curvature, DT, &noise.process);
            let z = sense(&plant, &m, &mut rng);
            ekf = update(&ekf, &z, &noise.measurement).unwrap();
            let sym = (ekf.covariance - ekf.covariance.transpose()).abs().max();
            assert!(sym < 1e-12);
            let min_eig = ekf.covariance.symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-9, "step {i}: eigenvalue {min_eig}");
            assert!((ekf.orientation.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn roll_variance_stays_above_floor_under_rotation() {
        let m = medium(false);
        let cfg = EkfConfig::default();
        let noise = cfg.noise_for(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut plant = PlantState::at_entry(0.0);
        let mut ekf = EkfState::new(&plant.pose, cfg.initial_variance);
        let floor = ekf.roll_variance();
        for i in 0..480 {
            let w = if (i / 20) % 2 == 0 { 6.28 } else { -6.28 };
            let u = ControlInput::new(5.0, w);
            plant = step(&plant, u, &m, DT);
            ekf = predict(&ekf, u, m.curvature, DT, &noise.process);
            ekf = update(&ekf, &sense(&plant, &m, &mut rng), &noise.measurement).unwrap();
            assert!(ekf.roll_variance() >= floor, "step {i}");
        }
        assert!(ekf.roll_variance() > floor);
    }

    #[test]
    fn estimate_pose_round_trips_through_roll_decomposition() {
        let s = EkfState::new(&Pose::identity(), 1e-4);
        assert_eq!(s.estimate_pose().position, Vec3::zeros());
        assert!((s.estimate_pose().rotation.matrix() - Rotation::identity().matrix()).abs().max() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = sample_state(&mut rng);
        let s = predict(&s, ControlInput::new(5.0, 2.0), 0.01, DT, &Matrix6::zeros());
        let pose = s.estimate_pose();
        let roll = pose.roll().unwrap();
        let rebuilt = Pose::from_heading_roll(pose.position, &pose.heading(), roll).unwrap();
        assert!((rebuilt.rotation.matrix() - pose.rotation.matrix()).abs().max() < 1e-9);
    }
}
