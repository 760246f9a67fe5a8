//! Sliding-mode steering: bang-bang base rotation on the roll-error surface
//! at constant insertion speed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::ControlInput;
use crate::se3::{heading_frame, wrap_angle, Pose, RollDecomposition, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerParams {
    /// λ₁, insertion speed, mm/s.
    pub insertion_speed: f64,
    /// λ₂, base rotation speed magnitude, rad/s.
    pub rotation_speed: f64,
    /// Control loop rate, Hz.
    pub rate: f64,
    /// Roll-error deadband ε, rad.
    pub deadband: f64,
    /// Distance at which the target counts as reached, mm.
    pub arrival_tolerance: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            insertion_speed: 5.0,
            rotation_speed: 2.0 * std::f64::consts::PI,
            rate: 40.0,
            deadband: 0.05,
            arrival_tolerance: 0.25,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.insertion_speed > 0.0
            && self.rotation_speed > 0.0
            && self.rate > 0.0
            && self.deadband >= 0.0
            && self.arrival_tolerance >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid controller parameters: {self:?}")))
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlCommand {
    Drive(ControlInput),
    /// The target is within tolerance or has passed behind the tip plane.
    Arrived,
}

/// Roll at which the bevel curvature plane contains the target on the
/// curving side, measured in the heading frame of `pose`.
pub fn desired_roll(pose: &Pose, target: &Vec3) -> Result<f64> {
    let frame = heading_frame(&pose.heading())?;
    let local = frame.transpose().apply(&(target - pose.position));
    Ok(local.y.atan2(local.x))
}

/// Wrapped roll error `θ_des − θ_est` defining the sliding surface.
pub fn roll_error(pose: &Pose, target: &Vec3) -> Result<f64> {
    let est = RollDecomposition::decompose(&pose.rotation)?.roll;
    Ok(wrap_angle(desired_roll(pose, target)? - est))
}

/// One tick of the sliding-mode law.
pub fn control(pose: &Pose, target: &Vec3, params: &ControllerParams) -> Result<ControlCommand> {
    let offset = target - pose.position;
    if offset.norm() <= params.arrival_tolerance || offset.dot(&pose.heading()) <= 0.0 {
        return Ok(ControlCommand::Arrived);
    }
    let e = roll_error(pose, target)?;
    let rotation_speed = if e.abs() > params.deadband {
        params.rotation_speed * e.signum()
    } else {
        0.0
    };
    Ok(ControlCommand::Drive(ControlInput::new(
        params.insertion_speed,
        rotation_speed,
    )))
}

/// Euclidean distance from the final tip position to the target, mm.
pub fn targeting_error(final_tip: &Vec3, target: &Vec3) -> f64 {
    (final_tip - target).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{sample_target, step, MediumParams, PlantState, WorkspaceCone};
    use crate::se3::Rotation;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn drive(cmd: ControlCommand) -> ControlInput {
        match cmd {
            ControlCommand::Drive(u) => u,
            ControlCommand::Arrived => panic!("unexpected arrival"),
        }
    }

    #[test]
    fn target_in_bevel_plane_needs_no_rotation() {
        let p = ControllerParams::default();
        let pose = Pose::identity();
        let u = drive(control(&pose, &Vec3::new(5.0, 0.0, 50.0), &p).unwrap());
        assert_eq!(u, ControlInput::new(p.insertion_speed, 0.0));
    }

    #[test]
    fn quarter_turn_target_rotates_positive() {
        let p = ControllerParams::default();
        let pose = Pose::identity();
        let u = drive(control(&pose, &Vec3::new(0.0, 5.0, 50.0), &p).unwrap());
        assert_eq!(u.rotation_speed, p.rotation_speed);
        let u = drive(control(&pose, &Vec3::new(0.0, -5.0, 50.0), &p).unwrap());
        assert_eq!(u.rotation_speed, -p.rotation_speed);
    }

    #[test]
    fn arrival_and_passed_target() {
        let p = ControllerParams::default();
        let pose = Pose::new(Vec3::new(0.0, 0.0, 50.0), Rotation::identity());
        assert_eq!(control(&pose, &Vec3::new(0.1, 0.0, 50.1), &p).unwrap(), ControlCommand::Arrived);
        assert_eq!(control(&pose, &Vec3::new(3.0, 0.0, 49.0), &p).unwrap(), ControlCommand::Arrived);
    }

    #[test]
    fn targeting_error_values() {
        let x = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(targeting_error(&x, &x), 0.0);
        assert_eq!(targeting_error(&Vec3::zeros(), &Vec3::new(3.0, 4.0, 0.0)), 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a: [f64; 3] = rng.random();
            let b: [f64; 3] = rng.random();
            let oracle = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            let got = targeting_error(&Vec3::from(a), &Vec3::from(b));
            assert!((got - oracle).abs() < 1e-15);
        }
    }

    #[test]
    fn rigid_closed_loop_with_true_pose_reaches_targets() {
        let medium = MediumParams {
            curvature: 1.0 / 150.0,
            torsion_stiffness: 1.0,
            torsion_damping: 0.1,
            friction_per_depth: 0.0,
            sigma_position: 0.0,
            sigma_heading: 0.0,
            rigid: true,
        };
        let params = ControllerParams::default();
        let cone = WorkspaceCone::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let target = sample_target(&cone, &mut rng);
            let mut s = PlantState::at_entry(rng.random_range(-PI..PI));
            let mut flips = 0usize;
            let mut last = 0.0f64;
            let mut ticks = 0usize;
            while let ControlCommand::Drive(u) = control(&s.pose, &target, &params).unwrap() {
                if u.rotation_speed != 0.0 && last != 0.0 && u.rotation_speed.signum() != last.signum() {
                    flips += 1;
                }
                if u.rotation_speed != 0.0 {
                    last = u.rotation_speed;
                }
                s = step(&s, u, &medium, params.dt());
                ticks += 1;
                assert!(ticks < 10_000);
            }
            let err = targeting_error(&s.pose.position, &target);
            assert!(err < 1.0, "target {target:?} missed by {err}");
            assert!(flips as f64 <= ticks as f64);
        }
    }

    proptest! {
        #[test]
        fn roll_invariance_about_insertion_axis(
            x in -10.0f64..10.0, y in -10.0f64..10.0, z in 20.0f64..70.0,
            roll in -3.0f64..3.0, spin in -3.0f64..3.0,
        ) {
            prop_assume!(x.hypot(y) > 0.5);
            let p = ControllerParams::default();
            let pose = Pose::new(Vec3::zeros(), Rotation::rot_z(roll));
            let target = Vec3::new(x, y, z);
            let q = Rotation::rot_z(spin);
            let pose2 = Pose::new(Vec3::zeros(), q * pose.rotation);
            let target2 = q.apply(&target);
            let e1 = roll_error(&pose, &target).unwrap();
            let e2 = roll_error(&pose2, &target2).unwrap();
            prop_assume!(e1.abs() < PI - 1e-6);
            prop_assume!((e1.abs() - p.deadband).abs() > 1e-9);
            prop_assert!((e1 - e2).abs() < 1e-9);
            let u1 = control(&pose, &target, &p).unwrap();
            let u2 = control(&pose2, &target2, &p).unwrap();
            prop_assert_eq!(u1, u2);
        }
    }
}
