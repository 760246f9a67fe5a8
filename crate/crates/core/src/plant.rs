//! Ground-truth needle simulator.
//!
//! The tip follows the non-holonomic bevel-tip model: it translates along
//! its heading at the insertion speed while curving toward body `+x` with
//! curvature `κ`. Between the actuator at the base and the tip sits a
//! torsional spring-damper with depth-proportional Coulomb friction, so the
//! tip roll `θ` trails the commanded base angle `α` with a stick/slip lag.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{exp_se3, Pose, Rotation, Twist, Vec3};

/// Tissue and sensor parameters of one insertion medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumParams {
    /// Needle curvature κ, 1/mm.
    pub curvature: f64,
    /// Shaft torsional stiffness k_t, N·mm/rad.
    pub torsion_stiffness: f64,
    /// Torsional damping c_t, N·mm·s/rad.
    pub torsion_damping: f64,
    /// Coulomb friction torque per mm of insertion μ_f, N·mm/mm.
    pub friction_per_depth: f64,
    /// Per-axis position sensor noise σ_p, mm.
    pub sigma_position: f64,
    /// Heading sensor noise σ_η, rad.
    pub sigma_heading: f64,
    /// Infinitely stiff shaft: the tip roll equals the base angle.
    #[serde(default)]
    pub rigid: bool,
}

impl MediumParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.curvature > 0.0
            && self.torsion_stiffness > 0.0
            && self.torsion_damping > 0.0
            && self.friction_per_depth >= 0.0
            && self.sigma_position >= 0.0
            && self.sigma_heading >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid medium parameters: {self:?}")))
        }
    }

    pub fn with_rigid(mut self, rigid: bool) -> Self {
        self.rigid = rigid;
        self
    }

    /// Steady-state slip lag `μ_f·ℓ / k_t` at insertion depth `depth`, rad.
    pub fn lag_width(&self, depth: f64) -> f64 {
        if self.rigid {
            0.0
        } else {
            self.friction_per_depth * depth / self.torsion_stiffness
        }
    }
}

/// Commanded velocities at the needle base.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// u_ℓ, mm/s. Never negative.
    pub insertion_speed: f64,
    /// u_α, rad/s.
    pub rotation_speed: f64,
}

impl ControlInput {
    pub fn new(insertion_speed: f64, rotation_speed: f64) -> Self {
        Self {
            insertion_speed,
            rotation_speed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub pose: Pose,
    /// Commanded base angle α (unwrapped), rad.
    pub base_angle: f64,
    /// Accumulated tip twist θ (unwrapped), rad.
    pub tip_angle: f64,
    /// Insertion depth ℓ, mm.
    pub depth: f64,
    /// Tip twist rate over the last step, rad/s.
    pub tip_rate: f64,
}

impl PlantState {
    /// Needle at the entry point, heading `+z`, with no torsional preload.
    pub fn at_entry(roll: f64) -> Self {
        Self {
            pose: Pose::new(Vec3::zeros(), Rotation::rot_z(roll)),
            base_angle: roll,
            tip_angle: roll,
            depth: 0.0,
            tip_rate: 0.0,
        }
    }

    /// Base-to-tip twist lag α − θ, rad.
    pub fn lag(&self) -> f64 {
        self.base_angle - self.tip_angle
    }
}

/// Body twist of the rigid kinematic model for insertion speed `u_l` and tip
/// roll rate `roll_rate`.
pub fn kinematic_twist(curvature: f64, insertion_speed: f64, roll_rate: f64) -> Twist {
    Twist::new(
        0.0,
        0.0,
        insertion_speed,
        0.0,
        curvature * insertion_speed,
        roll_rate,
    )
}

/// Tip twist after one step of the stick/slip torsion model.
///
/// While the spring torque `k_t·(α − θ)` stays within the friction torque
/// `μ_f·ℓ` the tip sticks. Otherwise it slips and the lag relaxes toward the
/// breakaway lag with time constant `c_t/k_t`; the slip phase is integrated
/// in closed form with `α` held at its end-of-step value.
pub fn torsion_step(base_angle: f64, tip_angle: f64, depth: f64, medium: &MediumParams, dt: f64) -> f64 {
    if medium.rigid {
        return base_angle;
    }
    let lag = base_angle - tip_angle;
    let torque = medium.torsion_stiffness * lag;
    let friction = medium.friction_per_depth * depth;
    if torque.abs() <= friction {
        return tip_angle;
    }
    let breakaway = lag.signum() * friction / medium.torsion_stiffness;
    let decay = (-medium.torsion_stiffness * dt / medium.torsion_damping).exp();
    base_angle - (breakaway + (lag - breakaway) * decay)
}

/// Advances the plant by `dt` seconds.
pub fn step(state: &PlantState, u: ControlInput, medium: &MediumParams, dt: f64) -> PlantState {
    debug_assert!(dt > 0.0);
    let insertion = u.insertion_speed.max(0.0);
    let base_angle = state.base_angle + u.rotation_speed * dt;
    let tip_angle = if medium.rigid {
        base_angle
    } else {
        torsion_step(base_angle, state.tip_angle, state.depth, medium, dt)
    };
    let tip_rate = if medium.rigid {
        u.rotation_speed
    } else {
        (tip_angle - state.tip_angle) / dt
    };
    let increment = exp_se3(&kinematic_twist(medium.curvature, insertion, tip_rate), dt);
    PlantState {
        pose: state.pose.compose(&increment),
        base_angle,
        tip_angle,
        depth: state.depth + insertion * dt,
        tip_rate,
    }
}

/// A 5-DOF tip measurement: position and heading, no roll.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensedTip {
    pub position: Vec3,
    pub heading: Vec3,
}

/// Noisy external measurement of the tip position and heading.
pub fn sense<R: Rng + ?Sized>(state: &PlantState, medium: &MediumParams, rng: &mut R) -> SensedTip {
    let mut position = state.pose.position;
    if medium.sigma_position > 0.0 {
        let noise = Normal::new(0.0, medium.sigma_position).expect("finite sigma");
        for i in 0..3 {
            position[i] += noise.sample(rng);
        }
    }
    let heading = state.pose.heading();
    if medium.sigma_heading <= 0.0 {
        return SensedTip {
            position,
            heading: heading.normalize(),
        };
    }
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let axis = state.pose.rotation.curvature_direction() * phi.cos()
        + state.pose.rotation.apply(&Vector3::y()) * phi.sin();
    let z: f64 = StandardNormal.sample(rng);
    let tilt = Rotation::from_axis_angle(&axis, z * medium.sigma_heading);
    SensedTip {
        position,
        heading: tilt.apply(&heading).normalize(),
    }
}

/// Reachable "trumpet" of insertion targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceCone {
    /// Curvature of the bounding arc, 1/mm.
    pub bounding_curvature: f64,
    /// Shallowest target depth, mm.
    pub min_depth: f64,
    /// Deepest target depth, mm.
    pub max_depth: f64,
}

impl Default for WorkspaceCone {
    fn default() -> Self {
        Self {
            bounding_curvature: 1.0 / 200.0,
            min_depth: 40.0,
            max_depth: 75.0,
        }
    }
}

impl WorkspaceCone {
    pub fn validate(&self) -> Result<()> {
        let ok = self.bounding_curvature >= 0.0
            && self.min_depth >= 0.0
            && self.max_depth >= self.min_depth
            && self.bounding_curvature * self.max_depth < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid workspace cone: {self:?}")))
        }
    }

    /// Lateral offset of a bounding-curvature arc when it reaches depth `z`.
    pub fn radial_bound(&self, z: f64) -> f64 {
        let k = self.bounding_curvature;
        k * z * z / (1.0 + (1.0 - k * k * z * z).max(0.0).sqrt())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        p.z >= self.min_depth
            && p.z <= self.max_depth
            && p.x.hypot(p.y) <= self.radial_bound(p.z) * (1.0 + 1e-12)
    }
}

/// Draws a target uniformly from the volume of the workspace trumpet.
pub fn sample_target<R: Rng + ?Sized>(cone: &WorkspaceCone, rng: &mut R) -> Vec3 {
    let outer = cone.radial_bound(cone.max_depth);
    loop {
        let z = if cone.max_depth > cone.min_depth {
            rng.random_range(cone.min_depth..=cone.max_depth)
        } else {
            cone.min_depth
        };
        let bound = cone.radial_bound(z);
        // Accept depth with probability proportional to the disc area there.
        let accept: f64 = rng.random();
        if outer > 0.0 && accept * outer * outer > bound * bound {
            continue;
        }
        let r = bound * rng.random::<f64>().sqrt();
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        return Vec3::new(r * phi.cos(), r * phi.sin(), z);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::RollDecomposition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gel() -> MediumParams {
        MediumParams {
            curvature: 1.0 / 150.0,
            torsion_stiffness: 1.0,
            torsion_damping: 0.1,
            friction_per_depth: 0.01,
            sigma_position: 0.0,
            sigma_heading: 0.0,
            rigid: false,
        }
    }

    const DT: f64 = 1.0 / 40.0;

    #[test]
    fn rigid_insertion_traces_constant_curvature_arc() {
        let m = gel().with_rigid(true);
        let mut s = PlantState::at_entry(0.0);
        let u = ControlInput::new(5.0, 0.0);
        for _ in 0..400 {
            s = step(&s, u, &m, DT);
        }
        let arc = 5.0 * 400.0 * DT;
        let r = 1.0 / m.curvature;
        let phi = arc / r;
        let expect = Vec3::new(r * (1.0 - phi.cos()), 0.0, r * phi.sin());
        assert!((s.pose.position - expect).norm() < 1e-9);
        assert!((s.depth - arc).abs() < 1e-12);
    }

    #[test]
    fn frictionless_tip_relaxes_exponentially() {
        let mut m = gel();
        m.friction_per_depth = 0.0;
        let mut s = PlantState::at_entry(0.0);
        // one step of base rotation, then hold
        s = step(&s, ControlInput::new(0.0, 4.0), &m, DT);
        let alpha = s.base_angle;
        let tau = m.torsion_damping / m.torsion_stiffness;
        let mut t = DT;
        for _ in 0..60 {
            s = step(&s, ControlInput::new(0.0, 0.0), &m, DT);
            t += DT;
            let oracle = alpha * (1.0 - (-t / tau).exp());
            assert!((s.tip_angle - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn frictionless_ramp_matches_ode_reference() {
        let mut m = gel();
        m.friction_per_depth = 0.0;
        m.torsion_damping = 0.25;
        let w = 3.0;
        let mut s = PlantState::at_entry(0.0);
        let n = 80;
        for _ in 0..n {
            s = step(&s, ControlInput::new(0.0, w), &m, DT);
        }
        // θ' = (k/c)(w t − θ) solved on a fine RK4 grid.
        let a = m.torsion_stiffness / m.torsion_damping;
        let f = |t: f64, th: f64| a * (w * t - th);
        let (mut t, mut th) = (0.0, 0.0);
        let h = DT / 200.0;
        for _ in 0..n * 200 {
            let k1 = f(t, th);
            let k2 = f(t + h / 2.0, th + h / 2.0 * k1);
            let k3 = f(t + h / 2.0, th + h / 2.0 * k2);
            let k4 = f(t + h, th + h * k3);
            th += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        // Holding α at its end-of-step value leads the continuous ramp by
        // half a step of rotation.
        assert!((s.tip_angle - th).abs() < 0.6 * w * DT, "{} vs {}", s.tip_angle, th);
    }

    #[test]
    fn stiction_holds_tip_below_breakaway() {
        let mut m = gel();
        m.friction_per_depth = 1.0;
        let mut s = PlantState::at_entry(0.0);
        s.depth = 50.0;
        for _ in 0..5 {
            s = step(&s, ControlInput::new(0.0, 1.0), &m, DT);
            assert_eq!(s.tip_rate, 0.0);
            assert_eq!(s.tip_angle, 0.0);
        }
    }

    #[test]
    fn rigid_flag_keeps_tip_on_base() {
        let m = gel().with_rigid(true);
        let mut s = PlantState::at_entry(0.3);
        for i in 0..200 {
            let w = if i % 17 < 9 { 6.0 } else { -6.0 };
            s = step(&s, ControlInput::new(5.0, w), &m, DT);
            assert_eq!(s.tip_angle, s.base_angle);
        }
    }

    #[test]
    fn path_length_matches_commanded_insertion() {
        let m = gel();
        let mut s = PlantState::at_entry(0.0);
        let mut path = 0.0;
        let mut commanded = 0.0;
        for i in 0..480 {
            let u = ControlInput::new(5.0, if (i / 30) % 2 == 0 { 6.28 } else { 0.0 });
            let next = step(&s, u, &m, DT);
            path += (next.pose.position - s.pose.position).norm();
            commanded += u.insertion_speed * DT;
            s = next;
        }
        // chord vs arc on each step differs by O((κ·Δs)²)
        assert!((path - commanded).abs() / commanded < 1e-3);
    }

    #[test]
    fn steady_lag_grows_with_depth() {
        let m = gel();
        let mut s = PlantState::at_entry(0.0);
        let mut prev_lag = f64::NEG_INFINITY;
        for block in 0..12 {
            for _ in 0..40 {
                s = step(&s, ControlInput::new(5.0, 2.0), &m, DT);
            }
            let lag = s.lag();
            if block > 0 {
                assert!(lag > prev_lag, "lag {lag} did not grow past {prev_lag}");
            }
            prev_lag = lag;
        }
    }

    #[test]
    fn planar_insertion_keeps_pose_roll_equal_to_tip_angle() {
        let m = gel();
        let mut s = PlantState::at_entry(1.2);
        for _ in 0..300 {
            s = step(&s, ControlInput::new(5.0, 0.0), &m, DT);
        }
        let d = RollDecomposition::decompose(&s.pose.rotation).unwrap();
        assert!((d.roll - 1.2).abs() < 1e-9);
    }

    #[test]
    fn determinism() {
        let m = gel();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut s = PlantState::at_entry(0.0);
            let mut out = vec![];
            for i in 0..100 {
                s = step(&s, ControlInput::new(5.0, (i as f64).sin() * 6.0), &m, DT);
                out.push(sense(&s, &MediumParams { sigma_position: 0.3, sigma_heading: 0.01, ..m }, &mut rng));
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn noiseless_sensing_is_exact() {
        let m = gel();
        let mut s = PlantState::at_entry(0.4);
        for _ in 0..50 {
            s = step(&s, ControlInput::new(5.0, 1.0), &m, DT);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = sense(&s, &m, &mut rng);
        assert_eq!(z.position, s.pose.position);
        assert!((z.heading - s.pose.heading()).norm() < 1e-15);
    }

    #[test]
    fn position_noise_statistics() {
        let m = MediumParams {
            sigma_position: 0.5,
            sigma_heading: 0.02,
            ..gel()
        };
        let s = PlantState::at_entry(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let draws: Vec<_> = (0..n).map(|_| sense(&s, &m, &mut rng)).collect();
        for axis in 0..3 {
            let mean = draws.iter().map(|d| d.position[axis]).sum::<f64>() / n as f64;
            let var = draws
                .iter()
                .map(|d| (d.position[axis] - mean).powi(2))
                .sum::<f64>()
                / (n - 1) as f64;
            assert!((var.sqrt() - 0.5).abs() < 0.05, "axis {axis} std {}", var.sqrt());
        }
        for d in &draws {
            assert!((d.heading.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn straight_workspace_puts_targets_on_axis() {
        let cone = WorkspaceCone {
            bounding_curvature: 0.0,
            ..WorkspaceCone::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let t = sample_target(&cone, &mut rng);
            assert_eq!(t.x, 0.0);
            assert_eq!(t.y, 0.0);
            assert!((40.0..=75.0).contains(&t.z));
        }
    }

    #[test]
    fn workspace_samples_respect_bound_and_cover_depths() {
        let cone = WorkspaceCone::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<_> = (0..10_000).map(|_| sample_target(&cone, &mut rng)).collect();
        assert!(samples.iter().all(|p| cone.contains(p)));
        let zmin = samples.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        let zmax = samples.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
        assert!(zmin < 41.0 && zmax > 74.0, "z range [{zmin}, {zmax}]");
        // bound at 75 mm for a 200 mm radius arc
        assert!((cone.radial_bound(75.0) - (200.0 - (200.0f64 * 200.0 - 75.0 * 75.0).sqrt())).abs() < 1e-9);
    }

    #[test]
    fn target_sampling_is_seeded() {
        let cone = WorkspaceCone::default();
        let a: Vec<_> = {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            (0..20).map(|_| sample_target(&cone, &mut rng)).collect()
        };
        let b: Vec<_> = {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            (0..20).map(|_| sample_target(&cone, &mut rng)).collect()
        };
        assert_eq!(a, b);
    }
}
