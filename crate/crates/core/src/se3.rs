//! Rigid-body math for the needle tip: rotations, poses, the SE(3)
//! exponential and logarithm, heading/roll decomposition, the geodesic
//! angular-error metric and least-squares point registration.
//!
//! Conventions: the needle body frame inserts along `+z` and the bevel
//! curves the tip toward body `+x`. Twists are body twists ordered
//! `(v, ω)` with translation first.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Twist = Vector6<f64>;

const SMALL_ANGLE: f64 = 1e-6;

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Skew-symmetric cross-product matrix of `v`.
pub fn hat(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A proper rotation stored as a 3×3 orthonormal matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and handedness to 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m * m.transpose() - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if !(ortho <= 1e-9 && (det - 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidInput(format!(
                "not a rotation: orthogonality defect {ortho:e}, det {det}"
            )));
        }
        Ok(Self(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// SO(3) exponential of a rotation vector (Rodrigues).
    pub fn exp(omega: &Vec3) -> Self {
        let theta = omega.norm();
        let k = hat(omega);
        let (a, b) = if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
        } else {
            (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
        };
        Self(Matrix3::identity() + k * a + k * k * b)
    }

    /// SO(3) logarithm; the returned rotation vector has norm in `[0, π]`.
    pub fn log(&self) -> Vec3 {
        let m = &self.0;
        let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        let theta = cos.acos();
        let axial = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
        if theta < SMALL_ANGLE {
            return axial * (0.5 + theta * theta / 12.0);
        }
        if PI - theta > 1e-4 {
            return axial * (theta / (2.0 * theta.sin()));
        }
        // Near π the antisymmetric part vanishes; read the axis off the
        // symmetric part and fix its sign with what is left of `axial`.
        let b = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
        let diag = Vec3::new(b[(0, 0)], b[(1, 1)], b[(2, 2)]);
        let i = diag.imax();
        let mut axis: Vec3 = b.column(i).into();
        axis /= axis.norm();
        if axis.dot(&axial) < 0.0 {
            axis = -axis;
        }
        axis * theta
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        Self::exp(&(axis.normalize() * angle))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Rotates a vector.
    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Insertion axis of the body frame expressed in the world frame.
    pub fn heading(&self) -> Vec3 {
        self.0.column(2).into()
    }

    /// Direction the bevel curves the tip toward, in the world frame.
    pub fn curvature_direction(&self) -> Vec3 {
        self.0.column(0).into()
    }

    /// Projects back onto SO(3) with Gram-Schmidt on the heading.
    pub fn renormalized(&self) -> Self {
        let z = self.heading().normalize();
        let x0: Vec3 = self.0.column(0).into();
        let x = (x0 - z * z.dot(&x0)).normalize();
        let y = z.cross(&x);
        Self(Matrix3::from_columns(&[x, y, z]))
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Geodesic distance between two rotations, `arccos((tr(R) - 1) / 2)` on the
/// difference rotation `R = R_estᵀ · R_true`. Always in `[0, π]`.
pub fn angular_error(est: &Rotation, truth: &Rotation) -> f64 {
    let diff = est.0.transpose() * truth.0;
    ((diff.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Heading and roll of a tip orientation relative to the `+z` reference axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollDecomposition {
    pub heading: Vec3,
    /// Radians in `(-π, π]`.
    pub roll: f64,
}

/// The minimal rotation taking `+z` onto `heading`.
///
/// Fails when `heading` is (numerically) antiparallel to `+z`.
pub fn heading_frame(heading: &Vec3) -> Result<Rotation> {
    let eta = heading.normalize();
    let c = eta.z;
    if 1.0 + c < 1e-9 || !c.is_finite() {
        return Err(Error::AntiparallelHeading);
    }
    let k = hat(&Vec3::new(-eta.y, eta.x, 0.0));
    Ok(Rotation(Matrix3::identity() + k + k * k / (1.0 + c)))
}

impl RollDecomposition {
    pub fn decompose(rotation: &Rotation) -> Result<Self> {
        let heading = rotation.heading();
        let frame = heading_frame(&heading)?;
        let residual = frame.0.transpose() * rotation.0;
        Ok(Self {
            heading,
            roll: wrap_angle(residual[(1, 0)].atan2(residual[(0, 0)])),
        })
    }

    pub fn recompose(&self) -> Result<Rotation> {
        Ok(heading_frame(&self.heading)? * Rotation::rot_z(self.roll))
    }
}

/// Rigid transform: position in mm plus orientation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub position: Vec3,
    pub rotation: Rotation,
}

impl Pose {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(position: Vec3, rotation: Rotation) -> Self {
        Self { position, rotation }
    }

    /// Builds a tip pose from a sensed position and heading plus a roll angle.
    pub fn from_heading_roll(position: Vec3, heading: &Vec3, roll: f64) -> Result<Self> {
        let rotation = RollDecomposition {
            heading: heading.normalize(),
            roll,
        }
        .recompose()?;
        Ok(Self { position, rotation })
    }

    pub fn heading(&self) -> Vec3 {
        self.rotation.heading()
    }

    pub fn roll(&self) -> Result<f64> {
        Ok(RollDecomposition::decompose(&self.rotation)?.roll)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.rotation.apply(&other.position),
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            position: -rt.apply(&self.position),
            rotation: rt,
        }
    }

    pub fn transform_point(&self, point: &Vec3) -> Vec3 {
        self.rotation.apply(point) + self.position
    }
}

/// Closed-form SE(3) exponential of the body twist `(v, ω)` held for `dt`.
pub fn exp_se3(twist: &Twist, dt: f64) -> Pose {
    let v = Vec3::new(twist[0], twist[1], twist[2]) * dt;
    let w = Vec3::new(twist[3], twist[4], twist[5]) * dt;
    let theta = w.norm();
    let k = hat(&w);
    let (b, c) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    let left_jacobian = Matrix3::identity() + k * b + k * k * c;
    Pose {
        position: left_jacobian * v,
        rotation: Rotation::exp(&w),
    }
}

/// Inverse of [`exp_se3`] with `dt = 1`.
pub fn log_se3(pose: &Pose) -> Twist {
    let w = pose.rotation.log();
    let theta = w.norm();
    let k = hat(&w);
    let d = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / (theta * theta)
    };
    let inv_jacobian = Matrix3::identity() - k * 0.5 + k * k * d;
    let v = inv_jacobian * pose.position;
    Twist::new(v.x, v.y, v.z, w.x, w.y, w.z)
}

/// Result of a point-based rigid registration.
#[derive(Debug, Clone, Copy)]
pub struct Registration {
    /// Maps points of the source set onto the destination set.
    pub transform: Pose,
    /// Fiducial registration error: RMS residual distance, mm.
    pub fre: f64,
}

/// Least-squares rigid transform `T` minimising `Σ‖T·aᵢ − bᵢ‖²`
/// (SVD-based, reflection-corrected).
pub fn register_points(source: &[Vec3], dest: &[Vec3]) -> Result<Registration> {
    if source.len() != dest.len() {
        return Err(Error::DegenerateConfiguration(format!(
            "point counts differ ({} vs {})",
            source.len(),
            dest.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "need at least 3 correspondences, got {}",
            source.len()
        )));
    }
    let n = source.len() as f64;
    let ca = source.iter().sum::<Vec3>() / n;
    let cb = dest.iter().sum::<Vec3>() / n;

    let mut spread = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (a, b) in source.iter().zip(dest) {
        let da = a - ca;
        spread += da * da.transpose();
        cross += da * (b - cb).transpose();
    }
    let eig = spread.symmetric_eigenvalues();
    let mut sv = [eig[0], eig[1], eig[2]];
    sv.sort_by(|x, y| y.total_cmp(x));
    if sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::DegenerateConfiguration(
            "points are coincident or collinear".into(),
        ));
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v = svd.v_t.expect("svd computed with v").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let rotation = Rotation::from_matrix_unchecked(r);
    let transform = Pose::new(cb - rotation.apply(&ca), rotation);

    let sq: f64 = source
        .iter()
        .zip(dest)
        .map(|(a, b)| (transform.transform_point(a) - b).norm_squared())
        .sum();
    Ok(Registration {
        transform,
        fre: (sq / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_abs(m: &Matrix3<f64>) -> f64 {
        m.abs().max()
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5 - 4.0 * PI) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn angular_error_basic_values() {
        let r = Rotation::rot_x(0.4) * Rotation::rot_z(-1.1);
        assert_eq!(angular_error(&r, &r), 0.0);
        let e = angular_error(&Rotation::identity(), &Rotation::rot_z(PI / 2.0));
        assert!((e - PI / 2.0).abs() < 1e-12);
        // π exactly must not produce NaN.
        let e = angular_error(&Rotation::identity(), &Rotation::rot_y(PI));
        assert!((e - PI).abs() < 1e-7);
    }

    #[test]
    fn exp_zero_and_pure_translation() {
        let p = exp_se3(&Twist::zeros(), 0.1);
        assert_eq!(p, Pose::identity());
        let p = exp_se3(&Twist::new(0.0, 0.0, 5.0, 0.0, 0.0, 0.0), 0.25);
        assert!((p.position - Vec3::new(0.0, 0.0, 1.25)).norm() < 1e-15);
    }

    #[test]
    fn exp_matches_fine_euler_arc() {
        // v along z coupled with rotation about x: an arc of radius v/ω.
        let (v, w, dt) = (5.0, 0.1, 2.0);
        let twist = Twist::new(0.0, 0.0, v, w, 0.0, 0.0);
        let exact = exp_se3(&twist, dt);

        let steps = 10_000;
        let h = dt / steps as f64;
        let mut r = Matrix3::<f64>::identity();
        let mut p = Vec3::zeros();
        let vb = Vec3::new(0.0, 0.0, v);
        let wb = Vec3::new(w, 0.0, 0.0);
        for _ in 0..steps {
            // midpoint rule on the rotation keeps the oracle second order
            let r_mid = r * Rotation::exp(&(wb * (h / 2.0))).0;
            p += r_mid * vb * h;
            r *= Rotation::exp(&(wb * h)).0;
        }
        assert!((exact.position - p).norm() < 1e-6, "{}", (exact.position - p).norm());
        // Closed form: radius v/ω about the x axis, curving toward -y.
        let rad = v / w;
        let phi = w * dt;
        let closed = Vec3::new(0.0, -rad * (1.0 - phi.cos()), rad * phi.sin());
        assert!((exact.position - closed).norm() < 1e-12);
    }

    #[test]
    fn roll_decomposition_round_trip() {
        let r = Rotation::rot_y(0.3) * Rotation::rot_x(-0.2) * Rotation::rot_z(2.5);
        let d = RollDecomposition::decompose(&r).unwrap();
        let back = d.recompose().unwrap();
        assert!(max_abs(&(back.0 - r.0)) < 1e-12);
        let d0 = RollDecomposition::decompose(&Rotation::rot_z(-0.7)).unwrap();
        assert!((d0.roll + 0.7).abs() < 1e-12);
        assert!(RollDecomposition::decompose(&Rotation::rot_x(PI)).is_err());
    }

    #[test]
    fn registration_identity_and_degenerate() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(0.0, 7.0, 1.0),
            Vec3::new(3.0, -2.0, 9.0),
        ];
        let reg = register_points(&pts, &pts).unwrap();
        assert!(reg.fre < 1e-12);
        assert!(max_abs(&(reg.transform.rotation.0 - Matrix3::identity())) < 1e-12);
        assert!(reg.transform.position.norm() < 1e-12);

        let line: Vec<_> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(
            register_points(&line, &line),
            Err(Error::DegenerateConfiguration(_))
        ));
        assert!(matches!(
            register_points(&pts[..2], &pts[..2]),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn heading_frame_maps_z_to_heading() {
        let eta = Vec3::new(0.3, -0.2, 0.9).normalize();
        let h = heading_frame(&eta).unwrap();
        assert!((h.heading() - eta).norm() < 1e-12);
        assert!((h.0.determinant() - 1.0).abs() < 1e-12);
    }

    fn rotation_vec() -> impl Strategy<Value = Vec3> {
        (-1.8f64..1.8, -1.8f64..1.8, -1.8f64..1.8).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn angular_error_symmetric(a in rotation_vec(), b in rotation_vec()) {
            let ra = Rotation::exp(&a);
            let rb = Rotation::exp(&b);
            prop_assert!((angular_error(&ra, &rb) - angular_error(&rb, &ra)).abs() < 1e-12);
        }

        #[test]
        fn angular_error_left_invariant(a in rotation_vec(), b in rotation_vec(), q in rotation_vec()) {
            let (ra, rb, rq) = (Rotation::exp(&a), Rotation::exp(&b), Rotation::exp(&q));
            let lhs = angular_error(&(rq * ra), &(rq * rb));
            prop_assert!((lhs - angular_error(&ra, &rb)).abs() < 1e-9);
        }

        #[test]
        fn se3_log_exp_round_trip(
            v in (-20.0f64..20.0, -20.0f64..20.0, -20.0f64..20.0),
            w in rotation_vec(),
        ) {
            prop_assume!(w.norm() < 3.0);
            let xi = Twist::new(v.0, v.1, v.2, w.x, w.y, w.z);
            let back = log_se3(&exp_se3(&xi, 1.0));
            prop_assert!((back - xi).abs().max() < 1e-9);
        }

        #[test]
        fn exp_is_orthonormal(w in rotation_vec()) {
            let r = Rotation::exp(&w);
            prop_assert!(Rotation::from_matrix(r.0).is_ok());
            prop_assert!((r.heading().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn decomposition_round_trip(w in rotation_vec()) {
            let r = Rotation::exp(&w);
            prop_assume!(r.heading().z > -0.9);
            let d = RollDecomposition::decompose(&r).unwrap();
            prop_assert!(d.roll > -PI && d.roll <= PI);
            prop_assert!(max_abs(&(d.recompose().unwrap().0 - r.0)) < 1e-9);
        }
    }
}
