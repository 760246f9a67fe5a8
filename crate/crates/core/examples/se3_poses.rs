//! Pose algebra on SE(3): integrating a constant bevel-tip twist, roll
//! decomposition, and the angular-error metric.

use needle_steer::plant::kinematic_twist;
use needle_steer::se3::{angular_error, exp_se3, Pose, Rotation, RollDecomposition};

fn main() -> needle_steer::Result<()> {
    let kappa = 1.0 / 150.0;
    // 30 mm of insertion at 5 mm/s with no roll: a planar arc of radius 150 mm.
    let arc = exp_se3(&kinematic_twist(kappa, 5.0, 0.0), 6.0);
    let theta = kappa * 30.0;
    println!("tip after 30 mm: {:.4?}", arc.position.as_slice());
    println!(
        "closed-form arc:  [{:.4}, 0.0000, {:.4}]",
        (1.0 - theta.cos()) / kappa,
        theta.sin() / kappa
    );

    // Same insertion while the tip spins at 1 rad/s: a helix.
    let helix = exp_se3(&kinematic_twist(kappa, 5.0, 1.0), 6.0);
    let d = RollDecomposition::decompose(&helix.rotation)?;
    println!("helix heading {:.4?}, roll {:.4} rad", d.heading.as_slice(), d.roll);

    let rebuilt = Pose::from_heading_roll(helix.position, &d.heading, d.roll)?;
    println!(
        "recomposed pose differs by {:.1e} rad",
        angular_error(&rebuilt.rotation, &helix.rotation)
    );
    println!(
        "quarter turn about z: {:.6} rad",
        angular_error(&Rotation::rot_z(std::f64::consts::FRAC_PI_2), &Rotation::identity())
    );
    Ok(())
}
