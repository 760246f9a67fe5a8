//! Registering tracker coordinates to image coordinates from fiducials.

use needle_steer::se3::{register_points, Pose, Rotation, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> needle_steer::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tracker_to_image = Pose::new(Vec3::new(-20.0, 35.0, 110.0), Rotation::exp(&Vec3::new(0.2, 0.9, -0.4)));
    let fiducials: Vec<Vec3> = (0..6)
        .map(|_| Vec3::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), rng.random_range(0.0..40.0)))
        .collect();

    for sigma in [0.0, 0.25, 1.0] {
        let noise = Normal::new(0.0, sigma).unwrap();
        let measured: Vec<Vec3> = fiducials
            .iter()
            .map(|p| tracker_to_image.transform_point(p) + Vec3::from_fn(|_, _| noise.sample(&mut rng)))
            .collect();
        let reg = register_points(&fiducials, &measured)?;
        let target = Vec3::new(5.0, -3.0, 70.0);
        let tre = (reg.transform.transform_point(&target) - tracker_to_image.transform_point(&target)).norm();
        println!("fiducial noise {sigma:.2} mm: FRE {:.3} mm, error at a 70 mm deep target {tre:.3} mm", reg.fre);
    }
    Ok(())
}
