//! The torsion-blind EKF tracks roll on a rigid shaft but drifts once the
//! shaft twists. Both runs use the same open-loop spin-and-insert input.

use needle_steer::config::RunConfig;
use needle_steer::estimator::{EkfEstimator, Observation, TipEstimator};
use needle_steer::plant::{sense, step, ControlInput, PlantState};
use needle_steer::se3::wrap_angle;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> needle_steer::Result<()> {
    let cfg = RunConfig::default();
    let dt = cfg.controller.dt();
    for (label, medium) in [
        ("rigid", cfg.mediums["gelatin"].with_rigid(true)),
        ("gelatin", cfg.mediums["gelatin"]),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = PlantState::at_entry(0.0);
        let mut ekf = EkfEstimator::new(cfg.ekf, &medium);
        ekf.reset(&state.pose, 0.0);
        let mut last = None;
        println!("{label}:");
        for k in 0..600 {
            // Alternate half-turns every two seconds.
            let u = ControlInput::new(5.0, if (k / 80) % 2 == 0 { 1.5 } else { -1.5 });
            let obs = Observation {
                sensed: sense(&state, &medium, &mut rng),
                base_angle: state.base_angle,
                last_input: last,
                dt,
                truth: &state.pose,
            };
            let est = ekf.estimate(&obs)?;
            if k % 100 == 99 {
                let err = wrap_angle(est.roll()? - state.pose.roll()?);
                println!(
                    "  depth {:5.1} mm  roll error {:+.3} rad  roll sd {:.3} rad",
                    state.depth,
                    err,
                    ekf.state().roll_variance().sqrt()
                );
            }
            state = step(&state, u, &medium, dt);
            last = Some(u);
        }
    }
    Ok(())
}
