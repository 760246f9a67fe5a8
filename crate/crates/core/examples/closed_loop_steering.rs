//! One closed-loop insertion per estimator to the same target.

use needle_steer::config::RunConfig;
use needle_steer::estimator::{EkfEstimator, TipEstimator, TruthEstimator};
use needle_steer::eval::{run_trial, TrialSetup};
use needle_steer::se3::Vec3;

fn main() -> needle_steer::Result<()> {
    let cfg = RunConfig::default();
    let medium = cfg.mediums["gelatin"];
    let setup = TrialSetup {
        medium_name: "gelatin",
        medium: &medium,
        controller: &cfg.controller,
        target: Vec3::new(9.0, -7.0, 68.0),
        depth_cap: 85.0,
        seed: 12,
    };
    let estimators: Vec<Box<dyn TipEstimator>> =
        vec![Box::new(TruthEstimator), Box::new(EkfEstimator::new(cfg.ekf, &medium))];
    for mut est in estimators {
        let (record, trace, summary) = run_trial(&setup, est.as_mut())?;
        println!(
            "{:>5}: {:?} after {} steps, targeting error {:.3} mm, mean angular error {:.3} rad",
            summary.estimator, summary.termination, record.len(), summary.targeting_error_mm, summary.mean_omega
        );
        for i in (0..trace.len()).step_by(trace.len() / 5) {
            println!(
                "       t {:5.2} s  roll {:+.3}  estimate {:+.3}",
                trace.t[i], trace.roll_true[i], trace.roll_est[i]
            );
        }
    }
    Ok(())
}
