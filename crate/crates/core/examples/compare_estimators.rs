//! The full comparison at desk scale: simulate training insertions in
//! gelatin, train the network, then steer with EKF and LSTM roll estimates
//! in gelatin, brain and lung and write a report.
//!
//! Usage: cargo run --release --example compare_estimators [out-dir]
//! Takes several minutes on one core.

use std::path::PathBuf;

use needle_steer::config::RunConfig;
use needle_steer::data::{generate_dataset, Split};
use needle_steer::eval::{render_report, report, run_campaign, Campaign, EstimatorKind};
use needle_steer::lstm::train;
use needle_steer::seed::derive_seed;

fn main() -> needle_steer::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "needle-comparison".into());
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut cfg = RunConfig::default();
    cfg.training.jobs = jobs;

    let ds = generate_dataset(&cfg.generation(None)?, cfg.dataset.train_fraction, jobs, None)?;
    let (model, log) = train(&ds.sequences(Split::Train), &ds.sequences(Split::Val), &cfg.training, cfg.z_max)?;
    println!("validation RMSE {:.4} (epoch {})", log.best_val_rmse, log.best_epoch);

    let (mut summaries, mut traces) = (Vec::new(), Vec::new());
    for (name, &trials) in &cfg.evaluation.trials {
        let campaign = Campaign {
            medium_name: name,
            medium: cfg.medium(name)?,
            workspace: &cfg.workspace,
            controller: &cfg.controller,
            ekf: &cfg.ekf,
            model: Some(&model),
            trials,
            depth_margin: cfg.evaluation.depth_margin,
            seed: derive_seed(cfg.seed, 1),
        };
        for (s, t) in run_campaign(&campaign, &[EstimatorKind::Ekf, EstimatorKind::Lstm], jobs)? {
            summaries.push(s);
            traces.push(t);
        }
    }
    report(&summaries, &traces, cfg.evaluation.bin_width, &out)?;
    print!("{}", render_report(&summaries));
    println!("artifacts in {}", out.display());
    Ok(())
}
