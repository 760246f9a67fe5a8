//! Writes a small ground-truth-steered dataset to the directory given on the
//! command line (default: ./needle-data).

use std::path::PathBuf;

use needle_steer::config::RunConfig;
use needle_steer::data::{generate_dataset, Split};

fn main() -> needle_steer::Result<()> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "needle-data".into());
    let cfg = RunConfig::default();
    let mut gen = cfg.generation(Some("gelatin"))?;
    gen.n = 14;
    let ds = generate_dataset(&gen, cfg.dataset.train_fraction, 1, Some(&root))?;
    let worst = ds.records.iter().map(|r| r.final_error_mm).fold(0.0, f64::max);
    println!(
        "{} episodes ({} train, {} val) in {}; worst final error {worst:.3} mm",
        ds.records.len(),
        ds.manifest.count(Split::Train),
        ds.manifest.count(Split::Val),
        root.display()
    );
    Ok(())
}
