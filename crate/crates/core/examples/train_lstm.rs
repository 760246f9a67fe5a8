//! Short training run on freshly simulated gelatin insertions, then a save
//! and reload of the model file.

use needle_steer::config::RunConfig;
use needle_steer::data::{generate_dataset, Split};
use needle_steer::lstm::{load_model, save_model, train};

fn main() -> needle_steer::Result<()> {
    let cfg = RunConfig::default();
    let mut gen = cfg.generation(Some("gelatin"))?;
    gen.n = 21;
    let ds = generate_dataset(&gen, cfg.dataset.train_fraction, 1, None)?;
    let mut tc = cfg.training.clone();
    tc.epochs = 40;
    let (model, log) = train(&ds.sequences(Split::Train), &ds.sequences(Split::Val), &tc, cfg.z_max)?;
    for e in log.epochs.iter().step_by(5) {
        println!("epoch {:>3}  train {:.4}  val {:.4}", e.epoch, e.train_loss, e.val_rmse);
    }
    println!("kept epoch {} (val RMSE {:.4})", log.best_epoch, log.best_val_rmse);

    let path = std::env::temp_dir().join("needle-example-model.json");
    save_model(&model, &path)?;
    assert_eq!(load_model(&path)?, model);
    println!("model saved to {}", path.display());
    Ok(())
}
