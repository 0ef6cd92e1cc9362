//! Trains for a few steps, saves a checkpoint, and shows that a resumed
//! trainer takes exactly the same next steps as the original.
//!
//! ```text
//! cargo run --release --example checkpoint_roundtrip
//! ```

use fhdr::data::{synthetic_pairs, CameraCurve};
use fhdr::losses::PerceptualExtractor;
use fhdr::model::ModelConfig;
use fhdr::train::{Checkpoint, TrainConfig, Trainer};

fn main() -> fhdr::Result<()> {
    let pairs = synthetic_pairs(6, 16, 16, (-1.0, 1.0), &CameraCurve::standard_set(), 4)?;
    let model = ModelConfig {
        base_channels: 8,
        growth_rate: 4,
        iterations: 3,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 4,
        decay_start_epoch: 2,
        batch_size: 4,
        seed: 12,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&model, &cfg, pairs.clone(), PerceptualExtractor::default())?;
    for _ in 0..3 {
        let s = trainer.step()?;
        println!("step loss {:.6} at lr {:.2e}", s.loss, s.lr);
    }

    let path = std::env::temp_dir().join("fhdr_example.fhdr");
    trainer.checkpoint().save(&path)?;
    let size = std::fs::metadata(&path)?.len();
    let loaded = Checkpoint::load(&path)?;
    println!(
        "saved {} ({size} bytes): epoch {}, batch {}, step {}",
        path.display(),
        loaded.progress.epoch,
        loaded.progress.batch_cursor,
        loaded.progress.step
    );

    let mut resumed = Trainer::resume(loaded, &cfg, pairs, PerceptualExtractor::default())?;
    while !trainer.is_finished() {
        let (a, b) = (trainer.step()?.loss, resumed.step()?.loss);
        println!("original {a:.9}  resumed {b:.9}  equal: {}", a == b);
    }
    Ok(())
}
