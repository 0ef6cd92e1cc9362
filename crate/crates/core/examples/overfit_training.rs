//! Overfits a narrow FHDR on four synthetic 32×32 pairs and reports the
//! tonemapped L1 and PSNR reached on those pairs.
//!
//! ```text
//! cargo run --release --example overfit_training -- [steps] [iterations]
//! ```

use std::time::Instant;

use fhdr::data::{synthetic_pairs, CameraCurve};
use fhdr::losses::PerceptualExtractor;
use fhdr::model::ModelConfig;
use fhdr::train::{evaluate, train, TrainConfig, Trainer};

fn main() -> fhdr::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(2000, |s| s.parse().expect("steps"));
    let n: usize = args.next().map_or(2, |s| s.parse().expect("iterations"));

    let pairs = synthetic_pairs(4, 32, 32, (-1.0, 1.0), &CameraCurve::standard_set(), 11)?;
    let model = ModelConfig {
        base_channels: 16,
        growth_rate: 8,
        iterations: n,
        ..ModelConfig::default()
    };
    // Batch 4 over 4 pairs: one step per epoch, constant learning rate.
    let cfg = TrainConfig {
        epochs: steps,
        decay_start_epoch: steps,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&model, &cfg, pairs.clone(), PerceptualExtractor::default())?;
    let start = Instant::now();
    train(&mut trainer, |_, e| {
        if e.epoch % 100 == 0 || e.epoch + 1 == steps {
            println!(
                "step {:>5}  loss {:.5}  {:.1?}",
                e.epoch + 1,
                e.mean_loss,
                start.elapsed()
            );
        }
        Ok(())
    })?;

    let report = evaluate(trainer.params(), &pairs, cfg.loss.mu)?;
    for t in 1..=n {
        println!(
            "iteration {t}: mean PSNR {:.2} dB, SSIM {:.4}",
            report.mean_psnr(t),
            report.mean_ssim(t)
        );
    }
    Ok(())
}
