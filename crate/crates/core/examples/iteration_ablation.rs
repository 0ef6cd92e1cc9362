//! Trains one small model per iteration count on the same data and seed,
//! printing the last-iteration PSNR curve of each.
//!
//! ```text
//! cargo run --release --example iteration_ablation -- [epochs]
//! ```

use fhdr::data::{synthetic_pairs, CameraCurve};
use fhdr::losses::PerceptualExtractor;
use fhdr::model::ModelConfig;
use fhdr::train::{ablate_iterations, TrainConfig};

fn main() -> fhdr::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(120, |s| s.parse().expect("epochs"));
    let curves = CameraCurve::standard_set();
    let train = synthetic_pairs(8, 24, 24, (-2.0, 2.0), &curves, 1)?;
    let held_out = synthetic_pairs(4, 24, 24, (-2.0, 2.0), &curves, 2)?;
    let model = ModelConfig {
        base_channels: 8,
        growth_rate: 4,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs,
        decay_start_epoch: epochs / 2,
        batch_size: 4,
        lr0: 1e-3,
        ..TrainConfig::default()
    };
    let n_list = [1, 2, 3, 4];
    let report = ablate_iterations(
        &model,
        &cfg,
        &train,
        &held_out,
        &PerceptualExtractor::default(),
        &n_list,
    )?;
    for (n, count) in &report.param_counts {
        let curve = report.curve(*n);
        let every = (curve.len() / 8).max(1);
        let points: Vec<String> = curve.iter().step_by(every).map(|p| format!("{p:.2}")).collect();
        println!("n = {n} ({count} params): {}", points.join(" "));
    }
    Ok(())
}
