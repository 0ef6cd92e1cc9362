use std::path::Path;

use super::evaluate::mean_psnr_last;
use super::trainer::{train, Trainer};
use super::TrainConfig;
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::losses::PerceptualExtractor;
use crate::model::ModelConfig;

/// Per-epoch PSNR curves, one per iteration count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationReport {
    /// `(epoch, n, psnr)` rows in training order.
    pub rows: Vec<(usize, usize, f64)>,
    /// `(n, parameter count)`.
    pub param_counts: Vec<(usize, usize)>,
}

impl AblationReport {
    pub fn curve(&self, n: usize) -> Vec<f64> {
        self.rows.iter().filter(|r| r.1 == n).map(|r| r.2).collect()
    }

    /// CSV with columns `epoch,n,psnr`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "n", "psnr"])?;
        for (epoch, n, psnr) in &self.rows {
            w.write_record([epoch.to_string(), n.to_string(), format!("{psnr:.6}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains one model per entry of `n_list` from the same seed and data
/// order, scoring the last iteration on `eval_pairs` after every epoch.
pub fn ablate_iterations(
    base: &ModelConfig,
    cfg: &TrainConfig,
    pairs: &[ImagePair],
    eval_pairs: &[ImagePair],
    extractor: &PerceptualExtractor<f32>,
    n_list: &[usize],
) -> Result<AblationReport> {
    if n_list.is_empty() || eval_pairs.is_empty() {
        return Err(Error::contract("ablation needs iteration counts and evaluation pairs"));
    }
    let mut report = AblationReport::default();
    for &n in n_list {
        let model = ModelConfig {
            iterations: n,
            ..base.clone()
        };
        let mut trainer = Trainer::new(&model, cfg, pairs.to_vec(), extractor.clone())?;
        report.param_counts.push((n, trainer.params().param_count()));
        let mut rows = Vec::new();
        train(&mut trainer, |t, entry| {
            rows.push((entry.epoch, n, mean_psnr_last(t.params(), eval_pairs, cfg.loss.mu)?));
            Ok(())
        })?;
        report.rows.extend(rows);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_pairs, CameraCurve};
    use crate::gradcheck::tiny_model_config;

    #[test]
    fn one_curve_per_iteration_count() {
        let pairs = synthetic_pairs(2, 12, 12, (-1.0, 1.0), &CameraCurve::standard_set(), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            decay_start_epoch: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let ext = PerceptualExtractor::seeded(&[4], 0).unwrap();
        let report = ablate_iterations(&tiny_model_config(1), &cfg, &pairs, &pairs, &ext, &[1, 3]).unwrap();
        assert_eq!(report.curve(1).len(), 2);
        assert_eq!(report.curve(3).len(), 2);
        assert!(report.curve(2).is_empty());
        assert_eq!(report.param_counts[0].1, report.param_counts[1].1);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        report.write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap().lines().count(), 5);
        assert!(ablate_iterations(&tiny_model_config(1), &cfg, &pairs, &[], &ext, &[1]).is_err());
    }
}
