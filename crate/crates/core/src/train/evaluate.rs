use std::path::Path;

use rayon::prelude::*;

use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::metrics::{psnr_tonemapped_tensor, ssim_tonemapped_tensor, MetricReport};
use crate::model::{fhdr_infer, FhdrParams};
use crate::tensor::Tensor;

/// Anything that maps an LDR input to one HDR estimate per iteration.
pub trait Reconstructor: Sync {
    fn iterations(&self) -> usize;
    fn reconstruct(&self, pair: &ImagePair) -> Result<Vec<Tensor<f32>>>;
}

impl Reconstructor for FhdrParams<f32> {
    fn iterations(&self) -> usize {
        self.config().iterations
    }

    fn reconstruct(&self, pair: &ImagePair) -> Result<Vec<Tensor<f32>>> {
        fhdr_infer(self, &pair.ldr.to_tensor(), self.iterations())
    }
}

/// One [`MetricReport`] per iteration `t = 1..n`, plus pairs that failed.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub per_iteration: Vec<MetricReport>,
    pub errors: Vec<(String, String)>,
}

impl EvalReport {
    pub fn iterations(&self) -> usize {
        self.per_iteration.len()
    }

    /// Mean PSNR of iteration `t` (1-based).
    pub fn mean_psnr(&self, t: usize) -> f64 {
        self.per_iteration[t - 1].mean_psnr()
    }

    pub fn mean_ssim(&self, t: usize) -> f64 {
        self.per_iteration[t - 1].mean_ssim()
    }

    /// Writes `eval.csv` (`image_id,iteration,psnr_db,ssim`, images × n
    /// rows), `summary.csv` (`iteration,mean_psnr_db,mean_ssim`) and
    /// `metrics_t<t>.csv` per iteration.
    pub fn write_dir(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
        let mut w = csv::Writer::from_path(out.join("eval.csv"))?;
        w.write_record(["image_id", "iteration", "psnr_db", "ssim"])?;
        let images = self.per_iteration.first().map_or(0, |r| r.images.len());
        for i in 0..images {
            for (t, report) in self.per_iteration.iter().enumerate() {
                let m = &report.images[i];
                w.write_record([
                    m.image_id.clone(),
                    (t + 1).to_string(),
                    format!("{:.6}", m.psnr_db),
                    format!("{:.6}", m.ssim),
                ])?;
            }
        }
        w.flush()?;

        let mut s = csv::Writer::from_path(out.join("summary.csv"))?;
        s.write_record(["iteration", "mean_psnr_db", "mean_ssim"])?;
        for (t, report) in self.per_iteration.iter().enumerate() {
            s.write_record([
                (t + 1).to_string(),
                format!("{:.6}", report.mean_psnr()),
                format!("{:.6}", report.mean_ssim()),
            ])?;
        }
        s.flush()?;

        for (t, report) in self.per_iteration.iter().enumerate() {
            report.write_csv(&out.join(format!("metrics_t{}.csv", t + 1)))?;
        }
        Ok(())
    }
}

fn score_pair(model: &dyn Reconstructor, pair: &ImagePair, mu: f64) -> Result<Vec<(f64, f64)>> {
    let n = model.iterations();
    let outputs = model.reconstruct(pair)?;
    if outputs.len() != n {
        return Err(Error::contract(format!(
            "model returned {} outputs, expected {n}",
            outputs.len()
        )));
    }
    let gt = pair.hdr.to_tensor::<f32>();
    outputs
        .iter()
        .map(|o| Ok((psnr_tonemapped_tensor(o, &gt, mu)?, ssim_tonemapped_tensor(o, &gt, mu)?)))
        .collect()
}

/// Scores every iteration's output on every pair. Pairs that fail are
/// recorded in [`EvalReport::errors`] and skipped.
pub fn evaluate(model: &dyn Reconstructor, pairs: &[ImagePair], mu: f64) -> Result<EvalReport> {
    let n = model.iterations();
    let scored: Vec<Result<Vec<(f64, f64)>>> = pairs.par_iter().map(|p| score_pair(model, p, mu)).collect();
    let mut report = EvalReport {
        per_iteration: vec![MetricReport::default(); n],
        errors: Vec::new(),
    };
    for (pair, scores) in pairs.iter().zip(scored) {
        match scores {
            Ok(scores) => {
                for (t, (psnr, ssim)) in scores.into_iter().enumerate() {
                    report.per_iteration[t].push(pair.id.clone(), psnr, ssim);
                }
            }
            Err(e) => report.errors.push((pair.id.clone(), e.to_string())),
        }
    }
    Ok(report)
}

/// Mean tonemapped PSNR of the final iteration; cheaper than [`evaluate`]
/// since it skips SSIM.
pub(crate) fn mean_psnr_last(params: &FhdrParams<f32>, pairs: &[ImagePair], mu: f64) -> Result<f64> {
    let n = params.config().iterations;
    let scores = pairs
        .par_iter()
        .map(|p| {
            let out = fhdr_infer(params, &p.ldr.to_tensor(), n)?;
            psnr_tonemapped_tensor(&out[n - 1], &p.hdr.to_tensor(), mu)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
