use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::adam::{adam_step, AdamState};
use super::checkpoint::{Checkpoint, Progress};
use super::evaluate::mean_psnr_last;
use super::schedule::lr_schedule;
use super::TrainConfig;
use crate::data::{epoch_order, make_batch, Batch, ImagePair};
use crate::error::{Error, Result};
use crate::losses::{loss_total, PerceptualExtractor};
use crate::model::{FhdrParams, ModelConfig};
use crate::tensor::Graph;

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Loss of the batch before the update.
    pub loss: f64,
    pub lr: f64,
    /// Set when this step finished an epoch.
    pub epoch_log: Option<EpochLog>,
}

/// Owns the model, optimizer and data order; advances one batch at a time.
pub struct Trainer {
    cfg: TrainConfig,
    params: FhdrParams<f32>,
    names: Vec<String>,
    adam: AdamState<f32>,
    extractor: PerceptualExtractor<f32>,
    pairs: Vec<ImagePair>,
    progress: Progress,
    epoch_started: Instant,
}

impl Trainer {
    /// Fresh weights drawn from `cfg.seed`.
    pub fn new(
        model: &ModelConfig,
        cfg: &TrainConfig,
        pairs: Vec<ImagePair>,
        extractor: PerceptualExtractor<f32>,
    ) -> Result<Self> {
        let params = FhdrParams::init(model, cfg.seed)?;
        let adam = AdamState::new(params.tensors());
        Self::assemble(cfg, params, adam, pairs, extractor, Progress::start(cfg.seed))
    }

    /// Continues exactly where `ckpt` stopped. The data order follows the
    /// checkpoint's seed, whatever `cfg.seed` says.
    pub fn resume(
        ckpt: Checkpoint,
        cfg: &TrainConfig,
        pairs: Vec<ImagePair>,
        extractor: PerceptualExtractor<f32>,
    ) -> Result<Self> {
        let adam = ckpt.adam.unwrap_or_else(|| AdamState::new(ckpt.params.tensors()));
        let cfg = TrainConfig {
            seed: ckpt.progress.seed,
            ..cfg.clone()
        };
        Self::assemble(&cfg, ckpt.params, adam, pairs, extractor, ckpt.progress)
    }

    fn assemble(
        cfg: &TrainConfig,
        params: FhdrParams<f32>,
        adam: AdamState<f32>,
        pairs: Vec<ImagePair>,
        extractor: PerceptualExtractor<f32>,
        progress: Progress,
    ) -> Result<Self> {
        cfg.validate()?;
        if pairs.is_empty() {
            return Err(Error::contract("training needs at least one pair"));
        }
        Ok(Trainer {
            cfg: cfg.clone(),
            names: params.names().to_vec(),
            params,
            adam,
            extractor,
            pairs,
            progress,
            epoch_started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &FhdrParams<f32> {
        &self.params
    }

    pub fn progress(&self) -> &Progress {
        &self.progress
    }

    pub fn pairs(&self) -> &[ImagePair] {
        &self.pairs
    }

    pub fn is_finished(&self) -> bool {
        self.progress.epoch as usize >= self.cfg.epochs
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.pairs.len().div_ceil(self.cfg.batch_size)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            adam: Some(self.adam.clone()),
            progress: self.progress.clone(),
        }
    }

    fn next_batch(&self) -> Result<Batch<f32>> {
        let order = epoch_order(self.pairs.len(), self.progress.seed, self.progress.epoch);
        let start = self.progress.batch_cursor as usize * self.cfg.batch_size;
        let end = (start + self.cfg.batch_size).min(order.len());
        make_batch(&self.pairs, &order[start..end])
    }

    /// Forward over all iterations, averaged loss, one backward through the
    /// unrolled graph and one Adam update.
    pub fn step(&mut self) -> Result<StepOutcome> {
        if self.is_finished() {
            return Err(Error::contract("training already ran for all epochs"));
        }
        let epoch = self.progress.epoch as usize;
        let lr = lr_schedule(epoch, &self.cfg)?;
        let batch = self.next_batch()?;

        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let x = g.constant(batch.ldr);
        let y = g.constant(batch.hdr);
        let outputs = bound.forward(&mut g, x, self.params.config().iterations)?;
        let loss_var = loss_total(&mut g, &outputs, y, &self.extractor, &self.cfg.loss)?;
        let loss = g.value(loss_var).item() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at epoch {epoch}, step {}",
                self.progress.step
            )));
        }
        g.backward(loss_var)?;

        let mut grads: Vec<Vec<f32>> = bound
            .vars()
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f32]>::to_vec))
            .collect();
        drop(g);
        if let Some(max_norm) = self.cfg.grad_clip {
            let norm = grads
                .iter()
                .flatten()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                let s = (max_norm / norm) as f32;
                grads.iter_mut().flatten().for_each(|v| *v *= s);
            }
        }
        let grad_refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
        adam_step(
            &self.names,
            self.params.tensors_mut(),
            &grad_refs,
            &mut self.adam,
            lr,
            &self.cfg.adam,
        )?;

        let p = &mut self.progress;
        p.step += 1;
        p.batch_cursor += 1;
        p.epoch_loss_sum += loss;
        p.epoch_batches += 1;
        let mut epoch_log = None;
        if p.batch_cursor as usize >= self.pairs.len().div_ceil(self.cfg.batch_size) {
            epoch_log = Some(EpochLog {
                epoch,
                mean_loss: p.epoch_loss_sum / p.epoch_batches as f64,
                lr,
                seconds: self.epoch_started.elapsed().as_secs_f64(),
            });
            p.epoch += 1;
            p.batch_cursor = 0;
            p.epoch_loss_sum = 0.0;
            p.epoch_batches = 0;
            self.epoch_started = Instant::now();
        }
        Ok(StepOutcome { loss, lr, epoch_log })
    }

    pub(crate) fn set_best_psnr(&mut self, psnr: f64) {
        self.progress.best_psnr = psnr;
    }
}

/// Runs to the last epoch, calling `on_epoch` after each one.
pub fn train(
    trainer: &mut Trainer,
    mut on_epoch: impl FnMut(&mut Trainer, &EpochLog) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    let mut log = Vec::new();
    while !trainer.is_finished() {
        if let Some(entry) = trainer.step()?.epoch_log {
            on_epoch(trainer, &entry)?;
            log.push(entry);
        }
    }
    Ok(log)
}

/// Files produced by [`train_to_dir`].
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub log: Vec<EpochLog>,
    pub log_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
}

fn append_log_row(path: &Path, e: &EpochLog) -> Result<()> {
    let mut f = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|err| Error::file(path, err))?;
    writeln!(f, "{},{:e},{:e},{:.3}", e.epoch, e.mean_loss, e.lr, e.seconds).map_err(|err| Error::file(path, err))
}

/// [`train`] with on-disk artifacts under `out`:
///
/// - `train_log.csv` (`epoch,mean_loss,lr,seconds`), appended to on resume
/// - `ckpt_epoch<NNNN>.fhdr` every `checkpoint_every` epochs
/// - `ckpt_best.fhdr`, the best mean PSNR on `eval_pairs` at the last iteration
/// - `ckpt_final.fhdr`
/// - `ckpt_diagnostic.fhdr` if the loss goes non-finite, before the error is returned
pub fn train_to_dir(
    trainer: &mut Trainer,
    out: &Path,
    eval_pairs: Option<&[ImagePair]>,
    mut report: impl FnMut(&EpochLog),
) -> Result<TrainOutputs> {
    std::fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    let log_path = out.join("train_log.csv");
    if trainer.progress().step == 0 || !log_path.exists() {
        std::fs::write(&log_path, "epoch,mean_loss,lr,seconds\n").map_err(|e| Error::file(&log_path, e))?;
    }
    let best_path = out.join("ckpt_best.fhdr");
    let mu = trainer.config().loss.mu;
    let every = trainer.config().checkpoint_every;
    let mut best_written = best_path.exists();

    let result = train(trainer, |t, entry| {
        append_log_row(&log_path, entry)?;
        report(entry);
        if let Some(eval) = eval_pairs.filter(|p| !p.is_empty()) {
            let psnr = mean_psnr_last(t.params(), eval, mu)?;
            if psnr > t.progress().best_psnr {
                t.set_best_psnr(psnr);
                t.checkpoint().save(&best_path)?;
                best_written = true;
            }
        }
        if every > 0 && (entry.epoch + 1) % every == 0 {
            t.checkpoint()
                .save(&out.join(format!("ckpt_epoch{:04}.fhdr", entry.epoch + 1)))?;
        }
        Ok(())
    });
    let log = match result {
        Ok(log) => log,
        Err(e @ Error::NonFinite(_)) => {
            trainer.checkpoint().save(&out.join("ckpt_diagnostic.fhdr"))?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    let final_checkpoint = out.join("ckpt_final.fhdr");
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(TrainOutputs {
        log,
        log_path,
        final_checkpoint,
        best_checkpoint: best_written.then_some(best_path),
    })
}
