//! Full-BPTT training with Adam, evaluation per iteration, and the
//! iteration-count ablation.

mod ablation;
mod adam;
mod checkpoint;
mod evaluate;
mod schedule;
mod trainer;

pub use ablation::{ablate_iterations, AblationReport};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    decode_container, decode_extractor, encode_container, encode_extractor, Checkpoint, Progress, Record, RecordData,
    MAGIC, VERSION,
};
pub use evaluate::{evaluate, EvalReport, Reconstructor};
pub use schedule::lr_schedule;
pub use trainer::{train, train_to_dir, EpochLog, StepOutcome, TrainOutputs, Trainer};

use crate::error::{Error, Result};
use crate::losses::LossConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub decay_start_epoch: usize,
    /// Lower bound on the learning rate; 0 lets it decay to the schedule's end.
    pub lr_floor: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Seeds weight initialization and the data order.
    pub seed: u64,
    pub loss: LossConfig,
    /// Periodic checkpoint cadence in epochs; 0 disables it.
    pub checkpoint_every: usize,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr0: 2e-4,
            decay_start_epoch: 100,
            lr_floor: 0.0,
            adam: AdamConfig::default(),
            batch_size: 16,
            seed: 0,
            loss: LossConfig::default(),
            checkpoint_every: 10,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_start_epoch > 0 && self.decay_start_epoch <= self.epochs) {
            return Err(Error::contract(format!(
                "need 0 < decay_start_epoch <= epochs, got {} and {}",
                self.decay_start_epoch, self.epochs
            )));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::contract(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.lr_floor >= 0.0) {
            return Err(Error::contract("lr_floor must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::contract("grad_clip must be positive"));
            }
        }
        self.adam.validate()?;
        self.loss.validate()
    }
}
