use super::TrainConfig;
use crate::error::{Error, Result};

/// `lr0` before `decay_start_epoch`, then a linear ramp that would hit zero
/// at `epochs` (the last epoch gets `lr0 / (epochs - decay_start)`).
/// Never below `lr_floor`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::contract(format!("epoch {epoch} is outside 0..{}", cfg.epochs)));
    }
    let lr = if epoch < cfg.decay_start_epoch {
        cfg.lr0
    } else {
        let span = (cfg.epochs - cfg.decay_start_epoch) as f64;
        cfg.lr0 * (cfg.epochs - epoch) as f64 / span
    };
    Ok(lr.max(cfg.lr_floor))
}
