use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ImagePair;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Stacked `N×3×H×W` input and target tensors.
#[derive(Clone, Debug)]
pub struct Batch<T: Real> {
    pub ldr: Tensor<T>,
    pub hdr: Tensor<T>,
    pub ids: Vec<String>,
}

/// Permutation of `0..len` for one epoch. Depends only on `(seed, epoch)`,
/// so a resumed run can regenerate it.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

pub fn make_batch<T: Real>(pairs: &[ImagePair], indices: &[usize]) -> Result<Batch<T>> {
    if indices.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let mut ldr = Vec::with_capacity(indices.len());
    let mut hdr = Vec::with_capacity(indices.len());
    let mut ids = Vec::with_capacity(indices.len());
    for &i in indices {
        let p = pairs
            .get(i)
            .ok_or_else(|| Error::contract(format!("pair index {i} out of range")))?;
        ldr.push(p.ldr.to_tensor::<T>());
        hdr.push(p.hdr.to_tensor::<T>());
        ids.push(p.id.clone());
    }
    Ok(Batch {
        ldr: Tensor::stack_batch(&ldr)?,
        hdr: Tensor::stack_batch(&hdr)?,
        ids,
    })
}

/// Batches of one epoch, in shuffled order; the last batch may be short.
pub struct BatchIter<'a, T: Real> {
    pairs: &'a [ImagePair],
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real> BatchIter<'_, T> {
    /// Index of the next batch within the epoch.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

/// Starts the epoch at batch `start_batch`, for resuming mid-epoch.
pub fn batch_iter<T: Real>(
    pairs: &[ImagePair],
    batch_size: usize,
    seed: u64,
    epoch: u64,
    start_batch: usize,
) -> Result<BatchIter<'_, T>> {
    if batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    Ok(BatchIter {
        pairs,
        order: epoch_order(pairs.len(), seed, epoch),
        batch_size,
        cursor: start_batch,
        _marker: std::marker::PhantomData,
    })
}

impl<T: Real> Iterator for BatchIter<'_, T> {
    type Item = Result<Batch<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        let start = self.cursor * self.batch_size;
        if start >= self.order.len() {
            return None;
        }
        let end = (start + self.batch_size).min(self.order.len());
        self.cursor += 1;
        Some(make_batch(self.pairs, &self.order[start..end]))
    }
}
