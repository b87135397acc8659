use std::collections::VecDeque;

use numcore::{NumError, ParamSet, Real, Tensor};

use crate::error::{Error, Result};

pub const DEFAULT_QUEUE: usize = 512;

/// Momentum key encoder and the FIFO queue of past keys.
#[derive(Debug, Clone)]
pub struct MoCoState<T: Real> {
    /// Never bound for gradients; only updated by momentum.
    pub key_params: ParamSet<T>,
    pub momentum: f64,
    pub tau: f64,
    capacity: usize,
    queue: VecDeque<Vec<T>>,
}

impl<T: Real> MoCoState<T> {
    /// Key encoder starts as a copy of `query`.
    pub fn new(query: &ParamSet<T>, capacity: usize, momentum: f64, tau: f64) -> Self {
        let mut key_params = query.clone();
        for p in key_params.iter_mut() {
            p.grad = None;
        }
        Self {
            key_params,
            momentum,
            tau,
            capacity,
            queue: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Queued keys oldest first, `len x dim` (`0 x 0` when empty).
    pub fn queue_tensor(&self) -> Tensor<T> {
        let dim = self.queue.front().map_or(0, Vec::len);
        let data = self.queue.iter().flatten().copied().collect();
        Tensor::new(self.queue.len(), dim, data).expect("queue rows share one length")
    }

    /// `key = m * key + (1 - m) * query`, then enqueue the rows of `keys`,
    /// dropping the oldest beyond capacity.
    pub fn step(&mut self, query: &ParamSet<T>, keys: &Tensor<T>) -> Result<()> {
        self.key_params.check_layout(query)?;
        if let Some(front) = self.queue.front() {
            if keys.rows() > 0 && keys.cols() != front.len() {
                return Err(Error::Num(NumError::ShapeMismatch {
                    op: "moco_step",
                    left: vec![front.len()],
                    right: keys.shape(),
                }));
            }
        }
        let m = T::of(self.momentum);
        let one_m = T::of(1.0 - self.momentum);
        for (k, q) in self.key_params.iter_mut().zip(query.iter()) {
            for (a, &b) in k.value.data_mut().iter_mut().zip(q.value.data()) {
                *a = m * *a + one_m * b;
            }
        }
        for r in 0..keys.rows() {
            if self.capacity == 0 {
                break;
            }
            if self.queue.len() == self.capacity {
                self.queue.pop_front();
            }
            self.queue.push_back(keys.row(r).to_vec());
        }
        Ok(())
    }
}
