//! Sliding-window stream memory.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::model::{GradVector, ParamVector};

/// One remembered observation and the descent direction computed from it.
///
/// `grad` holds the stored direction `g = -∇L_total(theta_snapshot; x, y)`, so integrating
/// it with a nonnegative kernel descends the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct BufferEntry {
    pub tau: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub theta_snapshot: ParamVector,
    pub grad: GradVector,
    /// Data loss at push time (without the memory penalty).
    pub loss: f64,
    /// Memory-penalty part of `-grad`, kept so `grad` can be rebuilt from the data term.
    pub penalty: Option<Vec<f64>>,
}

/// Bounded FIFO of [`BufferEntry`] in strictly increasing time order.
#[derive(Clone, Debug)]
pub struct MemoryBuffer {
    entries: VecDeque<BufferEntry>,
    capacity: usize,
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be >= 1".into()));
        }
        Ok(MemoryBuffer {
            entries: VecDeque::with_capacity(capacity + 1),
            capacity,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &BufferEntry> + DoubleEndedIterator + Clone {
        self.entries.iter()
    }

    pub fn last_tau(&self) -> Option<f64> {
        self.entries.back().map(|e| e.tau)
    }

    /// Appends `entry`, evicting and returning the oldest one when over capacity.
    pub fn push(&mut self, entry: BufferEntry) -> Result<Option<BufferEntry>> {
        if let Some(last) = self.last_tau() {
            if !(entry.tau > last) {
                return Err(Error::NonMonotoneTime {
                    last,
                    tau: entry.tau,
                });
            }
        }
        self.entries.push_back(entry);
        if self.entries.len() > self.capacity {
            Ok(self.entries.pop_front())
        } else {
            Ok(None)
        }
    }

    /// `w_i = K(t, tau_i)` in entry order.
    pub fn weights(&self, kernel: &KernelSpec, t: f64) -> Result<Vec<f64>> {
        self.entries.iter().map(|e| kernel.eval(t, e.tau)).collect()
    }

    /// Kernel-weighted mean of the stored parameter snapshots.
    pub fn theta_mem(&self, kernel: &KernelSpec, t: f64) -> Result<ParamVector> {
        let first = self.entries.front().ok_or(Error::EmptyBuffer)?;
        let weights = self.weights(kernel, t)?;
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateWeights);
        }
        let mut mean = ParamVector::zeros(first.theta_snapshot.len());
        for (e, w) in self.entries.iter().zip(&weights) {
            mean.axpy(w / total, &e.theta_snapshot);
        }
        Ok(mean)
    }

    /// Writes `tau,weight,loss` rows for every entry.
    pub fn write_csv<W: Write>(&self, kernel: &KernelSpec, t: f64, mut out: W) -> std::io::Result<()> {
        writeln!(out, "tau,weight,loss")?;
        for e in &self.entries {
            let w = kernel
                .eval(t, e.tau)
                .map_err(|err| std::io::Error::new(std::io::ErrorKind::InvalidInput, err))?;
            writeln!(out, "{},{},{}", e.tau, w, e.loss)?;
        }
        Ok(())
    }
}

/// `L_total = base + beta * ‖theta − theta_mem‖²` and the gradient addend `2 beta (theta − theta_mem)`.
pub fn regularized_loss(
    base_loss: f64,
    theta: &[f64],
    theta_mem: &[f64],
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    if theta.len() != theta_mem.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: theta_mem.len(),
        });
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be >= 0, got {beta}")));
    }
    let diff: Vec<f64> = theta.iter().zip(theta_mem).map(|(a, b)| a - b).collect();
    let sq: f64 = diff.iter().map(|d| d * d).sum();
    let addend = diff.into_iter().map(|d| 2.0 * beta * d).collect();
    Ok((base_loss + beta * sq, addend))
}
