//! Per-document work distribution.
//!
//! E-steps are independent across documents once the model parameters are
//! frozen. The fitters only need an indexed map, so the execution strategy is a
//! small trait: this crate ships [`Sequential`]; the `ldta` crate adds a
//! thread-pool runner.

use alloc::vec::Vec;

pub trait DocRunner: Sync {
    /// `(0..n).map(f).collect()`, in index order.
    fn map_docs<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl DocRunner for Sequential {
    fn map_docs<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
