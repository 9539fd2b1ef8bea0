//! Execution backend for the data-parallel kernels.
//!
//! With the `parallel` feature and more than one thread, work runs on a
//! dedicated rayon pool. Otherwise every helper degrades to a plain loop on
//! the calling thread. Reductions always combine fixed-size chunk partials in
//! chunk order, so their results do not depend on the thread count.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Result, TuckerError};

/// Entries per partial sum in deterministic reductions.
pub const REDUCE_CHUNK: usize = 4096;

pub struct Executor {
    threads: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("threads", &self.threads)
            .field("parallel", &self.is_parallel())
            .finish()
    }
}

impl Executor {
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(TuckerError::InvalidArgument(
                "thread count must be at least 1".into(),
            ));
        }
        #[cfg(feature = "parallel")]
        {
            let pool = if threads > 1 {
                Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .thread_name(|i| format!("ptucker-{i}"))
                        .build()
                        .map_err(|e| TuckerError::ResourceLimit(format!("thread pool: {e}")))?,
                )
            } else {
                None
            };
            Ok(Executor { threads, pool })
        }
        #[cfg(not(feature = "parallel"))]
        {
            if threads > 1 {
                log::debug!("built without `parallel`; running {threads}-thread config serially");
            }
            Ok(Executor { threads })
        }
    }

    pub fn sequential() -> Self {
        Self::new(1).expect("one thread is always valid")
    }

    /// Requested worker count.
    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.pool.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }

    /// Dynamically scheduled loop over `chunk_len`-sized pieces of `data`.
    /// The closure receives the chunk number and the chunk.
    pub fn try_for_each_chunk_mut<F>(&self, data: &mut [f64], chunk_len: usize, f: F) -> Result<()>
    where
        F: Fn(usize, &mut [f64]) -> Result<()> + Sync + Send,
    {
        let chunk_len = chunk_len.max(1);
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| {
                data.par_chunks_mut(chunk_len)
                    .enumerate()
                    .try_for_each(|(c, chunk)| f(c, chunk))
            });
        }
        data.chunks_mut(chunk_len)
            .enumerate()
            .try_for_each(|(c, chunk)| f(c, chunk))
    }

    /// Statically partitioned loop over rows of `row_len` values: each of the
    /// `threads` workers gets one contiguous block. The closure receives the
    /// first row number of its block.
    pub fn for_each_row_block<F>(&self, data: &mut [f64], row_len: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        let row_len = row_len.max(1);
        let rows = data.len() / row_len;
        let per_block = rows.div_ceil(self.threads).max(1);
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            pool.install(|| {
                data.par_chunks_mut(per_block * row_len)
                    .enumerate()
                    .for_each(|(b, block)| f(b * per_block, block))
            });
            return;
        }
        for (b, block) in data.chunks_mut(per_block * row_len).enumerate() {
            f(b * per_block, block);
        }
    }

    /// `Σ_{chunks} f(range)` over `0..n`, split into [`REDUCE_CHUNK`] pieces,
    /// combined left to right in chunk order.
    pub fn sum_chunked<F>(&self, n: usize, f: F) -> f64
    where
        F: Fn(Range<usize>) -> f64 + Sync + Send,
    {
        let chunks = n.div_ceil(REDUCE_CHUNK);
        let range = |c: usize| c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(n);
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            let partials: Vec<f64> =
                pool.install(|| (0..chunks).into_par_iter().map(|c| f(range(c))).collect());
            return partials.into_iter().fold(0.0, |a, b| a + b);
        }
        (0..chunks).map(|c| f(range(c))).fold(0.0, |a, b| a + b)
    }

    /// `(0..n).map(f).collect()`, in parallel when available.
    pub fn map_collect<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }
}

/// Recycles per-worker scratch buffers and records how many were ever
/// alive at once, which bounds the intermediate memory of a parallel pass.
pub struct ScratchPool<S> {
    free: Mutex<Vec<S>>,
    created: AtomicUsize,
    bytes_each: usize,
}

impl<S> ScratchPool<S> {
    pub fn new(bytes_each: usize) -> Self {
        ScratchPool {
            free: Mutex::new(Vec::new()),
            created: AtomicUsize::new(0),
            bytes_each,
        }
    }

    /// Runs `f` with a buffer, creating one with `make` if none is free.
    pub fn with<R>(&self, make: impl FnOnce() -> S, f: impl FnOnce(&mut S) -> R) -> R {
        let popped = self.free.lock().expect("scratch pool poisoned").pop();
        let mut s = popped.unwrap_or_else(|| {
            self.created.fetch_add(1, Ordering::Relaxed);
            make()
        });
        let out = f(&mut s);
        self.free.lock().expect("scratch pool poisoned").push(s);
        out
    }

    /// Number of buffers created, i.e. the peak number in simultaneous use.
    pub fn created(&self) -> usize {
        self.created.load(Ordering::Relaxed)
    }

    /// Peak bytes held in scratch buffers.
    pub fn peak_bytes(&self) -> usize {
        self.created() * self.bytes_each
    }
}
