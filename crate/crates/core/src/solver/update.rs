//! Row-wise factor updates.
//!
//! Row `i_n` of `A^(n)` is the minimizer `c (B + λI)^{-1}` where, over the
//! entries α whose nth coordinate is `i_n`, `B = Σ δ_αᵀ δ_α` and
//! `c = Σ X_α δ_α`, and `δ_α(j) = Σ_{β : j_n = j} G_β Π_{k≠n} a^(k)_{i_k j_k}`.
//! Rows are independent, so each worker owns a disjoint run of rows and a
//! private `(δ, B, c)` scratch triple.

use std::time::Instant;

use super::cache::{CacheTable, EPS_DIV};
use crate::error::{Result, TuckerError};
use crate::linalg::{solve_regularized_in_place, SmallMatrix};
use crate::par::{Executor, ScratchPool};
use crate::tensor::{FactorMatrix, ModeSliceIndex, Model, SparseTensor};

/// Where δ vectors come from while assembling a row system.
#[derive(Clone, Copy)]
pub enum DeltaSource<'c> {
    /// Multiply through the factors for every core entry.
    Direct,
    /// Divide cached full products by the mode-n factor value.
    Cached(&'c CacheTable),
}

/// Writes δ for entry `alpha` and mode `n` into `out` (length `J_n`).
pub fn compute_delta_direct_into(
    tensor: &SparseTensor,
    model: &Model,
    alpha: usize,
    n: usize,
    out: &mut [f64],
) {
    out.fill(0.0);
    let rows = model.row_offsets(tensor.index(alpha));
    let core = &model.core;
    for (cidx, g) in core.iter() {
        let mut p = g;
        for (k, &j) in cidx.iter().enumerate() {
            if k != n {
                p *= model.factors[k].as_slice()[rows[k] + j as usize];
            }
        }
        out[cidx[n] as usize] += p;
    }
}

pub fn compute_delta_direct(
    tensor: &SparseTensor,
    model: &Model,
    alpha: usize,
    n: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; model.core.dims()[n]];
    compute_delta_direct_into(tensor, model, alpha, n, &mut out);
    out
}

/// Cached δ: `Pres[α][β] / a^(n)_{i_n j_n}`, falling back to the direct
/// product when the divisor is at most [`EPS_DIV`] in magnitude. `model`
/// must still hold the factor values the cache was built from.
pub fn compute_delta_cached_into(
    cache: &CacheTable,
    tensor: &SparseTensor,
    model: &Model,
    alpha: usize,
    n: usize,
    out: &mut [f64],
) {
    out.fill(0.0);
    let idx = tensor.index(alpha);
    let a_row = model.factors[n].row(idx[n] as usize);
    let cached = cache.row(alpha);
    let core = &model.core;
    let mut rows = None;
    for (beta, (cidx, g)) in core.iter().enumerate() {
        let jn = cidx[n] as usize;
        let a = a_row[jn];
        if a.abs() > EPS_DIV {
            out[jn] += cached[beta] / a;
        } else {
            let rows = rows.get_or_insert_with(|| model.row_offsets(idx));
            let mut p = g;
            for (k, &j) in cidx.iter().enumerate() {
                if k != n {
                    p *= model.factors[k].as_slice()[rows[k] + j as usize];
                }
            }
            out[jn] += p;
        }
    }
}

pub fn compute_delta_cached(
    cache: &CacheTable,
    tensor: &SparseTensor,
    model: &Model,
    alpha: usize,
    n: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; model.core.dims()[n]];
    compute_delta_cached_into(cache, tensor, model, alpha, n, &mut out);
    out
}

#[inline]
fn delta_into(
    source: DeltaSource<'_>,
    tensor: &SparseTensor,
    model: &Model,
    alpha: usize,
    n: usize,
    out: &mut [f64],
) {
    match source {
        DeltaSource::Direct => compute_delta_direct_into(tensor, model, alpha, n, out),
        DeltaSource::Cached(c) => compute_delta_cached_into(c, tensor, model, alpha, n, out),
    }
}

/// Per-worker buffers: δ, B (row-major `J x J`) and c.
struct RowScratch {
    delta: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl RowScratch {
    fn new(j: usize) -> Self {
        RowScratch {
            delta: vec![0.0; j],
            b: vec![0.0; j * j],
            c: vec![0.0; j],
        }
    }

    fn bytes(j: usize) -> usize {
        (j * j + 2 * j) * std::mem::size_of::<f64>()
    }
}

fn accumulate_row(
    tensor: &SparseTensor,
    model: &Model,
    slice: &[u32],
    n: usize,
    source: DeltaSource<'_>,
    s: &mut RowScratch,
) {
    let j = s.c.len();
    s.b.fill(0.0);
    s.c.fill(0.0);
    for &alpha in slice {
        let alpha = alpha as usize;
        delta_into(source, tensor, model, alpha, n, &mut s.delta);
        let x = tensor.value(alpha);
        for a in 0..j {
            let da = s.delta[a];
            s.c[a] += x * da;
            let brow = &mut s.b[a * j..(a + 1) * j];
            for (bv, &db) in brow.iter_mut().zip(&s.delta) {
                *bv += da * db;
            }
        }
    }
}

/// `(B, c)` for row `i` of mode `n`; an empty slice yields zeros.
pub fn assemble_row_system(
    tensor: &SparseTensor,
    slices: &ModeSliceIndex,
    model: &Model,
    n: usize,
    i: usize,
    source: DeltaSource<'_>,
) -> (SmallMatrix, Vec<f64>) {
    let j = model.core.dims()[n];
    let mut s = RowScratch::new(j);
    accumulate_row(tensor, model, slices.slice(n, i), n, source, &mut s);
    let b = SmallMatrix::from_vec(j, j, s.b).expect("finite row system");
    (b, s.c)
}

/// Outcome of one factor-matrix update.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeUpdate {
    pub seconds: f64,
    /// Peak bytes of per-worker `(δ, B, c)` scratch alive during the update.
    pub scratch_bytes: usize,
    /// Scratch buffers created, i.e. the most workers active at once.
    pub workers: usize,
}

/// Factor-update driver bound to one tensor: owns its mode-slice index and
/// the executor used for the parallel sections.
pub struct RowUpdater<'t> {
    tensor: &'t SparseTensor,
    slices: ModeSliceIndex,
    lambda: f64,
    exec: Executor,
}

impl<'t> RowUpdater<'t> {
    pub fn new(tensor: &'t SparseTensor, lambda: f64, threads: usize) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(TuckerError::InvalidArgument(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(RowUpdater {
            tensor,
            slices: ModeSliceIndex::build(tensor),
            lambda,
            exec: Executor::new(threads)?,
        })
    }

    pub fn tensor(&self) -> &'t SparseTensor {
        self.tensor
    }

    pub fn slices(&self) -> &ModeSliceIndex {
        &self.slices
    }

    pub fn executor(&self) -> &Executor {
        &self.exec
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Rows per work item: `min(64, I_n / 4T)`, at least one.
    pub fn chunk_rows(&self, rows: usize) -> usize {
        (rows / (4 * self.exec.threads())).clamp(1, 64)
    }

    /// Replaces every row of `A^(n)` by its regularized least-squares
    /// solution. With a cache, δ is read from it and the cache is refreshed
    /// for the new factor afterwards.
    pub fn update_mode(
        &self,
        model: &mut Model,
        n: usize,
        cache: Option<&mut CacheTable>,
    ) -> Result<ModeUpdate> {
        let start = Instant::now();
        if n >= model.order() {
            return Err(TuckerError::InvalidArgument(format!(
                "mode {} out of range for order {}",
                n + 1,
                model.order()
            )));
        }
        model.check_compatible(self.tensor)?;
        let rows = model.factors[n].rows();
        if rows != self.slices.rows(n) {
            return Err(TuckerError::Validation(format!(
                "factor {} has {rows} rows, tensor mode has {}",
                n + 1,
                self.slices.rows(n)
            )));
        }
        let j = model.core.dims()[n];
        #[cfg(debug_assertions)]
        if let Some(c) = cache.as_deref() {
            c.verify_sample(self.tensor, model, 16)?;
        }

        let mut target = model.factors[n].clone();
        let chunk = self.chunk_rows(rows);
        let pool: ScratchPool<RowScratch> = ScratchPool::new(RowScratch::bytes(j));
        {
            let model_ro: &Model = model;
            let source = match cache.as_deref() {
                Some(c) => DeltaSource::Cached(c),
                None => DeltaSource::Direct,
            };
            let lambda = self.lambda;
            let tensor = self.tensor;
            let slices = &self.slices;
            self.exec
                .try_for_each_chunk_mut(target.as_mut_slice(), chunk * j, |c, block| {
                    pool.with(
                        || RowScratch::new(j),
                        |s| {
                            for (r, row) in block.chunks_mut(j).enumerate() {
                                let i = c * chunk + r;
                                let slice = slices.slice(n, i);
                                if slice.is_empty() {
                                    row.fill(0.0);
                                    continue;
                                }
                                accumulate_row(tensor, model_ro, slice, n, source, s);
                                solve_regularized_in_place(&mut s.b, &mut s.c, j, lambda).map_err(
                                    |col| {
                                        TuckerError::NumericFailure(format!(
                                            "mode {} row {}: B + lambda*I not positive definite \
                                             (pivot {})",
                                            n + 1,
                                            i + 1,
                                            col + 1
                                        ))
                                    },
                                )?;
                                if s.c.iter().any(|v| !v.is_finite()) {
                                    return Err(TuckerError::NumericFailure(format!(
                                        "mode {} row {}: non-finite solution",
                                        n + 1,
                                        i + 1
                                    )));
                                }
                                row.copy_from_slice(&s.c);
                            }
                            Ok(())
                        },
                    )
                })?;
        }
        let old: FactorMatrix = std::mem::replace(&mut model.factors[n], target);
        if let Some(c) = cache {
            c.refresh_mode(&self.exec, self.tensor, model, &old, n);
        }
        Ok(ModeUpdate {
            seconds: start.elapsed().as_secs_f64(),
            scratch_bytes: pool.peak_bytes(),
            workers: pool.created(),
        })
    }
}

/// One-shot factor update building its own slice index; see
/// [`RowUpdater::update_mode`] for repeated use.
pub fn update_factor_matrix(
    tensor: &SparseTensor,
    model: &mut Model,
    n: usize,
    lambda: f64,
    threads: usize,
    cache: Option<&mut CacheTable>,
) -> Result<ModeUpdate> {
    RowUpdater::new(tensor, lambda, threads)?.update_mode(model, n, cache)
}
