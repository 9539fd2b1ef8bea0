//! Cache table for the time-optimized variant: one row per observed entry,
//! one column per core entry, each holding `G_β · Π_k a^(k)_{i_k j_k}`.

use crate::error::{Result, TuckerError};
use crate::par::Executor;
use crate::tensor::{FactorMatrix, Model, SparseTensor};

/// Factor values at or below this magnitude are never divided by; the
/// affected products are recomputed from scratch instead.
pub const EPS_DIV: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheTable {
    entries: usize,
    core_nnz: usize,
    data: Vec<f64>,
}

/// Bytes needed for a table over `entries` observations and `core_nnz`
/// core entries, or `None` on overflow.
pub fn cache_bytes(entries: usize, core_nnz: usize) -> Option<usize> {
    entries
        .checked_mul(core_nnz)
        .and_then(|v| v.checked_mul(std::mem::size_of::<f64>()))
}

impl CacheTable {
    pub fn rows(&self) -> usize {
        self.entries
    }

    pub fn cols(&self) -> usize {
        self.core_nnz
    }

    /// Number of stored values, |Ω|·|G|.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f64>()
    }

    #[inline]
    pub fn row(&self, alpha: usize) -> &[f64] {
        &self.data[alpha * self.core_nnz..(alpha + 1) * self.core_nnz]
    }

    #[inline]
    pub fn get(&self, alpha: usize, beta: usize) -> f64 {
        self.data[alpha * self.core_nnz + beta]
    }

    /// Test hook: overwrite one cached product.
    #[doc(hidden)]
    pub fn set(&mut self, alpha: usize, beta: usize, v: f64) {
        self.data[alpha * self.core_nnz + beta] = v;
    }

    /// Refreshes every row after mode `n` changed from `old` to the factor now
    /// stored in `model`: each product is rescaled by `new / old`, or
    /// recomputed when `|old| <= EPS_DIV`.
    pub fn refresh_mode(
        &mut self,
        exec: &Executor,
        tensor: &SparseTensor,
        model: &Model,
        old: &FactorMatrix,
        n: usize,
    ) {
        let core = &model.core;
        let new = &model.factors[n];
        let g = self.core_nnz;
        exec.for_each_row_block(&mut self.data, g, |first, block| {
            for (r, row) in block.chunks_mut(g).enumerate() {
                let idx = tensor.index(first + r);
                let i_n = idx[n] as usize;
                let old_row = old.row(i_n);
                let new_row = new.row(i_n);
                let mut offsets = None;
                for (beta, p) in row.iter_mut().enumerate() {
                    let jn = core.index(beta)[n] as usize;
                    let a_old = old_row[jn];
                    if a_old.abs() > EPS_DIV {
                        *p = *p / a_old * new_row[jn];
                    } else {
                        let rows = offsets.get_or_insert_with(|| model.row_offsets(idx));
                        *p = model.term(rows, beta);
                    }
                }
            }
        });
    }

    /// Compares `samples` evenly spaced rows against freshly computed
    /// products.
    pub fn verify_sample(
        &self,
        tensor: &SparseTensor,
        model: &Model,
        samples: usize,
    ) -> Result<()> {
        if self.entries != tensor.nnz() || self.core_nnz != model.core.nnz() {
            return Err(TuckerError::InternalConsistency(format!(
                "cache is {}x{}, model needs {}x{}",
                self.entries,
                self.core_nnz,
                tensor.nnz(),
                model.core.nnz()
            )));
        }
        let step = (self.entries / samples.max(1)).max(1);
        let scale = model
            .core
            .values()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            * 1e-14;
        for alpha in (0..self.entries).step_by(step) {
            let rows = model.row_offsets(tensor.index(alpha));
            for beta in 0..self.core_nnz {
                let expect = model.term(&rows, beta);
                let got = self.get(alpha, beta);
                if (got - expect).abs() > 1e-10 * expect.abs() + scale {
                    return Err(TuckerError::InternalConsistency(format!(
                        "stale cache at entry {alpha}, core entry {beta}: {got} vs {expect}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Builds the full cache table from the current model, refusing when it
/// would exceed `max_bytes`.
pub fn precompute_cache_with(
    exec: &Executor,
    tensor: &SparseTensor,
    model: &Model,
    max_bytes: usize,
) -> Result<CacheTable> {
    let g = model.core.nnz();
    let need = cache_bytes(tensor.nnz(), g);
    match need {
        Some(b) if b <= max_bytes => {}
        _ => {
            return Err(TuckerError::ResourceLimit(format!(
                "cache table needs {} bytes ({} entries x {} core entries), budget is {max_bytes}; \
                 use the default variant instead",
                need.map_or_else(|| "more than usize::MAX".to_string(), |b| b.to_string()),
                tensor.nnz(),
                g
            )))
        }
    }
    let mut data = vec![0.0; tensor.nnz() * g];
    exec.for_each_row_block(&mut data, g, |first, block| {
        for (r, row) in block.chunks_mut(g).enumerate() {
            let rows = model.row_offsets(tensor.index(first + r));
            for (beta, p) in row.iter_mut().enumerate() {
                *p = model.term(&rows, beta);
            }
        }
    });
    Ok(CacheTable {
        entries: tensor.nnz(),
        core_nnz: g,
        data,
    })
}

pub fn precompute_cache(
    tensor: &SparseTensor,
    model: &Model,
    max_bytes: usize,
) -> Result<CacheTable> {
    precompute_cache_with(&Executor::sequential(), tensor, model, max_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_tensor;
    use crate::tensor::init_model;

    #[test]
    fn unit_factors_cache_core_values() {
        let t = random_tensor(&[3, 3, 3], 8, 1).unwrap();
        let mut m = init_model(&[3, 3, 3], &[2, 2, 2], 2).unwrap();
        for f in &mut m.factors {
            f.as_mut_slice().fill(1.0);
        }
        let c = precompute_cache(&t, &m, usize::MAX).unwrap();
        for alpha in 0..t.nnz() {
            assert_eq!(c.row(alpha), m.core.values());
        }
    }

    #[test]
    fn table_shape_and_products() {
        let t = random_tensor(&[4, 4], 3, 5).unwrap();
        let m = init_model(&[4, 4], &[2, 2], 6).unwrap();
        let c = precompute_cache(&t, &m, usize::MAX).unwrap();
        assert_eq!(c.len(), 12);
        for (alpha, (idx, _)) in t.iter().enumerate() {
            for (beta, (cidx, g)) in m.core.iter().enumerate() {
                let expect = g
                    * m.factors[0].get(idx[0] as usize, cidx[0] as usize)
                    * m.factors[1].get(idx[1] as usize, cidx[1] as usize);
                assert!((c.get(alpha, beta) - expect).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn budget_guard() {
        let t = random_tensor(&[4, 4], 3, 5).unwrap();
        let m = init_model(&[4, 4], &[2, 2], 6).unwrap();
        assert!(matches!(
            precompute_cache(&t, &m, 1),
            Err(TuckerError::ResourceLimit(_))
        ));
        assert!(precompute_cache(&t, &m, 3 * 4 * 8).is_ok());
        assert!(precompute_cache(&t, &m, 3 * 4 * 8 - 1).is_err());
    }

    #[test]
    fn stale_entries_are_detected() {
        let t = random_tensor(&[4, 4], 5, 5).unwrap();
        let m = init_model(&[4, 4], &[2, 2], 6).unwrap();
        let mut c = precompute_cache(&t, &m, usize::MAX).unwrap();
        c.verify_sample(&t, &m, 5).unwrap();
        c.set(0, 1, c.get(0, 1) + 0.5);
        assert!(matches!(
            c.verify_sample(&t, &m, 5),
            Err(TuckerError::InternalConsistency(_))
        ));
    }

    #[test]
    fn refresh_tracks_a_changed_factor_with_zero_guard() {
        let t = random_tensor(&[5, 4, 3], 20, 3).unwrap();
        let mut m = init_model(&[5, 4, 3], &[2, 2, 2], 4).unwrap();
        m.factors[1].set(2, 0, 0.0);
        let mut c = precompute_cache(&t, &m, usize::MAX).unwrap();
        let old = m.factors[1].clone();
        for (k, v) in m.factors[1].as_mut_slice().iter_mut().enumerate() {
            *v = 0.3 + 0.1 * k as f64;
        }
        c.refresh_mode(&Executor::sequential(), &t, &m, &old, 1);
        let fresh = precompute_cache(&t, &m, usize::MAX).unwrap();
        for alpha in 0..t.nnz() {
            for beta in 0..m.core.nnz() {
                let (a, b) = (c.get(alpha, beta), fresh.get(alpha, beta));
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300), "{a} vs {b}");
            }
        }
    }
}
