//! Accuracy metrics and core-tensor inspection.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::error::{Result, TuckerError};
use crate::par::Executor;
use crate::tensor::{Model, SparseTensor};
use crate::truncation::{partial_errors_with, ScoredCoreEntry};

/// `sqrt(Σ_{α∈Ω} (X_α − x̂_α)²)` over the observed entries.
///
/// Partial sums over fixed-size chunks are added in chunk order, so the
/// result is bit-identical for every thread count.
pub fn reconstruction_error_with(exec: &Executor, tensor: &SparseTensor, model: &Model) -> f64 {
    exec.sum_chunked(tensor.nnz(), |range| {
        let mut s = 0.0;
        for alpha in range {
            let r = tensor.value(alpha) - model.reconstruct_unchecked(tensor.index(alpha));
            s += r * r;
        }
        s
    })
    .sqrt()
}

pub fn reconstruction_error(tensor: &SparseTensor, model: &Model) -> f64 {
    reconstruction_error_with(&Executor::sequential(), tensor, model)
}

/// Root mean squared prediction error over held-out entries.
pub fn test_rmse(test: &SparseTensor, model: &Model) -> Result<f64> {
    test_rmse_with(&Executor::sequential(), test, model)
}

pub fn test_rmse_with(exec: &Executor, test: &SparseTensor, model: &Model) -> Result<f64> {
    if test.nnz() == 0 {
        return Err(TuckerError::InvalidArgument("empty test set".into()));
    }
    model.check_compatible(test)?;
    let e = reconstruction_error_with(exec, test, model);
    Ok(e / (test.nnz() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoreRanking {
    /// By `|G_β|`.
    ByValue,
    /// By the partial reconstruction error of the entry.
    ByPartialError,
}

/// The `k` most prominent core entries (all of them when `k >= |G|`),
/// ties broken by ascending row-major index.
///
/// For [`CoreRanking::ByValue`] the score is `|G_β|`.
pub fn top_core_entries(
    model: &Model,
    k: usize,
    ranking: CoreRanking,
    tensor: Option<&SparseTensor>,
) -> Result<Vec<ScoredCoreEntry>> {
    if k == 0 {
        return Err(TuckerError::InvalidArgument("k must be at least 1".into()));
    }
    let scores = match ranking {
        CoreRanking::ByValue => model.core.values().iter().map(|v| v.abs()).collect(),
        CoreRanking::ByPartialError => {
            let tensor = tensor.ok_or_else(|| {
                TuckerError::InvalidArgument(
                    "ranking by partial error needs the data tensor".into(),
                )
            })?;
            model.check_compatible(tensor)?;
            partial_errors_with(&Executor::sequential(), tensor, model)
        }
    };
    let mut order: Vec<usize> = (0..model.core.nnz()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| model.core.linear_index(a).cmp(&model.core.linear_index(b)))
    });
    Ok(order
        .into_iter()
        .take(k)
        .map(|beta| ScoredCoreEntry {
            index: model.core.index(beta).iter().map(|&j| j as usize).collect(),
            value: model.core.value(beta),
            score: scores[beta],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub reconstruction_error: f64,
    pub test_rmse: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

impl EvalReport {
    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "reconstruction_error={:.16e}", self.reconstruction_error);
        if let Some(r) = self.test_rmse {
            let _ = writeln!(s, "test_rmse={r:.16e}");
        }
        let _ = writeln!(s, "n_train={}", self.n_train);
        let _ = writeln!(s, "n_test={}", self.n_test);
        s
    }

    pub const CSV_HEADER: &'static str = "reconstruction_error,test_rmse,n_train,n_test";

    /// One CSV row matching [`EvalReport::CSV_HEADER`]; absent RMSE is empty.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.16e},{},{},{}",
            self.reconstruction_error,
            self.test_rmse
                .map(|r| format!("{r:.16e}"))
                .unwrap_or_default(),
            self.n_train,
            self.n_test
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{planted_tensor, random_tensor};
    use crate::tensor::{init_model, CoreTensor, FactorMatrix};

    #[test]
    fn zero_model_error_is_observed_norm() {
        let t = random_tensor(&[5, 5, 5], 40, 1).unwrap();
        let mut m = init_model(&[5, 5, 5], &[2, 2, 2], 1).unwrap();
        for f in &mut m.factors {
            f.as_mut_slice().fill(0.0);
        }
        assert_eq!(reconstruction_error(&t, &m), t.squared_norm().sqrt());
    }

    #[test]
    fn perfect_fit_has_zero_error() {
        let m = init_model(&[6, 6, 6], &[2, 2, 2], 3).unwrap();
        let t = planted_tensor(&m, 50, 4).unwrap();
        assert_eq!(reconstruction_error(&t, &m), 0.0);
        assert_eq!(test_rmse(&t, &m).unwrap(), 0.0);
    }

    #[test]
    fn parallel_error_matches_serial_accumulation() {
        let t = random_tensor(&[30, 30, 30], 10_000, 2).unwrap();
        let m = init_model(&[30, 30, 30], &[2, 3, 2], 3).unwrap();
        let mut serial = 0.0;
        for (idx, x) in t.iter() {
            let r = x - m.reconstruct_unchecked(idx);
            serial += r * r;
        }
        let serial = serial.sqrt();
        let par = reconstruction_error_with(&Executor::new(4).unwrap(), &t, &m);
        assert!((par - serial).abs() <= 1e-10 * serial);
        assert_eq!(par.to_bits(), reconstruction_error(&t, &m).to_bits());
    }

    #[test]
    fn single_entry_rmse() {
        let core = CoreTensor::superdiagonal(2, 1).unwrap();
        let f = FactorMatrix::from_rows(&[vec![1.0]]).unwrap();
        let m = Model::new(core, vec![f.clone(), f]).unwrap();
        let t = SparseTensor::from_entries(vec![1, 1], vec![(vec![0, 0], 1.5)]).unwrap();
        assert_eq!(test_rmse(&t, &m).unwrap(), 0.5);
    }

    #[test]
    fn rmse_is_scaled_error() {
        let t = random_tensor(&[10, 10], 100, 7).unwrap();
        let m = init_model(&[10, 10], &[2, 2], 7).unwrap();
        let rmse = test_rmse(&t, &m).unwrap();
        assert!((rmse - reconstruction_error(&t, &m) / 10.0).abs() <= 1e-15);
    }

    #[test]
    fn top_by_absolute_value() {
        let core =
            CoreTensor::from_entries(vec![2, 2], vec![(vec![0, 0], 5.0), (vec![1, 1], -7.0)])
                .unwrap();
        let f = FactorMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = Model::new(core, vec![f.clone(), f]).unwrap();
        let top = top_core_entries(&m, 1, CoreRanking::ByValue, None).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!((top[0].index.clone(), top[0].value), (vec![1, 1], -7.0));
        let all = top_core_entries(&m, 10, CoreRanking::ByValue, None).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[1].index, vec![0, 0]);
    }

    #[test]
    fn partial_error_ranking_needs_data() {
        let m = init_model(&[3, 3], &[2, 2], 1).unwrap();
        assert!(top_core_entries(&m, 1, CoreRanking::ByPartialError, None).is_err());
        assert!(top_core_entries(&m, 0, CoreRanking::ByValue, None).is_err());
    }

    #[test]
    fn report_formats() {
        let r = EvalReport {
            reconstruction_error: 0.5,
            test_rmse: None,
            n_train: 3,
            n_test: 0,
        };
        assert_eq!(
            r.to_kv(),
            "reconstruction_error=5.0000000000000000e-1\nn_train=3\nn_test=0\n"
        );
        assert_eq!(r.to_csv_row(), "5.0000000000000000e-1,,3,0");
    }
}
