//! Core truncation for the approximation variant.
//!
//! The score of a core entry β is the change in squared reconstruction error
//! caused by keeping it rather than dropping it:
//!
//! `R(β) = Σ_α t_αβ (−2 X_α + t_αβ + 2 Σ_{γ≠β} t_αγ)`, with
//! `t_αβ = G_β Π_n a^(n)_{i_n j_n}`.
//!
//! The inner sum over γ is the full reconstruction minus `t_αβ`, so one pass
//! computing every reconstruction turns the score into `Σ_α t (2 (x̂_α − X_α) − t)`.
//! Entries with the highest scores are the ones removed.

use std::cmp::Ordering;

use crate::error::{Result, TuckerError};
use crate::par::Executor;
use crate::tensor::{Model, SparseTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCoreEntry {
    /// 0-based core coordinates `(j_1..j_N)`.
    pub index: Vec<usize>,
    pub value: f64,
    pub score: f64,
}

/// Result of one truncation step.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub model: Model,
    /// Number of core entries removed.
    pub removed: usize,
    /// Row-major linear indices of the removed entries, highest score first.
    pub removed_linear: Vec<usize>,
    /// `R(β)` for every entry of the input core, in its storage order.
    pub scores: Vec<f64>,
    /// True when the core had a single entry and nothing could be removed.
    pub skipped: bool,
}

/// `R(β)` for every stored core entry, in storage order.
pub fn partial_errors_with(exec: &Executor, tensor: &SparseTensor, model: &Model) -> Vec<f64> {
    let recon: Vec<f64> = exec.map_collect(tensor.nnz(), |alpha| {
        model.reconstruct_unchecked(tensor.index(alpha))
    });
    exec.map_collect(model.core.nnz(), |beta| {
        let mut s = 0.0;
        for (alpha, (idx, x)) in tensor.iter().enumerate() {
            let rows = model.row_offsets(idx);
            let t = model.term(&rows, beta);
            s += t * (2.0 * (recon[alpha] - x) - t);
        }
        s
    })
}

pub fn partial_errors(tensor: &SparseTensor, model: &Model) -> Vec<f64> {
    partial_errors_with(&Executor::sequential(), tensor, model)
}

/// `R(β)` for the core entry at 0-based coordinates `beta`.
pub fn partial_error(tensor: &SparseTensor, model: &Model, beta: &[usize]) -> Result<f64> {
    let pos = model
        .core
        .find(beta)
        .ok_or_else(|| TuckerError::InvalidArgument(format!("core has no entry at {beta:?}")))?;
    let mut s = 0.0;
    for (idx, x) in tensor.iter() {
        let rows = model.row_offsets(idx);
        let full = model.reconstruct_unchecked(idx);
        let t = model.term(&rows, pos);
        s += t * (2.0 * (full - x) - t);
    }
    Ok(s)
}

/// Storage positions ordered by score descending, ties by ascending
/// row-major linear index.
pub fn rank_by_score(model: &Model, scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| model.core.linear_index(a).cmp(&model.core.linear_index(b)))
    });
    order
}

/// Number of entries a truncation at rate `p` removes from a core of `nnz`.
pub fn removal_count(nnz: usize, p: f64) -> usize {
    ((p * nnz as f64).floor() as usize).min(nnz.saturating_sub(1))
}

/// Removes the `floor(p·|G|)` highest-scoring core entries (never the last one).
pub fn truncate_core_with(
    exec: &Executor,
    tensor: &SparseTensor,
    model: &Model,
    p: f64,
) -> Result<Truncation> {
    if !(p > 0.0 && p < 1.0) {
        return Err(TuckerError::InvalidArgument(format!(
            "truncation rate must lie in (0, 1), got {p}"
        )));
    }
    model.check_compatible(tensor)?;
    let nnz = model.core.nnz();
    if nnz == 1 {
        log::warn!("core has a single entry; truncation skipped");
        return Ok(Truncation {
            model: model.clone(),
            removed: 0,
            removed_linear: Vec::new(),
            scores: partial_errors_with(exec, tensor, model),
            skipped: true,
        });
    }
    let scores = partial_errors_with(exec, tensor, model);
    truncate_with_scores(model, scores, p)
}

/// Removes the `floor(p·|G|)` entries ranked highest by precomputed `scores`.
pub fn truncate_with_scores(model: &Model, scores: Vec<f64>, p: f64) -> Result<Truncation> {
    let nnz = model.core.nnz();
    if scores.len() != nnz {
        return Err(TuckerError::InvalidArgument(format!(
            "{} scores for {nnz} core entries",
            scores.len()
        )));
    }
    let k = removal_count(nnz, p);
    let ranked = rank_by_score(model, &scores);
    let mut keep = vec![true; nnz];
    for &beta in &ranked[..k] {
        keep[beta] = false;
    }
    let removed_linear = ranked[..k]
        .iter()
        .map(|&b| model.core.linear_index(b))
        .collect();
    let core = model.core.retain_mask(&keep)?;
    Ok(Truncation {
        model: Model::new(core, model.factors.clone())?,
        removed: k,
        removed_linear,
        scores,
        skipped: nnz == 1,
    })
}

pub fn truncate_core(tensor: &SparseTensor, model: &Model, p: f64) -> Result<Truncation> {
    truncate_core_with(&Executor::sequential(), tensor, model, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::reconstruction_error;
    use crate::synth::{planted_tensor, random_tensor};
    use crate::tensor::{init_model, CoreTensor, FactorMatrix};

    /// Unit factors on a 1x1 tensor with X = 0: each term t_β = G_β, the
    /// reconstruction is ΣG, and R(β) = G_β (2 ΣG − G_β).
    fn scored_model(values: [f64; 4]) -> (SparseTensor, Model) {
        let core = CoreTensor::dense(vec![2, 2], values.to_vec()).unwrap();
        let ones = FactorMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let t = SparseTensor::from_entries(vec![1, 1], vec![(vec![0, 0], 0.0)]).unwrap();
        (t, Model::new(core, vec![ones.clone(), ones]).unwrap())
    }

    #[test]
    fn highest_scores_are_removed() {
        let m = init_model(&[3, 3], &[2, 2], 1).unwrap();
        let tr = truncate_with_scores(&m, vec![5.0, -2.0, 3.0, 0.0], 0.5).unwrap();
        assert_eq!(tr.removed_linear, vec![0, 2]);
        let kept: Vec<f64> = tr.model.core.values().to_vec();
        assert_eq!(kept, vec![m.core.value(1), m.core.value(3)]);
    }

    #[test]
    fn top_half_by_score_is_removed() {
        let (t, m) = scored_model([2.0, -1.5, 1.0, 0.0]);
        let scores = partial_errors(&t, &m);
        // s = 1.5: [2·1, −1.5·4.5, 1·2, 0]
        assert_eq!(scores, vec![2.0, -6.75, 2.0, 0.0]);
        let tr = truncate_core(&t, &m, 0.5).unwrap();
        assert_eq!(tr.removed, 2);
        // tie between linear 0 and 2 broken by index, both removed
        assert_eq!(tr.removed_linear, vec![0, 2]);
        assert_eq!(tr.model.core.nnz(), 2);
    }

    #[test]
    fn floor_boundary_removes_nothing() {
        let (t, m) = scored_model([1.0, 2.0, 3.0, 4.0]);
        let tr = truncate_core(&t, &m, 0.2).unwrap();
        assert_eq!(tr.removed, 0);
        assert_eq!(tr.model.core, m.core);
    }

    #[test]
    fn single_entry_core_is_left_alone() {
        let core = CoreTensor::superdiagonal(2, 1).unwrap();
        let f = FactorMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let m = Model::new(core, vec![f.clone(), f]).unwrap();
        let t = random_tensor(&[2, 2], 3, 1).unwrap();
        let tr = truncate_core(&t, &m, 0.9).unwrap();
        assert!(tr.skipped);
        assert_eq!(tr.model.core.nnz(), 1);
    }

    #[test]
    fn single_entry_perfect_fit_scores_negative_norm() {
        let core = CoreTensor::from_entries(vec![2, 2], vec![(vec![1, 0], 0.7)]).unwrap();
        let mut m = init_model(&[4, 3], &[2, 2], 1).unwrap();
        m.core = core;
        let t = planted_tensor(&m, 6, 2).unwrap();
        let r = partial_error(&t, &m, &[1, 0]).unwrap();
        let norm2 = t.squared_norm();
        assert!((r + norm2).abs() <= 1e-12 * norm2);
    }

    #[test]
    fn zero_core_entry_scores_zero() {
        let mut m = init_model(&[4, 3, 3], &[2, 2, 2], 1).unwrap();
        m.core.values_mut()[3] = 0.0;
        let t = random_tensor(&[4, 3, 3], 10, 2).unwrap();
        let idx: Vec<usize> = m.core.index(3).iter().map(|&j| j as usize).collect();
        assert_eq!(partial_error(&t, &m, &idx).unwrap(), 0.0);
    }

    #[test]
    fn score_is_error_difference() {
        let t = random_tensor(&[5, 4, 3], 30, 9).unwrap();
        let m = init_model(&[5, 4, 3], &[2, 2, 2], 4).unwrap();
        let scores = partial_errors(&t, &m);
        let with = reconstruction_error(&t, &m).powi(2);
        for beta in 0..m.core.nnz() {
            let mut keep = vec![true; m.core.nnz()];
            keep[beta] = false;
            let without =
                Model::new(m.core.retain_mask(&keep).unwrap(), m.factors.clone()).unwrap();
            let diff = with - reconstruction_error(&t, &without).powi(2);
            assert!((scores[beta] - diff).abs() <= 1e-8 * diff.abs().max(1e-12));
        }
    }

    #[test]
    fn rejects_bad_rate_and_missing_entry() {
        let t = random_tensor(&[3, 3], 4, 1).unwrap();
        let m = init_model(&[3, 3], &[2, 2], 1).unwrap();
        assert!(truncate_core(&t, &m, 0.0).is_err());
        assert!(truncate_core(&t, &m, 1.0).is_err());
        assert!(partial_error(&t, &m, &[2, 0]).is_err());
    }

    #[test]
    fn removal_count_floors_and_keeps_one() {
        assert_eq!(removal_count(4, 0.5), 2);
        assert_eq!(removal_count(4, 0.2), 0);
        assert_eq!(removal_count(2, 0.99), 1);
        assert_eq!(removal_count(1, 0.99), 0);
    }
}
