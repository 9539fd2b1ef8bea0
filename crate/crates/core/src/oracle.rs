//! Brute-force reference implementations for tests.
//!
//! Nothing here calls into the solver, eval or truncation code paths: the
//! core is densified, every sum is an explicit loop, and linear systems are
//! solved by Gaussian elimination. Only the plain data accessors of the
//! model and tensor types are shared. Sizes are meant to stay small
//! (`Π J_n <= 64`, `|Ω| <= 10⁴`).

#![allow(clippy::needless_range_loop)]

use crate::tensor::{Model, SparseTensor};

/// Dense copy of a model: the full core array (row-major) and nested factor rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseModelView {
    pub ranks: Vec<usize>,
    pub core: Vec<f64>,
    pub factors: Vec<Vec<Vec<f64>>>,
}

impl DenseModelView {
    pub fn from_model(model: &Model) -> Self {
        let ranks = model.core.dims().to_vec();
        let total: usize = ranks.iter().product();
        let mut core = vec![0.0; total];
        for (idx, v) in model.core.iter() {
            let mut lin = 0;
            for (n, &j) in idx.iter().enumerate() {
                lin = lin * ranks[n] + j as usize;
            }
            core[lin] = v;
        }
        let factors = model
            .factors
            .iter()
            .map(|f| {
                (0..f.rows())
                    .map(|i| (0..f.cols()).map(|j| f.get(i, j)).collect())
                    .collect()
            })
            .collect();
        DenseModelView {
            ranks,
            core,
            factors,
        }
    }

    /// Every core multi-index in row-major order.
    pub fn core_indices(&self) -> Vec<Vec<usize>> {
        let total: usize = self.ranks.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; self.ranks.len()];
        for _ in 0..total {
            out.push(idx.clone());
            for n in (0..idx.len()).rev() {
                idx[n] += 1;
                if idx[n] < self.ranks[n] {
                    break;
                }
                idx[n] = 0;
            }
        }
        out
    }

    /// Σ over every dense core position, optionally skipping one linear index.
    pub fn reconstruct(&self, index: &[usize], skip: Option<usize>) -> f64 {
        let order = self.ranks.len();
        let mut j = vec![0usize; order];
        let mut total = 0.0;
        for lin in 0..self.core.len() {
            if Some(lin) != skip {
                let mut p = self.core[lin];
                for n in 0..order {
                    p *= self.factors[n][index[n]][j[n]];
                }
                total += p;
            }
            for n in (0..order).rev() {
                j[n] += 1;
                if j[n] < self.ranks[n] {
                    break;
                }
                j[n] = 0;
            }
        }
        total
    }
}

fn entry_index(tensor: &SparseTensor, alpha: usize) -> Vec<usize> {
    tensor.index(alpha).iter().map(|&i| i as usize).collect()
}

/// `Σ_Ω (X − x̂)² + λ Σ_n ‖A^(n)‖²` over the densified model.
pub fn naive_loss(tensor: &SparseTensor, model: &Model, lambda: f64) -> f64 {
    let view = DenseModelView::from_model(model);
    naive_loss_view(tensor, &view, lambda)
}

pub fn naive_loss_view(tensor: &SparseTensor, view: &DenseModelView, lambda: f64) -> f64 {
    let mut data = 0.0;
    for alpha in 0..tensor.nnz() {
        let idx = entry_index(tensor, alpha);
        let r = tensor.value(alpha) - view.reconstruct(&idx, None);
        data += r * r;
    }
    let mut reg = 0.0;
    for f in &view.factors {
        for row in f {
            for v in row {
                reg += v * v;
            }
        }
    }
    data + lambda * reg
}

/// Central-difference gradient of [`naive_loss`] with respect to row `i`
/// of factor `n`.
pub fn numeric_gradient(
    tensor: &SparseTensor,
    model: &Model,
    lambda: f64,
    n: usize,
    i: usize,
    h: f64,
) -> Vec<f64> {
    let base = DenseModelView::from_model(model);
    let cols = base.factors[n][i].len();
    (0..cols)
        .map(|j| {
            let mut plus = base.clone();
            plus.factors[n][i][j] += h;
            let mut minus = base.clone();
            minus.factors[n][i][j] -= h;
            (naive_loss_view(tensor, &plus, lambda) - naive_loss_view(tensor, &minus, lambda))
                / (2.0 * h)
        })
        .collect()
}

/// Squared error with β minus squared error without β, from two full
/// reconstructions of every observed entry. `beta` is a 0-based core index.
pub fn naive_partial_error(tensor: &SparseTensor, model: &Model, beta: &[usize]) -> f64 {
    let view = DenseModelView::from_model(model);
    let mut lin = 0;
    for (n, &j) in beta.iter().enumerate() {
        lin = lin * view.ranks[n] + j;
    }
    let mut total = 0.0;
    for alpha in 0..tensor.nnz() {
        let idx = entry_index(tensor, alpha);
        let x = tensor.value(alpha);
        let with = x - view.reconstruct(&idx, None);
        let without = x - view.reconstruct(&idx, Some(lin));
        total += with * with - without * without;
    }
    total
}

/// Dense δ for entry `alpha` and mode `n`, looping over the full core.
pub fn naive_delta(tensor: &SparseTensor, model: &Model, alpha: usize, n: usize) -> Vec<f64> {
    let view = DenseModelView::from_model(model);
    let idx = entry_index(tensor, alpha);
    let mut out = vec![0.0; view.ranks[n]];
    for (lin, j) in view.core_indices().iter().enumerate() {
        let mut p = view.core[lin];
        for k in 0..j.len() {
            if k != n {
                p *= view.factors[k][idx[k]][j[k]];
            }
        }
        out[j[n]] += p;
    }
    out
}

/// Solves `M x = r` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut m: Vec<Vec<f64>>, mut r: Vec<f64>) -> Vec<f64> {
    let n = r.len();
    for col in 0..n {
        let mut piv = col;
        for row in col + 1..n {
            if m[row][col].abs() > m[piv][col].abs() {
                piv = row;
            }
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = r[row];
        for k in row + 1..n {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    x
}

/// Ridge solution `(MᵀM + λI)^{-1} Mᵀ x` for a `k x J` design with `cols = J`.
pub fn ridge_reference(design: &[Vec<f64>], targets: &[f64], cols: usize, lambda: f64) -> Vec<f64> {
    assert_eq!(design.len(), targets.len());
    if design.is_empty() {
        return vec![0.0; cols];
    }
    let mut gram = vec![vec![0.0; cols]; cols];
    let mut rhs = vec![0.0; cols];
    for (row, &x) in design.iter().zip(targets) {
        for a in 0..cols {
            rhs[a] += row[a] * x;
            for b in 0..cols {
                gram[a][b] += row[a] * row[b];
            }
        }
    }
    for (d, g) in gram.iter_mut().enumerate() {
        g[d] += lambda;
    }
    gauss_solve(gram, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_tensor;
    use crate::tensor::init_model;

    #[test]
    fn zero_factor_loss_is_data_norm() {
        let t = random_tensor(&[4, 4, 4], 20, 1).unwrap();
        let mut m = init_model(&[4, 4, 4], &[2, 2, 2], 1).unwrap();
        for f in &mut m.factors {
            f.as_mut_slice().fill(0.0);
        }
        let norm2 = t.squared_norm();
        assert_eq!(naive_loss(&t, &m, 0.0), norm2);
        assert_eq!(naive_loss(&t, &m, 1.0), norm2);
    }

    #[test]
    fn ridge_identity_and_empty() {
        let m = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(ridge_reference(&m, &[1.0, 2.0], 2, 1.0), vec![0.5, 1.0]);
        assert_eq!(ridge_reference(&[], &[], 3, 0.1), vec![0.0; 3]);
    }

    #[test]
    fn zero_core_entry_has_zero_partial_error() {
        let t = random_tensor(&[4, 3], 6, 2).unwrap();
        let mut m = init_model(&[4, 3], &[2, 2], 2).unwrap();
        m.core.values_mut()[2] = 0.0;
        assert_eq!(naive_partial_error(&t, &m, &[1, 0]), 0.0);
    }
}
