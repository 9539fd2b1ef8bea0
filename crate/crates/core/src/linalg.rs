//! Small dense kernels: the regularized row solve, Householder thin QR and
//! the n-mode product of a coordinate-list core with a small matrix.

use std::collections::BTreeMap;

use crate::error::{Result, TuckerError};
use crate::tensor::{linearize, CoreTensor, FactorMatrix};

/// Dense row-major matrix used for the `J x J` systems and QR factors.
pub type SmallMatrix = FactorMatrix;

/// Entries of a mode product with magnitude at or below this are dropped.
pub const DROP_THRESHOLD: f64 = 1e-15;

/// Solves `x (B + λI) = c` in place: `b` holds the `j x j` matrix on entry
/// and is overwritten by its Cholesky factor, `rhs` holds `c` and receives `x`.
///
/// On failure returns the pivot column whose value was not strictly positive
/// and finite.
pub(crate) fn solve_regularized_in_place(
    b: &mut [f64],
    rhs: &mut [f64],
    j: usize,
    lambda: f64,
) -> std::result::Result<(), usize> {
    debug_assert_eq!(b.len(), j * j);
    debug_assert_eq!(rhs.len(), j);
    for d in 0..j {
        b[d * j + d] += lambda;
    }
    // Lower Cholesky factor stored in the lower triangle.
    for col in 0..j {
        let mut diag = b[col * j + col];
        for k in 0..col {
            diag -= b[col * j + k] * b[col * j + k];
        }
        if !(diag > 0.0 && diag.is_finite()) {
            return Err(col);
        }
        let l = diag.sqrt();
        b[col * j + col] = l;
        for row in col + 1..j {
            let mut s = b[row * j + col];
            for k in 0..col {
                s -= b[row * j + k] * b[col * j + k];
            }
            b[row * j + col] = s / l;
        }
    }
    for row in 0..j {
        let mut s = rhs[row];
        for k in 0..row {
            s -= b[row * j + k] * rhs[k];
        }
        rhs[row] = s / b[row * j + row];
    }
    for row in (0..j).rev() {
        let mut s = rhs[row];
        for k in row + 1..j {
            s -= b[k * j + row] * rhs[k];
        }
        rhs[row] = s / b[row * j + row];
    }
    Ok(())
}

/// Returns `c (B + λI)^{-1}` via a Cholesky factorization of `B + λI`.
pub fn solve_row_system(b: &SmallMatrix, c: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let j = b.rows();
    if b.cols() != j || c.len() != j {
        return Err(TuckerError::InvalidArgument(format!(
            "row system shapes disagree: B is {}x{}, c has {}",
            b.rows(),
            b.cols(),
            c.len()
        )));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(TuckerError::InvalidArgument(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let mut work = b.as_slice().to_vec();
    let mut x = c.to_vec();
    solve_regularized_in_place(&mut work, &mut x, j, lambda).map_err(|col| {
        TuckerError::NumericFailure(format!(
            "B + lambda*I is not positive definite (pivot {})",
            col + 1
        ))
    })?;
    Ok(x)
}

/// Householder thin QR of an `I x J` matrix with `I >= J`.
///
/// `R` has a non-negative diagonal, which makes the factorization unique
/// for full-rank input.
pub fn thin_qr(a: &FactorMatrix) -> Result<(FactorMatrix, SmallMatrix)> {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        return Err(TuckerError::InvalidArgument(format!(
            "thin QR needs rows >= cols, got {m}x{n}"
        )));
    }
    let norm_a = a.squared_norm().sqrt();
    // Column-major working copy: reflectors operate on columns.
    let mut w = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            w[j * m + i] = a.get(i, j);
        }
    }
    let mut betas = vec![0.0; n];
    let mut diag = vec![0.0; n];
    for k in 0..n {
        let (head, tail) = w.split_at_mut((k + 1) * m);
        let col = &mut head[k * m + k..];
        let sigma: f64 = col[1..].iter().map(|v| v * v).sum();
        let x0 = col[0];
        let norm = (x0 * x0 + sigma).sqrt();
        if norm <= 1e-12 * norm_a || norm == 0.0 {
            return Err(TuckerError::NumericFailure(format!(
                "matrix is rank deficient at column {}",
                k + 1
            )));
        }
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        // v = x - alpha e1, stored over the column; beta = 2 / vᵀv.
        col[0] = x0 - alpha;
        let vtv = col[0] * col[0] + sigma;
        let beta = 2.0 / vtv;
        betas[k] = beta;
        diag[k] = alpha;
        for jj in 0..n - k - 1 {
            let other = &mut tail[jj * m + k..(jj + 1) * m];
            let dot: f64 = col.iter().zip(other.iter()).map(|(v, o)| v * o).sum();
            let s = beta * dot;
            for (o, v) in other.iter_mut().zip(col.iter()) {
                *o -= s * v;
            }
        }
    }
    let mut r = SmallMatrix::zeros(n, n);
    for i in 0..n {
        r.set(i, i, diag[i]);
        for j in i + 1..n {
            r.set(i, j, w[j * m + i]);
        }
    }
    // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of the identity.
    let mut q = vec![0.0; m * n];
    for j in 0..n {
        q[j * m + j] = 1.0;
    }
    for k in (0..n).rev() {
        let v = &w[k * m + k..(k + 1) * m];
        let beta = betas[k];
        for j in 0..n {
            let qc = &mut q[j * m + k..(j + 1) * m];
            let dot: f64 = v.iter().zip(qc.iter()).map(|(a, b)| a * b).sum();
            let s = beta * dot;
            for (qe, ve) in qc.iter_mut().zip(v) {
                *qe -= s * ve;
            }
        }
    }
    let mut qm = FactorMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            qm.set(i, j, q[j * m + i]);
        }
    }
    for k in 0..n {
        if r.get(k, k) < 0.0 {
            for j in k..n {
                r.set(k, j, -r.get(k, j));
            }
            for i in 0..m {
                qm.set(i, k, -qm.get(i, k));
            }
        }
    }
    Ok((qm, r))
}

/// Largest absolute entry of `QᵀQ − I`.
pub fn orthonormality_deviation(q: &FactorMatrix) -> f64 {
    let n = q.cols();
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in a..n {
            let dot: f64 = (0..q.rows()).map(|i| q.get(i, a) * q.get(i, b)).sum();
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

/// `C = A B` for small dense matrices.
pub fn matmul(a: &SmallMatrix, b: &SmallMatrix) -> SmallMatrix {
    assert_eq!(a.cols(), b.rows());
    let mut c = SmallMatrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for k in 0..a.cols() {
            let aik = a.get(i, k);
            for j in 0..b.cols() {
                c.set(i, j, c.get(i, j) + aik * b.get(k, j));
            }
        }
    }
    c
}

/// n-mode product `G ×_n M`: the value at `(.., k, ..)` is
/// `Σ_{j_n} G(.., j_n, ..) · m_{k j_n}`.
///
/// The result is stored in row-major order of its indices; entries whose
/// magnitude is at most [`DROP_THRESHOLD`] are dropped.
pub fn core_mode_product(core: &CoreTensor, m: &SmallMatrix, n: usize) -> Result<CoreTensor> {
    if n >= core.order() {
        return Err(TuckerError::InvalidArgument(format!(
            "mode {} out of range for core of order {}",
            n + 1,
            core.order()
        )));
    }
    if m.cols() != core.dims()[n] {
        return Err(TuckerError::InvalidArgument(format!(
            "matrix has {} columns, core mode {} has rank {}",
            m.cols(),
            n + 1,
            core.dims()[n]
        )));
    }
    let mut out_dims = core.dims().to_vec();
    out_dims[n] = m.rows();
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    let mut idx = vec![0u32; core.order()];
    for (cidx, g) in core.iter() {
        idx.copy_from_slice(cidx);
        let jn = cidx[n] as usize;
        for k in 0..m.rows() {
            let w = m.get(k, jn);
            if w == 0.0 {
                continue;
            }
            idx[n] = k as u32;
            *acc.entry(linearize(&out_dims, &idx)).or_insert(0.0) += g * w;
        }
    }
    let order = core.order();
    let mut coords = Vec::with_capacity(acc.len() * order);
    let mut values = Vec::with_capacity(acc.len());
    for (lin, v) in acc {
        if v.abs() <= DROP_THRESHOLD {
            continue;
        }
        let mut rem = lin;
        let start = coords.len();
        coords.resize(start + order, 0);
        for d in (0..order).rev() {
            coords[start + d] = (rem % out_dims[d]) as u32;
            rem /= out_dims[d];
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(TuckerError::NumericFailure(format!(
            "mode-{} product annihilated every core entry",
            n + 1
        )));
    }
    CoreTensor::from_parts(out_dims, coords, values)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::tensor::init_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> FactorMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen::<f64>() - 0.5).collect();
        FactorMatrix::from_vec(rows, cols, data).unwrap()
    }

    /// Gaussian elimination with partial pivoting, solving M x = r.
    fn gauss_solve(mut m: Vec<Vec<f64>>, mut r: Vec<f64>) -> Vec<f64> {
        let n = r.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
                .unwrap();
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
            let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
            x[row] = (r[row] - s) / m[row][row];
        }
        x
    }

    #[test]
    fn zero_system_gives_zero_row() {
        let b = SmallMatrix::zeros(2, 2);
        assert_eq!(
            solve_row_system(&b, &[0.0, 0.0], 0.01).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn identity_system() {
        let b = SmallMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let x = solve_row_system(&b, &[1.0, 2.0], 1.0).unwrap();
        assert!(
            (x[0] - 0.5).abs() <= 1e-15 && (x[1] - 1.0).abs() <= 1e-15,
            "{x:?}"
        );
    }

    #[test]
    fn near_singular_system_matches_gaussian_elimination() {
        let b = SmallMatrix::from_rows(&[vec![16.0, 20.0], vec![20.0, 25.0]]).unwrap();
        let c = [92.0, 115.0];
        let x = solve_row_system(&b, &c, 0.01).unwrap();
        let reference = gauss_solve(vec![vec![16.01, 20.0], vec![20.0, 25.01]], c.to_vec());
        for (a, r) in x.iter().zip(&reference) {
            assert!((a - r).abs() <= 1e-10 * (1.0 + r.abs()), "{a} vs {r}");
        }
        // residual of x (B + λI) = c
        let res0 = x[0] * 16.01 + x[1] * 20.0 - 92.0;
        let res1 = x[0] * 20.0 + x[1] * 25.01 - 115.0;
        let cnorm = (92.0f64.powi(2) + 115.0f64.powi(2)).sqrt();
        assert!((res0 * res0 + res1 * res1).sqrt() <= 1e-10 * (1.0 + cnorm));
    }

    #[test]
    fn singular_without_regularization_fails() {
        let b = SmallMatrix::zeros(2, 2);
        assert!(matches!(
            solve_row_system(&b, &[1.0, 0.0], 0.0),
            Err(TuckerError::NumericFailure(_))
        ));
    }

    #[test]
    fn qr_of_orthogonal_columns() {
        let a = FactorMatrix::from_rows(&[vec![3.0, 0.0], vec![4.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (q, r) = thin_qr(&a).unwrap();
        let q_expected =
            FactorMatrix::from_rows(&[vec![0.6, 0.0], vec![0.8, 0.0], vec![0.0, 1.0]]).unwrap();
        let r_expected = SmallMatrix::from_rows(&[vec![5.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(q.max_abs_diff(&q_expected) <= 1e-12);
        assert!(r.max_abs_diff(&r_expected) <= 1e-12);
    }

    #[test]
    fn qr_of_orthonormal_matrix_is_identity_r() {
        let (q0, _) = thin_qr(&random_matrix(10, 3, 5)).unwrap();
        let (q, r) = thin_qr(&q0).unwrap();
        assert!(q.max_abs_diff(&q0) <= 1e-10);
        let eye = SmallMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!(r.max_abs_diff(&eye) <= 1e-10);
    }

    #[test]
    fn qr_random_tall_matrix() {
        let a = random_matrix(50, 5, 9);
        let (q, r) = thin_qr(&a).unwrap();
        assert!(orthonormality_deviation(&q) <= 1e-10);
        let qr = matmul(&q, &r);
        let amax = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(qr.max_abs_diff(&a) <= 1e-10 * amax);
        for i in 0..5 {
            assert!(r.get(i, i) >= 0.0);
            for j in 0..i {
                assert_eq!(r.get(i, j), 0.0);
            }
        }
        let (q2, r2) = thin_qr(&a).unwrap();
        assert_eq!((q, r), (q2, r2));
    }

    #[test]
    fn qr_guards() {
        assert!(matches!(
            thin_qr(&random_matrix(2, 3, 1)),
            Err(TuckerError::InvalidArgument(_))
        ));
        let deficient =
            FactorMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        match thin_qr(&deficient) {
            Err(TuckerError::NumericFailure(m)) => assert!(m.contains("column 2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mode_product_diagonal_scaling() {
        let g = CoreTensor::superdiagonal(2, 2).unwrap();
        let m = SmallMatrix::from_rows(&[vec![5.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let out = core_mode_product(&g, &m, 0).unwrap();
        let entries: Vec<(Vec<u32>, f64)> = out.iter().map(|(i, v)| (i.to_vec(), v)).collect();
        assert_eq!(entries, vec![(vec![0, 0], 5.0), (vec![1, 1], 1.0)]);
    }

    #[test]
    fn mode_product_with_identity_is_noop() {
        let g = init_model(&[2, 2, 2], &[2, 3, 2], 4).unwrap().core;
        let eye = SmallMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(core_mode_product(&g, &eye, 1).unwrap(), g);
    }

    #[test]
    fn mode_product_matches_dense_triple_loop() {
        let dims = [2usize, 3, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut entries: Vec<(Vec<usize>, f64)> = Vec::new();
        for lin in 0..12 {
            if rng.gen::<f64>() < 0.6 {
                entries.push((vec![lin / 6, (lin / 2) % 3, lin % 2], rng.gen::<f64>()));
            }
        }
        let g = CoreTensor::from_entries(dims.to_vec(), entries.clone()).unwrap();
        let m = random_matrix(3, 3, 22);
        let out = core_mode_product(&g, &m, 1).unwrap();

        let mut dense = [[[0.0f64; 2]; 3]; 2];
        for (idx, v) in &entries {
            dense[idx[0]][idx[1]][idx[2]] = *v;
        }
        let mut expected = [[[0.0f64; 2]; 3]; 2];
        for a in 0..2 {
            for k in 0..3 {
                for c in 0..2 {
                    for j in 0..3 {
                        expected[a][k][c] += dense[a][j][c] * m.get(k, j);
                    }
                }
            }
        }
        let mut got = [[[0.0f64; 2]; 3]; 2];
        for (idx, v) in out.iter() {
            got[idx[0] as usize][idx[1] as usize][idx[2] as usize] = v;
        }
        for a in 0..2 {
            for k in 0..3 {
                for c in 0..2 {
                    assert!((got[a][k][c] - expected[a][k][c]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn mode_product_composes() {
        let g = init_model(&[2, 2, 2], &[3, 2, 3], 8).unwrap().core;
        let m1 = random_matrix(3, 3, 1);
        let m2 = random_matrix(3, 3, 2);
        let seq = core_mode_product(&core_mode_product(&g, &m1, 2).unwrap(), &m2, 2).unwrap();
        let once = core_mode_product(&g, &matmul(&m2, &m1), 2).unwrap();
        let dense = |c: &CoreTensor| {
            let mut d = vec![0.0; 18];
            for b in 0..c.nnz() {
                d[c.linear_index(b)] = c.value(b);
            }
            d
        };
        for (a, b) in dense(&seq).iter().zip(dense(&once)) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn mode_product_dimension_mismatch() {
        let g = CoreTensor::superdiagonal(2, 2).unwrap();
        assert!(core_mode_product(&g, &random_matrix(3, 3, 0), 0).is_err());
    }
}
