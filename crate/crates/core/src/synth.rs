//! Seeded synthetic tensors for tests, benchmarks and scaling runs.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TuckerError};
use crate::tensor::{Model, SparseTensor};

/// `count` distinct coordinates drawn uniformly from `dims`, flattened.
pub fn distinct_coords(dims: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<u32>> {
    let total = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .unwrap_or(usize::MAX);
    if count > total {
        return Err(TuckerError::InvalidArgument(format!(
            "cannot place {count} distinct entries in {total} cells"
        )));
    }
    let order = dims.len();
    let mut coords = Vec::with_capacity(count * order);
    if count.saturating_mul(2) > total {
        // Dense request: shuffle all cells instead of rejection sampling.
        let mut cells: Vec<usize> = (0..total).collect();
        cells.shuffle(rng);
        for &lin in &cells[..count] {
            let start = coords.len();
            coords.resize(start + order, 0);
            let mut rem = lin;
            for n in (0..order).rev() {
                coords[start + n] = (rem % dims[n]) as u32;
                rem /= dims[n];
            }
        }
        return Ok(coords);
    }
    let mut seen: HashSet<Vec<u32>> = HashSet::with_capacity(count);
    let mut idx = vec![0u32; order];
    while seen.len() < count {
        for (i, &d) in idx.iter_mut().zip(dims) {
            *i = rng.gen_range(0..d as u32);
        }
        if seen.insert(idx.clone()) {
            coords.extend_from_slice(&idx);
        }
    }
    Ok(coords)
}

/// Tensor with `nnz` distinct uniformly placed entries and values in `[0, 1)`.
pub fn random_tensor(dims: &[usize], nnz: usize, seed: u64) -> Result<SparseTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = distinct_coords(dims, nnz, &mut rng)?;
    let values = (0..nnz).map(|_| rng.gen::<f64>()).collect();
    SparseTensor::from_flat(dims.to_vec(), coords, values)
}

/// `nnz` distinct entries of the exact reconstruction of `model`.
pub fn planted_tensor(model: &Model, nnz: usize, seed: u64) -> Result<SparseTensor> {
    let (train, _) = planted_split(model, nnz, 0, seed)?;
    Ok(train)
}

/// Disjoint train and test samples of the exact reconstruction of `model`.
/// An empty test side is returned as `None`.
pub fn planted_split(
    model: &Model,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(SparseTensor, Option<SparseTensor>)> {
    let dims = model.dims();
    let order = dims.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = distinct_coords(&dims, n_train + n_test, &mut rng)?;
    let values: Vec<f64> = coords
        .chunks_exact(order)
        .map(|idx| model.reconstruct_unchecked(idx))
        .collect();
    let (train_c, test_c) = coords.split_at(n_train * order);
    let train =
        SparseTensor::from_flat(dims.clone(), train_c.to_vec(), values[..n_train].to_vec())?;
    let test = if n_test > 0 {
        Some(SparseTensor::from_flat(
            dims,
            test_c.to_vec(),
            values[n_train..].to_vec(),
        )?)
    } else {
        None
    };
    Ok((train, test))
}
