//! Sparse observed tensors, coordinate-list core tensors, factor matrices and
//! the model tuple tying them together.
//!
//! All indices in this module are 0-based. The 1-based convention used by
//! the text formats is converted at the I/O boundary (see [`crate::io`]).

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallvec::SmallVec;

use crate::error::{Result, TuckerError};

/// Per-entry scratch of row offsets; inline for tensors of order up to 8.
pub(crate) type Offsets = SmallVec<[usize; 8]>;

/// Observed entries of an order-N tensor in coordinate format.
///
/// Coordinates are stored flat (`nnz * order` values). Entry positions
/// (`alpha`) are stable and follow construction order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    dims: Vec<usize>,
    coords: Vec<u32>,
    values: Vec<f64>,
}

fn check_dims(dims: &[usize], what: &str) -> Result<()> {
    if dims.len() < 2 {
        return Err(TuckerError::InvalidArgument(format!(
            "{what} must have at least 2 modes, got {}",
            dims.len()
        )));
    }
    if let Some(n) = dims.iter().position(|&d| d == 0) {
        return Err(TuckerError::InvalidArgument(format!(
            "{what}: mode {} has size 0",
            n + 1
        )));
    }
    if dims.iter().any(|&d| d > u32::MAX as usize) {
        return Err(TuckerError::InvalidArgument(format!(
            "{what}: mode size exceeds {}",
            u32::MAX
        )));
    }
    Ok(())
}

/// Returns the positions of the first pair of entries sharing coordinates.
pub fn find_duplicate(order: usize, coords: &[u32]) -> Option<(usize, usize)> {
    let mut seen: HashMap<&[u32], usize> = HashMap::with_capacity(coords.len() / order.max(1));
    for (pos, idx) in coords.chunks_exact(order).enumerate() {
        if let Some(&first) = seen.get(idx) {
            return Some((first, pos));
        }
        seen.insert(idx, pos);
    }
    None
}

impl SparseTensor {
    /// Builds a tensor from flat 0-based coordinates (`values.len() * dims.len()`).
    pub fn from_flat(dims: Vec<usize>, coords: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        check_dims(&dims, "tensor")?;
        let order = dims.len();
        if values.is_empty() {
            return Err(TuckerError::Validation(
                "tensor must have at least one observed entry".into(),
            ));
        }
        if coords.len() != values.len() * order {
            return Err(TuckerError::InvalidArgument(format!(
                "coordinate buffer holds {} indices, expected {}",
                coords.len(),
                values.len() * order
            )));
        }
        for (pos, idx) in coords.chunks_exact(order).enumerate() {
            for (n, (&i, &d)) in idx.iter().zip(&dims).enumerate() {
                if i as usize >= d {
                    return Err(TuckerError::InvalidArgument(format!(
                        "entry {pos}: index {} out of range for mode {} of size {d}",
                        i as usize + 1,
                        n + 1
                    )));
                }
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(TuckerError::Validation(format!(
                "entry {pos} has non-finite value"
            )));
        }
        if let Some((a, b)) = find_duplicate(order, &coords) {
            return Err(TuckerError::Validation(format!(
                "entries {a} and {b} share the same coordinates"
            )));
        }
        Ok(SparseTensor {
            dims,
            coords,
            values,
        })
    }

    /// Builds a tensor from `(index, value)` pairs with 0-based indices.
    pub fn from_entries<I>(dims: Vec<usize>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<usize>, f64)>,
    {
        let order = dims.len();
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for (pos, (idx, v)) in entries.into_iter().enumerate() {
            if idx.len() != order {
                return Err(TuckerError::InvalidArgument(format!(
                    "entry {pos} has {} indices, tensor order is {order}",
                    idx.len()
                )));
            }
            for (n, &i) in idx.iter().enumerate() {
                if i >= dims[n] {
                    return Err(TuckerError::InvalidArgument(format!(
                        "entry {pos}: index {} out of range for mode {} of size {}",
                        i + 1,
                        n + 1,
                        dims[n]
                    )));
                }
                coords.push(i as u32);
            }
            values.push(v);
        }
        Self::from_flat(dims, coords, values)
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of observed entries, |Ω|.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    #[allow(clippy::should_implement_trait)]
    pub fn index(&self, alpha: usize) -> &[u32] {
        let n = self.dims.len();
        &self.coords[alpha * n..(alpha + 1) * n]
    }

    #[inline]
    pub fn value(&self, alpha: usize) -> f64 {
        self.values[alpha]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn coords(&self) -> &[u32] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u32], f64)> + '_ {
        self.coords
            .chunks_exact(self.dims.len())
            .zip(self.values.iter().copied())
    }

    /// Sum of squared observed values.
    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Same coordinates with replaced values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(TuckerError::InvalidArgument(format!(
                "expected {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TuckerError::Validation("non-finite value".into()));
        }
        Ok(SparseTensor {
            dims: self.dims.clone(),
            coords: self.coords.clone(),
            values,
        })
    }

    /// Subset of entries at the given positions, keeping `dims`.
    pub fn select(&self, positions: &[usize]) -> Result<Self> {
        let n = self.order();
        let mut coords = Vec::with_capacity(positions.len() * n);
        let mut values = Vec::with_capacity(positions.len());
        for &p in positions {
            coords.extend_from_slice(self.index(p));
            values.push(self.values[p]);
        }
        Self::from_flat(self.dims.clone(), coords, values)
    }
}

/// For each mode n and row i_n, the positions of the entries whose nth
/// coordinate equals i_n, in input order. Stored CSR style per mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeSliceIndex {
    offsets: Vec<Vec<usize>>,
    positions: Vec<Vec<u32>>,
}

impl ModeSliceIndex {
    pub fn build(tensor: &SparseTensor) -> Self {
        let order = tensor.order();
        let nnz = tensor.nnz();
        let mut offsets = Vec::with_capacity(order);
        let mut positions = Vec::with_capacity(order);
        for n in 0..order {
            let rows = tensor.dims()[n];
            let mut off = vec![0usize; rows + 1];
            for idx in tensor.coords().chunks_exact(order) {
                off[idx[n] as usize + 1] += 1;
            }
            for i in 0..rows {
                off[i + 1] += off[i];
            }
            let mut cursor = off.clone();
            let mut pos = vec![0u32; nnz];
            for (alpha, idx) in tensor.coords().chunks_exact(order).enumerate() {
                let row = idx[n] as usize;
                pos[cursor[row]] = alpha as u32;
                cursor[row] += 1;
            }
            offsets.push(off);
            positions.push(pos);
        }
        ModeSliceIndex { offsets, positions }
    }

    pub fn order(&self) -> usize {
        self.offsets.len()
    }

    pub fn rows(&self, n: usize) -> usize {
        self.offsets[n].len() - 1
    }

    /// Entry positions in Ω^(n)_{i}.
    #[inline]
    pub fn slice(&self, n: usize, i: usize) -> &[u32] {
        let off = &self.offsets[n];
        &self.positions[n][off[i]..off[i + 1]]
    }
}

/// Convenience wrapper matching the operation name used in docs and tests.
pub fn build_mode_slices(tensor: &SparseTensor) -> ModeSliceIndex {
    ModeSliceIndex::build(tensor)
}

/// Dense row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FactorMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(TuckerError::InvalidArgument(
                "factor matrix needs at least one column".into(),
            ));
        }
        if data.len() != rows * cols {
            return Err(TuckerError::InvalidArgument(format!(
                "factor data has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TuckerError::Validation(
                "factor matrix has non-finite values".into(),
            ));
        }
        Ok(FactorMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TuckerError::InvalidArgument("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Squared Frobenius norm.
    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &FactorMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Core tensor G in coordinate format over dims `J_1..J_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreTensor {
    dims: Vec<usize>,
    coords: Vec<u32>,
    values: Vec<f64>,
}

impl CoreTensor {
    /// Builds a core from `(index, value)` pairs with 0-based indices.
    pub fn from_entries<I>(dims: Vec<usize>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<usize>, f64)>,
    {
        check_dims(&dims, "core")?;
        let order = dims.len();
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for (pos, (idx, v)) in entries.into_iter().enumerate() {
            if idx.len() != order {
                return Err(TuckerError::InvalidArgument(format!(
                    "core entry {pos} has {} indices, core order is {order}",
                    idx.len()
                )));
            }
            for (n, &j) in idx.iter().enumerate() {
                if j >= dims[n] {
                    return Err(TuckerError::InvalidArgument(format!(
                        "core entry {pos}: index {} out of range for mode {} of rank {}",
                        j + 1,
                        n + 1,
                        dims[n]
                    )));
                }
                coords.push(j as u32);
            }
            if !v.is_finite() {
                return Err(TuckerError::Validation(format!(
                    "core entry {pos} has non-finite value"
                )));
            }
            values.push(v);
        }
        Self::from_parts(dims, coords, values)
    }

    pub(crate) fn from_parts(dims: Vec<usize>, coords: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        let order = dims.len();
        if values.is_empty() {
            return Err(TuckerError::Validation(
                "core tensor must keep at least one entry".into(),
            ));
        }
        if let Some((a, b)) = find_duplicate(order, &coords) {
            return Err(TuckerError::Validation(format!(
                "core entries {a} and {b} share the same coordinates"
            )));
        }
        Ok(CoreTensor {
            dims,
            coords,
            values,
        })
    }

    /// Every position of `dims` in row-major order (last mode fastest).
    pub fn dense(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_dims(&dims, "core")?;
        let total: usize = dims.iter().product();
        if values.len() != total {
            return Err(TuckerError::InvalidArgument(format!(
                "dense core needs {total} values, got {}",
                values.len()
            )));
        }
        let order = dims.len();
        let mut coords = Vec::with_capacity(total * order);
        let mut idx = vec![0u32; order];
        for _ in 0..total {
            coords.extend_from_slice(&idx);
            for n in (0..order).rev() {
                idx[n] += 1;
                if (idx[n] as usize) < dims[n] {
                    break;
                }
                idx[n] = 0;
            }
        }
        Self::from_parts(dims, coords, values)
    }

    /// Core with ones on the superdiagonal `(j, j, ..., j)`.
    pub fn superdiagonal(order: usize, rank: usize) -> Result<Self> {
        let dims = vec![rank; order];
        Self::from_entries(dims, (0..rank).map(|j| (vec![j; order], 1.0)))
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of stored entries, |G|.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    #[allow(clippy::should_implement_trait)]
    pub fn index(&self, beta: usize) -> &[u32] {
        let n = self.dims.len();
        &self.coords[beta * n..(beta + 1) * n]
    }

    #[inline]
    pub fn value(&self, beta: usize) -> f64 {
        self.values[beta]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn coords(&self) -> &[u32] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u32], f64)> + '_ {
        self.coords
            .chunks_exact(self.dims.len())
            .zip(self.values.iter().copied())
    }

    /// Row-major linear position of entry `beta` (mode 1 slowest).
    pub fn linear_index(&self, beta: usize) -> usize {
        linearize(&self.dims, self.index(beta))
    }

    /// Position of the entry stored at `index`, if present.
    pub fn find(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.order() {
            return None;
        }
        self.coords
            .chunks_exact(self.order())
            .position(|c| c.iter().zip(index).all(|(&a, &b)| a as usize == b))
    }

    /// Keeps the entries for which `keep[beta]` is true.
    pub fn retain_mask(&self, keep: &[bool]) -> Result<Self> {
        assert_eq!(keep.len(), self.nnz());
        let order = self.order();
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for (beta, &k) in keep.iter().enumerate() {
            if k {
                coords.extend_from_slice(self.index(beta));
                values.push(self.values[beta]);
            }
        }
        debug_assert_eq!(coords.len(), values.len() * order);
        Self::from_parts(self.dims.clone(), coords, values)
    }
}

pub(crate) fn linearize(dims: &[usize], idx: &[u32]) -> usize {
    idx.iter()
        .zip(dims)
        .fold(0usize, |acc, (&j, &d)| acc * d + j as usize)
}

/// A Tucker model: core tensor plus one factor matrix per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub core: CoreTensor,
    pub factors: Vec<FactorMatrix>,
}

impl Model {
    pub fn new(core: CoreTensor, factors: Vec<FactorMatrix>) -> Result<Self> {
        if factors.len() != core.order() {
            return Err(TuckerError::Validation(format!(
                "core has order {} but {} factor matrices were given",
                core.order(),
                factors.len()
            )));
        }
        for (n, f) in factors.iter().enumerate() {
            if f.cols() != core.dims()[n] {
                return Err(TuckerError::Validation(format!(
                    "factor {} has {} columns, core rank for that mode is {}",
                    n + 1,
                    f.cols(),
                    core.dims()[n]
                )));
            }
        }
        Ok(Model { core, factors })
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    /// `I_1..I_N`.
    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(FactorMatrix::rows).collect()
    }

    /// `J_1..J_N`.
    pub fn ranks(&self) -> Vec<usize> {
        self.core.dims().to_vec()
    }

    /// Checks that the model's shapes fit `tensor`.
    pub fn check_compatible(&self, tensor: &SparseTensor) -> Result<()> {
        if tensor.order() != self.order() {
            return Err(TuckerError::Validation(format!(
                "tensor has order {}, model has order {}",
                tensor.order(),
                self.order()
            )));
        }
        for (n, (&d, f)) in tensor.dims().iter().zip(&self.factors).enumerate() {
            if d > f.rows() {
                return Err(TuckerError::Validation(format!(
                    "mode {} has size {d}, model covers only {} rows",
                    n + 1,
                    f.rows()
                )));
            }
        }
        Ok(())
    }

    /// Row offsets `i_k * J_k` into each factor's storage for one entry.
    #[inline]
    pub(crate) fn row_offsets(&self, idx: &[u32]) -> Offsets {
        idx.iter()
            .zip(&self.factors)
            .map(|(&i, f)| i as usize * f.cols())
            .collect()
    }

    /// Reconstruction at a coordinate, assuming it is in range.
    #[inline]
    pub(crate) fn reconstruct_unchecked(&self, idx: &[u32]) -> f64 {
        let rows = self.row_offsets(idx);
        let mut sum = 0.0;
        for (cidx, g) in self.core.iter() {
            let mut p = g;
            for (k, &j) in cidx.iter().enumerate() {
                p *= self.factors[k].data[rows[k] + j as usize];
            }
            sum += p;
        }
        sum
    }

    /// Product `G_β · Π_k a^(k)_{i_k j_k}` for one (entry, core entry) pair.
    #[inline]
    pub(crate) fn term(&self, rows: &[usize], beta: usize) -> f64 {
        let mut p = self.core.value(beta);
        for (k, &j) in self.core.index(beta).iter().enumerate() {
            p *= self.factors[k].data[rows[k] + j as usize];
        }
        p
    }
}

/// Random model with every factor and core value drawn from `[0, 1)`.
///
/// The generator is ChaCha8 (`rand_chacha` 0.3) seeded through
/// `SeedableRng::seed_from_u64`, sampled with `rand` 0.8's `Standard` `f64`
/// distribution (53 random mantissa bits). Values are drawn for factors
/// 1..N in row-major order, then for the dense core in row-major order.
pub fn init_model(dims: &[usize], ranks: &[usize], seed: u64) -> Result<Model> {
    if dims.len() != ranks.len() {
        return Err(TuckerError::InvalidArgument(format!(
            "{} dimensions but {} ranks",
            dims.len(),
            ranks.len()
        )));
    }
    check_dims(dims, "tensor")?;
    check_dims(ranks, "ranks")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = dims
        .iter()
        .zip(ranks)
        .map(|(&i, &j)| {
            let data = (0..i * j).map(|_| rng.gen::<f64>()).collect();
            FactorMatrix {
                rows: i,
                cols: j,
                data,
            }
        })
        .collect();
    let total: usize = ranks.iter().product();
    let core_values = (0..total).map(|_| rng.gen::<f64>()).collect();
    let core = CoreTensor::dense(ranks.to_vec(), core_values)?;
    Model::new(core, factors)
}

/// Predicted value at a 0-based coordinate: Σ_β G_β Π_n a^(n)_{i_n j_n}.
pub fn reconstruct_entry(model: &Model, index: &[usize]) -> Result<f64> {
    if index.len() != model.order() {
        return Err(TuckerError::InvalidArgument(format!(
            "index has {} coordinates, model order is {}",
            index.len(),
            model.order()
        )));
    }
    let mut idx: SmallVec<[u32; 8]> = SmallVec::with_capacity(index.len());
    for (n, (&i, f)) in index.iter().zip(&model.factors).enumerate() {
        if i >= f.rows() {
            return Err(TuckerError::InvalidArgument(format!(
                "index {} out of range for mode {} of size {}",
                i + 1,
                n + 1,
                f.rows()
            )));
        }
        idx.push(i as u32);
    }
    Ok(model.reconstruct_unchecked(&idx))
}
