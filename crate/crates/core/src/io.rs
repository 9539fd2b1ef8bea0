//! Text formats and data preparation.
//!
//! Coordinate files hold one observed entry per line: N whitespace-separated
//! 1-based indices followed by the value. Blank lines and lines starting with
//! `#` are skipped. A model bundle is a directory holding `factor_<n>.tsv`
//! (dense, tab-separated, one row per line) for every mode, `core.coo` and a
//! `meta` file of `key=value` lines. Reals are written with 17 significant
//! digits, which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TuckerError};
use crate::solver::Variant;
use crate::tensor::{find_duplicate, CoreTensor, FactorMatrix, Model, SparseTensor};

/// Formats a real with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_err(line: usize, message: impl Into<String>) -> TuckerError {
    TuckerError::Parse {
        line,
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| TuckerError::Io(format!("{}: {e}", path.display())))
}

fn parse_index(tok: &str, line: usize, zero_based: bool) -> Result<u32> {
    let v: i64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("index {tok:?} is not an integer")))?;
    let min = if zero_based { 0 } else { 1 };
    if v < min {
        return Err(parse_err(
            line,
            format!("index {v} is below {min}; indices are {}-based", min),
        ));
    }
    let v = v - min;
    u32::try_from(v).map_err(|_| parse_err(line, format!("index {tok} is too large")))
}

fn parse_real(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("value {tok:?} is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("value {tok:?} is not finite")));
    }
    Ok(v)
}

fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(i, l)| match l {
        Err(e) => Some(Err(TuckerError::Io(e.to_string()))),
        Ok(l) => {
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                None
            } else {
                Some(Ok((i + 1, l)))
            }
        }
    })
}

/// Parses a coordinate file. The order is taken from the first data line.
/// Without `expected_dims`, each mode's size is its largest observed index.
pub fn parse_coo<R: BufRead>(
    reader: R,
    expected_dims: Option<&[usize]>,
    zero_based: bool,
) -> Result<SparseTensor> {
    let mut order = None;
    let mut coords: Vec<u32> = Vec::new();
    let mut values = Vec::new();
    let mut line_of = Vec::new();
    for item in data_lines(reader) {
        let (line, text) = item?;
        let toks: Vec<&str> = text.split_whitespace().collect();
        let n = *order.get_or_insert(toks.len().saturating_sub(1));
        if n < 2 {
            return Err(parse_err(
                line,
                format!(
                    "need at least 2 indices and a value, found {} tokens",
                    toks.len()
                ),
            ));
        }
        if toks.len() != n + 1 {
            return Err(parse_err(
                line,
                format!("expected {} tokens, found {}", n + 1, toks.len()),
            ));
        }
        for tok in &toks[..n] {
            coords.push(parse_index(tok, line, zero_based)?);
        }
        values.push(parse_real(toks[n], line)?);
        line_of.push(line);
    }
    let order = order.ok_or_else(|| TuckerError::Validation("file has no data lines".into()))?;
    let dims = match expected_dims {
        Some(d) => {
            if d.len() != order {
                return Err(TuckerError::Validation(format!(
                    "data has order {order}, expected {}",
                    d.len()
                )));
            }
            for (pos, idx) in coords.chunks_exact(order).enumerate() {
                if let Some(n) = idx.iter().zip(d).position(|(&i, &dim)| i as usize >= dim) {
                    return Err(parse_err(
                        line_of[pos],
                        format!(
                            "index {} exceeds size {} of mode {}",
                            idx[n] as usize + 1,
                            d[n],
                            n + 1
                        ),
                    ));
                }
            }
            d.to_vec()
        }
        None => {
            let mut d = vec![0usize; order];
            for idx in coords.chunks_exact(order) {
                for (m, &i) in d.iter_mut().zip(idx) {
                    *m = (*m).max(i as usize + 1);
                }
            }
            d
        }
    };
    if let Some((a, b)) = find_duplicate(order, &coords) {
        return Err(TuckerError::Validation(format!(
            "duplicate coordinates on lines {} and {}",
            line_of[a], line_of[b]
        )));
    }
    SparseTensor::from_flat(dims, coords, values)
}

pub fn read_coo(
    path: &Path,
    expected_dims: Option<&[usize]>,
    zero_based: bool,
) -> Result<SparseTensor> {
    parse_coo(open(path)?, expected_dims, zero_based).map_err(|e| e.context(path.display()))
}

/// Writes `(index, value)` lines with 1-based indices.
pub fn write_coo_to<W: Write>(
    mut w: W,
    order: usize,
    entries: impl Iterator<Item = (impl AsRef<[u32]>, f64)>,
) -> Result<()> {
    let mut line = String::new();
    for (idx, v) in entries {
        line.clear();
        let idx = idx.as_ref();
        debug_assert_eq!(idx.len(), order);
        for i in idx {
            let _ = write!(line, "{} ", *i as u64 + 1);
        }
        line.push_str(&format_real(v));
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_coo(tensor: &SparseTensor, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| TuckerError::Io(format!("{}: {e}", path.display())))?;
    write_coo_to(BufWriter::new(f), tensor.order(), tensor.iter())
}

/// One line of an index-only file: its number, its text and its 0-based
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexLine {
    pub line: usize,
    pub text: String,
    pub index: Vec<usize>,
}

/// Parses a coordinate file without the value column, checking every index
/// against `dims`.
pub fn parse_indices<R: BufRead>(
    reader: R,
    dims: &[usize],
    zero_based: bool,
) -> Result<Vec<IndexLine>> {
    let mut out = Vec::new();
    for item in data_lines(reader) {
        let (line, text) = item?;
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() != dims.len() {
            return Err(parse_err(
                line,
                format!(
                    "expected {} indices, found {} tokens",
                    dims.len(),
                    toks.len()
                ),
            ));
        }
        let mut index = Vec::with_capacity(dims.len());
        for (n, tok) in toks.iter().enumerate() {
            let i = parse_index(tok, line, zero_based)? as usize;
            if i >= dims[n] {
                return Err(parse_err(
                    line,
                    format!(
                        "index {tok} out of range for mode {} of size {}",
                        n + 1,
                        dims[n]
                    ),
                ));
            }
            index.push(i);
        }
        out.push(IndexLine {
            line,
            text: text.trim_end().to_string(),
            index,
        });
    }
    Ok(out)
}

/// Run parameters stored alongside a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub order: usize,
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub lambda: f64,
    pub variant: Variant,
    pub iterations_run: usize,
    pub final_error: f64,
    pub seed: u64,
}

impl ModelMeta {
    /// Meta for `model` with the shape fields filled from it.
    pub fn for_model(model: &Model) -> Self {
        ModelMeta {
            order: model.order(),
            dims: model.dims(),
            ranks: model.ranks(),
            lambda: 0.0,
            variant: Variant::Default,
            iterations_run: 0,
            final_error: 0.0,
            seed: 0,
        }
    }

    fn join(v: &[usize]) -> String {
        v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }

    pub fn to_text(&self) -> String {
        format!(
            "order={}\ndims={}\nranks={}\nlambda={}\nvariant={}\niterations_run={}\nfinal_error={}\nseed={}\n",
            self.order,
            Self::join(&self.dims),
            Self::join(&self.ranks),
            format_real(self.lambda),
            self.variant,
            self.iterations_run,
            format_real(self.final_error),
            self.seed
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for (i, l) in text.lines().enumerate() {
            let l = l.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| parse_err(i + 1, format!("meta line {l:?} is not key=value")))?;
            fields.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let get = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| TuckerError::Validation(format!("meta is missing {k}")))
        };
        let num = |k: &str| -> Result<u64> {
            let (line, v) = get(k)?;
            v.parse()
                .map_err(|_| parse_err(*line, format!("meta {k}={v:?} is not an integer")))
        };
        let list = |k: &str| -> Result<Vec<usize>> {
            let (line, v) = get(k)?;
            v.split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| parse_err(*line, format!("meta {k}={v:?} is not a list")))
                })
                .collect()
        };
        let real = |k: &str| -> Result<f64> {
            let (line, v) = get(k)?;
            v.parse()
                .map_err(|_| parse_err(*line, format!("meta {k}={v:?} is not a number")))
        };
        let meta = ModelMeta {
            order: num("order")? as usize,
            dims: list("dims")?,
            ranks: list("ranks")?,
            lambda: real("lambda")?,
            variant: get("variant")?.1.parse()?,
            iterations_run: num("iterations_run")? as usize,
            final_error: real("final_error")?,
            seed: num("seed")?,
        };
        if meta.dims.len() != meta.order || meta.ranks.len() != meta.order {
            return Err(TuckerError::Validation(format!(
                "meta order {} disagrees with dims {:?} / ranks {:?}",
                meta.order, meta.dims, meta.ranks
            )));
        }
        Ok(meta)
    }
}

pub fn factor_file_name(n: usize) -> String {
    format!("factor_{}.tsv", n + 1)
}

/// Writes `model` as a bundle in `dir`, creating the directory if needed.
pub fn write_model(model: &Model, meta: &ModelMeta, dir: &Path) -> Result<()> {
    if meta.order != model.order() || meta.dims != model.dims() || meta.ranks != model.ranks() {
        return Err(TuckerError::Validation(
            "meta shape does not describe the model".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| TuckerError::Io(format!("{}: {e}", dir.display())))?;
    for (n, f) in model.factors.iter().enumerate() {
        let path = dir.join(factor_file_name(n));
        let mut w = BufWriter::new(
            File::create(&path).map_err(|e| TuckerError::Io(format!("{}: {e}", path.display())))?,
        );
        let mut line = String::new();
        for i in 0..f.rows() {
            line.clear();
            for (j, v) in f.row(i).iter().enumerate() {
                if j > 0 {
                    line.push('\t');
                }
                line.push_str(&format_real(*v));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()?;
    }
    let core_path = dir.join("core.coo");
    let f = File::create(&core_path)
        .map_err(|e| TuckerError::Io(format!("{}: {e}", core_path.display())))?;
    write_coo_to(BufWriter::new(f), model.core.order(), model.core.iter())?;
    fs::write(dir.join("meta"), meta.to_text())?;
    Ok(())
}

fn read_factor(path: &Path, rows: usize, cols: usize) -> Result<FactorMatrix> {
    let reader = open(path)
        .map_err(|_| TuckerError::Validation(format!("missing factor file {}", path.display())))?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split('\t').collect();
        if toks.len() != cols {
            return Err(TuckerError::Validation(format!(
                "{} line {}: {} columns, meta ranks say {cols}",
                path.display(),
                i + 1,
                toks.len()
            )));
        }
        for t in toks {
            data.push(parse_real(t.trim(), i + 1).map_err(|e| e.context(path.display()))?);
        }
        seen += 1;
    }
    if seen != rows {
        return Err(TuckerError::Validation(format!(
            "{}: {seen} rows, meta dims say {rows}",
            path.display()
        )));
    }
    FactorMatrix::from_vec(rows, cols, data)
}

/// Reads a bundle written by [`write_model`], checking every shape against
/// the meta file.
pub fn read_model(dir: &Path) -> Result<(Model, ModelMeta)> {
    let meta_path = dir.join("meta");
    let text = fs::read_to_string(&meta_path)
        .map_err(|e| TuckerError::Validation(format!("{}: {e}", meta_path.display())))?;
    let meta = ModelMeta::parse(&text)?;
    let factors = (0..meta.order)
        .map(|n| read_factor(&dir.join(factor_file_name(n)), meta.dims[n], meta.ranks[n]))
        .collect::<Result<Vec<_>>>()?;
    let core_path = dir.join("core.coo");
    let core_t = parse_coo(
        open(&core_path).map_err(|_| TuckerError::Validation("missing core.coo".into()))?,
        None,
        false,
    )
    .map_err(|e| e.context(core_path.display()))?;
    if core_t.order() != meta.order {
        return Err(TuckerError::Validation(format!(
            "core has order {}, meta says {}",
            core_t.order(),
            meta.order
        )));
    }
    if let Some(n) = (0..meta.order).find(|&n| core_t.dims()[n] > meta.ranks[n]) {
        return Err(TuckerError::Validation(format!(
            "core index {} in mode {} exceeds meta rank {}",
            core_t.dims()[n],
            n + 1,
            meta.ranks[n]
        )));
    }
    let core = CoreTensor::from_parts(
        meta.ranks.clone(),
        core_t.coords().to_vec(),
        core_t.values().to_vec(),
    )?;
    Ok((Model::new(core, factors)?, meta))
}

/// Splits observed entries into disjoint train and test sets with
/// `round(fraction·|Ω|)` test entries (at least one on each side). Both sides
/// keep the input order of their entries.
pub fn split_train_test(
    tensor: &SparseTensor,
    test_fraction: f64,
    seed: u64,
) -> Result<(SparseTensor, SparseTensor)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(TuckerError::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let nnz = tensor.nnz();
    if nnz < 2 {
        return Err(TuckerError::InvalidArgument(
            "need at least 2 entries to split".into(),
        ));
    }
    let n_test = ((test_fraction * nnz as f64).round() as usize).clamp(1, nnz - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..nnz).collect();
    perm.shuffle(&mut rng);
    let mut test_pos = perm[..n_test].to_vec();
    let mut train_pos = perm[n_test..].to_vec();
    test_pos.sort_unstable();
    train_pos.sort_unstable();
    Ok((tensor.select(&train_pos)?, tensor.select(&test_pos)?))
}

/// Min-max scaled copy of a tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub tensor: SparseTensor,
    pub min: f64,
    pub max: f64,
    /// All values were equal; they were mapped to 0.
    pub degenerate: bool,
}

impl Normalized {
    /// Maps a value on the normalized scale back to the original one.
    pub fn denormalize(&self, v: f64) -> f64 {
        if self.degenerate {
            self.min
        } else {
            self.min + v * (self.max - self.min)
        }
    }
}

/// Rescales observed values to `[0, 1]` via `(v − min) / (max − min)`.
pub fn normalize_values(tensor: &SparseTensor) -> Result<Normalized> {
    let (min, max) = tensor
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let degenerate = max == min;
    let values = if degenerate {
        vec![0.0; tensor.nnz()]
    } else {
        let span = max - min;
        tensor.values().iter().map(|v| (v - min) / span).collect()
    };
    Ok(Normalized {
        tensor: tensor.with_values(values)?,
        min,
        max,
        degenerate,
    })
}
