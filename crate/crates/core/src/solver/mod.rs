//! The factorization loop: repeated row-wise updates of every factor
//! matrix, optional core truncation, then orthogonalization of the factors.

mod cache;
mod update;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

pub use cache::{cache_bytes, precompute_cache, precompute_cache_with, CacheTable, EPS_DIV};
pub use update::{
    assemble_row_system, compute_delta_cached, compute_delta_cached_into, compute_delta_direct,
    compute_delta_direct_into, update_factor_matrix, DeltaSource, ModeUpdate, RowUpdater,
};

use crate::error::{Result, TuckerError};
use crate::eval::reconstruction_error_with;
use crate::linalg::{core_mode_product, thin_qr};
use crate::tensor::{init_model, Model, SparseTensor};
use crate::truncation::truncate_core_with;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Memory-optimized: δ recomputed from the factors every time.
    #[default]
    Default,
    /// Time-optimized: δ read from a |Ω| x |G| product cache.
    Cache,
    /// Core truncation after every iteration.
    Approx,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Default => "default",
            Variant::Cache => "cache",
            Variant::Approx => "approx",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = TuckerError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Variant::Default),
            "cache" => Ok(Variant::Cache),
            "approx" => Ok(Variant::Approx),
            other => Err(TuckerError::InvalidArgument(format!(
                "unknown variant {other:?} (expected default, cache or approx)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Core dimensions `J_1..J_N`.
    pub ranks: Vec<usize>,
    /// L2 regularization weight on the factor matrices.
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once the relative change of the reconstruction error drops below this.
    pub tol: f64,
    pub variant: Variant,
    /// Fraction of core entries removed per iteration (approx only).
    pub truncation_rate: f64,
    pub threads: usize,
    pub seed: u64,
    /// Upper bound on the cache table (cache only).
    pub max_cache_bytes: usize,
    /// Iterations stop after one whose wall time exceeds this.
    pub iteration_time_limit: Duration,
}

impl SolverConfig {
    pub fn new(ranks: Vec<usize>) -> Self {
        SolverConfig {
            ranks,
            lambda: 0.01,
            max_iters: 20,
            tol: 1e-4,
            variant: Variant::Default,
            truncation_rate: 0.2,
            threads: 20,
            seed: 0,
            max_cache_bytes: 2 << 30,
            iteration_time_limit: Duration::from_secs(7200),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TuckerError::InvalidArgument(m));
        if self.ranks.len() < 2 || self.ranks.contains(&0) {
            return bad(format!(
                "ranks must be >= 1 for at least 2 modes, got {:?}",
                self.ranks
            ));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.variant == Variant::Approx
            && !(self.truncation_rate > 0.0 && self.truncation_rate < 1.0)
        {
            return bad(format!(
                "truncation rate must lie in (0, 1), got {}",
                self.truncation_rate
            ));
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }
}

/// Errors at or below this fraction of the observed norm count as a perfect
/// fit and end the iteration regardless of the relative change.
pub const PERFECT_FIT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIters,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based iteration number.
    pub iteration: usize,
    /// Reconstruction error after the iteration (after truncation for approx).
    pub error: f64,
    /// Error before truncation; only set for approx.
    pub error_before_truncation: Option<f64>,
    pub seconds: f64,
    pub core_nnz: usize,
    pub mode_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationStats {
    pub initial_error: f64,
    pub records: Vec<IterationRecord>,
    pub stop_reason: Option<StopReason>,
    /// Set when truncation was requested on a single-entry core.
    pub truncation_skipped: bool,
    /// Largest per-worker scratch footprint of any factor update, in bytes.
    pub peak_scratch_bytes: usize,
    /// Largest number of workers seen active in one factor update.
    pub peak_workers: usize,
    pub cache_bytes: usize,
    pub orthogonalized: bool,
}

impl IterationStats {
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.error).collect()
    }

    pub fn final_error(&self) -> f64 {
        self.records.last().map_or(self.initial_error, |r| r.error)
    }

    /// `iteration,error,seconds,core_nnz` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,error,seconds,core_nnz\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.16e},{:.6},{}\n",
                r.iteration, r.error, r.seconds, r.core_nnz
            ));
        }
        out
    }
}

/// A failed run, carrying what was computed before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: TuckerError,
    pub stats: IterationStats,
    /// The last consistent model, when one exists.
    pub model: Option<Model>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} iterations)",
            self.error,
            self.stats.records.len()
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Factorizes `tensor` from a seeded random model.
pub fn run(
    tensor: &SparseTensor,
    config: &SolverConfig,
) -> std::result::Result<(Model, IterationStats), Box<RunFailure>> {
    let fail = |error, stats, model| {
        Box::new(RunFailure {
            error,
            stats,
            model,
        })
    };
    if let Err(e) = config.validate() {
        return Err(fail(e, IterationStats::default(), None));
    }
    if config.ranks.len() != tensor.order() {
        return Err(fail(
            TuckerError::InvalidArgument(format!(
                "{} ranks given for a tensor of order {}",
                config.ranks.len(),
                tensor.order()
            )),
            IterationStats::default(),
            None,
        ));
    }
    let model = match init_model(tensor.dims(), &config.ranks, config.seed) {
        Ok(m) => m,
        Err(e) => return Err(fail(e, IterationStats::default(), None)),
    };
    run_from(tensor, model, config)
}

/// Factorizes `tensor` starting from `model`.
pub fn run_from(
    tensor: &SparseTensor,
    mut model: Model,
    config: &SolverConfig,
) -> std::result::Result<(Model, IterationStats), Box<RunFailure>> {
    let fail = |error, stats, model| {
        Box::new(RunFailure {
            error,
            stats,
            model,
        })
    };
    if let Err(e) = config
        .validate()
        .and_then(|_| model.check_compatible(tensor))
    {
        return Err(fail(e, IterationStats::default(), None));
    }
    let updater = match RowUpdater::new(tensor, config.lambda, config.threads) {
        Ok(u) => u,
        Err(e) => return Err(fail(e, IterationStats::default(), None)),
    };
    let exec = updater.executor();
    let mut stats = IterationStats {
        initial_error: reconstruction_error_with(exec, tensor, &model),
        ..Default::default()
    };
    let mut prev = stats.initial_error;
    let fit_floor = PERFECT_FIT * tensor.squared_norm().sqrt();
    log::info!(
        "factorizing {} entries, ranks {:?}, variant {}, {} threads",
        tensor.nnz(),
        config.ranks,
        config.variant,
        config.threads
    );

    for iteration in 1..=config.max_iters {
        let start = Instant::now();
        let mut cache = if config.variant == Variant::Cache {
            match precompute_cache_with(exec, tensor, &model, config.max_cache_bytes) {
                Ok(c) => {
                    stats.cache_bytes = stats.cache_bytes.max(c.bytes());
                    Some(c)
                }
                Err(e) => return Err(fail(e, stats, Some(model))),
            }
        } else {
            None
        };
        let mut mode_seconds = Vec::with_capacity(tensor.order());
        for n in 0..tensor.order() {
            match updater.update_mode(&mut model, n, cache.as_mut()) {
                Ok(u) => {
                    mode_seconds.push(u.seconds);
                    stats.peak_scratch_bytes = stats.peak_scratch_bytes.max(u.scratch_bytes);
                    stats.peak_workers = stats.peak_workers.max(u.workers);
                }
                Err(e) => return Err(fail(e, stats, Some(model))),
            }
        }
        drop(cache);
        let mut error = reconstruction_error_with(exec, tensor, &model);
        let mut error_before_truncation = None;
        if config.variant == Variant::Approx {
            error_before_truncation = Some(error);
            match truncate_core_with(exec, tensor, &model, config.truncation_rate) {
                Ok(t) => {
                    stats.truncation_skipped |= t.skipped;
                    if t.removed > 0 {
                        model = t.model;
                        error = reconstruction_error_with(exec, tensor, &model);
                    }
                }
                Err(e) => return Err(fail(e, stats, Some(model))),
            }
        }
        let seconds = start.elapsed().as_secs_f64();
        log::debug!(
            "iteration {iteration}: error {error:.6e}, {seconds:.3}s, |G| {}",
            model.core.nnz()
        );
        stats.records.push(IterationRecord {
            iteration,
            error,
            error_before_truncation,
            seconds,
            core_nnz: model.core.nnz(),
            mode_seconds,
        });
        let change = (error - prev).abs() / prev.max(1e-30);
        prev = error;
        if change < config.tol || error <= fit_floor {
            stats.stop_reason = Some(StopReason::Converged);
            break;
        }
        if seconds > config.iteration_time_limit.as_secs_f64() {
            log::warn!("iteration {iteration} took {seconds:.1}s, over the time limit; stopping");
            stats.stop_reason = Some(StopReason::TimeLimit);
            break;
        }
    }
    if stats.stop_reason.is_none() {
        stats.stop_reason = Some(StopReason::MaxIters);
    }

    match orthogonalize(&model) {
        Ok(m) => {
            stats.orthogonalized = true;
            Ok((m, stats))
        }
        Err(e) => Err(fail(e, stats, Some(model))),
    }
}

/// Replaces every factor by the Q of its thin QR and folds the R factors
/// into the core, `G ← G ×_1 R^(1) ··· ×_N R^(N)`. Predictions are unchanged.
pub fn orthogonalize(model: &Model) -> Result<Model> {
    let mut core = model.core.clone();
    let mut factors = Vec::with_capacity(model.order());
    for (n, a) in model.factors.iter().enumerate() {
        if a.rows() < a.cols() {
            return Err(TuckerError::NumericFailure(format!(
                "factor {}: {} rows cannot hold {} orthonormal columns",
                n + 1,
                a.rows(),
                a.cols()
            )));
        }
        let (q, r) = thin_qr(a).map_err(|e| e.context(format!("factor {}", n + 1)))?;
        core =
            core_mode_product(&core, &r, n).map_err(|e| e.context(format!("factor {}", n + 1)))?;
        factors.push(q);
    }
    Model::new(core, factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::reconstruction_error;
    use crate::linalg::orthonormality_deviation;
    use crate::synth::{planted_tensor, random_tensor};

    #[test]
    fn config_validation() {
        let ok = SolverConfig::new(vec![2, 2]);
        ok.validate().unwrap();
        for bad in [
            SolverConfig {
                lambda: 0.0,
                ..ok.clone()
            },
            SolverConfig {
                max_iters: 0,
                ..ok.clone()
            },
            SolverConfig {
                tol: 0.0,
                ..ok.clone()
            },
            SolverConfig {
                threads: 0,
                ..ok.clone()
            },
            SolverConfig {
                ranks: vec![2, 0],
                ..ok.clone()
            },
            SolverConfig {
                variant: Variant::Approx,
                truncation_rate: 1.0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        assert_eq!("cache".parse::<Variant>().unwrap(), Variant::Cache);
        assert!("cache+approx".parse::<Variant>().is_err());
    }

    #[test]
    fn defaults() {
        let c = SolverConfig::new(vec![2, 2]);
        assert_eq!((c.lambda, c.threads, c.max_iters), (0.01, 20, 20));
        assert_eq!(c.truncation_rate, 0.2);
        assert_eq!(c.iteration_time_limit, Duration::from_secs(7200));
    }

    #[test]
    fn fixed_point_tensor_converges_immediately() {
        let dims = [6, 5, 4];
        let ranks = vec![2, 2, 2];
        let init = init_model(&dims, &ranks, 3).unwrap();
        let t = planted_tensor(&init, 80, 11).unwrap();
        assert_eq!(reconstruction_error(&t, &init), 0.0);
        let cfg = SolverConfig {
            lambda: 1e-13,
            seed: 3,
            threads: 1,
            ..SolverConfig::new(ranks)
        };
        let (_, stats) = run(&t, &cfg).unwrap();
        assert_eq!(stats.initial_error, 0.0);
        let norm = t.squared_norm().sqrt();
        assert!(
            stats.records[0].error <= 1e-6 * norm,
            "{:?}",
            stats.errors()
        );
        assert_eq!(stats.stop_reason, Some(StopReason::Converged));
        assert_eq!(stats.records.len(), 1);
    }

    #[test]
    fn loss_decreases_on_planted_tensor() {
        let truth = init_model(&[10, 10, 10], &[2, 2, 2], 100).unwrap();
        let t = planted_tensor(&truth, 1000, 1).unwrap();
        let cfg = SolverConfig {
            threads: 1,
            seed: 5,
            tol: 1e-12,
            ..SolverConfig::new(vec![2, 2, 2])
        };
        // Replay the iterations by hand to observe the regularized loss; the
        // plain error is not guaranteed to fall when λ > 0.
        let mut model = init_model(&[10, 10, 10], &cfg.ranks, cfg.seed).unwrap();
        let updater = RowUpdater::new(&t, cfg.lambda, 1).unwrap();
        let mut losses = vec![crate::oracle::naive_loss(&t, &model, cfg.lambda)];
        for _ in 0..cfg.max_iters {
            for n in 0..3 {
                updater.update_mode(&mut model, n, None).unwrap();
            }
            losses.push(crate::oracle::naive_loss(&t, &model, cfg.lambda));
        }
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]), "{losses:?}");
        }

        let (model, stats) = run(&t, &cfg).unwrap();
        assert!(stats.final_error() < stats.initial_error);
        assert!(stats.orthogonalized);
        // orthogonalization keeps the fit
        let e = reconstruction_error(&t, &model);
        assert!((e - stats.final_error()).abs() <= 1e-8 * stats.final_error());
    }

    #[test]
    fn single_thread_runs_are_bit_identical() {
        let t = random_tensor(&[8, 7, 6], 200, 2).unwrap();
        let cfg = SolverConfig {
            threads: 1,
            max_iters: 5,
            tol: 1e-14,
            ..SolverConfig::new(vec![2, 3, 2])
        };
        let a = run(&t, &cfg).unwrap();
        let b = run(&t, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.errors(), b.1.errors());
        let par = run(
            &t,
            &SolverConfig {
                threads: 4,
                ..cfg.clone()
            },
        )
        .unwrap();
        for (x, y) in a.1.errors().iter().zip(par.1.errors()) {
            assert!((x - y).abs() <= 1e-6 * x);
        }
    }

    #[test]
    fn approx_shrinks_core() {
        let t = random_tensor(&[8, 8, 8], 300, 3).unwrap();
        let cfg = SolverConfig {
            threads: 1,
            max_iters: 4,
            tol: 1e-14,
            variant: Variant::Approx,
            truncation_rate: 0.25,
            ..SolverConfig::new(vec![2, 2, 2])
        };
        let (_, stats) = run(&t, &cfg).unwrap();
        let sizes: Vec<usize> = stats.records.iter().map(|r| r.core_nnz).collect();
        assert_eq!(sizes, vec![6, 5, 4, 3]);
        assert!(stats
            .records
            .iter()
            .all(|r| r.error_before_truncation.is_some()));
    }

    #[test]
    fn cache_budget_failure_keeps_partial_stats() {
        let t = random_tensor(&[5, 5], 10, 3).unwrap();
        let cfg = SolverConfig {
            variant: Variant::Cache,
            max_cache_bytes: 1,
            threads: 1,
            ..SolverConfig::new(vec![2, 2])
        };
        let f = run(&t, &cfg).unwrap_err();
        assert!(matches!(f.error, TuckerError::ResourceLimit(_)));
        assert!(f.stats.initial_error > 0.0);
        assert!(f.model.is_some());
    }

    #[test]
    fn rank_mismatch_is_rejected() {
        let t = random_tensor(&[5, 5, 5], 10, 3).unwrap();
        let f = run(&t, &SolverConfig::new(vec![2, 2])).unwrap_err();
        assert!(matches!(f.error, TuckerError::InvalidArgument(_)));
    }

    #[test]
    fn orthogonalize_keeps_predictions() {
        let t = random_tensor(&[9, 8, 7], 100, 8).unwrap();
        let m = init_model(&[9, 8, 7], &[3, 2, 2], 2).unwrap();
        let o = orthogonalize(&m).unwrap();
        for f in &o.factors {
            assert!(orthonormality_deviation(f) <= 1e-10);
        }
        let (a, b) = (reconstruction_error(&t, &m), reconstruction_error(&t, &o));
        assert!((a - b).abs() <= 1e-8 * a);
        let again = orthogonalize(&o).unwrap();
        for (x, y) in again.factors.iter().zip(&o.factors) {
            assert!(x.max_abs_diff(y) <= 1e-10);
        }
    }

    #[test]
    fn orthogonalize_needs_tall_factors() {
        let m = init_model(&[2, 5], &[3, 2], 1).unwrap();
        assert!(matches!(
            orthogonalize(&m),
            Err(TuckerError::NumericFailure(_))
        ));
    }

    #[test]
    fn stats_csv() {
        let stats = IterationStats {
            records: vec![IterationRecord {
                iteration: 1,
                error: 0.5,
                error_before_truncation: None,
                seconds: 0.25,
                core_nnz: 8,
                mode_seconds: vec![],
            }],
            ..Default::default()
        };
        assert_eq!(
            stats.to_csv(),
            "iteration,error,seconds,core_nnz\n1,5.0000000000000000e-1,0.250000,8\n"
        );
    }
}
