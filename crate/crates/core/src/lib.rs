//! Tucker factorization of sparse, partially observed tensors.
//!
//! Factor matrices are fitted row by row with regularized alternating least
//! squares over the observed entries only. Three variants share the loop:
//! the default one recomputes every intermediate product, the cache variant
//! memoizes per-(entry, core entry) products, and the approx variant prunes
//! the highest-error core entries each iteration. Factors are orthogonalized
//! at the end with the R factors folded into the core.
//!
//! ```
//! use ptucker::{run, synth, SolverConfig};
//!
//! let truth = ptucker::init_model(&[20, 20, 20], &[2, 2, 2], 1).unwrap();
//! let tensor = synth::planted_tensor(&truth, 2_000, 2).unwrap();
//! let config = SolverConfig { threads: 2, max_iters: 5, ..SolverConfig::new(vec![2, 2, 2]) };
//! let (model, stats) = run(&tensor, &config).unwrap();
//! assert!(stats.final_error() < stats.initial_error);
//! assert_eq!(model.core.dims(), &[2, 2, 2]);
//! ```

pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod par;
pub mod solver;
pub mod synth;
pub mod tensor;
pub mod truncation;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;

pub use error::{Result, TuckerError};
pub use eval::{reconstruction_error, test_rmse, top_core_entries, CoreRanking, EvalReport};
pub use solver::{
    orthogonalize, run, run_from, IterationRecord, IterationStats, RunFailure, SolverConfig,
    StopReason, Variant,
};
pub use tensor::{
    build_mode_slices, init_model, reconstruct_entry, CoreTensor, FactorMatrix, ModeSliceIndex,
    Model, SparseTensor,
};
pub use truncation::{partial_error, truncate_core, ScoredCoreEntry};
