use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ptucker::eval::{reconstruction_error, test_rmse, top_core_entries, CoreRanking, EvalReport};
use ptucker::io::{
    format_real, normalize_values, parse_indices, read_coo, read_model, split_train_test,
    write_coo, write_model, ModelMeta,
};
use ptucker::{run, SolverConfig, TuckerError, Variant};

#[derive(Parser, Debug)]
#[command(
    name = "ptucker",
    version,
    about = "Sparse Tucker factorization with row-wise ALS"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Factorize a sparse tensor and write the model bundle.
    Factorize(FactorizeArgs),
    /// Predict values at the indices listed in a file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        indices: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        zero_based: bool,
    },
    /// Report the reconstruction error of a model on a data file.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Treat the data as held-out entries and also report RMSE.
        #[arg(long)]
        as_test: bool,
        #[arg(long)]
        zero_based: bool,
    },
    /// List the largest core entries.
    Inspect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        top: usize,
        #[arg(long, value_enum, default_value_t = RankBy::Value)]
        rank_by: RankBy,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        zero_based: bool,
    },
    /// Split observed entries into seeded train and test files.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
        /// Min-max scale values to [0, 1] before splitting.
        #[arg(long)]
        normalize: bool,
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long)]
        zero_based: bool,
    },
}

#[derive(clap::Args, Debug)]
struct FactorizeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Core dimensions, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    ranks: Vec<usize>,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value_t = 20)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::Default)]
    variant: VariantArg,
    #[arg(long, default_value_t = 0.2)]
    trunc_rate: f64,
    #[arg(long, default_value_t = 20)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tensor dimensions, comma separated; inferred from the data if absent.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Held-out entries to report test RMSE on.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-iteration CSV: iteration,error,seconds,core_nnz.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long, default_value_t = 2 << 30)]
    max_cache_bytes: usize,
    #[arg(long)]
    zero_based: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Default,
    Cache,
    Approx,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Default => Variant::Default,
            VariantArg::Cache => Variant::Cache,
            VariantArg::Approx => Variant::Approx,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RankBy {
    Value,
    PartialError,
}

fn exit_code(e: &TuckerError) -> u8 {
    match e {
        TuckerError::NumericFailure(_) | TuckerError::InternalConsistency(_) => 2,
        TuckerError::ResourceLimit(_) => 3,
        _ => 1,
    }
}

fn fail(e: &TuckerError) -> ExitCode {
    eprintln!("ptucker: error[{}]: {}", e.code(), e.detail());
    ExitCode::from(exit_code(e))
}

fn write_file(path: &Path, text: &str) -> Result<(), TuckerError> {
    fs::write(path, text).map_err(|e| TuckerError::Io(format!("{}: {e}", path.display())))
}

fn factorize(args: FactorizeArgs) -> Result<(), TuckerError> {
    let tensor = read_coo(&args.input, args.dims.as_deref(), args.zero_based)?;
    if args.ranks.len() != tensor.order() {
        return Err(TuckerError::InvalidArgument(format!(
            "--ranks has {} values but the tensor has order {}",
            args.ranks.len(),
            tensor.order()
        )));
    }
    let config = SolverConfig {
        lambda: args.lambda,
        max_iters: args.max_iters,
        tol: args.tol,
        variant: args.variant.into(),
        truncation_rate: args.trunc_rate,
        threads: args.threads,
        seed: args.seed,
        max_cache_bytes: args.max_cache_bytes,
        ..SolverConfig::new(args.ranks.clone())
    };
    config.validate()?;
    let test = args
        .test
        .as_deref()
        .map(|p| read_coo(p, Some(tensor.dims()), args.zero_based))
        .transpose()?;

    let (model, stats) = match run(&tensor, &config) {
        Ok(r) => r,
        Err(failure) => {
            if let Some(path) = &args.stats {
                write_file(path, &failure.stats.to_csv())?;
            }
            return Err(failure.error);
        }
    };
    if let Some(path) = &args.stats {
        write_file(path, &stats.to_csv())?;
    }
    if let Some(dir) = &args.out {
        let meta = ModelMeta {
            lambda: config.lambda,
            variant: config.variant,
            iterations_run: stats.records.len(),
            final_error: stats.final_error(),
            seed: config.seed,
            ..ModelMeta::for_model(&model)
        };
        write_model(&model, &meta, dir)?;
    }
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "iterations={}", stats.records.len());
    let _ = writeln!(out, "initial_error={}", format_real(stats.initial_error));
    let _ = writeln!(out, "final_error={}", format_real(stats.final_error()));
    let _ = writeln!(out, "core_nnz={}", model.core.nnz());
    if let Some(test) = &test {
        let _ = writeln!(out, "test_rmse={}", format_real(test_rmse(test, &model)?));
    }
    Ok(())
}

fn predict(
    model_dir: &Path,
    indices: &Path,
    out: &Path,
    zero_based: bool,
) -> Result<(), TuckerError> {
    let (model, _) = read_model(model_dir)?;
    let f = fs::File::open(indices)
        .map_err(|e| TuckerError::Io(format!("{}: {e}", indices.display())))?;
    let lines = parse_indices(BufReader::new(f), &model.dims(), zero_based)?;
    let o =
        fs::File::create(out).map_err(|e| TuckerError::Io(format!("{}: {e}", out.display())))?;
    let mut w = BufWriter::new(o);
    for l in lines {
        let v = ptucker::reconstruct_entry(&model, &l.index)?;
        writeln!(w, "{} {}", l.text, format_real(v))?;
    }
    w.flush()?;
    Ok(())
}

fn evaluate(
    model_dir: &Path,
    data: &Path,
    as_test: bool,
    zero_based: bool,
) -> Result<(), TuckerError> {
    let (model, _) = read_model(model_dir)?;
    let tensor = read_coo(data, Some(&model.dims()), zero_based)?;
    let report = if as_test {
        EvalReport {
            reconstruction_error: reconstruction_error(&tensor, &model),
            test_rmse: Some(test_rmse(&tensor, &model)?),
            n_train: 0,
            n_test: tensor.nnz(),
        }
    } else {
        EvalReport {
            reconstruction_error: reconstruction_error(&tensor, &model),
            test_rmse: None,
            n_train: tensor.nnz(),
            n_test: 0,
        }
    };
    print!("{}", report.to_kv());
    Ok(())
}

fn inspect(
    model_dir: &Path,
    top: usize,
    rank_by: RankBy,
    data: Option<&Path>,
    zero_based: bool,
) -> Result<(), TuckerError> {
    if top == 0 {
        return Err(TuckerError::InvalidArgument(
            "--top must be at least 1".into(),
        ));
    }
    let ranking = match rank_by {
        RankBy::Value => CoreRanking::ByValue,
        RankBy::PartialError => CoreRanking::ByPartialError,
    };
    if matches!(ranking, CoreRanking::ByPartialError) && data.is_none() {
        return Err(TuckerError::InvalidArgument(
            "--rank-by partial-error needs --data".into(),
        ));
    }
    let (model, _) = read_model(model_dir)?;
    let tensor = data
        .map(|p| read_coo(p, Some(&model.dims()), zero_based))
        .transpose()?;
    let entries = top_core_entries(&model, top, ranking, tensor.as_ref())?;
    let mut out = std::io::stdout().lock();
    for e in entries {
        let idx: Vec<String> = e.index.iter().map(|j| (j + 1).to_string()).collect();
        let _ = writeln!(
            out,
            "{} {} {}",
            idx.join(" "),
            format_real(e.value),
            format_real(e.score)
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn split(
    input: &Path,
    test_fraction: f64,
    seed: u64,
    train_out: &Path,
    test_out: &Path,
    normalize: bool,
    dims: Option<&[usize]>,
    zero_based: bool,
) -> Result<(), TuckerError> {
    let mut tensor = read_coo(input, dims, zero_based)?;
    if normalize {
        let n = normalize_values(&tensor)?;
        println!("min={}", format_real(n.min));
        println!("max={}", format_real(n.max));
        if n.degenerate {
            println!("degenerate=true");
        }
        tensor = n.tensor;
    }
    let (train, test) = split_train_test(&tensor, test_fraction, seed)?;
    write_coo(&train, train_out)?;
    write_coo(&test, test_out)?;
    println!("train={}", train.nnz());
    println!("test={}", test.nnz());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            eprintln!(
                "ptucker: error[invalid-argument]: {}",
                msg.trim_start_matches("error: ")
                    .lines()
                    .next()
                    .unwrap_or("")
            );
            eprint!("{}", msg.lines().skip(1).collect::<Vec<_>>().join("\n"));
            eprintln!();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Factorize(args) => factorize(args),
        Command::Predict {
            model,
            indices,
            out,
            zero_based,
        } => predict(&model, &indices, &out, zero_based),
        Command::Evaluate {
            model,
            data,
            as_test,
            zero_based,
        } => evaluate(&model, &data, as_test, zero_based),
        Command::Inspect {
            model,
            top,
            rank_by,
            data,
            zero_based,
        } => inspect(&model, top, rank_by, data.as_deref(), zero_based),
        Command::Split {
            input,
            test_fraction,
            seed,
            train_out,
            test_out,
            normalize,
            dims,
            zero_based,
        } => split(
            &input,
            test_fraction,
            seed,
            &train_out,
            &test_out,
            normalize,
            dims.as_deref(),
            zero_based,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
