use std::collections::BTreeMap;
use std::ffi::OsStr;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use taskmerge_core::theory::{run_suites, Suite, SuiteConfig};
use taskmerge_core::{
    compute_stats, cosine_matrix, fixed_coefficients, metagpt_coefficients, open_checkpoint, run_recipe,
    weight_average_coefficients, CheckpointHandle, Dtype, Error, KeyPolicy, MergeRecipe, StatsOptions, StatsReport,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "taskmerge",
    version,
    about = "Merge fine-tuned checkpoints with norm-based task arithmetic"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print tensor names, dtypes, shapes and metadata of a checkpoint.
    Inspect {
        #[arg(value_parser = non_empty_path)]
        path: PathBuf,
    },
    /// Squared task-vector norms, optionally with the cosine matrix.
    Stats {
        #[arg(value_parser = non_empty_path)]
        base: PathBuf,
        #[arg(required = true, value_parser = non_empty_path)]
        models: Vec<PathBuf>,
        /// Also compute pairwise cosine similarities.
        #[arg(long)]
        gram: bool,
        /// Fail when a model lacks a tensor present in the base.
        #[arg(long)]
        strict: bool,
    },
    /// Merging coefficients from a stats report or directly from checkpoints.
    Coeffs {
        /// Stats report written by `taskmerge stats`.
        #[arg(long, conflicts_with = "paths", value_parser = non_empty_path)]
        stats: Option<PathBuf>,
        /// BASE followed by one or more MODEL checkpoints.
        #[arg(value_parser = non_empty_path)]
        paths: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Method::Metagpt)]
        method: Method,
        /// Coefficient for `--method fixed`.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Run a merge recipe.
    Merge {
        #[arg(long, value_parser = non_empty_path)]
        recipe: PathBuf,
        /// Also write the report JSON to this file.
        #[arg(long, value_parser = non_empty_path)]
        report: Option<PathBuf>,
    },
    /// Run the numerical verification suites.
    Verify {
        /// lemma1, thm1, thm2, thm3, thm4, hessian or all.
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fix the parameter dimension instead of drawing it per trial.
        #[arg(long)]
        dim: Option<usize>,
        /// Fix the task count instead of drawing it per trial.
        #[arg(long)]
        tasks: Option<usize>,
        /// Use the 1 - λ² self weight; bound suites then only record gaps.
        #[arg(long)]
        legacy_indicator: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Metagpt,
    Fixed,
    WeightAverage,
}

fn non_empty_path(s: &str) -> Result<PathBuf, String> {
    if s.is_empty() {
        Err("path must not be empty".into())
    } else {
        Ok(PathBuf::from(s))
    }
}

enum Failure {
    Error(Error),
    Violation,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation) => ExitCode::from(EXIT_VIOLATION),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { EXIT_USAGE } else { EXIT_DATA })
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }
        .into()),
        _ => Ok(()),
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Inspect { path } => inspect(&path),
        Command::Stats {
            base,
            models,
            gram,
            strict,
        } => stats(&base, &models, gram, strict),
        Command::Coeffs {
            stats,
            paths,
            method,
            lambda,
        } => coeffs(stats.as_deref(), &paths, method, lambda),
        Command::Merge { recipe, report } => merge(&recipe, report.as_deref()),
        Command::Verify {
            suite,
            trials,
            seed,
            dim,
            tasks,
            legacy_indicator,
        } => verify(&suite, trials, seed, dim, tasks, legacy_indicator),
    }
}

#[derive(Serialize)]
struct TensorEntry<'a> {
    name: &'a str,
    dtype: Dtype,
    shape: &'a [usize],
    params: usize,
}

#[derive(Serialize)]
struct InspectReport<'a> {
    path: &'a Path,
    total_params: u64,
    tensors: Vec<TensorEntry<'a>>,
    metadata: Option<&'a BTreeMap<String, String>>,
}

fn inspect(path: &Path) -> Result<(), Failure> {
    let h = open_checkpoint(path)?;
    let report = InspectReport {
        path,
        total_params: h.total_params(),
        tensors: h
            .index()
            .values()
            .map(|m| TensorEntry {
                name: &m.name,
                dtype: m.dtype,
                shape: &m.shape,
                params: m.numel(),
            })
            .collect(),
        metadata: h.metadata(),
    };
    print_json(&report)
}

/// File stems as task ids; falls back to full paths when stems collide.
fn task_ids(models: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = models
        .iter()
        .map(|p| p.file_stem().and_then(OsStr::to_str).unwrap_or("task").to_string())
        .collect();
    let mut seen = std::collections::BTreeSet::new();
    if stems.iter().all(|s| seen.insert(s.as_str())) {
        stems
    } else {
        models.iter().map(|p| p.display().to_string()).collect()
    }
}

fn open_all(base: &Path, models: &[PathBuf]) -> Result<(CheckpointHandle, Vec<CheckpointHandle>), Error> {
    let base = open_checkpoint(base)?;
    let models = models.iter().map(open_checkpoint).collect::<Result<Vec<_>, _>>()?;
    Ok((base, models))
}

fn stats(base: &Path, models: &[PathBuf], gram: bool, strict: bool) -> Result<(), Failure> {
    let (base, handles) = open_all(base, models)?;
    let refs: Vec<&CheckpointHandle> = handles.iter().collect();
    let opts = StatsOptions {
        want_gram: gram,
        policy: if strict { KeyPolicy::Strict } else { KeyPolicy::Lenient },
        breakdown: false,
    };
    let (stats, coverage) = compute_stats(&base, &refs, &task_ids(models), &opts)?;
    for (name, tasks) in &coverage.missing {
        eprintln!("warning: {name} missing from {}", tasks.join(", "));
    }
    let cosine = if gram { Some(cosine_matrix(&stats)?) } else { None };
    print_json(&StatsReport::new(&stats, cosine.as_ref()))
}

fn coeffs(stats_file: Option<&Path>, paths: &[PathBuf], method: Method, lambda: Option<f64>) -> Result<(), Failure> {
    if lambda.is_some() && !matches!(method, Method::Fixed) {
        return Err(Error::InvalidArgument("--lambda only applies to --method fixed".into()).into());
    }
    let stats = match (stats_file, paths) {
        (Some(file), _) => {
            let text = std::fs::read_to_string(file).map_err(|e| Error::Io {
                path: file.to_path_buf(),
                source: e,
            })?;
            serde_json::from_str::<StatsReport>(&text)
                .map_err(Error::from)?
                .to_stats()?
        }
        (None, [base, models @ ..]) if !models.is_empty() => {
            let (base, handles) = open_all(base, models)?;
            let refs: Vec<&CheckpointHandle> = handles.iter().collect();
            let opts = StatsOptions {
                policy: KeyPolicy::Lenient,
                ..Default::default()
            };
            compute_stats(&base, &refs, &task_ids(models), &opts)?.0
        }
        _ => return Err(Error::InvalidArgument("pass --stats FILE or BASE MODEL...".into()).into()),
    };
    let set = match method {
        Method::Metagpt => metagpt_coefficients(&stats)?,
        Method::Fixed => fixed_coefficients(stats.task_ids.clone(), lambda.unwrap_or(0.3))?,
        Method::WeightAverage => weight_average_coefficients(stats.task_ids.clone())?,
    };
    print_json(&set)
}

fn merge(recipe: &Path, report_path: Option<&Path>) -> Result<(), Failure> {
    let recipe = MergeRecipe::from_file(recipe)?;
    let start = Instant::now();
    let report = run_recipe(&recipe)?;
    eprintln!(
        "merged {} tensors ({} parameters) into {} in {:.2?}",
        report.tensor_count,
        report.total_params,
        recipe.output.display(),
        start.elapsed()
    );
    if let Some(path) = report_path {
        let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    print_json(&report)
}

fn verify(
    suite: &str,
    trials: usize,
    seed: u64,
    dim: Option<usize>,
    tasks: Option<usize>,
    legacy_indicator: bool,
) -> Result<(), Failure> {
    let suites = Suite::parse_selection(suite)?;
    let cfg = SuiteConfig {
        trials,
        seed,
        dim,
        tasks,
        legacy_indicator,
        ..Default::default()
    };
    let report = run_suites(&suites, &cfg)?;
    print_json(&report)?;
    if report.passed {
        Ok(())
    } else {
        for s in report.suites.iter().filter(|s| !s.passed()) {
            eprintln!("{}: {} violations (max gap {:e})", s.theorem, s.violations, s.max_gap);
        }
        Err(Failure::Violation)
    }
}
