//! Subcommand implementations.
//!
//! Every command is a thin wrapper: read files, resolve settings (flag over
//! config file over default), call the library, write the library's outputs.
//! No estimate, interval, or score is computed here — reruns with the same
//! inputs and seed produce byte-identical files at any thread count because
//! the library guarantees it.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use splitfit::data::Dataset;
use splitfit::models::{
    build_score_scaling, fit_activity_params, score_column, ModelKind, ScoreParamsFile,
};
use splitfit::sim::{
    coordinate_names, run_b_sweep, run_coverage, write_bsweep_csv, write_bsweep_per_split_csv,
    write_coverage_records_csv, write_coverage_summary_csv, write_coverage_text,
    write_covariance_csv, write_estimates_csv, BSweepConfig, CoverageConfig,
};
use splitfit::split::{fit_with_covariance, validity_minimums, SplitAssignment};
use splitfit::stacked::fit_stacked;

use crate::config::{resolve_seed, FileConfig, SolverFlags};

fn read_table(path: &Path) -> anyhow::Result<Dataset<f64>> {
    Dataset::read_csv_path(path).with_context(|| format!("cannot read {}", path.display()))
}

fn create_in(dir: &Path, name: &str) -> anyhow::Result<(PathBuf, File)> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let path = dir.join(name);
    let file =
        File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok((path, file))
}

fn require_model(flag: &Option<String>, file: &FileConfig) -> anyhow::Result<ModelKind> {
    let name = flag
        .clone()
        .or_else(|| file.model.clone())
        .context("a model is required: pass --model or set `model` in the config file")?;
    Ok(ModelKind::parse(&name)?)
}

/// Fit the split-aggregated estimator on a CSV table.
#[derive(Args, Debug)]
pub struct FitArgs {
    /// Input CSV table
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Directory for estimates.csv, covariance.csv, and summary.txt
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Model name (mean, linear, logistic, activity)
    #[arg(long)]
    pub model: Option<String>,
    /// Number of split columns [default: 25]
    #[arg(long)]
    pub b: Option<usize>,
    /// Stage-1 inclusion probability [default: 0.5]
    #[arg(long)]
    pub pi: Option<f64>,
    /// Confidence level of the intervals [default: 0.95]
    #[arg(long)]
    pub level: Option<f64>,
    /// Seed for the split assignment (generated and printed when omitted)
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file supplying defaults for omitted flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

pub fn fit(args: &FitArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let model = require_model(&args.model, &file)?;
    let b = args.b.or(file.b).unwrap_or(25);
    let pi = args.pi.or(file.pi).unwrap_or(0.5);
    let level = args.level.or(file.level).unwrap_or(0.95);
    let seed = resolve_seed(args.seed, &file);
    let solver = args.solver.resolve(&file);

    let data = read_table(&args.input)?.select(model.columns())?;
    let system = model.system(&data)?;
    let n = data.n_rows();
    writeln!(out, "seed: {seed}")?;

    let (min_ones, min_zeros) = validity_minimums(n, system.dim_first(), system.dim_second());
    let splits = SplitAssignment::generate_valid(n, b, pi, seed, min_ones, min_zeros)?;
    let inference = fit_with_covariance(&system, &data, &splits, &solver)?;

    let names = coordinate_names(system.dim_first(), system.dim_second());
    let estimate = inference.fit.combined();
    let (path, file_out) = create_in(&args.out_dir, "estimates.csv")?;
    write_estimates_csv(&names, &estimate, &inference.covariance, level, file_out)?;
    writeln!(out, "wrote {}", path.display())?;
    let (path, file_out) = create_in(&args.out_dir, "covariance.csv")?;
    write_covariance_csv(&names, &inference.covariance.covariance, file_out)?;
    writeln!(out, "wrote {}", path.display())?;

    let (path, mut file_out) = create_in(&args.out_dir, "summary.txt")?;
    writeln!(
        file_out,
        "model {model}, {n} rows, pi {pi}, B {b} (used {}), seed {seed}, \
         {} regenerated columns, {} failed splits",
        inference.fit.b_used,
        splits.regenerated(),
        inference.fit.failures.len()
    )?;
    for failure in &inference.fit.failures {
        writeln!(file_out, "failed: {}", failure.message)?;
    }
    writeln!(out, "wrote {}", path.display())?;
    writeln!(
        out,
        "fitted {} of {b} splits ({} failed)",
        inference.fit.b_used,
        inference.fit.failures.len()
    )?;
    Ok(())
}

/// Fit the full-sample stacked estimator on a CSV table.
#[derive(Args, Debug)]
pub struct StackedArgs {
    /// Input CSV table
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Directory for estimates.csv, covariance.csv, and summary.txt
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Model name (mean, linear, logistic, activity)
    #[arg(long)]
    pub model: Option<String>,
    /// Confidence level of the intervals [default: 0.95]
    #[arg(long)]
    pub level: Option<f64>,
    /// TOML file supplying defaults for omitted flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

pub fn stacked(args: &StackedArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let model = require_model(&args.model, &file)?;
    let level = args.level.or(file.level).unwrap_or(0.95);
    let solver = args.solver.resolve(&file);

    let data = read_table(&args.input)?.select(model.columns())?;
    let system = model.system(&data)?;
    let fit = fit_stacked(&system, &data, &solver)?;

    let names = coordinate_names(system.dim_first(), system.dim_second());
    let (path, file_out) = create_in(&args.out_dir, "estimates.csv")?;
    write_estimates_csv(&names, &fit.combined(), &fit.covariance, level, file_out)?;
    writeln!(out, "wrote {}", path.display())?;
    let (path, file_out) = create_in(&args.out_dir, "covariance.csv")?;
    write_covariance_csv(&names, &fit.covariance.covariance, file_out)?;
    writeln!(out, "wrote {}", path.display())?;
    let (path, mut file_out) = create_in(&args.out_dir, "summary.txt")?;
    writeln!(
        file_out,
        "model {model}, {} rows, stacked full-sample fit, stage-1 iterations {}, \
         stage-2 iterations {}",
        data.n_rows(),
        fit.first.iterations,
        fit.second.iterations
    )?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

/// Draw a synthetic table from a model's generating law.
#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Output CSV path
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Model name (mean, linear, logistic, activity)
    #[arg(long)]
    pub model: Option<String>,
    /// Number of rows to draw
    #[arg(long)]
    pub n: Option<usize>,
    /// Seed of the draw (generated and printed when omitted)
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file supplying defaults for omitted flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

pub fn simulate(args: &SimulateArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let model = require_model(&args.model, &file)?;
    let n = args
        .n
        .or(file.n)
        .context("a sample size is required: pass --n or set `n` in the config file")?;
    let seed = resolve_seed(args.seed, &file);
    writeln!(out, "seed: {seed}")?;

    let data = model.simulate(n, seed)?;
    data.write_csv_path(&args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    writeln!(out, "wrote {}", args.out.display())?;
    Ok(())
}

/// Run a coverage study over an (n, B) grid.
#[derive(Args, Debug)]
pub struct CoverageArgs {
    /// Directory for coverage_summary.csv, coverage_records.csv, summary.txt
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Model name (mean, linear, logistic, activity)
    #[arg(long)]
    pub model: Option<String>,
    /// Sample sizes of the grid [default: 50,100,250,500,1000]
    #[arg(long, value_name = "N", value_delimiter = ',', num_args = 1..)]
    pub n: Vec<usize>,
    /// Split counts of the grid [default: 1,25]
    #[arg(long, value_name = "B", value_delimiter = ',', num_args = 1..)]
    pub b: Vec<usize>,
    /// Replications per grid cell [default: 2000]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Stage-1 inclusion probability [default: 0.5]
    #[arg(long)]
    pub pi: Option<f64>,
    /// Confidence level of the intervals [default: 0.95]
    #[arg(long)]
    pub level: Option<f64>,
    /// Master seed (generated and printed when omitted)
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file supplying defaults for omitted flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

pub fn coverage(args: &CoverageArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let model = require_model(&args.model, &file)?;
    let seed = resolve_seed(args.seed, &file);
    writeln!(out, "seed: {seed}")?;

    let mut config = CoverageConfig::new(model);
    if !args.n.is_empty() {
        config.sample_sizes = args.n.clone();
    }
    if !args.b.is_empty() {
        config.split_counts = args.b.clone();
    }
    if let Some(reps) = args.reps.or(file.replications) {
        config.replications = reps;
    }
    if let Some(pi) = args.pi.or(file.pi) {
        config.pi = pi;
    }
    if let Some(level) = args.level.or(file.level) {
        config.level = level;
    }
    config.master_seed = seed;
    config.solver = args.solver.resolve(&file);

    let report = run_coverage(&config)?;

    let (path, file_out) = create_in(&args.out_dir, "coverage_summary.csv")?;
    write_coverage_summary_csv(&report, file_out)?;
    writeln!(out, "wrote {}", path.display())?;
    let (path, file_out) = create_in(&args.out_dir, "coverage_records.csv")?;
    write_coverage_records_csv(&report, file_out)?;
    writeln!(out, "wrote {}", path.display())?;
    let (path, file_out) = create_in(&args.out_dir, "summary.txt")?;
    write_coverage_text(&report, file_out)?;
    writeln!(out, "wrote {}", path.display())?;
    write_coverage_text(&report, &mut *out)?;
    Ok(())
}

/// Fit activity-score parameters on a training table.
#[derive(Args, Debug)]
pub struct ScoreBuildArgs {
    /// Training CSV with W, Y, the activity columns, and covariates
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Output JSON path for the fitted parameters and rescaling
    #[arg(long, value_name = "FILE")]
    pub params_out: PathBuf,
    /// TOML file supplying defaults for omitted flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

pub fn score_build(args: &ScoreBuildArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let solver = args.solver.resolve(&file);

    let data = read_table(&args.input)?.select(ModelKind::Activity.columns())?;
    let params = fit_activity_params(&data, &solver)?;
    let scaling = build_score_scaling(&params, &data)?;
    let params_file = ScoreParamsFile::new(params, scaling);

    let out_file = File::create(&args.params_out)
        .with_context(|| format!("cannot create {}", args.params_out.display()))?;
    params_file.write_json(out_file)?;
    writeln!(out, "wrote {}", args.params_out.display())?;
    Ok(())
}

/// Append a 0-100 score column to an activity table.
#[derive(Args, Debug)]
pub struct ScoreApplyArgs {
    /// CSV containing the activity columns (other columns pass through)
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Fitted parameter JSON written by score-build
    #[arg(long, value_name = "FILE")]
    pub params: PathBuf,
    /// Output CSV path: the input table plus a trailing `score` column
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

pub fn score_apply(args: &ScoreApplyArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let params_file = File::open(&args.params)
        .with_context(|| format!("cannot read {}", args.params.display()))?;
    let params = ScoreParamsFile::read_json(params_file)?;

    let mut data = read_table(&args.input)?;
    let scores = score_column(&params.params, &params.scaling, &data)?;
    data.push_column("score", &scores)?;
    data.write_csv_path(&args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    writeln!(out, "wrote {} ({} rows scored)", args.out.display(), scores.len())?;
    Ok(())
}

/// Sweep the number of splits on one dataset.
#[derive(Args, Debug)]
pub struct BSweepArgs {
    /// Input CSV table
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Directory for bsweep.csv and bsweep_per_split.csv
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Model name (mean, linear, logistic, activity)
    #[arg(long)]
    pub model: Option<String>,
    /// Largest split count of the sweep [default: 50]
    #[arg(long)]
    pub b_max: Option<usize>,
    /// Stage-1 inclusion probability [default: 0.5]
    #[arg(long)]
    pub pi: Option<f64>,
    /// Confidence level of the intervals [default: 0.95]
    #[arg(long)]
    pub level: Option<f64>,
    /// Seed for the split assignment (generated and printed when omitted)
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file supplying defaults for omitted flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

pub fn b_sweep(args: &BSweepArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let model = require_model(&args.model, &file)?;
    let seed = resolve_seed(args.seed, &file);
    writeln!(out, "seed: {seed}")?;

    let data = read_table(&args.input)?.select(model.columns())?;
    let system = model.system(&data)?;
    let config = BSweepConfig {
        b_max: args.b_max.or(file.b_max).unwrap_or(50),
        pi: args.pi.or(file.pi).unwrap_or(0.5),
        level: args.level.or(file.level).unwrap_or(0.95),
        seed,
        target_coordinate: None,
        solver: args.solver.resolve(&file),
    };
    let report = run_b_sweep(&system, &data, &config)?;

    let (path, file_out) = create_in(&args.out_dir, "bsweep.csv")?;
    write_bsweep_csv(&report, file_out)?;
    writeln!(out, "wrote {}", path.display())?;
    let (path, file_out) = create_in(&args.out_dir, "bsweep_per_split.csv")?;
    write_bsweep_per_split_csv(&report, file_out)?;
    writeln!(out, "wrote {}", path.display())?;

    let failed = report.per_split.iter().filter(|r| !r.converged).count();
    writeln!(out, "swept B=1..{} ({failed} failed splits)", report.b_max)?;
    Ok(())
}
