//! Command-line subcommands. The binary only parses arguments and maps
//! errors to exit codes; everything else lives here so it can be tested.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GbmError, Result};
use crate::estimation::{fit, prepare_covariates};
use crate::inference::{full_augmented_fisher_oracle, standard_errors, wald_tests, InferenceContext, StandardErrorSet};
use crate::io::{
    numbered, read_json, read_params, read_table, write_counts, write_json, write_matrix, write_params,
    ConvergenceSummary, InputDigest, RunManifest, Table, MANIFEST_FILE,
};
use crate::metrics::{lrse, wmad, WeightedSeries, DEFAULT_BANDWIDTH};
use crate::model::{compute_eta, partial_residuals, residuals, CovariateSet, DataMatrix, Dims, FitConfig, PriorConfig};
use crate::simulation::{block_relative_mse, CoverageSamples, SchemeTriplet, SimScheme, COVERAGE_GRID};

/// Exit status for a successful run, including non-converged fits.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Exit status for an error.
pub fn exit_code(err: &GbmError) -> i32 {
    match err {
        GbmError::Size(_) | GbmError::Usage(_) => EXIT_USAGE,
        GbmError::Numeric(_) | GbmError::Constraint(_) => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

#[derive(Debug, Parser)]
#[command(name = "gbm", version, about = "Negative-binomial generalized bilinear models")]
pub struct Cli {
    /// Worker threads for inner loops; 1 gives bit-exact reruns.
    #[arg(long, global = true, env = "GBM_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a count matrix.
    Fit(FitArgs),
    /// Standard errors and Wald tests for a fitted model.
    Infer(InferArgs),
    /// Generate a synthetic data set with its true parameters.
    Simulate(SimulateArgs),
    /// Compare a fit (and optional standard errors) with the truth.
    Evaluate(EvaluateArgs),
    /// LRSE and WMAD of weighted series.
    Score(ScoreArgs),
    /// Link-scale residuals, optionally with retained effects added back.
    Residualize(ResidualizeArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// I×J counts.
    #[arg(long)]
    pub counts: PathBuf,
    /// I×K row covariates; intercept only when omitted.
    #[arg(long)]
    pub row_covariates: Option<PathBuf>,
    /// J×L column covariates; intercept only when omitted.
    #[arg(long)]
    pub col_covariates: Option<PathBuf>,
    /// Number of latent factors M.
    #[arg(long, default_value_t = 0)]
    pub latent: usize,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 5.0)]
    pub rho: f64,
    /// Pseudocount for log(Y + epsilon).
    #[arg(long, default_value_t = crate::model::DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Center covariates without scaling them.
    #[arg(long)]
    pub no_standardize: bool,
    /// Skip the dispersion bias correction.
    #[arg(long)]
    pub no_bias_correction: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON file with prior precisions and dispersion prior means.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub counts: PathBuf,
    /// Output directory of a previous fit.
    #[arg(long)]
    pub fit: PathBuf,
    /// Coefficients to test, e.g. `B:4` for column 4 of B. Repeatable.
    #[arg(long = "test")]
    pub tests: Vec<String>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Also invert the dense constraint-augmented Fisher information
    /// (small problems only).
    #[arg(long)]
    pub oracle_full_fisher: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// outcome/covariates/parameters, e.g. NB/Normal/Normal.
    #[arg(long, default_value = "NB/Normal/Normal")]
    pub scheme: String,
    /// IxJxKxLxM.
    #[arg(long, default_value = "200x50x2x2x1")]
    pub dims: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Output directory of a fit.
    #[arg(long)]
    pub fit: PathBuf,
    /// Truth directory written by `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Output directory of `infer`, for coverage curves.
    #[arg(long)]
    pub se: Option<PathBuf>,
    /// Report file (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// n×p values, one series per column.
    #[arg(long)]
    pub series: PathBuf,
    /// n×p positive precisions.
    #[arg(long)]
    pub weights: PathBuf,
    /// Even moving-average bandwidth.
    #[arg(long, default_value_t = DEFAULT_BANDWIDTH)]
    pub bandwidth: usize,
    /// Report file (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ResidualizeArgs {
    #[arg(long)]
    pub counts: PathBuf,
    /// Output directory of a fit.
    #[arg(long)]
    pub fit: PathBuf,
    /// 1-based X columns whose effects are added back. Comma separated.
    #[arg(long, value_delimiter = ',')]
    pub keep_x: Vec<usize>,
    /// 1-based Z columns whose effects are added back.
    #[arg(long, value_delimiter = ',')]
    pub keep_z: Vec<usize>,
    /// 1-based latent factors whose effects are added back.
    #[arg(long, value_delimiter = ',')]
    pub keep_u: Vec<usize>,
    /// Residual file (CSV).
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.unwrap_or(0);
    if threads > 0 {
        // A global pool can only be installed once per process; later
        // calls (in tests) keep the first setting.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let threads = rayon::current_num_threads();
    match cli.command {
        Command::Fit(a) => cmd_fit(&a, threads),
        Command::Infer(a) => cmd_infer(&a, threads),
        Command::Simulate(a) => cmd_simulate(&a, threads),
        Command::Evaluate(a) => cmd_evaluate(&a, threads),
        Command::Score(a) => cmd_score(&a, threads),
        Command::Residualize(a) => cmd_residualize(&a, threads),
    }
}

/// Collects inputs and outputs of a run and writes its manifest.
struct Recorder {
    command: &'static str,
    started: Instant,
    started_unix: u64,
    threads: usize,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

impl Recorder {
    fn new(command: &'static str, threads: usize) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self { command, started: Instant::now(), started_unix, threads, inputs: Vec::new(), outputs: Vec::new() }
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest::of(role, path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn outputs(&mut self, paths: Vec<PathBuf>) {
        for p in paths {
            self.output(&p);
        }
    }

    fn finish(
        self,
        path: &Path,
        seed: Option<u64>,
        config: serde_json::Value,
        convergence: Option<ConvergenceSummary>,
    ) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            threads: self.threads,
            config,
            inputs: self.inputs,
            outputs: self.outputs,
            convergence,
            started_unix_seconds: self.started_unix,
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        write_json(path, &manifest)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| GbmError::Io { path: dir.display().to_string(), source })
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("configuration types serialize")
}

fn read_counts(path: &Path) -> Result<DataMatrix> {
    let table = read_table(path)?;
    DataMatrix::from_f64(&table.data).map_err(|e| GbmError::Input(format!("{}: {e}", path.display())))
}

/// Reads a covariate file, prepending an intercept column when the first
/// column is not all ones. Returns raw values and column names.
fn read_covariates(path: Option<&Path>, n: usize, prefix: &str, role: &str) -> Result<(DMatrix<f64>, Vec<String>)> {
    let Some(path) = path else {
        return Ok((DMatrix::from_element(n, 1, 1.0), vec!["intercept".into()]));
    };
    let Table { header, data } = read_table(path)?;
    if data.nrows() != n {
        return Err(GbmError::Shape(format!(
            "{role} {} has {} rows but the counts imply {n}",
            path.display(),
            data.nrows()
        )));
    }
    let mut names = header.unwrap_or_else(|| numbered(prefix, data.ncols()));
    if data.column(0).iter().all(|&v| v == 1.0) {
        return Ok((data, names));
    }
    names.insert(0, "intercept".into());
    Ok((data.insert_column(0, 1.0), names))
}

/// Settings that `infer` and `residualize` reuse from a fit directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSettings {
    pub latent: usize,
    pub fit: FitConfig,
    pub prior: PriorConfig,
}

pub const SETTINGS_FILE: &str = "settings.json";
pub const DESIGN_X_FILE: &str = "design_x.csv";
pub const DESIGN_Z_FILE: &str = "design_z.csv";

/// Everything saved by a fit that later commands need.
struct SavedFit {
    params: crate::model::GbmParams,
    cov: CovariateSet,
    settings: FitSettings,
    x_names: Vec<String>,
    z_names: Vec<String>,
}

fn load_fit(dir: &Path) -> Result<SavedFit> {
    let (params, summary) = read_params(dir)?;
    let settings: FitSettings = read_json(&dir.join(SETTINGS_FILE))?;
    let x = read_table(&dir.join(DESIGN_X_FILE))?.data;
    let z = read_table(&dir.join(DESIGN_Z_FILE))?.data;
    let cov = CovariateSet::new(x, z)?;
    params.check_shapes(&cov)?;
    Ok(SavedFit { params, cov, settings, x_names: summary.x_names, z_names: summary.z_names })
}

fn check_counts(y: &DataMatrix, cov: &CovariateSet, counts: &Path) -> Result<()> {
    if y.nrows() != cov.nrows() || y.ncols() != cov.ncols() {
        return Err(GbmError::Shape(format!(
            "{} is {}x{} but the fit is {}x{}",
            counts.display(),
            y.nrows(),
            y.ncols(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    Ok(())
}

pub fn cmd_fit(args: &FitArgs, threads: usize) -> Result<()> {
    let mut rec = Recorder::new("fit", threads);
    let y = read_counts(&args.counts)?;
    rec.input("counts", &args.counts)?;
    let (x_raw, x_names) = read_covariates(args.row_covariates.as_deref(), y.nrows(), "x", "row covariates")?;
    let (z_raw, z_names) = read_covariates(args.col_covariates.as_deref(), y.ncols(), "z", "column covariates")?;
    for (role, path) in [("row_covariates", &args.row_covariates), ("col_covariates", &args.col_covariates)] {
        if let Some(p) = path {
            rec.input(role, p)?;
        }
    }
    let prior = match &args.prior {
        Some(p) => {
            rec.input("prior", p)?;
            read_json(p)?
        }
        None => PriorConfig::default(),
    };
    let config = FitConfig {
        rho: args.rho,
        tol: args.tol,
        max_iter: args.max_iter,
        epsilon: args.epsilon,
        standardize: !args.no_standardize,
        seed: args.seed,
        bias_correction: !args.no_bias_correction,
        ..FitConfig::default()
    };
    let cov = CovariateSet::new(
        prepare_covariates(&x_raw, config.standardize)?,
        prepare_covariates(&z_raw, config.standardize)?,
    )?;
    let result = fit(&y, &cov, args.latent, &prior, &config)?;

    create_dir(&args.out)?;
    rec.outputs(write_params(&args.out, &result.params, &x_names, &z_names)?);
    let settings = FitSettings { latent: args.latent, fit: config, prior };
    let extra: [(&str, &DMatrix<f64>, &[String]); 2] =
        [(DESIGN_X_FILE, &cov.x, &x_names), (DESIGN_Z_FILE, &cov.z, &z_names)];
    for (name, m, header) in extra {
        let path = args.out.join(name);
        write_matrix(&path, m, Some(header.to_vec()))?;
        rec.output(&path);
    }
    let path = args.out.join(SETTINGS_FILE);
    write_json(&path, &settings)?;
    rec.output(&path);
    let trace = DMatrix::from_fn(result.trace.len(), 2, |r, c| if c == 0 { r as f64 } else { result.trace[r] });
    let path = args.out.join("trace.csv");
    write_matrix(&path, &trace, Some(vec!["iteration".into(), "log_posterior".into()]))?;
    rec.output(&path);

    let convergence = ConvergenceSummary {
        converged: result.converged,
        iterations: result.iterations,
        final_log_posterior: *result.trace.last().expect("trace is nonempty"),
        clamp_events: result.clamp_events,
        warnings: result.warnings.clone(),
    };
    if !result.converged {
        log::warn!("fit did not converge within {} iterations", config.max_iter);
    }
    rec.finish(&args.out.join(MANIFEST_FILE), Some(args.seed), to_value(&settings), Some(convergence))
}

/// A requested coefficient test: one column of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestSpec {
    pub block: char,
    /// 1-based column.
    pub column: usize,
}

impl std::str::FromStr for TestSpec {
    type Err = GbmError;

    fn from_str(s: &str) -> Result<Self> {
        let usage = || GbmError::Usage(format!("test '{s}' must look like B:4 with a block among A B C U V S T"));
        let (block, column) = s.split_once(':').ok_or_else(usage)?;
        let block = match block.trim() {
            b @ ("A" | "B" | "C" | "U" | "V" | "S" | "T") => b.chars().next().expect("nonempty"),
            _ => return Err(usage()),
        };
        let column: usize = column.trim().parse().map_err(|_| usage())?;
        if column == 0 {
            return Err(usage());
        }
        Ok(Self { block, column })
    }
}

fn block_column(
    spec: TestSpec,
    params: &crate::model::GbmParams,
    se: &StandardErrorSet,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let vec_matrix = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    let (est, err) = match spec.block {
        'A' => (params.a.clone(), se.a.clone()),
        'B' => (params.b.clone(), se.b.clone()),
        'C' => (params.c.clone(), se.c.clone()),
        'U' => (params.u.clone(), se.u.clone()),
        'V' => (params.v.clone(), se.v.clone()),
        'S' => (vec_matrix(&params.s), vec_matrix(&se.s)),
        _ => (vec_matrix(&params.t), vec_matrix(&se.t)),
    };
    let col = spec.column - 1;
    if col >= est.ncols() {
        return Err(GbmError::Index(format!(
            "{} has {} columns; column {} requested",
            spec.block,
            est.ncols(),
            spec.column
        )));
    }
    Ok((est.column(col).iter().copied().collect(), err.column(col).iter().copied().collect()))
}

/// Writes `se_<block>.csv` for every block carrying standard errors.
pub fn write_standard_errors(
    dir: &Path,
    se: &StandardErrorSet,
    x_names: &[String],
    z_names: &[String],
) -> Result<Vec<PathBuf>> {
    let column = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    let factors = numbered("factor", se.u.ncols());
    let mut blocks = vec![
        ("A", se.a.clone(), x_names.to_vec()),
        ("B", se.b.clone(), z_names.to_vec()),
        ("C", se.c.clone(), z_names.to_vec()),
        ("S", column(&se.s), vec!["s".into()]),
        ("T", column(&se.t), vec!["t".into()]),
    ];
    if !factors.is_empty() {
        blocks.push(("U", se.u.clone(), factors.clone()));
        blocks.push(("V", se.v.clone(), factors));
    }
    let mut out = Vec::new();
    for (name, m, header) in blocks {
        let path = dir.join(format!("se_{name}.csv"));
        write_matrix(&path, &m, Some(header))?;
        out.push(path);
    }
    Ok(out)
}

/// Reads the files written by [`write_standard_errors`].
pub fn read_standard_errors(dir: &Path, dims: Dims) -> Result<StandardErrorSet> {
    let block = |name: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
        if cols == 0 {
            return Ok(DMatrix::zeros(rows, 0));
        }
        let path = dir.join(format!("se_{name}.csv"));
        let data = read_table(&path)?.data;
        if data.shape() != (rows, cols) {
            return Err(GbmError::Shape(format!("{} is not {rows}x{cols}", path.display())));
        }
        Ok(data)
    };
    let vector = |m: DMatrix<f64>| DVector::from_column_slice(m.as_slice());
    let Dims { i, j, k, l, m } = dims;
    Ok(StandardErrorSet {
        a: block("A", j, k)?,
        b: block("B", i, l)?,
        c: block("C", k, l)?,
        u: block("U", i, m)?,
        v: block("V", j, m)?,
        s: vector(block("S", i, 1)?),
        t: vector(block("T", j, 1)?),
    })
}

/// Wald table for one tested column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaldTable {
    pub block: String,
    pub column: usize,
    pub level: f64,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub p_value: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
}

pub fn cmd_infer(args: &InferArgs, threads: usize) -> Result<()> {
    let mut rec = Recorder::new("infer", threads);
    let tests: Vec<TestSpec> = args.tests.iter().map(|t| t.parse()).collect::<Result<_>>()?;
    let saved = load_fit(&args.fit)?;
    let y = read_counts(&args.counts)?;
    check_counts(&y, &saved.cov, &args.counts)?;
    rec.input("counts", &args.counts)?;
    for name in ["params.json", SETTINGS_FILE, DESIGN_X_FILE, DESIGN_Z_FILE] {
        rec.input("fit", &args.fit.join(name))?;
    }
    let prior = saved.settings.prior;
    let result = standard_errors(y.values(), &saved.cov, &saved.params, &prior)?;
    let se = result.errors();
    let oracle = if args.oracle_full_fisher {
        let ctx = InferenceContext::new(y.values(), &saved.cov, &saved.params, &prior)?;
        Some(full_augmented_fisher_oracle(&ctx)?)
    } else {
        None
    };

    create_dir(&args.out)?;
    rec.outputs(write_standard_errors(&args.out, &se, &saved.x_names, &saved.z_names)?);
    for spec in &tests {
        let (est, err) = block_column(*spec, &saved.params, &se)?;
        let wald = wald_tests(&est, &err, args.level)?;
        let table = WaldTable {
            block: spec.block.to_string(),
            column: spec.column,
            level: args.level,
            estimate: est,
            se: err,
            p_value: wald.p_values,
            ci_lower: wald.ci_lower,
            ci_upper: wald.ci_upper,
        };
        let rows = table.estimate.len();
        let data = DMatrix::from_fn(rows, 5, |r, c| match c {
            0 => table.estimate[r],
            1 => table.se[r],
            2 => table.p_value[r],
            3 => table.ci_lower[r],
            _ => table.ci_upper[r],
        });
        let stem = format!("wald_{}{}", spec.block, spec.column);
        let header = ["estimate", "se", "p_value", "ci_lower", "ci_upper"].map(String::from).to_vec();
        let csv = args.out.join(format!("{stem}.csv"));
        write_matrix(&csv, &data, Some(header))?;
        rec.output(&csv);
        let json = args.out.join(format!("{stem}.json"));
        write_json(&json, &table)?;
        rec.output(&json);
    }
    if let Some(oracle) = oracle {
        let blocks = [
            ("A", &oracle.var_a),
            ("B", &oracle.var_b),
            ("C", &oracle.var_c),
            ("U", &oracle.var_u),
            ("V", &oracle.var_v),
        ];
        for (name, var) in blocks {
            if var.ncols() == 0 {
                continue;
            }
            let path = args.out.join(format!("oracle_se_{name}.csv"));
            write_matrix(&path, &var.map(|v| v.max(0.0).sqrt()), None)?;
            rec.output(&path);
        }
    }
    if !result.warnings.is_empty() {
        let path = args.out.join("warnings.json");
        write_json(&path, &result.warnings)?;
        rec.output(&path);
    }
    let config = serde_json::json!({
        "prior": prior,
        "tests": args.tests,
        "level": args.level,
        "oracle_full_fisher": args.oracle_full_fisher,
    });
    rec.finish(&args.out.join(MANIFEST_FILE), None, config, None)
}

/// Parses `IxJxKxLxM`.
pub fn parse_dims(s: &str) -> Result<Dims> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| GbmError::Usage(format!("dims '{s}' must look like 1000x100x4x2x3")))?;
    let [i, j, k, l, m] = parts[..] else {
        return Err(GbmError::Usage(format!("dims '{s}' must have five parts IxJxKxLxM")));
    };
    Ok(Dims { i, j, k, l, m })
}

pub fn cmd_simulate(args: &SimulateArgs, threads: usize) -> Result<()> {
    let mut rec = Recorder::new("simulate", threads);
    let triplet: SchemeTriplet = args.scheme.parse().map_err(|e: GbmError| match e {
        GbmError::Input(msg) => GbmError::Usage(msg),
        other => other,
    })?;
    let dims = parse_dims(&args.dims)?;
    let scheme = SimScheme::new(triplet, dims, args.seed)?;
    let (y, truth) = crate::simulation::simulate(&scheme, args.replicate)?;

    create_dir(&args.out)?;
    let path = args.out.join("Y.csv");
    write_counts(&path, y.counts())?;
    rec.output(&path);
    let x_names = numbered("x", dims.k);
    let z_names = numbered("z", dims.l);
    for (name, m, header) in [("X.csv", &truth.cov.x, &x_names), ("Z.csv", &truth.cov.z, &z_names)] {
        let path = args.out.join(name);
        write_matrix(&path, m, Some(header.clone()))?;
        rec.output(&path);
    }
    let truth_dir = args.out.join("truth");
    rec.outputs(write_params(&truth_dir, &truth.params0, &x_names, &z_names)?);
    for (name, m) in [("mu.csv", &truth.mu0), ("r.csv", &truth.r0)] {
        let path = truth_dir.join(name);
        write_matrix(&path, m, None)?;
        rec.output(&path);
    }
    let config = serde_json::json!({
        "scheme": triplet.to_string(),
        "dims": dims,
        "replicate": args.replicate,
        "covariate_clamp_events": truth.clamp_events,
    });
    rec.finish(&args.out.join(MANIFEST_FILE), Some(args.seed), config, None)
}

/// Coverage of one block: empirical coverage on the target grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockCoverage {
    pub block: String,
    pub entries: usize,
    pub coverage_50: f64,
    pub coverage_95: f64,
    pub curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub relative_mse: crate::simulation::BlockErrors,
    pub coverage: Vec<BlockCoverage>,
}

pub fn evaluate(
    est: &crate::model::GbmParams,
    truth: &crate::model::GbmParams,
    se: Option<&StandardErrorSet>,
) -> Result<EvaluationReport> {
    if est.dims() != truth.dims() {
        return Err(GbmError::Shape(format!(
            "estimate dims {:?} differ from truth dims {:?}",
            est.dims(),
            truth.dims()
        )));
    }
    let relative_mse = block_relative_mse(est, truth)?;
    let mut coverage = Vec::new();
    if let Some(se) = se {
        let mut samples = CoverageSamples::default();
        samples.record(est, se, truth)?;
        for (name, block) in samples.blocks() {
            if block.is_empty() {
                continue;
            }
            let curve = block.coverage_curve()?;
            debug_assert_eq!(curve.len(), COVERAGE_GRID);
            coverage.push(BlockCoverage {
                block: name.into(),
                entries: block.len(),
                coverage_50: block.coverage_at(0.5)?,
                coverage_95: block.coverage_at(0.95)?,
                curve,
            });
        }
    }
    Ok(EvaluationReport { relative_mse, coverage })
}

pub fn cmd_evaluate(args: &EvaluateArgs, threads: usize) -> Result<()> {
    let mut rec = Recorder::new("evaluate", threads);
    let (est, _) = read_params(&args.fit)?;
    let (truth, _) = read_params(&args.truth)?;
    rec.input("fit", &args.fit.join("params.json"))?;
    rec.input("truth", &args.truth.join("params.json"))?;
    let se = match &args.se {
        Some(dir) => Some(read_standard_errors(dir, est.dims())?),
        None => None,
    };
    let report = evaluate(&est, &truth, se.as_ref())?;
    write_json(&args.out, &report)?;
    rec.output(&args.out);
    let manifest = manifest_beside(&args.out);
    rec.finish(&manifest, None, serde_json::json!({ "se": args.se }), None)
}

/// `<report>.manifest.json` next to a single-file output.
fn manifest_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesScore {
    pub series: String,
    pub lrse: f64,
    pub wmad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub bandwidth: usize,
    pub scores: Vec<SeriesScore>,
}

/// LRSE and WMAD for each column of `x` with precisions `w`.
pub fn score_columns(x: &Table, w: &Table, bandwidth: usize) -> Result<ScoreReport> {
    if x.data.shape() != w.data.shape() {
        return Err(GbmError::Shape(format!("series are {:?} but weights are {:?}", x.data.shape(), w.data.shape())));
    }
    let names = x.header.clone().unwrap_or_else(|| numbered("series", x.data.ncols()));
    let scores = (0..x.data.ncols())
        .map(|c| {
            let series = WeightedSeries::new(
                x.data.column(c).iter().copied().collect(),
                w.data.column(c).iter().copied().collect(),
                bandwidth,
            )
            .map_err(|e| GbmError::Input(format!("series {}: {e}", names[c])))?;
            Ok(SeriesScore { series: names[c].clone(), lrse: lrse(&series)?, wmad: wmad(&series)? })
        })
        .collect::<Result<_>>()?;
    Ok(ScoreReport { bandwidth, scores })
}

pub fn cmd_score(args: &ScoreArgs, threads: usize) -> Result<()> {
    let mut rec = Recorder::new("score", threads);
    let x = read_table(&args.series)?;
    let w = read_table(&args.weights)?;
    rec.input("series", &args.series)?;
    rec.input("weights", &args.weights)?;
    let report = score_columns(&x, &w, args.bandwidth)?;
    write_json(&args.out, &report)?;
    rec.output(&args.out);
    rec.finish(&manifest_beside(&args.out), None, serde_json::json!({ "bandwidth": args.bandwidth }), None)
}

pub fn cmd_residualize(args: &ResidualizeArgs, threads: usize) -> Result<()> {
    let mut rec = Recorder::new("residualize", threads);
    let saved = load_fit(&args.fit)?;
    let y = read_counts(&args.counts)?;
    check_counts(&y, &saved.cov, &args.counts)?;
    rec.input("counts", &args.counts)?;
    rec.input("fit", &args.fit.join("params.json"))?;
    let zero_based = |keep: &[usize], what: &str| -> Result<Vec<usize>> {
        keep.iter()
            .map(|&k| k.checked_sub(1).ok_or_else(|| GbmError::Index(format!("{what} indices are 1-based"))))
            .collect()
    };
    let eta = compute_eta(&saved.params, &saved.cov)?;
    let resid = residuals(y.values(), &eta, saved.settings.fit.epsilon)?;
    let out = partial_residuals(
        &saved.params,
        &saved.cov,
        &resid,
        &zero_based(&args.keep_x, "X")?,
        &zero_based(&args.keep_z, "Z")?,
        &zero_based(&args.keep_u, "U")?,
    )?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_matrix(&args.out, &out, None)?;
    rec.output(&args.out);
    let config = serde_json::json!({
        "keep_x": args.keep_x,
        "keep_z": args.keep_z,
        "keep_u": args.keep_u,
        "epsilon": saved.settings.fit.epsilon,
    });
    rec.finish(&manifest_beside(&args.out), None, config, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_spec_parsing() {
        assert_eq!("B:4".parse::<TestSpec>().unwrap(), TestSpec { block: 'B', column: 4 });
        assert!("D:1".parse::<TestSpec>().is_err());
        assert!("B:0".parse::<TestSpec>().is_err());
        assert!("B4".parse::<TestSpec>().is_err());
    }

    #[test]
    fn dims_parsing() {
        assert_eq!(parse_dims("1000x100x4x2x3").unwrap(), Dims { i: 1000, j: 100, k: 4, l: 2, m: 3 });
        assert!(parse_dims("10x10x1x1").is_err());
        assert!(parse_dims("10xax1x1x1").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&GbmError::Numeric("x".into())), EXIT_NUMERIC);
        assert_eq!(exit_code(&GbmError::Input("x".into())), EXIT_INPUT);
        assert_eq!(exit_code(&GbmError::Size("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&GbmError::Usage("x".into())), EXIT_USAGE);
    }

    #[test]
    fn scoring_constant_series() {
        let x = Table::new(DMatrix::from_element(50, 2, 3.0));
        let w = Table::new(DMatrix::from_fn(50, 2, |i, _| 1.0 + i as f64));
        let report = score_columns(&x, &w, 10).unwrap();
        assert!(report.scores.iter().all(|s| s.lrse.abs() < 1e-14 && s.wmad.abs() < 1e-12));
        let bad = Table::new(DMatrix::from_element(50, 2, 0.0));
        assert!(matches!(score_columns(&x, &bad, 10), Err(GbmError::Input(_))));
    }
}
