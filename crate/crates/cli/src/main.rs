//! `equisplit`: equilibrium splits, concordance curves, Monte Carlo
//! quasi-equilibria and a normality diagnostic from the command line.
//!
//! Exit status is 0 on success, 1 when the computation rejects its inputs
//! and 2 for malformed command lines.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use equisplit::concordance::{delta_curves, equilibrium_curve_a, solve_qstar, Kappa, Method};
use equisplit::dataio::{
    load_dataset, read_json, to_csv_string, to_json_string, write_csv, write_json, ColumnRef, DatasetSpec, Format,
    McMode, RadialSpec, RunConfig,
};
use equisplit::elliptic_mc::{ReplicateExperiment, StudentSweep, GENERATOR_ID};
use equisplit::equilibrium::{balance_report, normality_distance, normality_test, solve_equilibrium_k};
use equisplit::{Error, GaussianModel, MatrixKind};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "equisplit", version, about = "Equilibrium partitions of Gaussian and elliptic populations")]
struct Cli {
    /// Worker threads for parallel stages (results do not depend on it)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Equilibrium split into k groups of equal conditional covariance.
    ///
    /// Output (JSON): splits, root_x, residual, groups[{interval, moments}]
    /// and, with --model, conditional_matrices. With --format csv: one row per
    /// group (q1, q2, mass, mean, variance).
    Solve(SolveArgs),
    /// Tail-minus-centre concordance curves of the conditional Gaussian copula.
    ///
    /// Default output (CSV): q,r,delta_rho,delta_tau for every (q, r) pair.
    /// --qstar prints the column qstar; --A prints r,kappa,a,delta,other_roots.
    Curves(CurvesArgs),
    /// Monte Carlo quasi-equilibria over random scale matrices, or the
    /// Student t degrees-of-freedom sweep with --student.
    ///
    /// Writes summary.csv, replicates.csv, curves.csv (or sweep.csv and
    /// sweep_qhat.csv) and run.json into the output directory and prints the
    /// summary table on stdout.
    Mc(McArgs),
    /// Frobenius distance between tail and centre conditional covariances of
    /// a dataset, optionally against a simulated Gaussian reference.
    ///
    /// Output (JSON): q, rows, statistic and, with --reference, percentile and
    /// the reference statistics.
    Normtest(NormtestArgs),
}

fn parse_k(s: &str) -> Result<usize, String> {
    let k: usize = s.parse().map_err(|_| format!("`{s}` is not a positive integer"))?;
    if k < 3 || k % 2 == 0 {
        return Err(format!("k must be odd and at least 3, got {k}"));
    }
    Ok(k)
}

#[derive(Args)]
struct SolveArgs {
    /// Number of groups (odd, >= 3)
    #[arg(long, default_value_t = 3, value_parser = parse_k)]
    k: usize,
    /// JSON model file {"mu": [...], "sigma": [[...], ...]}; adds per-group
    /// conditional covariance matrices and a Frobenius residual
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output encoding
    #[arg(long, default_value = "json")]
    format: Format,
    /// Write to this file instead of stdout
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CurvesArgs {
    /// Correlations, comma separated, each in (-1, 1)
    #[arg(long = "r", value_delimiter = ',', allow_negative_numbers = true, default_values_t = [0.1, 0.3, 0.5, 0.7, 0.9])]
    r: Vec<f64>,
    /// Split grid START:STOP:STEP inside (0, 0.5)
    #[arg(long, default_value = "0.05:0.45:0.05")]
    q_grid: String,
    /// Print q*, the small-r limit of the equilibrium curve
    #[arg(long)]
    qstar: bool,
    /// Print the equilibrium curve A_kappa(r) (rho or tau) for each --r
    #[arg(long = "A", value_name = "KAPPA")]
    a: Option<Kappa>,
    /// Use Monte Carlo with this many conditional draws instead of quadrature
    #[arg(long)]
    mc_draws: Option<usize>,
    /// Seed for --mc-draws
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    /// TOML run configuration; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Draws per sample
    #[arg(long, short = 'N')]
    sample_size: Option<usize>,
    /// Dimension n of the population vector
    #[arg(long)]
    dimension: Option<usize>,
    /// Random scale matrices per run (per degrees of freedom with --student)
    #[arg(long)]
    matrices: Option<usize>,
    /// Matrix kinds, comma separated: covariance, correlation, spearman, kendall
    #[arg(long, value_delimiter = ',')]
    kind: Option<Vec<MatrixKind>>,
    /// Run the Student t sweep over --nu
    #[arg(long)]
    student: bool,
    /// Degrees of freedom: a list `2,5,10` or a range `2..20`; without
    /// --student a single value selects a Student t radial law
    #[arg(long)]
    nu: Option<String>,
    /// Output directory
    #[arg(long, env = "EQUISPLIT_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct NormtestArgs {
    /// CSV file, one observation per row
    #[arg(long)]
    data: PathBuf,
    /// Benchmark column (header name or 0-based index)
    #[arg(long, default_value = "0")]
    benchmark: String,
    /// Feature columns, comma separated (default: all other columns)
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    /// Field delimiter
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// The file has no header row
    #[arg(long)]
    no_header: bool,
    /// Tail mass of the outer groups
    #[arg(long, default_value_t = 0.198089616)]
    q: f64,
    /// Number of Gaussian replicates for the reference distribution
    #[arg(long)]
    reference: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

/// A command failure: usage errors exit 2, everything else 1.
enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

type CmdResult = Result<(), Failure>;

fn emit(text: &str, output: Option<&Path>) -> CmdResult {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|source| {
            Failure::Domain(Error::Io {
                path: path.to_path_buf(),
                source,
            })
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|source| {
                    Failure::Domain(Error::Io {
                        path: PathBuf::from("<stdout>"),
                        source,
                    })
                })
        }
    }
}

fn json<T: Serialize + ?Sized>(value: &T) -> String {
    to_json_string(value).expect("result types serialise")
}

#[derive(Serialize)]
struct GroupRow {
    q1: f64,
    q2: f64,
    mass: f64,
    mean: f64,
    variance: f64,
}

fn cmd_solve(args: SolveArgs) -> CmdResult {
    let mut report = solve_equilibrium_k(args.k)?;
    if let Some(path) = &args.model {
        let model: GaussianModel = read_json(path)?;
        report = balance_report(&model, &report.splits)?;
    }
    let masses: Vec<String> = report.masses().iter().map(|m| format!("{m:.6}")).collect();
    eprintln!(
        "k = {}: masses {} (residual {:.2e})",
        args.k,
        masses.join("/"),
        report.residual
    );
    let text = match args.format {
        Format::Json => json(&report),
        Format::Csv => {
            let rows: Vec<GroupRow> = report
                .groups
                .iter()
                .map(|g| GroupRow {
                    q1: g.interval.q1(),
                    q2: g.interval.q2(),
                    mass: g.interval.mass(),
                    mean: g.moments.mean,
                    variance: g.moments.variance,
                })
                .collect();
            to_csv_string(&rows)?
        }
    };
    emit(&text, args.output.as_deref())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("--q-grid `{spec}` is not START:STOP:STEP")))?;
    let [start, stop, step] = parts[..] else {
        return Err(Failure::Usage(format!("--q-grid `{spec}` is not START:STOP:STEP")));
    };
    if !(start > 0.0 && stop < 0.5 && start <= stop && step > 0.0) {
        return Err(Failure::Usage(format!("--q-grid `{spec}` must satisfy 0 < START <= STOP < 0.5, STEP > 0")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect())
}

#[derive(Serialize)]
struct QStarRow {
    qstar: f64,
}

#[derive(Serialize)]
struct CurveRow {
    r: f64,
    kappa: Kappa,
    a: f64,
    delta: f64,
    other_roots: String,
}

fn cmd_curves(args: CurvesArgs) -> CmdResult {
    if let Some(&bad) = args.r.iter().find(|r| !(r.abs() < 1.0)) {
        return Err(Failure::Usage(format!("--r values must lie in (-1, 1), got {bad}")));
    }
    let text = if args.qstar {
        let qstar = solve_qstar()?;
        eprintln!("q* = {qstar:.10}");
        to_csv_string(&[QStarRow { qstar }])?
    } else if let Some(kappa) = args.a {
        let rows = args
            .r
            .iter()
            .map(|&r| {
                let a = equilibrium_curve_a(r, kappa)?;
                eprintln!("A_{kappa:?}({r}) = {:.7}", a.q);
                Ok(CurveRow {
                    r,
                    kappa,
                    a: a.q,
                    delta: a.delta,
                    other_roots: a.other_roots.iter().map(|q| q.to_string()).collect::<Vec<_>>().join(";"),
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        to_csv_string(&rows)?
    } else {
        let grid = parse_grid(&args.q_grid)?;
        let method = match args.mc_draws {
            Some(draws) => Method::MonteCarlo { draws, seed: args.seed },
            None => Method::Quadrature,
        };
        let mut rows = Vec::new();
        for &r in &args.r {
            for &q in &grid {
                rows.push(delta_curves(q, r, method)?);
            }
        }
        eprintln!("{} curve points", rows.len());
        to_csv_string(&rows)?
    };
    emit(&text, args.output.as_deref())
}

fn parse_nus(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Usage(format!("--nu `{spec}` is neither a list `a,b,c` nor a range `a..b`"));
    if let Some((a, b)) = spec.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|_| bad())?;
        let b: u32 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).map(f64::from).collect());
    }
    spec.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect()
}

#[derive(Serialize)]
struct SummaryRow {
    kind: MatrixKind,
    q10: f64,
    q50: f64,
    q90: f64,
}

#[derive(Serialize)]
struct ReplicateRow {
    index: usize,
    kind: MatrixKind,
    q_hat: f64,
    objective_value: f64,
    degenerate: bool,
    matrix_seed: u64,
    sample_seed: u64,
}

#[derive(Serialize)]
struct DistanceRow {
    index: usize,
    kind: MatrixKind,
    q: f64,
    distance: f64,
}

#[derive(Serialize)]
struct SweepSummaryRow {
    nu: f64,
    q10: f64,
    q50: f64,
    q90: f64,
}

#[derive(Serialize)]
struct SweepReplicateRow {
    nu: f64,
    index: usize,
    q_hat: f64,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    version: &'static str,
    generator_id: &'static str,
    config: &'a RunConfig,
}

fn resolve_mc_config(args: &McArgs) -> Result<RunConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.sample_size {
        config.sample_size = v;
    }
    if let Some(v) = args.dimension {
        config.dimension = v;
    }
    if let Some(v) = args.matrices {
        config.matrices = v;
    }
    if let Some(v) = &args.kind {
        config.kinds = v.clone();
    }
    if args.student {
        config.mode = McMode::StudentSweep;
    }
    if let Some(spec) = &args.nu {
        let nus = parse_nus(spec)?;
        if config.mode == McMode::StudentSweep {
            config.nus = nus;
        } else if let [nu] = nus[..] {
            config.radial = RadialSpec::Student { nu };
        } else {
            return Err(Failure::Usage("a list of --nu values needs --student".into()));
        }
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = Some(dir.clone());
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

fn cmd_mc(args: McArgs) -> CmdResult {
    let config = resolve_mc_config(&args)?;
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    write_json(
        &RunRecord {
            version: env!("CARGO_PKG_VERSION"),
            generator_id: GENERATOR_ID,
            config: &config,
        },
        &dir.join("run.json"),
    )?;
    let text = match config.mode {
        McMode::Replicates => {
            let experiment = ReplicateExperiment {
                n: config.dimension,
                matrices: config.matrices,
                sample_size: config.sample_size,
                seed: config.seed,
                kinds: config.kinds.clone(),
                constraint: config.constraint,
                grid: config.grid,
            };
            let reps = experiment.run(&config.radial.distribution(config.dimension), 0)?;
            let mut replicate_rows = Vec::new();
            let mut distance_rows = Vec::new();
            for rep in &reps {
                for res in &rep.results {
                    replicate_rows.push(ReplicateRow {
                        index: rep.index,
                        kind: res.kind,
                        q_hat: res.q_hat,
                        objective_value: res.objective_value,
                        degenerate: res.degenerate,
                        matrix_seed: rep.matrix_seed,
                        sample_seed: rep.sample_seed,
                    });
                    distance_rows.extend(res.curve.iter().map(|p| DistanceRow {
                        index: rep.index,
                        kind: res.kind,
                        q: p.q,
                        distance: p.distance,
                    }));
                }
            }
            let summary: Vec<SummaryRow> = experiment
                .summarize(&reps)
                .into_iter()
                .map(|s| SummaryRow {
                    kind: s.kind,
                    q10: s.q10,
                    q50: s.q50,
                    q90: s.q90,
                })
                .collect();
            for s in &summary {
                eprintln!("{}: q_hat quantiles 0.1/0.5/0.9 = {:.4}/{:.4}/{:.4}", s.kind, s.q10, s.q50, s.q90);
            }
            write_csv(&replicate_rows, &dir.join("replicates.csv"))?;
            write_csv(&distance_rows, &dir.join("curves.csv"))?;
            write_csv(&summary, &dir.join("summary.csv"))?;
            to_csv_string(&summary)?
        }
        McMode::StudentSweep => {
            let sweep = StudentSweep {
                n: config.dimension,
                nus: config.nus.clone(),
                matrices_per_nu: config.matrices,
                sample_size: config.sample_size,
                seed: config.seed,
                constraint: config.constraint,
                grid: config.grid,
            };
            let rows = sweep.run()?;
            let summary: Vec<SweepSummaryRow> = rows
                .iter()
                .map(|r| SweepSummaryRow {
                    nu: r.nu,
                    q10: r.q10,
                    q50: r.q50,
                    q90: r.q90,
                })
                .collect();
            let detail: Vec<SweepReplicateRow> = rows
                .iter()
                .flat_map(|r| {
                    r.q_hats.iter().enumerate().map(move |(index, &q_hat)| SweepReplicateRow {
                        nu: r.nu,
                        index,
                        q_hat,
                    })
                })
                .collect();
            for s in &summary {
                eprintln!("nu = {}: q_hat quantiles 0.1/0.5/0.9 = {:.4}/{:.4}/{:.4}", s.nu, s.q10, s.q50, s.q90);
            }
            write_csv(&summary, &dir.join("sweep.csv"))?;
            write_csv(&detail, &dir.join("sweep_qhat.csv"))?;
            to_csv_string(&summary)?
        }
    };
    eprintln!("wrote results to {}", dir.display());
    emit(&text, None)
}

#[derive(Serialize)]
struct NormtestOutput {
    q: f64,
    rows: usize,
    dimension: usize,
    statistic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    percentile: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<Vec<f64>>,
}

fn cmd_normtest(args: NormtestArgs) -> CmdResult {
    if !args.delimiter.is_ascii() {
        return Err(Failure::Usage(format!("delimiter `{}` is not a single ASCII character", args.delimiter)));
    }
    let spec = DatasetSpec {
        path: args.data.clone(),
        benchmark: ColumnRef::from(args.benchmark.as_str()),
        features: args.features.iter().map(|s| ColumnRef::from(s.as_str())).collect(),
        delimiter: args.delimiter as u8,
        header: !args.no_header,
    };
    let sample = load_dataset(&spec)?;
    let out = match args.reference {
        Some(m) => {
            let t = normality_test(&sample, args.q, m, args.seed)?;
            eprintln!("statistic {:.6e}, percentile {:.1} of {m} Gaussian replicates", t.statistic, t.percentile);
            NormtestOutput {
                q: args.q,
                rows: sample.len(),
                dimension: sample.dim(),
                statistic: t.statistic,
                percentile: Some(t.percentile),
                seed: Some(t.seed),
                reference: Some(t.reference),
            }
        }
        None => {
            let statistic = normality_distance(&sample, args.q)?;
            eprintln!("statistic {statistic:.6e}");
            NormtestOutput {
                q: args.q,
                rows: sample.len(),
                dimension: sample.dim(),
                statistic,
                percentile: None,
                seed: None,
                reference: None,
            }
        }
    };
    emit(&json(&out), args.output.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot start {threads} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Curves(a) => cmd_curves(a),
        Command::Mc(a) => cmd_mc(a),
        Command::Normtest(a) => cmd_normtest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
