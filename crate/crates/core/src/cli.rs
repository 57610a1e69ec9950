//! Command-line interface. Exit codes: 0 success, 1 usage or input error,
//! 2 numerical failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::affine::{affine_normal, AffineNormalConfig, AffineNormalResult, LogDetMode};
use crate::bench::{
    run_dim_sweep, run_probe_sweep, run_sparsity_sweep, run_verify, write_csv, write_json,
    BenchRecord, ProbeSweep, SlopeFit, Timing, TimingSettings, VerifyFamily,
};
use crate::error::{Error, Result};
use crate::families::{quartic_family, random_sparse, RandomSparseSpec, DEFAULT_STAB_EPS};
use crate::krylov::KrylovConfig;
use crate::polynomial::SparsePolynomial;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "AFFINORM_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "affinorm",
    version,
    about = "Matrix-free affine normals of sparse polynomial level sets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Affine normal of one polynomial at one point.
    Direction(DirectionArgs),
    /// Exact mode against the dense reference on the quartic family.
    Verify(VerifyArgs),
    /// Time per evaluation against dimension.
    BenchDim(BenchDimArgs),
    /// Time per evaluation against the sparsity scale at fixed dimension.
    BenchSparsity(BenchSparsityArgs),
    /// Probe-count accuracy and cost against exact mode.
    BenchProbes(BenchProbesArgs),
    /// Write a test polynomial as JSON.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Exact,
    Hutchinson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Quartic,
    Random,
    Sphere,
}

/// Positive integers given as `a..b` (inclusive) or `a,b,c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntList(pub Vec<usize>);

impl std::str::FromStr for IntList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let int = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| format!("'{t}' is not a nonnegative integer"))
        };
        let v = if let Some((a, b)) = s.split_once("..") {
            let (a, b) = (int(a)?, int(b)?);
            if a > b {
                return Err(format!("empty range {s}"));
            }
            (a..=b).collect()
        } else {
            s.split(',')
                .map(int)
                .collect::<std::result::Result<Vec<_>, _>>()?
        };
        Ok(IntList(v))
    }
}

#[derive(Debug, Args)]
pub struct DirectionArgs {
    /// Polynomial JSON file.
    #[arg(long)]
    pub poly: PathBuf,
    /// Comma-separated coordinates, or a file holding them.
    #[arg(long)]
    pub point: String,
    #[arg(long, value_enum, default_value_t = Mode::Exact)]
    pub mode: Mode,
    #[arg(long, default_value_t = 1e-6)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2)]
    pub probes: usize,
    /// Krylov budget per solve [default: 100 exact, 5 hutchinson].
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run probes on the worker pool.
    #[arg(long)]
    pub parallel: bool,
    /// Emit the full result as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value = "3..20")]
    pub dims: IntList,
    #[arg(long, default_value_t = 5)]
    pub points: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub lambda: f64,
    /// `quartic`, or `sphere` as a control.
    #[arg(long, value_enum, default_value_t = Family::Quartic)]
    pub family: Family,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct TimingArgs {
    #[arg(long, default_value_t = 2)]
    pub probes: usize,
    #[arg(long, default_value_t = 5)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub points: usize,
    /// Minimum passes over the sample points per timed batch.
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    /// Interleaved timing rounds; each row keeps its fastest batch.
    #[arg(long, default_value_t = 60)]
    pub rounds: usize,
    #[arg(long, default_value_t = 10)]
    pub min_batch_ms: u64,
    /// Time rows concurrently.
    #[arg(long)]
    pub parallel: bool,
}

impl TimingArgs {
    fn settings(&self) -> TimingSettings {
        TimingSettings {
            q: self.probes,
            k_max: self.max_iter,
            lambda: self.lambda,
            seed: self.seed,
            points: self.points,
            timing: Timing {
                reps: self.reps,
                rounds: self.rounds,
                min_batch: Duration::from_millis(self.min_batch_ms),
                parallel: self.parallel,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchDimArgs {
    #[arg(long, default_value = "50,100,200,400")]
    pub dims: IntList,
    #[arg(long, default_value_t = 10)]
    pub m_factor: usize,
    #[command(flatten)]
    pub timing: TimingArgs,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct BenchSparsityArgs {
    #[arg(long, default_value_t = 200)]
    pub dim: usize,
    #[arg(long, default_value = "200,400,800,1600,3200")]
    pub m_list: IntList,
    #[command(flatten)]
    pub timing: TimingArgs,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct BenchProbesArgs {
    #[arg(long, default_value = "10,20,40")]
    pub dims: IntList,
    #[arg(long, default_value = "2,5,10,20,50,100")]
    pub q_list: IntList,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub points: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, default_value_t = 5)]
    pub rounds: usize,
    #[arg(long, default_value_t = 20)]
    pub min_batch_ms: u64,
    #[arg(long)]
    pub parallel: bool,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub family: Family,
    #[arg(long)]
    pub dim: usize,
    /// Random monomial count [default: 10 · dim].
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_STAB_EPS)]
    pub stab_eps: f64,
    /// Output file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Reports go to `out`, diagnostics and summaries of stdout reports to
/// `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

/// Entry point for the binary.
pub fn main_exit_code() -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    let mut out = stdout.lock();
    let mut err = stderr.lock();
    if let Err(msg) = configure_threads() {
        let _ = writeln!(err, "error: {msg}");
        return 1;
    }
    run(std::env::args_os(), &mut out, &mut err)
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got '{raw}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Direction(a) => cmd_direction(&a, out),
        Command::Verify(a) => cmd_verify(&a, out, err),
        Command::BenchDim(a) => {
            let (rows, fit) = run_dim_sweep(&a.dims.0, a.m_factor, &a.timing.settings())?;
            emit_fit(&a.report, &rows, &fit, out, err)
        }
        Command::BenchSparsity(a) => {
            let (rows, fit) = run_sparsity_sweep(a.dim, &a.m_list.0, &a.timing.settings())?;
            emit_fit(&a.report, &rows, &fit, out, err)
        }
        Command::BenchProbes(a) => cmd_bench_probes(&a, out, err),
        Command::Gen(a) => cmd_gen(&a, out),
    }
}

fn cmd_direction(a: &DirectionArgs, out: &mut dyn Write) -> Result<()> {
    let poly = SparsePolynomial::read_json(&a.poly)?;
    let x = read_point(&a.point)?;
    let mut cfg = match a.mode {
        Mode::Exact => AffineNormalConfig::exact(),
        Mode::Hutchinson => AffineNormalConfig::hutchinson(a.probes, a.seed),
    };
    let default_iter = match a.mode {
        Mode::Exact => KrylovConfig::exact().max_iter,
        Mode::Hutchinson => 5,
    };
    cfg.krylov = KrylovConfig {
        lambda: a.lambda,
        max_iter: a.max_iter.unwrap_or(default_iter),
        tol: a.tol,
        ..KrylovConfig::exact()
    };
    cfg.probes.parallel = a.parallel;
    let res = affine_normal(&poly, &x, &cfg)?;
    if a.json {
        serde_json::to_writer_pretty(&mut *out, &res).map_err(io::Error::from)?;
        writeln!(out)?;
    } else {
        write_direction_text(out, &res, cfg.mode)?;
    }
    Ok(())
}

fn write_direction_text(
    out: &mut dyn Write,
    r: &AffineNormalResult,
    mode: LogDetMode,
) -> Result<()> {
    let unit: Vec<String> = r.direction_unit.iter().map(f64::to_string).collect();
    writeln!(
        out,
        "mode: {}",
        serde_json::to_value(mode)
            .expect("mode serializes")
            .as_str()
            .unwrap_or("")
    )?;
    writeln!(out, "direction_unit: {}", unit.join(","))?;
    writeln!(out, "grad_norm: {}", r.grad_norm)?;
    writeln!(
        out,
        "counts: hv={} third={} krylov={}",
        r.counts.hv, r.counts.third, r.counts.krylov
    )?;
    writeln!(out, "lambda_used: {}", r.lambda_used)?;
    Ok(())
}

/// A comma list of numbers, or a file holding one (commas, whitespace or a
/// JSON array).
fn read_point(spec: &str) -> Result<Vec<f64>> {
    let path = Path::new(spec);
    let text = if path.is_file() {
        std::fs::read_to_string(path)?
    } else {
        spec.to_string()
    };
    let body = text.trim().trim_start_matches('[').trim_end_matches(']');
    body.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad coordinate '{t}' in --point")))
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(Error::InvalidInput("--point is empty".into()))
            } else {
                Ok(v)
            }
        })
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let family = match a.family {
        Family::Quartic => VerifyFamily::Quartic,
        Family::Sphere => VerifyFamily::Sphere,
        Family::Random => {
            return Err(Error::InvalidInput(
                "verify supports quartic and sphere".into(),
            ))
        }
    };
    let rows = run_verify(&a.dims.0, a.points, a.lambda, family)?;
    let summary = format!(
        "max_err={:e} max_angle_deg={:e} rows={}",
        max_of(&rows, |r| r.err_max),
        max_of(&rows, |r| r.angle_max_deg),
        rows.len()
    );
    emit(&a.report, &rows, None, &summary, out, err)
}

fn cmd_bench_probes(a: &BenchProbesArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let p = ProbeSweep {
        seed0: a.seed,
        points: a.points,
        lambda: a.lambda,
        timing: Timing {
            reps: a.reps,
            rounds: a.rounds,
            min_batch: Duration::from_millis(a.min_batch_ms),
            parallel: a.parallel,
        },
        ..ProbeSweep::new(a.dims.0.clone(), a.q_list.0.clone(), a.seeds)
    };
    let rows = run_probe_sweep(&p)?;
    let summary = format!(
        "max_err={:e} max_angle_deg={:e}",
        max_of(&rows, |r| r.err_max),
        max_of(&rows, |r| r.angle_max_deg)
    );
    emit(&a.report, &rows, None, &summary, out, err)
}

fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let poly = match a.family {
        Family::Quartic => quartic_family(a.dim)?,
        Family::Sphere => SparsePolynomial::sphere(a.dim),
        Family::Random => random_sparse(&RandomSparseSpec {
            stab_eps: a.stab_eps,
            ..RandomSparseSpec::new(a.dim, a.m.unwrap_or(10 * a.dim), a.seed)
        })?,
    };
    match &a.out {
        Some(path) => poly.write_json(path),
        None => {
            writeln!(out, "{}", poly.to_json_string())?;
            Ok(())
        }
    }
}

fn max_of(rows: &[BenchRecord], f: impl Fn(&BenchRecord) -> Option<f64>) -> f64 {
    rows.iter().filter_map(f).fold(0.0, f64::max)
}

fn emit_fit(
    report: &ReportArgs,
    rows: &[BenchRecord],
    fit: &SlopeFit,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let summary = format!("slope={:.4} r2={:.4}", fit.slope, fit.r2);
    emit(report, rows, Some(fit), &summary, out, err)
}

/// Writes the report to `--out` (summary on stdout) or to stdout (summary on
/// stderr, keeping stdout parseable).
fn emit(
    report: &ReportArgs,
    rows: &[BenchRecord],
    fit: Option<&SlopeFit>,
    summary: &str,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let write = |w: &mut dyn Write| match report.format {
        Format::Csv => write_csv(w, rows, fit),
        Format::Json => write_json(w, rows, fit),
    };
    match &report.out {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path)?);
            write(&mut f)?;
            f.flush()?;
            writeln!(out, "{summary}")?;
        }
        None => {
            write(out)?;
            writeln!(err, "{summary}")?;
        }
    }
    Ok(())
}
