//! Experiment drivers: verification against the dense reference, probe-count
//! sweeps, and dimension/sparsity timing sweeps with log-log slope fits.
//!
//! Timed sweeps build every problem before the clock starts and discard one
//! warm-up pass per row. Rows are then timed round-robin for `rounds` rounds.
//! A round times one batch per row: at least `reps` whole passes over the
//! sample points, extended until `min_batch` has elapsed. A row reports the
//! fastest per-evaluation batch mean it saw. Interleaving spreads slow
//! machine drift over all rows instead of biasing the rows measured last.

use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::affine::{
    affine_normal, direction_error, reference_affine_normal, AffineNormalConfig, OpCounts,
};
use crate::error::{Error, Result};
use crate::families::{quartic_family, random_sparse, sample_points, RandomSparseSpec};
use crate::krylov::KrylovConfig;
use crate::polynomial::{SparsePolynomial, DENSE_CAP};

/// CSV header, in column order.
pub const COLUMNS: [&str; 13] = [
    "d",
    "m",
    "avg_support",
    "ms",
    "time_per_eval_s",
    "hv_per_eval",
    "third_per_eval",
    "krylov_per_eval",
    "q",
    "seed",
    "err_mean",
    "err_max",
    "angle_max_deg",
];

/// One report row. Columns that do not apply to a sweep are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub d: usize,
    pub m: usize,
    pub avg_support: f64,
    /// `m · avg_support`
    pub ms: f64,
    pub time_per_eval_s: Option<f64>,
    pub hv_per_eval: Option<f64>,
    pub third_per_eval: Option<f64>,
    pub krylov_per_eval: Option<f64>,
    pub q: Option<usize>,
    pub seed: Option<u64>,
    pub err_mean: Option<f64>,
    pub err_max: Option<f64>,
    pub angle_max_deg: Option<f64>,
}

impl BenchRecord {
    fn new(d: usize, m: usize, avg_support: f64) -> Self {
        Self {
            d,
            m,
            avg_support,
            ms: m as f64 * avg_support,
            time_per_eval_s: None,
            hv_per_eval: None,
            third_per_eval: None,
            krylov_per_eval: None,
            q: None,
            seed: None,
            err_mean: None,
            err_max: None,
            angle_max_deg: None,
        }
    }

    fn for_poly(poly: &SparsePolynomial) -> Self {
        Self::new(poly.dim(), poly.num_terms(), poly.avg_support())
    }

    fn set_counts(&mut self, total: OpCounts, evals: usize) {
        let n = evals as f64;
        self.hv_per_eval = Some(total.hv as f64 / n);
        self.third_per_eval = Some(total.third as f64 / n);
        self.krylov_per_eval = Some(total.krylov as f64 / n);
    }

    fn csv_line(&self) -> String {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|v| v.to_string()).unwrap_or_default()
        }
        [
            self.d.to_string(),
            self.m.to_string(),
            self.avg_support.to_string(),
            self.ms.to_string(),
            opt(self.time_per_eval_s),
            opt(self.hv_per_eval),
            opt(self.third_per_eval),
            opt(self.krylov_per_eval),
            opt(self.q),
            opt(self.seed),
            opt(self.err_mean),
            opt(self.err_max),
            opt(self.angle_max_deg),
        ]
        .join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    #[serde(skip)]
    pub n_points: usize,
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn loglog_fit(pairs: &[(f64, f64)]) -> Result<SlopeFit> {
    if pairs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "slope fit needs at least 2 points, got {}",
            pairs.len()
        )));
    }
    if let Some(&(x, y)) = pairs.iter().find(|&&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "slope fit needs positive data, got ({x}, {y})"
        )));
    }
    let n = pairs.len() as f64;
    let lx: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput(
            "slope fit needs distinct x values".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    // a constant series is fitted exactly by the zero slope
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(SlopeFit {
        slope,
        intercept,
        r2,
        n_points: pairs.len(),
    })
}

/// Problem family for [`run_verify`]. The sphere is a control whose error
/// should vanish to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyFamily {
    Quartic,
    Sphere,
}

/// Exact-mode [`affine_normal`] against [`reference_affine_normal`], one row
/// per `(d, point)`.
pub fn run_verify(
    dims: &[usize],
    points_per_dim: usize,
    lambda: f64,
    family: VerifyFamily,
) -> Result<Vec<BenchRecord>> {
    if let Some(&d) = dims.iter().find(|&&d| d > DENSE_CAP) {
        return Err(Error::DenseCapExceeded {
            dim: d,
            cap: DENSE_CAP,
        });
    }
    let cfg = AffineNormalConfig::exact().with_krylov(KrylovConfig::exact().with_lambda(lambda));
    let mut rows = Vec::with_capacity(dims.len() * points_per_dim);
    for &d in dims {
        let poly = match family {
            VerifyFamily::Quartic => quartic_family(d)?,
            VerifyFamily::Sphere => SparsePolynomial::sphere(d),
        };
        for x in sample_points(d, points_per_dim) {
            let mf = affine_normal(&poly, &x, &cfg)?;
            let reference = reference_affine_normal(&poly, &x, lambda)?;
            let err = direction_error(&mf.direction, &reference.direction)?;
            let mut row = BenchRecord::for_poly(&poly);
            row.set_counts(mf.counts, 1);
            row.err_mean = Some(err.normalized_error);
            row.err_max = Some(err.normalized_error);
            row.angle_max_deg = Some(err.angle_deg);
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSweep {
    pub dims: Vec<usize>,
    pub q_list: Vec<usize>,
    /// Probe seeds `seed0 .. seed0 + seeds`.
    pub seeds: u64,
    pub seed0: u64,
    pub points: usize,
    pub lambda: f64,
    pub timing: Timing,
}

impl ProbeSweep {
    pub fn new(dims: Vec<usize>, q_list: Vec<usize>, seeds: u64) -> Self {
        Self {
            dims,
            q_list,
            seeds,
            seed0: 0,
            points: 3,
            lambda: 1e-6,
            timing: Timing {
                reps: 1,
                rounds: 5,
                min_batch: Duration::from_millis(20),
                parallel: false,
            },
        }
    }
}

/// Hutchinson-mode accuracy and cost against exact mode on the quartic
/// family. Per dimension the first row is exact mode itself (`q` empty),
/// followed by one row per `q` with errors over all seeds and points.
pub fn run_probe_sweep(p: &ProbeSweep) -> Result<Vec<BenchRecord>> {
    if p.seeds == 0 || p.points == 0 {
        return Err(Error::InvalidInput(
            "probe sweep needs seeds and points".into(),
        ));
    }
    let krylov = KrylovConfig::exact().with_lambda(p.lambda);
    let exact_cfg = AffineNormalConfig::exact().with_krylov(krylov);
    let polys: Vec<_> = p
        .dims
        .iter()
        .map(|&d| quartic_family(d))
        .collect::<Result<_>>()?;
    let all_pts: Vec<_> = p.dims.iter().map(|&d| sample_points(d, p.points)).collect();
    let mut rows = Vec::new();
    let mut jobs = Vec::new();
    for (poly, pts) in polys.iter().zip(&all_pts) {
        let exact: Vec<_> = pts
            .iter()
            .map(|x| affine_normal(poly, x, &exact_cfg))
            .collect::<Result<_>>()?;

        let mut row = BenchRecord::for_poly(poly);
        let mut total = OpCounts::default();
        for r in &exact {
            total += r.counts;
        }
        row.set_counts(total, exact.len());
        jobs.push(TimedJob::new(poly, pts, vec![exact_cfg]));
        rows.push(row);

        for &q in &p.q_list {
            let cfgs: Vec<_> = (0..p.seeds)
                .map(|s| AffineNormalConfig::hutchinson(q, p.seed0 + s).with_krylov(krylov))
                .collect();
            let mut total = OpCounts::default();
            let (mut sum, mut max, mut amax, mut n) = (0.0, 0.0f64, 0.0f64, 0usize);
            for cfg in &cfgs {
                for (x, ex) in pts.iter().zip(&exact) {
                    let r = affine_normal(poly, x, cfg)?;
                    total += r.counts;
                    let e = direction_error(&r.direction, &ex.direction)?;
                    sum += e.normalized_error;
                    max = max.max(e.normalized_error);
                    amax = amax.max(e.angle_deg);
                    n += 1;
                }
            }
            let mut row = BenchRecord::for_poly(poly);
            row.set_counts(total, n);
            row.q = Some(q);
            row.seed = Some(p.seed0);
            row.err_mean = Some(sum / n as f64);
            row.err_max = Some(max);
            row.angle_max_deg = Some(amax);
            jobs.push(TimedJob::new(poly, pts, cfgs));
            rows.push(row);
        }
    }
    let times = time_jobs(&jobs, &p.timing)?;
    for (row, t) in rows.iter_mut().zip(times) {
        row.time_per_eval_s = Some(t);
    }
    Ok(rows)
}

/// Measurement protocol; see the module docs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    /// Minimum passes over the sample points per timed batch.
    pub reps: usize,
    pub rounds: usize,
    pub min_batch: Duration,
    /// Time rows concurrently, each on its own worker.
    pub parallel: bool,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            reps: 3,
            rounds: 60,
            min_batch: Duration::from_millis(10),
            parallel: false,
        }
    }
}

/// Budgeted Hutchinson settings shared by the timing sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSettings {
    pub q: usize,
    pub k_max: usize,
    pub lambda: f64,
    pub seed: u64,
    pub points: usize,
    pub timing: Timing,
}

impl Default for TimingSettings {
    fn default() -> Self {
        Self {
            q: 2,
            k_max: 5,
            lambda: 1e-6,
            seed: 0,
            points: 3,
            timing: Timing::default(),
        }
    }
}

impl TimingSettings {
    fn config(&self) -> AffineNormalConfig {
        AffineNormalConfig::hutchinson(self.q, self.seed)
            .with_krylov(KrylovConfig::budget(self.k_max).with_lambda(self.lambda))
    }
}

/// Times `random_sparse(d, m_factor·d)` for each `d`; fits time against `d`.
pub fn run_dim_sweep(
    dims: &[usize],
    m_factor: usize,
    s: &TimingSettings,
) -> Result<(Vec<BenchRecord>, SlopeFit)> {
    ascending(dims, "dims")?;
    let specs: Vec<_> = dims
        .iter()
        .map(|&d| RandomSparseSpec::new(d, m_factor * d, s.seed))
        .collect();
    let rows = timing_sweep(&specs, s)?;
    let fit = loglog_fit(&fit_pairs(&rows, |r| r.d as f64))?;
    Ok((rows, fit))
}

/// Times `random_sparse(dim, m)` for each `m`; fits time against `ms`.
pub fn run_sparsity_sweep(
    dim: usize,
    m_list: &[usize],
    s: &TimingSettings,
) -> Result<(Vec<BenchRecord>, SlopeFit)> {
    ascending(m_list, "m_list")?;
    let specs: Vec<_> = m_list
        .iter()
        .map(|&m| RandomSparseSpec::new(dim, m, s.seed))
        .collect();
    let rows = timing_sweep(&specs, s)?;
    let fit = loglog_fit(&fit_pairs(&rows, |r| r.ms))?;
    Ok((rows, fit))
}

fn ascending(v: &[usize], what: &str) -> Result<()> {
    if v.is_empty() || v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(format!(
            "{what} must be nonempty and strictly ascending"
        )));
    }
    Ok(())
}

fn fit_pairs(rows: &[BenchRecord], x: impl Fn(&BenchRecord) -> f64) -> Vec<(f64, f64)> {
    rows.iter()
        .map(|r| (x(r), r.time_per_eval_s.unwrap_or(f64::NAN)))
        .collect()
}

fn timing_sweep(specs: &[RandomSparseSpec], s: &TimingSettings) -> Result<Vec<BenchRecord>> {
    let cfg = s.config();
    let polys: Vec<_> = specs.iter().map(random_sparse).collect::<Result<_>>()?;
    let pts: Vec<_> = polys
        .iter()
        .map(|p| sample_points(p.dim(), s.points))
        .collect();
    let mut rows = Vec::with_capacity(specs.len());
    let mut jobs = Vec::with_capacity(specs.len());
    for ((spec, poly), pts) in specs.iter().zip(&polys).zip(&pts) {
        // stabilization terms have support 1, random monomials at least 2
        let random: Vec<_> = poly
            .terms()
            .iter()
            .filter(|t| t.support_len() >= 2)
            .collect();
        let avg = random.iter().map(|t| t.support_len()).sum::<usize>() as f64
            / random.len().max(1) as f64;
        let mut row = BenchRecord::new(spec.dim, spec.m, avg);
        let mut total = OpCounts::default();
        for x in pts {
            total += affine_normal(poly, x, &cfg)?.counts;
        }
        row.set_counts(total, pts.len());
        row.q = Some(s.q);
        row.seed = Some(s.seed);
        rows.push(row);
        jobs.push(TimedJob::new(poly, pts, vec![cfg]));
    }
    let times = time_jobs(&jobs, &s.timing)?;
    for (row, t) in rows.iter_mut().zip(times) {
        row.time_per_eval_s = Some(t);
    }
    Ok(rows)
}

/// One timed row: every config evaluated at every point is one pass.
struct TimedJob<'a> {
    poly: &'a SparsePolynomial,
    pts: &'a [Vec<f64>],
    cfgs: Vec<AffineNormalConfig>,
}

impl<'a> TimedJob<'a> {
    fn new(poly: &'a SparsePolynomial, pts: &'a [Vec<f64>], cfgs: Vec<AffineNormalConfig>) -> Self {
        Self { poly, pts, cfgs }
    }

    fn pass(&self) -> Result<usize> {
        for cfg in &self.cfgs {
            for x in self.pts {
                std::hint::black_box(affine_normal(self.poly, x, cfg)?);
            }
        }
        Ok(self.cfgs.len() * self.pts.len())
    }

    /// Mean seconds per evaluation over one timed batch.
    fn batch(&self, t: &Timing) -> Result<f64> {
        let start = Instant::now();
        let mut evals = 0;
        let mut passes = 0;
        loop {
            evals += self.pass()?;
            passes += 1;
            let dt = start.elapsed();
            if passes >= t.reps && dt >= t.min_batch {
                return Ok(dt.as_secs_f64() / evals as f64);
            }
        }
    }
}

fn time_jobs(jobs: &[TimedJob<'_>], t: &Timing) -> Result<Vec<f64>> {
    if t.reps == 0 || t.rounds == 0 {
        return Err(Error::InvalidInput(
            "reps and rounds must be positive".into(),
        ));
    }
    if t.parallel {
        return jobs
            .par_iter()
            .map(|job| {
                job.pass()?;
                (0..t.rounds).try_fold(f64::INFINITY, |best, _| Ok(best.min(job.batch(t)?)))
            })
            .collect();
    }
    for job in jobs {
        job.pass()?;
    }
    let mut best = vec![f64::INFINITY; jobs.len()];
    for _ in 0..t.rounds {
        for (b, job) in best.iter_mut().zip(jobs) {
            *b = b.min(job.batch(t)?);
        }
    }
    Ok(best)
}

/// CSV report; the fit, if any, follows as `# slope=… r2=…`.
pub fn write_csv<W: Write>(mut w: W, rows: &[BenchRecord], fit: Option<&SlopeFit>) -> Result<()> {
    writeln!(w, "{}", COLUMNS.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    if let Some(f) = fit {
        writeln!(w, "# slope={} r2={}", f.slope, f.r2)?;
    }
    Ok(())
}

/// JSON array of row objects; the fit, if any, is appended as a final
/// `{"slope", "intercept", "r2"}` element.
pub fn write_json<W: Write>(mut w: W, rows: &[BenchRecord], fit: Option<&SlopeFit>) -> Result<()> {
    let mut items: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| serde_json::to_value(r).expect("records serialize"))
        .collect();
    if let Some(f) = fit {
        items.push(serde_json::to_value(f).expect("fits serialize"));
    }
    serde_json::to_writer_pretty(&mut w, &items).map_err(std::io::Error::from)?;
    writeln!(w)?;
    Ok(())
}
