//! Tangent log-determinant gradient `a = ∇_t log det(H_T + λI)`.
//!
//! By Jacobi's formula `a_i = tr((H_T+λI)⁻¹ ∂_i H_T)`. For a right-hand side
//! `ξ` and `y = (H_T+λI)⁻¹ξ`, the vector with entries `yᵀ(∂_i H_T)ξ` equals
//! `Tᵀ D³f(x)[Ty, Tξ, ·]`, so each trace term costs one tangent solve and one
//! third-order contraction. The exact variant sums this over the canonical
//! basis; the stochastic variant averages it over Rademacher probes.
//!
//! Probe `ℓ` (1-based) is drawn from ChaCha8 seeded with `seed` on stream
//! `ℓ`, reading 64-bit words in order and mapping bit `b` of each word
//! (least significant first) to `+1` when set and `-1` otherwise. Because
//! every probe has its own stream and contributions are summed in ascending
//! `ℓ`, results are bit-identical with and without `parallel`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{tangent_op, TangentFrame};
use crate::krylov::{cg_solve, KrylovConfig, SolveReport};
use crate::linalg::axpy;
use crate::polynomial::DerivativeOracle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub q: usize,
    pub seed: u64,
    pub parallel: bool,
    /// Replace the random probes by the canonical basis `e_1..e_{d-1}` and
    /// return the plain sum. This reproduces the exact trace and exists for
    /// testing.
    #[serde(default)]
    pub canonical_debug: bool,
}

impl ProbeConfig {
    pub fn new(q: usize, seed: u64) -> Self {
        Self {
            q,
            seed,
            parallel: false,
            canonical_debug: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 && !self.canonical_debug {
            return Err(Error::InvalidInput(
                "probe count q must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self::new(2, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogDetGradReport {
    pub a: Vec<f64>,
    pub probes_used: usize,
    /// Hessian–vector products spent, one per CG iteration.
    pub hv_count: usize,
    pub third_count: usize,
    pub krylov_iters_total: usize,
    /// Largest shift any solve needed (see [`KrylovConfig::escalation`]).
    pub lambda_used: f64,
}

/// Rademacher probe `ℓ` (1-based) of length `n`.
pub fn rademacher_probe(seed: u64, index: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let word = rng.next_u64();
        let take = (n - out.len()).min(64);
        out.extend((0..take).map(|b| if word >> b & 1 == 1 { 1.0 } else { -1.0 }));
    }
    out
}

/// `Tᵀ D³f[T y, T ξ, ·]` with `y = (H_T+λI)⁻¹ ξ`.
fn trace_term<O: DerivativeOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    frame: &TangentFrame,
    cfg: &KrylovConfig,
    xi: &[f64],
) -> Result<(Vec<f64>, SolveReport)> {
    let solve = cg_solve(
        |v, out| {
            out.copy_from_slice(&tangent_op(oracle, x, frame, v)?);
            Ok(())
        },
        xi,
        cfg,
    )?;
    let u = frame.lift(&solve.solution);
    let v = frame.lift(xi);
    let w = oracle.third_dir(x, &u, &v)?;
    Ok((frame.project(&w), solve))
}

fn accumulate(
    n: usize,
    terms: Vec<Result<(Vec<f64>, SolveReport)>>,
    base_lambda: f64,
) -> Result<LogDetGradReport> {
    let mut a = vec![0.0; n];
    let mut iters = 0;
    let mut lambda_used = base_lambda;
    let count = terms.len();
    for term in terms {
        let (c, rep) = term?;
        axpy(1.0, &c, &mut a);
        iters += rep.iterations;
        lambda_used = lambda_used.max(rep.lambda_used);
    }
    Ok(LogDetGradReport {
        a,
        probes_used: count,
        hv_count: iters,
        third_count: count,
        krylov_iters_total: iters,
        lambda_used,
    })
}

fn canonical(n: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[j] = 1.0;
    e
}

/// Exact `a` by solving against every canonical tangent axis, ascending.
pub fn logdet_grad_exact<O: DerivativeOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    frame: &TangentFrame,
    cfg: &KrylovConfig,
) -> Result<LogDetGradReport> {
    let n = frame.tangent_dim();
    let terms = (0..n)
        .map(|j| trace_term(oracle, x, frame, cfg, &canonical(n, j)))
        .collect();
    accumulate(n, terms, cfg.lambda)
}

/// Hutchinson estimate of `a` from `pcfg.q` Rademacher probes.
pub fn logdet_grad_hutchinson<O: DerivativeOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    frame: &TangentFrame,
    kcfg: &KrylovConfig,
    pcfg: &ProbeConfig,
) -> Result<LogDetGradReport> {
    pcfg.validate()?;
    let n = frame.tangent_dim();
    let probe = |l: usize| -> Vec<f64> {
        if pcfg.canonical_debug {
            canonical(n, l)
        } else {
            rademacher_probe(pcfg.seed, l as u64 + 1, n)
        }
    };
    let count = if pcfg.canonical_debug { n } else { pcfg.q };
    let run = |l: usize| trace_term(oracle, x, frame, kcfg, &probe(l));
    let terms: Vec<_> = if pcfg.parallel {
        (0..count).into_par_iter().map(run).collect()
    } else {
        (0..count).map(run).collect()
    };
    let mut rep = accumulate(n, terms, kcfg.lambda)?;
    if !pcfg.canonical_debug {
        let inv = 1.0 / pcfg.q as f64;
        rep.a.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(rep)
}
