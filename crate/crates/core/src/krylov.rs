//! Regularized conjugate gradients for matrix-free symmetric operators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, axpy, dot, norm};

/// Shift used for the first escalation when the configured `lambda` is zero.
pub const ESCALATION_START: f64 = 1e-6;
/// Factor applied to `lambda` at each negative-curvature escalation.
pub const ESCALATION_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovConfig {
    /// Diagonal shift `λ` added to the operator.
    pub lambda: f64,
    /// Operator applications allowed per solve, shared by all escalation
    /// restarts.
    pub max_iter: usize,
    /// Relative-residual stopping threshold `‖r‖/‖b‖ ≤ tol`.
    pub tol: f64,
    /// Number of `λ ← 100λ` restarts allowed after non-positive curvature.
    pub escalation: u32,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self::exact()
    }
}

impl KrylovConfig {
    /// Tight tolerance, generous budget.
    pub fn exact() -> Self {
        Self {
            lambda: 1e-6,
            max_iter: 100,
            tol: 1e-10,
            escalation: 4,
        }
    }

    /// A fixed iteration budget of `k` per solve, as used for scaling runs.
    pub fn budget(k: usize) -> Self {
        Self {
            max_iter: k,
            ..Self::exact()
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.tol) {
            return Err(Error::InvalidInput(format!(
                "tol must lie in [0, 1), got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    /// Operator applications over all attempts.
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub lambda_used: f64,
    pub converged: bool,
    pub escalations: u32,
}

struct Attempt {
    y: Vec<f64>,
    iters: usize,
    outcome: Outcome,
}

enum Outcome {
    Finished { rel_res: f64, converged: bool },
    NegativeCurvature { rel_res: f64 },
}

/// Solves `(A + λI) y = b` by CG from `y₀ = 0`.
///
/// `apply(v, out)` must write `A v` into `out`. Each iteration applies the
/// operator exactly once. On non-positive curvature `pᵀ(A+λI)p ≤ 0` the solve
/// restarts from zero with `λ ← 100λ`, at most `cfg.escalation` times; one
/// more detection is an [`Error::IndefiniteOperator`]. Restarts draw on the
/// same `max_iter` budget, so a solve never applies the operator more than
/// `max_iter` times. If the budget runs out right at a detection, the last
/// iterate before the offending step is returned unconverged.
pub fn cg_solve<F>(mut apply: F, b: &[f64], cfg: &KrylovConfig) -> Result<SolveReport>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    cfg.validate()?;
    if !all_finite(b) {
        return Err(Error::NonFiniteValue("right-hand side"));
    }
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(SolveReport {
            solution: vec![0.0; n],
            iterations: 0,
            final_relative_residual: 0.0,
            lambda_used: cfg.lambda,
            converged: true,
            escalations: 0,
        });
    }

    let mut lambda = cfg.lambda;
    let mut used = 0;
    let mut escalations = 0;
    loop {
        let budget = cfg.max_iter - used;
        let attempt = cg_attempt(&mut apply, b, bnorm, lambda, budget, cfg.tol)?;
        used += attempt.iters;
        match attempt.outcome {
            Outcome::Finished { rel_res, converged } => {
                return Ok(SolveReport {
                    solution: attempt.y,
                    iterations: used,
                    final_relative_residual: rel_res,
                    lambda_used: lambda,
                    converged,
                    escalations,
                });
            }
            Outcome::NegativeCurvature { rel_res } => {
                if escalations == cfg.escalation {
                    return Err(Error::IndefiniteOperator { lambda });
                }
                if used == cfg.max_iter {
                    // Budget spent: keep the last iterate before the bad step.
                    return Ok(SolveReport {
                        solution: attempt.y,
                        iterations: used,
                        final_relative_residual: rel_res,
                        lambda_used: lambda,
                        converged: false,
                        escalations,
                    });
                }
                lambda = next_lambda(lambda);
                escalations += 1;
            }
        }
    }
}

fn next_lambda(lambda: f64) -> f64 {
    if lambda > 0.0 {
        lambda * ESCALATION_FACTOR
    } else {
        ESCALATION_START
    }
}

fn cg_attempt<F>(
    apply: &mut F,
    b: &[f64],
    bnorm: f64,
    lambda: f64,
    budget: usize,
    tol: f64,
) -> Result<Attempt>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = b.len();
    let mut y = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut ap = vec![0.0; n];
    let mut rr = bnorm * bnorm;
    let mut iters = 0;

    while iters < budget {
        apply(&p, &mut ap)?;
        iters += 1;
        if lambda != 0.0 {
            axpy(lambda, &p, &mut ap);
        }
        let curvature = dot(&p, &ap);
        if !curvature.is_finite() {
            return Err(Error::NonFiniteValue("operator application"));
        }
        if curvature <= 0.0 {
            return Ok(Attempt {
                y,
                iters,
                outcome: Outcome::NegativeCurvature {
                    rel_res: rr.sqrt() / bnorm,
                },
            });
        }
        let alpha = rr / curvature;
        axpy(alpha, &p, &mut y);
        axpy(-alpha, &ap, &mut r);
        let rr_next = dot(&r, &r);
        if !rr_next.is_finite() {
            return Err(Error::NonFiniteValue("residual"));
        }
        if rr_next == 0.0 || rr_next.sqrt() <= tol * bnorm {
            return Ok(Attempt {
                y,
                iters,
                outcome: Outcome::Finished {
                    rel_res: rr_next.sqrt() / bnorm,
                    converged: true,
                },
            });
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    Ok(Attempt {
        y,
        iters,
        outcome: Outcome::Finished {
            rel_res: rr.sqrt() / bnorm,
            converged: false,
        },
    })
}
