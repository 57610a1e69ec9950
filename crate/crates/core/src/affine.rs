//! Affine normal assembly and the dense reference it is checked against.
//!
//! The matrix-free pipeline at a point `x` with `g = ∇f(x)`:
//!
//! 1. `ν = g/‖g‖` and an orthonormal tangent basis `T`;
//! 2. `h = Tᵀ H ν` (one Hessian–vector product);
//! 3. `a = ∇_t log det(H_T + λI)`, exactly or by Hutchinson probes;
//! 4. `(H_T + λI) u = h - ‖g‖/(d+1) · a` by CG;
//! 5. direction `T u - ν`.
//!
//! The reference builds the dense Hessian and third tensor, rotates them into
//! the frame `[T ν]` and evaluates the contraction `f^{pq} f_{pqj}` directly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::frame::{mixed_term, tangent_op, TangentFrame};
use crate::krylov::{cg_solve, KrylovConfig};
use crate::linalg::{axpy, norm};
use crate::logdet::{logdet_grad_exact, logdet_grad_hutchinson, ProbeConfig};
use crate::polynomial::{DerivativeOracle, SparsePolynomial};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogDetMode {
    Exact,
    Hutchinson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineNormalConfig {
    pub mode: LogDetMode,
    pub krylov: KrylovConfig,
    /// Only read in [`LogDetMode::Hutchinson`].
    pub probes: ProbeConfig,
}

impl AffineNormalConfig {
    pub fn exact() -> Self {
        Self {
            mode: LogDetMode::Exact,
            krylov: KrylovConfig::exact(),
            probes: ProbeConfig::default(),
        }
    }

    pub fn hutchinson(q: usize, seed: u64) -> Self {
        Self {
            mode: LogDetMode::Hutchinson,
            krylov: KrylovConfig::exact(),
            probes: ProbeConfig::new(q, seed),
        }
    }

    pub fn with_krylov(mut self, krylov: KrylovConfig) -> Self {
        self.krylov = krylov;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub hv: usize,
    pub third: usize,
    pub krylov: usize,
}

impl std::ops::AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        self.hv += o.hv;
        self.third += o.third;
        self.krylov += o.krylov;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineNormalResult {
    /// `T u - ν`, unnormalized.
    pub direction: Vec<f64>,
    pub direction_unit: Vec<f64>,
    pub u: Vec<f64>,
    pub grad_norm: f64,
    pub counts: OpCounts,
    pub lambda_used: f64,
    /// The log-determinant gradient used in the right-hand side.
    #[serde(skip)]
    pub a: Vec<f64>,
}

fn assemble(
    frame: &TangentFrame,
    u: Vec<f64>,
    a: Vec<f64>,
    counts: OpCounts,
    lambda_used: f64,
) -> AffineNormalResult {
    let mut direction = frame.lift(&u);
    axpy(-1.0, frame.nu(), &mut direction);
    let dn = norm(&direction);
    let direction_unit = direction.iter().map(|v| v / dn).collect();
    AffineNormalResult {
        direction,
        direction_unit,
        u,
        grad_norm: frame.grad_norm(),
        counts,
        lambda_used,
        a,
    }
}

/// Matrix-free affine normal at `x`.
pub fn affine_normal<O: DerivativeOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    cfg: &AffineNormalConfig,
) -> Result<AffineNormalResult> {
    check_len(oracle.dim(), x.len())?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteValue("point"));
    }
    let g = oracle.gradient(x)?;
    let frame = TangentFrame::at_point(&g, x)?;
    affine_normal_in_frame(oracle, x, &frame, cfg)
}

/// Same as [`affine_normal`] with a caller-supplied frame at `x`.
pub fn affine_normal_in_frame<O: DerivativeOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    frame: &TangentFrame,
    cfg: &AffineNormalConfig,
) -> Result<AffineNormalResult> {
    check_len(oracle.dim(), x.len())?;
    check_len(oracle.dim(), frame.dim())?;
    cfg.krylov.validate()?;

    let h = mixed_term(oracle, x, frame)?;
    let ld = match cfg.mode {
        LogDetMode::Exact => logdet_grad_exact(oracle, x, frame, &cfg.krylov)?,
        LogDetMode::Hutchinson => {
            logdet_grad_hutchinson(oracle, x, frame, &cfg.krylov, &cfg.probes)?
        }
    };

    let beta = frame.grad_norm() / (frame.dim() as f64 + 1.0);
    let mut b = h;
    axpy(-beta, &ld.a, &mut b);
    let solve = cg_solve(
        |v, out| {
            out.copy_from_slice(&tangent_op(oracle, x, frame, v)?);
            Ok(())
        },
        &b,
        &cfg.krylov,
    )?;

    let counts = OpCounts {
        hv: 1 + ld.hv_count + solve.iterations,
        third: ld.third_count,
        krylov: ld.krylov_iters_total + solve.iterations,
    };
    let lambda_used = ld.lambda_used.max(solve.lambda_used);
    Ok(assemble(frame, solve.solution, ld.a, counts, lambda_used))
}

/// Tangent-frame quantities assembled densely.
struct DenseTangentSystem {
    frame: TangentFrame,
    t: DMatrix<f64>,
    /// `H_T + λI`
    a_mat: DMatrix<f64>,
    h: DVector<f64>,
    a: DVector<f64>,
    beta: f64,
}

impl DenseTangentSystem {
    fn build(poly: &SparsePolynomial, x: &[f64], lambda: f64) -> Result<Self> {
        let dd = poly.dense_derivatives(x)?;
        let frame = TangentFrame::at_point(&dd.grad, x)?;
        let d = poly.dim();
        let n = d - 1;
        let t = frame.to_dense();
        let nu = DVector::from_column_slice(frame.nu());
        let ht = t.transpose() * &dd.hess * &t;
        let h = t.transpose() * &dd.hess * &nu;
        let a_mat = &ht + DMatrix::identity(n, n) * lambda;
        let inv = a_mat
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::Singular("H_T + λI"))?;

        // Rotate the third tensor into tangent coordinates one mode at a time:
        // F[p,q,j] = Σ_{abc} T[a,p] T[b,q] T[c,j] D[a,b,c].
        let mut g1 = vec![0.0; d * d * n];
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    let dv = dd.third(a, b, c);
                    if dv == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        g1[(a * d + b) * n + j] += dv * t[(c, j)];
                    }
                }
            }
        }
        let mut g2 = vec![0.0; d * n * n];
        for a in 0..d {
            for b in 0..d {
                for q in 0..n {
                    let tb = t[(b, q)];
                    for j in 0..n {
                        g2[(a * n + q) * n + j] += tb * g1[(a * d + b) * n + j];
                    }
                }
            }
        }
        let mut f3 = vec![0.0; n * n * n];
        for a in 0..d {
            for p in 0..n {
                let ta = t[(a, p)];
                for q in 0..n {
                    for j in 0..n {
                        f3[(p * n + q) * n + j] += ta * g2[(a * n + q) * n + j];
                    }
                }
            }
        }
        // a_j = Σ_{p,q} (H_T+λI)⁻¹_{pq} F[p,q,j]
        let mut a = DVector::zeros(n);
        for p in 0..n {
            for q in 0..n {
                let w = inv[(p, q)];
                for j in 0..n {
                    a[j] += w * f3[(p * n + q) * n + j];
                }
            }
        }
        let beta = frame.grad_norm() / (d as f64 + 1.0);
        Ok(Self {
            frame,
            t,
            a_mat,
            h,
            a,
            beta,
        })
    }

    fn rhs(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.h - a * self.beta
    }

    fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.a_mat
            .clone()
            .lu()
            .solve(rhs)
            .ok_or(Error::Singular("H_T + λI"))
    }

    fn direction(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.t * u - DVector::from_column_slice(self.frame.nu())
    }
}

/// Dense explicit-formula affine normal, for `dim ≤ 64`.
pub fn reference_affine_normal(
    poly: &SparsePolynomial,
    x: &[f64],
    lambda: f64,
) -> Result<AffineNormalResult> {
    let sys = DenseTangentSystem::build(poly, x, lambda)?;
    let u = sys.solve(&sys.rhs(&sys.a))?;
    Ok(assemble(
        &sys.frame,
        u.as_slice().to_vec(),
        sys.a.as_slice().to_vec(),
        OpCounts::default(),
        lambda,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionError {
    /// `‖d₁/‖d₁‖ - d₂/‖d₂‖‖`
    pub normalized_error: f64,
    pub angle_deg: f64,
}

/// Distance and angle between the directions of two nonzero vectors.
pub fn direction_error(d1: &[f64], d2: &[f64]) -> Result<DirectionError> {
    check_len(d1.len(), d2.len())?;
    let (n1, n2) = (norm(d1), norm(d2));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::InvalidInput(
            "direction_error needs nonzero vectors".into(),
        ));
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in d1.iter().zip(d2) {
        let (ua, ub) = (a / n1, b / n2);
        diff += (ua - ub) * (ua - ub);
        sum += (ua + ub) * (ua + ub);
    }
    let (diff, sum) = (diff.sqrt(), sum.sqrt());
    // Equals arccos(û₁·û₂) for unit vectors, without the cancellation near 0°.
    let angle = 2.0 * diff.atan2(sum);
    Ok(DirectionError {
        normalized_error: diff,
        angle_deg: angle.to_degrees(),
    })
}

/// Controlled inexactness injected by [`verify_error_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    /// `‖â - a‖`, applied along a seeded random direction.
    pub delta_a_norm: f64,
    pub seed: u64,
    /// Stop CG after this many iterations instead of solving exactly.
    pub krylov_iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBoundReport {
    pub inv_norm: f64,
    pub beta: f64,
    pub a_error: f64,
    pub residual_norm: f64,
    /// `‖û - u‖` and its bound `‖A⁻¹‖(β‖â-a‖ + ‖r‖)`.
    pub u_error: f64,
    pub u_bound: f64,
    pub d_error: f64,
    pub d_bound: f64,
    pub normalized_error: f64,
    pub normalized_bound: f64,
    /// Whether `‖d̂ - d‖ ≤ ½‖d‖`, the hypothesis of the normalized bound.
    pub normalized_checked: bool,
    pub violations: Vec<String>,
}

impl ErrorBoundReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Compares an exactly computed affine normal with one built from a
/// perturbed `â` and a possibly truncated solve, and checks the propagation
/// bounds for the tangent coefficients, the direction and the normalized
/// direction. Only `cfg.krylov.lambda` is read from `cfg`.
pub fn verify_error_bound(
    poly: &SparsePolynomial,
    x: &[f64],
    cfg: &AffineNormalConfig,
    pert: &Perturbation,
) -> Result<ErrorBoundReport> {
    let lambda = cfg.krylov.lambda;
    let sys = DenseTangentSystem::build(poly, x, lambda)?;
    let n = sys.a.len();
    let eig = SymmetricEigen::new(sys.a_mat.clone());
    let min_abs = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let inv_norm = 1.0 / min_abs;
    let spd = eig.eigenvalues.iter().all(|&v| v > 0.0);

    let u = sys.solve(&sys.rhs(&sys.a))?;
    let d = sys.direction(&u);

    let mut rng = ChaCha8Rng::seed_from_u64(pert.seed);
    let mut delta = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let dn = delta.norm();
    if dn > 0.0 {
        delta *= pert.delta_a_norm / dn;
    }
    let a_hat = &sys.a + &delta;
    let rhs_hat = sys.rhs(&a_hat);
    let u_hat = match pert.krylov_iters {
        Some(k) if spd => {
            let ht = &sys.a_mat - DMatrix::identity(n, n) * lambda;
            let kcfg = KrylovConfig {
                lambda,
                max_iter: k.max(1),
                tol: 0.0,
                escalation: 0,
            };
            let rep = cg_solve(
                |v, out| {
                    out.copy_from_slice((&ht * DVector::from_column_slice(v)).as_slice());
                    Ok(())
                },
                rhs_hat.as_slice(),
                &kcfg,
            )?;
            DVector::from_vec(rep.solution)
        }
        Some(_) => {
            // CG is not applicable; emulate an inexact solve instead.
            let exact = sys.solve(&rhs_hat)?;
            let noise: DVector<f64> = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let scale = 1e-3 * (1.0 + exact.norm()) / noise.norm().max(f64::MIN_POSITIVE);
            exact + noise * scale
        }
        None => sys.solve(&rhs_hat)?,
    };
    let residual = &sys.a_mat * &u_hat - &rhs_hat;
    let d_hat = sys.direction(&u_hat);

    let a_error = (&a_hat - &sys.a).norm();
    let residual_norm = residual.norm();
    let u_error = (&u_hat - &u).norm();
    let d_error = (&d_hat - &d).norm();
    let bound = inv_norm * (sys.beta * a_error + residual_norm);
    let d_norm = d.norm();
    let normalized_error = (&d_hat / d_hat.norm() - &d / d_norm).norm();
    let normalized_checked = d_error <= 0.5 * d_norm;
    let normalized_bound = 2.0 * bound / d_norm;

    // Rounding allowance for quantities that are exactly zero in exact arithmetic.
    let slack = 1e-12 * (1.0 + u.norm());
    let mut violations = Vec::new();
    let mut check = |name: &str, lhs: f64, rhs: f64| {
        // NaN on either side counts as a violation.
        let ok = lhs <= rhs * (1.0 + 1e-9) + slack;
        if !ok {
            violations.push(format!("{name}: {lhs:e} > {rhs:e}"));
        }
    };
    check("tangent coefficient bound", u_error, bound);
    check("direction bound", d_error, bound);
    if normalized_checked {
        check(
            "normalized direction bound",
            normalized_error,
            normalized_bound,
        );
    }
    Ok(ErrorBoundReport {
        inv_norm,
        beta: sys.beta,
        a_error,
        residual_norm,
        u_error,
        u_bound: bound,
        d_error,
        d_bound: bound,
        normalized_error,
        normalized_bound,
        normalized_checked,
        violations,
    })
}
