//! Matrix-free affine normal directions for level sets of sparse polynomials.
//!
//! The affine normal at a regular point `x` of `f` is computed in the
//! ambient form `T u - ν`, where `ν` is the unit gradient, `T` an orthonormal
//! tangent basis and `u` solves the regularized tangent system
//!
//! ```text
//! (H_T + λI) u = h - ‖∇f‖/(d+1) · ∇_t log det(H_T + λI)
//! ```
//!
//! Every quantity is reached through Hessian–vector products and directional
//! third-derivative contractions of the polynomial, so no Hessian or
//! third-order tensor is ever assembled. The log-determinant gradient is
//! evaluated either exactly (one solve per tangent axis) or with Rademacher
//! probes (one solve per probe).
//!
//! ```
//! use affinorm::{affine_normal, AffineNormalConfig, SparsePolynomial};
//!
//! let sphere = SparsePolynomial::sphere(3);
//! let res = affine_normal(&sphere, &[1.0, 2.0, 2.0], &AffineNormalConfig::exact()).unwrap();
//! let expected = [-1.0 / 3.0, -2.0 / 3.0, -2.0 / 3.0];
//! for (a, b) in res.direction_unit.iter().zip(expected) {
//!     assert!((a - b).abs() < 1e-12);
//! }
//! ```

pub mod affine;
pub mod bench;
pub mod cli;
mod error;
pub mod families;
pub mod frame;
pub mod krylov;
pub(crate) mod linalg;
pub mod logdet;
pub mod polynomial;

pub use affine::{
    affine_normal, affine_normal_in_frame, direction_error, reference_affine_normal,
    verify_error_bound, AffineNormalConfig, AffineNormalResult, DirectionError, ErrorBoundReport,
    LogDetMode, OpCounts, Perturbation,
};
pub use error::{Error, Result};
pub use frame::{build_frame, TangentFrame};
pub use krylov::{cg_solve, KrylovConfig, SolveReport};
pub use logdet::{logdet_grad_exact, logdet_grad_hutchinson, LogDetGradReport, ProbeConfig};
pub use polynomial::{
    partial_derivative_monomial, CountingOracle, DenseDerivatives, DerivativeOracle, Monomial,
    SparsePolynomial,
};
