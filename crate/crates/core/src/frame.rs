//! Unit normal and orthonormal tangent basis at a point of a level set.
//!
//! The tangent basis is the first `d-1` columns of one Householder reflector
//! `P = I - 2wwᵀ/(wᵀw)` whose last column is `±ν`. It is applied implicitly:
//! lifting `y ↦ Ty` and projecting `z ↦ Tᵀz` cost `O(d)` and need no `d×d`
//! storage.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, norm};
use crate::polynomial::DerivativeOracle;

const GRAD_FLOOR_REL: f64 = 1e-12;

/// Gradient norms at or below this value are treated as critical points.
pub fn grad_floor(x: &[f64]) -> f64 {
    GRAD_FLOOR_REL * (1.0 + norm(x))
}

#[derive(Debug, Clone, PartialEq)]
enum Basis {
    Householder { w: Vec<f64>, scale: f64 },
    Dense(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame {
    nu: Vec<f64>,
    grad_norm: f64,
    basis: Basis,
}

/// Frame for gradient `g`, with the floor taken at the origin.
pub fn build_frame(g: &[f64]) -> Result<TangentFrame> {
    TangentFrame::with_floor(g, GRAD_FLOOR_REL)
}

impl TangentFrame {
    /// Frame for the gradient `g` observed at `x`.
    pub fn at_point(g: &[f64], x: &[f64]) -> Result<Self> {
        check_len(g.len(), x.len())?;
        Self::with_floor(g, grad_floor(x))
    }

    pub fn with_floor(g: &[f64], floor: f64) -> Result<Self> {
        if g.is_empty() {
            return Err(Error::InvalidInput("empty gradient".into()));
        }
        let gn = norm(g);
        if !gn.is_finite() {
            return Err(Error::NonFiniteValue("gradient"));
        }
        if gn <= floor {
            return Err(Error::ZeroGradient { norm: gn, floor });
        }
        let d = g.len();
        let nu: Vec<f64> = g.iter().map(|gi| gi / gn).collect();
        // w = e_last + s ν with s = sign(ν_last) avoids cancellation; then
        // P e_last = -s ν and the remaining columns span ν^⊥.
        let s = if nu[d - 1] >= 0.0 { 1.0 } else { -1.0 };
        let mut w: Vec<f64> = nu.iter().map(|v| s * v).collect();
        w[d - 1] += 1.0;
        let scale = 2.0 / dot(&w, &w);
        Ok(Self {
            nu,
            grad_norm: gn,
            basis: Basis::Householder { w, scale },
        })
    }

    pub fn dim(&self) -> usize {
        self.nu.len()
    }

    /// Tangent dimension `d - 1`.
    pub fn tangent_dim(&self) -> usize {
        self.nu.len() - 1
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad_norm
    }

    /// `T y` for a tangent-coordinate vector `y`.
    pub fn lift(&self, y: &[f64]) -> Vec<f64> {
        let n = self.tangent_dim();
        assert_eq!(y.len(), n, "lift expects a vector of length d-1");
        match &self.basis {
            Basis::Householder { w, scale } => {
                let mut z = Vec::with_capacity(n + 1);
                z.extend_from_slice(y);
                z.push(0.0);
                let c = scale * dot(&w[..n], y);
                for (zi, wi) in z.iter_mut().zip(w) {
                    *zi -= c * wi;
                }
                z
            }
            Basis::Dense(t) => (t * nalgebra::DVector::from_column_slice(y))
                .as_slice()
                .to_vec(),
        }
    }

    /// `Tᵀ z` for an ambient vector `z`.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        let n = self.tangent_dim();
        assert_eq!(z.len(), n + 1, "project expects a vector of length d");
        match &self.basis {
            Basis::Householder { w, scale } => {
                let c = scale * dot(w, z);
                z[..n].iter().zip(w).map(|(zi, wi)| zi - c * wi).collect()
            }
            Basis::Dense(t) => (t.transpose() * nalgebra::DVector::from_column_slice(z))
                .as_slice()
                .to_vec(),
        }
    }

    /// Materializes `T` as a `d × (d-1)` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.basis {
            Basis::Dense(t) => t.clone(),
            Basis::Householder { .. } => {
                let n = self.tangent_dim();
                let mut t = DMatrix::zeros(n + 1, n);
                let mut e = vec![0.0; n];
                for j in 0..n {
                    e[j] = 1.0;
                    t.set_column(j, &nalgebra::DVector::from_vec(self.lift(&e)));
                    e[j] = 0.0;
                }
                t
            }
        }
    }

    /// The same tangent space with basis `T Q` for an orthogonal
    /// `(d-1) × (d-1)` matrix `Q`. The result stores `T Q` densely.
    pub fn rotated(&self, q: &DMatrix<f64>) -> Result<Self> {
        let n = self.tangent_dim();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: q.nrows(),
            });
        }
        Ok(Self {
            nu: self.nu.clone(),
            grad_norm: self.grad_norm,
            basis: Basis::Dense(self.to_dense() * q),
        })
    }
}

/// `Tᵀ ∇²f(x) T v`: one lift, one Hessian–vector product, one projection.
pub fn tangent_op<O: DerivativeOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    frame: &TangentFrame,
    v: &[f64],
) -> Result<Vec<f64>> {
    check_len(frame.tangent_dim(), v.len())?;
    let hv = oracle.hess_vec(x, &frame.lift(v))?;
    Ok(frame.project(&hv))
}

/// `h = Tᵀ ∇²f(x) ν`.
pub fn mixed_term<O: DerivativeOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    frame: &TangentFrame,
) -> Result<Vec<f64>> {
    let hv = oracle.hess_vec(x, frame.nu())?;
    Ok(frame.project(&hv))
}
