//! Sparse multi-index polynomials and their matrix-free derivative kernels.
//!
//! A polynomial is a list of monomials `c · Π x_i^{α_i}`, each stored on its
//! support only. Every kernel walks the term list once and touches only the
//! support entries of each monomial, so the cost of a gradient, a
//! Hessian–vector product or a third-order contraction is `O(nnz)` regardless
//! of the ambient dimension.
//!
//! The fast kernels divide by the coordinates of the support. When one of
//! them is exactly zero the monomial falls back to direct falling-factorial
//! differentiation restricted to its support, which is exact everywhere and
//! still independent of the ambient dimension.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Largest dimension for which dense derivative tensors are built.
pub const DENSE_CAP: usize = 64;

/// One term `coeff · Π x_i^{e_i}` stored on its support.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    coeff: f64,
    exps: Vec<(usize, u32)>,
    degree: u32,
}

impl Monomial {
    /// `exps` must list `(index, exponent)` pairs with strictly increasing
    /// indices and positive exponents.
    pub fn new(coeff: f64, exps: Vec<(usize, u32)>) -> Result<Self> {
        if !coeff.is_finite() {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        for w in exps.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::InvalidInput(format!(
                    "indices must be strictly increasing, found {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(i, _)) = exps.iter().find(|&&(_, e)| e == 0) {
            return Err(Error::InvalidInput(format!("zero exponent at index {i}")));
        }
        let degree = exps.iter().map(|&(_, e)| e).sum();
        Ok(Self {
            coeff,
            exps,
            degree,
        })
    }

    pub fn coeff(&self) -> f64 {
        self.coeff
    }

    pub fn exps(&self) -> &[(usize, u32)] {
        &self.exps
    }

    pub fn support_len(&self) -> usize {
        self.exps.len()
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Mixed partial of this monomial with differentiation orders given per
    /// support position.
    fn support_partial(&self, x: &[f64], orders: &[u32]) -> f64 {
        let mut val = self.coeff;
        for (&(i, a), &b) in self.exps.iter().zip(orders) {
            if b > a {
                return 0.0;
            }
            val *= falling_factorial(a, b) * x[i].powi((a - b) as i32);
        }
        val
    }
}

/// `(r)_k = r (r-1) ... (r-k+1)`.
fn falling_factorial(r: u32, k: u32) -> f64 {
    (0..k).map(|t| f64::from(r - t)).product()
}

/// Differentiates `x^alpha` by `∂^beta`.
///
/// Returns the coefficient `(α)_β` and the residual multi-index `α - β`, or
/// `None` when `β ≰ α` and the derivative vanishes. Missing trailing entries
/// are treated as zero.
pub fn partial_derivative_monomial(alpha: &[u32], beta: &[u32]) -> Option<(f64, Vec<u32>)> {
    let n = alpha.len().max(beta.len());
    let mut coeff = 1.0;
    let mut residual = Vec::with_capacity(n);
    for i in 0..n {
        let a = alpha.get(i).copied().unwrap_or(0);
        let b = beta.get(i).copied().unwrap_or(0);
        if b > a {
            return None;
        }
        coeff *= falling_factorial(a, b);
        residual.push(a - b);
    }
    Some((coeff, residual))
}

/// Dense gradient, Hessian and third-derivative tensor at one point.
#[derive(Debug, Clone)]
pub struct DenseDerivatives {
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
    third: Vec<f64>,
    dim: usize,
}

impl DenseDerivatives {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn third(&self, i: usize, j: usize, k: usize) -> f64 {
        self.third[(i * self.dim + j) * self.dim + k]
    }

    /// `Σ_{i,j} ∂_{ijk} u_i v_j` for every `k`.
    pub fn third_contract(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for (i, &ui) in u.iter().enumerate().take(d) {
            for (j, &vj) in v.iter().enumerate().take(d) {
                let w = ui * vj;
                if w == 0.0 {
                    continue;
                }
                let row = &self.third[(i * d + j) * d..(i * d + j + 1) * d];
                for (o, t) in out.iter_mut().zip(row) {
                    *o += t * w;
                }
            }
        }
        out
    }

    fn add_third(&mut self, idx: [usize; 3], val: f64) {
        let d = self.dim;
        let [a, b, c] = idx;
        let mut perms = [
            [a, b, c],
            [a, c, b],
            [b, a, c],
            [b, c, a],
            [c, a, b],
            [c, b, a],
        ];
        // Visit each distinct permutation once.
        perms.sort_unstable();
        let mut prev = None;
        for p in perms {
            if prev == Some(p) {
                continue;
            }
            prev = Some(p);
            self.third[(p[0] * d + p[1]) * d + p[2]] += val;
        }
    }
}

/// `f(x) = Σ_ℓ c_ℓ x^{α_ℓ}` on `R^dim`.
#[derive(Debug, Clone)]
pub struct SparsePolynomial {
    dim: usize,
    terms: Vec<Monomial>,
    packed: Packed,
}

impl PartialEq for SparsePolynomial {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.terms == other.terms
    }
}

/// All supports in one contiguous array, so the fast kernels stream through
/// memory instead of chasing one allocation per term.
#[derive(Debug, Clone, Default)]
struct Packed {
    offsets: Vec<usize>,
    entries: Vec<(u32, u32)>,
}

impl Packed {
    fn build(terms: &[Monomial]) -> Self {
        let mut offsets = Vec::with_capacity(terms.len() + 1);
        let mut entries = Vec::with_capacity(terms.iter().map(Monomial::support_len).sum());
        offsets.push(0);
        for t in terms {
            entries.extend(t.exps.iter().map(|&(i, e)| (i as u32, e)));
            offsets.push(entries.len());
        }
        Self { offsets, entries }
    }
}

#[inline]
fn packed_value(coeff: f64, sup: &[(u32, u32)], x: &[f64]) -> f64 {
    let mut t = coeff;
    for &(i, e) in sup {
        t *= x[i as usize].powi(e as i32);
    }
    t
}

#[inline]
fn packed_nonzero(sup: &[(u32, u32)], x: &[f64]) -> bool {
    sup.iter().all(|&(i, _)| x[i as usize] != 0.0)
}

impl SparsePolynomial {
    /// Builds a polynomial, merging monomials with identical multi-indices
    /// (first occurrence keeps its position) and dropping zero coefficients.
    pub fn new(dim: usize, terms: Vec<Monomial>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        let mut merged: Vec<Monomial> = Vec::with_capacity(terms.len());
        let mut seen: HashMap<Vec<(usize, u32)>, usize> = HashMap::with_capacity(terms.len());
        for t in terms {
            if let Some(&(i, _)) = t.exps.last() {
                if i >= dim {
                    return Err(Error::InvalidInput(format!(
                        "index {i} out of range for dimension {dim}"
                    )));
                }
            }
            match seen.get(&t.exps) {
                Some(&pos) => merged[pos].coeff += t.coeff,
                None => {
                    seen.insert(t.exps.clone(), merged.len());
                    merged.push(t);
                }
            }
        }
        merged.retain(|t| t.coeff != 0.0);
        if dim > u32::MAX as usize {
            return Err(Error::InvalidInput(format!("dimension {dim} too large")));
        }
        Ok(Self::from_parts(dim, merged))
    }

    /// `Σ_i x_i²`
    pub fn sphere(dim: usize) -> Self {
        let terms = (0..dim)
            .map(|i| Monomial {
                coeff: 1.0,
                exps: vec![(i, 2)],
                degree: 2,
            })
            .collect();
        Self::from_parts(dim, terms)
    }

    fn from_parts(dim: usize, terms: Vec<Monomial>) -> Self {
        let packed = Packed::build(&terms);
        Self { dim, terms, packed }
    }

    /// Terms paired with their packed supports.
    fn packed_terms(&self) -> impl Iterator<Item = (&Monomial, &[(u32, u32)])> {
        let p = &self.packed;
        self.terms
            .iter()
            .zip(p.offsets.windows(2))
            .map(move |(t, w)| (t, &p.entries[w[0]..w[1]]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Total support size `Σ_ℓ |supp α_ℓ|`.
    pub fn nnz(&self) -> usize {
        self.terms.iter().map(Monomial::support_len).sum()
    }

    pub fn avg_support(&self) -> f64 {
        if self.terms.is_empty() {
            0.0
        } else {
            self.nnz() as f64 / self.terms.len() as f64
        }
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_len(self.dim, x.len())?;
        Ok(self
            .packed_terms()
            .map(|(t, sup)| packed_value(t.coeff, sup, x))
            .sum())
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, x.len())?;
        let mut g = vec![0.0; self.dim];
        let mut orders = Vec::new();
        for (t, sup) in self.packed_terms() {
            if packed_nonzero(sup, x) {
                let val = packed_value(t.coeff, sup, x);
                for &(i, a) in sup {
                    let i = i as usize;
                    g[i] += val * f64::from(a) / x[i];
                }
            } else {
                orders.clear();
                orders.resize(t.exps.len(), 0);
                for (p, &(i, _)) in t.exps.iter().enumerate() {
                    orders[p] = 1;
                    g[i] += t.support_partial(x, &orders);
                    orders[p] = 0;
                }
            }
        }
        Ok(g)
    }

    /// `∇²f(x) v`.
    pub fn hess_vec(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.hess_vec_into(x, v, &mut out)?;
        Ok(out)
    }

    /// Accumulates `∇²f(x) v` into `out` (which is overwritten) and returns
    /// the number of support entries written, at most [`Self::nnz`].
    pub fn hess_vec_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<usize> {
        check_len(self.dim, x.len())?;
        check_len(self.dim, v.len())?;
        check_len(self.dim, out.len())?;
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut touched = 0;
        let mut orders = Vec::new();
        for (t, sup) in self.packed_terms() {
            if t.degree < 2 {
                // linear and constant terms have no curvature
            } else if packed_nonzero(sup, x) {
                let val = packed_value(t.coeff, sup, x);
                let beta: f64 = sup
                    .iter()
                    .map(|&(j, a)| f64::from(a) * v[j as usize] / x[j as usize])
                    .sum();
                for &(i, a) in sup {
                    let i = i as usize;
                    let ai = f64::from(a);
                    out[i] += val * (ai / x[i]) * beta - val * (ai / (x[i] * x[i])) * v[i];
                }
            } else {
                let s = t.exps.len();
                orders.clear();
                orders.resize(s, 0);
                for p in 0..s {
                    let mut acc = 0.0;
                    orders[p] += 1;
                    for (q, &(j, _)) in t.exps.iter().enumerate() {
                        orders[q] += 1;
                        acc += t.support_partial(x, &orders) * v[j];
                        orders[q] -= 1;
                    }
                    orders[p] -= 1;
                    out[t.exps[p].0] += acc;
                }
            }
            touched += t.exps.len();
        }
        Ok(touched)
    }

    /// `D³f(x)[u, v, ·]`, the vector with entries `Σ_{i,j} ∂_{ijk} f(x) u_i v_j`.
    pub fn third_dir(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, x.len())?;
        check_len(self.dim, u.len())?;
        check_len(self.dim, v.len())?;
        let mut out = vec![0.0; self.dim];
        let mut orders = Vec::new();
        for (t, sup) in self.packed_terms() {
            if t.degree < 3 {
                continue;
            }
            if packed_nonzero(sup, x) {
                let val = packed_value(t.coeff, sup, x);
                let (mut au, mut av, mut c) = (0.0, 0.0, 0.0);
                for &(i, a) in sup {
                    let i = i as usize;
                    let ai = f64::from(a);
                    au += ai * u[i] / x[i];
                    av += ai * v[i] / x[i];
                    c += ai * (u[i] * v[i]) / (x[i] * x[i]);
                }
                let quad = au * av - c;
                for &(k, a) in sup {
                    let k = k as usize;
                    let xk = x[k];
                    let ak = f64::from(a);
                    out[k] += val
                        * ak
                        * (quad / xk - (u[k] * av + v[k] * au) / (xk * xk)
                            + 2.0 * (u[k] * v[k]) / (xk * xk * xk));
                }
            } else {
                let s = t.exps.len();
                orders.clear();
                orders.resize(s, 0);
                for p in 0..s {
                    let mut acc = 0.0;
                    orders[p] += 1;
                    for (a, &(i, _)) in t.exps.iter().enumerate() {
                        if u[i] == 0.0 {
                            continue;
                        }
                        orders[a] += 1;
                        for (b, &(j, _)) in t.exps.iter().enumerate() {
                            orders[b] += 1;
                            acc += t.support_partial(x, &orders) * u[i] * v[j];
                            orders[b] -= 1;
                        }
                        orders[a] -= 1;
                    }
                    orders[p] -= 1;
                    out[t.exps[p].0] += acc;
                }
            }
        }
        Ok(out)
    }

    /// Dense gradient, Hessian and third tensor by direct falling-factorial
    /// evaluation. Refuses dimensions above [`DENSE_CAP`].
    pub fn dense_derivatives(&self, x: &[f64]) -> Result<DenseDerivatives> {
        let d = self.dim;
        if d > DENSE_CAP {
            return Err(Error::DenseCapExceeded {
                dim: d,
                cap: DENSE_CAP,
            });
        }
        check_len(d, x.len())?;
        let mut out = DenseDerivatives {
            grad: vec![0.0; d],
            hess: DMatrix::zeros(d, d),
            third: vec![0.0; d * d * d],
            dim: d,
        };
        let mut orders = Vec::new();
        for t in &self.terms {
            let s = t.exps.len();
            orders.clear();
            orders.resize(s, 0u32);
            for a in 0..s {
                let ia = t.exps[a].0;
                orders[a] += 1;
                out.grad[ia] += t.support_partial(x, &orders);
                for b in a..s {
                    let ib = t.exps[b].0;
                    orders[b] += 1;
                    let h = t.support_partial(x, &orders);
                    out.hess[(ia, ib)] += h;
                    if ia != ib {
                        out.hess[(ib, ia)] += h;
                    }
                    for c in b..s {
                        orders[c] += 1;
                        let val = t.support_partial(x, &orders);
                        out.add_third([ia, ib, t.exps[c].0], val);
                        orders[c] -= 1;
                    }
                    orders[b] -= 1;
                }
                orders[a] -= 1;
            }
        }
        Ok(out)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: RawPolynomial = serde_json::from_str(s).map_err(|e| Error::SyntaxFormat {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        raw.into_polynomial()
    }

    pub fn to_json_string(&self) -> String {
        let raw = RawPolynomial {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|t| RawTerm {
                    coeff: t.coeff,
                    exps: t
                        .exps
                        .iter()
                        .map(|&(i, e)| (i as i64, i64::from(e)))
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&raw).expect("polynomial serialization cannot fail")
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolynomial {
    dim: usize,
    terms: Vec<RawTerm>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    coeff: f64,
    exps: Vec<(i64, i64)>,
}

impl RawPolynomial {
    fn into_polynomial(self) -> Result<SparsePolynomial> {
        if self.dim == 0 {
            return Err(Error::InvalidInput("\"dim\" must be positive".into()));
        }
        let mut terms = Vec::with_capacity(self.terms.len());
        for (n, raw) in self.terms.into_iter().enumerate() {
            let bad = |msg: String| Error::TermFormat { term: n, msg };
            let mut exps = Vec::with_capacity(raw.exps.len());
            for &(i, e) in &raw.exps {
                if i < 0 || i as u64 >= self.dim as u64 {
                    return Err(bad(format!("index {i} out of range [0, {})", self.dim)));
                }
                if e < 1 || e > i64::from(u32::MAX) {
                    return Err(bad(format!(
                        "exponent {e} at index {i} must be a positive integer"
                    )));
                }
                if let Some(&(prev, _)) = exps.last() {
                    if prev == i as usize {
                        return Err(bad(format!("duplicate index {i}")));
                    }
                    if prev > i as usize {
                        return Err(bad(format!(
                            "indices not sorted ascending ({prev} before {i})"
                        )));
                    }
                }
                exps.push((i as usize, e as u32));
            }
            terms.push(Monomial::new(raw.coeff, exps).map_err(|e| bad(e.to_string()))?);
        }
        SparsePolynomial::new(self.dim, terms)
    }
}

/// The derivative access the affine-normal pipeline needs.
pub trait DerivativeOracle: Sync {
    fn dim(&self) -> usize;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn hess_vec(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>>;
    fn third_dir(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<Vec<f64>>;
}

impl DerivativeOracle for SparsePolynomial {
    fn dim(&self) -> usize {
        self.dim
    }
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        SparsePolynomial::gradient(self, x)
    }
    fn hess_vec(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        SparsePolynomial::hess_vec(self, x, v)
    }
    fn third_dir(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        SparsePolynomial::third_dir(self, x, u, v)
    }
}

/// Wraps an oracle and counts kernel invocations. Counts are exact under
/// concurrent use.
#[derive(Debug)]
pub struct CountingOracle<'a, O: ?Sized> {
    inner: &'a O,
    gradient: AtomicUsize,
    hess_vec: AtomicUsize,
    third_dir: AtomicUsize,
}

impl<'a, O: DerivativeOracle + ?Sized> CountingOracle<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self {
            inner,
            gradient: AtomicUsize::new(0),
            hess_vec: AtomicUsize::new(0),
            third_dir: AtomicUsize::new(0),
        }
    }

    pub fn gradient_calls(&self) -> usize {
        self.gradient.load(Ordering::SeqCst)
    }

    pub fn hess_vec_calls(&self) -> usize {
        self.hess_vec.load(Ordering::SeqCst)
    }

    pub fn third_dir_calls(&self) -> usize {
        self.third_dir.load(Ordering::SeqCst)
    }
}

impl<O: DerivativeOracle + ?Sized> DerivativeOracle for CountingOracle<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.gradient.fetch_add(1, Ordering::SeqCst);
        self.inner.gradient(x)
    }
    fn hess_vec(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.hess_vec.fetch_add(1, Ordering::SeqCst);
        self.inner.hess_vec(x, v)
    }
    fn third_dir(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.third_dir.fetch_add(1, Ordering::SeqCst);
        self.inner.third_dir(x, u, v)
    }
}
