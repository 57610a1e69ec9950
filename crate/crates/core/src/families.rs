//! Test problem generators and deterministic sample points.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polynomial::{Monomial, SparsePolynomial};

/// Default weight of the `x_i⁴` stabilization terms in [`random_sparse`].
pub const DEFAULT_STAB_EPS: f64 = 0.01;

const MAX_REDRAWS: usize = 1000;

/// Structured sparse quartic on `R^dim` (`dim ≥ 3`), 0-based indices:
///
/// ```text
/// Σ_i a_i x_i⁴ + Σ_i b_i x_i² x_{i+1}² + Σ_i c_i x_i³ x_{i+2} + Σ_k γ_k x_{3k}² x_{3k+1} x_{3k+2}
/// ```
///
/// with `a_i = 1 + 0.1 (i mod 7)`, `b_i = 0.5 + 0.05 (i mod 5)`,
/// `c_i = 0.1 (1 + i mod 3)` and `γ_k = 0.2 (1 + k mod 4)`.
pub fn quartic_family(dim: usize) -> Result<SparsePolynomial> {
    if dim < 3 {
        return Err(Error::InvalidInput(format!(
            "quartic family needs dim >= 3, got {dim}"
        )));
    }
    let mut terms = Vec::with_capacity(4 * dim);
    let mono = |c: f64, e: Vec<(usize, u32)>| Monomial::new(c, e).expect("valid by construction");
    for i in 0..dim {
        terms.push(mono(1.0 + 0.1 * (i % 7) as f64, vec![(i, 4)]));
    }
    for i in 0..dim - 1 {
        terms.push(mono(0.5 + 0.05 * (i % 5) as f64, vec![(i, 2), (i + 1, 2)]));
    }
    for i in 0..dim - 2 {
        terms.push(mono(0.1 * (1 + i % 3) as f64, vec![(i, 3), (i + 2, 1)]));
    }
    for k in 0..dim / 3 {
        terms.push(mono(
            0.2 * (1 + k % 4) as f64,
            vec![(3 * k, 2), (3 * k + 1, 1), (3 * k + 2, 1)],
        ));
    }
    SparsePolynomial::new(dim, terms)
}

/// Expected term count of [`quartic_family`].
pub fn quartic_term_count(dim: usize) -> usize {
    dim + (dim - 1) + (dim - 2) + dim / 3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomSparseSpec {
    pub dim: usize,
    pub m: usize,
    pub seed: u64,
    pub stab_eps: f64,
}

impl RandomSparseSpec {
    pub fn new(dim: usize, m: usize, seed: u64) -> Self {
        Self {
            dim,
            m,
            seed,
            stab_eps: DEFAULT_STAB_EPS,
        }
    }
}

/// `m` random monomials plus `stab_eps · x_i⁴` for every coordinate.
///
/// Each random monomial has support size uniform in `{2,..,5}` (capped at
/// `dim`) over distinct uniform indices, exponents in `{1,2}` lowered until
/// the degree is at most `max(4, support)`, and a coefficient uniform in
/// `[-1, 1] \ {0}`. Repeated multi-indices are redrawn, so the result has
/// exactly `m + dim` terms whenever the index space allows it.
pub fn random_sparse(spec: &RandomSparseSpec) -> Result<SparsePolynomial> {
    if spec.dim < 2 {
        return Err(Error::InvalidInput("random_sparse needs dim >= 2".into()));
    }
    if spec.m == 0 {
        return Err(Error::InvalidInput("random_sparse needs m >= 1".into()));
    }
    if !(spec.stab_eps >= 0.0 && spec.stab_eps.is_finite()) {
        return Err(Error::InvalidInput("stab_eps must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen: HashSet<Vec<(usize, u32)>> = HashSet::with_capacity(spec.m);
    let mut terms = Vec::with_capacity(spec.m + spec.dim);
    for _ in 0..spec.m {
        let mut exps = draw_multi_index(&mut rng, spec.dim);
        for _ in 0..MAX_REDRAWS {
            if !seen.contains(&exps) {
                break;
            }
            exps = draw_multi_index(&mut rng, spec.dim);
        }
        seen.insert(exps.clone());
        let coeff = loop {
            let c: f64 = rng.random_range(-1.0..=1.0);
            if c != 0.0 {
                break c;
            }
        };
        terms.push(Monomial::new(coeff, exps)?);
    }
    if spec.stab_eps > 0.0 {
        for i in 0..spec.dim {
            terms.push(Monomial::new(spec.stab_eps, vec![(i, 4)])?);
        }
    }
    SparsePolynomial::new(spec.dim, terms)
}

fn draw_multi_index(rng: &mut ChaCha8Rng, dim: usize) -> Vec<(usize, u32)> {
    let size = rng.random_range(2..=5usize).min(dim);
    let mut idx = sample(rng, dim, size).into_vec();
    idx.sort_unstable();
    let mut exps: Vec<(usize, u32)> = idx
        .into_iter()
        .map(|i| (i, rng.random_range(1..=2u32)))
        .collect();
    let cap = (size as u32).max(4);
    let mut total: u32 = exps.iter().map(|&(_, e)| e).sum();
    for e in exps.iter_mut().rev() {
        if total <= cap {
            break;
        }
        if e.1 == 2 {
            e.1 = 1;
            total -= 1;
        }
    }
    exps
}

/// `x_i = 0.6 + 0.4 sin(i + 1 + 0.7 p)` for points `p = 1..=count`.
pub fn sample_points(dim: usize, count: usize) -> Vec<Vec<f64>> {
    (1..=count)
        .map(|p| {
            (0..dim)
                .map(|i| 0.6 + 0.4 * ((i + 1) as f64 + 0.7 * p as f64).sin())
                .collect()
        })
        .collect()
}
