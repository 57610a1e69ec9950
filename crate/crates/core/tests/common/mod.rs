//! Instance generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use affinorm::{Monomial, SparsePolynomial, TangentFrame};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random polynomial with `dim ≤ 8`, degree ≤ 4, plus a point in `[-2, 2]^dim`
/// where each coordinate is exactly zero with probability 1/4.
pub fn kernel_instance(seed: u64) -> (SparsePolynomial, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=8usize);
    let nterms = rng.random_range(1..=6usize);
    let mut terms = Vec::with_capacity(nterms);
    for _ in 0..nterms {
        let size = rng.random_range(1..=dim.min(4));
        let mut idx = rand::seq::index::sample(&mut rng, dim, size).into_vec();
        idx.sort_unstable();
        let mut left = 4 - size as u32;
        let exps = idx
            .into_iter()
            .map(|i| {
                let extra = rng.random_range(0..=left);
                left -= extra;
                (i, 1 + extra)
            })
            .collect();
        terms.push(Monomial::new(rng.random_range(-2.0..2.0), exps).unwrap());
    }
    let x = (0..dim)
        .map(|_| {
            if rng.random_bool(0.25) {
                0.0
            } else {
                rng.random_range(-2.0..2.0)
            }
        })
        .collect();
    (SparsePolynomial::new(dim, terms).unwrap(), x)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Dominantly convex quartic on `2 ≤ dim ≤ 8` with small mixed terms, and a
/// point with coordinates of magnitude in `[0.5, 1.5]`.
pub fn convex_instance(seed: u64) -> (SparsePolynomial, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(2..=8usize);
    let mut terms = Vec::new();
    for i in 0..dim {
        terms.push(Monomial::new(rng.random_range(0.5..2.0), vec![(i, 4)]).unwrap());
    }
    for i in 0..dim - 1 {
        terms.push(Monomial::new(rng.random_range(0.0..1.0), vec![(i, 2), (i + 1, 2)]).unwrap());
    }
    for _ in 0..dim {
        let size = rng.random_range(2..=dim.min(3));
        let mut idx = rand::seq::index::sample(&mut rng, dim, size).into_vec();
        idx.sort_unstable();
        let exps = idx.into_iter().map(|i| (i, 1)).collect::<Vec<_>>();
        terms.push(Monomial::new(rng.random_range(-0.05..0.05), exps).unwrap());
    }
    let x = (0..dim)
        .map(|_| {
            let m = rng.random_range(0.5..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    (SparsePolynomial::new(dim, terms).unwrap(), x)
}

/// `log |det(Tᵀ ∇²f(x + T t) T + λI)|` with the frame held fixed.
pub fn fixed_frame_logdet(
    poly: &SparsePolynomial,
    x: &[f64],
    t: &DMatrix<f64>,
    s: &[f64],
    lambda: f64,
) -> f64 {
    let shift = t * DVector::from_column_slice(s);
    let xs: Vec<f64> = x.iter().zip(shift.iter()).map(|(a, b)| a + b).collect();
    let h = poly.dense_derivatives(&xs).unwrap().hess;
    let n = t.ncols();
    let m = t.transpose() * h * t + DMatrix::identity(n, n) * lambda;
    let lu = m.lu();
    let u = lu.u();
    (0..n).map(|i| u[(i, i)].abs().ln()).sum()
}

/// Richardson-extrapolated central differences of [`fixed_frame_logdet`].
pub fn logdet_grad_fd(
    poly: &SparsePolynomial,
    x: &[f64],
    frame: &TangentFrame,
    lambda: f64,
) -> Vec<f64> {
    let t = frame.to_dense();
    let n = t.ncols();
    let h = 1e-3;
    let central = |i: usize, h: f64| {
        let mut e = vec![0.0; n];
        e[i] = h;
        let fp = fixed_frame_logdet(poly, x, &t, &e, lambda);
        e[i] = -h;
        let fm = fixed_frame_logdet(poly, x, &t, &e, lambda);
        (fp - fm) / (2.0 * h)
    };
    (0..n)
        .map(|i| (4.0 * central(i, h / 2.0) - central(i, h)) / 3.0)
        .collect()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
