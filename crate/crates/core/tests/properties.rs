mod common;

use affinorm::frame::tangent_op;
use affinorm::{
    affine_normal, families::quartic_family, AffineNormalConfig, KrylovConfig, Monomial,
    SparsePolynomial, TangentFrame,
};
use common::*;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vecs(seed: u64, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    (random_vec(&mut rng, d), random_vec(&mut rng, d))
}

/// Neumaier-compensated sum of the term values.
fn compensated_eval(poly: &SparsePolynomial, x: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for t in poly.terms() {
        let v = t
            .exps()
            .iter()
            .fold(t.coeff(), |acc, &(i, e)| acc * x[i].powi(e as i32));
        let n = s + v;
        c += if s.abs() >= v.abs() {
            (s - n) + v
        } else {
            (v - n) + s
        };
        s = n;
    }
    s + c
}

// Kernel checks share the relative tolerance of the acceptance oracles; the
// division-based kernels lose a few thousand ulps next to tiny coordinates.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn kernels_match_dense(seed in any::<u64>()) {
        let (poly, x) = kernel_instance(seed);
        let (u, v) = vecs(seed, poly.dim());
        let dense = poly.dense_derivatives(&x).unwrap();

        let g = poly.gradient(&x).unwrap();
        let scale = max_abs(dense.grad.as_slice()).max(1.0);
        prop_assert!(max_abs_diff(&g, dense.grad.as_slice()) <= 1e-10 * scale);

        let hv = poly.hess_vec(&x, &v).unwrap();
        let want = &dense.hess * DVector::from_column_slice(&v);
        prop_assert!(max_abs_diff(&hv, want.as_slice()) <= 1e-10 * max_abs(want.as_slice()).max(1.0));

        let t = poly.third_dir(&x, &u, &v).unwrap();
        let want = dense.third_contract(&u, &v);
        prop_assert!(max_abs_diff(&t, &want) <= 1e-10 * max_abs(&want).max(1.0));
    }

    #[test]
    fn third_dir_is_symmetric(seed in any::<u64>()) {
        let (poly, x) = kernel_instance(seed);
        let (u, v) = vecs(seed, poly.dim());
        let a = poly.third_dir(&x, &u, &v).unwrap();
        let b = poly.third_dir(&x, &v, &u).unwrap();
        prop_assert!(max_abs_diff(&a, &b) <= 1e-10 * max_abs(&a).max(1.0));
    }

    #[test]
    fn hess_vec_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let (poly, x) = kernel_instance(seed);
        let (u, v) = vecs(seed, poly.dim());
        let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
        let hw = poly.hess_vec(&x, &w).unwrap();
        let hu = poly.hess_vec(&x, &u).unwrap();
        let hv = poly.hess_vec(&x, &v).unwrap();
        let comb: Vec<f64> = hu.iter().zip(&hv).map(|(a, b)| alpha * a + beta * b).collect();
        prop_assert!(max_abs_diff(&hw, &comb) <= 1e-10 * max_abs(&comb).max(1.0));
    }

    #[test]
    fn eval_matches_compensated_sum(seed in any::<u64>()) {
        let (poly, x) = kernel_instance(seed);
        let abs_sum: f64 = poly
            .terms()
            .iter()
            .map(|t| t.exps().iter().fold(t.coeff().abs(), |a, &(i, e)| a * x[i].abs().powi(e as i32)))
            .sum();
        let got = poly.eval(&x).unwrap();
        prop_assert!((got - compensated_eval(&poly, &x)).abs() <= 1e-14 * abs_sum.max(1.0));
    }

    #[test]
    fn tangent_operator_is_symmetric(seed in any::<u64>()) {
        let (poly, x) = convex_instance(seed);
        let g = poly.gradient(&x).unwrap();
        let frame = TangentFrame::at_point(&g, &x).unwrap();
        let (u, v) = vecs(seed, frame.tangent_dim());
        let au = tangent_op(&poly, &x, &frame, &u).unwrap();
        let av = tangent_op(&poly, &x, &frame, &v).unwrap();
        let lhs: f64 = av.iter().zip(&u).map(|(a, b)| a * b).sum();
        let rhs: f64 = au.iter().zip(&v).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn frame_is_orthonormal_and_tangent(g in prop::collection::vec(-10.0f64..10.0, 2..12)) {
        prop_assume!(g.iter().any(|v| v.abs() > 1e-3));
        let frame = TangentFrame::with_floor(&g, 0.0).unwrap();
        let t = frame.to_dense();
        let n = frame.tangent_dim();
        let gram = t.transpose() * &t;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[(i, j)] - want).abs() <= 1e-12);
            }
        }
        let tn = t.transpose() * DVector::from_column_slice(frame.nu());
        prop_assert!(max_abs(tn.as_slice()) <= 1e-12);
    }

    #[test]
    fn direction_is_invariant_under_objective_scaling(seed in 0u64..1000, s in 0.1f64..10.0) {
        let (poly, x) = convex_instance(seed);
        let scaled = SparsePolynomial::new(
            poly.dim(),
            poly.terms()
                .iter()
                .map(|t| Monomial::new(s * t.coeff(), t.exps().to_vec()).unwrap())
                .collect(),
        )
        .unwrap();
        // The shift does not scale with f, so compare unshifted.
        let cfg = AffineNormalConfig::exact().with_krylov(KrylovConfig::exact().with_lambda(0.0));
        let a = affine_normal(&poly, &x, &cfg).unwrap().direction;
        let b = affine_normal(&scaled, &x, &cfg).unwrap().direction;
        prop_assert!(max_abs_diff(&a, &b) <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn logdet_gradient_matches_finite_differences(seed in any::<u64>()) {
        let (poly, x) = convex_instance(seed);
        let g = poly.gradient(&x).unwrap();
        let frame = TangentFrame::at_point(&g, &x).unwrap();
        let rep = affinorm::logdet_grad_exact(&poly, &x, &frame, &KrylovConfig::exact()).unwrap();
        let fd = logdet_grad_fd(&poly, &x, &frame, rep.lambda_used);
        let scale = max_abs(&rep.a).max(1e-3);
        prop_assert!(max_abs_diff(&rep.a, &fd) <= 1e-5 * scale, "a={:?} fd={:?}", rep.a, fd);
    }
}

#[test]
fn quartic_gradient_matches_central_differences() {
    let poly = quartic_family(3).unwrap();
    let x = [0.7, -0.4, 1.1];
    let g = poly.gradient(&x).unwrap();
    let h = 1e-5;
    for i in 0..3 {
        let (mut xp, mut xm) = (x, x);
        xp[i] += h;
        xm[i] -= h;
        let fd = (poly.eval(&xp).unwrap() - poly.eval(&xm).unwrap()) / (2.0 * h);
        assert!(
            (fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0),
            "component {i}: {fd} vs {}",
            g[i]
        );
    }
}
