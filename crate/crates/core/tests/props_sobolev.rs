mod common;

use common::suites;
use hausdorff_core::classical::{ClassicalOp, Which};
use hausdorff_core::matrix::{Matrix, MatrixFamily};
use hausdorff_core::operator::{HausdorffOperator, KernelSpec, Support};
use hausdorff_core::quadrature::Status;
use hausdorff_core::sobolev::{
    blowup_witness, certify, fd_weak_derivative, kappa, verify_interchange, wk1_norm, wk1_norm_operator_image,
    CertifyOptions, Grid, SobolevError, Verdict,
};
use hausdorff_core::testfn::{PointFunction, TestFunction};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn sample(lo: &[f64], hi: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Grid {
    Grid::sample(lo, hi, h, |x| Ok::<f64, SobolevError>(f(x))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fd_matches_exact_derivative(case in suites::fd_case()) {
        suites::check_fd(case)?;
    }
}

#[test]
fn fd_examples() {
    let g = sample(&[-3.0], &[3.0], 1e-3, |x| (-x[0] * x[0]).exp());
    let d = fd_weak_derivative(&g, &[1]).unwrap();
    let worst = (0..d.len())
        .map(|i| {
            let t = d.point(i)[0];
            (d.values[i] + 2.0 * t * (-t * t).exp()).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst <= 1e-5, "{worst}");

    assert_eq!(fd_weak_derivative(&g, &[0]).unwrap(), g);

    let c = sample(&[-1.0, -1.0], &[1.0, 1.0], 0.1, |_| 2.5);
    for alpha in [[1, 0], [0, 2], [2, 1], [4, 4]] {
        assert!(fd_weak_derivative(&c, &alpha).unwrap().values.iter().all(|&v| v == 0.0), "{alpha:?}");
    }

    let tiny = sample(&[0.0], &[0.2], 0.1, |x| x[0]);
    assert!(matches!(fd_weak_derivative(&tiny, &[2]), Err(SobolevError::GridTooCoarse { .. })));
}

#[test]
fn fd_mixed_partials_in_two_dimensions() {
    let f = TestFunction::gauss_product(&[0.3, -0.2], 1.0).unwrap();
    let g = sample(&[-2.0, -2.0], &[2.0, 2.0], 1e-2, |x| f.value(x));
    for alpha in [[1, 1], [2, 1], [0, 2]] {
        let exact = f.differentiate(&alpha).unwrap();
        let d = fd_weak_derivative(&g, &alpha).unwrap();
        let worst = (0..d.len()).map(|i| (d.values[i] - exact.value(&d.point(i))).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-3, "{alpha:?}: {worst}");
    }
}

#[test]
fn norm_examples() {
    let g = TestFunction::gauss(1);
    let n0 = wk1_norm(&g, 0, 1e-10).unwrap();
    assert!((n0.total - PI.sqrt()).abs() <= 1e-8);
    let n1 = wk1_norm(&g, 1, 1e-10).unwrap();
    assert!((n1.total - (PI.sqrt() + 2.0)).abs() <= 1e-8);
    let g1 = wk1_norm(&TestFunction::g1(2), 0, 1e-10).unwrap();
    assert!((g1.total - PI).abs() <= 1e-8);

    let full = wk1_norm(&TestFunction::g1(2).dilate(0.7).unwrap(), 2, 1e-9).unwrap();
    assert_eq!(full.status, Status::Converged);
    for a in &full.per_alpha {
        assert!(full.total >= a.l1.value);
    }
    assert!(full.total >= full.restrict(0).total);
    let direct = wk1_norm(&TestFunction::g1(2).dilate(0.7).unwrap(), 1, 1e-9).unwrap();
    assert!((full.restrict(1).total - direct.total).abs() <= 1e-8);
}

#[test]
fn identity_operator_preserves_norm() {
    for n in 1..=2 {
        let op =
            HausdorffOperator::new(KernelSpec::unit_mass_ball(n), MatrixFamily::constant(Matrix::identity(n)).unwrap())
                .unwrap();
        let f = TestFunction::g1(n);
        let image = wk1_norm_operator_image(&op, &f, 1, 1e-8).unwrap();
        let direct = wk1_norm(&f, 1, 1e-10).unwrap();
        assert!((image.total - direct.total).abs() <= 1e-6, "n={n}: {} vs {}", image.total, direct.total);
    }
}

fn annulus_diag_1d() -> HausdorffOperator {
    HausdorffOperator::new(KernelSpec::annulus_indicator(1, 1.0, 2.0), MatrixFamily::diagonal_inverse_norm(1)).unwrap()
}

#[test]
fn image_norm_examples() {
    let f = TestFunction::gauss(1);
    let fnorm = wk1_norm(&f, 1, 1e-10).unwrap().total;
    // One-sided kernel χ_(1,2)(t): the image has norm ∫₁² t dt · ‖f‖_{L¹}.
    let kernel = KernelSpec::new(1, "chi(1,2)(y1)", Support::Interval { lo: 1.0, hi: 2.0 }).unwrap();
    let one_sided = HausdorffOperator::new(kernel, MatrixFamily::diagonal_inverse_norm(1)).unwrap();
    let w0 = wk1_norm_operator_image(&one_sided, &f, 0, 1e-8).unwrap();
    assert!((w0.total - 1.5 * PI.sqrt()).abs() <= 1e-6, "{}", w0.total);
    let w1 = wk1_norm_operator_image(&one_sided, &f, 1, 1e-8).unwrap();
    assert!(w1.total <= 5.0 * fnorm);

    let op = annulus_diag_1d();
    let w0 = wk1_norm_operator_image(&op, &f, 0, 1e-8).unwrap();
    assert!((w0.total - 3.0 * PI.sqrt()).abs() <= 1e-6, "{}", w0.total);
    let c1 = op.condition_value(1, 1e-10).unwrap().quad.value;
    assert!((c1 - 5.0).abs() <= 1e-8, "{c1}");
    let w1 = wk1_norm_operator_image(&op, &f, 1, 1e-8).unwrap();
    assert!(w1.total <= c1 * fnorm);
}

/// The bound `‖H f‖_{W^{k,1}} ≤ κ C_k ‖f‖_{W^{k,1}}` on a one-dimensional corpus.
#[test]
fn bounded_operators_obey_the_norm_inequality() {
    let kernels = [
        KernelSpec::annulus_indicator(1, 1.0, 2.0),
        KernelSpec::new(1, "exp(-nrm(y)^2)*nrm(y)", Support::All).unwrap(),
        KernelSpec::new(1, "chi(1,inf)(nrm(y))*nrm(y)^-4", Support::Annulus { inner: 1.0, outer: f64::INFINITY })
            .unwrap(),
    ];
    let families = [MatrixFamily::diagonal_inverse_norm(1), MatrixFamily::constant(Matrix::diag(&[1.5])).unwrap()];
    let functions =
        [TestFunction::gauss(1), TestFunction::g1(1).dilate(0.5).unwrap(), TestFunction::g1(1).dilate(2.0).unwrap()];
    let opts = CertifyOptions::default();
    let mut checked = 0;
    for kernel in &kernels {
        for family in &families {
            let op = HausdorffOperator::new(kernel.clone(), family.clone()).unwrap();
            for k in 0..=2 {
                let cert = certify(&op, k, &opts);
                let Verdict::Bounded { constant } = cert.verdict else { continue };
                for f in &functions {
                    let fnorm = wk1_norm(f, k, 1e-10).unwrap().total;
                    let image = wk1_norm_operator_image(&op, f, k, 1e-3 * constant * fnorm).unwrap();
                    assert_eq!(image.status, Status::Converged);
                    let bound = 1.05 * constant * fnorm * kappa(1, k);
                    assert!(image.total <= bound, "{} k={k}: {} > {bound}", kernel.source, image.total);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked >= 30, "{checked}");
}

#[test]
fn interchange_small_grid() {
    let op = annulus_diag_1d();
    let f = TestFunction::g1(1);
    let r = verify_interchange(&op, &f, &[1], &[-2.0], &[2.0], 1e-2, 1e-4).unwrap();
    assert!(r.pass, "{r:?}");
    let r = verify_interchange(&op, &f, &[0], &[-2.0], &[2.0], 1e-1, 1e-9).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn classical_certificates() {
    let opts = CertifyOptions::default();
    let hardy = ClassicalOp::new(Which::Hardy).as_hausdorff();
    let adjoint = ClassicalOp::new(Which::AdjointHardy).as_hausdorff();
    assert!(certify(&hardy, 0, &opts).is_unbounded());
    match certify(&adjoint, 0, &opts).verdict {
        Verdict::Bounded { constant } => assert!((constant - 2.0).abs() <= 1e-8, "{constant}"),
        v => panic!("{v:?}"),
    }
    assert!(certify(&adjoint, 1, &opts).is_unbounded());
}

fn certificate_corpus() -> Vec<HausdorffOperator> {
    let mut ops =
        vec![ClassicalOp::new(Which::Hardy).as_hausdorff(), ClassicalOp::new(Which::AdjointHardy).as_hausdorff()];
    for n in 1..=2 {
        for kernel in [
            KernelSpec::annulus_indicator(n, 1.0, 2.0),
            KernelSpec::new(n, "chi(1,inf)(nrm(y))*nrm(y)^-4", Support::Annulus { inner: 1.0, outer: f64::INFINITY })
                .unwrap(),
            KernelSpec::new(n, "chi(0,1)(nrm(y))", Support::Annulus { inner: 0.0, outer: 1.0 }).unwrap(),
        ] {
            ops.push(HausdorffOperator::new(kernel, MatrixFamily::diagonal_inverse_norm(n)).unwrap());
        }
    }
    ops
}

fn same_class(a: &Verdict, b: &Verdict) -> bool {
    std::mem::discriminant(a) == std::mem::discriminant(b)
}

#[test]
fn refined_sampling_never_flips_a_verdict() {
    let coarse = CertifyOptions::default();
    let fine = CertifyOptions { samples: 4 * coarse.samples, ..coarse };
    for op in certificate_corpus() {
        for k in 0..=2 {
            let a = certify(&op, k, &coarse);
            let b = certify(&op, k, &fine);
            let flip = (a.is_bounded() && b.is_unbounded()) || (a.is_unbounded() && b.is_bounded());
            assert!(!flip, "{} k={k}", op.kernel.source);
            if !a.is_inconclusive() {
                assert!(same_class(&a.verdict, &b.verdict), "{} k={k}", op.kernel.source);
            }
        }
    }
}

#[test]
fn verdict_is_conjugation_invariant() {
    let opts = CertifyOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for op in certificate_corpus() {
        let n = op.dim();
        for _ in 0..2 {
            // Unit determinants: the probe's ratio rule is scale-sensitive, so a large
            // constant background could mask a logarithmic divergence.
            let unit = |m: Matrix| {
                let d = m.det().abs().powf(-1.0 / n as f64);
                m.scale(d)
            };
            let lambda = unit(common::random_conditioned(&mut rng, n, 0.3));
            let q = unit(common::random_conditioned(&mut rng, n, 0.3));
            let conj = HausdorffOperator::new(op.kernel.clone(), op.family.conjugated(lambda, q).unwrap()).unwrap();
            for k in 0..=2 {
                let a = certify(&op, k, &opts);
                let b = certify(&conj, k, &opts);
                assert!(!a.is_inconclusive(), "{} k={k}: {:?}", op.kernel.source, a.verdict);
                assert!(
                    same_class(&a.verdict, &b.verdict),
                    "{} k={k}: {:?} vs {:?}",
                    op.kernel.source,
                    a.verdict,
                    b.verdict
                );
            }
        }
    }
}

#[test]
fn two_dimensional_fast_decay_is_unbounded() {
    let kernel =
        KernelSpec::new(2, "chi(1,inf)(nrm(y))*nrm(y)^-4", Support::Annulus { inner: 1.0, outer: f64::INFINITY })
            .unwrap();
    let op = HausdorffOperator::new(kernel, MatrixFamily::diagonal_inverse_norm(2)).unwrap();
    assert!(certify(&op, 0, &CertifyOptions::default()).is_unbounded());
}

#[test]
fn witness_table_saturates_for_compact_support() {
    let table = blowup_witness(&annulus_diag_1d(), 1, &[2.0, 4.0, 8.0, 16.0], 1e-6).unwrap();
    let last = &table.rows[table.rows.len() - 1];
    for row in &table.rows[1..] {
        assert!((row.s - last.s).abs() <= 1e-6 * last.s, "{row:?}");
        assert!((row.w - last.w).abs() <= 1e-3 * last.w, "{row:?}");
    }
    assert!(table.to_csv().starts_with("radius,s,w,ratio\n"));
}
