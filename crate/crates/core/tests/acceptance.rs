//! One line per acceptance criterion; exits nonzero when any fails.

mod common;

use common::suites;
use hausdorff_core::classical::proposition_report;
use hausdorff_core::classical::{ClassicalOp, Which};
use hausdorff_core::gaussian::{hermite_factor, leading_sign, shift_threshold};
use hausdorff_core::matrix::{cone_lower_bound, cone_measure, Matrix, MatrixFamily};
use hausdorff_core::operator::{HausdorffOperator, KernelSpec, Support};
use hausdorff_core::quadrature::{Growth, Status};
use hausdorff_core::sobolev::{
    blowup_witness, kappa, verify_interchange, wk1_norm, wk1_norm_operator_image, CertifyOptions, Verdict,
};
use hausdorff_core::testfn::TestFunction;
use num_bigint::BigInt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::process::ExitCode;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn c1_hardy_report() -> Outcome {
    let report = proposition_report(2, &CertifyOptions::default());
    for row in &report.rows {
        if !row.hardy.is_unbounded() {
            return Err(format!("H at k={} is {:?}", row.k, row.hardy.verdict));
        }
        match (&row.adjoint.verdict, row.k) {
            (Verdict::Bounded { constant }, 0) => {
                if (constant - 2.0).abs() > 1e-6 {
                    return Err(format!("H* C_0 = {constant}"));
                }
                let order0 = row.adjoint.evidence.as_ref().map(|e| e.breakdown[0].value).unwrap_or(f64::NAN);
                if (order0 - 1.0).abs() > 1e-6 {
                    return Err(format!("H* order-0 entry = {order0}"));
                }
            }
            (Verdict::Unbounded { growth: Some(Growth::Log | Growth::Power(_)) }, k) if k > 0 => {}
            (v, k) => return Err(format!("H* at k={k} is {v:?}")),
        }
    }
    if !report.matches_expected {
        return Err("report flags a mismatch".into());
    }
    let c0 = match report.rows[0].adjoint.verdict {
        Verdict::Bounded { constant } => constant,
        _ => f64::NAN,
    };
    Ok(format!("H unbounded for k<=2; H* C_0 = {c0:.9}, unbounded for k=1,2"))
}

fn c2_condition_integral() -> Outcome {
    let op = HausdorffOperator::new(KernelSpec::annulus_indicator(1, 1.0, 2.0), MatrixFamily::diagonal_inverse_norm(1))
        .map_err(|e| e.to_string())?;
    let c = op.condition_value(1, 1e-10).map_err(|e| e.to_string())?.quad;
    if c.status != Status::Converged || (c.value - 5.0).abs() > 1e-6 {
        return Err(format!("C_1 = {} ({:?})", c.value, c.status));
    }
    Ok(format!("C_1 = {:.10}", c.value))
}

fn c3_inequality() -> Outcome {
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for n in 1..=2 {
        let kernels = [
            KernelSpec::annulus_indicator(n, 1.0, 2.0),
            KernelSpec::new(n, &format!("exp(-nrm(y)^2)*nrm(y)^{n}"), Support::All).map_err(|e| e.to_string())?,
        ];
        let constant =
            if n == 1 { Matrix::diag(&[1.5]) } else { Matrix::from_rows(&[&[1.2, 0.3], &[-0.2, 0.9]]).unwrap() };
        let families = [MatrixFamily::diagonal_inverse_norm(n), MatrixFamily::constant(constant).unwrap()];
        let mut functions = Vec::new();
        for base in [TestFunction::gauss(n), TestFunction::g1(n)] {
            for lambda in [1.0, 0.5, 2.0] {
                functions.push(base.dilate(lambda).unwrap());
            }
        }
        for kernel in &kernels {
            for family in &families {
                let op = HausdorffOperator::new(kernel.clone(), family.clone()).map_err(|e| e.to_string())?;
                let c: Vec<f64> = (0..=2)
                    .map(|k| op.condition_value(k, 1e-9).map(|r| r.quad.value))
                    .collect::<Result<_, _>>()
                    .map_err(|e| e.to_string())?;
                for f in &functions {
                    let fnorm = wk1_norm(f, 2, 1e-10).map_err(|e| e.to_string())?;
                    // The k = 2 run is reused for k = 0, 1, so its budget is set by the smallest bound.
                    let tol = 1e-3 * c[0] * fnorm.restrict(0).total;
                    let image = wk1_norm_operator_image(&op, f, 2, tol).map_err(|e| e.to_string())?;
                    for (k, &ck) in c.iter().enumerate() {
                        let w = image.restrict(k);
                        if w.status != Status::Converged {
                            return Err(format!("n={n} {} k={k}: image norm not converged", kernel.source));
                        }
                        let bound = kappa(n, k) * ck * fnorm.restrict(k).total;
                        let ratio = w.total / bound;
                        worst = worst.max(ratio);
                        if ratio > 1.05 {
                            return Err(format!("n={n} {} k={k}: ratio {ratio}", kernel.source));
                        }
                        cases += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{cases} cases, max ‖Hf‖/(κ C_k ‖f‖) = {worst:.4}"))
}

/// Operator, function, α, grid `[lo, hi]ⁿ`, spacing and tolerance.
type InterchangeCase = (HausdorffOperator, TestFunction, Vec<usize>, f64, f64, f64, f64);

fn c4_interchange() -> Outcome {
    let diag1 = MatrixFamily::diagonal_inverse_norm(1);
    let band1 = KernelSpec::annulus_indicator(1, 1.0, 2.0);
    // With weight |t| instead of |t|³ the image has a log-singular second derivative at
    // x = 0 and central differences lose their second order there.
    let damped1 = KernelSpec::new(1, "exp(-nrm(y)^2)*nrm(y)^3", Support::All).unwrap();
    let configs: Vec<InterchangeCase> = vec![
        (
            HausdorffOperator::new(band1.clone(), diag1.clone()).unwrap(),
            TestFunction::g1(1),
            vec![1],
            -5.0,
            5.0,
            1e-2,
            1e-4,
        ),
        (
            HausdorffOperator::new(band1.clone(), diag1.clone()).unwrap(),
            TestFunction::g1(1),
            vec![2],
            -5.0,
            5.0,
            1e-2,
            1e-4,
        ),
        (HausdorffOperator::new(damped1, diag1).unwrap(), TestFunction::gauss(1), vec![1], -5.0, 5.0, 1e-2, 1e-4),
        (
            HausdorffOperator::new(band1, MatrixFamily::constant(Matrix::diag(&[2.0])).unwrap()).unwrap(),
            TestFunction::gauss(1).dilate(0.25).unwrap(),
            vec![2],
            -5.0,
            5.0,
            1e-2,
            1e-4,
        ),
        (
            HausdorffOperator::new(KernelSpec::annulus_indicator(2, 1.0, 2.0), MatrixFamily::diagonal_inverse_norm(2))
                .unwrap(),
            TestFunction::gauss(2),
            vec![1, 0],
            -1.0,
            1.0,
            2e-2,
            1e-3,
        ),
        (
            HausdorffOperator::new(
                KernelSpec::new(2, "exp(-nrm(y)^2)*nrm(y)^2", Support::All).unwrap(),
                MatrixFamily::constant(Matrix::from_rows(&[&[1.2, 0.3], &[-0.2, 0.9]]).unwrap()).unwrap(),
            )
            .unwrap(),
            TestFunction::g1(2),
            vec![1, 1],
            -1.0,
            1.0,
            // At 2e-2 the h² term from the mixed fourth derivatives alone is about 2e-3.
            1e-2,
            1e-3,
        ),
    ];
    let mut worst = Vec::new();
    for (op, f, alpha, lo, hi, h, tol) in &configs {
        let n = op.dim();
        let r = verify_interchange(op, f, alpha, &vec![*lo; n], &vec![*hi; n], *h, *tol).map_err(|e| e.to_string())?;
        if !r.pass {
            return Err(format!("{} α={alpha:?}: {:.3e} > {tol:e}", op.kernel.source, r.max_abs_discrepancy));
        }
        worst.push(format!("{:.1e}", r.max_abs_discrepancy));
    }
    Ok(format!("6 configurations, discrepancies [{}]", worst.join(", ")))
}

fn c5_gaussian() -> Outcome {
    for m in 1..=12 {
        let p = hermite_factor(m).map_err(|e| e.to_string())?;
        if p.order != m || p.coeffs.len() != m + 1 {
            return Err(format!("degree of P_{m}"));
        }
        if leading_sign(&p) != if m % 2 == 0 { 1 } else { -1 } {
            return Err(format!("sign of P_{m}"));
        }
        if p.leading() * leading_sign(&p) != BigInt::from(1) << m {
            return Err(format!("|leading| of P_{m}"));
        }
        for t in [-3.0, -1.0, 0.0, 0.7, 2.5] {
            let exact = p.eval(t) * (-t * t).exp();
            let fd = common::richardson_gauss_derivative(m, t, 1e-3, 3);
            if (fd - exact).abs() > 1e-6 * exact.abs() {
                return Err(format!("m={m} t={t}: {fd} vs {exact}"));
            }
        }
    }
    let a1 = shift_threshold(1).map_err(|e| e.to_string())?;
    if (a1 - 0.5).abs() > 1e-12 {
        return Err(format!("a_1 = {a1}"));
    }
    Ok(format!("P_1..P_12 verified, a_1 = {a1}"))
}

fn c6_cone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut tightest = f64::INFINITY;
    for i in 0..100u64 {
        let n = if i < 50 { 2 } else { 3 };
        let b = common::random_conditioned(&mut rng, n, 0.1);
        let est = cone_measure(&b, 1_000_000, i).map_err(|e| e.to_string())?;
        let bound = cone_lower_bound(&b).map_err(|e| e.to_string())?;
        let slack = est.estimate + 3.0 * est.stderr - bound;
        if slack < 0.0 {
            return Err(format!("matrix {i}: {} + 3·{} < {bound}", est.estimate, est.stderr));
        }
        tightest = tightest.min((est.estimate + 3.0 * est.stderr) / bound);
    }
    Ok(format!("100 matrices, min (σ + 3 se)/bound = {tightest:.3}"))
}

fn c7_witness() -> Outcome {
    let op = ClassicalOp::new(Which::Hardy).as_hausdorff();
    let radii: Vec<f64> = (1..=8).map(|j| 2f64.powi(j)).collect();
    let t = blowup_witness(&op, 1, &radii, 1e-6).map_err(|e| e.to_string())?;
    if t.log_residual > 0.02 {
        return Err(format!("log-fit residual {}", t.log_residual));
    }
    if !t.w_increasing {
        return Err("W_j not strictly increasing".into());
    }
    if !(t.ratio_band.0 > 0.0 && t.ratio_band.1.is_finite()) {
        return Err(format!("ratio band {:?}", t.ratio_band));
    }
    Ok(format!(
        "S_j ≈ ln R + {:.4} (residual {:.2e}), W/S in [{:.3}, {:.3}]",
        t.log_intercept, t.log_residual, t.ratio_band.0, t.ratio_band.1
    ))
}

fn c8_conjugation() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in [1, 2] {
        worst = worst.max(common::conjugation_discrepancy(n, 10, 10, 1e-10));
    }
    if worst > 1e-6 {
        return Err(format!("max discrepancy {worst:e}"));
    }
    Ok(format!("max discrepancy {worst:.2e}"))
}

fn c9_properties() -> Outcome {
    let t = Instant::now();
    suites::run(2_000, suites::round_trip_case(), suites::check_round_trip).map_err(|e| format!("round trip: {e}"))?;
    suites::run(1_000, suites::matrix_strategy(), suites::check_sandwich).map_err(|e| format!("sandwich: {e}"))?;
    suites::run(1_000, suites::expansion_case(), suites::check_checksum).map_err(|e| format!("checksum: {e}"))?;
    suites::run(64, suites::linearity_case(), suites::check_linearity).map_err(|e| format!("linearity: {e}"))?;
    suites::run(200, suites::fd_case(), suites::check_fd).map_err(|e| format!("fd oracle: {e}"))?;
    Ok(format!("round trip, sandwich, checksum, linearity, FD oracle ({:.1?})", t.elapsed()))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check, u64); 9] = [
        ("1 hardy report", c1_hardy_report, 5),
        ("2 convergent condition integral", c2_condition_integral, 1),
        ("3 norm inequality", c3_inequality, 300),
        ("4 derivative interchange", c4_interchange, 120),
        ("5 gaussian derivative factors", c5_gaussian, 1),
        ("6 cone measure bound", c6_cone, 120),
        ("7 blow-up witness", c7_witness, 180),
        ("8 conjugation reduction", c8_conjugation, 60),
        ("9 property suites", c9_properties, 600),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let t = Instant::now();
        let outcome = run();
        let elapsed = t.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let (ok, detail) = match outcome {
            Ok(d) if in_time => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget} s budget")),
            Err(e) => (false, e),
        };
        if !ok {
            failed += 1;
        }
        println!("{} criterion {name}: {detail} [{:.2?} / {budget} s]", if ok { "PASS" } else { "FAIL" }, elapsed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
