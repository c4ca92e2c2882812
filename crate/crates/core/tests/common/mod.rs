//! Helpers shared by the integration tests.
#![allow(dead_code)]

use hausdorff_core::matrix::{column_independence, Matrix};
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fractional bits of the fixed-point values used by the oracle.
const PREC: u32 = 448;

/// `x = m · 2^e` exactly.
fn dyadic(x: f64) -> (BigInt, i64) {
    if x == 0.0 {
        return (BigInt::zero(), 0);
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { -1 } else { 1 };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (m, e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
    (BigInt::from(sign) * BigInt::from(m), e)
}

/// `x · 2^scale` for an exact dyadic `x`; `scale` must be large enough for the result to be an integer.
fn scaled(x: f64, scale: u32) -> BigInt {
    let (m, e) = dyadic(x);
    let shift = e + scale as i64;
    assert!(shift >= 0, "scale too small for {x}");
    m << shift as usize
}

fn fixed_mul(a: &BigInt, b: &BigInt) -> BigInt {
    (a * b) >> PREC as usize
}

/// `e^x` for `x ≤ 0` given in fixed point with `PREC` fractional bits.
fn fixed_exp_neg(x: &BigInt) -> BigInt {
    const HALVINGS: usize = 12;
    let y = x >> HALVINGS;
    let one = BigInt::one() << PREC as usize;
    let mut sum = one.clone();
    let mut term = one;
    let mut i = 1u32;
    while !term.is_zero() {
        term = fixed_mul(&term, &y) / BigInt::from(i);
        sum += &term;
        i += 1;
    }
    for _ in 0..HALVINGS {
        sum = fixed_mul(&sum, &sum);
    }
    sum
}

fn fixed_to_f64(v: &BigInt) -> f64 {
    let shift = PREC as i64 - 64;
    let top = v >> shift as usize;
    top.to_f64().unwrap() * 2f64.powi(-64)
}

/// `d^m/dt^m e^{-t²}` at `t` from central differences with steps `h, h/2, …, h/2^{levels-1}`,
/// Richardson-extrapolated in `h²`. All arithmetic is exact on dyadic nodes except the
/// exponential, which is evaluated to about `2^-448`.
pub fn richardson_gauss_derivative(m: usize, t: f64, h: f64, levels: usize) -> f64 {
    // Positions are integers in units of 2^-U; U leaves room for the halvings of h.
    const U: usize = 160;
    let t_u = scaled(t, U as u32);
    let h_u = scaled(h, U as u32).abs();
    let mut table: Vec<Vec<BigInt>> = Vec::with_capacity(levels);
    for l in 0..levels {
        let step: BigInt = &h_u >> l;
        let mut delta = BigInt::zero();
        let mut binom = BigInt::one();
        for i in 0..=m {
            // Node t + (m/2 - i) h_l, doubled so half steps stay integral.
            let node: BigInt = &t_u * 2 + BigInt::from(m as i64 - 2 * i as i64) * &step;
            let sq: BigInt = &node * &node;
            let shifted: BigInt = sq << PREC as usize;
            let x: BigInt = -(shifted >> (2 * U + 2));
            let f = fixed_exp_neg(&x);
            if i % 2 == 0 {
                delta += &binom * &f;
            } else {
                delta -= &binom * &f;
            }
            binom = binom * BigInt::from(m - i) / BigInt::from(i + 1);
        }
        let num: BigInt = delta << (U * m);
        let d = num / num_traits::pow(step, m);
        let mut row = vec![d];
        for j in 1..=l {
            let prev = &table[l - 1][j - 1];
            let cur = row[j - 1].clone();
            let factor = BigInt::from(4i64.pow(j as u32) - 1);
            row.push(&cur + (&cur - prev) / factor);
        }
        table.push(row);
    }
    fixed_to_f64(table.last().unwrap().last().unwrap())
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let data = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::new(n, data).unwrap()
}

/// A random matrix whose columns are independent to at least `margin`.
pub fn random_conditioned(rng: &mut ChaCha8Rng, n: usize, margin: f64) -> Matrix {
    loop {
        let b = random_matrix(rng, n);
        if column_independence(&b).is_ok_and(|m| m > margin) {
            return b;
        }
    }
}

pub fn random_point(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-r..r)).collect()
}

/// Strategies and checks shared by the property targets and the acceptance run.
pub mod suites {
    use hausdorff_core::expr::{Expr, ExprError};
    use hausdorff_core::gaussian::hermite_factor;
    use hausdorff_core::matrix::{matrix_stats, Matrix, MatrixFamily};
    use hausdorff_core::operator::{directional_expansion, HausdorffOperator, KernelSpec};
    use hausdorff_core::sobolev::{fd_weak_derivative, Grid, SobolevError};
    use hausdorff_core::testfn::{PointFunction, TestFunction};
    use proptest::prelude::*;
    use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

    /// Runs `check` on `cases` draws of `strategy` with a fixed seed.
    pub fn run<S: Strategy>(
        cases: u32,
        strategy: S,
        check: impl Fn(S::Value) -> Result<(), TestCaseError>,
    ) -> Result<(), String> {
        let config = Config { cases, failure_persistence: None, ..Config::default() };
        let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
        runner.run(&strategy, check).map_err(|e| e.to_string())
    }

    // Parser round-trip.

    fn leaf() -> impl Strategy<Value = String> {
        prop_oneof![
            (0u32..1000).prop_map(|v| v.to_string()),
            (0.0f64..100.0).prop_map(|v| format!("{v}")),
            (1e-6f64..1e6).prop_map(|v| format!("{v:e}")),
            Just("pi".to_string()),
            Just("y1".to_string()),
            Just("y2".to_string()),
            Just("y3".to_string()),
            Just("nrm(y)".to_string()),
        ]
    }

    pub fn expr_text() -> impl Strategy<Value = String> {
        leaf().prop_recursive(6, 64, 3, |inner| {
            prop_oneof![
                (inner.clone(), prop::sample::select(vec!["+", "-", "*", "/", "^", " + ", " * "]), inner.clone())
                    .prop_map(|(a, op, b)| format!("{a}{op}{b}")),
                inner.clone().prop_map(|a| format!("-{a}")),
                inner.clone().prop_map(|a| format!("({a})")),
                (prop::sample::select(vec!["exp", "abs"]), inner.clone()).prop_map(|(f, a)| format!("{f}({a})")),
                (prop::sample::select(vec!["min", "max"]), inner.clone(), inner.clone())
                    .prop_map(|(f, a, b)| format!("{f}({a}, {b})")),
                (inner.clone(), prop_oneof![Just("inf".to_string()), inner.clone()], inner.clone())
                    .prop_map(|(lo, hi, a)| format!("chi({lo},{hi})({a})")),
                inner.prop_map(|a| format!("chi(-inf,1)({a})")),
            ]
        })
    }

    pub fn same_outcome(a: &Result<f64, ExprError>, b: &Result<f64, ExprError>) -> bool {
        match (a, b) {
            (Ok(x), Ok(y)) => x.to_bits() == y.to_bits(),
            (Err(_), Err(_)) => true,
            _ => false,
        }
    }

    pub fn round_trip_case() -> impl Strategy<Value = (String, [f64; 3])> {
        (expr_text(), prop::array::uniform3(-3.0f64..3.0))
    }

    pub fn check_round_trip((src, y): (String, [f64; 3])) -> Result<(), TestCaseError> {
        let e = Expr::parse(&src, 3).map_err(|e| TestCaseError::fail(format!("{src}: {e}")))?;
        let rendered = e.to_string();
        let again = Expr::parse(&rendered, 3).map_err(|e| TestCaseError::fail(format!("{rendered}: {e}")))?;
        prop_assert_eq!(&e, &again, "{} rendered as {}", src, rendered);
        prop_assert!(same_outcome(&e.eval(&y), &again.eval(&y)));
        Ok(())
    }

    // Norm sandwich.

    pub fn matrix_strategy() -> impl Strategy<Value = Matrix> {
        (1usize..=6).prop_flat_map(|n| {
            prop::collection::vec(-10.0f64..10.0, n * n).prop_map(move |d| Matrix::new(n, d).unwrap())
        })
    }

    pub fn check_sandwich(b: Matrix) -> Result<(), TestCaseError> {
        let s = matrix_stats(&b).unwrap();
        let n = b.dim() as f64;
        prop_assert!(s.opn <= s.fro * (1.0 + 1e-10), "opn {} > fro {}", s.opn, s.fro);
        prop_assert!(s.fro <= n.sqrt() * s.opn * (1.0 + 1e-10), "fro {} > √n opn {}", s.fro, s.opn);
        Ok(())
    }

    // Expansion checksum.

    pub fn expansion_case() -> impl Strategy<Value = (Matrix, Vec<usize>)> {
        (1usize..=3).prop_flat_map(|n| {
            let a = prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |d| Matrix::new(n, d).unwrap());
            let alpha =
                prop::collection::vec(0usize..=5, n).prop_filter("|α| ≤ 5", |a| a.iter().sum::<usize>() <= 5);
            (a, alpha)
        })
    }

    pub fn check_checksum((a, alpha): (Matrix, Vec<usize>)) -> Result<(), TestCaseError> {
        let n = a.dim();
        let coeffs = directional_expansion(&a, &alpha).unwrap();
        let sum: f64 = coeffs.values().sum();
        let col = |j: usize, f: &dyn Fn(f64) -> f64| (0..n).map(|i| f(a.get(i, j))).sum::<f64>();
        let expected: f64 = alpha.iter().enumerate().map(|(j, &k)| col(j, &|v| v).powi(k as i32)).product();
        // Relative to the sum of absolute terms, which bounds the size of every rounding error.
        let scale: f64 = alpha.iter().enumerate().map(|(j, &k)| col(j, &f64::abs).powi(k as i32)).product();
        prop_assert!((sum - expected).abs() <= 1e-12 * scale.max(expected.abs()), "{} vs {}", sum, expected);
        Ok(())
    }

    // Linearity of the operator.

    pub const LINEARITY_TOL: f64 = 1e-9;

    pub fn linearity_case() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
        (1usize..=2).prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(-1.5f64..1.5, n),
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
                -2.0f64..2.0,
            )
        })
    }

    pub fn linearity_operator(n: usize) -> HausdorffOperator {
        let family = if n == 1 {
            MatrixFamily::diagonal_inverse_norm(1)
        } else {
            MatrixFamily::constant(Matrix::from_rows(&[&[1.2, 0.3], &[-0.2, 0.9]]).unwrap()).unwrap()
        };
        HausdorffOperator::new(KernelSpec::annulus_indicator(n, 1.0, 2.0), family).unwrap()
    }

    pub fn check_linearity((n, x, s1, s2, c): (usize, Vec<f64>, Vec<f64>, Vec<f64>, f64)) -> Result<(), TestCaseError> {
        let op = linearity_operator(n);
        let f = TestFunction::gauss_product(&s1, 1.0).unwrap();
        let g = TestFunction::gauss_product(&s2, -1.0).unwrap().scaled(c);
        let sum = f.add(&g).unwrap();
        let tol = LINEARITY_TOL;
        let a = op.apply_point(&sum, &x, tol).unwrap().value;
        let b = op.apply_point(&f, &x, tol).unwrap().value + op.apply_point(&g, &x, tol).unwrap().value;
        prop_assert!((a - b).abs() <= 2.0 * tol, "{} vs {}", a, b);
        Ok(())
    }

    // Finite-difference oracle.

    /// Leading truncation constants of the stencils: error ≈ c_m h² |f^{(m+2)}|.
    const TRUNCATION: [f64; 5] = [0.0, 1.0 / 6.0, 1.0 / 12.0, 1.0 / 4.0, 1.0 / 6.0];
    /// Sum of absolute stencil weights, for the rounding term.
    const WEIGHT_SUM: [f64; 5] = [1.0, 1.0, 4.0, 3.0, 16.0];

    /// `max_t |d^j/dt^j e^{-t²}|`, sampled finely enough for a bound with 1% slack.
    pub fn gauss_derivative_max(j: usize) -> f64 {
        let p = hermite_factor(j).unwrap();
        (0..=16_000).map(|i| -8.0 + i as f64 * 1e-3).map(|t| (p.eval(t) * (-t * t).exp()).abs()).fold(0.0, f64::max)
            * 1.01
    }

    pub fn fd_case() -> impl Strategy<Value = (usize, f64, f64, f64)> {
        (1usize..=4, -1.0f64..1.0, 0.5f64..2.0, 0.0f64..1.0).prop_map(|(m, s, lambda, u)| {
            // h between 1e-3 and 1e-2, larger for the higher orders where rounding dominates.
            let h = if m <= 2 { 1e-3 * (1.0 + 4.0 * u) } else { 4e-3 * (1.0 + 1.5 * u) };
            (m, s, lambda, h)
        })
    }

    /// `fd_weak_derivative` of a shifted, dilated Gaussian stays within the
    /// truncation-plus-rounding bound of its stencil.
    pub fn check_fd((m, s, lambda, h): (usize, f64, f64, f64)) -> Result<(), TestCaseError> {
        let f = TestFunction::gauss_product(&[s], 1.0).unwrap().dilate(lambda).unwrap();
        let d = f.differentiate(&[m]).unwrap();
        let grid = Grid::sample(&[-3.0], &[3.0], h, |x| Ok::<f64, SobolevError>(f.value(x))).unwrap();
        let fd = fd_weak_derivative(&grid, &[m]).unwrap();
        let trunc = TRUNCATION[m] * h * h * lambda.powi(m as i32 + 2) * gauss_derivative_max(m + 2);
        let round = WEIGHT_SUM[m] * 4.0 * f64::EPSILON / h.powi(m as i32);
        let bound = 1.5 * trunc + round;
        let worst = (0..fd.len()).map(|i| (fd.values[i] - d.value(&fd.point(i))).abs()).fold(0.0, f64::max);
        prop_assert!(worst <= bound, "m={} h={} worst {} bound {}", m, h, worst, bound);
        Ok(())
    }
}

/// Nonnegative middle factor `P(y)` used by the conjugation checks.
pub fn middle_factor(n: usize) -> hausdorff_core::matrix::MatrixFamily {
    use hausdorff_core::expr::Expr;
    use hausdorff_core::matrix::MatrixFamily;
    if n == 1 {
        return MatrixFamily::diagonal_inverse_norm(1);
    }
    let entries = ["1/nrm(y)", "y1^2/4", "0.5", "1 + abs(y2)"].iter().map(|s| Expr::parse(s, 2).unwrap()).collect();
    MatrixFamily::expression(2, entries).unwrap()
}

/// Largest `|H_{Φ,P} f(x) - H_{Φ,ΛPQ}(f∘Λ⁻¹)(Q⁻¹x)|` over `draws` seeded `(Λ, Q)`
/// pairs and `points` random `x` each, with `Φ` the indicator of `1 < |y| < 2`.
pub fn conjugation_discrepancy(n: usize, draws: u64, points: usize, tol: f64) -> f64 {
    use hausdorff_core::operator::{reduce_conjugate, HausdorffOperator, KernelSpec};
    use hausdorff_core::testfn::TestFunction;
    use rand::SeedableRng;
    let kernel = KernelSpec::annulus_indicator(n, 1.0, 2.0);
    let p = middle_factor(n);
    let f = TestFunction::gauss_product(&vec![0.3; n], 1.0).unwrap();
    let direct = HausdorffOperator::new(kernel.clone(), p.clone()).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let lambda = random_conditioned(&mut rng, n, 0.3);
        let q = random_conditioned(&mut rng, n, 0.3);
        let c = reduce_conjugate(&lambda, &p, &q, &f).unwrap();
        let reduced = HausdorffOperator::new(kernel.clone(), c.family.clone()).unwrap();
        for _ in 0..points {
            let x = random_point(&mut rng, n, 2.0);
            let lhs = direct.apply_point(&f, &x, tol).unwrap().value;
            let rhs = reduced.apply_point(&c.function, &c.transform.mul_vec(&x), tol).unwrap().value;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}
