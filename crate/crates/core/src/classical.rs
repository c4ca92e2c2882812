//! The Hardy operator `H f(x) = (1/x) ∫_0^x f` and its adjoint
//! `H* f(x) = ∫_x^∞ f(t)/t dt`, both directly and as Hausdorff operators with
//! kernels `Ψ(t) = χ_{(1,∞)}(t)/t²` and `Ψ*(t) = χ_{(0,1)}(t)/t`.
//!
//! The closed forms are half-line operators, so comparisons use `x > 0` only.

use serde::Serialize;
use thiserror::Error;

use crate::matrix::MatrixFamily;
use crate::operator::{HausdorffOperator, KernelSpec, OperatorError};
use crate::quadrature::{improper_probe, integrate_line, ProbeSchedule, QuadratureError, Status};
use crate::sobolev::{certify, Certificate, CertifyOptions, Verdict};
use crate::testfn::PointFunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassicalError {
    #[error("the point must be positive, got {0}")]
    NonPositivePoint(f64),
    #[error("∫_x^∞ f(t)/t dt diverges at x = {0}")]
    DivergentTail(f64),
    #[error("quadrature did not converge at x = {0}")]
    Unresolved(f64),
    #[error("expected a one-dimensional function")]
    NotOneDimensional,
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Which {
    Hardy,
    AdjointHardy,
}

/// A classical operator together with its Hausdorff kernel.
#[derive(Debug, Clone)]
pub struct ClassicalOp {
    pub which: Which,
    pub kernel: KernelSpec,
}

impl ClassicalOp {
    pub fn new(which: Which) -> ClassicalOp {
        let kernel = match which {
            Which::Hardy => KernelSpec::hardy(),
            Which::AdjointHardy => KernelSpec::adjoint_hardy(),
        };
        ClassicalOp { which, kernel }
    }

    pub fn as_hausdorff(&self) -> HausdorffOperator {
        HausdorffOperator::new(self.kernel.clone(), MatrixFamily::diagonal_inverse_norm(1)).expect("one-dimensional")
    }

    pub fn closed_form<F: PointFunction>(&self, f: &F, x: f64, tol: f64) -> Result<f64, ClassicalError> {
        match self.which {
            Which::Hardy => hardy_point(f, x, tol),
            Which::AdjointHardy => adjoint_hardy_point(f, x, tol),
        }
    }
}

fn check<F: PointFunction>(f: &F, x: f64) -> Result<(), ClassicalError> {
    if f.dim() != 1 {
        return Err(ClassicalError::NotOneDimensional);
    }
    if !(x > 0.0) {
        return Err(ClassicalError::NonPositivePoint(x));
    }
    Ok(())
}

/// `H f(x) = (1/x) ∫_0^x f(t) dt`.
pub fn hardy_point<F: PointFunction>(f: &F, x: f64, tol: f64) -> Result<f64, ClassicalError> {
    check(f, x)?;
    let r = integrate_line(|t| f.value(&[t]), 0.0, x, tol * x);
    if !r.converged() {
        return Err(ClassicalError::Unresolved(x));
    }
    Ok(r.value / x)
}

/// `H* f(x) = ∫_x^∞ f(t)/t dt`; the tail of `|f(t)|/t` beyond `max(x, 1)` is probed first.
pub fn adjoint_hardy_point<F: PointFunction>(f: &F, x: f64, tol: f64) -> Result<f64, ClassicalError> {
    check(f, x)?;
    // Only the tail can diverge; starting below 1 would let ∫_x^1 dt/t mimic a divergence.
    let probe =
        improper_probe(|t| (f.value(&[t]).abs() / t, 0.0), x.max(1.0), f64::INFINITY, &ProbeSchedule::default(), tol)?;
    if probe.status == Status::Divergent {
        return Err(ClassicalError::DivergentTail(x));
    }
    let r = integrate_line(|t| f.value(&[t]) / t, x, f64::INFINITY, tol);
    if !r.converged() {
        return Err(ClassicalError::Unresolved(x));
    }
    Ok(r.value)
}

/// `max_x |H_{Ψ} f(x) - H f(x)|` (or the adjoint pair) over the given points.
pub fn hausdorff_equivalence_check<F: PointFunction>(
    which: Which,
    f: &F,
    points: &[f64],
    tol: f64,
) -> Result<f64, ClassicalError> {
    let op = ClassicalOp::new(which);
    let h = op.as_hausdorff();
    let mut worst: f64 = 0.0;
    for &x in points {
        let closed = op.closed_form(f, x, tol)?;
        let via_kernel = h.apply_point(f, &[x], tol)?;
        if !via_kernel.converged() {
            return Err(ClassicalError::Unresolved(x));
        }
        worst = worst.max((closed - via_kernel.value).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropositionRow {
    pub k: usize,
    pub hardy: Certificate,
    pub adjoint: Certificate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropositionReport {
    pub rows: Vec<PropositionRow>,
    /// `H` unbounded for every `k`; `H*` bounded at `k = 0` and unbounded for `k ≥ 1`.
    pub matches_expected: bool,
}

/// Certificates for `H` and `H*` on `W^{k,1}(ℝ)`, `k = 0..=k_max`.
pub fn proposition_report(k_max: usize, opts: &CertifyOptions) -> PropositionReport {
    let hardy = ClassicalOp::new(Which::Hardy).as_hausdorff();
    let adjoint = ClassicalOp::new(Which::AdjointHardy).as_hausdorff();
    let rows: Vec<PropositionRow> = (0..=k_max)
        .map(|k| PropositionRow { k, hardy: certify(&hardy, k, opts), adjoint: certify(&adjoint, k, opts) })
        .collect();
    let matches_expected = rows.iter().all(|r| {
        let adjoint_ok =
            if r.k == 0 { matches!(r.adjoint.verdict, Verdict::Bounded { .. }) } else { r.adjoint.is_unbounded() };
        r.hardy.is_unbounded() && adjoint_ok
    });
    PropositionReport { rows, matches_expected }
}
