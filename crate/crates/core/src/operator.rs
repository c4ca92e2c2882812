//! The generalized Hausdorff operator `H_{Φ,A} f(x) = ∫ Φ(y) f(A(y) x) dy`,
//! its condition integral `C_k`, and the derivative formula
//! `D^α H f(x) = ∫ Φ(y) D^α[f(A(y) x)] dy`.
//!
//! Integrals over `y` are taken in polar form `∫_0^∞ r^{n-1} ∫_{S^{n-1}} … dσ dr`.
//! When both `Φ` and `A` depend on `y` only through `|y|`, the angular integral
//! collapses to `|S^{n-1}|` times the value at `r e_1`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::matrix::{sphere_area, Matrix, MatrixError, MatrixFamily};
use crate::quadrature::{
    improper_probe, integrate_box, integrate_line_nested, ProbeSchedule, QuadratureError, QuadratureResult, Status,
};
use crate::testfn::{multi_indices, PointFunction, TestFnError, TestFunction};

/// Largest `|α|` accepted by [`directional_expansion`].
pub const MAX_EXPANSION_ORDER: usize = 12;

/// Default absolute tolerance of condition-integral probes.
pub const CONDITION_TOL: f64 = 1e-9;

/// Tolerance for the cached kernel mass `∫Φ` used with constant families.
const MASS_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("dimension mismatch: {what} has dimension {found}, expected {expected}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("matrix family cannot be evaluated at y = {at:?}: {source}")]
    SingularMatrix { at: Vec<f64>, source: MatrixError },
    #[error("kernel cannot be evaluated at y = {at:?}: {source}")]
    KernelEval { at: Vec<f64>, source: ExprError },
    #[error("kernel takes the negative value {value:e} at y = {at:?}")]
    NegativeKernel { at: Vec<f64>, value: f64 },
    #[error("derivative order {0} exceeds {MAX_EXPANSION_ORDER}")]
    OrderTooLarge(usize),
    #[error("condition integral C_{order} is {status:?}; the derivative formula needs it finite")]
    PreconditionUnmet { order: usize, status: Status },
    #[error("invalid support: {0}")]
    InvalidSupport(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    TestFn(#[from] TestFnError),
}

/// Where the kernel may be nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Support {
    /// `inner < |y| < outer`.
    Annulus {
        inner: f64,
        outer: f64,
    },
    /// `lo < y < hi`, one-dimensional only.
    Interval {
        lo: f64,
        hi: f64,
    },
    All,
}

impl Support {
    /// Range of `|y|` over the support.
    pub fn radial_range(&self) -> (f64, f64) {
        match *self {
            Support::Annulus { inner, outer } => (inner, outer),
            Support::Interval { lo, hi } if lo >= 0.0 => (lo, hi),
            Support::Interval { lo, hi } if hi <= 0.0 => (-hi, -lo),
            Support::Interval { lo, hi } => (0.0, hi.max(-lo)),
            Support::All => (0.0, f64::INFINITY),
        }
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        match *self {
            Support::Annulus { inner, outer } => {
                let r = norm(y);
                r > inner && r < outer
            }
            Support::Interval { lo, hi } => y[0] > lo && y[0] < hi,
            Support::All => true,
        }
    }

    fn validate(&self, dim: usize) -> Result<(), OperatorError> {
        match *self {
            Support::Annulus { inner, outer } if !(inner >= 0.0 && inner < outer) => {
                Err(OperatorError::InvalidSupport(format!("annulus needs 0 <= inner < outer, got ({inner}, {outer})")))
            }
            Support::Interval { .. } if dim != 1 => {
                Err(OperatorError::InvalidSupport("interval supports are one-dimensional".into()))
            }
            Support::Interval { lo, hi } if !(lo < hi) || lo.is_nan() || hi.is_nan() => {
                Err(OperatorError::InvalidSupport(format!("empty interval ({lo}, {hi})")))
            }
            _ => Ok(()),
        }
    }
}

fn parse_bound(s: &str) -> Result<f64, OperatorError> {
    match s.trim() {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        other => other.parse().map_err(|_| OperatorError::InvalidSupport(format!("bad bound {other:?}"))),
    }
}

impl FromStr for Support {
    type Err = OperatorError;

    /// `all`, `annulus(r0, r1)`, `halfline(a, b)` or `interval(a, b)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "all" {
            return Ok(Support::All);
        }
        let bad = || OperatorError::InvalidSupport(format!("cannot parse {s:?}"));
        let open = s.find('(').ok_or_else(bad)?;
        let inner = s[open + 1..].strip_suffix(')').ok_or_else(bad)?;
        let (a, b) = inner.split_once(',').ok_or_else(bad)?;
        let (a, b) = (parse_bound(a)?, parse_bound(b)?);
        match s[..open].trim() {
            "annulus" => Ok(Support::Annulus { inner: a, outer: b }),
            "halfline" | "interval" => Ok(Support::Interval { lo: a, hi: b }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Support {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Support::Annulus { inner, outer } => write!(f, "annulus({inner},{outer})"),
            Support::Interval { lo, hi } => write!(f, "interval({lo},{hi})"),
            Support::All => write!(f, "all"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Singularity {
    Origin,
    Infinity,
}

/// A nonnegative kernel `Φ` given by an expression and a support descriptor.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub dim: usize,
    pub expr: Expr,
    pub source: String,
    pub support: Support,
    pub singularities: Vec<Singularity>,
    pub nonneg: bool,
    window: Option<(f64, f64)>,
}

pub fn norm(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl KernelSpec {
    pub fn new(dim: usize, source: &str, support: Support) -> Result<KernelSpec, OperatorError> {
        support.validate(dim)?;
        let expr = Expr::parse(source, dim)?;
        let (lo, hi) = support.radial_range();
        let mut singularities = Vec::new();
        if lo == 0.0 {
            singularities.push(Singularity::Origin);
        }
        if hi.is_infinite() {
            singularities.push(Singularity::Infinity);
        }
        Ok(KernelSpec { dim, expr, source: source.to_string(), support, singularities, nonneg: true, window: None })
    }

    pub fn with_singularities(mut self, s: Vec<Singularity>) -> KernelSpec {
        self.singularities = s;
        self
    }

    pub fn with_nonneg(mut self, nonneg: bool) -> KernelSpec {
        self.nonneg = nonneg;
        self
    }

    /// `Ψ(t) = χ_{(1,∞)}(t) / t²`.
    pub fn hardy() -> KernelSpec {
        KernelSpec::new(1, "chi(1,inf)(y1)/y1^2", Support::Interval { lo: 1.0, hi: f64::INFINITY }).expect("valid")
    }

    /// `Ψ*(t) = χ_{(0,1)}(t) / t`.
    pub fn adjoint_hardy() -> KernelSpec {
        KernelSpec::new(1, "chi(0,1)(y1)/y1", Support::Interval { lo: 0.0, hi: 1.0 }).expect("valid")
    }

    /// `χ_{(r0,r1)}(|y|)`.
    pub fn annulus_indicator(dim: usize, r0: f64, r1: f64) -> KernelSpec {
        KernelSpec::new(dim, &format!("chi({r0},{r1})(nrm(y))"), Support::Annulus { inner: r0, outer: r1 })
            .expect("valid")
    }

    /// Indicator of the unit ball divided by its volume.
    pub fn unit_mass_ball(dim: usize) -> KernelSpec {
        let v = crate::matrix::ball_volume(dim);
        KernelSpec::new(dim, &format!("chi(0,1)(nrm(y))/{v:.17e}"), Support::Annulus { inner: 0.0, outer: 1.0 })
            .expect("valid")
    }

    /// The kernel restricted to `1/R < |y| < R`.
    pub fn truncated(&self, radius: f64) -> KernelSpec {
        let mut k = self.clone();
        k.window = Some((1.0 / radius, radius));
        k
    }

    pub fn window(&self) -> Option<(f64, f64)> {
        self.window
    }

    /// Range of `|y|` that carries the kernel, after truncation.
    pub fn radial_range(&self) -> (f64, f64) {
        let (lo, hi) = self.support.radial_range();
        match self.window {
            Some((a, b)) => (lo.max(a), hi.min(b).max(lo.max(a))),
            None => (lo, hi),
        }
    }

    pub fn is_radial(&self) -> bool {
        self.expr.is_radial() && !matches!(self.support, Support::Interval { .. })
    }

    /// `Φ(y)`, zero outside the support and the truncation window.
    pub fn eval(&self, y: &[f64]) -> Result<f64, OperatorError> {
        if !self.support.contains(y) {
            return Ok(0.0);
        }
        if let Some((a, b)) = self.window {
            let r = norm(y);
            if !(r > a && r < b) {
                return Ok(0.0);
            }
        }
        self.expr.eval(y).map_err(|source| OperatorError::KernelEval { at: y.to_vec(), source })
    }

    /// Quasi-random points of the support (Halton sequence).
    pub fn support_samples(&self, count: usize) -> Vec<Vec<f64>> {
        let n = self.dim;
        let mut out = Vec::with_capacity(count);
        let (lo, hi) = self.radial_range();
        let place = |u: f64, a: f64, b: f64| if b.is_finite() { a + u * (b - a) } else { a + u / (1.0 - u) };
        let mut i = 1;
        while out.len() < count {
            let h: Vec<f64> = (0..n + 1).map(|d| radical_inverse(i, PRIMES[d])).collect();
            i += 1;
            let y = match self.support {
                Support::Interval { lo, hi } if lo.is_finite() => vec![place(h[0], lo, hi)],
                Support::Interval { lo, hi } => vec![-place(h[0], -hi, -lo)],
                _ => {
                    let r = place(h[0], lo, hi);
                    let dir: Vec<f64> = if n == 1 {
                        vec![if h[1] < 0.5 { -1.0 } else { 1.0 }]
                    } else {
                        h[1..].iter().map(|u| 2.0 * u - 1.0).collect()
                    };
                    let d = norm(&dir);
                    if d == 0.0 {
                        continue;
                    }
                    dir.iter().map(|v| r * v / d).collect()
                }
            };
            if y.iter().all(|v| v.is_finite()) && self.eval(&y).is_ok() {
                out.push(y);
            }
        }
        out
    }

    /// Spot-checks `Φ ≥ -1e-12` on the given points.
    pub fn check_nonneg(&self, samples: &[Vec<f64>]) -> Result<(), OperatorError> {
        for y in samples {
            let v = self.eval(y)?;
            if v < crate::quadrature::NEGATIVE_SLACK {
                return Err(OperatorError::NegativeKernel { at: y.clone(), value: v });
            }
        }
        Ok(())
    }
}

const PRIMES: [u64; 9] = [2, 3, 5, 7, 11, 13, 17, 19, 23];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// First error raised inside a quadrature callback; the callback itself returns 0.
pub(crate) struct Trap(RefCell<Option<OperatorError>>);

impl Trap {
    pub(crate) fn new() -> Trap {
        Trap(RefCell::new(None))
    }

    pub(crate) fn catch<T: Default>(&self, r: Result<T, OperatorError>) -> T {
        match r {
            Ok(v) => v,
            Err(e) => {
                self.0.borrow_mut().get_or_insert(e);
                T::default()
            }
        }
    }

    pub(crate) fn finish<T>(self, value: T) -> Result<T, OperatorError> {
        match self.0.into_inner() {
            Some(e) => Err(e),
            None => Ok(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub k: usize,
    pub quad: QuadratureResult,
    /// `∫ |det A|^{-1} ‖A‖^j Φ` for `j = 0..=k`.
    pub breakdown: Vec<QuadratureResult>,
}

/// `H_{Φ,A}` for a kernel and a matrix family of the same dimension.
#[derive(Debug, Clone)]
pub struct HausdorffOperator {
    pub kernel: KernelSpec,
    pub family: MatrixFamily,
    pub schedule: ProbeSchedule,
}

impl HausdorffOperator {
    pub fn new(kernel: KernelSpec, family: MatrixFamily) -> Result<HausdorffOperator, OperatorError> {
        if kernel.dim != family.dim() {
            return Err(OperatorError::DimensionMismatch {
                what: "matrix family",
                expected: kernel.dim,
                found: family.dim(),
            });
        }
        Ok(HausdorffOperator { kernel, family, schedule: ProbeSchedule::default() })
    }

    pub fn with_schedule(mut self, schedule: ProbeSchedule) -> HausdorffOperator {
        self.schedule = schedule;
        self
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim
    }

    fn radial_shortcut(&self) -> bool {
        self.dim() >= 2 && self.kernel.is_radial() && self.family.is_radial()
    }

    fn eval_matrix(&self, y: &[f64]) -> Result<Matrix, OperatorError> {
        self.family.eval(y).map_err(|source| OperatorError::SingularMatrix { at: y.to_vec(), source })
    }

    /// `r^{n-1} ∫_{S^{n-1}} g(r ω) dσ(ω)` with its error estimate.
    fn radial_profile<G: Fn(&[f64]) -> f64>(&self, g: &G, r: f64, tol: f64) -> (f64, f64) {
        let n = self.dim();
        if n == 1 {
            return (g(&[r]) + g(&[-r]), 0.0);
        }
        let rn = r.powi(n as i32 - 1);
        if self.radial_shortcut() {
            let mut y = [0.0; 8];
            y[0] = r;
            return (sphere_area(n) * rn * g(&y[..n]), 0.0);
        }
        let mut bounds = vec![(0.0, PI); n - 2];
        bounds.push((0.0, 2.0 * PI));
        let on_sphere = |phi: &[f64]| {
            let mut y = [0.0; 8];
            let mut sin_prod = 1.0;
            let mut jac = 1.0;
            for (k, &p) in phi.iter().enumerate() {
                y[k] = r * sin_prod * p.cos();
                if k + 1 < n - 1 {
                    jac *= p.sin().powi((n - 2 - k) as i32);
                }
                sin_prod *= p.sin();
            }
            y[n - 1] = r * sin_prod;
            (jac * g(&y[..n]), 0.0)
        };
        let q = integrate_box(&on_sphere, &bounds, tol / rn.max(1e-300));
        (rn * q.value, rn * q.err_est)
    }

    /// `∫ g(y) dy` over the support of the kernel; `g` must include `Φ` itself.
    fn integrate_y<G: Fn(&[f64]) -> f64>(&self, g: &G, tol: f64) -> QuadratureResult {
        let (lo, hi) = self.kernel.radial_range();
        if lo >= hi {
            return QuadratureResult {
                value: 0.0,
                err_est: 0.0,
                status: Status::Converged,
                evaluations: 0,
                evidence: None,
            };
        }
        integrate_line_nested(|r| self.radial_profile(g, r, 0.01 * tol), lo, hi, tol)
    }

    /// `H_{Φ,A} f(x)`.
    pub fn apply_point<F: PointFunction>(&self, f: &F, x: &[f64], tol: f64) -> Result<QuadratureResult, OperatorError> {
        self.check_point(f.dim(), x)?;
        let trap = Trap::new();
        let n = self.dim();
        let g = |y: &[f64]| {
            let phi = trap.catch(self.kernel.eval(y));
            if phi == 0.0 {
                return 0.0;
            }
            let Some(a) = trap.catch(self.eval_matrix(y).map(Some)) else { return 0.0 };
            let mut ax = [0.0; 8];
            a.mul_vec_into(x, &mut ax[..n]);
            phi * f.value(&ax[..n])
        };
        let r = self.integrate_y(&g, tol);
        trap.finish(r)
    }

    fn check_point(&self, fdim: usize, x: &[f64]) -> Result<(), OperatorError> {
        let n = self.dim();
        if fdim != n {
            return Err(OperatorError::DimensionMismatch { what: "test function", expected: n, found: fdim });
        }
        if x.len() != n {
            return Err(OperatorError::DimensionMismatch { what: "point", expected: n, found: x.len() });
        }
        Ok(())
    }

    /// Probes `∫ g(y) dy` for a nonnegative `g` along the operator's schedule.
    fn probe_y<G: Fn(&[f64]) -> f64>(&self, g: &G, tol: f64) -> Result<QuadratureResult, OperatorError> {
        let (lo, hi) = self.kernel.radial_range();
        if lo >= hi {
            return Ok(QuadratureResult {
                value: 0.0,
                err_est: 0.0,
                status: Status::Converged,
                evaluations: 0,
                evidence: None,
            });
        }
        improper_probe(|r| self.radial_profile(g, r, 0.01 * tol), lo, hi, &self.schedule, tol).map_err(|e| match e {
            QuadratureError::NegativeValueDetected { at, value } => {
                OperatorError::NegativeKernel { at: vec![at], value }
            }
            other => other.into(),
        })
    }

    /// `C_k = ∫ |det A(y)|^{-1} (1 + ‖A(y)‖^k) Φ(y) dy` with the per-order breakdown.
    pub fn condition_value(&self, k: usize, tol: f64) -> Result<ConditionReport, OperatorError> {
        let trap = Trap::new();
        let weight = |y: &[f64], j: Option<usize>| -> f64 {
            let phi = trap.catch(self.kernel.eval(y));
            if phi == 0.0 {
                return 0.0;
            }
            let Some(a) = trap.catch(self.eval_matrix(y).map(Some)) else { return 0.0 };
            let det = a.det().abs();
            if det == 0.0 {
                trap.catch::<f64>(Err(OperatorError::SingularMatrix { at: y.to_vec(), source: MatrixError::Singular }));
                return 0.0;
            }
            let fro = a.frobenius();
            let factor = match j {
                None => 1.0 + fro.powi(k as i32),
                Some(j) => fro.powi(j as i32),
            };
            factor * phi / det
        };
        let quad = self.probe_y(&|y: &[f64]| weight(y, None), tol)?;
        let mut breakdown = Vec::with_capacity(k + 1);
        for j in 0..=k {
            breakdown.push(self.probe_y(&|y: &[f64]| weight(y, Some(j)), tol)?);
        }
        trap.finish(ConditionReport { k, quad, breakdown })
    }

    /// Fails with `PreconditionUnmet` unless `C_order` converges.
    pub fn require_condition(&self, order: usize) -> Result<ConditionReport, OperatorError> {
        let report = self.condition_value(order, CONDITION_TOL)?;
        if report.quad.status != Status::Converged {
            return Err(OperatorError::PreconditionUnmet { order, status: report.quad.status });
        }
        Ok(report)
    }

    /// Evaluator for `D^α H f`, after checking that `C_{|α|}` is finite.
    pub fn derivative_evaluator(
        &self,
        f: &TestFunction,
        alpha: &[usize],
    ) -> Result<DerivativeEvaluator<'_>, OperatorError> {
        let order: usize = alpha.iter().sum();
        if f.dim() != self.dim() || alpha.len() != self.dim() {
            return Err(OperatorError::DimensionMismatch {
                what: "test function or multi-index",
                expected: self.dim(),
                found: if f.dim() != self.dim() { f.dim() } else { alpha.len() },
            });
        }
        self.require_condition(order)?;
        DerivativeEvaluator::unchecked(self, f, alpha)
    }

    /// Evaluators for every `|α| ≤ k`, ordered by total order, after checking
    /// that `C_k` is finite (which bounds every `C_j`, `j ≤ k`).
    pub fn derivative_evaluators_upto(
        &self,
        f: &TestFunction,
        k: usize,
    ) -> Result<(ConditionReport, Evaluators<'_>), OperatorError> {
        if f.dim() != self.dim() {
            return Err(OperatorError::DimensionMismatch {
                what: "test function",
                expected: self.dim(),
                found: f.dim(),
            });
        }
        let report = self.require_condition(k)?;
        let evaluators = crate::testfn::multi_indices_upto(self.dim(), k)
            .into_iter()
            .map(|alpha| DerivativeEvaluator::unchecked(self, f, &alpha).map(|e| (alpha, e)))
            .collect::<Result<_, _>>()?;
        Ok((report, evaluators))
    }

    /// `D^α H f(x) = ∫ Φ(y) Σ_β c_β(A(y)) (D^β f)(A(y) x) dy`.
    pub fn derivative_formula_point(
        &self,
        f: &TestFunction,
        alpha: &[usize],
        x: &[f64],
        tol: f64,
    ) -> Result<QuadratureResult, OperatorError> {
        self.derivative_evaluator(f, alpha)?.eval(x, tol)
    }

    /// `∇ H f(x) = ∫ Φ(y) ∇f(A(y)x) · A(y) dy`, one component per coordinate.
    pub fn gradient_point(
        &self,
        f: &TestFunction,
        x: &[f64],
        tol: f64,
    ) -> Result<Vec<QuadratureResult>, OperatorError> {
        self.check_point(f.dim(), x)?;
        self.require_condition(1)?;
        let n = self.dim();
        let grads: Vec<TestFunction> = (0..n).map(|i| f.differentiate(&unit(n, i))).collect::<Result<_, _>>()?;
        (0..n)
            .map(|j| self.matrix_form(x, tol, |a, ax| (0..n).map(|i| grads[i].value(ax) * a.get(i, j)).sum()))
            .collect()
    }

    /// `∇² H f(x) = ∫ Φ(y) A(y)ᵀ ∇²f(A(y)x) A(y) dy`, row-major.
    pub fn hessian_point(&self, f: &TestFunction, x: &[f64], tol: f64) -> Result<Vec<QuadratureResult>, OperatorError> {
        self.check_point(f.dim(), x)?;
        self.require_condition(2)?;
        let n = self.dim();
        let mut second = Vec::with_capacity(n * n);
        for i in 0..n {
            for m in 0..n {
                let mut alpha = vec![0; n];
                alpha[i] += 1;
                alpha[m] += 1;
                second.push(f.differentiate(&alpha)?);
            }
        }
        let mut out = Vec::with_capacity(n * n);
        for j in 0..n {
            for l in 0..n {
                out.push(self.matrix_form(x, tol, |a, ax| {
                    let mut s = 0.0;
                    for i in 0..n {
                        for m in 0..n {
                            s += a.get(i, j) * second[i * n + m].value(ax) * a.get(m, l);
                        }
                    }
                    s
                })?);
            }
        }
        Ok(out)
    }

    fn matrix_form<H: Fn(&Matrix, &[f64]) -> f64>(
        &self,
        x: &[f64],
        tol: f64,
        h: H,
    ) -> Result<QuadratureResult, OperatorError> {
        let trap = Trap::new();
        let g = |y: &[f64]| {
            let phi = trap.catch(self.kernel.eval(y));
            if phi == 0.0 {
                return 0.0;
            }
            let Some(a) = trap.catch(self.eval_matrix(y).map(Some)) else { return 0.0 };
            phi * h(&a, &a.mul_vec(x))
        };
        let r = self.integrate_y(&g, tol);
        trap.finish(r)
    }
}

fn unit(n: usize, i: usize) -> Vec<usize> {
    let mut e = vec![0; n];
    e[i] = 1;
    e
}

/// Exponents `k_ij` of the entries of `A`, as `(i, j, k)`.
type Exponents = Vec<(usize, usize, i32)>;

/// Precomputed expansion of `∏_j (Σ_i a_ij ∂_i)^{α_j}` into `Σ_β c_β(A) D^β`.
#[derive(Debug, Clone)]
pub struct ExpansionPlan {
    n: usize,
    betas: Vec<Vec<usize>>,
    /// `(β index, multinomial weight, exponents k_ij as (i, j, k))`.
    entries: Vec<(usize, f64, Exponents)>,
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

impl ExpansionPlan {
    pub fn new(n: usize, alpha: &[usize]) -> Result<ExpansionPlan, OperatorError> {
        let order: usize = alpha.iter().sum();
        if order > MAX_EXPANSION_ORDER {
            return Err(OperatorError::OrderTooLarge(order));
        }
        if alpha.len() != n {
            return Err(OperatorError::DimensionMismatch { what: "multi-index", expected: n, found: alpha.len() });
        }
        let betas = multi_indices(n, order);
        let index: BTreeMap<Vec<usize>, usize> = betas.iter().cloned().enumerate().map(|(i, b)| (b, i)).collect();
        // Column j contributes a composition k_{·j} of α_j with weight α_j! / ∏_i k_ij!.
        let mut partial: Vec<(Vec<usize>, f64, Exponents)> = vec![(vec![0; n], 1.0, Vec::new())];
        for (j, &aj) in alpha.iter().enumerate() {
            let comps = multi_indices(n, aj);
            let mut next = Vec::with_capacity(partial.len() * comps.len());
            for (beta, w, exps) in &partial {
                for c in &comps {
                    let weight = factorial(aj) / c.iter().map(|&k| factorial(k)).product::<f64>();
                    let mut b = beta.clone();
                    let mut e = exps.clone();
                    for (i, &k) in c.iter().enumerate() {
                        b[i] += k;
                        if k > 0 {
                            e.push((i, j, k as i32));
                        }
                    }
                    next.push((b, w * weight, e));
                }
            }
            partial = next;
        }
        let entries = partial.into_iter().map(|(b, w, e)| (index[&b], w, e)).collect();
        Ok(ExpansionPlan { n, betas, entries })
    }

    pub fn betas(&self) -> &[Vec<usize>] {
        &self.betas
    }

    /// Writes `c_β(A)` into `out`, indexed like [`ExpansionPlan::betas`].
    pub fn coefficients_into(&self, a: &Matrix, out: &mut [f64]) {
        debug_assert_eq!(a.dim(), self.n);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (b, w, exps) in &self.entries {
            out[*b] += w * exps.iter().map(|&(i, j, k)| a.get(i, j).powi(k)).product::<f64>();
        }
    }
}

/// `{β: c_β}` with `∏_j (Σ_i a_ij ∂_i)^{α_j} = Σ_β c_β D^β`; zero coefficients are omitted.
pub fn directional_expansion(a: &Matrix, alpha: &[usize]) -> Result<BTreeMap<Vec<usize>, f64>, OperatorError> {
    let plan = ExpansionPlan::new(a.dim(), alpha)?;
    let mut c = vec![0.0; plan.betas.len()];
    plan.coefficients_into(a, &mut c);
    Ok(plan.betas.iter().cloned().zip(c).filter(|(_, v)| *v != 0.0).collect())
}

/// `(α, evaluator)` pairs for every `|α| ≤ k`.
pub type Evaluators<'a> = Vec<(Vec<usize>, DerivativeEvaluator<'a>)>;

/// Pointwise evaluation of `D^α H f` through the derivative formula.
pub struct DerivativeEvaluator<'a> {
    op: &'a HausdorffOperator,
    plan: ExpansionPlan,
    derivatives: Vec<TestFunction>,
    constant: Option<Vec<f64>>,
    /// `∫ Φ` for constant families, where the integrand factors as `Φ(y) · s(Ax)`.
    mass: OnceLock<QuadratureResult>,
}

impl<'a> DerivativeEvaluator<'a> {
    fn unchecked(op: &'a HausdorffOperator, f: &TestFunction, alpha: &[usize]) -> Result<Self, OperatorError> {
        let plan = ExpansionPlan::new(op.dim(), alpha)?;
        let derivatives = plan.betas.iter().map(|b| f.differentiate(b)).collect::<Result<Vec<_>, _>>()?;
        let constant = match &op.family {
            MatrixFamily::Constant(a) => {
                let mut c = vec![0.0; plan.betas.len()];
                plan.coefficients_into(a, &mut c);
                Some(c)
            }
            _ => None,
        };
        Ok(DerivativeEvaluator { op, plan, derivatives, constant, mass: OnceLock::new() })
    }

    fn sum_at(&self, coeffs: &[f64], ax: &[f64]) -> f64 {
        coeffs.iter().zip(&self.derivatives).filter(|(c, _)| **c != 0.0).map(|(c, d)| c * d.value(ax)).sum()
    }

    /// Constant `A`: `D^α H f(x) = (∫Φ) · Σ c_β(A) D^β f(Ax)`, when the cached mass is accurate enough.
    fn factored(&self, x: &[f64], tol: f64) -> Option<QuadratureResult> {
        let (MatrixFamily::Constant(a), Some(c)) = (&self.op.family, &self.constant) else { return None };
        let mass = self.mass.get_or_init(|| {
            let trap = Trap::new();
            let r = self.op.integrate_y(&|y: &[f64]| trap.catch(self.op.kernel.eval(y)), MASS_TOL);
            trap.finish(r).unwrap_or(QuadratureResult {
                value: f64::NAN,
                err_est: f64::INFINITY,
                status: Status::Inconclusive,
                evaluations: 0,
                evidence: None,
            })
        });
        if !mass.converged() {
            return None;
        }
        let n = self.op.dim();
        let mut ax = [0.0; 8];
        a.mul_vec_into(x, &mut ax[..n]);
        let s = self.sum_at(c, &ax[..n]);
        let err_est = mass.err_est * s.abs();
        (err_est <= tol).then_some(QuadratureResult {
            value: mass.value * s,
            err_est,
            status: Status::Converged,
            evaluations: 1,
            evidence: None,
        })
    }

    pub fn eval(&self, x: &[f64], tol: f64) -> Result<QuadratureResult, OperatorError> {
        let op = self.op;
        op.check_point(self.derivatives.first().map_or(op.dim(), |d| d.dim()), x)?;
        if let Some(r) = self.factored(x, tol) {
            return Ok(r);
        }
        let n = op.dim();
        let trap = Trap::new();
        let g = |y: &[f64]| {
            let phi = trap.catch(op.kernel.eval(y));
            if phi == 0.0 {
                return 0.0;
            }
            let Some(a) = trap.catch(op.eval_matrix(y).map(Some)) else { return 0.0 };
            let mut ax = [0.0; 8];
            a.mul_vec_into(x, &mut ax[..n]);
            let mut buf = [0.0; 64];
            let coeffs: &[f64] = match &self.constant {
                Some(c) => c,
                None if self.plan.betas.len() <= 64 => {
                    self.plan.coefficients_into(&a, &mut buf[..self.plan.betas.len()]);
                    &buf[..self.plan.betas.len()]
                }
                None => {
                    let mut v = vec![0.0; self.plan.betas.len()];
                    self.plan.coefficients_into(&a, &mut v);
                    return phi * v.iter().zip(&self.derivatives).map(|(c, d)| c * d.value(&ax[..n])).sum::<f64>();
                }
            };
            phi * self.sum_at(coeffs, &ax[..n])
        };
        let r = op.integrate_y(&g, tol);
        trap.finish(r)
    }
}

/// Pieces of the reduction `H_{Φ,P} f(x) = H_{Φ,ΛPQ} F(Q^{-1} x)` with `F = f ∘ Λ^{-1}`.
#[derive(Debug, Clone)]
pub struct Conjugation<F> {
    pub function: crate::testfn::LinearPullback<F>,
    pub transform: Matrix,
    pub family: MatrixFamily,
}

pub fn reduce_conjugate<F: PointFunction>(
    lambda: &Matrix,
    p: &MatrixFamily,
    q: &Matrix,
    f: F,
) -> Result<Conjugation<F>, OperatorError> {
    let family = MatrixFamily::decomposed(lambda.clone(), p.clone(), q.clone())?;
    let lambda_inv = lambda.inverse()?;
    let transform = q.inverse()?;
    Ok(Conjugation { function: crate::testfn::LinearPullback { inner: f, matrix: lambda_inv }, transform, family })
}
