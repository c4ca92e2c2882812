//! Adaptive Gauss–Kronrod quadrature on finite and infinite intervals, iterated
//! quadrature over boxes and all of ℝⁿ, and the truncation probe used to decide
//! whether a nonnegative improper integral is finite.
//!
//! Infinite endpoints are removed with the substitution `t = u / (1 - u²)`.
//! Nested integrals propagate the error estimate of every inner quadrature into
//! the outer one, so a `Converged` status always refers to the whole integral.

use std::cell::Cell;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on the number of panels held by one adaptive integration.
pub const DEFAULT_MAX_PANELS: usize = 2000;

/// Values below this are treated as negative by [`improper_probe`].
pub const NEGATIVE_SLACK: f64 = -1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("integrand took the negative value {value:e} at t = {at}; probe semantics require f >= 0")]
    NegativeValueDetected { at: f64, value: f64 },
    #[error("iterated quadrature supports at most 4 dimensions, got {0}")]
    DimensionTooLarge(usize),
    #[error("invalid tolerance {0}")]
    InvalidTolerance(f64),
    #[error("invalid probe schedule: {0}")]
    InvalidSchedule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    Divergent,
    Inconclusive,
}

/// Shape of the growth of truncated integrals along a probe schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Growth {
    /// Linear in the schedule index, i.e. logarithmic in the cut-off radius.
    Log,
    /// Geometric in the schedule index: `I(R) ~ R^p` (or `ε^{-p}` at an inner end).
    Power(f64),
    Unknown,
}

/// Truncated integrals `I_j = ∫_{ε_j}^{R_j} f` recorded by a probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEvidence {
    pub inner: Vec<f64>,
    pub outer: Vec<f64>,
    pub truncated: Vec<f64>,
    pub growth: Option<Growth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub err_est: f64,
    pub status: Status,
    pub evaluations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence: Option<ProbeEvidence>,
}

impl QuadratureResult {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }

    fn exact(value: f64) -> Self {
        QuadratureResult { value, err_est: 0.0, status: Status::Converged, evaluations: 0, evidence: None }
    }
}

// Kronrod 15-point abscissae and weights with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
    inner_err: f64,
    resabs: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err.total_cmp(&other.err).is_eq()
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// One Gauss–Kronrod 7/15 panel. `f` returns `(value, inner error)`; the inner
/// error is integrated with the Kronrod weights and kept apart from the rule error.
fn gk15<F: FnMut(f64) -> (f64, f64)>(f: &mut F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let abs_half = half.abs();

    let (fc, ec) = f(center);
    let mut resg = fc * WG[3];
    let mut resk = fc * WGK[7];
    let mut inner = ec.abs() * WGK[7];
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let (f1, e1) = f(center - dx);
        let (f2, e2) = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        let sum = f1 + f2;
        resk += WGK[j] * sum;
        resabs += WGK[j] * (f1.abs() + f2.abs());
        inner += WGK[j] * (e1.abs() + e2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * sum;
        }
    }
    let reskh = resk * 0.5;
    let mut resasc = WGK[7] * (fc - reskh).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - reskh).abs() + (fv2[j] - reskh).abs());
    }
    let value = resk * half;
    resabs *= abs_half;
    resasc *= abs_half;
    let mut err = ((resk - resg) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    if !value.is_finite() {
        err = f64::INFINITY;
    }
    Panel { a, b, value, err, inner_err: inner * abs_half, resabs }
}

/// Globally adaptive bisection on a finite interval.
fn adapt<F: FnMut(f64) -> (f64, f64)>(f: &mut F, a: f64, b: f64, tol: f64, max_panels: usize) -> QuadratureResult {
    let mut heap = BinaryHeap::new();
    let first = gk15(f, a, b);
    let mut evaluations = 15;
    let mut err = first.err;
    let mut inner = first.inner_err;
    let mut resabs = first.resabs;
    heap.push(first);

    let target = |resabs: f64| tol.max(100.0 * f64::EPSILON * resabs);
    loop {
        if err + inner <= target(resabs) {
            break;
        }
        // Once the rule error is negligible the remaining budget belongs to the inner integrals.
        if err <= 0.01 * target(resabs) || heap.len() >= max_panels {
            break;
        }
        let worst = heap.pop().expect("heap never empties");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            heap.push(worst);
            break;
        }
        let left = gk15(f, worst.a, mid);
        let right = gk15(f, mid, worst.b);
        evaluations += 30;
        err += left.err + right.err - worst.err;
        inner += left.inner_err + right.inner_err - worst.inner_err;
        resabs += left.resabs + right.resabs - worst.resabs;
        heap.push(left);
        heap.push(right);
        if !err.is_finite() || err < 0.0 {
            // re-sum to shed cancellation in the running totals
            err = heap.iter().map(|p| p.err).sum();
        }
    }
    // Final sums are taken in a fixed order so the result does not depend on heap layout.
    let mut panels: Vec<Panel> = heap.into_vec();
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    let value: f64 = panels.iter().map(|p| p.value).sum();
    let err: f64 = panels.iter().map(|p| p.err).sum::<f64>() + panels.iter().map(|p| p.inner_err).sum::<f64>();
    let resabs: f64 = panels.iter().map(|p| p.resabs).sum();
    let status = if value.is_finite() && err <= target(resabs) { Status::Converged } else { Status::Inconclusive };
    QuadratureResult { value, err_est: err, status, evaluations, evidence: None }
}

/// Adaptive quadrature of `f` over `(a, b)`; either endpoint may be infinite.
pub fn integrate_line<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> QuadratureResult {
    integrate_line_nested(move |t| (f(t), 0.0), a, b, tol)
}

/// Like [`integrate_line`] for integrands that are themselves quadratures:
/// `f` returns `(value, error estimate of value)`.
pub fn integrate_line_nested<F: FnMut(f64) -> (f64, f64)>(f: F, a: f64, b: f64, tol: f64) -> QuadratureResult {
    integrate_line_with(f, a, b, tol, DEFAULT_MAX_PANELS)
}

pub fn integrate_line_with<F: FnMut(f64) -> (f64, f64)>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_panels: usize,
) -> QuadratureResult {
    if a == b {
        return QuadratureResult::exact(0.0);
    }
    if a > b {
        let mut r = integrate_line_with(f, b, a, tol, max_panels);
        r.value = -r.value;
        return r;
    }
    match (a.is_finite(), b.is_finite()) {
        (true, true) => adapt(&mut f, a, b, tol, max_panels),
        (true, false) => {
            let mut g = |u: f64| {
                let (s, ds) = unbounded_map(u);
                let (v, e) = f(a + s);
                (v * ds, e * ds)
            };
            adapt(&mut g, 0.0, 1.0, tol, max_panels)
        }
        (false, true) => {
            let mut g = |u: f64| {
                let (s, ds) = unbounded_map(u);
                let (v, e) = f(b - s);
                (v * ds, e * ds)
            };
            adapt(&mut g, 0.0, 1.0, tol, max_panels)
        }
        (false, false) => {
            let mut g = |u: f64| {
                let (s, ds) = unbounded_map(u);
                let (v, e) = f(s);
                (v * ds, e * ds)
            };
            adapt(&mut g, -1.0, 1.0, tol, max_panels)
        }
    }
}

/// `t = u / (1 - u²)` and its derivative.
fn unbounded_map(u: f64) -> (f64, f64) {
    let d = 1.0 - u * u;
    (u / d, (1.0 + u * u) / (d * d))
}

/// Integrates over consecutive pieces `points[0]..points[1]..` with the budget
/// split evenly. Useful when the integrand has known kinks or jumps.
pub fn integrate_pieces<F: FnMut(f64) -> (f64, f64)>(mut f: F, points: &[f64], tol: f64) -> QuadratureResult {
    let pieces = points.len().saturating_sub(1).max(1);
    let mut total = QuadratureResult::exact(0.0);
    for w in points.windows(2) {
        let r = integrate_line_with(&mut f, w[0], w[1], tol / pieces as f64, DEFAULT_MAX_PANELS);
        total.value += r.value;
        total.err_est += r.err_est;
        total.evaluations += r.evaluations;
        if !r.converged() {
            total.status = Status::Inconclusive;
        }
    }
    total
}

/// Iterated quadrature over the box `bounds[0] × bounds[1] × …`; bounds may be infinite.
/// The innermost coordinate is the last one. `f` returns `(value, error estimate)`.
pub fn integrate_box<F>(f: &F, bounds: &[(f64, f64)], tol: f64) -> QuadratureResult
where
    F: Fn(&[f64]) -> (f64, f64),
{
    assert!(!bounds.is_empty() && bounds.len() <= 8, "box dimension out of range");
    let mut point = [0.0; 8];
    nested_level(f, bounds, 0, &mut point, tol)
}

fn nested_level<F>(f: &F, bounds: &[(f64, f64)], level: usize, prefix: &mut [f64; 8], tol: f64) -> QuadratureResult
where
    F: Fn(&[f64]) -> (f64, f64),
{
    let n = bounds.len();
    let (a, b) = bounds[level];
    let remaining = (n - level) as f64;
    if level + 1 == n {
        let mut p = *prefix;
        return integrate_line_nested(
            |t| {
                p[level] = t;
                f(&p[..n])
            },
            a,
            b,
            tol,
        );
    }
    // The outer rule gets a share of the budget; the rest goes to the inner levels,
    // spread over the outer interval by a density so that the integrated inner
    // errors stay within half of the outer share.
    let outer_tol = tol / remaining;
    let inner_budget = 0.5 * outer_tol;
    let mut failed = false;
    let mut evals = 0;
    let base = *prefix;
    let mut r = integrate_line_nested(
        |t| {
            let mut p = base;
            p[level] = t;
            let inner = nested_level(f, bounds, level + 1, &mut p, inner_budget * budget_density(a, b, t));
            evals += inner.evaluations;
            if !inner.converged() {
                failed = true;
            }
            (inner.value, inner.err_est)
        },
        a,
        b,
        outer_tol,
    );
    r.evaluations = evals;
    if failed && r.status == Status::Converged && r.err_est > tol {
        r.status = Status::Inconclusive;
    }
    r
}

/// A probability density on `(a, b)`: uniform on finite intervals, otherwise
/// the one carried by the map used for infinite ranges, which decays like `1/t²`.
fn budget_density(a: f64, b: f64, t: f64) -> f64 {
    let mapped = |s: f64| {
        // Inverse of s = u / (1 - u²), then du/ds.
        let u = if s == 0.0 { 0.0 } else { (-1.0 + (1.0 + 4.0 * s * s).sqrt()) / (2.0 * s) };
        let d = 1.0 - u * u;
        d * d / (1.0 + u * u)
    };
    match (a.is_finite(), b.is_finite()) {
        (true, true) => 1.0 / (b - a),
        (true, false) => mapped(t - a),
        (false, true) => mapped(b - t),
        (false, false) => 0.5 * mapped(t),
    }
}

/// Iterated quadrature of `f` over all of ℝⁿ (n ≤ 4).
pub fn integrate_space<F: Fn(&[f64]) -> f64>(f: F, n: usize, tol: f64) -> Result<QuadratureResult, QuadratureError> {
    if n == 0 || n > 4 {
        return Err(QuadratureError::DimensionTooLarge(n));
    }
    if !(tol > 0.0) {
        return Err(QuadratureError::InvalidTolerance(tol));
    }
    let bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); n];
    Ok(integrate_box(&|x: &[f64]| (f(x), 0.0), &bounds, tol))
}

/// Nested cut-offs for [`improper_probe`]: `ε_j ↓ 0` and `R_j ↑ ∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSchedule {
    pub inner: Vec<f64>,
    pub outer: Vec<f64>,
}

impl Default for ProbeSchedule {
    fn default() -> Self {
        ProbeSchedule::dyadic(20, 1)
    }
}

impl ProbeSchedule {
    /// `ε_j = 2^{-stride·j}`, `R_j = 2^{stride·j}` for `j = 0..=steps`.
    pub fn dyadic(steps: usize, stride: i32) -> Self {
        let inner = (0..=steps).map(|j| 2f64.powi(-stride * j as i32)).collect();
        let outer = (0..=steps).map(|j| 2f64.powi(stride * j as i32)).collect();
        ProbeSchedule { inner, outer }
    }

    fn validate(&self) -> Result<(), QuadratureError> {
        if self.inner.len() != self.outer.len() {
            return Err(QuadratureError::InvalidSchedule("inner and outer schedules differ in length".into()));
        }
        if self.inner.len() < 6 {
            return Err(QuadratureError::InvalidSchedule("at least 6 cut-offs are needed".into()));
        }
        let inner_ok = self.inner.windows(2).all(|w| w[1] <= w[0]) && self.inner.iter().all(|&e| e > 0.0);
        let outer_ok = self.outer.windows(2).all(|w| w[1] >= w[0]) && self.outer.iter().all(|r| r.is_finite());
        if !inner_ok || !outer_ok {
            return Err(QuadratureError::InvalidSchedule("ε_j must decrease to 0 and R_j increase".into()));
        }
        Ok(())
    }
}

/// Ratio `I_j / I_{j/2}` that signals divergence when sustained.
pub const DIVERGENCE_RATIO: f64 = 1.5;
/// Number of trailing schedule steps over which the ratio must hold.
pub const DIVERGENCE_WINDOW: usize = 5;

/// Decides whether `∫_lo^hi f` (with `0 ≤ lo < hi ≤ ∞`, `f ≥ 0`) is finite.
///
/// Truncated integrals over `(max(ε_j, lo), min(R_j, hi))` are accumulated
/// incrementally. A sustained ratio `I_j / I_{j/2} ≥ 1.5` with strictly increasing
/// `I_j` gives `Divergent`; otherwise the full improper integral is computed
/// directly and accepted when it agrees with the last truncation.
pub fn improper_probe<F: FnMut(f64) -> (f64, f64)>(
    mut f: F,
    lo: f64,
    hi: f64,
    schedule: &ProbeSchedule,
    tol: f64,
) -> Result<QuadratureResult, QuadratureError> {
    schedule.validate()?;
    if !(tol > 0.0) {
        return Err(QuadratureError::InvalidTolerance(tol));
    }
    let negative: Cell<Option<(f64, f64)>> = Cell::new(None);
    let mut g = |t: f64| {
        let (v, e) = f(t);
        if v < NEGATIVE_SLACK && negative.get().is_none() {
            negative.set(Some((t, v)));
        }
        (v, e)
    };

    let steps = schedule.inner.len();
    let piece_tol = tol / (2 * steps) as f64;
    let mut covered: Option<(f64, f64)> = None;
    let mut running = 0.0;
    let mut err = 0.0;
    let mut evaluations = 0;
    let mut truncated = Vec::with_capacity(steps);
    let mut all_converged = true;
    for (&eps, &radius) in schedule.inner.iter().zip(&schedule.outer) {
        let a = eps.max(lo);
        let b = radius.min(hi);
        if a < b {
            let mut add = |x: f64, y: f64| {
                if x < y {
                    let r = integrate_line_nested(&mut g, x, y, piece_tol);
                    running += r.value;
                    err += r.err_est;
                    evaluations += r.evaluations;
                    all_converged &= r.converged();
                }
            };
            match covered {
                None => add(a, b),
                Some((ca, cb)) => {
                    add(a, ca);
                    add(cb, b);
                }
            }
            covered = Some(match covered {
                None => (a, b),
                Some((ca, cb)) => (a.min(ca), b.max(cb)),
            });
        }
        truncated.push(running);
    }
    if let Some((at, value)) = negative.get() {
        return Err(QuadratureError::NegativeValueDetected { at, value });
    }

    let mut evidence = ProbeEvidence {
        inner: schedule.inner.clone(),
        outer: schedule.outer.clone(),
        truncated: truncated.clone(),
        growth: None,
    };
    if sustained_growth(&truncated) {
        evidence.growth = Some(fit_growth(&truncated));
        let last = *truncated.last().unwrap();
        return Ok(QuadratureResult {
            value: last,
            err_est: err,
            status: Status::Divergent,
            evaluations,
            evidence: Some(evidence),
        });
    }

    let full = integrate_line_nested(&mut g, lo, hi, tol);
    if let Some((at, value)) = negative.get() {
        return Err(QuadratureError::NegativeValueDetected { at, value });
    }
    let last = *truncated.last().unwrap();
    let agree = (full.value - last).abs() <= 1e-3 * full.value.abs() + 10.0 * tol;
    let status = if full.converged() && all_converged && agree { Status::Converged } else { Status::Inconclusive };
    Ok(QuadratureResult {
        value: full.value,
        err_est: full.err_est,
        status,
        evaluations: evaluations + full.evaluations,
        evidence: Some(evidence),
    })
}

fn sustained_growth(values: &[f64]) -> bool {
    let n = values.len();
    let last = n - 1;
    let strictly_increasing =
        (last / 2 + 1..n).all(|j| values[j] - values[j - 1] > 1e-12 * values[j].abs().max(1e-300));
    if !strictly_increasing {
        return false;
    }
    (n - DIVERGENCE_WINDOW..n).all(|j| {
        let earlier = values[j / 2];
        let now = values[j];
        now > 0.0 && (earlier <= 0.0 || now / earlier >= DIVERGENCE_RATIO)
    })
}

/// Classifies the increments of the second half of the sequence: constant
/// increments mean logarithmic growth, increments multiplying by `2^p` per step
/// mean power growth.
fn fit_growth(values: &[f64]) -> Growth {
    let n = values.len();
    let start = (n / 2).max(2);
    let logs: Vec<f64> = (start..n)
        .filter_map(|j| {
            let d1 = values[j] - values[j - 1];
            let d0 = values[j - 1] - values[j - 2];
            (d1 > 0.0 && d0 > 0.0).then(|| (d1 / d0).log2())
        })
        .collect();
    if logs.is_empty() {
        return Growth::Unknown;
    }
    let p = logs.iter().sum::<f64>() / logs.len() as f64;
    let spread = logs.iter().map(|l| (l - p).abs()).fold(0.0, f64::max);
    if p.abs() < 0.15 && spread < 0.3 {
        Growth::Log
    } else if p >= 0.15 && spread < 0.5 {
        Growth::Power(p)
    } else {
        Growth::Unknown
    }
}
