//! `W^{k,1}` norms, finite-difference checks of the derivative formula, the
//! bounded/unbounded certificate and the truncation blow-up witness.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::matrix::{eta_margin, MatrixError};
use crate::operator::{ConditionReport, HausdorffOperator, OperatorError, Trap, CONDITION_TOL};
use crate::quadrature::{integrate_box, integrate_space, Growth, QuadratureError, QuadratureResult, Status};
use crate::testfn::{multi_indices_upto, PointFunction, TestFnError, TestFunction};

/// Largest per-axis order of [`fd_weak_derivative`].
pub const MAX_FD_ORDER: usize = 4;

/// Default number of support samples used to check the hypotheses of [`certify`].
pub const DEFAULT_SUPPORT_SAMPLES: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SobolevError {
    #[error("axis {axis} has {points} grid points; order {order} needs at least {needed}")]
    GridTooCoarse { axis: usize, order: usize, points: usize, needed: usize },
    #[error("finite differences support per-axis orders up to {MAX_FD_ORDER}, got {0}")]
    OrderTooHigh(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    TestFn(#[from] TestFnError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaNorm {
    pub alpha: Vec<usize>,
    pub l1: QuadratureResult,
}

/// `‖f‖_{W^{k,1}} = Σ_{|α|≤k} ‖D^α f‖_{L¹}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SobolevNorm {
    pub k: usize,
    pub per_alpha: Vec<AlphaNorm>,
    pub total: f64,
    pub err_est: f64,
    pub status: Status,
}

impl SobolevNorm {
    fn from_parts(k: usize, per_alpha: Vec<AlphaNorm>) -> SobolevNorm {
        let total = per_alpha.iter().map(|a| a.l1.value).sum();
        let err_est = per_alpha.iter().map(|a| a.l1.err_est).sum();
        let status = if per_alpha.iter().all(|a| a.l1.converged()) { Status::Converged } else { Status::Inconclusive };
        SobolevNorm { k, per_alpha, total, err_est, status }
    }

    /// The norm of order `k' ≤ k`, reusing the computed terms.
    pub fn restrict(&self, k: usize) -> SobolevNorm {
        let terms = self.per_alpha.iter().filter(|a| a.alpha.iter().sum::<usize>() <= k).cloned().collect();
        SobolevNorm::from_parts(k.min(self.k), terms)
    }
}

/// `‖f‖_{W^{k,1}}` from exact derivatives.
pub fn wk1_norm(f: &TestFunction, k: usize, tol: f64) -> Result<SobolevNorm, SobolevError> {
    let alphas = multi_indices_upto(f.dim(), k);
    let share = tol / alphas.len() as f64;
    let mut terms = Vec::with_capacity(alphas.len());
    for alpha in alphas {
        let d = f.differentiate(&alpha)?;
        let l1 = integrate_space(|x| d.value(x).abs(), f.dim(), share)?;
        terms.push(AlphaNorm { alpha, l1 });
    }
    Ok(SobolevNorm::from_parts(k, terms))
}

/// `‖H_{Φ,A} f‖_{W^{k,1}}` through the derivative formula; requires `C_k < ∞`.
pub fn wk1_norm_operator_image(
    op: &HausdorffOperator,
    f: &TestFunction,
    k: usize,
    tol: f64,
) -> Result<SobolevNorm, SobolevError> {
    let n = op.dim();
    if n > 4 {
        return Err(QuadratureError::DimensionTooLarge(n).into());
    }
    let (_, evaluators) = op.derivative_evaluators_upto(f, k)?;
    // Orthants are integrated separately so that x = 0, where D^α H f may be
    // singular, is never a quadrature node.
    let orthants = 1usize << n;
    let share = tol / (evaluators.len() * orthants) as f64;
    // Inner errors are integrated over an unbounded domain, so the inner budget
    // follows a half-Cauchy density on each axis; its integral over an orthant is 1.
    let (width, offset) = f.extent();
    let s = 2.0 * (width + offset).max(1.0);
    let inner_tol =
        |x: &[f64]| 0.01 * share * x.iter().map(|&t| 2.0 / (PI * s * (1.0 + (t / s).powi(2)))).product::<f64>();
    let mut terms = Vec::with_capacity(evaluators.len());
    for (alpha, ev) in &evaluators {
        let trap = Trap::new();
        let g = |x: &[f64]| {
            let r = trap.catch(ev.eval(x, inner_tol(x)).map(Some));
            match r {
                Some(r) => (r.value.abs(), r.err_est),
                None => (0.0, 0.0),
            }
        };
        let mut l1 =
            QuadratureResult { value: 0.0, err_est: 0.0, status: Status::Converged, evaluations: 0, evidence: None };
        for o in 0..orthants {
            let bounds: Vec<(f64, f64)> =
                (0..n).map(|d| if o >> d & 1 == 0 { (f64::NEG_INFINITY, 0.0) } else { (0.0, f64::INFINITY) }).collect();
            let part = integrate_box(&g, &bounds, share);
            l1.value += part.value;
            l1.err_est += part.err_est;
            l1.evaluations += part.evaluations;
            if !part.converged() {
                l1.status = Status::Inconclusive;
            }
        }
        terms.push(AlphaNorm { alpha: alpha.clone(), l1: trap.finish(l1)? });
    }
    Ok(SobolevNorm::from_parts(k, terms))
}

/// Values on the uniform grid `origin + h·(i_1, …, i_n)`, last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub origin: Vec<f64>,
    pub shape: Vec<usize>,
    pub h: f64,
    pub values: Vec<f64>,
}

impl Grid {
    /// Samples `f` on `[lo, hi]` (per axis) with spacing `h`.
    pub fn sample<F: FnMut(&[f64]) -> Result<f64, E>, E>(lo: &[f64], hi: &[f64], h: f64, mut f: F) -> Result<Grid, E>
    where
        E: From<SobolevError>,
    {
        if !(h > 0.0) || lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
            return Err(SobolevError::InvalidGrid("need lo < hi on every axis and h > 0".into()).into());
        }
        let shape: Vec<usize> = lo.iter().zip(hi).map(|(a, b)| ((b - a) / h).round() as usize + 1).collect();
        let mut grid = Grid { origin: lo.to_vec(), shape, h, values: Vec::new() };
        let total: usize = grid.shape.iter().product();
        grid.values.reserve(total);
        for idx in 0..total {
            let x = grid.point(idx);
            grid.values.push(f(&x)?);
        }
        Ok(grid)
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.shape.len()];
        for d in (0..self.shape.len().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.shape[d + 1];
        }
        s
    }

    pub fn point(&self, mut idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.shape.len()];
        for d in (0..self.shape.len()).rev() {
            x[d] = self.origin[d] + (idx % self.shape[d]) as f64 * self.h;
            idx /= self.shape[d];
        }
        x
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Second-order central stencil for `d^m/dt^m`: offsets from `-w..=w` times `h^{-m}`.
fn stencil(m: usize) -> &'static [f64] {
    match m {
        1 => &[-0.5, 0.0, 0.5],
        2 => &[1.0, -2.0, 1.0],
        3 => &[-0.5, 1.0, 0.0, -1.0, 0.5],
        4 => &[1.0, -4.0, 6.0, -4.0, 1.0],
        _ => &[1.0],
    }
}

/// `D^α` of gridded values by central differences composed axis by axis.
/// The output grid drops the nodes where a stencil would leave the input.
pub fn fd_weak_derivative(grid: &Grid, alpha: &[usize]) -> Result<Grid, SobolevError> {
    if alpha.len() != grid.shape.len() {
        return Err(SobolevError::InvalidGrid(format!("grid has {} axes, α has {}", grid.shape.len(), alpha.len())));
    }
    let mut g = grid.clone();
    for (axis, &m) in alpha.iter().enumerate() {
        if m == 0 {
            continue;
        }
        if m > MAX_FD_ORDER {
            return Err(SobolevError::OrderTooHigh(m));
        }
        if g.shape[axis] < 2 * m + 1 {
            return Err(SobolevError::GridTooCoarse { axis, order: m, points: g.shape[axis], needed: 2 * m + 1 });
        }
        let st = stencil(m);
        let w = st.len() / 2;
        let scale = g.h.powi(-(m as i32));
        let strides = g.strides();
        let mut shape = g.shape.clone();
        shape[axis] -= 2 * w;
        let mut origin = g.origin.clone();
        origin[axis] += w as f64 * g.h;
        let total: usize = shape.iter().product();
        let mut values = Vec::with_capacity(total);
        for out_idx in 0..total {
            let mut rem = out_idx;
            let mut base = 0;
            for d in (0..shape.len()).rev() {
                let mut i = rem % shape[d];
                rem /= shape[d];
                if d == axis {
                    i += w;
                }
                base += i * strides[d];
            }
            let v: f64 = st
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(o, c)| c * g.values[base + o * strides[axis] - w * strides[axis]])
                .sum();
            values.push(v * scale);
        }
        g = Grid { origin, shape, h: g.h, values };
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterchangeReport {
    pub alpha: Vec<usize>,
    pub max_abs_discrepancy: f64,
    pub worst_at: Vec<f64>,
    pub nodes_compared: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Quadrature tolerance for the grid of `H f` values that feeds the finite differences.
pub const INTERCHANGE_QUAD_TOL: f64 = 1e-11;

/// Compares finite differences of `H f` on a grid with the derivative formula at the interior nodes.
pub fn verify_interchange(
    op: &HausdorffOperator,
    f: &TestFunction,
    alpha: &[usize],
    lo: &[f64],
    hi: &[f64],
    h: f64,
    tol: f64,
) -> Result<InterchangeReport, SobolevError> {
    let ev = op.derivative_evaluator(f, alpha)?;
    let grid = Grid::sample(lo, hi, h, |x| -> Result<f64, SobolevError> {
        Ok(op.apply_point(f, x, INTERCHANGE_QUAD_TOL)?.value)
    })?;
    let fd = fd_weak_derivative(&grid, alpha)?;
    let mut worst = 0.0;
    let mut worst_at = Vec::new();
    for idx in 0..fd.len() {
        let x = fd.point(idx);
        let exact = ev.eval(&x, INTERCHANGE_QUAD_TOL)?.value;
        let d = (exact - fd.values[idx]).abs();
        if d > worst || worst_at.is_empty() {
            worst = d;
            worst_at = x;
        }
    }
    Ok(InterchangeReport {
        alpha: alpha.to_vec(),
        max_abs_discrepancy: worst,
        worst_at,
        nodes_compared: fd.len(),
        tol,
        pass: worst <= tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Verdict {
    Bounded { constant: f64 },
    Unbounded { growth: Option<Growth> },
    Inconclusive { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preconditions {
    pub nonneg_checked: bool,
    pub eta_margin: Option<f64>,
    pub eta_floor: f64,
    pub decomposition_nonneg: bool,
    pub samples_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub k: usize,
    pub verdict: Verdict,
    pub preconditions: Preconditions,
    pub evidence: Option<ConditionReport>,
}

impl Certificate {
    pub fn is_bounded(&self) -> bool {
        matches!(self.verdict, Verdict::Bounded { .. })
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self.verdict, Verdict::Unbounded { .. })
    }

    pub fn is_inconclusive(&self) -> bool {
        matches!(self.verdict, Verdict::Inconclusive { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertifyOptions {
    pub eta_floor: f64,
    pub tol: f64,
    pub samples: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { eta_floor: 1e-3, tol: CONDITION_TOL, samples: DEFAULT_SUPPORT_SAMPLES }
    }
}

/// Decides boundedness of `H_{Φ,A}` on `W^{k,1}` from the condition integral `C_k`.
///
/// A finite `C_k` gives `Bounded` outright. A divergent `C_k` gives `Unbounded`
/// only when the sampled hypotheses hold: `Φ ≥ 0`, the η-margin is at least
/// `eta_floor`, and the middle factor of `A` is entrywise nonnegative.
pub fn certify(op: &HausdorffOperator, k: usize, opts: &CertifyOptions) -> Certificate {
    let samples = op.kernel.support_samples(opts.samples);
    let mut pre = Preconditions {
        nonneg_checked: false,
        eta_margin: None,
        eta_floor: opts.eta_floor,
        decomposition_nonneg: false,
        samples_used: samples.len(),
    };
    let inconclusive = |pre: Preconditions, reason: String, evidence: Option<ConditionReport>| Certificate {
        k,
        verdict: Verdict::Inconclusive { reason },
        preconditions: pre,
        evidence,
    };
    if !op.kernel.nonneg {
        return inconclusive(pre, "kernel is not asserted nonnegative".into(), None);
    }
    if let Err(e) = op.kernel.check_nonneg(&samples) {
        return inconclusive(pre, format!("nonnegativity check failed: {e}"), None);
    }
    pre.nonneg_checked = true;
    match eta_margin(&op.family, &samples) {
        Ok(m) => pre.eta_margin = Some(m),
        Err(e) => return inconclusive(pre, format!("column condition could not be evaluated: {e}"), None),
    }
    match op.family.nonnegative_middle_on(&samples) {
        Ok(ok) => pre.decomposition_nonneg = ok,
        Err(e) => return inconclusive(pre, format!("matrix family could not be evaluated: {e}"), None),
    }
    let report = match op.condition_value(k, opts.tol) {
        Ok(r) => r,
        Err(e) => return inconclusive(pre, format!("condition integral failed: {e}"), None),
    };
    match report.quad.status {
        Status::Converged => Certificate {
            k,
            verdict: Verdict::Bounded { constant: report.quad.value },
            preconditions: pre,
            evidence: Some(report),
        },
        Status::Divergent => {
            let eta_ok = pre.eta_margin.is_some_and(|m| m >= opts.eta_floor);
            if eta_ok && pre.decomposition_nonneg {
                let growth = report.quad.evidence.as_ref().and_then(|e| e.growth);
                Certificate { k, verdict: Verdict::Unbounded { growth }, preconditions: pre, evidence: Some(report) }
            } else {
                let why = if eta_ok {
                    "the middle factor of A is not nonnegative"
                } else {
                    "the η-margin is below the floor"
                };
                inconclusive(pre, format!("condition integral diverges but {why}"), Some(report))
            }
        }
        Status::Inconclusive => {
            inconclusive(pre, "condition integral neither converged nor diverged".into(), Some(report))
        }
    }
}

/// `κ(n, k) = max_{m ≤ k} #{α : |α| = m} · n^{m/2}`, the constant in
/// `‖H f‖_{W^{k,1}} ≤ κ C_k ‖f‖_{W^{k,1}}`.
pub fn kappa(n: usize, k: usize) -> f64 {
    (0..=k).map(|m| binomial(m + n - 1, n - 1) * (n as f64).powf(m as f64 / 2.0)).fold(0.0, f64::max)
}

fn binomial(n: usize, r: usize) -> f64 {
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessRow {
    pub radius: f64,
    pub s: f64,
    pub w: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessTable {
    pub k: usize,
    pub rows: Vec<WitnessRow>,
    /// `c` in `S_j ≈ ln R_j + c`, fitted on the second half of the schedule.
    pub log_intercept: f64,
    /// `max_j |S_j - ln R_j - c| / S_j` over the fitted rows.
    pub log_residual: f64,
    pub w_increasing: bool,
    pub ratio_band: (f64, f64),
}

impl WitnessTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("radius,s,w,ratio\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.radius, r.s, r.w, r.ratio));
        }
        out
    }
}

/// Witness function of order `k`: `G_k`, or the Gaussian for `k = 0`.
pub fn witness_function(n: usize, k: usize) -> Result<TestFunction, SobolevError> {
    Ok(if k == 0 { TestFunction::gauss(n) } else { TestFunction::gm(k, n)? })
}

/// Growth of `S_j = C_k(Φ_j, A)` and `W_j = ‖H_{Φ_j,A} G_k‖_{W^{k,1}}` for the
/// truncations `Φ_j = Φ χ_{1/R_j < |y| < R_j}`.
pub fn blowup_witness(op: &HausdorffOperator, k: usize, radii: &[f64], tol: f64) -> Result<WitnessTable, SobolevError> {
    if radii.len() < 2 || radii.iter().any(|&r| !(r > 1.0 && r.is_finite())) {
        return Err(SobolevError::InvalidGrid("need at least two finite radii > 1".into()));
    }
    op.kernel.check_nonneg(&op.kernel.support_samples(DEFAULT_SUPPORT_SAMPLES))?;
    let g = witness_function(op.dim(), k)?;
    let mut rows = Vec::with_capacity(radii.len());
    for &radius in radii {
        let truncated = HausdorffOperator {
            kernel: op.kernel.truncated(radius),
            family: op.family.clone(),
            schedule: op.schedule.clone(),
        };
        let s = truncated.condition_value(k, CONDITION_TOL)?.quad.value;
        let w = wk1_norm_operator_image(&truncated, &g, k, tol)?.total;
        rows.push(WitnessRow { radius, s, w, ratio: if s > 0.0 { w / s } else { f64::NAN } });
    }
    let fit = &rows[rows.len() / 2..];
    let log_intercept = fit.iter().map(|r| r.s - r.radius.ln()).sum::<f64>() / fit.len() as f64;
    let log_residual = fit.iter().map(|r| (r.s - r.radius.ln() - log_intercept).abs() / r.s.abs()).fold(0.0, f64::max);
    let w_increasing = rows.windows(2).all(|p| p[1].w > p[0].w);
    let ratio_band = rows
        .iter()
        .filter(|r| r.ratio.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.ratio), hi.max(r.ratio)));
    Ok(WitnessTable { k, rows, log_intercept, log_residual, w_increasing, ratio_band })
}
