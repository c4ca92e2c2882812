//! Gaussian-polynomial test functions
//!
//! ```text
//! f(x) = Σ_groups Σ_terms c · ∏_l u_l^{p_l} · e^{-Σ_l u_l²},   u_l = σ x_l + s_l
//! ```
//!
//! The family is closed under differentiation and positive dilation, and every
//! member lies in `W^{k,1}` for all `k`.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::gaussian::{shift_threshold, GaussianError};
use crate::matrix::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TestFnError {
    #[error("dilation factor must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("expected {expected} coordinates, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shift must be finite")]
    NonFiniteShift,
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

/// Anything that can be evaluated pointwise on ℝⁿ.
pub trait PointFunction {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// Terms sharing the Gaussian factor `e^{-Σ(σ x_l + s_l)²}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Group {
    pub scale: f64,
    pub shifts: Vec<f64>,
    pub terms: Vec<Monomial>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFunction {
    dim: usize,
    groups: Vec<Group>,
}

fn cmp_f64s(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(a.len().cmp(&b.len()))
}

impl TestFunction {
    pub fn zero(dim: usize) -> TestFunction {
        TestFunction { dim, groups: Vec::new() }
    }

    /// `sign · ∏ e^{-(x_l + s_l)²}`.
    pub fn gauss_product(shifts: &[f64], sign: f64) -> Result<TestFunction, TestFnError> {
        if shifts.iter().any(|s| !s.is_finite()) {
            return Err(TestFnError::NonFiniteShift);
        }
        let n = shifts.len();
        Ok(TestFunction {
            dim: n,
            groups: vec![Group {
                scale: 1.0,
                shifts: shifts.to_vec(),
                terms: vec![Monomial { coeff: sign, powers: vec![0; n] }],
            }],
        })
    }

    /// `e^{-|x|²}`.
    pub fn gauss(n: usize) -> TestFunction {
        TestFunction::gauss_product(&vec![0.0; n], 1.0).expect("finite shifts")
    }

    /// `G_1(x) = -∏ e^{-(x_l + 1/2)²}`.
    pub fn g1(n: usize) -> TestFunction {
        TestFunction::gauss_product(&vec![0.5; n], -1.0).expect("finite shifts")
    }

    /// `G_m(x) = (-1)^m ∏ e^{-(x_l + a_m)²}`.
    pub fn gm(m: usize, n: usize) -> Result<TestFunction, TestFnError> {
        let a = shift_threshold(m)?;
        TestFunction::gauss_product(&vec![a; n], if m.is_multiple_of(2) { 1.0 } else { -1.0 })
    }

    /// Named presets: `gauss`, `G1`, `Gm` (with order `m`).
    pub fn preset(name: &str, n: usize, m: usize) -> Result<TestFunction, TestFnError> {
        match name {
            "gauss" => Ok(TestFunction::gauss(n)),
            "G1" => Ok(TestFunction::g1(n)),
            "Gm" => TestFunction::gm(m, n),
            other => Err(TestFnError::UnknownPreset(other.to_string())),
        }
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    fn canonical(mut self) -> TestFunction {
        self.groups.sort_by(|a, b| a.scale.total_cmp(&b.scale).then_with(|| cmp_f64s(&a.shifts, &b.shifts)));
        let mut groups: Vec<Group> = Vec::with_capacity(self.groups.len());
        for g in self.groups.drain(..) {
            match groups.last_mut() {
                Some(last) if last.scale == g.scale && last.shifts == g.shifts => last.terms.extend(g.terms),
                _ => groups.push(g),
            }
        }
        for g in &mut groups {
            g.terms.sort_by(|a, b| a.powers.cmp(&b.powers));
            g.terms.dedup_by(|b, a| {
                let same = a.powers == b.powers;
                if same {
                    a.coeff += b.coeff;
                }
                same
            });
            g.terms.retain(|t| t.coeff != 0.0);
        }
        groups.retain(|g| !g.terms.is_empty());
        self.groups = groups;
        self
    }

    pub fn add(&self, other: &TestFunction) -> Result<TestFunction, TestFnError> {
        if self.dim != other.dim {
            return Err(TestFnError::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        let mut groups = self.groups.clone();
        groups.extend(other.groups.iter().cloned());
        Ok(TestFunction { dim: self.dim, groups }.canonical())
    }

    pub fn scaled(&self, c: f64) -> TestFunction {
        let mut out = self.clone();
        for g in &mut out.groups {
            for t in &mut g.terms {
                t.coeff *= c;
            }
        }
        out.canonical()
    }

    fn differentiate_axis(&self, axis: usize) -> TestFunction {
        let mut groups = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let mut terms = Vec::with_capacity(2 * g.terms.len());
            for t in &g.terms {
                let p = t.powers[axis];
                if p > 0 {
                    let mut powers = t.powers.clone();
                    powers[axis] = p - 1;
                    terms.push(Monomial { coeff: t.coeff * p as f64 * g.scale, powers });
                }
                let mut powers = t.powers.clone();
                powers[axis] = p + 1;
                terms.push(Monomial { coeff: -2.0 * t.coeff * g.scale, powers });
            }
            groups.push(Group { scale: g.scale, shifts: g.shifts.clone(), terms });
        }
        TestFunction { dim: self.dim, groups }.canonical()
    }

    /// Exact `D^α f`.
    pub fn differentiate(&self, alpha: &[usize]) -> Result<TestFunction, TestFnError> {
        if alpha.len() != self.dim {
            return Err(TestFnError::DimensionMismatch { expected: self.dim, found: alpha.len() });
        }
        let mut out = self.clone();
        for (axis, &a) in alpha.iter().enumerate() {
            for _ in 0..a {
                out = out.differentiate_axis(axis);
            }
        }
        Ok(out)
    }

    /// `x ↦ f(λ x)`.
    pub fn dilate(&self, lambda: f64) -> Result<TestFunction, TestFnError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(TestFnError::NonPositiveScale(lambda));
        }
        let mut out = self.clone();
        for g in &mut out.groups {
            g.scale *= lambda;
        }
        Ok(out.canonical())
    }

    /// Exact `‖f‖_{L¹}` for a single term whose polynomial degree is at most one in every coordinate.
    pub fn l1_closed_form(&self) -> Option<f64> {
        match self.groups.as_slice() {
            [] => Some(0.0),
            [g] if g.terms.len() == 1 && g.terms[0].powers.iter().all(|&p| p <= 1) => {
                let t = &g.terms[0];
                let per_axis: f64 = t.powers.iter().map(|&p| if p == 0 { PI.sqrt() } else { 1.0 }).product();
                Some(t.coeff.abs() * per_axis / g.scale.powi(self.dim as i32))
            }
            _ => None,
        }
    }

    /// Largest Gaussian width `1/σ` and largest `|s|/σ` over the groups: the function
    /// is negligible outside a box of a few widths around `-s/σ`.
    pub fn extent(&self) -> (f64, f64) {
        let width = self.groups.iter().map(|g| 1.0 / g.scale).fold(0.0, f64::max);
        let offset =
            self.groups.iter().flat_map(|g| g.shifts.iter().map(move |s| s.abs() / g.scale)).fold(0.0, f64::max);
        (width, offset)
    }

    pub fn max_degree(&self) -> u32 {
        self.groups.iter().flat_map(|g| g.terms.iter().map(|t| t.powers.iter().sum::<u32>())).max().unwrap_or(0)
    }
}

impl PointFunction for TestFunction {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut total = 0.0;
        let mut u = [0.0; 8];
        for g in &self.groups {
            let mut sq = 0.0;
            for (l, (&xl, &s)) in x.iter().zip(&g.shifts).enumerate() {
                u[l] = g.scale * xl + s;
                sq += u[l] * u[l];
            }
            let weight = (-sq).exp();
            if weight == 0.0 {
                continue;
            }
            let poly: f64 = g
                .terms
                .iter()
                .map(|t| t.coeff * t.powers.iter().enumerate().map(|(l, &p)| u[l].powi(p as i32)).product::<f64>())
                .sum();
            total += poly * weight;
        }
        total
    }
}

/// `x ↦ f(M x)`.
#[derive(Debug, Clone)]
pub struct LinearPullback<F> {
    pub inner: F,
    pub matrix: Matrix,
}

impl<F: PointFunction> PointFunction for LinearPullback<F> {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(&self.matrix.mul_vec(x))
    }
}

/// A closure viewed as a function on ℝⁿ.
pub struct Sampled<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64> PointFunction for Sampled<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

impl<T: PointFunction + ?Sized> PointFunction for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
}

/// All multi-indices in `n` variables with `|α| = order`, in lexicographically decreasing order.
pub fn multi_indices(n: usize, order: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() + 1 == n {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for a in (0..=left).rev() {
            prefix.push(a);
            rec(n, left - a, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    rec(n, order, &mut Vec::with_capacity(n), &mut out);
    out
}

/// All multi-indices with `|α| ≤ k`, ordered by total order.
pub fn multi_indices_upto(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0..=k).flat_map(|m| multi_indices(n, m)).collect()
}
