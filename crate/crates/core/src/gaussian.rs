//! Derivatives of `g(t) = e^{-t²}`: `g^{(m)} = P_m g` with `P_0 = 1` and
//! `P_l = P'_{l-1} - 2t P_{l-1}`; the shift thresholds `a_m` and the witness
//! functions `G_m(x) = (-1)^m ∏ g(x_l + a_m)`.

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

pub const MAX_ORDER: usize = 60;

const SCAN_STEP: f64 = 1e-3;
const ROOT_WIDTH: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("order {0} exceeds the supported maximum {MAX_ORDER}")]
    OrderTooLarge(usize),
    #[error("order must be positive")]
    ZeroOrder,
    #[error("derivative order {component} in coordinate {axis} exceeds witness order {order}")]
    OrderMismatch { axis: usize, component: usize, order: usize },
    #[error("point has dimension {found}, witness has dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// `P_m` with exact integer coefficients; `coeffs[j]` multiplies `t^j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HermiteFactor {
    pub order: usize,
    pub coeffs: Vec<BigInt>,
}

impl HermiteFactor {
    pub fn coeffs_f64(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.to_f64().unwrap_or(f64::NAN)).collect()
    }

    pub fn leading(&self) -> &BigInt {
        &self.coeffs[self.order]
    }

    pub fn eval(&self, t: f64) -> f64 {
        horner(&self.coeffs_f64(), t)
    }
}

pub(crate) fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * t + v)
}

/// `P_0, …, P_m`.
pub fn hermite_factor_seq(m: usize) -> Result<Vec<HermiteFactor>, GaussianError> {
    if m > MAX_ORDER {
        return Err(GaussianError::OrderTooLarge(m));
    }
    let mut seq = vec![HermiteFactor { order: 0, coeffs: vec![BigInt::from(1)] }];
    for l in 1..=m {
        let prev = &seq[l - 1].coeffs;
        let mut next = vec![BigInt::zero(); l + 1];
        for (j, c) in prev.iter().enumerate() {
            if j > 0 {
                next[j - 1] += c * j;
            }
            next[j + 1] -= c * 2;
        }
        seq.push(HermiteFactor { order: l, coeffs: next });
    }
    Ok(seq)
}

pub fn hermite_factor(m: usize) -> Result<HermiteFactor, GaussianError> {
    Ok(hermite_factor_seq(m)?.pop().expect("sequence is nonempty"))
}

/// Upper bound on the moduli of the roots of `c` (leading coefficient last):
/// the smaller of the Cauchy and Fujiwara bounds.
fn root_bound(c: &[f64]) -> f64 {
    let d = c.len() - 1;
    let lead = c[d].abs();
    let cauchy = 1.0 + c[..d].iter().map(|v| v.abs() / lead).fold(0.0, f64::max);
    let fujiwara = (1..=d)
        .map(|k| {
            let ratio = c[d - k].abs() / lead;
            let ratio = if k == d { ratio / 2.0 } else { ratio };
            2.0 * ratio.powf(1.0 / k as f64)
        })
        .fold(0.0, f64::max);
    cauchy.min(fujiwara)
}

/// Largest positive root of the polynomial `c`, by a sign-change scan followed by bisection.
fn largest_positive_root(c: &[f64]) -> Option<f64> {
    let bound = root_bound(c) + SCAN_STEP;
    let steps = (bound / SCAN_STEP).ceil() as usize;
    let p = |t: f64| horner(c, t);
    // Scan downward so the first bracket found is the rightmost one.
    let mut hi = steps as f64 * SCAN_STEP;
    let mut phi = p(hi);
    for s in (0..steps).rev() {
        let lo = s as f64 * SCAN_STEP;
        let plo = p(lo);
        if phi == 0.0 && hi > 0.0 {
            return Some(hi);
        }
        if plo == 0.0 {
            return if lo > 0.0 { Some(lo) } else { None };
        }
        if plo.signum() != phi.signum() {
            return Some(bisect(&p, lo, hi, plo));
        }
        hi = lo;
        phi = plo;
    }
    None
}

fn bisect(p: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, plo: f64) -> f64 {
    let s = plo.signum();
    while hi - lo > ROOT_WIDTH {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = p(mid);
        if v == 0.0 {
            return mid;
        }
        if v.signum() == s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `(-1)^i P_i - 1` as doubles.
fn signed_shifted(h: &HermiteFactor) -> Vec<f64> {
    let sign = if h.order.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut c: Vec<f64> = h.coeffs_f64().into_iter().map(|v| sign * v).collect();
    c[0] -= 1.0;
    c
}

/// `a_m`: the largest positive root over `i = 1..=m` of `(-1)^i P_i - 1`, or 0 when none exists.
pub fn shift_threshold(m: usize) -> Result<f64, GaussianError> {
    if m == 0 {
        return Err(GaussianError::ZeroOrder);
    }
    let seq = hermite_factor_seq(m)?;
    Ok(seq[1..].iter().filter_map(|h| largest_positive_root(&signed_shifted(h))).fold(0.0, f64::max))
}

/// `G_m(x) = (-1)^m ∏_l g(x_l + a_m)` in dimension `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessFunction {
    pub order: usize,
    pub shift: f64,
    pub dim: usize,
    #[serde(skip)]
    factors: Vec<Vec<f64>>,
}

impl WitnessFunction {
    pub fn new(order: usize, dim: usize) -> Result<WitnessFunction, GaussianError> {
        let shift = shift_threshold(order)?;
        let factors = hermite_factor_seq(order)?.iter().map(HermiteFactor::coeffs_f64).collect();
        Ok(WitnessFunction { order, shift, dim, factors })
    }

    pub fn sign(&self) -> f64 {
        if self.order.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.sign() * x.iter().map(|&t| (-(t + self.shift).powi(2)).exp()).product::<f64>()
    }
}

/// `D^γ G_m(x)`, exact up to rounding.
pub fn witness_derivative(w: &WitnessFunction, gamma: &[usize], x: &[f64]) -> Result<f64, GaussianError> {
    if gamma.len() != w.dim || x.len() != w.dim {
        return Err(GaussianError::DimensionMismatch { expected: w.dim, found: gamma.len().min(x.len()) });
    }
    if let Some((axis, &component)) = gamma.iter().enumerate().find(|(_, &g)| g > w.order) {
        return Err(GaussianError::OrderMismatch { axis, component, order: w.order });
    }
    let mut v = w.sign();
    for (&g, &t) in gamma.iter().zip(x) {
        let u = t + w.shift;
        v *= horner(&w.factors[g], u) * (-u * u).exp();
    }
    Ok(v)
}

/// Sign of the leading coefficient, `+1` or `-1`.
pub fn leading_sign(h: &HermiteFactor) -> i32 {
    if h.leading().is_negative() {
        -1
    } else {
        1
    }
}
