//! Small dense matrices, the matrix families `y ↦ A(y)`, and the quantities the
//! characterization needs: Frobenius and operator norms, determinants, the
//! η-margin, column normalization and the measure of the cone `A Ω ∩ S^{n-1}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Expr, ExprError};

/// Tolerance for sampled nonnegativity of the middle factor `P(y)`.
pub const NONNEG_SLACK: f64 = -1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("matrix is singular")]
    Singular,
    #[error("column {0} has zero norm")]
    SingularColumn(usize),
    #[error("expected {expected} entries, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("constant factor {0} has zero determinant")]
    SingularConstantPart(&'static str),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Matrix, MatrixError> {
        if data.len() != n * n {
            return Err(MatrixError::Shape { expected: n * n, found: data.len() });
        }
        Ok(Matrix { n, data })
    }

    pub fn identity(n: usize) -> Matrix {
        Matrix::diag(&vec![1.0; n])
    }

    pub fn diag(d: &[f64]) -> Matrix {
        let n = d.len();
        let mut data = vec![0.0; n * n];
        for (i, v) in d.iter().enumerate() {
            data[i * n + i] = *v;
        }
        Matrix { n, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Matrix, MatrixError> {
        let n = rows.len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix::new(n, data)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { n: self.n, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                for j in 0..n {
                    data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        Matrix { n, data }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_vec_into(x, &mut out);
        out
    }

    #[inline]
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.data[i * self.n..(i + 1) * self.n].iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn transpose(&self) -> Matrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.get(i, j);
            }
        }
        Matrix { n, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `‖B‖ = (Σ |b_ij|²)^{1/2}`.
    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.n).map(|j| (0..self.n).map(|i| self.get(i, j).powi(2)).sum::<f64>().sqrt()).collect()
    }

    pub fn lu(&self) -> Lu {
        Lu::factor(self)
    }

    pub fn det(&self) -> f64 {
        self.lu().det()
    }

    pub fn inverse(&self) -> Result<Matrix, MatrixError> {
        let lu = self.lu();
        if lu.singular {
            return Err(MatrixError::Singular);
        }
        let n = self.n;
        let mut data = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = lu.solve(&e);
            for i in 0..n {
                data[i * n + j] = col[i];
            }
        }
        Ok(Matrix { n, data })
    }

    /// Largest singular value by power iteration on `BᵀB`.
    ///
    /// The Gram matrix is first raised to a high power by repeated squaring, which
    /// separates nearly equal top eigenvalues; its largest column then starts the
    /// Rayleigh-quotient iteration.
    pub fn operator_norm(&self) -> f64 {
        let gram = self.transpose().mul(self);
        let n = self.n;
        let peak = gram.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if peak == 0.0 || !peak.is_finite() {
            return if peak == 0.0 { 0.0 } else { f64::NAN };
        }
        let mut m = gram.scale(1.0 / peak);
        for _ in 0..SQUARINGS {
            let sq = m.mul(&m);
            let top = sq.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if top == 0.0 {
                break;
            }
            m = sq.scale(1.0 / top);
        }
        let start = (0..n)
            .map(|j| (0..n).map(|i| m.get(i, j)).collect::<Vec<_>>())
            .max_by(|a, b| norm2(a).total_cmp(&norm2(b)))
            .expect("dimension is positive");
        rayleigh_power(&gram, &start).sqrt()
    }
}

const SQUARINGS: usize = 24;

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn rayleigh_power(gram: &Matrix, v0: &[f64]) -> f64 {
    let mut v = v0.to_vec();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    let mut w = vec![0.0; v.len()];
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        gram.mul_vec_into(&v, &mut w);
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        // The Rayleigh quotient error is quadratic in the residual, so a small
        // residual is a much stronger stop than a small change in the quotient.
        let residual = v.iter().zip(&w).map(|(a, b)| (b - next * a).powi(2)).sum::<f64>().sqrt();
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
        if residual <= 1e-9 * next.abs() || (next - lambda).abs() <= 1e-15 * next.abs() {
            return next.max(lambda);
        }
        lambda = next;
    }
    lambda
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    sign: f64,
    singular: bool,
}

impl Lu {
    fn factor(m: &Matrix) -> Lu {
        let n = m.n;
        let mut lu = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let mut singular = false;
        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|i| (i, lu[i * n + k].abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot == 0.0 {
                singular = true;
                continue;
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let d = lu[k * n + k];
            for i in k + 1..n {
                let factor = lu[i * n + k] / d;
                lu[i * n + k] = factor;
                for j in k + 1..n {
                    lu[i * n + j] -= factor * lu[k * n + j];
                }
            }
        }
        Lu { n, lu, perm, sign, singular }
    }

    pub fn det(&self) -> f64 {
        if self.singular {
            return 0.0;
        }
        (0..self.n).map(|i| self.lu[i * self.n + i]).product::<f64>() * self.sign
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu[i * n + j] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[i * n + j] * x[j];
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixStats {
    pub fro: f64,
    pub opn: f64,
    pub det: f64,
    pub colnorms: Vec<f64>,
}

pub fn matrix_stats(b: &Matrix) -> Result<MatrixStats, MatrixError> {
    if !b.is_finite() {
        return Err(MatrixError::NonFinite);
    }
    Ok(MatrixStats { fro: b.frobenius(), opn: b.operator_norm(), det: b.det(), colnorms: b.column_norms() })
}

/// Columns scaled to `A_j / (n ‖A_j‖)`.
pub fn normalize_columns(b: &Matrix) -> Result<Matrix, MatrixError> {
    let n = b.n;
    let norms = b.column_norms();
    if let Some(j) = norms.iter().position(|&c| c == 0.0) {
        return Err(MatrixError::SingularColumn(j));
    }
    let mut data = b.data.clone();
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] /= n as f64 * norms[j];
        }
    }
    Ok(Matrix { n, data })
}

/// `|det B| / ∏_j ‖B_j‖`, a number in `[0, 1]` by Hadamard's inequality.
pub fn column_independence(b: &Matrix) -> Result<f64, MatrixError> {
    let norms = b.column_norms();
    if let Some(j) = norms.iter().position(|&c| c == 0.0) {
        return Err(MatrixError::SingularColumn(j));
    }
    Ok(b.det().abs() / norms.iter().product::<f64>())
}

/// Matrix-valued map `y ↦ A(y)`.
#[derive(Debug, Clone)]
pub enum MatrixFamily {
    /// `A(y) = diag(1/|y|, …, 1/|y|)`.
    DiagonalInverseNorm {
        n: usize,
    },
    Constant(Matrix),
    /// Row-major grid of entry expressions.
    ExpressionEntries {
        n: usize,
        entries: Vec<Expr>,
    },
    /// `A(y) = Λ P(y) Q` with constant invertible `Λ`, `Q` and `P` entrywise nonnegative on the kernel support.
    Decomposed {
        lambda: Matrix,
        p: Box<MatrixFamily>,
        q: Matrix,
    },
}

impl MatrixFamily {
    pub fn diagonal_inverse_norm(n: usize) -> MatrixFamily {
        MatrixFamily::DiagonalInverseNorm { n }
    }

    pub fn constant(m: Matrix) -> Result<MatrixFamily, MatrixError> {
        if !m.is_finite() {
            return Err(MatrixError::NonFinite);
        }
        Ok(MatrixFamily::Constant(m))
    }

    pub fn expression(n: usize, entries: Vec<Expr>) -> Result<MatrixFamily, MatrixError> {
        if entries.len() != n * n {
            return Err(MatrixError::Shape { expected: n * n, found: entries.len() });
        }
        if let Some(e) = entries.iter().find(|e| e.dim() != n) {
            return Err(MatrixError::DimensionMismatch(e.dim(), n));
        }
        Ok(MatrixFamily::ExpressionEntries { n, entries })
    }

    pub fn decomposed(lambda: Matrix, p: MatrixFamily, q: Matrix) -> Result<MatrixFamily, MatrixError> {
        let n = p.dim();
        if lambda.dim() != n || q.dim() != n {
            return Err(MatrixError::DimensionMismatch(lambda.dim().max(q.dim()), n));
        }
        if lambda.det() == 0.0 {
            return Err(MatrixError::SingularConstantPart("lambda"));
        }
        if q.det() == 0.0 {
            return Err(MatrixError::SingularConstantPart("q"));
        }
        Ok(MatrixFamily::Decomposed { lambda, p: Box::new(p), q })
    }

    pub fn dim(&self) -> usize {
        match self {
            MatrixFamily::DiagonalInverseNorm { n } | MatrixFamily::ExpressionEntries { n, .. } => *n,
            MatrixFamily::Constant(m) => m.dim(),
            MatrixFamily::Decomposed { lambda, .. } => lambda.dim(),
        }
    }

    pub fn eval(&self, y: &[f64]) -> Result<Matrix, MatrixError> {
        let m = match self {
            MatrixFamily::DiagonalInverseNorm { n } => {
                let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r == 0.0 {
                    return Err(MatrixError::Singular);
                }
                Matrix::diag(&vec![1.0 / r; *n])
            }
            MatrixFamily::Constant(m) => m.clone(),
            MatrixFamily::ExpressionEntries { n, entries } => {
                let data = entries.iter().map(|e| e.eval(y)).collect::<Result<Vec<_>, _>>()?;
                Matrix { n: *n, data }
            }
            MatrixFamily::Decomposed { lambda, p, q } => lambda.mul(&p.eval(y)?).mul(q),
        };
        if !m.is_finite() {
            return Err(MatrixError::NonFinite);
        }
        Ok(m)
    }

    /// True when `A(y)` depends on `y` only through `|y|`.
    pub fn is_radial(&self) -> bool {
        match self {
            MatrixFamily::DiagonalInverseNorm { .. } | MatrixFamily::Constant(_) => true,
            MatrixFamily::ExpressionEntries { entries, .. } => entries.iter().all(Expr::is_radial),
            MatrixFamily::Decomposed { p, .. } => p.is_radial(),
        }
    }

    /// The middle factor `P` of the class-𝒜 decomposition; the family itself when
    /// it has no explicit constant factors.
    pub fn middle_factor(&self) -> &MatrixFamily {
        match self {
            MatrixFamily::Decomposed { p, .. } => p,
            other => other,
        }
    }

    /// Checks membership in class 𝒜 on the given sample points: the middle factor
    /// must be entrywise nonnegative. Constant families are `Λ · I · I`.
    pub fn nonnegative_middle_on(&self, samples: &[Vec<f64>]) -> Result<bool, MatrixError> {
        if let MatrixFamily::Constant(_) = self {
            return Ok(true);
        }
        let p = self.middle_factor();
        for y in samples {
            if p.eval(y)?.data.iter().any(|&v| v < NONNEG_SLACK) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Conjugates the family by constant matrices: `y ↦ Λ A(y) Q`.
    pub fn conjugated(&self, lambda: Matrix, q: Matrix) -> Result<MatrixFamily, MatrixError> {
        MatrixFamily::decomposed(lambda, self.clone(), q)
    }
}

/// `min_y |det A(y)| / ∏_j ‖A_j(y)‖` over the samples.
pub fn eta_margin(fam: &MatrixFamily, samples: &[Vec<f64>]) -> Result<f64, MatrixError> {
    let mut margin = f64::INFINITY;
    for y in samples {
        margin = margin.min(column_independence(&fam.eval(y)?)?);
    }
    Ok(margin)
}

/// Volume of the unit ball in ℝⁿ.
pub fn ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / n as f64 * ball_volume(n - 2),
    }
}

/// Surface measure of the unit sphere `S^{n-1}`.
pub fn sphere_area(n: usize) -> f64 {
    n as f64 * ball_volume(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub hits: u64,
    pub samples: u64,
}

const CONE_CHUNK: u64 = 1 << 16;

/// Monte Carlo estimate of `σ(B Ω ∩ S^{n-1})`, `Ω = (0, ∞)ⁿ`: the fraction of
/// uniform directions `u` with `B⁻¹u > 0` componentwise, times `|S^{n-1}|`.
///
/// Samples are drawn in fixed-size chunks; chunk `c` uses ChaCha stream `c`
/// of the given seed, so the count does not depend on how chunks are scheduled.
pub fn cone_measure(b: &Matrix, n_samples: u64, seed: u64) -> Result<ConeEstimate, MatrixError> {
    if !b.is_finite() {
        return Err(MatrixError::NonFinite);
    }
    let inv = b.inverse()?;
    let n = b.dim();
    let chunks = n_samples.div_ceil(CONE_CHUNK);
    let mut hits = 0u64;
    let mut u = vec![0.0; n];
    let mut x = vec![0.0; n];
    for c in 0..chunks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c);
        let count = CONE_CHUNK.min(n_samples - c * CONE_CHUNK);
        for _ in 0..count {
            // The normalization of u does not affect the sign test.
            for v in u.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            inv.mul_vec_into(&u, &mut x);
            if x.iter().all(|&v| v > 0.0) {
                hits += 1;
            }
        }
    }
    let area = sphere_area(n);
    let p = hits as f64 / n_samples as f64;
    Ok(ConeEstimate {
        estimate: p * area,
        stderr: (p * (1.0 - p) / n_samples as f64).sqrt() * area,
        hits,
        samples: n_samples,
    })
}

/// Lower bound `n · |det Ã| · V_n / 2ⁿ` for the cone measure, with `Ã` the
/// column-normalized matrix.
pub fn cone_lower_bound(b: &Matrix) -> Result<f64, MatrixError> {
    let n = b.dim();
    let normalized = normalize_columns(b)?;
    Ok(n as f64 * normalized.det().abs() * ball_volume(n) / 2f64.powi(n as i32))
}
