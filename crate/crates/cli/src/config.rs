//! Run configuration: TOML sections `[kernel]`, `[matrix]`, `[function]`, `[run]`.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use hausdorff_core::expr::Expr;
use hausdorff_core::matrix::{Matrix, MatrixFamily};
use hausdorff_core::operator::{HausdorffOperator, KernelSpec, Support};
use hausdorff_core::quadrature::ProbeSchedule;
use hausdorff_core::testfn::TestFunction;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "one")]
    pub n: usize,
    pub kernel: Option<KernelSection>,
    pub matrix: Option<MatrixSection>,
    pub function: Option<FunctionSection>,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub expr: String,
    #[serde(default = "all")]
    pub support: String,
    #[serde(default = "yes")]
    pub nonneg: bool,
}

/// A matrix entry: a number or an expression in `y1..yn`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSection {
    /// `diag-inverse-norm`, `constant`, `expr` or `decomposed`.
    pub variant: String,
    #[serde(default)]
    pub entries: Vec<Entry>,
    /// Middle factor of `decomposed`: `diag-inverse-norm` or `expr` (using `entries`).
    pub middle: Option<String>,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSection {
    /// `gauss`, `G1` or `Gm`.
    pub preset: String,
    #[serde(default = "one")]
    pub m: usize,
    /// Shifts for `gauss`: `∏ e^{-(x_l + s_l)²}`.
    pub shifts: Option<Vec<f64>>,
    #[serde(default = "unit")]
    pub dilation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub k: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eta_floor")]
    pub eta_floor: f64,
    #[serde(default = "default_support_samples")]
    pub support_samples: usize,
    /// Monte Carlo samples for `cone-measure`.
    #[serde(default = "default_cone_samples")]
    pub samples: u64,
    pub inner_schedule: Option<Vec<f64>>,
    pub outer_schedule: Option<Vec<f64>>,
    /// Evaluation points for `apply`.
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    /// Multi-index for `verify-derivative`.
    pub alpha: Option<Vec<usize>>,
    /// Grid `[lo, hi]ⁿ` with spacing `h` for `verify-derivative`.
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    /// Truncation radii for `witness`.
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn one() -> usize {
    1
}
fn all() -> String {
    "all".into()
}
fn yes() -> bool {
    true
}
fn unit() -> f64 {
    1.0
}
fn default_tol() -> f64 {
    1e-8
}
fn default_eta_floor() -> f64 {
    1e-3
}
fn default_support_samples() -> usize {
    hausdorff_core::sobolev::DEFAULT_SUPPORT_SAMPLES
}
fn default_cone_samples() -> u64 {
    1_000_000
}
fn default_lo() -> f64 {
    -5.0
}
fn default_hi() -> f64 {
    5.0
}
fn default_h() -> f64 {
    1e-2
}
fn default_radii() -> Vec<f64> {
    (1..=8).map(|j| 2f64.powi(j)).collect()
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: Overrides) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<RunConfig>(&text).with_context(|| format!("invalid config {}", p.display()))?
            }
            None => toml::from_str("").expect("defaults"),
        };
        if let Some(t) = overrides.tol {
            cfg.run.tol = t;
        }
        if let Some(s) = overrides.seed {
            cfg.run.seed = s;
        }
        if let Some(k) = overrides.k {
            cfg.run.k = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        ensure!((1..=4).contains(&self.n), "n = {} is outside 1..=4", self.n);
        ensure!(self.run.tol > 0.0 && self.run.tol.is_finite(), "run.tol must be positive, got {}", self.run.tol);
        ensure!(self.run.h > 0.0, "run.h must be positive");
        ensure!(self.run.lo < self.run.hi, "run.lo must be below run.hi");
        if let Some(f) = &self.function {
            if let Some(s) = &f.shifts {
                ensure!(f.preset == "gauss", "function.shifts only applies to the gauss preset");
                ensure!(s.len() == self.n, "function.shifts has {} entries, n = {}", s.len(), self.n);
            }
        }
        if let Some(a) = &self.run.alpha {
            ensure!(a.len() == self.n, "run.alpha has {} entries, n = {}", a.len(), self.n);
        }
        for (i, p) in self.run.points.iter().enumerate() {
            ensure!(p.len() == self.n, "run.points[{i}] has {} coordinates, n = {}", p.len(), self.n);
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<Option<ProbeSchedule>> {
        match (&self.run.inner_schedule, &self.run.outer_schedule) {
            (None, None) => Ok(None),
            (Some(inner), Some(outer)) => Ok(Some(ProbeSchedule { inner: inner.clone(), outer: outer.clone() })),
            _ => bail!("run.inner_schedule and run.outer_schedule must be given together"),
        }
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        let k = self.kernel.as_ref().context("the [kernel] section is required")?;
        let support: Support = k.support.parse().context("kernel.support")?;
        Ok(KernelSpec::new(self.n, &k.expr, support).context("kernel.expr")?.with_nonneg(k.nonneg))
    }

    pub fn family(&self) -> Result<MatrixFamily> {
        let m = self.matrix.as_ref().context("the [matrix] section is required")?;
        build_family(self.n, &m.variant, m)
    }

    pub fn constant_matrix(&self) -> Result<Matrix> {
        let m = self.matrix.as_ref().context("the [matrix] section is required")?;
        ensure!(m.variant == "constant", "a constant matrix is required, got variant {:?}", m.variant);
        constant_entries(self.n, &m.entries)
    }

    pub fn operator(&self) -> Result<HausdorffOperator> {
        let op = HausdorffOperator::new(self.kernel()?, self.family()?)?;
        Ok(match self.schedule()? {
            Some(s) => op.with_schedule(s),
            None => op,
        })
    }

    pub fn function(&self) -> Result<TestFunction> {
        let f = self.function.as_ref().context("the [function] section is required")?;
        let base = match &f.shifts {
            Some(s) => TestFunction::gauss_product(s, 1.0)?,
            None => TestFunction::preset(&f.preset, self.n, f.m).context("function.preset")?,
        };
        base.dilate(f.dilation).context("function.dilation")
    }
}

fn constant_entries(n: usize, entries: &[Entry]) -> Result<Matrix> {
    ensure!(entries.len() == n * n, "matrix.entries needs {} values, got {}", n * n, entries.len());
    let data = entries
        .iter()
        .enumerate()
        .map(|(i, e)| match e {
            Entry::Number(v) => Ok(*v),
            Entry::Text(s) => {
                let expr = Expr::parse(s, n).with_context(|| format!("matrix.entries[{i}]"))?;
                expr.eval(&vec![0.0; n]).with_context(|| format!("matrix.entries[{i}] is not a constant"))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Matrix::new(n, data)?)
}

fn expr_entries(n: usize, entries: &[Entry]) -> Result<Vec<Expr>> {
    ensure!(entries.len() == n * n, "matrix.entries needs {} expressions, got {}", n * n, entries.len());
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let text = match e {
                Entry::Number(v) => format!("{v:e}"),
                Entry::Text(s) => s.clone(),
            };
            Expr::parse(&text, n).with_context(|| format!("matrix.entries[{i}]"))
        })
        .collect()
}

fn build_family(n: usize, variant: &str, m: &MatrixSection) -> Result<MatrixFamily> {
    Ok(match variant {
        "diag-inverse-norm" => MatrixFamily::diagonal_inverse_norm(n),
        "constant" => MatrixFamily::constant(constant_entries(n, &m.entries)?)?,
        "expr" => MatrixFamily::expression(n, expr_entries(n, &m.entries)?)?,
        "decomposed" => {
            let middle = m.middle.as_deref().unwrap_or("diag-inverse-norm");
            ensure!(middle != "decomposed" && middle != "constant", "matrix.middle must be diag-inverse-norm or expr");
            let p = build_family(n, middle, m)?;
            let lambda = Matrix::new(n, m.lambda.clone()).context("matrix.lambda")?;
            let q = Matrix::new(n, m.q.clone()).context("matrix.q")?;
            MatrixFamily::decomposed(lambda, p, q)?
        }
        other => bail!("unknown matrix.variant {other:?}"),
    })
}
