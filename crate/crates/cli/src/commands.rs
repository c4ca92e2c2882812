//! One function per subcommand; each returns the JSON result and an exit status.

use anyhow::{Context, Result};
use hausdorff_core::classical::proposition_report;
use hausdorff_core::matrix::{cone_lower_bound, cone_measure};
use hausdorff_core::quadrature::Status;
use hausdorff_core::sobolev::{
    blowup_witness, certify, kappa, verify_interchange, wk1_norm, wk1_norm_operator_image, CertifyOptions, Verdict,
};
use serde_json::{json, Value};

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failed,
    Inconclusive,
}

pub struct Report {
    pub result: Value,
    pub outcome: Outcome,
    /// Extra CSV output (growth tables).
    pub csv: Option<String>,
}

impl Report {
    fn new(result: Value, outcome: Outcome) -> Report {
        Report { result, outcome, csv: None }
    }
}

fn certify_options(cfg: &RunConfig) -> CertifyOptions {
    CertifyOptions { eta_floor: cfg.run.eta_floor, tol: cfg.run.tol, samples: cfg.run.support_samples }
}

pub fn certify_cmd(cfg: &RunConfig) -> Result<Report> {
    let op = cfg.operator()?;
    let cert = certify(&op, cfg.run.k, &certify_options(cfg));
    let outcome = if cert.is_inconclusive() { Outcome::Inconclusive } else { Outcome::Success };
    let evaluations = cert.evidence.as_ref().map_or(0, |e| e.quad.evaluations);
    Ok(Report::new(json!({ "certificate": cert, "counters": { "evaluations": evaluations } }), outcome))
}

pub fn apply_cmd(cfg: &RunConfig) -> Result<Report> {
    anyhow::ensure!(!cfg.run.points.is_empty(), "run.points is empty");
    let op = cfg.operator()?;
    let f = cfg.function()?;
    let mut rows = Vec::new();
    let mut evaluations = 0;
    let mut all_converged = true;
    for x in &cfg.run.points {
        let r = op.apply_point(&f, x, cfg.run.tol).with_context(|| format!("applying at {x:?}"))?;
        evaluations += r.evaluations;
        all_converged &= r.converged();
        rows.push(json!({ "x": x, "value": r.value, "err_est": r.err_est, "status": r.status }));
    }
    let outcome = if all_converged { Outcome::Success } else { Outcome::Inconclusive };
    Ok(Report::new(json!({ "values": rows, "counters": { "evaluations": evaluations } }), outcome))
}

/// `‖f‖_{W^{k,1}}`, and with a kernel configured also `‖H f‖_{W^{k,1}}` and its bound.
pub fn wnorm_cmd(cfg: &RunConfig) -> Result<Report> {
    let f = cfg.function()?;
    let k = cfg.run.k;
    let fnorm = wk1_norm(&f, k, cfg.run.tol)?;
    let mut evaluations: usize = fnorm.per_alpha.iter().map(|a| a.l1.evaluations).sum();
    let mut outcome = if fnorm.status == Status::Converged { Outcome::Success } else { Outcome::Inconclusive };
    let mut result = json!({ "function_norm": fnorm });
    if cfg.kernel.is_some() {
        let op = cfg.operator()?;
        let cert = certify(&op, k, &certify_options(cfg));
        match cert.verdict {
            Verdict::Bounded { constant } => {
                let image = wk1_norm_operator_image(&op, &f, k, cfg.run.tol)?;
                evaluations += image.per_alpha.iter().map(|a| a.l1.evaluations).sum::<usize>();
                if image.status != Status::Converged {
                    outcome = Outcome::Inconclusive;
                }
                let bound = kappa(cfg.n, k) * constant * fnorm.total;
                result["image_norm"] = json!(image);
                result["bound"] = json!({ "kappa": kappa(cfg.n, k), "condition": constant, "value": bound });
            }
            Verdict::Unbounded { .. } => {
                anyhow::bail!("the operator is not bounded on W^{{{k},1}}; the image norm is not defined")
            }
            Verdict::Inconclusive { ref reason } => {
                outcome = Outcome::Inconclusive;
                result["image_norm_skipped"] = json!(reason);
            }
        }
    }
    result["counters"] = json!({ "evaluations": evaluations });
    Ok(Report::new(result, outcome))
}

pub fn verify_derivative_cmd(cfg: &RunConfig) -> Result<Report> {
    let op = cfg.operator()?;
    let f = cfg.function()?;
    let alpha = cfg.run.alpha.clone().context("run.alpha is required")?;
    let lo = vec![cfg.run.lo; cfg.n];
    let hi = vec![cfg.run.hi; cfg.n];
    let r = verify_interchange(&op, &f, &alpha, &lo, &hi, cfg.run.h, cfg.run.tol)?;
    let outcome = if r.pass { Outcome::Success } else { Outcome::Failed };
    Ok(Report::new(json!({ "interchange": r, "counters": { "nodes_compared": r.nodes_compared } }), outcome))
}

pub fn witness_cmd(cfg: &RunConfig) -> Result<Report> {
    let op = cfg.operator()?;
    let table = blowup_witness(&op, cfg.run.k, &cfg.run.radii, cfg.run.tol)?;
    let csv = table.to_csv();
    let mut report =
        Report::new(json!({ "witness": table, "counters": { "rows": table.rows.len() } }), Outcome::Success);
    report.csv = Some(csv);
    Ok(report)
}

pub fn hardy_report_cmd(cfg: &RunConfig) -> Result<Report> {
    let report = proposition_report(cfg.run.k, &certify_options(cfg));
    let outcome = if report.matches_expected { Outcome::Success } else { Outcome::Failed };
    let evaluations: usize = report
        .rows
        .iter()
        .flat_map(|r| [&r.hardy, &r.adjoint])
        .filter_map(|c| c.evidence.as_ref().map(|e| e.quad.evaluations))
        .sum();
    Ok(Report::new(json!({ "proposition": report, "counters": { "evaluations": evaluations } }), outcome))
}

pub fn cone_measure_cmd(cfg: &RunConfig) -> Result<Report> {
    let b = cfg.constant_matrix()?;
    let est = cone_measure(&b, cfg.run.samples, cfg.run.seed)?;
    let bound = cone_lower_bound(&b)?;
    let holds = est.estimate + 3.0 * est.stderr >= bound;
    Ok(Report::new(
        json!({
            "cone": est,
            "lower_bound": bound,
            "bound_holds": holds,
            "counters": { "samples": est.samples, "hits": est.hits },
        }),
        if holds { Outcome::Success } else { Outcome::Failed },
    ))
}
