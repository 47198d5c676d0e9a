use ifs_response::ifs::{spectral_report, tail_exponent, Ifs, IfsError};
use ifs_response::moments::{exact_moment, MomentError};
use ifs_response::response::{default_fd_truncation, response_check, ResponseError};
use ifs_response::rng::StreamKey;
use ifs_response::sampler::{empirical_tail, estimate_vector, sample_path, McPlan, SamplerError};
use ifs_response::witness::{
    ball_probability, build_family, consecutive_ratios, detect_regime, divergence_report, median_scale,
    DeviationBound, RegimeKind, WitnessEntry, WitnessError,
};
use serde_json::Value;

use crate::config::{DeviationChoice, RunConfig};
use crate::emit::{Cell, Table};
use crate::CliError;

/// Everything a subcommand produces.
#[derive(Debug, Default)]
pub struct Output {
    pub tables: Vec<Table>,
    /// Additional JSON documents written next to the tables.
    pub documents: Vec<(String, Value)>,
    pub notes: Vec<String>,
    /// Set when a pass/fail gate failed; the process exits with code 4.
    pub gate_failure: Option<String>,
}

impl From<IfsError> for CliError {
    fn from(e: IfsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::NonFiniteSample { .. } | SamplerError::ThreadPool(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MomentError> for CliError {
    fn from(e: MomentError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ResponseError> for CliError {
    fn from(e: ResponseError) -> Self {
        match e {
            ResponseError::Sampler(s) => s.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<WitnessError> for CliError {
    fn from(e: WitnessError) -> Self {
        match e {
            WitnessError::NotCanonical(_) | WitnessError::RegimeMismatch(_) | WitnessError::NoFeasibleM { .. } => {
                CliError::Regime(e.to_string())
            }
            WitnessError::Sampler(s) => s.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

/// Seed of an auxiliary stream, kept apart from the main replicas.
fn side_seed(seed: u64, label: u64) -> u64 {
    StreamKey::new(seed, u64::MAX - label).value()
}

pub fn analyze(cfg: &RunConfig, _threads: usize) -> Result<Output, CliError> {
    let ifs = cfg.build_ifs()?;
    let report = spectral_report(&ifs)?;
    let regime = detect_regime(&ifs).map(|r| r.kind.to_string()).unwrap_or_else(|_| "n/a".into());
    let mut table = Table::new(
        "analyze",
        &["maps", "mean_log_ratio", "lyapunov_exponent", "entropy", "lyapunov_dimension", "tail_exponent", "regime"],
    );
    table.push(vec![
        ifs.len().into(),
        ifs.mean_log_ratio().into(),
        report.lyapunov_exponent.into(),
        report.entropy.into(),
        report.lyapunov_dimension.into(),
        report.tail_exponent.into(),
        regime.into(),
    ]);
    Ok(Output { tables: vec![table], ..Default::default() })
}

pub fn moments(cfg: &RunConfig, threads: usize) -> Result<Output, CliError> {
    let section = cfg.section(&cfg.moments, "moments")?;
    let ifs = cfg.build_ifs()?;
    let mc_orders: Vec<u32> = section.mc_orders.clone();
    let mc = if mc_orders.is_empty() {
        Vec::new()
    } else {
        estimate_vector(&ifs, &cfg.plan(threads), mc_orders.len(), |p, out| {
            for (slot, &k) in out.iter_mut().zip(&mc_orders) {
                *slot = p.x_n.powi(k as i32);
            }
        })?
    };
    let mut table = Table::new("moments", &["order", "exact", "mc_mean", "mc_se", "z"]);
    for k in 1..=section.max_order.max(mc_orders.iter().copied().max().unwrap_or(0)) {
        let exact = match exact_moment(&ifs, k) {
            Ok(v) => Some(v),
            Err(MomentError::MomentDiverges { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        let est = mc_orders.iter().position(|&o| o == k).map(|i| mc[i]);
        let z = match (exact, est) {
            (Some(e), Some(m)) if m.std_error > 0.0 => Some((m.mean - e) / m.std_error),
            _ => None,
        };
        table.push(vec![
            (k as usize).into(),
            exact.map_or(Cell::Text("diverges".into()), Cell::Num),
            est.map(|m| m.mean).into(),
            est.map(|m| m.std_error).into(),
            z.into(),
        ]);
    }
    Ok(Output { tables: vec![table], ..Default::default() })
}

pub fn response(cfg: &RunConfig, threads: usize) -> Result<Output, CliError> {
    let section = cfg.section(&cfg.response, "response")?;
    let ifs = cfg.build_ifs()?;
    let phi = section.test_function(&ifs)?;
    let direction = section.direction()?;
    let scheme = section.scheme()?;
    let truncation = section.fd_truncation.unwrap_or_else(|| default_fd_truncation(section.eps)).max(cfg.truncation);
    let formula_plan = McPlan::new(truncation, cfg.replicas, cfg.seed).with_threads(threads);
    let fd_plan = formula_plan.with_seed(side_seed(cfg.seed, 1));
    let mut table = Table::new(
        "response",
        &[
            "order", "formula_mean", "formula_se", "fd_mean", "fd_se", "fd_step", "threshold", "regime_ok", "verdict",
        ],
    );
    let mut failed = Vec::new();
    let mut out = Output::default();
    for &order in &section.orders {
        let r = response_check(&ifs, &phi, order, direction, section.eps, scheme, &formula_plan, &fd_plan, section.z)?;
        let fd = r.fd_value.expect("finite difference requested");
        let agreement = r.agreement.expect("finite difference requested");
        if !agreement.pass {
            failed.push(order);
        }
        if !r.regime.satisfied {
            out.notes.push(format!("order {order}: {}", r.regime.detail));
        }
        table.push(vec![
            order.into(),
            r.formula_value.mean.into(),
            r.formula_value.std_error.into(),
            fd.mean.into(),
            fd.std_error.into(),
            r.fd_step.into(),
            agreement.threshold.into(),
            r.regime.satisfied.into(),
            if agreement.pass { "pass" } else { "fail" }.into(),
        ]);
    }
    out.notes.push(format!("φ = {}, direction {direction}, truncation {truncation}", phi.describe()));
    if !failed.is_empty() {
        out.gate_failure = Some(format!("agreement gate failed at orders {failed:?}"));
    }
    out.tables.push(table);
    Ok(out)
}

pub fn tail(cfg: &RunConfig, threads: usize) -> Result<Output, CliError> {
    let section = cfg.section(&cfg.tail, "tail")?;
    let ifs = cfg.build_ifs()?;
    let s0 = tail_exponent(&ifs).ok();
    let points = empirical_tail(&ifs, &section.thresholds, &cfg.plan(threads))?;
    let mut table = Table::new("tail", &["threshold", "exceedances", "probability", "std_error", "scaled"]);
    for p in points {
        let scaled = s0.map(|s| p.probability * p.threshold.powf(s));
        table.push(vec![
            p.threshold.into(),
            p.exceedances.into(),
            p.probability.into(),
            p.std_error.into(),
            scaled.into(),
        ]);
    }
    let mut out = Output { tables: vec![table], ..Default::default() };
    if let Some(s) = s0 {
        out.notes.push(format!("tail exponent s₀ = {s}; `scaled` is P·R^s₀"));
    }
    Ok(out)
}

pub fn nondiff(cfg: &RunConfig, threads: usize) -> Result<Output, CliError> {
    let section = cfg.section(&cfg.nondiff, "nondiff")?;
    let ifs = cfg.build_ifs()?;
    let regime = detect_regime(&ifs)?;
    let which = match (section.regime()?, regime.kind) {
        (_, RegimeKind::None) => {
            return Err(CliError::Regime(format!(
                "neither construction applies to λ = ({}, {}) (regime None)",
                ifs.ratio(0),
                ifs.ratio(1)
            )))
        }
        (Some(k), _) => k,
        (None, RegimeKind::B) => RegimeKind::B,
        (None, _) => RegimeKind::A,
    };
    if section.n_min > section.n_max {
        return Err(CliError::Validation(format!("n_min {} exceeds n_max {}", section.n_min, section.n_max)));
    }
    let ns: Vec<usize> = (section.n_min..=section.n_max).collect();
    let median_plan = McPlan::new(
        section.median_truncation.unwrap_or(cfg.truncation),
        section.median_replicas.unwrap_or(cfg.replicas),
        side_seed(cfg.seed, 2),
    )
    .with_threads(threads);
    let scale = median_scale(&ifs, &median_plan)?;
    let bound = match (which, regime.a) {
        (RegimeKind::A, Some(a)) => Some(match section.deviation {
            DeviationChoice::Cramer => DeviationBound::Cramer { delta: a.delta },
            DeviationChoice::ExactPrefix => DeviationBound::ExactPrefix { rho: a.rho },
        }),
        _ => None,
    };
    let family = build_family(&ifs, which, &ns, scale, bound)?;
    if family.entries.is_empty() && !ns.is_empty() {
        let first = bound.and_then(|b| b.first_feasible(&ifs, 4096));
        return Err(WitnessError::NoFeasibleM { n: section.n_min, first_feasible: first }.into());
    }
    let plan = cfg.plan(threads);
    let report = divergence_report(&ifs, &family, &plan)?;
    let ratios = consecutive_ratios(&report.rows);

    let mut table = Table::new(
        "nondiff",
        &[
            "n", "m_or_kappa", "p_n", "estimate", "std_error", "lower_bound", "verdict", "partial_sum", "ratio",
            "ratio_se", "ball_probability", "ball_se", "l1_norm", "l1_bound",
        ],
    );
    let ball_plan = plan.with_seed(side_seed(cfg.seed, 3));
    for (row, entry) in report.rows.iter().zip(&family.entries) {
        let (m_or_kappa, p_n) = match entry {
            WitnessEntry::A { witness, .. } => (witness.m_n, Some(witness.p_n)),
            WitnessEntry::B { witness, .. } => (witness.kappa_n as u64, None),
        };
        let ball = ball_probability(&ifs, entry, &ball_plan)?;
        let ratio = ratios.iter().find(|r| r.n == row.n);
        table.push(vec![
            row.n.into(),
            m_or_kappa.into(),
            p_n.into(),
            row.estimate.mean.into(),
            row.estimate.std_error.into(),
            row.lower_bound.into(),
            if row.pass { "pass" } else { "fail" }.into(),
            row.partial_sum.into(),
            ratio.map(|r| r.ratio).into(),
            ratio.map(|r| r.std_error).into(),
            ball.mean.into(),
            ball.std_error.into(),
            row.l1_norm.into(),
            row.l1_bound.into(),
        ]);
    }
    let mut out = Output::default();
    out.notes.push(format!(
        "regime {which}; r = {} (sensitivity [{}, {}]); c = {}",
        scale.r, scale.r_low, scale.r_high, report.constant_c
    ));
    if !family.infeasible.is_empty() {
        out.notes.push(format!("no feasible M at N = {:?}", family.infeasible));
    }
    out.notes.push(format!(
        "L¹ audit: Σ‖φ_N'‖ = {} ≤ {}: {}",
        report.l1_total, report.l1_bound_total, report.audit_pass
    ));
    let failed: Vec<usize> = report.rows.iter().filter(|r| !r.pass).map(|r| r.n).collect();
    if !failed.is_empty() || !report.audit_pass {
        out.gate_failure = Some(format!("lower bound failed at N = {failed:?}, audit pass = {}", report.audit_pass));
    }
    out.documents.push((
        "witness_family".into(),
        serde_json::to_value(&family).map_err(|e| CliError::Runtime(e.to_string()))?,
    ));
    out.documents.push((
        "divergence_report".into(),
        serde_json::to_value(&report).map_err(|e| CliError::Runtime(e.to_string()))?,
    ));
    out.tables.push(table);
    Ok(out)
}

pub fn sample(cfg: &RunConfig, _threads: usize) -> Result<Output, CliError> {
    let section = cfg.section(&cfg.sample, "sample")?;
    let ifs: Ifs = cfg.build_ifs()?;
    let mut table = Table::new("sample", &["replica", "x_n", "lambda_n"]);
    for r in 0..section.count {
        let path = sample_path(&ifs, cfg.truncation, cfg.seed, r);
        table.push(vec![r.into(), path.x_n.into(), path.lambda_n().into()]);
    }
    Ok(Output { tables: vec![table], ..Default::default() })
}
