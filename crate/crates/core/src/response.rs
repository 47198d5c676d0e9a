//! Response of `ε ↦ ∫ φ dμ_ε`: the Faà di Bruno formula evaluated on the
//! formal-derivative series, a finite-difference oracle with common random
//! numbers, and the gate that compares the two.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ifs::{Ifs, ParamDirection};
use crate::jet::{Jet, MAX_JET_ORDER};
use crate::moments::{exact_moment, MomentError};
use crate::sampler::{
    estimate_vector, formal_derivatives_into, perturb, series_value, McEstimate, McPlan, SamplerError,
    DEFAULT_TRUNCATION, MAX_FORMAL_ORDER,
};
use crate::smooth::{bump_jet, smooth_step_jet};
use crate::witness::SmoothPlateauBump;

/// Highest response order handled.
pub const MAX_RESPONSE_ORDER: usize = 8;

/// Default `z` of the agreement gate.
pub const DEFAULT_GATE_Z: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResponseError {
    #[error("response order must be in 1..={MAX_RESPONSE_ORDER}, got {0}")]
    OrderTooLarge(usize),
    #[error("test function supports derivatives up to order {supported}, {requested} requested")]
    InsufficientSmoothness { supported: usize, requested: usize },
    #[error("invalid test function: {0}")]
    InvalidTestFunction(String),
    #[error("finite differences need at least one step")]
    NoSteps,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Moment(#[from] MomentError),
}

/// A smooth observable whose derivatives are available in closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// 1 on `|x − center| ≤ inner_radius`, 0 beyond `outer_radius`.
    SmoothBump { center: f64, inner_radius: f64, outer_radius: f64 },
    /// `x^t`, meaningful on `x > 0` (canonical systems live on `x ≥ 1`).
    PowerMoment { t: f64 },
    /// `σ(x)^r` with `σ(x) = x` for `x ≤ knee` saturating smoothly to the
    /// constant `2·knee` on `[knee, 2·knee]`; every derivative is bounded.
    CappedPolynomial { r: u32, knee: f64 },
    /// `φ_N(x) = ∫_{−∞}^x φ_N'`, with `φ_N'` a union of smooth plateaus.
    Witness(Arc<SmoothPlateauBump>),
}

impl TestFunction {
    pub fn smooth_bump(center: f64, inner_radius: f64, outer_radius: f64) -> Result<Self, ResponseError> {
        if !(inner_radius > 0.0 && outer_radius > inner_radius && outer_radius.is_finite() && center.is_finite()) {
            return Err(ResponseError::InvalidTestFunction(format!(
                "bump radii must satisfy 0 < inner < outer < ∞, got {inner_radius}, {outer_radius}"
            )));
        }
        Ok(TestFunction::SmoothBump { center, inner_radius, outer_radius })
    }

    pub fn power_moment(t: f64) -> Result<Self, ResponseError> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(ResponseError::InvalidTestFunction(format!("power must be positive, got {t}")));
        }
        Ok(TestFunction::PowerMoment { t })
    }

    pub fn capped_polynomial(r: u32, knee: f64) -> Result<Self, ResponseError> {
        if r == 0 || !(knee > 0.0 && knee.is_finite()) {
            return Err(ResponseError::InvalidTestFunction(format!(
                "capped polynomial needs r ≥ 1 and a positive knee, got r = {r}, knee = {knee}"
            )));
        }
        Ok(TestFunction::CappedPolynomial { r, knee })
    }

    /// Capped polynomial with the knee at ten times the stationary mean.
    pub fn capped_polynomial_for(ifs: &Ifs, r: u32) -> Result<Self, ResponseError> {
        let mean = exact_moment(ifs, 1)?;
        Self::capped_polynomial(r, 10.0 * mean.abs().max(f64::MIN_POSITIVE))
    }

    pub fn max_derivative_order(&self) -> usize {
        MAX_JET_ORDER
    }

    /// `φ, φ', …, φ^{(order)}` at `x` as a jet.
    pub fn jet(&self, x: f64, order: usize) -> Jet {
        match self {
            TestFunction::SmoothBump { center, inner_radius, outer_radius } => {
                bump_jet(x, *center, *inner_radius, *outer_radius, order)
            }
            TestFunction::PowerMoment { t } => Jet::variable(x, order).powf(*t),
            TestFunction::CappedPolynomial { r, knee } => {
                let width = *knee;
                let var = Jet::variable(x, order);
                let sigma = if x <= *knee {
                    var
                } else if x >= knee + width {
                    Jet::constant(knee + width, order)
                } else {
                    let u = var.add_scalar(-knee).scale(1.0 / width);
                    let s = smooth_step_jet(&u);
                    let one = Jet::constant(1.0, order);
                    var * (one - s) + s.scale(knee + width)
                };
                sigma.powi(*r)
            }
            TestFunction::Witness(bump) => {
                let mut coefficients = vec![bump.value(x)];
                if order > 0 {
                    let d = bump.derivative_jet(x, order - 1);
                    for (k, c) in d.coefficients().iter().enumerate() {
                        coefficients.push(c / (k + 1) as f64);
                    }
                }
                Jet::from_coefficients(&coefficients)
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.jet(x, 0).value()
    }

    pub fn derivatives(&self, x: f64, order: usize) -> Vec<f64> {
        self.jet(x, order).derivatives()
    }

    /// Whether `φ'` has compact support.
    fn has_compact_derivative(&self) -> bool {
        matches!(self, TestFunction::SmoothBump { .. } | TestFunction::Witness(_))
    }

    pub fn describe(&self) -> String {
        match self {
            TestFunction::SmoothBump { center, inner_radius, outer_radius } => {
                format!("bump(c={center}, inner={inner_radius}, outer={outer_radius})")
            }
            TestFunction::PowerMoment { t } => format!("x^{t}"),
            TestFunction::CappedPolynomial { r, knee } => format!("capped x^{r} (knee {knee})"),
            TestFunction::Witness(b) => format!("witness ({} plateaus)", b.intervals.len()),
        }
    }
}

/// One `(k₁,…,k_l)` with `Σ j k_j = l` and its coefficient
/// `l! / Π_j (k_j! (j!)^{k_j})`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaaDiBrunoTerm {
    pub multiplicities: Vec<u32>,
    pub coefficient: u64,
    pub total_blocks: u32,
}

fn factorial(n: u32) -> u64 {
    (1..=n as u64).product()
}

/// All terms of the order-`l` formula, lexicographic in the multiplicities.
pub fn faa_di_bruno_terms(l: usize) -> Result<Vec<FaaDiBrunoTerm>, ResponseError> {
    if l == 0 || l > MAX_RESPONSE_ORDER {
        return Err(ResponseError::OrderTooLarge(l));
    }
    fn fill(l: usize, j: usize, remaining: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if j > l {
            if remaining == 0 {
                out.push(current.clone());
            }
            return;
        }
        for k in 0..=remaining / j {
            current.push(k as u32);
            fill(l, j + 1, remaining - k * j, current, out);
            current.pop();
        }
    }
    let mut all = Vec::new();
    fill(l, 1, l, &mut Vec::with_capacity(l), &mut all);
    all.sort();
    Ok(all
        .into_iter()
        .map(|multiplicities| {
            let mut denominator = 1u64;
            for (idx, &k) in multiplicities.iter().enumerate() {
                denominator *= factorial(k) * factorial(idx as u32 + 1).pow(k);
            }
            FaaDiBrunoTerm {
                coefficient: factorial(l as u32) / denominator,
                total_blocks: multiplicities.iter().sum(),
                multiplicities,
            }
        })
        .collect())
}

/// `Σ_terms L · φ^{(k)} · Π_j (X^{(j)})^{k_j}` for one path.
///
/// `phi_derivatives[k]` holds `φ^{(k)}(X)` and `formal[j − 1]` holds `X^{(j)}`.
pub fn faa_di_bruno_sum(terms: &[FaaDiBrunoTerm], phi_derivatives: &[f64], formal: &[f64]) -> f64 {
    terms
        .iter()
        .map(|term| {
            let mut product = term.coefficient as f64 * phi_derivatives[term.total_blocks as usize];
            for (j, &k) in term.multiplicities.iter().enumerate() {
                if k > 0 {
                    product *= formal[j].powi(k as i32);
                }
            }
            product
        })
        .sum()
}

/// Which set of hypotheses applies and whether it holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeCheck {
    pub satisfied: bool,
    pub detail: String,
}

/// Checks the hypotheses under which the formula is known to be the
/// derivative. Violations are reported, never fatal.
pub fn regime_check(ifs: &Ifs, phi: &TestFunction, order: usize) -> RegimeCheck {
    let contracting = ifs.mean_log_ratio() < 0.0;
    match phi {
        _ if phi.has_compact_derivative() => RegimeCheck {
            satisfied: contracting,
            detail: format!("compactly supported φ' needs contraction on average: Σ p log λ = {:.6}", ifs.mean_log_ratio()),
        },
        TestFunction::PowerMoment { t } => {
            let growth = ifs.moment_growth(*t);
            let canonical = ifs.has_unit_translations();
            RegimeCheck {
                satisfied: growth < 1.0 && canonical,
                detail: format!("x^t needs Σ p λ^t < 1 (got {growth:.6}) and unit translations ({canonical})"),
            }
        }
        TestFunction::CappedPolynomial { r, .. } => {
            let growth = ifs.moment_growth(*r as f64);
            RegimeCheck {
                satisfied: growth < 1.0 && order <= *r as usize,
                detail: format!("bounded r-th derivative needs Σ p λ^r < 1 (got {growth:.6}) and order ≤ r = {r} (order {order})"),
            }
        }
        _ => unreachable!("compact-support kinds handled above"),
    }
}

/// Formula-side estimate for one order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormulaEstimate {
    pub order: usize,
    pub estimate: McEstimate,
    pub regime: RegimeCheck,
}

/// Monte Carlo of the Faà di Bruno integrand for every order in
/// `1..=max_order`, all from the same paths.
pub fn response_formula_orders(
    ifs: &Ifs,
    phi: &TestFunction,
    max_order: usize,
    direction: ParamDirection,
    plan: &McPlan,
) -> Result<Vec<FormulaEstimate>, ResponseError> {
    if max_order == 0 || max_order > MAX_RESPONSE_ORDER.min(MAX_FORMAL_ORDER) {
        return Err(ResponseError::OrderTooLarge(max_order));
    }
    if phi.max_derivative_order() < max_order {
        return Err(ResponseError::InsufficientSmoothness { supported: phi.max_derivative_order(), requested: max_order });
    }
    let terms: Vec<Vec<FaaDiBrunoTerm>> =
        (1..=max_order).map(faa_di_bruno_terms).collect::<Result<_, _>>()?;
    // surface direction errors before spawning work
    formal_derivatives_into(&Default::default(), ifs, direction, &mut vec![0.0; max_order])?;
    let estimates = estimate_vector(ifs, plan, max_order, |path, out| {
        let mut formal = [0.0; MAX_FORMAL_ORDER];
        formal_derivatives_into(path, ifs, direction, &mut formal[..max_order])
            .expect("direction and order validated");
        let phi_derivatives = phi.derivatives(path.x_n, max_order);
        for (l, slot) in out.iter_mut().enumerate() {
            *slot = faa_di_bruno_sum(&terms[l], &phi_derivatives, &formal);
        }
    })?;
    Ok(estimates
        .into_iter()
        .enumerate()
        .map(|(i, estimate)| FormulaEstimate { order: i + 1, estimate, regime: regime_check(ifs, phi, i + 1) })
        .collect())
}

/// Formula-side estimate of `h^{(l)}(0)`.
pub fn response_formula(
    ifs: &Ifs,
    phi: &TestFunction,
    order: usize,
    direction: ParamDirection,
    plan: &McPlan,
) -> Result<FormulaEstimate, ResponseError> {
    let mut all = response_formula_orders(ifs, phi, order, direction, plan)?;
    Ok(all.pop().expect("order ≥ 1"))
}

/// Central difference schemes by formal accuracy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FdScheme {
    /// Second-order accurate.
    #[serde(rename = "central-2point")]
    Central2,
    /// Fourth-order accurate.
    #[serde(rename = "central-4point")]
    Central4,
}

impl FdScheme {
    pub fn accuracy(self) -> usize {
        match self {
            FdScheme::Central2 => 2,
            FdScheme::Central4 => 4,
        }
    }

    /// Offsets `−h..=h` used for derivative order `l`.
    pub fn half_width(self, l: usize) -> usize {
        l.div_ceil(2) + self.accuracy() / 2 - 1
    }
}

impl std::str::FromStr for FdScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "central-2point" => Ok(FdScheme::Central2),
            "central-4point" => Ok(FdScheme::Central4),
            other => Err(format!("unknown scheme `{other}` (central-2point | central-4point)")),
        }
    }
}

/// Weights of the `order`-th derivative at 0 on the given nodes.
pub fn fornberg_weights(nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0];
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i];
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// Finite-difference estimates at several steps with their Richardson
/// bias model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteDifference {
    pub order: usize,
    pub scheme: FdScheme,
    /// `(|ε|, estimate)` in the order given; the first is the primary one.
    pub per_step: Vec<(f64, McEstimate)>,
    /// `C` in `D(ε) ≈ D(0) + C ε^p`, fitted over the steps when ≥ 3 exist.
    pub bias_constant: Option<f64>,
}

impl FiniteDifference {
    pub fn primary(&self) -> &McEstimate {
        &self.per_step[0].1
    }

    pub fn primary_step(&self) -> f64 {
        self.per_step[0].0
    }

    /// `|C| ε^p` at the primary step, zero without a fit.
    pub fn bias_allowance(&self) -> f64 {
        self.bias_constant
            .map(|c| c.abs() * self.primary_step().powi(self.scheme.accuracy() as i32))
            .unwrap_or(0.0)
    }
}

/// Truncation tied to the step: `max(200, ⌈80 log₁₀(1/ε)⌉)`.
pub fn default_fd_truncation(eps: f64) -> usize {
    let scaled = (80.0 * (1.0 / eps.abs()).log10()).ceil();
    DEFAULT_TRUNCATION.max(if scaled.is_finite() && scaled > 0.0 { scaled as usize } else { 0 })
}

/// Least-squares fit of `D(ε) = D₀ + C ε^p`; returns `C`.
fn richardson_constant(points: &[(f64, f64)], p: usize) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|(e, _)| e.powi(p as i32)).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|(_, d)| d).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(points).map(|(x, (_, d))| (x - mx) * (d - my)).sum();
    Some(sxy / sxx)
}

/// `l`-th central difference of `ε ↦ E[φ(X_n(ε))]` at each step, with the
/// same paths for every stencil point and step.
pub fn response_finite_difference(
    ifs: &Ifs,
    phi: &TestFunction,
    order: usize,
    direction: ParamDirection,
    steps: &[f64],
    scheme: FdScheme,
    plan: &McPlan,
) -> Result<FiniteDifference, ResponseError> {
    if order == 0 || order > MAX_RESPONSE_ORDER {
        return Err(ResponseError::OrderTooLarge(order));
    }
    if steps.is_empty() {
        return Err(ResponseError::NoSteps);
    }
    let half = scheme.half_width(order) as i64;
    let offsets: Vec<i64> = (-half..=half).collect();
    let nodes: Vec<f64> = offsets.iter().map(|&o| o as f64).collect();
    let weights = fornberg_weights(&nodes, order);

    // per step: (perturbed system, weight / |ε|^l) for each nonzero weight
    let mut stencils: Vec<Vec<(Ifs, f64)>> = Vec::with_capacity(steps.len());
    for &eps in steps {
        if eps == 0.0 || !eps.is_finite() {
            return Err(SamplerError::InadmissiblePerturbation {
                direction,
                eps,
                reason: "finite differences need a nonzero finite step".into(),
            }
            .into());
        }
        let h = eps.abs();
        let scale = h.powi(order as i32);
        let mut points = Vec::new();
        for (&o, &w) in offsets.iter().zip(&weights) {
            if w == 0.0 {
                continue;
            }
            let shift = o as f64 * h;
            let moved = if o == 0 { ifs.clone() } else { perturb(ifs, direction, shift)? };
            let mean_log = moved.mean_log_ratio();
            if !(mean_log < 0.0) {
                return Err(SamplerError::InadmissiblePerturbation {
                    direction,
                    eps: shift,
                    reason: format!("perturbed system does not contract on average (Σ p log λ = {mean_log})"),
                }
                .into());
            }
            points.push((moved, w / scale));
        }
        stencils.push(points);
    }
    let estimates = estimate_vector(ifs, plan, steps.len(), |path, out| {
        for (slot, points) in out.iter_mut().zip(&stencils) {
            let mut acc = 0.0;
            for (system, w) in points {
                acc += w * phi.value(series_value(system, &path.symbols));
            }
            *slot = acc;
        }
    })?;
    let per_step: Vec<(f64, McEstimate)> = steps.iter().map(|e| e.abs()).zip(estimates).collect();
    let fit_points: Vec<(f64, f64)> = per_step.iter().map(|(e, est)| (*e, est.mean)).collect();
    Ok(FiniteDifference {
        order,
        scheme,
        bias_constant: richardson_constant(&fit_points, scheme.accuracy()),
        per_step,
    })
}

/// Parameters of the agreement gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub z: f64,
    /// Deterministic finite-difference bias budget added to the threshold.
    pub bias_allowance: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self { z: DEFAULT_GATE_Z, bias_allowance: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub difference: f64,
    pub combined_se: f64,
    pub threshold: f64,
    pub z: f64,
    pub bias_allowance: f64,
    pub pass: bool,
}

/// Passes iff `|a − b| ≤ z √(se_a² + se_b²) + bias_allowance`.
pub fn compare_response(formula: &McEstimate, fd: &McEstimate, policy: &TolerancePolicy) -> AgreementReport {
    let difference = (formula.mean - fd.mean).abs();
    let combined_se = formula.std_error.hypot(fd.std_error);
    let threshold = policy.z * combined_se + policy.bias_allowance;
    AgreementReport {
        difference,
        combined_se,
        threshold,
        z: policy.z,
        bias_allowance: policy.bias_allowance,
        pass: difference <= threshold,
    }
}

/// Formula, finite difference and their comparison for one order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseEstimate {
    pub order: usize,
    pub formula_value: McEstimate,
    pub fd_value: Option<McEstimate>,
    pub fd_step: f64,
    pub agreement: Option<AgreementReport>,
    pub regime: RegimeCheck,
}

/// Runs the formula and the finite-difference oracle on independent
/// seeds and gates their agreement. The finite difference uses the steps
/// `ε, 2ε, 4ε` so its bias can be fitted.
#[allow(clippy::too_many_arguments)]
pub fn response_check(
    ifs: &Ifs,
    phi: &TestFunction,
    order: usize,
    direction: ParamDirection,
    eps: f64,
    scheme: FdScheme,
    formula_plan: &McPlan,
    fd_plan: &McPlan,
    z: f64,
) -> Result<ResponseEstimate, ResponseError> {
    let formula = response_formula(ifs, phi, order, direction, formula_plan)?;
    let fd = response_finite_difference(ifs, phi, order, direction, &[eps, 2.0 * eps, 4.0 * eps], scheme, fd_plan)?;
    let policy = TolerancePolicy { z, bias_allowance: fd.bias_allowance() };
    let agreement = compare_response(&formula.estimate, fd.primary(), &policy);
    Ok(ResponseEstimate {
        order,
        formula_value: formula.estimate,
        fd_value: Some(*fd.primary()),
        fd_step: fd.primary_step(),
        agreement: Some(agreement),
        regime: formula.regime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_orders() {
        let t1 = faa_di_bruno_terms(1).unwrap();
        assert_eq!(t1, vec![FaaDiBrunoTerm { multiplicities: vec![1], coefficient: 1, total_blocks: 1 }]);
        let t3 = faa_di_bruno_terms(3).unwrap();
        let pairs: Vec<(Vec<u32>, u64)> = t3.iter().map(|t| (t.multiplicities.clone(), t.coefficient)).collect();
        assert_eq!(pairs, vec![(vec![0, 0, 1], 1), (vec![1, 1, 0], 3), (vec![3, 0, 0], 1)]);
        assert!(matches!(faa_di_bruno_terms(9), Err(ResponseError::OrderTooLarge(9))));
        assert!(faa_di_bruno_terms(0).is_err());
    }

    #[test]
    fn fornberg_reproduces_classic_stencils() {
        let w = fornberg_weights(&[-1.0, 0.0, 1.0], 1);
        assert_eq!(w, vec![-0.5, 0.0, 0.5]);
        let w = fornberg_weights(&[-1.0, 0.0, 1.0], 2);
        assert_eq!(w, vec![1.0, -2.0, 1.0]);
        let w = fornberg_weights(&[-2.0, -1.0, 0.0, 1.0, 2.0], 1);
        let expected = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = fornberg_weights(&[-2.0, -1.0, 0.0, 1.0, 2.0], 3);
        let expected = [-0.5, 1.0, 0.0, -1.0, 0.5];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn stencil_widths() {
        assert_eq!(FdScheme::Central2.half_width(1), 1);
        assert_eq!(FdScheme::Central2.half_width(2), 1);
        assert_eq!(FdScheme::Central2.half_width(3), 2);
        assert_eq!(FdScheme::Central4.half_width(1), 2);
        assert_eq!(FdScheme::Central4.half_width(2), 2);
    }

    #[test]
    fn gate_examples() {
        let est = |mean: f64, se: f64| McEstimate { mean, std_error: se, replicas: 100, truncation_n: 10, master_seed: 0 };
        let policy = TolerancePolicy::default();
        assert!(compare_response(&est(22.22, 0.02), &est(22.22, 0.02), &policy).pass);
        assert!(compare_response(&est(22.22, 0.02), &est(22.25, 0.02), &policy).pass);
        assert!(!compare_response(&est(22.22, 0.01), &est(30.0, 0.01), &policy).pass);
    }

    #[test]
    fn default_truncation_grows_with_precision() {
        assert_eq!(default_fd_truncation(1e-2), 200);
        assert_eq!(default_fd_truncation(1e-4), 320);
    }

    #[test]
    fn capped_polynomial_is_flat_far_out() {
        let phi = TestFunction::capped_polynomial(2, 5.0).unwrap();
        assert_eq!(phi.value(3.0), 9.0);
        assert_eq!(phi.value(100.0), 100.0);
        let d = phi.derivatives(12.0, 3);
        assert!(d[1..].iter().all(|&v| v == 0.0));
        let d = phi.derivatives(7.0, 2);
        assert!(d[1] > 0.0);
    }
}
