//! Witness families of smooth bounded observables without linear response.
//!
//! Everything here works on the canonical system `{λ₁x+1, λ₂x+1; ½, ½}`
//! with `0 < λ₁ < 1 < λ₂`. Prefix values follow the construction's own
//! indexing: the atom of a word `w` of length `N` is
//! `Σ_{m=0}^{N} Λ_m = X_N(w) + Λ_N(w)`, i.e. `f_w(1)`, the smallest value
//! the full series can take after `w`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

use crate::ifs::{cramer_rate, Ifs, IfsError, ParamDirection};
use crate::jet::Jet;
use crate::rng::{StreamKey, SymbolSampler};
use crate::sampler::{
    binomial, estimate_expectation, formal_derivatives_into, replica_key, run_chunks, sorted_sample,
    McEstimate, McPlan, RunningStats, SamplerError, TruncatedPath,
};
use crate::smooth::{smooth_step, smooth_step_integral, smooth_step_jet};

/// Longest prefix enumerated exhaustively.
pub const ENUMERATION_CAP: usize = 24;

/// Atoms closer than this are merged.
pub const ATOM_TOLERANCE: f64 = 1e-12;

/// Smallest number of tail replicas drawn in any stratum.
pub const MIN_STRATUM_REPLICAS: u64 = 16;

/// One-sided level of the Clopper–Pearson bounds used above the cap.
pub const CONFIDENCE_ALPHA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WitnessError {
    #[error("witness constructions need the canonical system λ₁x+1, λ₂x+1 with p = (½,½) and λ₁ < 1 < λ₂: {0}")]
    NotCanonical(String),
    #[error("regime {0} does not hold for this system")]
    RegimeMismatch(&'static str),
    #[error("exact enumeration is capped at N = {cap}, got N = {n}")]
    EnumerationTooLarge { n: usize, cap: usize },
    #[error("no integer M satisfies both defining inequalities at N = {n}{}", hint_text(*.first_feasible))]
    NoFeasibleM { n: usize, first_feasible: Option<usize> },
    #[error("invalid plateau specification: {0}")]
    InvalidPlateau(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Ifs(#[from] IfsError),
}

fn hint_text(first: Option<usize>) -> String {
    match first {
        Some(n) => format!(" (the smallest feasible N is {n})"),
        None => String::new(),
    }
}

fn canonical_ratios(ifs: &Ifs) -> Result<(f64, f64), WitnessError> {
    if !ifs.is_two_map_uniform() || !ifs.has_unit_translations() {
        return Err(WitnessError::NotCanonical(format!("{} maps, probs {:?}", ifs.len(), ifs.probs())));
    }
    let (l1, l2) = (ifs.ratio(0), ifs.ratio(1));
    if !(l1 > 0.0 && l1 < 1.0 && l2 > 1.0) {
        return Err(WitnessError::NotCanonical(format!("ratios ({l1}, {l2})")));
    }
    Ok((l1, l2))
}

/// `c = (λ₂(1−λ₁)/(λ₂−1) + 1)^{−1}`, the constant with `X^{(1)} ≥ cX`.
pub fn derivative_lower_constant(lambda1: f64, lambda2: f64) -> f64 {
    1.0 / (lambda2 * (1.0 - lambda1) / (lambda2 - 1.0) + 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeKind {
    A,
    B,
    Both,
    None,
}

impl std::fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RegimeKind::A => "A",
            RegimeKind::B => "B",
            RegimeKind::Both => "Both",
            RegimeKind::None => "None",
        };
        f.write_str(s)
    }
}

/// `λ₁λ₂ < 1/4`: `ρ ∈ (√(λ₁λ₂), 1/2)` and the Cramér rate `δ` of the event
/// `Λ_N > ρ^N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeAParams {
    pub theta: f64,
    pub rho: f64,
    pub delta: f64,
}

/// `log₂λ₂ > 1 + log_{1/λ₁}λ₂`: `κ` with `λ₂λ₁^κ < 1` and `λ₂ > 2^{1+κ}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeBParams {
    pub kappa: f64,
    pub kappa_lo: f64,
    pub kappa_hi: f64,
    pub rho_b: f64,
}

impl RegimeBParams {
    /// `κ(N)`: the least integer strictly larger than `κN`.
    pub fn kappa_n(&self, n: usize) -> usize {
        (self.kappa * n as f64).floor() as usize + 1
    }

    /// `2^{−1−κ} λ₂`, the growth factor of the lower bounds.
    pub fn growth(&self, lambda2: f64) -> f64 {
        2f64.powf(-1.0 - self.kappa) * lambda2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub kind: RegimeKind,
    pub a: Option<RegimeAParams>,
    pub b: Option<RegimeBParams>,
}

/// Which non-differentiability construction applies, with its parameters.
pub fn detect_regime(ifs: &Ifs) -> Result<Regime, WitnessError> {
    let (l1, l2) = canonical_ratios(ifs)?;
    let a = if l1 * l2 < 0.25 {
        let theta = (l1 * l2).sqrt();
        let rho = (theta * 0.5).sqrt();
        let delta = cramer_rate(ifs, rho.ln())?;
        Some(RegimeAParams { theta, rho, delta })
    } else {
        None
    };
    let kappa_lo = l2.ln() / (-l1.ln());
    let kappa_hi = l2.log2() - 1.0;
    let b = (kappa_hi > kappa_lo && l1 * l2 < 1.0).then(|| {
        let kappa = 0.5 * (kappa_lo + kappa_hi);
        RegimeBParams { kappa, kappa_lo, kappa_hi, rho_b: l2 * l1.powf(kappa) }
    });
    let kind = match (a.is_some(), b.is_some()) {
        (true, true) => RegimeKind::Both,
        (true, false) => RegimeKind::A,
        (false, true) => RegimeKind::B,
        (false, false) => RegimeKind::None,
    };
    Ok(Regime { kind, a, b })
}

/// A distinct value of the prefix atom and the words producing it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub words: u64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixAtoms {
    pub n: usize,
    pub threshold: f64,
    /// Ascending, deduplicated, all `≥ threshold`.
    pub atoms: Vec<Atom>,
    /// Number of words whose atom is `≥ threshold`; `p_N = tail_words / 2^N`.
    pub tail_words: u64,
    pub p_n: f64,
}

/// Atom values of all `2^N` words, unsorted.
fn all_atom_values(l1: f64, l2: f64, n: usize) -> Vec<f64> {
    // breadth-first over (X_k, Λ_k); memory 2^N pairs at the last level
    let mut level = vec![(0.0f64, 1.0f64)];
    for _ in 0..n {
        let mut next = Vec::with_capacity(level.len() * 2);
        for &(x, lam) in &level {
            next.push((x + lam, lam * l1));
            next.push((x + lam, lam * l2));
        }
        level = next;
    }
    level.into_iter().map(|(x, lam)| x + lam).collect()
}

/// Sorts and merges values closer than [`ATOM_TOLERANCE`] (chained).
fn dedup_atoms(mut values: Vec<f64>, n: usize) -> Vec<Atom> {
    values.sort_by(f64::total_cmp);
    let total = 2f64.powi(n as i32);
    let mut atoms: Vec<Atom> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for v in values {
        match atoms.last_mut() {
            Some(a) if v - last <= ATOM_TOLERANCE => a.words += 1,
            _ => atoms.push(Atom { value: v, words: 1, probability: 0.0 }),
        }
        last = v;
    }
    for a in &mut atoms {
        a.probability = a.words as f64 / total;
    }
    atoms
}

/// Exact law of the length-`N` prefix atom, restricted to values `≥ threshold`.
///
/// Works on any two-map uniform system with unit translations, including
/// degenerate ones.
pub fn enumerate_prefix_atoms(ifs: &Ifs, n: usize, threshold: f64) -> Result<PrefixAtoms, WitnessError> {
    if n > ENUMERATION_CAP {
        return Err(WitnessError::EnumerationTooLarge { n, cap: ENUMERATION_CAP });
    }
    if !ifs.is_two_map_uniform() || !ifs.has_unit_translations() {
        return Err(WitnessError::NotCanonical(format!("{} maps, probs {:?}", ifs.len(), ifs.probs())));
    }
    let values = all_atom_values(ifs.ratio(0), ifs.ratio(1), n);
    let kept: Vec<f64> = values.into_iter().filter(|&v| v >= threshold - ATOM_TOLERANCE).collect();
    let atoms = dedup_atoms(kept, n);
    let tail_words: u64 = atoms.iter().map(|a| a.words).sum();
    Ok(PrefixAtoms { n, threshold, atoms, tail_words, p_n: tail_words as f64 / 2f64.powi(n as i32) })
}

/// Upper bound used for `P{Λ_N > ρ^N}` in the second defining inequality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeviationBound {
    /// `e^{−δN}` with the Cramér rate `δ`; only valid for large `N`.
    Cramer { delta: f64 },
    /// The exact binomial probability `P{Λ_N > ρ^N}`.
    ExactPrefix { rho: f64 },
}

impl DeviationBound {
    pub fn value(&self, ifs: &Ifs, n: usize) -> f64 {
        match *self {
            DeviationBound::Cramer { delta } => (-delta * n as f64).exp(),
            DeviationBound::ExactPrefix { rho } => exceedance_probability(ifs.ratio(0), ifs.ratio(1), rho, n),
        }
    }

    /// Smallest `N` at which `M = 1` (always `P = 1`) meets `P ≥ 2·bound`.
    pub fn first_feasible(&self, ifs: &Ifs, search_limit: usize) -> Option<usize> {
        match *self {
            DeviationBound::Cramer { delta } if delta > 0.0 => {
                Some(((2f64).ln() / delta).ceil().max(1.0) as usize)
            }
            DeviationBound::Cramer { .. } => None,
            DeviationBound::ExactPrefix { .. } => (1..=search_limit).find(|&n| 2.0 * self.value(ifs, n) <= 1.0),
        }
    }
}

/// `P{Λ_N > ρ^N}` for the canonical two-map system, summed over the
/// number of first-map symbols.
pub fn exceedance_probability(lambda1: f64, lambda2: f64, rho: f64, n: usize) -> f64 {
    let (a, b, r) = (lambda1.ln(), lambda2.ln(), rho.ln());
    let scale = 0.5f64.powi(n as i32);
    (0..=n)
        .filter(|&k| k as f64 * a + (n - k) as f64 * b > n as f64 * r)
        .map(|k| binomial(n as u64, k as u64) * scale)
        .sum()
}

/// Outcome of the search for `M(N)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MChoice {
    pub n: usize,
    pub m: u64,
    /// `P{X_N ≥ M}`; a lower confidence bound when not exact.
    pub p_n: f64,
    /// The bound on `P{Λ_N > ρ^N}` used in the second inequality.
    pub deviation: f64,
    pub exact: bool,
}

fn feasible(m: u64, p: f64, n: usize, deviation: f64) -> bool {
    m as f64 * p >= (n as f64).powf(-0.5) && p >= 2.0 * deviation
}

/// Largest integer `M ≥ 1` with `M·P{X_N ≥ M} ≥ N^{−1/2}` and
/// `P{X_N ≥ M} ≥ 2·bound(N)`, from exact atoms. Candidates are the floors
/// of the atoms: between consecutive atoms the tail probability is
/// constant and `M·P` grows with `M`.
pub fn largest_feasible_m(atoms: &[Atom], n: usize, deviation: f64) -> Option<(u64, f64)> {
    let mut tail: Vec<f64> = vec![0.0; atoms.len() + 1];
    for i in (0..atoms.len()).rev() {
        tail[i] = tail[i + 1] + atoms[i].probability;
    }
    let mut best: Option<(u64, f64)> = None;
    for (i, a) in atoms.iter().enumerate() {
        let floor = (a.value + ATOM_TOLERANCE).floor();
        if floor < 1.0 {
            continue;
        }
        // integers in (a_{i−1}, a_i] share P = tail[i]
        if i > 0 && floor <= atoms[i - 1].value + ATOM_TOLERANCE {
            continue;
        }
        let m = floor as u64;
        if feasible(m, tail[i], n, deviation) && best.is_none_or(|(bm, _)| m > bm) {
            best = Some((m, tail[i]));
        }
    }
    best
}

/// One-sided Clopper–Pearson lower bound for a binomial proportion.
pub fn clopper_pearson_lower(successes: u64, trials: u64, alpha: f64) -> f64 {
    if successes == 0 {
        return 0.0;
    }
    let beta = Beta::new(successes as f64, (trials - successes + 1) as f64).expect("positive shape parameters");
    beta.inverse_cdf(alpha)
}

/// `M(N)`: exact for `N ≤ 24`, otherwise from `mc` with Clopper–Pearson
/// lower bounds on the tail probabilities.
pub fn find_m(ifs: &Ifs, n: usize, bound: DeviationBound, mc: Option<&McPlan>) -> Result<MChoice, WitnessError> {
    canonical_ratios(ifs)?;
    let deviation = bound.value(ifs, n);
    let infeasible = || WitnessError::NoFeasibleM { n, first_feasible: bound.first_feasible(ifs, 4096) };
    if n <= ENUMERATION_CAP {
        let atoms = enumerate_prefix_atoms(ifs, n, 0.0)?.atoms;
        let (m, p_n) = largest_feasible_m(&atoms, n, deviation).ok_or_else(infeasible)?;
        return Ok(MChoice { n, m, p_n, deviation, exact: true });
    }
    let plan = mc.ok_or(WitnessError::EnumerationTooLarge { n, cap: ENUMERATION_CAP })?;
    let sampler = SymbolSampler::new(ifs.probs());
    let (l1, l2) = (ifs.ratio(0), ifs.ratio(1));
    let parts = run_chunks(plan.replicas, plan.threads, |range| {
        let mut symbols = vec![0u8; n];
        range
            .map(|r| {
                sampler.fill(replica_key(plan.master_seed, r), 0, &mut symbols);
                let (mut x, mut lam) = (0.0, 1.0);
                for &s in &symbols {
                    x += lam;
                    lam *= if s == 0 { l1 } else { l2 };
                }
                x + lam
            })
            .collect::<Vec<f64>>()
    })?;
    let mut sample: Vec<f64> = parts.into_iter().flatten().collect();
    sample.sort_by(f64::total_cmp);
    let total = sample.len() as u64;
    let mut best: Option<(u64, f64)> = None;
    let mut prev = f64::NEG_INFINITY;
    for (i, &v) in sample.iter().enumerate() {
        let floor = (v + ATOM_TOLERANCE).floor();
        if floor >= 1.0 && floor > prev + ATOM_TOLERANCE {
            let lower = clopper_pearson_lower(total - i as u64, total, CONFIDENCE_ALPHA);
            let m = floor as u64;
            if feasible(m, lower, n, deviation) && best.is_none_or(|(bm, _)| m > bm) {
                best = Some((m, lower));
            }
        }
        prev = v;
    }
    let (m, p_n) = best.ok_or_else(infeasible)?;
    Ok(MChoice { n, m, p_n, deviation, exact: false })
}

/// One plateau of `φ_N'`: equal to 1 on `[center − inner, center + inner]`,
/// zero outside `[center − outer, center + outer]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauInterval {
    pub center: f64,
    pub inner_radius: f64,
    pub outer_radius: f64,
}

impl PlateauInterval {
    fn start(&self) -> f64 {
        self.center - self.inner_radius
    }
    fn end(&self) -> f64 {
        self.center + self.inner_radius
    }
}

/// `φ_N'` as a union of smooth trapezoids with a common ramp width; `φ_N`
/// is its integral from `−∞`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothPlateauBump {
    /// Merged, ascending, pairwise separated by more than two ramp widths.
    pub intervals: Vec<PlateauInterval>,
    pub ramp_width: f64,
    /// `∫_{−∞}^{start of interval i} φ_N'`.
    #[serde(skip)]
    prefix_mass: Vec<f64>,
}

impl SmoothPlateauBump {
    /// Plateaus of radius `inner` around each center, ramps reaching zero at
    /// radius `outer`. Overlapping supports are merged into one plateau.
    pub fn from_balls(centers: &[f64], inner: f64, outer: f64) -> Result<Self, WitnessError> {
        if !(inner > 0.0 && outer > inner && outer.is_finite()) {
            return Err(WitnessError::InvalidPlateau(format!("need 0 < inner < outer, got {inner}, {outer}")));
        }
        let mut sorted = centers.to_vec();
        if sorted.iter().any(|c| !c.is_finite()) {
            return Err(WitnessError::InvalidPlateau("non-finite center".into()));
        }
        sorted.sort_by(f64::total_cmp);
        let w = outer - inner;
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for c in sorted {
            let (s, e) = (c - inner, c + inner);
            match merged.last_mut() {
                // supports [s − w, e + w] overlap
                Some(last) if s - w <= last.1 + w => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        let intervals = merged
            .into_iter()
            .map(|(s, e)| {
                let half = 0.5 * (e - s);
                PlateauInterval { center: s + half, inner_radius: half, outer_radius: half + w }
            })
            .collect();
        Ok(Self::from_intervals(intervals, w))
    }

    /// Rebuilds cached sums; used after deserialization.
    pub fn from_intervals(intervals: Vec<PlateauInterval>, ramp_width: f64) -> Self {
        let mut prefix_mass = Vec::with_capacity(intervals.len());
        let mut acc = 0.0;
        for iv in &intervals {
            prefix_mass.push(acc);
            acc += 2.0 * iv.inner_radius + ramp_width;
        }
        Self { intervals, ramp_width, prefix_mass }
    }

    fn ensure_cache(&self) -> std::borrow::Cow<'_, [f64]> {
        if self.prefix_mass.len() == self.intervals.len() {
            std::borrow::Cow::Borrowed(&self.prefix_mass)
        } else {
            std::borrow::Cow::Owned(Self::from_intervals(self.intervals.clone(), self.ramp_width).prefix_mass)
        }
    }

    /// Index of the last interval whose support starts at or before `x`.
    fn locate(&self, x: f64) -> Option<usize> {
        let w = self.ramp_width;
        let idx = self.intervals.partition_point(|iv| iv.start() - w <= x);
        idx.checked_sub(1)
    }

    /// Lowest point of the support.
    pub fn support_start(&self) -> f64 {
        self.intervals.first().map_or(f64::INFINITY, |iv| iv.start() - self.ramp_width)
    }

    /// Highest point of the support.
    pub fn support_end(&self) -> f64 {
        self.intervals.last().map_or(f64::NEG_INFINITY, |iv| iv.end() + self.ramp_width)
    }

    /// `φ_N'(x)`.
    pub fn derivative(&self, x: f64) -> f64 {
        let Some(i) = self.locate(x) else { return 0.0 };
        let iv = &self.intervals[i];
        let w = self.ramp_width;
        if x < iv.start() {
            smooth_step((x - (iv.start() - w)) / w)
        } else if x <= iv.end() {
            1.0
        } else {
            smooth_step((iv.end() + w - x) / w)
        }
    }

    /// Jet of `φ_N'` at `x`.
    pub fn derivative_jet(&self, x: f64, order: usize) -> Jet {
        let Some(i) = self.locate(x) else { return Jet::zero(order) };
        let iv = &self.intervals[i];
        let w = self.ramp_width;
        if x < iv.start() {
            let u = Jet::variable(x, order).add_scalar(-(iv.start() - w)).scale(1.0 / w);
            smooth_step_jet(&u)
        } else if x <= iv.end() {
            Jet::constant(1.0, order)
        } else if x < iv.end() + w {
            let u = Jet::variable(x, order).scale(-1.0 / w).add_scalar((iv.end() + w) / w);
            smooth_step_jet(&u)
        } else {
            Jet::zero(order)
        }
    }

    /// `φ_N(x) = ∫_{−∞}^x φ_N'`.
    pub fn value(&self, x: f64) -> f64 {
        let Some(i) = self.locate(x) else { return 0.0 };
        let prefix = self.ensure_cache()[i];
        let iv = &self.intervals[i];
        let w = self.ramp_width;
        let (s, e) = (iv.start(), iv.end());
        let partial = if x < s {
            w * smooth_step_integral((x - (s - w)) / w)
        } else if x <= e {
            0.5 * w + (x - s)
        } else if x < e + w {
            0.5 * w + (e - s) + w * (0.5 - smooth_step_integral((e + w - x) / w))
        } else {
            (e - s) + w
        };
        prefix + partial
    }

    /// `‖φ_N'‖_{L¹}`; each ramp contributes half its width.
    pub fn l1_norm(&self) -> f64 {
        self.intervals.iter().map(|iv| 2.0 * iv.inner_radius + self.ramp_width).sum()
    }
}

/// Construction data for one `N` in regime A.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessA {
    pub n: usize,
    pub m_n: u64,
    pub atoms: Vec<f64>,
    pub ball_radius: f64,
    pub support_radius: f64,
    pub r: f64,
    pub p_n: f64,
    pub deviation: f64,
}

impl WitnessA {
    /// `dist(x, A_N) ≤ rρ^N`.
    pub fn ball_contains(&self, x: f64) -> bool {
        let idx = self.atoms.partition_point(|&a| a < x);
        let near = |i: usize| self.atoms.get(i).is_some_and(|&a| (a - x).abs() <= self.ball_radius);
        near(idx) || (idx > 0 && near(idx - 1))
    }
}

/// Construction data for one `N` in regime B.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessB {
    pub n: usize,
    pub kappa_n: usize,
    /// The word `2^N 1^{κ(N)}` as zero-based symbols.
    pub word: Vec<u8>,
    pub center: f64,
    pub word_product: f64,
    pub ball_radius: f64,
    pub support_radius: f64,
    pub r: f64,
}

impl WitnessB {
    pub fn ball_contains(&self, x: f64) -> bool {
        (x - self.center).abs() <= self.ball_radius
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime")]
pub enum WitnessEntry {
    A { witness: WitnessA, bump: Arc<SmoothPlateauBump> },
    B { witness: WitnessB, bump: Arc<SmoothPlateauBump> },
}

impl WitnessEntry {
    pub fn n(&self) -> usize {
        match self {
            WitnessEntry::A { witness, .. } => witness.n,
            WitnessEntry::B { witness, .. } => witness.n,
        }
    }

    pub fn bump(&self) -> &Arc<SmoothPlateauBump> {
        match self {
            WitnessEntry::A { bump, .. } | WitnessEntry::B { bump, .. } => bump,
        }
    }

    pub fn ball_contains(&self, x: f64) -> bool {
        match self {
            WitnessEntry::A { witness, .. } => witness.ball_contains(x),
            WitnessEntry::B { witness, .. } => witness.ball_contains(x),
        }
    }
}

/// Regime-A witness at `N`: atoms `≥ M(N)`, balls of radius `rρ^N`.
pub fn build_witness_a(
    ifs: &Ifs,
    params: &RegimeAParams,
    n: usize,
    r: f64,
    bound: DeviationBound,
) -> Result<WitnessEntry, WitnessError> {
    let choice = find_m(ifs, n, bound, None)?;
    let atoms: Vec<f64> = enumerate_prefix_atoms(ifs, n, choice.m as f64)?.atoms.iter().map(|a| a.value).collect();
    let ball_radius = r * params.rho.powi(n as i32);
    let support_radius = 2.0 * ball_radius;
    let bump = SmoothPlateauBump::from_balls(&atoms, ball_radius, support_radius)?;
    Ok(WitnessEntry::A {
        witness: WitnessA {
            n,
            m_n: choice.m,
            atoms,
            ball_radius,
            support_radius,
            r,
            p_n: choice.p_n,
            deviation: choice.deviation,
        },
        bump: Arc::new(bump),
    })
}

/// Regime-B witness at `N`: the word `2^N 1^{κ(N)}` and its atom `x_N`.
pub fn build_witness_b(ifs: &Ifs, params: &RegimeBParams, n: usize, r: f64) -> Result<WitnessEntry, WitnessError> {
    let (l1, l2) = canonical_ratios(ifs)?;
    let kappa_n = params.kappa_n(n);
    let mut word = vec![1u8; n];
    word.resize(n + kappa_n, 0u8);
    let (mut x, mut lam) = (0.0, 1.0);
    for &s in &word {
        x += lam;
        lam *= if s == 0 { l1 } else { l2 };
    }
    let center = x + lam;
    let ball_radius = r * params.rho_b.powi(n as i32);
    let support_radius = 2.0 * ball_radius;
    let bump = SmoothPlateauBump::from_balls(&[center], ball_radius, support_radius)?;
    Ok(WitnessEntry::B {
        witness: WitnessB { n, kappa_n, word, center, word_product: lam, ball_radius, support_radius, r },
        bump: Arc::new(bump),
    })
}

/// `r` with `P{X − 1 ≤ r} = 1/2`, plus the order statistics two binomial
/// standard errors either side as a sensitivity band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianScale {
    pub r: f64,
    pub r_low: f64,
    pub r_high: f64,
    pub replicas: u64,
    pub truncation: usize,
}

pub fn median_scale(ifs: &Ifs, plan: &McPlan) -> Result<MedianScale, WitnessError> {
    let sample = sorted_sample(ifs, -1.0, plan)?;
    let len = sample.len();
    let (lo, hi) = (sample[0], sample[len - 1]);
    if hi - lo < 1e-12 * (1.0 + hi.abs()) {
        return Err(SamplerError::DegenerateDistribution { range: hi - lo }.into());
    }
    let at = |q: f64| sample[((q * len as f64).ceil() as usize).clamp(1, len) - 1];
    let band = 2.0 * (0.25 / len as f64).sqrt();
    Ok(MedianScale {
        r: at(0.5),
        r_low: at(0.5 - band),
        r_high: at(0.5 + band),
        replicas: plan.replicas,
        truncation: plan.truncation,
    })
}

/// A prefix with its probability; strata form a complete prefix code.
#[derive(Clone, Debug, PartialEq)]
pub struct Stratum {
    pub symbols: Vec<u8>,
    pub weight: f64,
}

/// All `2^N` words of length `N`.
pub fn full_prefix_strata(n: usize) -> Vec<Stratum> {
    let weight = 0.5f64.powi(n as i32);
    (0..1u64 << n)
        .map(|w| Stratum { symbols: (0..n).map(|k| ((w >> (n - 1 - k)) & 1) as u8).collect(), weight })
        .collect()
}

/// The word itself plus, for each position, the prefix that first leaves
/// the word there.
pub fn path_partition(word: &[u8]) -> Vec<Stratum> {
    let mut strata: Vec<Stratum> = (0..word.len())
        .map(|k| {
            let mut symbols = word[..k].to_vec();
            symbols.push(1 - word[k]);
            Stratum { symbols, weight: 0.5f64.powi(k as i32 + 1) }
        })
        .collect();
    strata.push(Stratum { symbols: word.to_vec(), weight: 0.5f64.powi(word.len() as i32) });
    strata
}

/// Prefix quantities needed to assemble `X` and `X^{(1)}` from a tail.
struct PrefixState {
    x: f64,
    lambda: f64,
    ones: u32,
    derivative: f64,
}

fn prefix_state(l1: f64, l2: f64, symbols: &[u8]) -> PrefixState {
    let (mut x, mut lam, mut ones, mut acc) = (0.0, 1.0, 0u32, 0.0);
    for (m, &s) in symbols.iter().enumerate() {
        if m >= 1 {
            acc += lam * ones as f64;
        }
        x += lam;
        lam *= if s == 0 { l1 } else { l2 };
        ones += (s == 0) as u32;
    }
    PrefixState { x, lambda: lam, ones, derivative: acc / l1 }
}

/// Stratified estimate of `E[φ_N'(X) X^{(1)}]`.
///
/// For a prefix `w` of length `D`, `X = X_D + Λ_D Y` and
/// `X^{(1)} = P_D + Λ_D (o(D) Y / λ₁ + Y^{(1)})`, where `(Y, Y^{(1)})` is an
/// independent copy of `(X, X^{(1)})` sampled at the plan's truncation.
/// Strata whose smallest reachable value lies beyond the support contribute
/// exactly zero and are skipped.
pub fn estimate_hn_prime_stratified(
    ifs: &Ifs,
    bump: &SmoothPlateauBump,
    strata: &[Stratum],
    plan: &McPlan,
) -> Result<McEstimate, WitnessError> {
    let (l1, l2) = canonical_ratios(ifs)?;
    if plan.replicas < 2 {
        return Err(SamplerError::TooFewReplicas(plan.replicas).into());
    }
    let per_stratum = MIN_STRATUM_REPLICAS.max(plan.replicas.div_ceil(strata.len().max(1) as u64));
    let sampler = SymbolSampler::new(ifs.probs());
    let end = bump.support_end();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.threads)
        .build()
        .map_err(|e| SamplerError::ThreadPool(e.to_string()))?;
    let results: Vec<Result<(f64, RunningStats), SamplerError>> = pool.install(|| {
        strata
            .par_iter()
            .enumerate()
            .map(|(index, stratum)| {
                let pre = prefix_state(l1, l2, &stratum.symbols);
                let mut stats = RunningStats::default();
                if pre.x + pre.lambda > end {
                    stats.count = per_stratum;
                    return Ok((stratum.weight, stats));
                }
                let seed = StreamKey::new(plan.master_seed, index as u64).derive(0x5157).value();
                let mut path = TruncatedPath::default();
                let mut formal = [0.0];
                for r in 0..per_stratum {
                    path.resample(ifs, &sampler, replica_key(seed, r), plan.truncation, r);
                    formal_derivatives_into(&path, ifs, ParamDirection::Ratio(0), &mut formal)
                        .expect("valid direction and order");
                    let y = path.x_n;
                    let x = pre.x + pre.lambda * y;
                    let d = pre.derivative + pre.lambda * (pre.ones as f64 * y / l1 + formal[0]);
                    let v = bump.derivative(x) * d;
                    if !v.is_finite() {
                        return Err(SamplerError::NonFiniteSample { seed_id: r, component: index });
                    }
                    stats.push(v);
                }
                Ok((stratum.weight, stats))
            })
            .collect()
    });
    let mut mean = 0.0;
    let mut var = 0.0;
    let mut total = 0u64;
    for item in results {
        let (w, stats) = item?;
        mean += w * stats.mean;
        var += w * w * stats.std_error().powi(2);
        total += stats.count;
    }
    Ok(McEstimate {
        mean,
        std_error: var.sqrt(),
        replicas: total,
        truncation_n: plan.truncation,
        master_seed: plan.master_seed,
    })
}

/// `ĥ_N'(0)` for a witness, with the prefix partition matching its regime.
pub fn estimate_hn_prime(ifs: &Ifs, entry: &WitnessEntry, plan: &McPlan) -> Result<McEstimate, WitnessError> {
    let strata = match entry {
        WitnessEntry::A { witness, .. } => {
            if witness.n > ENUMERATION_CAP {
                return Err(WitnessError::EnumerationTooLarge { n: witness.n, cap: ENUMERATION_CAP });
            }
            full_prefix_strata(witness.n)
        }
        WitnessEntry::B { witness, .. } => path_partition(&witness.word),
    };
    if entry.bump().intervals.is_empty() {
        return Ok(McEstimate::exact(0.0, plan.truncation, plan.master_seed));
    }
    estimate_hn_prime_stratified(ifs, entry.bump(), &strata, plan)
}

/// Unstratified estimate of `E[φ_N'(X) X^{(1)}]`, for cross-checking.
pub fn estimate_hn_prime_plain(ifs: &Ifs, entry: &WitnessEntry, plan: &McPlan) -> Result<McEstimate, WitnessError> {
    canonical_ratios(ifs)?;
    let bump = entry.bump();
    Ok(estimate_expectation(ifs, plan, |p| {
        let v = bump.derivative(p.x_n);
        if v == 0.0 {
            return 0.0;
        }
        let mut formal = [0.0];
        formal_derivatives_into(p, ifs, ParamDirection::Ratio(0), &mut formal).expect("valid direction and order");
        v * formal[0]
    })?)
}

/// `P̂{X ∈ B_N}` by plain Monte Carlo.
pub fn ball_probability(ifs: &Ifs, entry: &WitnessEntry, plan: &McPlan) -> Result<McEstimate, WitnessError> {
    Ok(estimate_expectation(ifs, plan, |p| entry.ball_contains(p.x_n) as u8 as f64)?)
}

/// A regime's witnesses over a range of `N`, with the shared scale `r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessFamily {
    pub lambda1: f64,
    pub lambda2: f64,
    pub regime: RegimeKind,
    pub params_a: Option<RegimeAParams>,
    pub params_b: Option<RegimeBParams>,
    pub bound: Option<DeviationBound>,
    pub scale: MedianScale,
    pub entries: Vec<WitnessEntry>,
    /// `N` values skipped because no `M(N)` exists, regime A only.
    pub infeasible: Vec<usize>,
}

impl WitnessFamily {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Parses a family and rebuilds the plateau caches.
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let mut family: WitnessFamily = serde_json::from_str(text)?;
        for entry in &mut family.entries {
            let bump = match entry {
                WitnessEntry::A { bump, .. } | WitnessEntry::B { bump, .. } => bump,
            };
            *bump = Arc::new(SmoothPlateauBump::from_intervals(bump.intervals.clone(), bump.ramp_width));
        }
        Ok(family)
    }
}

/// Builds the witnesses for every `N` in `ns`. In regime A, `N` without a
/// feasible `M` are recorded and skipped.
pub fn build_family(
    ifs: &Ifs,
    which: RegimeKind,
    ns: &[usize],
    scale: MedianScale,
    bound: Option<DeviationBound>,
) -> Result<WitnessFamily, WitnessError> {
    let (l1, l2) = canonical_ratios(ifs)?;
    let regime = detect_regime(ifs)?;
    let mut entries = Vec::new();
    let mut infeasible = Vec::new();
    match which {
        RegimeKind::A => {
            let params = regime.a.ok_or(WitnessError::RegimeMismatch("A"))?;
            let bound = bound.unwrap_or(DeviationBound::Cramer { delta: params.delta });
            for &n in ns {
                match build_witness_a(ifs, &params, n, scale.r, bound) {
                    Ok(e) => entries.push(e),
                    Err(WitnessError::NoFeasibleM { .. }) => infeasible.push(n),
                    Err(e) => return Err(e),
                }
            }
            Ok(WitnessFamily {
                lambda1: l1,
                lambda2: l2,
                regime: RegimeKind::A,
                params_a: Some(params),
                params_b: None,
                bound: Some(bound),
                scale,
                entries,
                infeasible,
            })
        }
        RegimeKind::B => {
            let params = regime.b.ok_or(WitnessError::RegimeMismatch("B"))?;
            for &n in ns {
                entries.push(build_witness_b(ifs, &params, n, scale.r)?);
            }
            Ok(WitnessFamily {
                lambda1: l1,
                lambda2: l2,
                regime: RegimeKind::B,
                params_a: None,
                params_b: Some(params),
                bound: None,
                scale,
                entries,
                infeasible,
            })
        }
        RegimeKind::Both | RegimeKind::None => Err(WitnessError::RegimeMismatch("A or B (choose one)")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub n: usize,
    pub estimate: McEstimate,
    pub lower_bound: f64,
    /// `estimate ≥ lower_bound − 4·SE`.
    pub pass: bool,
    pub partial_sum: f64,
    pub l1_norm: f64,
    /// Geometric audit bound on `‖φ_N'‖_{L¹}`.
    pub l1_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub regime: RegimeKind,
    pub constant_c: f64,
    pub rows: Vec<DivergenceRow>,
    /// `Σ_N lower_bound`, what the partial sums must exceed.
    pub lower_bound_sum: f64,
    pub l1_total: f64,
    pub l1_bound_total: f64,
    pub audit_pass: bool,
}

/// Estimates `ĥ_N'(0)` for every witness and checks the lower bounds and
/// the `L¹` audit. Each `N` uses its own seed derived from the plan's.
pub fn divergence_report(ifs: &Ifs, family: &WitnessFamily, plan: &McPlan) -> Result<DivergenceReport, WitnessError> {
    let (l1, l2) = canonical_ratios(ifs)?;
    let c = derivative_lower_constant(l1, l2);
    let r = family.scale.r;
    let mut rows = Vec::with_capacity(family.entries.len());
    let mut partial = 0.0;
    let mut bound_sum = 0.0;
    let (mut l1_total, mut l1_bound_total) = (0.0, 0.0);
    for entry in &family.entries {
        let n = entry.n();
        let seeded = plan.with_seed(StreamKey::new(plan.master_seed, n as u64).value());
        let estimate = estimate_hn_prime(ifs, entry, &seeded)?;
        let (lower_bound, l1_bound) = match entry {
            WitnessEntry::A { .. } => {
                let rho = family.params_a.map(|p| p.rho).unwrap_or(f64::NAN);
                (c / 8.0 / (n as f64).sqrt(), 8.0 * r * (2.0 * rho).powi(n as i32))
            }
            WitnessEntry::B { .. } => {
                let p = family.params_b.ok_or(WitnessError::RegimeMismatch("B"))?;
                (c / 8.0 * p.growth(l2).powi(n as i32), 4.0 * r * p.rho_b.powi(n as i32))
            }
        };
        partial += estimate.mean;
        bound_sum += lower_bound;
        let l1_norm = entry.bump().l1_norm();
        l1_total += l1_norm;
        l1_bound_total += l1_bound;
        rows.push(DivergenceRow {
            n,
            pass: estimate.mean >= lower_bound - 4.0 * estimate.std_error,
            estimate,
            lower_bound,
            partial_sum: partial,
            l1_norm,
            l1_bound,
        });
    }
    Ok(DivergenceReport {
        regime: family.regime,
        constant_c: c,
        lower_bound_sum: bound_sum,
        audit_pass: l1_total <= l1_bound_total,
        l1_total,
        l1_bound_total,
        rows,
    })
}

/// `ĥ_{N+1}'/ĥ_N'` for consecutive rows with a delta-method standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRatio {
    pub n: usize,
    pub ratio: f64,
    pub std_error: f64,
    /// `ratio ≥ 1 − 4·SE`.
    pub exceeds_one: bool,
}

pub fn consecutive_ratios(rows: &[DivergenceRow]) -> Vec<GrowthRatio> {
    rows.windows(2)
        .filter(|w| w[1].n == w[0].n + 1)
        .map(|w| {
            let (a, b) = (&w[0].estimate, &w[1].estimate);
            let ratio = b.mean / a.mean;
            let rel = (a.std_error / a.mean).hypot(b.std_error / b.mean);
            let std_error = ratio.abs() * rel;
            GrowthRatio { n: w[1].n, ratio, std_error, exceeds_one: ratio >= 1.0 - 4.0 * std_error }
        })
        .collect()
}
