//! Symbolic paths, truncated series, formal derivatives and the Monte Carlo
//! engine.
//!
//! Truncation convention: `X_n = Σ_{m=0}^{n-1} d_{i_{m+1}} Λ_m`, i.e.
//! `X_n = f_{i_1} ∘ ⋯ ∘ f_{i_n}(0)`. The smallest nonempty truncation is
//! `X_1 = d_{i_1}`.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ifs::{Ifs, ParamDirection};
use crate::rng::{StreamKey, SymbolSampler};

/// Truncation used when the caller does not ask for one.
pub const DEFAULT_TRUNCATION: usize = 200;

/// Replicas per work unit. Fixed so the reduction tree does not depend on
/// the number of workers.
pub const CHUNK_SIZE: u64 = 1024;

/// Highest formal-derivative order evaluated per path.
pub const MAX_FORMAL_ORDER: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("at least two replicas are needed, got {0}")]
    TooFewReplicas(u64),
    #[error("replica {seed_id} produced a non-finite value in component {component}")]
    NonFiniteSample { seed_id: u64, component: usize },
    #[error("perturbation {eps} along {direction} is inadmissible: {reason}")]
    InadmissiblePerturbation { direction: ParamDirection, eps: f64, reason: String },
    #[error("map index {index} out of range for an IFS with {maps} maps")]
    DirectionOutOfRange { index: usize, maps: usize },
    #[error("formal derivative order must be in 1..={MAX_FORMAL_ORDER}, got {0}")]
    InvalidOrder(usize),
    #[error("sample range {range:e} is below resolution; the distribution looks degenerate")]
    DegenerateDistribution { range: f64 },
    #[error("quantile level must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("tail thresholds must be positive, got {0}")]
    NonPositiveThreshold(f64),
    #[error("could not start worker pool: {0}")]
    ThreadPool(String),
}

/// One sampled symbol prefix together with its truncated series.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TruncatedPath {
    /// `i_1 … i_n`, zero-based map indices.
    pub symbols: Vec<u8>,
    /// `Λ_0 … Λ_n`.
    pub partial_products: Vec<f64>,
    /// `o(0) … o(n)`: occurrences of map 0 among the first `m` symbols.
    pub one_counts: Vec<u32>,
    pub x_n: f64,
    pub seed_id: u64,
}

impl TruncatedPath {
    /// Builds the path determined by an explicit word.
    pub fn from_symbols(ifs: &Ifs, symbols: &[u8], seed_id: u64) -> Self {
        let mut path = TruncatedPath { symbols: symbols.to_vec(), seed_id, ..Default::default() };
        path.recompute(ifs);
        path
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// `Λ_n`.
    pub fn lambda_n(&self) -> f64 {
        *self.partial_products.last().unwrap_or(&1.0)
    }

    /// Refills the derived fields from `symbols`.
    fn recompute(&mut self, ifs: &Ifs) {
        let n = self.symbols.len();
        self.partial_products.clear();
        self.partial_products.reserve(n + 1);
        self.one_counts.clear();
        self.one_counts.reserve(n + 1);
        let maps = ifs.maps();
        let mut lambda = 1.0;
        let mut ones = 0u32;
        let mut x = 0.0;
        self.partial_products.push(1.0);
        self.one_counts.push(0);
        for &s in &self.symbols {
            let map = maps[s as usize];
            x += map.translation * lambda;
            lambda *= map.ratio;
            ones += (s == 0) as u32;
            self.partial_products.push(lambda);
            self.one_counts.push(ones);
        }
        self.x_n = x;
    }

    /// Resamples this buffer in place as replica `seed_id` of `key`'s stream.
    pub(crate) fn resample(&mut self, ifs: &Ifs, sampler: &SymbolSampler, key: StreamKey, n: usize, seed_id: u64) {
        self.symbols.resize(n, 0);
        sampler.fill(key, 0, &mut self.symbols);
        self.seed_id = seed_id;
        self.recompute(ifs);
    }
}

/// `Σ_{m=0}^{n-1} d_{i_{m+1}} Λ_m` for an explicit word.
#[inline]
pub fn series_value(ifs: &Ifs, symbols: &[u8]) -> f64 {
    let maps = ifs.maps();
    let mut lambda = 1.0;
    let mut x = 0.0;
    for &s in symbols {
        let map = maps[s as usize];
        x += map.translation * lambda;
        lambda *= map.ratio;
    }
    x
}

/// Stream key of replica `replica_index` under `master_seed`.
pub fn replica_key(master_seed: u64, replica_index: u64) -> StreamKey {
    StreamKey::new(master_seed, replica_index)
}

/// Samples replica `replica_index` truncated at `n` symbols.
pub fn sample_path(ifs: &Ifs, n: usize, master_seed: u64, replica_index: u64) -> TruncatedPath {
    let sampler = SymbolSampler::new(ifs.probs());
    let mut path = TruncatedPath::default();
    path.resample(ifs, &sampler, replica_key(master_seed, replica_index), n, replica_index);
    path
}

fn check_direction(ifs: &Ifs, direction: ParamDirection) -> Result<(), SamplerError> {
    let index = direction.index();
    if index >= ifs.len() {
        return Err(SamplerError::DirectionOutOfRange { index, maps: ifs.len() });
    }
    Ok(())
}

/// The IFS with one parameter moved by `eps`; fails if a ratio would become
/// nonpositive.
pub fn perturb(ifs: &Ifs, direction: ParamDirection, eps: f64) -> Result<Ifs, SamplerError> {
    check_direction(ifs, direction)?;
    if !eps.is_finite() {
        return Err(SamplerError::InadmissiblePerturbation {
            direction,
            eps,
            reason: "step is not finite".into(),
        });
    }
    ifs.perturbed(direction, eps).map_err(|e| SamplerError::InadmissiblePerturbation {
        direction,
        eps,
        reason: e.to_string(),
    })
}

/// `X_n(ε)` for the path's word under the perturbed parameters.
pub fn eval_series(
    path: &TruncatedPath,
    ifs: &Ifs,
    eps: f64,
    direction: ParamDirection,
) -> Result<f64, SamplerError> {
    if eps == 0.0 {
        check_direction(ifs, direction)?;
        return Ok(series_value(ifs, &path.symbols));
    }
    let moved = perturb(ifs, direction, eps)?;
    Ok(series_value(&moved, &path.symbols))
}

/// `X_n^{(1)} … X_n^{(L)}` along one direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormalDerivatives {
    pub order: usize,
    pub values: Vec<f64>,
    pub direction: ParamDirection,
}

/// `C(n, k)` exactly when it fits in 128 bits and `k ≤ 30`, otherwise by
/// the multiplicative recurrence in floating point.
pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    if k <= 30 {
        let mut acc: u128 = 1;
        let mut exact = true;
        for i in 0..k {
            // acc * (n - i) / (i + 1) stays integral at every step
            match acc.checked_mul((n - i) as u128) {
                Some(v) => acc = v / (i as u128 + 1),
                None => {
                    exact = false;
                    break;
                }
            }
        }
        if exact {
            return acc as f64;
        }
    }
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Row `C(o, 0..=L)` kept current while `o` grows one step at a time.
struct BinomialRow {
    exact: [u128; MAX_FORMAL_ORDER + 1],
    float: [f64; MAX_FORMAL_ORDER + 1],
    overflowed: bool,
    len: usize,
}

impl BinomialRow {
    fn new(order: usize) -> Self {
        let mut exact = [0u128; MAX_FORMAL_ORDER + 1];
        let mut float = [0.0; MAX_FORMAL_ORDER + 1];
        exact[0] = 1;
        float[0] = 1.0;
        Self { exact, float, overflowed: false, len: order + 1 }
    }

    /// `o ↦ o + 1` via Pascal's rule.
    #[inline]
    fn advance(&mut self) {
        if !self.overflowed {
            for j in (1..self.len).rev() {
                match self.exact[j].checked_add(self.exact[j - 1]) {
                    Some(v) => self.exact[j] = v,
                    None => {
                        self.overflowed = true;
                        break;
                    }
                }
            }
            if !self.overflowed {
                for j in 0..self.len {
                    self.float[j] = self.exact[j] as f64;
                }
                return;
            }
        }
        for j in (1..self.len).rev() {
            self.float[j] += self.float[j - 1];
        }
    }
}

/// Term-by-term derivatives of the truncated series with respect to the
/// parameter selected by `direction`.
///
/// For `Ratio(k)`: `X_n^{(j)} = (j!/λ_k^j) Σ_{m=1}^{n-1} d_{i_{m+1}} Λ_m C(o_k(m), j)`.
/// For `Translation(k)`: `X_n^{(1)} = Σ_m Λ_m 1[i_{m+1} = k]`, higher orders vanish.
pub fn eval_formal_derivatives(
    path: &TruncatedPath,
    ifs: &Ifs,
    order: usize,
    direction: ParamDirection,
) -> Result<FormalDerivatives, SamplerError> {
    let mut values = vec![0.0; order];
    formal_derivatives_into(path, ifs, direction, &mut values)?;
    Ok(FormalDerivatives { order, values, direction })
}

/// Allocation-free core of [`eval_formal_derivatives`]; `out.len()` is the order.
pub fn formal_derivatives_into(
    path: &TruncatedPath,
    ifs: &Ifs,
    direction: ParamDirection,
    out: &mut [f64],
) -> Result<(), SamplerError> {
    let order = out.len();
    if order == 0 || order > MAX_FORMAL_ORDER {
        return Err(SamplerError::InvalidOrder(order));
    }
    check_direction(ifs, direction)?;
    out.iter_mut().for_each(|v| *v = 0.0);
    let maps = ifs.maps();
    let n = path.symbols.len();
    match direction {
        ParamDirection::Translation(k) => {
            let mut acc = 0.0;
            for m in 0..n {
                if path.symbols[m] as usize == k {
                    acc += path.partial_products[m];
                }
            }
            out[0] = acc;
        }
        ParamDirection::Ratio(k) => {
            let mut row = BinomialRow::new(order);
            let mut acc = [0.0f64; MAX_FORMAL_ORDER + 1];
            for m in 1..n {
                if path.symbols[m - 1] as usize == k {
                    row.advance();
                }
                let term = maps[path.symbols[m] as usize].translation * path.partial_products[m];
                for (a, r) in acc[1..=order].iter_mut().zip(&row.float[1..=order]) {
                    *a += term * r;
                }
            }
            let lambda = maps[k].ratio;
            let mut scale = 1.0;
            for j in 1..=order {
                scale *= j as f64 / lambda;
                out[j - 1] = acc[j] * scale;
            }
        }
    }
    Ok(())
}

/// Settings shared by every Monte Carlo run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McPlan {
    pub truncation: usize,
    pub replicas: u64,
    pub master_seed: u64,
    /// Worker count; `0` uses the machine's parallelism. Results do not
    /// depend on it.
    pub threads: usize,
}

impl McPlan {
    pub fn new(truncation: usize, replicas: u64, master_seed: u64) -> Self {
        Self { truncation, replicas, master_seed, threads: 0 }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replicas: u64,
    pub truncation_n: usize,
    pub master_seed: u64,
}

impl McEstimate {
    /// An exact value dressed as an estimate with zero error.
    pub fn exact(value: f64, truncation_n: usize, master_seed: u64) -> Self {
        Self { mean: value, std_error: 0.0, replicas: 0, truncation_n, master_seed }
    }
}

/// Count, mean and centred sum of squares of a sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &RunningStats) -> RunningStats {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        RunningStats {
            count,
            mean: self.mean + delta * (nb / count as f64),
            m2: self.m2 + other.m2 + delta * delta * (na * nb / count as f64),
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        self.m2 / (self.count - 1) as f64
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Merges per-chunk statistics along a balanced binary tree whose shape is
/// a function of the chunk count alone.
pub fn tree_merge(parts: &[RunningStats]) -> RunningStats {
    match parts.len() {
        0 => RunningStats::default(),
        1 => parts[0],
        len => {
            let (left, right) = parts.split_at(len / 2);
            tree_merge(left).merge(&tree_merge(right))
        }
    }
}

/// Runs `work` on every chunk of `0..replicas` and returns the results in
/// chunk order.
pub fn run_chunks<T, F>(replicas: u64, threads: usize, work: F) -> Result<Vec<T>, SamplerError>
where
    T: Send,
    F: Fn(Range<u64>) -> T + Sync,
{
    let chunks: Vec<Range<u64>> = (0..replicas.div_ceil(CHUNK_SIZE))
        .map(|c| c * CHUNK_SIZE..((c + 1) * CHUNK_SIZE).min(replicas))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SamplerError::ThreadPool(e.to_string()))?;
    Ok(pool.install(|| chunks.into_par_iter().map(&work).collect()))
}

/// Vector-valued Monte Carlo: `f` writes `dim` values per path, each gets
/// its own estimate. All components share the same paths.
pub fn estimate_vector<F>(
    ifs: &Ifs,
    plan: &McPlan,
    dim: usize,
    f: F,
) -> Result<Vec<McEstimate>, SamplerError>
where
    F: Fn(&TruncatedPath, &mut [f64]) + Sync,
{
    if plan.replicas < 2 {
        return Err(SamplerError::TooFewReplicas(plan.replicas));
    }
    let sampler = SymbolSampler::new(ifs.probs());
    let parts = run_chunks(plan.replicas, plan.threads, |range| {
        let mut stats = vec![RunningStats::default(); dim];
        let mut path = TruncatedPath::default();
        let mut values = vec![0.0; dim];
        for r in range {
            path.resample(ifs, &sampler, replica_key(plan.master_seed, r), plan.truncation, r);
            f(&path, &mut values);
            for (component, (s, &v)) in stats.iter_mut().zip(&values).enumerate() {
                if !v.is_finite() {
                    return Err(SamplerError::NonFiniteSample { seed_id: r, component });
                }
                s.push(v);
            }
        }
        Ok(stats)
    })?;
    let parts: Vec<Vec<RunningStats>> = parts.into_iter().collect::<Result<_, _>>()?;
    Ok((0..dim)
        .map(|c| {
            let column: Vec<RunningStats> = parts.iter().map(|p| p[c]).collect();
            let total = tree_merge(&column);
            McEstimate {
                mean: total.mean,
                std_error: total.std_error(),
                replicas: total.count,
                truncation_n: plan.truncation,
                master_seed: plan.master_seed,
            }
        })
        .collect())
}

/// Monte Carlo mean of a scalar path functional.
pub fn estimate_expectation<F>(ifs: &Ifs, plan: &McPlan, f: F) -> Result<McEstimate, SamplerError>
where
    F: Fn(&TruncatedPath) -> f64 + Sync,
{
    let mut out = estimate_vector(ifs, plan, 1, |path, v| v[0] = f(path))?;
    Ok(out.remove(0))
}

/// Empirical exceedance probability at one threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub threshold: f64,
    pub exceedances: u64,
    pub probability: f64,
    pub std_error: f64,
}

/// `P̂(X_n ≥ R)` for each threshold, from one shared sample.
pub fn empirical_tail(ifs: &Ifs, thresholds: &[f64], plan: &McPlan) -> Result<Vec<TailPoint>, SamplerError> {
    if let Some(&bad) = thresholds.iter().find(|&&r| !(r > 0.0)) {
        return Err(SamplerError::NonPositiveThreshold(bad));
    }
    if plan.replicas < 2 {
        return Err(SamplerError::TooFewReplicas(plan.replicas));
    }
    let sampler = SymbolSampler::new(ifs.probs());
    let parts = run_chunks(plan.replicas, plan.threads, |range| {
        let mut counts = vec![0u64; thresholds.len()];
        let mut symbols = vec![0u8; plan.truncation];
        for r in range {
            sampler.fill(replica_key(plan.master_seed, r), 0, &mut symbols);
            let x = series_value(ifs, &symbols);
            for (c, &t) in counts.iter_mut().zip(thresholds) {
                *c += (x >= t) as u64;
            }
        }
        counts
    })?;
    let total = plan.replicas as f64;
    Ok(thresholds
        .iter()
        .enumerate()
        .map(|(i, &threshold)| {
            let exceedances: u64 = parts.iter().map(|p| p[i]).sum();
            let p = exceedances as f64 / total;
            TailPoint { threshold, exceedances, probability: p, std_error: (p * (1.0 - p) / total).sqrt() }
        })
        .collect())
}

/// Draws `X_n + shift` for every replica, sorted ascending.
pub fn sorted_sample(ifs: &Ifs, shift: f64, plan: &McPlan) -> Result<Vec<f64>, SamplerError> {
    if plan.replicas < 2 {
        return Err(SamplerError::TooFewReplicas(plan.replicas));
    }
    let sampler = SymbolSampler::new(ifs.probs());
    let parts = run_chunks(plan.replicas, plan.threads, |range| {
        let mut symbols = vec![0u8; plan.truncation];
        range
            .map(|r| {
                sampler.fill(replica_key(plan.master_seed, r), 0, &mut symbols);
                series_value(ifs, &symbols) + shift
            })
            .collect::<Vec<f64>>()
    })?;
    let mut sample: Vec<f64> = parts.into_iter().flatten().collect();
    sample.sort_by(f64::total_cmp);
    Ok(sample)
}

/// Lower empirical quantile of an ascending sample.
fn order_statistic(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Empirical quantiles of `X_n + shift` at several levels from one sample.
pub fn empirical_quantiles(ifs: &Ifs, levels: &[f64], shift: f64, plan: &McPlan) -> Result<Vec<f64>, SamplerError> {
    if let Some(&q) = levels.iter().find(|&&q| !(q > 0.0 && q < 1.0)) {
        return Err(SamplerError::InvalidQuantile(q));
    }
    let sample = sorted_sample(ifs, shift, plan)?;
    let (lo, hi) = (sample[0], sample[sample.len() - 1]);
    let range = hi - lo;
    if range < 1e-12 * (1.0 + hi.abs()) {
        return Err(SamplerError::DegenerateDistribution { range });
    }
    Ok(levels.iter().map(|&q| order_statistic(&sample, q)).collect())
}

/// Empirical `q`-quantile of `X_n + shift`.
pub fn empirical_quantile(ifs: &Ifs, q: f64, shift: f64, plan: &McPlan) -> Result<f64, SamplerError> {
    Ok(empirical_quantiles(ifs, &[q], shift, plan)?[0])
}

/// Fraction of replicas whose `Λ_n` is at most `threshold`; a cheap check
/// that the truncation has converged.
pub fn truncation_diagnostic(ifs: &Ifs, threshold: f64, plan: &McPlan) -> Result<f64, SamplerError> {
    if plan.replicas < 2 {
        return Err(SamplerError::TooFewReplicas(plan.replicas));
    }
    let sampler = SymbolSampler::new(ifs.probs());
    let log_ratios: Vec<f64> = ifs.maps().iter().map(|m| m.ratio.ln()).collect();
    let log_threshold = threshold.ln();
    let parts = run_chunks(plan.replicas, plan.threads, |range| {
        let mut symbols = vec![0u8; plan.truncation];
        let mut hits = 0u64;
        for r in range {
            sampler.fill(replica_key(plan.master_seed, r), 0, &mut symbols);
            let log_lambda: f64 = symbols.iter().map(|&s| log_ratios[s as usize]).sum();
            hits += (log_lambda <= log_threshold) as u64;
        }
        hits
    })?;
    Ok(parts.iter().sum::<u64>() as f64 / plan.replicas as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ifs(l1: f64, l2: f64) -> Ifs {
        Ifs::new_unchecked(
            vec![crate::ifs::AffineMap::new(l1, 1.0), crate::ifs::AffineMap::new(l2, 1.0)],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn equal_ratios_path_is_deterministic() {
        let p = sample_path(&ifs(0.5, 0.5), 10, 3, 0);
        assert_eq!(p.x_n, 2.0 - 2f64.powi(-9));
        assert_eq!(p.lambda_n(), 2f64.powi(-10));
    }

    #[test]
    fn empty_truncation_is_zero() {
        let p = sample_path(&ifs(0.5, 1.2), 0, 3, 0);
        assert_eq!(p.x_n, 0.0);
        assert_eq!(p.partial_products, vec![1.0]);
        assert_eq!(sample_path(&ifs(0.5, 1.2), 1, 3, 0).x_n, 1.0);
    }

    #[test]
    fn replicas_are_reconstructible() {
        let a = sample_path(&ifs(0.5, 1.2), 50, 11, 7);
        assert_eq!(a, sample_path(&ifs(0.5, 1.2), 50, 11, 7));
        assert_ne!(a.symbols, sample_path(&ifs(0.5, 1.2), 50, 11, 8).symbols);
    }

    #[test]
    fn series_examples() {
        let sys = ifs(0.5, 0.5);
        let path = TruncatedPath::from_symbols(&sys, &[0, 0, 0], 0);
        assert_eq!(eval_series(&path, &sys, 0.0, ParamDirection::Ratio(0)).unwrap(), path.x_n);
        let v = eval_series(&path, &sys, 0.1, ParamDirection::Ratio(0)).unwrap();
        assert!((v - 1.96).abs() < 1e-15);

        let sys = Ifs::from_parts(&[0.5, 1.2], &[1.0, 1.0], &[0.5, 0.5]).unwrap();
        let path = TruncatedPath::from_symbols(&sys, &[0, 1], 0);
        // d₁ = 1.5: 1.5 + 0.5·1
        let v = eval_series(&path, &sys, 0.5, ParamDirection::Translation(0)).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
        assert!(matches!(
            eval_series(&path, &sys, -0.6, ParamDirection::Ratio(0)),
            Err(SamplerError::InadmissiblePerturbation { .. })
        ));
    }

    #[test]
    fn formal_derivative_examples() {
        let sys = ifs(0.5, 0.5);
        let path = TruncatedPath::from_symbols(&sys, &[0, 0, 1], 0);
        let d = eval_formal_derivatives(&path, &sys, 1, ParamDirection::Ratio(0)).unwrap();
        assert!((d.values[0] - 2.0).abs() < 1e-15);

        let path = TruncatedPath::from_symbols(&sys, &[1; 12], 0);
        let d = eval_formal_derivatives(&path, &sys, 4, ParamDirection::Ratio(0)).unwrap();
        assert!(d.values.iter().all(|&v| v == 0.0));

        let d = eval_formal_derivatives(&path, &sys, 2, ParamDirection::Translation(0)).unwrap();
        assert_eq!(d.values[1], 0.0);
    }

    #[test]
    fn binomials_exact() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(3, 5), 0.0);
        assert_eq!(binomial(60, 30), 118264581564861424.0);
        assert_eq!(binomial(0, 0), 1.0);
    }

    #[test]
    fn pascal_row_matches_direct_binomials() {
        let mut row = BinomialRow::new(8);
        for o in 1..=300u64 {
            row.advance();
            for j in 0..=8u64 {
                assert_eq!(row.float[j as usize], binomial(o, j), "o={o} j={j}");
            }
        }
    }

    #[test]
    fn constant_functional_has_zero_error() {
        let plan = McPlan::new(20, 5000, 1);
        let e = estimate_expectation(&ifs(0.5, 1.2), &plan, |_| 1.0).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_error, 0.0);
        assert_eq!(e.replicas, 5000);
    }

    #[test]
    fn non_finite_sample_reports_replica() {
        let plan = McPlan::new(5, 3000, 1);
        let err = estimate_expectation(&ifs(0.5, 1.2), &plan, |p| if p.seed_id == 2049 { f64::NAN } else { 0.0 })
            .unwrap_err();
        assert_eq!(err, SamplerError::NonFiniteSample { seed_id: 2049, component: 0 });
    }

    #[test]
    fn tail_and_quantile_edges() {
        let plan = McPlan::new(60, 2000, 5);
        let t = empirical_tail(&ifs(0.5, 1.2), &[0.5, 1.0], &plan).unwrap();
        assert!(t.iter().all(|p| p.probability == 1.0));
        let t = empirical_tail(&ifs(0.5, 0.5), &[3.0], &plan).unwrap();
        assert_eq!(t[0].probability, 0.0);
        assert!(matches!(
            empirical_quantile(&ifs(0.5, 0.5), 0.5, -1.0, &plan),
            Err(SamplerError::DegenerateDistribution { .. })
        ));
        let q = empirical_quantiles(&ifs(0.1, 2.0), &[0.25, 0.5, 0.75], -1.0, &plan).unwrap();
        assert!(q[0] <= q[1] && q[1] <= q[2]);
    }

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.3).collect();
        let mut whole = RunningStats::default();
        xs.iter().for_each(|&x| whole.push(x));
        let parts: Vec<RunningStats> = xs
            .chunks(97)
            .map(|c| {
                let mut s = RunningStats::default();
                c.iter().for_each(|&x| s.push(x));
                s
            })
            .collect();
        let merged = tree_merge(&parts);
        assert_eq!(merged.count, whole.count);
        assert!((merged.mean - whole.mean).abs() < 1e-12);
        assert!((merged.m2 - whole.m2).abs() < 1e-9 * whole.m2);
    }
}
