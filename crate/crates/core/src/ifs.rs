//! Probabilistic affine iterated function systems and their scalar
//! characteristics: moment growth, tail exponent, Lyapunov data, Cramér
//! rate of the log-ratio walk, and conjugation to unit translations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `Σ p_i = 1`.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-12;

/// Relative tolerance under which two fixed points count as equal.
pub const FIXED_POINT_RELATIVE_TOLERANCE: f64 = 1e-10;

/// `|1 − λ|` below this (but nonzero) makes `d / (1 − λ)` meaningless.
pub const UNIT_RATIO_GUARD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IfsError {
    #[error("an IFS needs at least two maps, got {0}")]
    TooFewMaps(usize),
    #[error("{maps} maps but {probs} probabilities")]
    LengthMismatch { maps: usize, probs: usize },
    #[error("ratio of map {index} must be positive and finite, got {ratio}")]
    NonPositiveRatio { index: usize, ratio: f64 },
    #[error("translation of map {index} must be finite, got {translation}")]
    NonFiniteTranslation { index: usize, translation: f64 },
    #[error("bad probability vector: {0}")]
    BadProbabilityVector(String),
    #[error("not contracting on average: Σ p_i log λ_i = {mean_log_ratio} ≥ 0")]
    NotContractingOnAverage { mean_log_ratio: f64 },
    #[error("all maps share the fixed point {fixed_point}")]
    CommonFixedPoint { fixed_point: f64 },
    #[error("ratio of map {index} is within {UNIT_RATIO_GUARD:e} of 1 (got {ratio}); fixed point is ill-conditioned")]
    IllConditionedFixedPoint { index: usize, ratio: f64 },
    #[error("the two ratios are equal ({0}); no conjugating change of variables exists")]
    EqualRatios(f64),
    #[error("operation needs exactly two maps, got {0}")]
    NotTwoMaps(usize),
    #[error("no map expands (all λ_i ≤ 1): the tail exponent is +∞")]
    NoExpansion,
    #[error("{value} is outside the admissible interval [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("affine change of variables needs a nonzero scale")]
    ZeroScale,
}

/// `x ↦ ratio · x + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub ratio: f64,
    pub translation: f64,
}

impl AffineMap {
    pub fn new(ratio: f64, translation: f64) -> Self {
        Self { ratio, translation }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.ratio * x + self.translation
    }

    /// `d / (1 − λ)`; `None` when `λ = 1`.
    pub fn fixed_point(&self) -> Option<f64> {
        (self.ratio != 1.0).then(|| self.translation / (1.0 - self.ratio))
    }
}

/// Which parameter of which map a perturbation `ε` moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamDirection {
    /// `λ_index ↦ λ_index + ε`
    Ratio(usize),
    /// `d_index ↦ d_index + ε`
    Translation(usize),
}

impl ParamDirection {
    pub fn index(&self) -> usize {
        match *self {
            ParamDirection::Ratio(i) | ParamDirection::Translation(i) => i,
        }
    }
}

impl std::fmt::Display for ParamDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // 1-based in user-facing text, matching the usual λ₁, λ₂ naming
        match self {
            ParamDirection::Ratio(i) => write!(f, "ratio:{}", i + 1),
            ParamDirection::Translation(i) => write!(f, "translation:{}", i + 1),
        }
    }
}

impl std::str::FromStr for ParamDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, idx) = s
            .split_once(':')
            .ok_or_else(|| format!("expected `ratio:<i>` or `translation:<i>`, got `{s}`"))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| format!("bad map index in `{s}`"))?;
        if idx == 0 {
            return Err("map indices are 1-based".into());
        }
        match kind.trim() {
            "ratio" => Ok(ParamDirection::Ratio(idx - 1)),
            "translation" => Ok(ParamDirection::Translation(idx - 1)),
            other => Err(format!("unknown direction kind `{other}`")),
        }
    }
}

/// A probabilistic IFS `{f_i(x) = λ_i x + d_i ; p}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ifs {
    maps: Vec<AffineMap>,
    probs: Vec<f64>,
}

impl Ifs {
    /// Validated constructor: shape, positivity, probability vector,
    /// contraction on average and absence of a common fixed point.
    pub fn new(maps: Vec<AffineMap>, probs: Vec<f64>) -> Result<Self, IfsError> {
        let ifs = Self::new_unchecked(maps, probs)?;
        let mean = ifs.mean_log_ratio();
        if mean >= 0.0 || mean.is_nan() {
            return Err(IfsError::NotContractingOnAverage { mean_log_ratio: mean });
        }
        ifs.check_no_common_fixed_point()?;
        Ok(ifs)
    }

    /// Checks only shape, ratio positivity and the probability vector.
    /// Degenerate systems (equal fixed points, expanding on average) are
    /// accepted; sampling them is still well defined for finite truncations.
    pub fn new_unchecked(maps: Vec<AffineMap>, probs: Vec<f64>) -> Result<Self, IfsError> {
        if maps.len() < 2 {
            return Err(IfsError::TooFewMaps(maps.len()));
        }
        if maps.len() != probs.len() {
            return Err(IfsError::LengthMismatch { maps: maps.len(), probs: probs.len() });
        }
        if maps.len() > 256 {
            return Err(IfsError::BadProbabilityVector("at most 256 maps are supported".into()));
        }
        for (index, m) in maps.iter().enumerate() {
            if !(m.ratio > 0.0) || !m.ratio.is_finite() {
                return Err(IfsError::NonPositiveRatio { index, ratio: m.ratio });
            }
            if !m.translation.is_finite() {
                return Err(IfsError::NonFiniteTranslation { index, translation: m.translation });
            }
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(IfsError::BadProbabilityVector(format!("entry {p} is not a probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(IfsError::BadProbabilityVector(format!("entries sum to {sum}")));
        }
        Ok(Self { maps, probs })
    }

    /// Convenience constructor from parallel slices.
    pub fn from_parts(ratios: &[f64], translations: &[f64], probs: &[f64]) -> Result<Self, IfsError> {
        if ratios.len() != translations.len() {
            return Err(IfsError::LengthMismatch { maps: ratios.len(), probs: translations.len() });
        }
        let maps = ratios
            .iter()
            .zip(translations)
            .map(|(&r, &d)| AffineMap::new(r, d))
            .collect();
        Self::new(maps, probs.to_vec())
    }

    /// Two maps `λ_i x + 1` with equal weights.
    pub fn canonical(lambda1: f64, lambda2: f64) -> Result<Self, IfsError> {
        Self::from_parts(&[lambda1, lambda2], &[1.0, 1.0], &[0.5, 0.5])
    }

    fn check_no_common_fixed_point(&self) -> Result<(), IfsError> {
        for (index, m) in self.maps.iter().enumerate() {
            let gap = (1.0 - m.ratio).abs();
            if gap != 0.0 && gap < UNIT_RATIO_GUARD {
                return Err(IfsError::IllConditionedFixedPoint { index, ratio: m.ratio });
            }
        }
        if self.maps.iter().any(|m| m.ratio == 1.0) {
            return Ok(());
        }
        let fixed: Vec<f64> = self.maps.iter().filter_map(AffineMap::fixed_point).collect();
        let first = fixed[0];
        let all_equal = fixed.iter().all(|&x| {
            let scale = x.abs().max(first.abs());
            (x - first).abs() <= FIXED_POINT_RELATIVE_TOLERANCE * scale
        });
        if all_equal {
            return Err(IfsError::CommonFixedPoint { fixed_point: first });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[AffineMap] {
        &self.maps
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn ratio(&self, i: usize) -> f64 {
        self.maps[i].ratio
    }

    pub fn translation(&self, i: usize) -> f64 {
        self.maps[i].translation
    }

    /// Two maps with probabilities `(½, ½)`.
    pub fn is_two_map_uniform(&self) -> bool {
        self.len() == 2 && self.probs.iter().all(|&p| p == 0.5)
    }

    /// All translations equal to one.
    pub fn has_unit_translations(&self) -> bool {
        self.maps.iter().all(|m| m.translation == 1.0)
    }

    /// `Σ p_i log λ_i`.
    pub fn mean_log_ratio(&self) -> f64 {
        self.maps
            .iter()
            .zip(&self.probs)
            .map(|(m, p)| p * m.ratio.ln())
            .sum()
    }

    /// `Σ p_i λ_i^s`.
    pub fn moment_growth(&self, s: f64) -> f64 {
        self.maps
            .iter()
            .zip(&self.probs)
            .map(|(m, p)| p * m.ratio.powf(s))
            .sum()
    }

    /// `log Σ p_i λ_i^θ`, evaluated without overflow.
    pub fn log_moment_generating(&self, theta: f64) -> f64 {
        let terms: Vec<f64> = self
            .maps
            .iter()
            .zip(&self.probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(m, p)| p.ln() + theta * m.ratio.ln())
            .collect();
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    /// Derivative of [`Ifs::log_moment_generating`]: the mean of `log λ`
    /// under the exponentially tilted weights `p_i λ_i^θ`.
    fn tilted_mean_log(&self, theta: f64) -> f64 {
        let lg = self.log_moment_generating(theta);
        self.maps
            .iter()
            .zip(&self.probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(m, p)| {
                let l = m.ratio.ln();
                (p.ln() + theta * l - lg).exp() * l
            })
            .sum()
    }

    fn support_log_ratios(&self) -> (f64, f64) {
        self.maps
            .iter()
            .zip(&self.probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(m, _)| m.ratio.ln())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), l| (lo.min(l), hi.max(l)))
    }

    /// Copy with one parameter moved by `eps`. Only shape checks are applied;
    /// callers decide which admissibility conditions matter.
    pub fn perturbed(&self, direction: ParamDirection, eps: f64) -> Result<Ifs, IfsError> {
        let mut maps = self.maps.clone();
        let i = direction.index();
        if i >= maps.len() {
            return Err(IfsError::OutOfRange {
                value: i as f64,
                lo: 0.0,
                hi: (maps.len() - 1) as f64,
            });
        }
        match direction {
            ParamDirection::Ratio(_) => maps[i].ratio += eps,
            ParamDirection::Translation(_) => maps[i].translation += eps,
        }
        Ifs::new_unchecked(maps, self.probs.clone())
    }
}

/// Positive root `s₀` of `Σ p_i λ_i^s = 1`.
///
/// The minimizer `s₁` of the convex function `log f` is located by golden
/// section; the root on `[s₁, s_hi]` is then refined by Newton steps on
/// `log f` safeguarded by bisection.
pub fn tail_exponent(ifs: &Ifs) -> Result<f64, IfsError> {
    let expands = ifs
        .maps()
        .iter()
        .zip(ifs.probs())
        .any(|(m, p)| *p > 0.0 && m.ratio > 1.0);
    if !expands {
        return Err(IfsError::NoExpansion);
    }
    let g = |s: f64| ifs.log_moment_generating(s);

    let mut hi = 64.0;
    while g(hi) <= 0.0 {
        hi *= 2.0;
    }

    // golden section for the minimizer of the convex g on [0, hi]
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..200 {
        if gc < gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
        if b - a < 1e-12 {
            break;
        }
    }
    let s1 = 0.5 * (a + b);

    let (mut lo, mut up) = (s1, hi);
    let mut s = hi;
    for _ in 0..400 {
        let value = g(s);
        if value == 0.0 {
            return Ok(s);
        }
        if value < 0.0 {
            lo = s;
        } else {
            up = s;
        }
        let slope = ifs.tilted_mean_log(s);
        let newton = s - value / slope;
        s = if slope > 0.0 && newton > lo && newton < up {
            newton
        } else {
            0.5 * (lo + up)
        };
        if up - lo <= 4.0 * f64::EPSILON * up {
            break;
        }
    }
    Ok(s)
}

/// Large-deviation rate `I(y) = sup_θ (θ y − log Σ p_i λ_i^θ)` of the
/// empirical mean of `log λ_{i_m}`.
///
/// Valid for `y` in `[min log λ_i, max log λ_i]`. Below the mean the
/// supremum is attained at `θ ≤ 0` (events `Λ_N ≤ e^{yN}`), above it at
/// `θ ≥ 0` (events `Λ_N ≥ e^{yN}`); the witness construction uses the
/// latter with `y = log ρ`.
pub fn cramer_rate(ifs: &Ifs, y: f64) -> Result<f64, IfsError> {
    let (lo, hi) = ifs.support_log_ratios();
    if !(y >= lo && y <= hi) {
        return Err(IfsError::OutOfRange { value: y, lo, hi });
    }
    let mean = ifs.mean_log_ratio();
    if y == mean || lo == hi {
        return Ok(0.0);
    }
    let endpoint_mass = |target: f64| -> f64 {
        ifs.maps()
            .iter()
            .zip(ifs.probs())
            .filter(|(m, p)| **p > 0.0 && m.ratio.ln() == target)
            .map(|(_, p)| *p)
            .sum()
    };
    if y == lo || y == hi {
        return Ok(-endpoint_mass(y).ln());
    }
    // θ with tilted mean equal to y; the tilted mean is increasing in θ
    let sign = if y < mean { -1.0 } else { 1.0 };
    let mut far = sign;
    while (ifs.tilted_mean_log(far) - y) * sign < 0.0 {
        far *= 2.0;
        if far.abs() > 1e12 {
            break;
        }
    }
    let (mut a, mut b) = if sign < 0.0 { (far, 0.0) } else { (0.0, far) };
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if ifs.tilted_mean_log(mid) < y {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= f64::EPSILON * b.abs().max(a.abs()) {
            break;
        }
    }
    let theta = 0.5 * (a + b);
    Ok((theta * y - ifs.log_moment_generating(theta)).max(0.0))
}

/// `x ↦ a x + b` with `a ≠ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineChange {
    pub scale: f64,
    pub offset: f64,
}

impl AffineChange {
    pub fn new(scale: f64, offset: f64) -> Result<Self, IfsError> {
        if scale == 0.0 || !scale.is_finite() || !offset.is_finite() {
            return Err(IfsError::ZeroScale);
        }
        Ok(Self { scale, offset })
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.offset
    }

    pub fn inverse(&self) -> AffineChange {
        AffineChange { scale: 1.0 / self.scale, offset: -self.offset / self.scale }
    }
}

/// Conjugates a two-map IFS to the one with unit translations.
///
/// Returns `(canonical, c)` with `c ∘ f_i = f̃_i ∘ c`, where `f_i` are the
/// canonical maps `λ_i x + 1` and `f̃_i` the input maps. Consequently the
/// input's stationary law is the push-forward of the canonical one by `c`.
pub fn conjugate_to_unit_translations(ifs: &Ifs) -> Result<(Ifs, AffineChange), IfsError> {
    if ifs.len() != 2 {
        return Err(IfsError::NotTwoMaps(ifs.len()));
    }
    let (l1, l2) = (ifs.ratio(0), ifs.ratio(1));
    let (d1, d2) = (ifs.translation(0), ifs.translation(1));
    if l1 == l2 {
        return Err(IfsError::EqualRatios(l1));
    }
    let a = ((1.0 - l1) * d2 - (1.0 - l2) * d1) / (l2 - l1);
    let b = (d2 - d1) / (l1 - l2);
    let scale_ref = d1.abs().max(d2.abs()).max(f64::MIN_POSITIVE);
    if a.abs() <= FIXED_POINT_RELATIVE_TOLERANCE * scale_ref {
        let fixed = ifs.maps()[0].fixed_point().unwrap_or(f64::NAN);
        return Err(IfsError::CommonFixedPoint { fixed_point: fixed });
    }
    let maps = vec![AffineMap::new(l1, 1.0), AffineMap::new(l2, 1.0)];
    let canonical = Ifs::new(maps, ifs.probs().to_vec())?;
    Ok((canonical, AffineChange::new(a, b)?))
}

/// Lyapunov and tail data of an IFS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// `χ = −Σ p_i log λ_i`
    pub lyapunov_exponent: f64,
    /// `h = −Σ p_i log p_i`
    pub entropy: f64,
    /// `h / χ`
    pub lyapunov_dimension: f64,
    /// `s₀`, or `None` when no map expands (`s₀ = +∞`).
    pub tail_exponent: Option<f64>,
    /// Whether the log-ratio walk is non-degenerate, so that a Cramér rate
    /// with positive values exists.
    pub rate_available: bool,
}

pub fn spectral_report(ifs: &Ifs) -> Result<SpectralReport, IfsError> {
    let chi = -ifs.mean_log_ratio();
    let entropy: f64 = ifs
        .probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    let tail = match tail_exponent(ifs) {
        Ok(s) => Some(s),
        Err(IfsError::NoExpansion) => None,
        Err(e) => return Err(e),
    };
    let (lo, hi) = ifs.support_log_ratios();
    Ok(SpectralReport {
        lyapunov_exponent: chi,
        entropy,
        lyapunov_dimension: entropy / chi,
        tail_exponent: tail,
        rate_available: lo < hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two(l1: f64, l2: f64, d1: f64, d2: f64) -> Result<Ifs, IfsError> {
        Ifs::from_parts(&[l1, l2], &[d1, d2], &[0.5, 0.5])
    }

    #[test]
    fn validation_examples() {
        assert!(two(0.5, 1.2, 1.0, 1.0).is_ok());
        assert!(matches!(
            two(0.5, 2.0, 1.0, 1.0),
            Err(IfsError::NotContractingOnAverage { .. })
        ));
        // fixed points 2/0.5 = 4 and 3.2/(-0.2) = -16 differ
        assert!(two(0.5, 1.2, 2.0, 3.2).is_ok());
        // 2/(1-0.5) = 4 = -0.8/(1-1.2)
        assert!(matches!(two(0.5, 1.2, 2.0, -0.8), Err(IfsError::CommonFixedPoint { .. })));
        assert!(matches!(two(-0.5, 1.2, 1.0, 1.0), Err(IfsError::NonPositiveRatio { index: 0, .. })));
        assert!(matches!(
            Ifs::from_parts(&[0.5, 1.2], &[1.0, 1.0], &[0.6, 0.5]),
            Err(IfsError::BadProbabilityVector(_))
        ));
        assert!(matches!(
            Ifs::from_parts(&[0.5], &[1.0], &[1.0]),
            Err(IfsError::TooFewMaps(1))
        ));
        assert!(matches!(
            two(0.5, 1.0 + 1e-14, 1.0, 2.0),
            Err(IfsError::IllConditionedFixedPoint { index: 1, .. })
        ));
    }

    #[test]
    fn unit_ratio_skips_fixed_point_check() {
        // x ↦ x + 1 has no fixed point
        assert!(Ifs::from_parts(&[0.5, 1.0], &[1.0, 1.0], &[0.5, 0.5]).is_ok());
    }

    #[test]
    fn moment_growth_examples() {
        let ifs = two(0.5, 1.2, 1.0, 1.0).unwrap();
        assert_eq!(ifs.moment_growth(0.0), 1.0);
        assert!((ifs.moment_growth(1.0) - 0.85).abs() < 1e-15);
        assert!((ifs.moment_growth(2.0) - 0.845).abs() < 1e-15);
    }

    #[test]
    fn no_expansion_has_infinite_tail_exponent() {
        let ifs = two(0.5, 0.9, 1.0, 1.0).unwrap();
        assert_eq!(tail_exponent(&ifs), Err(IfsError::NoExpansion));
        assert_eq!(spectral_report(&ifs).unwrap().tail_exponent, None);
    }

    #[test]
    fn conjugation_equal_ratios_rejected() {
        let ifs = Ifs::new_unchecked(
            vec![AffineMap::new(0.5, 1.0), AffineMap::new(0.5, 2.0)],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert_eq!(conjugate_to_unit_translations(&ifs), Err(IfsError::EqualRatios(0.5)));
    }

    #[test]
    fn conjugation_identity_on_canonical() {
        let ifs = two(0.5, 1.2, 1.0, 1.0).unwrap();
        let (can, c) = conjugate_to_unit_translations(&ifs).unwrap();
        assert_eq!(can, ifs);
        assert!((c.scale - 1.0).abs() < 1e-15);
        assert!(c.offset.abs() < 1e-15);
    }

    #[test]
    fn cramer_rate_edges() {
        let ifs = two(0.1, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(cramer_rate(&ifs, ifs.mean_log_ratio()).unwrap(), 0.0);
        let lo = 0.1f64.ln();
        assert!(matches!(cramer_rate(&ifs, lo - 1.0), Err(IfsError::OutOfRange { .. })));
        assert!((cramer_rate(&ifs, lo).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn direction_parsing() {
        assert_eq!("ratio:1".parse::<ParamDirection>(), Ok(ParamDirection::Ratio(0)));
        assert_eq!(
            "translation:2".parse::<ParamDirection>(),
            Ok(ParamDirection::Translation(1))
        );
        assert!("ratio:0".parse::<ParamDirection>().is_err());
        assert_eq!(ParamDirection::Ratio(1).to_string(), "ratio:2");
    }
}
