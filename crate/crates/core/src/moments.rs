//! Exact moments of the stationary law and closed-form expectations of the
//! formal-derivative series.
//!
//! Stationarity `X =_d λ_J X + d_J` turns `E[X^k]` into a triangular system:
//! `E[X^k] (1 − Σ p_j λ_j^k) = Σ_{m<k} C(k,m) (Σ_j p_j λ_j^m d_j^{k−m}) E[X^m]`.
//! Parameter derivatives are obtained by running the same recursion on
//! truncated Taylor jets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ifs::{Ifs, ParamDirection};
use crate::jet::{Jet, MAX_JET_ORDER};
use crate::sampler::binomial;

/// Largest `j` accepted by [`binomial_identity`].
pub const MAX_IDENTITY_DEGREE: u32 = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentError {
    #[error("moment of order {order} diverges: Σ p_i λ_i^{order} = {growth} ≥ 1")]
    MomentDiverges { order: u32, growth: f64 },
    #[error("closed form only available for two maps with equal probabilities: {0}")]
    UnsupportedIfs(String),
    #[error("derivative order {0} exceeds the supported maximum {MAX_JET_ORDER}")]
    OrderTooLarge(usize),
    #[error("direction refers to map {index}, but the IFS has {maps} maps")]
    DirectionOutOfRange { index: usize, maps: usize },
    #[error("identity needs 0 ≤ t ≤ j ≤ {MAX_IDENTITY_DEGREE}, got j = {j}, t = {t}")]
    BadIdentityArguments { j: u32, t: u32 },
}

/// `E[X^1] … E[X^K]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub ifs: Ifs,
    pub max_order: u32,
    pub values: Vec<f64>,
}

impl MomentTable {
    /// `E[X^k]`, with `E[X^0] = 1`.
    pub fn moment(&self, k: u32) -> Option<f64> {
        match k {
            0 => Some(1.0),
            k if k <= self.max_order => Some(self.values[k as usize - 1]),
            _ => None,
        }
    }
}

fn check_growth(ifs: &Ifs, k: u32) -> Result<(), MomentError> {
    for m in 1..=k {
        let growth = ifs.moment_growth(m as f64);
        if !(growth < 1.0) {
            return Err(MomentError::MomentDiverges { order: m, growth });
        }
    }
    Ok(())
}

/// `E[X^1] … E[X^K]` for the stationary law.
pub fn moment_table(ifs: &Ifs, max_order: u32) -> Result<MomentTable, MomentError> {
    check_growth(ifs, max_order)?;
    let maps = ifs.maps();
    let probs = ifs.probs();
    let coefficient = |m: u32, r: u32| -> f64 {
        maps.iter()
            .zip(probs)
            .map(|(map, p)| p * map.ratio.powi(m as i32) * map.translation.powi(r as i32))
            .sum()
    };
    let mut moments = vec![1.0];
    for k in 1..=max_order {
        let mut acc = 0.0;
        for m in 0..k {
            acc += binomial(k as u64, m as u64) * coefficient(m, k - m) * moments[m as usize];
        }
        moments.push(acc / (1.0 - ifs.moment_growth(k as f64)));
    }
    Ok(MomentTable { ifs: ifs.clone(), max_order, values: moments[1..].to_vec() })
}

/// `E[X^k]`.
pub fn exact_moment(ifs: &Ifs, k: u32) -> Result<f64, MomentError> {
    if k == 0 {
        return Ok(1.0);
    }
    Ok(moment_table(ifs, k)?.values[k as usize - 1])
}

/// `∂^l E[X^k] / ∂θ^l` where `θ` is the parameter selected by `direction`.
pub fn exact_moment_derivative(
    ifs: &Ifs,
    k: u32,
    direction: ParamDirection,
    order: usize,
) -> Result<f64, MomentError> {
    if order > MAX_JET_ORDER {
        return Err(MomentError::OrderTooLarge(order));
    }
    let index = direction.index();
    if index >= ifs.len() {
        return Err(MomentError::DirectionOutOfRange { index, maps: ifs.len() });
    }
    check_growth(ifs, k)?;
    if k == 0 {
        return Ok(if order == 0 { 1.0 } else { 0.0 });
    }
    let ratios: Vec<Jet> = ifs
        .maps()
        .iter()
        .enumerate()
        .map(|(i, m)| match direction {
            ParamDirection::Ratio(j) if j == i => Jet::variable(m.ratio, order),
            _ => Jet::constant(m.ratio, order),
        })
        .collect();
    let translations: Vec<Jet> = ifs
        .maps()
        .iter()
        .enumerate()
        .map(|(i, m)| match direction {
            ParamDirection::Translation(j) if j == i => Jet::variable(m.translation, order),
            _ => Jet::constant(m.translation, order),
        })
        .collect();
    let probs = ifs.probs();
    let coefficient = |m: u32, r: u32| -> Jet {
        let mut acc = Jet::zero(order);
        for ((l, d), p) in ratios.iter().zip(&translations).zip(probs) {
            acc = acc + (l.powi(m) * d.powi(r)).scale(*p);
        }
        acc
    };
    let mut moments = vec![Jet::constant(1.0, order)];
    for kk in 1..=k {
        let mut acc = Jet::zero(order);
        for m in 0..kk {
            acc = acc + (coefficient(m, kk - m) * moments[m as usize]).scale(binomial(kk as u64, m as u64));
        }
        let mut growth = Jet::zero(order);
        for (l, p) in ratios.iter().zip(probs) {
            growth = growth + l.powi(kk).scale(*p);
        }
        moments.push(acc / (-growth).add_scalar(1.0));
    }
    Ok(moments[k as usize].derivative(order))
}

fn require_two_uniform(ifs: &Ifs) -> Result<(), MomentError> {
    if !ifs.is_two_map_uniform() {
        return Err(MomentError::UnsupportedIfs(format!(
            "{} maps with probabilities {:?}",
            ifs.len(),
            ifs.probs()
        )));
    }
    Ok(())
}

/// `E[Λ_m C(o(m), j)] = 2^{−m} λ₁^j (λ₁+λ₂)^{m−j} C(m, j)` where `o(m)`
/// counts occurrences of the first map.
pub fn expected_weighted_product(ifs: &Ifs, m: u32, j: u32) -> Result<f64, MomentError> {
    require_two_uniform(ifs)?;
    if j > m {
        return Ok(0.0);
    }
    let (l1, l2) = (ifs.ratio(0), ifs.ratio(1));
    // grouped as (λ₁/2)^j ((λ₁+λ₂)/2)^{m−j} so large m neither overflows nor underflows
    Ok((0.5 * l1).powi(j as i32) * (0.5 * (l1 + l2)).powi((m - j) as i32) * binomial(m as u64, j as u64))
}

/// `E[X^{(j)}]` along `Ratio(0)`.
///
/// Summing the weighted products over `m ≥ j` gives
/// `d̄ · j! / (2^j (1 − a)^{j+1})` with `a = (λ₁+λ₂)/2` and `d̄ = (d₁+d₂)/2`.
pub fn expected_formal_derivative(ifs: &Ifs, j: u32) -> Result<f64, MomentError> {
    require_two_uniform(ifs)?;
    let a = ifs.moment_growth(1.0);
    if !(a < 1.0) {
        return Err(MomentError::MomentDiverges { order: 1, growth: a });
    }
    let mean_d = 0.5 * (ifs.translation(0) + ifs.translation(1));
    let mut factorial = 1.0;
    for i in 2..=j {
        factorial *= i as f64;
    }
    Ok(mean_d * factorial / (2f64.powi(j as i32) * (1.0 - a).powi(j as i32 + 1)))
}

/// Both sides of
/// `Σ_k k(k−1)⋯(k−t+1) C(j,k) λ₁^{k−t} λ₂^{j−k} = j(j−1)⋯(j−t+1) (λ₁+λ₂)^{j−t}`.
pub fn binomial_identity(j: u32, t: u32, lambda1: f64, lambda2: f64) -> Result<(f64, f64), MomentError> {
    if t > j || j > MAX_IDENTITY_DEGREE {
        return Err(MomentError::BadIdentityArguments { j, t });
    }
    let falling = |k: u32| -> f64 { (0..t).map(|i| (k - i) as f64).product() };
    let lhs: f64 = (t..=j)
        .map(|k| {
            falling(k)
                * binomial(j as u64, k as u64)
                * lambda1.powi((k - t) as i32)
                * lambda2.powi((j - k) as i32)
        })
        .sum();
    let rhs = falling(j) * (lambda1 + lambda2).powi((j - t) as i32);
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical(l1: f64, l2: f64) -> Ifs {
        Ifs::canonical(l1, l2).unwrap()
    }

    #[test]
    fn first_two_moments() {
        let ifs = canonical(0.5, 1.2);
        assert!((exact_moment(&ifs, 1).unwrap() - 20.0 / 3.0).abs() < 1e-13);
        let m2 = (1.0 + 1.7 * 20.0 / 3.0) / 0.155;
        assert!((exact_moment(&ifs, 2).unwrap() - m2).abs() < 1e-11);
        assert_eq!(exact_moment(&ifs, 0).unwrap(), 1.0);
    }

    #[test]
    fn divergent_moment() {
        let ifs = canonical(0.5, 1.4);
        assert!(matches!(exact_moment(&ifs, 2), Err(MomentError::MomentDiverges { order: 2, .. })));
    }

    #[test]
    fn derivative_examples() {
        let ifs = canonical(0.5, 1.2);
        let d = exact_moment_derivative(&ifs, 1, ParamDirection::Ratio(0), 1).unwrap();
        assert!((d - 200.0 / 9.0).abs() < 1e-12);
        let d = exact_moment_derivative(&ifs, 1, ParamDirection::Translation(0), 1).unwrap();
        assert!((d - 10.0 / 3.0).abs() < 1e-13);
        let d0 = exact_moment_derivative(&ifs, 3, ParamDirection::Ratio(1), 0).unwrap();
        assert!((d0 - exact_moment(&ifs, 3).unwrap()).abs() < 1e-10 * d0);
    }

    #[test]
    fn weighted_product_examples() {
        let ifs = canonical(0.5, 1.2);
        assert!((expected_weighted_product(&ifs, 2, 1).unwrap() - 0.425).abs() < 1e-15);
        assert!((expected_weighted_product(&ifs, 5, 0).unwrap() - 0.85f64.powi(5)).abs() < 1e-15);
        assert_eq!(expected_weighted_product(&ifs, 2, 3).unwrap(), 0.0);
    }

    #[test]
    fn formal_derivative_closed_form() {
        let ifs = canonical(0.5, 1.2);
        let e1 = expected_formal_derivative(&ifs, 1).unwrap();
        assert!((e1 - 200.0 / 9.0).abs() < 1e-12);
        let diverging = Ifs::new_unchecked(ifs.maps().to_vec(), vec![0.5, 0.5])
            .unwrap()
            .perturbed(ParamDirection::Ratio(1), 0.4)
            .unwrap();
        assert!(matches!(
            expected_formal_derivative(&diverging, 3),
            Err(MomentError::MomentDiverges { order: 1, .. })
        ));
        let three = Ifs::from_parts(&[0.5, 1.2, 0.3], &[1.0; 3], &[0.3, 0.3, 0.4]).unwrap();
        assert!(matches!(expected_formal_derivative(&three, 1), Err(MomentError::UnsupportedIfs(_))));
    }

    #[test]
    fn identity_small_cases() {
        let (l, r) = binomial_identity(2, 1, 0.3, 1.7).unwrap();
        assert!((l - 4.0).abs() < 1e-15 && (r - 4.0).abs() < 1e-15);
        assert!(binomial_identity(3, 4, 1.0, 1.0).is_err());
    }
}
