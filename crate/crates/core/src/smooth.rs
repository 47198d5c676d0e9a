//! C^∞ transition functions and the derivative jets of bumps built from
//! them.

use crate::jet::Jet;

/// Beyond this `|1/u − 1/(1−u)|` the transition equals 0 or 1 to double
/// precision and all its derivatives underflow.
const EXPONENT_CUTOFF: f64 = 700.0;

/// `S(u) = 1 / (1 + exp(1/u − 1/(1−u)))` on `(0, 1)`, 0 below, 1 above.
/// All derivatives vanish at both ends and `S(u) + S(1−u) = 1`.
pub fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let g = 1.0 / u - 1.0 / (1.0 - u);
    if g > EXPONENT_CUTOFF {
        0.0
    } else if g < -EXPONENT_CUTOFF {
        1.0
    } else {
        1.0 / (1.0 + g.exp())
    }
}

/// Logistic `y = 1/(1+e^{−z})` of a jet, from the series form of
/// `y' = y(1−y) z'`. Every intermediate stays bounded, unlike the quotient
/// form whose numerator and denominator overflow near the ends.
fn logistic(z: &Jet) -> Jet {
    let order = z.order();
    let z0 = z.value();
    let y0 = if z0 >= 0.0 { 1.0 / (1.0 + (-z0).exp()) } else { z0.exp() / (1.0 + z0.exp()) };
    let zc = z.coefficients();
    let mut y = vec![0.0; order + 1];
    let mut w = vec![0.0; order + 1];
    y[0] = y0;
    w[0] = y0 * (1.0 - y0);
    for k in 1..=order {
        let mut acc = 0.0;
        for i in 1..=k {
            acc += i as f64 * zc[i] * w[k - i];
        }
        y[k] = acc / k as f64;
        // w = y − y², coefficient k
        let mut sq = 0.0;
        for i in 0..=k {
            sq += y[i] * y[k - i];
        }
        w[k] = y[k] - sq;
    }
    Jet::from_coefficients(&y)
}

/// Jet of `S ∘ u` where `u` is a jet in the caller's variable.
pub fn smooth_step_jet(u: &Jet) -> Jet {
    let order = u.order();
    let u0 = u.value();
    if u0 <= 0.0 {
        return Jet::zero(order);
    }
    if u0 >= 1.0 {
        return Jet::constant(1.0, order);
    }
    let g0 = 1.0 / u0 - 1.0 / (1.0 - u0);
    if g0 > EXPONENT_CUTOFF {
        return Jet::zero(order);
    }
    if g0 < -EXPONENT_CUTOFF {
        return Jet::constant(1.0, order);
    }
    let one = Jet::constant(1.0, order);
    let g = u.recip() - (one - *u).recip();
    logistic(&(-g))
}

/// `∫_0^v S(u) du` for `v ∈ [0, 1]` by composite Simpson; `1/2` at `v = 1`.
pub fn smooth_step_integral(v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    if v >= 1.0 {
        return 0.5;
    }
    const PANELS: usize = 256;
    let h = v / PANELS as f64;
    let mut acc = smooth_step(0.0) + smooth_step(v);
    for i in 1..PANELS {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * smooth_step(i as f64 * h);
    }
    acc * h / 3.0
}

/// Jet at `x` of the bump equal to 1 on `|x − c| ≤ inner`, 0 on
/// `|x − c| ≥ outer`, and `S((outer − |x−c|)/(outer − inner))` between.
pub fn bump_jet(x: f64, center: f64, inner: f64, outer: f64, order: usize) -> Jet {
    let dist = (x - center).abs();
    if dist <= inner {
        return Jet::constant(1.0, order);
    }
    if dist >= outer {
        return Jet::zero(order);
    }
    let width = outer - inner;
    let sign = if x >= center { -1.0 } else { 1.0 };
    // u(x) = (outer − |x − c|)/width, linear on each side of c
    let mut u = Jet::variable(x, order).scale(sign / width);
    u = u.add_scalar((outer - dist) / width - u.value());
    smooth_step_jet(&u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_symmetry_and_limits() {
        for &u in &[0.01, 0.2, 0.37, 0.5, 0.8, 0.999] {
            assert!((smooth_step(u) + smooth_step(1.0 - u) - 1.0).abs() < 1e-15);
        }
        assert_eq!(smooth_step(0.5), 0.5);
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(2.0), 1.0);
    }

    #[test]
    fn step_jet_matches_finite_differences() {
        let u0 = 0.3;
        let jet = smooth_step_jet(&Jet::variable(u0, 3));
        let h = 1e-4;
        let d1 = (smooth_step(u0 + h) - smooth_step(u0 - h)) / (2.0 * h);
        let d2 = (smooth_step(u0 + h) - 2.0 * smooth_step(u0) + smooth_step(u0 - h)) / (h * h);
        assert!((jet.value() - smooth_step(u0)).abs() < 1e-15);
        assert!((jet.derivative(1) - d1).abs() < 1e-6 * d1.abs());
        assert!((jet.derivative(2) - d2).abs() < 1e-4 * (1.0 + d2.abs()));
    }

    #[test]
    fn step_jet_is_finite_near_the_ends() {
        for &u in &[1e-3, 1.5e-3, 2e-3, 0.998, 0.9985] {
            let j = smooth_step_jet(&Jet::variable(u, 8));
            assert!(j.coefficients().iter().all(|c| c.is_finite()), "u={u}");
        }
    }

    #[test]
    fn integral_of_full_step_is_half() {
        assert_eq!(smooth_step_integral(1.0), 0.5);
        assert!((smooth_step_integral(0.999_999) - 0.5).abs() < 2e-6);
        // reflection: I(1 − v) = 1/2 − v + I(v)
        let v = 0.3;
        assert!((smooth_step_integral(1.0 - v) - (0.5 - v + smooth_step_integral(v))).abs() < 1e-10);
    }

    #[test]
    fn bump_shape() {
        assert_eq!(bump_jet(4.0, 4.0, 1.0, 3.0, 2).value(), 1.0);
        assert_eq!(bump_jet(7.5, 4.0, 1.0, 3.0, 2).value(), 0.0);
        let left = bump_jet(2.0, 4.0, 1.0, 3.0, 1);
        let right = bump_jet(6.0, 4.0, 1.0, 3.0, 1);
        assert!((left.value() - 0.5).abs() < 1e-15 && (right.value() - 0.5).abs() < 1e-15);
        assert!(left.derivative(1) > 0.0 && right.derivative(1) < 0.0);
        assert!((left.derivative(1) + right.derivative(1)).abs() < 1e-14);
    }
}
