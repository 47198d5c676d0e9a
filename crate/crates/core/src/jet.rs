//! Truncated Taylor arithmetic.
//!
//! A [`Jet`] stores the normalized Taylor coefficients `c_k = f^(k)(x0) / k!`
//! of a function around a point, up to a fixed order. Arithmetic on jets
//! propagates derivatives exactly (up to rounding), which is how the crate
//! evaluates high-order derivatives of test functions and of the moment
//! recursion without numeric differentiation.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Largest supported derivative order plus one.
pub const MAX_JET_LEN: usize = 9;

/// Highest derivative order a [`Jet`] can carry.
pub const MAX_JET_ORDER: usize = MAX_JET_LEN - 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    len: usize,
    c: [f64; MAX_JET_LEN],
}

impl Jet {
    /// Constant jet carrying derivatives up to `order`.
    pub fn constant(value: f64, order: usize) -> Self {
        assert!(order <= MAX_JET_ORDER, "jet order {order} exceeds {MAX_JET_ORDER}");
        let mut c = [0.0; MAX_JET_LEN];
        c[0] = value;
        Self { len: order + 1, c }
    }

    /// The identity `x ↦ x` expanded at `x0`.
    pub fn variable(x0: f64, order: usize) -> Self {
        let mut j = Self::constant(x0, order);
        if order >= 1 {
            j.c[1] = 1.0;
        }
        j
    }

    /// Builds a jet from normalized Taylor coefficients.
    pub fn from_coefficients(coefficients: &[f64]) -> Self {
        assert!(!coefficients.is_empty() && coefficients.len() <= MAX_JET_LEN);
        let mut c = [0.0; MAX_JET_LEN];
        c[..coefficients.len()].copy_from_slice(coefficients);
        Self { len: coefficients.len(), c }
    }

    /// Builds a jet from plain derivatives `f(x0), f'(x0), ...`.
    pub fn from_derivatives(derivatives: &[f64]) -> Self {
        let mut j = Self::from_coefficients(derivatives);
        let mut fact = 1.0;
        for k in 1..j.len {
            fact *= k as f64;
            j.c[k] /= fact;
        }
        j
    }

    pub fn zero(order: usize) -> Self {
        Self::constant(0.0, order)
    }

    pub fn order(&self) -> usize {
        self.len - 1
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.c[..self.len]
    }

    /// The `k`-th derivative at the expansion point.
    pub fn derivative(&self, k: usize) -> f64 {
        if k >= self.len {
            return 0.0;
        }
        let mut fact = 1.0;
        for i in 2..=k {
            fact *= i as f64;
        }
        self.c[k] * fact
    }

    /// All derivatives `f(x0), f'(x0), ..., f^(order)(x0)`.
    pub fn derivatives(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.derivative(k)).collect()
    }

    pub fn scale(mut self, s: f64) -> Self {
        for v in &mut self.c[..self.len] {
            *v *= s;
        }
        self
    }

    pub fn add_scalar(mut self, s: f64) -> Self {
        self.c[0] += s;
        self
    }

    pub fn recip(&self) -> Self {
        Jet::constant(1.0, self.order()) / *self
    }

    pub fn exp(&self) -> Self {
        let mut e = Jet::zero(self.order());
        e.c[0] = self.c[0].exp();
        for k in 1..self.len {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * self.c[j] * e.c[k - j];
            }
            e.c[k] = acc / k as f64;
        }
        e
    }

    pub fn ln(&self) -> Self {
        let a0 = self.c[0];
        let mut l = Jet::zero(self.order());
        l.c[0] = a0.ln();
        for k in 1..self.len {
            let mut acc = 0.0;
            for j in 1..k {
                acc += j as f64 * l.c[j] * self.c[k - j];
            }
            l.c[k] = (self.c[k] - acc / k as f64) / a0;
        }
        l
    }

    /// Real power `self^t`; requires a positive constant term unless `t` is
    /// a non-negative integer (use [`Jet::powi`] for that case).
    pub fn powf(&self, t: f64) -> Self {
        let a0 = self.c[0];
        let mut p = Jet::zero(self.order());
        p.c[0] = a0.powf(t);
        for k in 1..self.len {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += ((t + 1.0) * j as f64 - k as f64) * self.c[j] * p.c[k - j];
            }
            p.c[k] = acc / (k as f64 * a0);
        }
        p
    }

    pub fn powi(&self, n: u32) -> Self {
        let mut out = Jet::constant(1.0, self.order());
        for _ in 0..n {
            out = out * *self;
        }
        out
    }

    /// Composition `f ∘ self` where `outer` holds the Taylor coefficients of
    /// `f` at `self.value()`.
    pub fn compose(&self, outer: &Jet) -> Self {
        let order = self.order().min(outer.order());
        let mut h = *self;
        h.c[0] = 0.0;
        let mut result = Jet::constant(outer.c[0], order);
        let mut power = Jet::constant(1.0, order);
        for k in 1..=order {
            power = power.truncate(order) * h.truncate(order);
            result = result + power.scale(outer.c[k]);
        }
        result
    }

    pub fn truncate(mut self, order: usize) -> Self {
        let len = (order + 1).min(self.len);
        for v in &mut self.c[len..] {
            *v = 0.0;
        }
        self.len = len;
        self
    }

    fn common_len(&self, other: &Jet) -> usize {
        self.len.min(other.len)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        let len = self.common_len(&rhs);
        let mut out = self.truncate(len - 1);
        for k in 0..len {
            out.c[k] += rhs.c[k];
        }
        out
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        self + (-rhs)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let len = self.common_len(&rhs);
        let mut out = Jet::zero(len - 1);
        for k in 0..len {
            let mut acc = 0.0;
            for j in 0..=k {
                acc += self.c[j] * rhs.c[k - j];
            }
            out.c[k] = acc;
        }
        out
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        let len = self.common_len(&rhs);
        let mut out = Jet::zero(len - 1);
        let d0 = rhs.c[0];
        for k in 0..len {
            let mut acc = self.c[k];
            for j in 1..=k {
                acc -= rhs.c[j] * out.c[k - j];
            }
            out.c[k] = acc / d0;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn exp_of_variable_has_unit_derivatives() {
        let e = Jet::variable(0.3, 6).exp();
        for k in 0..=6 {
            assert!(close(e.derivative(k), 0.3f64.exp(), 1e-14));
        }
    }

    #[test]
    fn powf_matches_falling_factorials() {
        let x = 2.5;
        let t = 1.5;
        let p = Jet::variable(x, 4).powf(t);
        let mut coef = 1.0;
        for k in 0..=4 {
            let expected = coef * x.powf(t - k as f64);
            assert!(close(p.derivative(k), expected, 1e-13), "k={k}");
            coef *= t - k as f64;
        }
    }

    #[test]
    fn division_inverts_multiplication() {
        let a = Jet::from_coefficients(&[1.0, 2.0, -1.0, 0.5]);
        let b = Jet::from_coefficients(&[3.0, 0.1, 0.2, -0.3]);
        let back = (a * b) / b;
        for (x, y) in back.coefficients().iter().zip(a.coefficients()) {
            assert!(close(*x, *y, 1e-14));
        }
    }

    #[test]
    fn ln_inverts_exp() {
        let a = Jet::from_coefficients(&[0.2, -0.7, 0.4, 1.1, 0.0]);
        let back = a.exp().ln();
        for (x, y) in back.coefficients().iter().zip(a.coefficients()) {
            assert!(close(*x, *y, 1e-13));
        }
    }

    #[test]
    fn compose_applies_chain_rule() {
        // sin-free check: (exp ∘ g) with g = 2x + x^2 at x0 = 0.1
        let g = Jet::variable(0.1, 5);
        let inner = g.scale(2.0) + g * g;
        let outer = Jet::variable(inner.value(), 5).exp();
        let composed = inner.compose(&outer);
        let direct = inner.exp();
        for k in 0..=5 {
            assert!(close(composed.derivative(k), direct.derivative(k), 1e-12));
        }
    }
}
