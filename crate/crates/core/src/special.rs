//! Polygamma functions of order 1 and 2 for positive real arguments.
//!
//! Both use upward recurrence until the argument reaches [`ASYMPTOTIC_FROM`]
//! and then the Bernoulli asymptotic series.

use crate::numeric::Scalar;

const ASYMPTOTIC_FROM: f64 = 6.0;

/// Bernoulli numbers B_2, B_4, ..., B_20.
const BERNOULLI_EVEN: [f64; 10] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
];

/// Trigamma ψ₁(x) = d²/dx² ln Γ(x), for x > 0. Returns NaN otherwise.
pub fn trigamma<T: Scalar>(x: T) -> T {
    if !(x > T::zero()) || !x.is_finite() {
        return if x == T::infinity() { T::zero() } else { T::nan() };
    }
    let mut x = x;
    let mut acc = T::zero();
    let lim = T::lit(ASYMPTOTIC_FROM);
    while x < lim {
        acc = acc + T::one() / (x * x);
        x = x + T::one();
    }
    // ψ₁(x) ~ 1/x + 1/(2x²) + Σ_k B_{2k} / x^{2k+1}
    let inv = T::one() / x;
    let inv2 = inv * inv;
    let mut series = T::zero();
    let mut pow = inv * inv2; // x^{-3}
    for &b in BERNOULLI_EVEN.iter() {
        series = series + T::lit(b) * pow;
        pow = pow * inv2;
    }
    acc + inv + T::lit(0.5) * inv2 + series
}

/// Tetragamma ψ₂(x) = d³/dx³ ln Γ(x), for x > 0. Returns NaN otherwise.
pub fn tetragamma<T: Scalar>(x: T) -> T {
    if !(x > T::zero()) || !x.is_finite() {
        return if x == T::infinity() { T::zero() } else { T::nan() };
    }
    let mut x = x;
    let mut acc = T::zero();
    let lim = T::lit(ASYMPTOTIC_FROM);
    let two = T::lit(2.0);
    while x < lim {
        acc = acc - two / (x * x * x);
        x = x + T::one();
    }
    // ψ₂(x) ~ -1/x² - 1/x³ - Σ_k (2k+1) B_{2k} / x^{2k+2}
    let inv = T::one() / x;
    let inv2 = inv * inv;
    let mut series = T::zero();
    let mut pow = inv2 * inv2; // x^{-4}
    for (i, &b) in BERNOULLI_EVEN.iter().enumerate() {
        let k = (i + 1) as f64;
        series = series + T::lit((2.0 * k + 1.0) * b) * pow;
        pow = pow * inv2;
    }
    acc - inv2 - inv2 * inv - series
}
