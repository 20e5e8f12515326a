//! Oracles shared by the integration targets.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

pub fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

pub fn rpow(p: &BigRational, k: usize) -> BigRational {
    (0..k).fold(BigRational::one(), |acc, _| acc * p)
}

pub fn binom(n: usize, k: usize) -> BigInt {
    let mut c = BigInt::one();
    for i in 0..k {
        c = c * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    c
}

/// Exact `P(K = k)` for `K ~ Binomial(m, p)`.
pub fn exact_pmf(p: &BigRational, m: usize) -> Vec<BigRational> {
    let q = BigRational::one() - p;
    (0..=m)
        .map(|k| BigRational::from_integer(binom(m, k)) * rpow(p, k) * rpow(&q, m - k))
        .collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if b == 0.0 {
        return a.abs() < 1e-300;
    }
    ((a - b) / b).abs() <= tol
}

/// Mutual information by grouping outputs on weight, with every
/// probability and ratio formed exactly and only the logarithm in floating
/// point.
pub fn c_m_weight_oracle(p01: f64, p11: f64, w: f64, m: usize) -> f64 {
    let (a, b, w1) = (rat(p01), rat(p11), rat(w));
    let w0 = BigRational::one() - &w1;
    let (ea, eb) = (exact_pmf(&a, m), exact_pmf(&b, m));
    let mut acc = 0.0;
    for k in 0..=m {
        let mix = &w0 * &ea[k] + &w1 * &eb[k];
        for (prior, pk) in [(&w0, &ea[k]), (&w1, &eb[k])] {
            if pk.is_zero() {
                continue;
            }
            let ratio = (pk / &mix).to_f64().unwrap();
            acc += (prior * pk).to_f64().unwrap() * ratio.ln();
        }
    }
    acc / std::f64::consts::LN_2
}

/// `F` written directly from the mixture ratio.
pub fn f_direct(x: f64, t: f64, b: f64) -> f64 {
    ((1.0 - t + t * x.exp()) / (1.0 - b + b * x.exp())).ln()
}

pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Exact `(P(K₁ ≤ b), P(K₀ > b))` for `K_i ~ Binomial(m, p_i)`.
pub fn exact_error_probs(p0: f64, p1: f64, m: usize, b: i64) -> (f64, f64) {
    let split = (b + 1) as usize;
    let sum = |v: &[BigRational]| v.iter().fold(BigRational::zero(), |a, x| a + x);
    let (pmf0, pmf1) = (exact_pmf(&rat(p0), m), exact_pmf(&rat(p1), m));
    (
        sum(&pmf1[..split]).to_f64().unwrap(),
        sum(&pmf0[split..]).to_f64().unwrap(),
    )
}
