//! Transmission-rate bounds.
//!
//! The rate `I(X; Z)` of the sampled PMT output is sandwiched between two
//! binary asymmetric channels: the ideal counter `X → N` with crossovers
//! `(γ_b, γ_t)` and the thresholded receiver `X → N̂` with crossovers
//! `(t₀, t₁)`. All rates here are in bits.

use std::f64::consts::LN_2;

use crate::channel::{
    photon_mixture_pdf, poisson_truncation, poisson_weights, ChannelConfig, PmtParams,
};
use crate::error::{domain, Result};
use crate::quadrature::{integrate, QuadOptions};
use crate::scalar::{q_function, xlnx, Real};

/// Absolute tolerance of the quadrature mutual information, in bits.
pub const MI_TOL_BITS: f64 = 1e-9;

/// Densities below this are treated as zero inside `p ln p` integrands.
const DENSITY_FLOOR: f64 = 1e-300;

/// Crossover probabilities of a binary channel: `P(Y = 1 | X = 0)` and
/// `P(Y = 1 | X = 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossoverPair<T> {
    pub p01: T,
    pub p11: T,
}

impl<T: Real> CrossoverPair<T> {
    pub fn new(p01: T, p11: T) -> Result<Self> {
        let unit = |p: T| p >= T::zero() && p <= T::one();
        if !unit(p01) || !unit(p11) {
            return domain(format!(
                "crossover probabilities must lie in [0, 1], got ({p01}, {p11})"
            ));
        }
        Ok(Self { p01, p11 })
    }
}

/// Lower and upper bounds on `I(X; Z)` plus diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateBoundsReport<T> {
    /// `C_M(t₀, t₁, w)`.
    pub lower_bits: T,
    /// `C_M(γ_b, γ_t, w)`.
    pub upper_bits: T,
    /// Quadrature `I(X; Z₁)` under the single-photon mixture; `M = 1` only.
    pub exact_bits: Option<T>,
    /// `M·H(N₁ | N̂₁)`, an upper bound on `upper − lower`.
    pub gap_bound_bits: T,
}

impl<T: Real> RateBoundsReport<T> {
    /// `(upper − lower)/upper`, zero when both vanish.
    pub fn relative_gap(&self) -> T {
        if self.upper_bits > T::zero() {
            (self.upper_bits - self.lower_bits) / self.upper_bits
        } else {
            T::zero()
        }
    }
}

#[inline]
fn to_bits<T: Real>(nats: T) -> T {
    nats / T::lit(LN_2)
}

/// Binary entropy `H₂(x)` in bits.
pub fn binary_entropy<T: Real>(x: T) -> Result<T> {
    if !(x >= T::zero() && x <= T::one()) {
        return domain(format!("binary entropy argument {x} outside [0, 1]"));
    }
    Ok(binary_entropy_nats(x) / T::lit(LN_2))
}

#[inline]
fn binary_entropy_nats<T: Real>(x: T) -> T {
    -(xlnx(x) + xlnx(T::one() - x))
}

fn check_prior<T: Real>(w: T) -> Result<()> {
    if !(w > T::zero() && w < T::one()) {
        return domain(format!("prior {w} outside (0, 1)"));
    }
    Ok(())
}

/// Mutual information of a single-use binary asymmetric channel, in bits.
pub fn c1<T: Real>(pair: &CrossoverPair<T>, w: T) -> Result<T> {
    check_prior(w)?;
    let one = T::one();
    let mix = w * pair.p11 + (one - w) * pair.p01;
    let nats = binary_entropy_nats(mix)
        - w * binary_entropy_nats(pair.p11)
        - (one - w) * binary_entropy_nats(pair.p01);
    Ok(to_bits(nats.max(T::zero())))
}

/// Ideal photon-counting crossovers `(γ_b, γ_t)`.
pub fn crossover_counts<T: Real>(config: &ChannelConfig<T>) -> Result<CrossoverPair<T>> {
    if config.gamma_t() > T::one() {
        return domain(format!(
            "per-interval mean {} exceeds 1; single-photon regime violated",
            config.gamma_t()
        ));
    }
    CrossoverPair::new(config.gamma_b(), config.gamma_t())
}

/// Probability that an interval output exceeds `z_th` when the interval
/// holds one photoelectron with probability `gamma`.
pub fn fire_probability<T: Real>(z_th: T, gamma: T, pmt: &PmtParams<T>, thermal_var: T) -> T {
    let one = T::one();
    let q_dark = q_function(z_th / thermal_var.sqrt());
    let q_pulse =
        q_function((z_th - pmt.pulse_amplitude()) / (thermal_var + pmt.shot_var()).sqrt());
    (one - gamma) * q_dark + gamma * q_pulse
}

/// Thresholded-receiver crossovers `(t₀, t₁)` with per-interval thermal
/// variance `σ₀²/M`.
pub fn crossover_threshold<T: Real>(
    z_th: T,
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
) -> Result<CrossoverPair<T>> {
    if !(pmt.thermal_std_symbol > T::zero()) {
        return domain("thresholded crossovers need positive thermal noise");
    }
    let tv = pmt.interval_thermal_var(config.intervals);
    CrossoverPair::new(
        fire_probability(z_th, config.gamma_b(), pmt, tv),
        fire_probability(z_th, config.gamma_t(), pmt, tv),
    )
}

#[inline]
fn k_ln<T: Real>(k: T, p: T) -> T {
    if k == T::zero() {
        T::zero()
    } else {
        k * p.ln()
    }
}

/// Mutual information of `M` uses of a binary asymmetric channel with a
/// common input, in bits.
///
/// Output sequences are grouped by Hamming weight `k`; every sequence of a
/// given weight has the same probability, so the sum over `2^M` outputs
/// collapses to `M + 1` terms. The value is accumulated as
/// `Σ_x P(x) Σ_k P(k | x) ln(π_x(k)/π(k))` with `π` the per-sequence
/// probabilities, which equals `H(Y) − H(Y|X)` and avoids cancelling two
/// entropies of order `M`.
pub fn c_m<T: Real>(pair: &CrossoverPair<T>, w: T, intervals: usize) -> Result<T> {
    if intervals == 0 {
        return domain("interval count must be positive");
    }
    check_prior(w)?;
    let one = T::one();
    let m = T::from_usize_lossy(intervals);
    let (lw1, lw0) = (w.ln(), (one - w).ln());
    let mut ln_binom = T::zero();
    let mut acc = T::zero();
    for k in 0..=intervals {
        if k > 0 {
            ln_binom =
                ln_binom + (T::from_usize_lossy(intervals - k + 1) / T::from_usize_lossy(k)).ln();
        }
        let kf = T::from_usize_lossy(k);
        let lp0 = k_ln(kf, pair.p01) + k_ln(m - kf, one - pair.p01);
        let lp1 = k_ln(kf, pair.p11) + k_ln(m - kf, one - pair.p11);
        let lmix = crate::scalar::log_add_exp(lw0 + lp0, lw1 + lp1);
        for (lprior, lp) in [(lw0, lp0), (lw1, lp1)] {
            if lp == T::neg_infinity() {
                continue;
            }
            let weight = (lprior + ln_binom + lp).exp();
            acc = acc + weight * (lp - lmix);
        }
    }
    Ok(to_bits(acc.max(T::zero())))
}

fn mixture_breakpoints<T: Real>(pmt: &PmtParams<T>, thermal_var: T, n_max: usize) -> Vec<T> {
    let ae = pmt.pulse_amplitude();
    let mut pts = Vec::new();
    for n in 0..=n_max {
        let nf = T::from_usize_lossy(n);
        let centre = nf * ae;
        let std = (nf * pmt.shot_var() + thermal_var).sqrt();
        for k in [-12.0, -6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0, 12.0] {
            pts.push(centre + T::lit(k) * std);
        }
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    pts
}

fn mutual_information_of<T: Real>(
    weights0: &[T],
    weights1: &[T],
    prior_one: T,
    pmt: &PmtParams<T>,
    thermal_var: T,
) -> Result<T> {
    let one = T::one();
    let floor = T::lit(DENSITY_FLOOR);
    let n_max = weights0.len().max(weights1.len()) - 1;
    let pts = mixture_breakpoints(pmt, thermal_var, n_max);
    let integrand = |z: T| {
        let p0 = photon_mixture_pdf(z, weights0, pmt, thermal_var).unwrap_or(T::zero());
        let p1 = photon_mixture_pdf(z, weights1, pmt, thermal_var).unwrap_or(T::zero());
        let p = (one - prior_one) * p0 + prior_one * p1;
        let term = |q: T| {
            if q > floor && p > floor {
                q * (q / p).ln()
            } else {
                T::zero()
            }
        };
        (one - prior_one) * term(p0) + prior_one * term(p1)
    };
    let opts = QuadOptions {
        abs_tol: (MI_TOL_BITS * LN_2 * 0.1).max(T::epsilon().as_f64() * 1e3),
        ..QuadOptions::default()
    };
    let r = integrate(integrand, &pts, opts)?;
    Ok(to_bits(r.value.max(T::zero())))
}

/// Single-interval mutual information `I(X; Z₁)` by adaptive quadrature.
///
/// Uses per-interval means `γ_b`, `γ_t` and thermal variance `σ₀²/M`.
/// With `approx` the output densities are the single-photon mixtures,
/// otherwise the truncated Poisson mixtures.
pub fn mi_exact_quadrature<T: Real>(
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
    approx: bool,
) -> Result<T> {
    if !(pmt.thermal_std_symbol > T::zero()) {
        return domain("quadrature mutual information needs positive thermal noise");
    }
    let tv = pmt.interval_thermal_var(config.intervals);
    let (gb, gt) = (config.gamma_b(), config.gamma_t());
    if gb == gt {
        return Ok(T::zero());
    }
    let (w0, w1) = if approx {
        if gt > T::one() {
            return domain("single-photon approximation needs γ_t ≤ 1");
        }
        (vec![T::one() - gb, gb], vec![T::one() - gt, gt])
    } else {
        let n = poisson_truncation(gt).max(poisson_truncation(gb));
        let pad = |mut v: Vec<T>| {
            v.resize(n + 1, T::zero());
            v
        };
        (pad(poisson_weights(gb)?), pad(poisson_weights(gt)?))
    };
    mutual_information_of(&w0, &w1, config.prior_one, pmt, tv)
}

/// `(true Poisson-mixture rate, single-photon-approximation rate)`, bits.
pub fn mi_true_vs_single_photon<T: Real>(
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
) -> Result<(T, T)> {
    Ok((
        mi_exact_quadrature(config, pmt, false)?,
        mi_exact_quadrature(config, pmt, true)?,
    ))
}

/// `H(N₁ | N̂₁)` in bits for a threshold detector at `z_th`.
pub fn gap_diagnostic<T: Real>(
    z_th: T,
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
) -> Result<T> {
    if !(pmt.thermal_std_symbol > T::zero()) {
        return domain("gap diagnostic needs positive thermal noise");
    }
    let one = T::one();
    let tv = pmt.interval_thermal_var(config.intervals);
    let x1 = (z_th - pmt.pulse_amplitude()) / (pmt.shot_var() + tv).sqrt();
    let x2 = z_th / tv.sqrt();
    let (fire1, miss1) = (q_function(x1), q_function(-x1));
    let (fire0, miss0) = (q_function(x2), q_function(-x2));
    let w = config.prior_one;
    let r1 = (one - w) * config.gamma_b() + w * config.gamma_t();
    let r0 = one - r1;

    let branch = |a: T, b: T| -> T {
        // a = P(N̂ = n̂, N = 1), b = P(N̂ = n̂, N = 0)
        let total = a + b;
        if total <= T::zero() {
            return T::zero();
        }
        total * binary_entropy_nats(a / total)
    };
    let nats = branch(miss1 * r1, miss0 * r0) + branch(fire1 * r1, fire0 * r0);
    Ok(to_bits(nats))
}

/// Threshold-receiver lower bound and ideal-counter upper bound on the
/// rate of `M` intervals.
pub fn rate_bounds<T: Real>(
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
    z_th: T,
) -> Result<RateBoundsReport<T>> {
    let w = config.prior_one;
    let m = config.intervals;
    let lower = c_m(&crossover_threshold(z_th, config, pmt)?, w, m)?;
    let upper = c_m(&crossover_counts(config)?, w, m)?;
    let exact = if m == 1 {
        Some(mi_exact_quadrature(config, pmt, true)?)
    } else {
        None
    };
    let gap = T::from_usize_lossy(m) * gap_diagnostic(z_th, config, pmt)?;
    Ok(RateBoundsReport {
        lower_bits: lower,
        upper_bits: upper,
        exact_bits: exact,
        gap_bound_bits: gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: f64, b: f64) -> CrossoverPair<f64> {
        CrossoverPair::new(a, b).unwrap()
    }

    #[test]
    fn binary_entropy_examples() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        let h = binary_entropy(0.11_f64).unwrap();
        let direct = -(0.11 * 0.11f64.log2() + 0.89 * 0.89f64.log2());
        assert!((h - direct).abs() < 1e-15);
        assert!((h - 0.499_915_958).abs() < 1e-6);
        assert!(binary_entropy(1.2).is_err());
    }

    #[test]
    fn c1_examples() {
        assert!(c1(&pair(0.3, 0.3), 0.2).unwrap().abs() < 1e-15);
        assert!((c1(&pair(0.0, 1.0), 0.5).unwrap() - 1.0).abs() < 1e-15);
        let v = c1(&pair(0.1, 0.9), 0.5).unwrap();
        assert!((v - (1.0 - binary_entropy(0.1).unwrap())).abs() < 1e-14);
        assert!((v - 0.531_004).abs() < 1e-6);
        assert!(c1(&pair(0.1, 0.9), 0.0).is_err());
    }

    #[test]
    fn c_m_reduces_to_c1() {
        for &(a, b, w) in &[(0.1, 0.9, 0.5), (1e-4, 0.0101, 0.3), (0.2, 0.25, 0.7)] {
            let p = pair(a, b);
            assert!((c_m(&p, w, 1).unwrap() - c1(&p, w).unwrap()).abs() < 1e-14);
        }
        assert!(c_m(&pair(0.1, 0.2), 0.5, 0).is_err());
        for m in [1, 7, 1000] {
            assert!(c_m(&pair(0.02, 0.02), 0.5, m).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn crossover_counts_examples() {
        let c = ChannelConfig::<f64>::new(10.0, 0.0, 1000, 0.5).unwrap();
        assert_eq!(crossover_counts(&c).unwrap().p01, 0.0);
        let c = ChannelConfig::<f64>::new(10.0, 0.1, 1000, 0.5).unwrap();
        let p = crossover_counts(&c).unwrap();
        assert!((p.p01 - 1e-4).abs() < 1e-18 && (p.p11 - 1.01e-2).abs() < 1e-16);
        let big = ChannelConfig::<f64>::new(10.0, 0.1, 1_000_000_000, 0.5).unwrap();
        let p = crossover_counts(&big).unwrap();
        assert!(p.p01 < 1e-9 && p.p11 < 1e-7);
        assert!(crossover_counts(&ChannelConfig::<f64>::new(2.0, 0.1, 1, 0.5).unwrap()).is_err());
    }

    #[test]
    fn crossover_threshold_examples() {
        let c = ChannelConfig::<f64>::new(0.09, 0.01, 1, 0.5).unwrap();
        // vanishing noise: (t0, t1) -> (γ_b, γ_t)
        let quiet = PmtParams::<f64>::normalized(1e-4, 1e-4).unwrap();
        let t = crossover_threshold(0.5, &c, &quiet).unwrap();
        assert!((t.p01 - 0.01).abs() < 1e-12 && (t.p11 - 0.1).abs() < 1e-12);
        let p = PmtParams::<f64>::normalized(0.1, 0.1).unwrap();
        let t = crossover_threshold(-1e3, &c, &p).unwrap();
        assert!((t.p01 - 1.0).abs() < 1e-15 && (t.p11 - 1.0).abs() < 1e-15);
        // erfc oracle from a separate implementation (accurate to ~1e-10 relative)
        let t = crossover_threshold(0.5, &c, &p).unwrap();
        let q = |x: f64| 0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2);
        let s1 = (0.01_f64 + 0.01).sqrt();
        assert!((t.p01 - (0.99 * q(5.0) + 0.01 * q(-0.5 / s1))).abs() < 1e-12);
        assert!((t.p11 - (0.9 * q(5.0) + 0.1 * q(-0.5 / s1))).abs() < 1e-12);
        let no_thermal = PmtParams::<f64>::normalized(0.1, 0.0).unwrap();
        assert!(crossover_threshold(0.5, &c, &no_thermal).is_err());
    }

    #[test]
    fn quadrature_mi_vanishes_without_signal() {
        let c = ChannelConfig::<f64>::new(0.0, 0.01, 1, 0.5).unwrap();
        let p = PmtParams::<f64>::normalized(0.1, 0.1).unwrap();
        assert_eq!(mi_exact_quadrature(&c, &p, true).unwrap(), 0.0);
        assert_eq!(mi_true_vs_single_photon(&c, &p).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn gap_diagnostic_limits() {
        let c = ChannelConfig::<f64>::new(0.09, 0.01, 1, 0.5).unwrap();
        let quiet = PmtParams::<f64>::normalized(1e-3, 1e-3).unwrap();
        assert!(gap_diagnostic(0.5, &c, &quiet).unwrap() < 1e-12);
        // r1 = 0: N₁ deterministic
        let dark = ChannelConfig::<f64>::new(0.0, 0.0, 1, 0.5).unwrap();
        let p = PmtParams::<f64>::normalized(0.1, 0.2).unwrap();
        assert_eq!(gap_diagnostic(0.5, &dark, &p).unwrap(), 0.0);
        let mut prev = f64::INFINITY;
        for s0 in [0.2, 0.15, 0.1, 0.05] {
            let p = PmtParams::<f64>::normalized(0.1, s0).unwrap();
            let g = gap_diagnostic(0.5, &c, &p).unwrap();
            assert!(g < prev, "σ₀ = {s0}: {g} !< {prev}");
            prev = g;
        }
    }

    #[test]
    fn f32_instantiation_agrees() {
        let p32 = CrossoverPair::<f32>::new(0.001, 0.01).unwrap();
        let p64 = pair(0.001, 0.01);
        let a = c_m(&p32, 0.5, 100).unwrap() as f64;
        let b = c_m(&p64, 0.5, 100).unwrap();
        assert!((a - b).abs() < 1e-4 * b.max(1e-3));
    }
}
