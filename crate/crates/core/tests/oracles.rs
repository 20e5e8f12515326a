//! Independent oracles for the analytic pieces: exact rational binomial
//! sums, brute-force output enumeration, closed-form densities and
//! property checks.

mod common;

use proptest::prelude::*;

use common::{c_m_weight_oracle, exact_error_probs, f_direct, rel_close, simpson};

use pmtcomm::channel::{interval_pdf, single_photon_pdf, ChannelConfig, PmtParams};
use pmtcomm::counting::{
    count_detector, crossovers, error_probs, kl_bernoulli, log_mean_ratio, optimize_threshold_kl,
    z_of_c, ThresholdSearch,
};
use pmtcomm::detector::{weighted_cubic_fit, LlrFunction, StatisticDensity, XWeighting};
use pmtcomm::rates::{c_m, CrossoverPair};

#[test]
fn error_probs_match_exact_rationals() {
    let pairs = [
        (0.1, 0.3),
        (1e-3, 0.02),
        (0.25, 0.75),
        (0.01, 0.9),
        (0.4, 0.45),
    ];
    for &(p0, p1) in &pairs {
        for m in 1..=20usize {
            for b in -1..=m as i64 {
                let (pe01, pe10) = error_probs(p0, p1, m, b).unwrap();
                let (e01, e10) = exact_error_probs(p0, p1, m, b);
                assert!(
                    rel_close(pe01, e01, 1e-12),
                    "pe01 p=({p0},{p1}) M={m} b={b}: {pe01} vs {e01}"
                );
                assert!(
                    rel_close(pe10, e10, 1e-12),
                    "pe10 p=({p0},{p1}) M={m} b={b}: {pe10} vs {e10}"
                );
            }
        }
    }
}

/// Mutual information summed over all `2^m` output sequences.
fn c_m_brute(p01: f64, p11: f64, w: f64, m: usize) -> f64 {
    let mut acc = 0.0;
    for y in 0u32..(1 << m) {
        let k = y.count_ones() as i32;
        let l = m as i32 - k;
        let q0 = p01.powi(k) * (1.0 - p01).powi(l);
        let q1 = p11.powi(k) * (1.0 - p11).powi(l);
        let mix = (1.0 - w) * q0 + w * q1;
        for (prior, q) in [(1.0 - w, q0), (w, q1)] {
            if q > 0.0 {
                acc += prior * q * (q / mix).ln();
            }
        }
    }
    acc / std::f64::consts::LN_2
}

#[test]
fn c_m_matches_weight_enumeration() {
    let cases = [
        (0.1, 0.6, 0.5),
        (1e-3, 0.05, 0.5),
        (0.3, 0.35, 0.2),
        (0.02, 0.9, 0.7),
    ];
    for &(p01, p11, w) in &cases {
        let pair = CrossoverPair::new(p01, p11).unwrap();
        for m in 1..=20 {
            let got = c_m(&pair, w, m).unwrap();
            let want = c_m_weight_oracle(p01, p11, w, m);
            assert!(
                (got - want).abs() <= 1e-12,
                "({p01},{p11},{w}) M={m}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn c_m_matches_brute_force_sequences() {
    for &(p01, p11, w) in &[(0.1, 0.6, 0.5), (0.05, 0.3, 0.4)] {
        let pair = CrossoverPair::new(p01, p11).unwrap();
        for m in 1..=12 {
            let got = c_m(&pair, w, m).unwrap();
            let want = c_m_brute(p01, p11, w, m);
            assert!((got - want).abs() <= 1e-11, "M={m}: {got} vs {want}");
        }
    }
}

#[test]
fn cubic_fit_reproduces_cubics() {
    let k = [0.7, -1.3, 0.45, 0.08];
    let cubic = |v: f64| k[0] + v * (k[1] + v * (k[2] + v * k[3]));
    for &(lo, hi) in &[(-3.0, 0.0), (0.0, 3.0), (3.0, 6.0), (-40.0, 25.0)] {
        let n = 201;
        let nodes: Vec<f64> = (0..n)
            .map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64)
            .collect();
        let values: Vec<f64> = nodes.iter().map(|&v| cubic(v)).collect();
        let weights: Vec<f64> = nodes
            .iter()
            .map(|&v| (-(v - lo) / (hi - lo)).exp() + 0.1)
            .collect();
        let fit = weighted_cubic_fit(&nodes, &values, &weights).unwrap();
        for i in 0..4 {
            let scale = k[i].abs().max(1.0);
            assert!(
                (fit.coeffs[i] - k[i]).abs() <= 1e-9 * scale,
                "[{lo},{hi}] k{i}: {:?}",
                fit.coeffs
            );
        }
    }
}

#[test]
fn llr_symmetry_and_plateaus() {
    for &(t, b) in &[
        (0.01_f64, 1e-4_f64),
        (0.05, 0.005),
        (0.2, 0.01),
        (0.011, 0.01),
    ] {
        let f = LlrFunction::new(t, b).unwrap();
        let x0 = 0.5 * ((1.0 - t) * (1.0 - b) / (t * b)).ln();
        assert!((f.center() - x0).abs() <= 1e-12 * x0.abs());
        let fc = f.eval(x0);
        for d in [0.1, 1.0, 3.0, 10.0, 30.0] {
            let s = f.eval(x0 + d) + f.eval(x0 - d) - 2.0 * fc;
            assert!(s.abs() <= 1e-10, "symmetry ({t},{b}) d={d}: {s}");
            assert!((f.eval(x0 + d) - f_direct(x0 + d, t, b)).abs() <= 1e-10);
        }
        let left = ((1.0 - t) / (1.0 - b)).ln();
        let right = (t / b).ln();
        assert!((f.left_plateau() - left).abs() <= 1e-10);
        assert!((f.right_plateau() - right).abs() <= 1e-10);
        assert!((f.eval(x0 - 60.0) - left).abs() <= 1e-10);
        assert!((f.eval(x0 + 60.0) - right).abs() <= 1e-10);
        assert!((fc - 0.5 * (left + right)).abs() <= 1e-10);
    }
}

#[test]
fn output_densities_normalize() {
    for &(xi, s0, m) in &[
        (0.1, 0.1, 1usize),
        (0.1, 3.0, 1000),
        (0.3, 0.5, 10),
        (0.05, 0.02, 1),
    ] {
        let pmt = PmtParams::<f64>::normalized(xi, s0).unwrap();
        let tv = pmt.interval_thermal_var(m);
        for gamma in [0.01, 0.3, 2.0] {
            let top = 12.0 + 40.0 * gamma;
            let lo = -12.0 * tv.sqrt() - 1.0;
            let total = simpson(
                |z| interval_pdf(z, gamma, &pmt, m).unwrap(),
                lo,
                top,
                400_000,
            );
            assert!(
                (total - 1.0).abs() < 1e-6,
                "interval pdf xi={xi} s0={s0} M={m} γ={gamma}: {total}"
            );
            if gamma <= 1.0 {
                let sp = simpson(
                    |z| single_photon_pdf(z, gamma, &pmt, tv).unwrap(),
                    lo,
                    top,
                    400_000,
                );
                assert!((sp - 1.0).abs() < 1e-6, "single-photon pdf: {sp}");
            }
        }
    }
}

#[test]
fn statistic_density_normalizes() {
    for &(s0, xi) in &[(0.1, 0.1), (0.2, 0.1), (0.05, 0.3)] {
        let m = 1000;
        let cfg = ChannelConfig::<f64>::from_snr_db(10.0, 20.0, m, 0.5).unwrap();
        let pmt = PmtParams::<f64>::normalized(xi, s0 * (m as f64).sqrt()).unwrap();
        for weighting in [
            XWeighting::Marginal,
            XWeighting::SymbolZero,
            XWeighting::SymbolOne,
        ] {
            let d = StatisticDensity::new(&cfg, &pmt, weighting).unwrap();
            let c = *d.coefficients();
            let xmin = c.min_statistic();
            let s1 = (s0 * s0 + xi * xi).sqrt();
            let xmax = c.statistic(1.0 + 14.0 * s1).max(c.statistic(-14.0 * s0));
            // x = xmin + u² removes the square-root singularity at the vertex;
            // the transformed integrand has a finite limit at u = 0
            let umax = (xmax - xmin).sqrt();
            let g = |u: f64| {
                let u = u.max(1e-6);
                2.0 * u * d.eval(xmin + u * u).density
            };
            let total = simpson(g, 0.0, umax, 400_000);
            assert!(
                (total - 1.0).abs() < 1e-6,
                "s0={s0} xi={xi} {weighting:?}: {total}"
            );
        }
    }
}

#[test]
fn stein_exponent_for_count_test() {
    // best miss probability subject to a false-alarm cap decays at D(p0‖p1)
    let (p0, p1, eps) = (0.05_f64, 0.2_f64, 0.05_f64);
    let d = kl_bernoulli(p0, p1).unwrap();
    let mut prev = f64::INFINITY;
    for m in [500usize, 1000, 2000, 5000] {
        let b = (-1..=m as i64)
            .find(|&b| error_probs(p0, p1, m, b).unwrap().1 <= eps)
            .unwrap();
        let (pe01, _) = error_probs(p0, p1, m, b).unwrap();
        let rate = -pe01.ln() / m as f64;
        let rel = (rate - d).abs() / d;
        assert!(rel < prev, "relative error should shrink with M");
        prev = rel;
        if m == 5000 {
            assert!(rel < 0.10, "rate {rate} vs D {d}");
        }
    }
}

#[test]
fn dark_crossover_pinned_in_quiet_regime() {
    // with small thermal and shot noise, p0 stays at γ_b past the dark tail
    let m = 1000;
    let cfg = ChannelConfig::<f64>::from_snr_db(10.0, 20.0, m, 0.5).unwrap();
    for s0 in [0.02, 0.01] {
        let pmt = PmtParams::<f64>::normalized(0.02, s0 * (m as f64).sqrt()).unwrap();
        let tv = pmt.interval_thermal_var(m);
        let zhat = 8.0 * s0;
        for i in 0..=100 {
            let z = zhat + (0.9 - zhat) * i as f64 / 100.0;
            let (p0, _) = crossovers(z, cfg.gamma_t(), cfg.gamma_b(), &pmt, tv).unwrap();
            assert!((p0 - cfg.gamma_b()).abs() < 1e-3, "z={z}: {p0}");
        }
        let k = optimize_threshold_kl(&cfg, &pmt, tv, ThresholdSearch::default()).unwrap();
        assert!(k.min_kl > 0.0);
    }
}

proptest! {
    #[test]
    fn log_mean_ratio_is_monotone(a in 1e-3f64..50.0, b in 1e-3f64..50.0, f in 1.001f64..3.0) {
        // ln(b/a)/(b − a) is the reciprocal of the logarithmic mean
        let g = log_mean_ratio(a, b).unwrap();
        prop_assert!(g >= a.max(b).recip() * (1.0 - 1e-12) && g <= a.min(b).recip() * (1.0 + 1e-12));
        prop_assert!(log_mean_ratio(a * f, b).unwrap() < g);
        prop_assert!(log_mean_ratio(a, b * f).unwrap() < g);
    }

    #[test]
    fn kl_is_nonnegative(p in 0.0f64..=1.0, q in 1e-9f64..0.999_999_999) {
        let d = kl_bernoulli(p, q).unwrap();
        prop_assert!(d >= 0.0);
        if (p - q).abs() < 1e-15 {
            prop_assert!(d < 1e-12);
        }
    }

    #[test]
    fn crossovers_order_and_decrease(z in 0.05f64..0.95, dz in 1e-3f64..0.05, s0 in 0.02f64..0.3, xi in 0.0f64..0.3) {
        let pmt = PmtParams::<f64>::normalized(xi, s0).unwrap();
        let tv = s0 * s0;
        let (gt, gb) = (0.01, 1e-4);
        let (p0, p1) = crossovers(z, gt, gb, &pmt, tv).unwrap();
        prop_assert!(p0 < p1);
        let (q0, q1) = crossovers(z + dz, gt, gb, &pmt, tv).unwrap();
        prop_assert!(q0 <= p0 && q1 <= p1);
    }

    #[test]
    fn threshold_root_decreases_in_ratio(c in 1e-3f64..1e3, f in 1.01f64..10.0, s0 in 0.02f64..0.3, xi in 0.0f64..0.3) {
        let pmt = PmtParams::<f64>::normalized(xi, s0).unwrap();
        let tv = s0 * s0;
        if let (Ok(a), Ok(b)) = (z_of_c(c, &pmt, tv), z_of_c(c * f, &pmt, tv)) {
            prop_assert!(b.z < a.z);
        }
    }

    #[test]
    fn threshold_root_solves_density_ratio(c in 1e-2f64..1e2, s0 in 0.05f64..0.3, xi in 0.01f64..0.3) {
        let pmt = PmtParams::<f64>::normalized(xi, s0).unwrap();
        let tv = s0 * s0;
        let Ok(root) = z_of_c(c, &pmt, tv) else { return Ok(()) };
        let z = root.z;
        let s1 = tv + xi * xi;
        let lr = -z * z / (2.0 * tv) - 0.5 * tv.ln() + (z - 1.0).powi(2) / (2.0 * s1) + 0.5 * s1.ln();
        prop_assert!(((lr - c.ln()).exp() - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn error_tails_complement(p in 0.01f64..0.99, m in 1usize..200, frac in 0.0f64..1.0) {
        let b = ((m as f64 + 1.0) * frac) as i64 - 1;
        let (miss, _) = error_probs(0.0, p, m, b).unwrap();
        let (_, fire) = error_probs(p, 0.5, m, b).unwrap();
        prop_assert!((miss + fire - 1.0).abs() < 1e-12);
    }

    #[test]
    fn map_count_detector_beats_trivial(p0 in 1e-4f64..0.2, gap in 1e-3f64..0.5, m in 1usize..2000, w in 0.05f64..0.95) {
        let p1 = (p0 + gap).min(0.999);
        let det = count_detector(p0, p1, m, w).unwrap();
        prop_assert!(det.total_error <= w.min(1.0 - w) * (1.0 + 1e-9));
    }
}
