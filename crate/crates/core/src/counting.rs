//! Non-ideal photon-counting receiver.
//!
//! Each interval output is hard-limited at `z_th`; the number of firing
//! intervals is binomial with per-interval rate `p₀` or `p₁`, and the symbol
//! is decided by comparing the count against a MAP threshold. The per-interval
//! threshold is chosen either by minimizing the exact symbol error or by
//! maximizing the smaller of the two Bernoulli KL distances.

use rayon::prelude::*;

use crate::channel::{ChannelConfig, PmtParams};
use crate::error::{domain, Error, Result};
use crate::rates::fire_probability;
use crate::scalar::{log_sum_exp, Real};

/// Default number of uniform grid points for threshold searches.
pub const DEFAULT_GRID: usize = 1000;

/// Smallest accepted grid for threshold searches.
pub const MIN_GRID: usize = 100;

/// Golden-section refinement stops once the bracket is below this fraction
/// of `Ae`.
pub const REFINE_TOL: f64 = 1e-6;

/// Fraction of the peak min-KL value that counts as the flat regime.
pub const PLATEAU_FRACTION: f64 = 0.95;

/// Relative closeness to the peak below which profile values are treated
/// as indistinguishable from it.
pub const RESOLUTION_REL: f64 = 1e-10;

/// Per-interval hard-decision channel at threshold `z_th`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HardDecisionModel<T> {
    pub z_th: T,
    pub p0: T,
    pub p1: T,
    pub intervals: usize,
    pub prior_one: T,
}

impl<T: Real> HardDecisionModel<T> {
    pub fn new(
        z_th: T,
        config: &ChannelConfig<T>,
        pmt: &PmtParams<T>,
        thermal_var: T,
    ) -> Result<Self> {
        let (p0, p1) = crossovers(z_th, config.gamma_t(), config.gamma_b(), pmt, thermal_var)?;
        Ok(Self {
            z_th,
            p0,
            p1,
            intervals: config.intervals,
            prior_one: config.prior_one,
        })
    }

    /// MAP count detector for this model.
    pub fn detector(&self) -> Result<CountDetector<T>> {
        count_detector(self.p0, self.p1, self.intervals, self.prior_one)
    }

    /// `(D(p₀‖p₁), D(p₁‖p₀))` in nats.
    pub fn kl_pair(&self) -> Result<(T, T)> {
        Ok((
            kl_bernoulli(self.p0, self.p1)?,
            kl_bernoulli(self.p1, self.p0)?,
        ))
    }
}

/// Count-threshold detector and its error probabilities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountDetector<T> {
    /// Decide 1 iff the count exceeds `b_th`; `−1` means always decide 1.
    pub b_th: i64,
    /// `P(decide 0 | X = 1)`.
    pub pe01: T,
    /// `P(decide 1 | X = 0)`.
    pub pe10: T,
    pub total_error: T,
}

impl<T: Real> CountDetector<T> {
    #[inline]
    pub fn decide(&self, count: usize) -> bool {
        count as i64 > self.b_th
    }
}

/// Min-KL profile over a grid of thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct KlProfile<T> {
    pub grid: Vec<T>,
    /// `D(p₀‖p₁)` in nats.
    pub d01: Vec<T>,
    /// `D(p₁‖p₀)` in nats.
    pub d10: Vec<T>,
    pub min_kl: Vec<T>,
    /// Grid point with the largest `min_kl`.
    pub argmax: T,
    /// Measure of `{z : min_kl(z) ≥ PLATEAU_FRACTION · max}`.
    pub plateau_width: T,
}

impl<T: Real> KlProfile<T> {
    fn from_grid(grid: Vec<T>, pairs: Vec<(T, T)>) -> Result<Self> {
        if grid.is_empty() {
            return domain("empty threshold grid");
        }
        let (d01, d10): (Vec<T>, Vec<T>) = pairs.into_iter().unzip();
        let min_kl: Vec<T> = d01.iter().zip(&d10).map(|(&a, &b)| a.min(b)).collect();
        let best = argmax(&min_kl);
        let plateau_width = plateau_width(&grid, &min_kl, T::lit(PLATEAU_FRACTION));
        Ok(Self {
            argmax: grid[best],
            grid,
            d01,
            d10,
            min_kl,
            plateau_width,
        })
    }

    pub fn max_min_kl(&self) -> T {
        self.min_kl.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// True when at least three grid points sit within `1e-10` (relative)
    /// of the peak: the curve is flat to rounding there and the argmax is
    /// not resolvable in this precision.
    pub fn resolution_limited(&self) -> bool {
        let peak = self.max_min_kl();
        let level = peak - T::lit(RESOLUTION_REL) * peak.abs();
        self.min_kl.iter().filter(|&&v| v >= level).count() >= 3
    }

    /// True when any divergence on the grid is infinite.
    pub fn has_infinite(&self) -> bool {
        self.d01.iter().chain(&self.d10).any(|v| v.is_infinite())
    }
}

fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Measure of the grid cells (midpoint rule) whose value is at least
/// `fraction` of the maximum.
pub fn plateau_width<T: Real>(grid: &[T], values: &[T], fraction: T) -> T {
    let n = grid.len();
    if n < 2 {
        return T::zero();
    }
    let peak = values.iter().copied().fold(T::neg_infinity(), T::max);
    let level = fraction * peak;
    let half = T::lit(0.5);
    (0..n)
        .filter(|&i| values[i] >= level)
        .map(|i| {
            let lo = if i == 0 {
                grid[0]
            } else {
                half * (grid[i - 1] + grid[i])
            };
            let hi = if i == n - 1 {
                grid[n - 1]
            } else {
                half * (grid[i] + grid[i + 1])
            };
            hi - lo
        })
        .fold(T::zero(), |a, b| a + b)
}

/// Per-interval fire probabilities `(p₀, p₁)` at threshold `z_th`.
pub fn crossovers<T: Real>(
    z_th: T,
    gamma_t: T,
    gamma_b: T,
    pmt: &PmtParams<T>,
    thermal_var: T,
) -> Result<(T, T)> {
    if !(thermal_var > T::zero()) {
        return domain("thermal variance must be positive");
    }
    Ok((
        fire_probability(z_th, gamma_b, pmt, thermal_var),
        fire_probability(z_th, gamma_t, pmt, thermal_var),
    ))
}

/// MAP count threshold `B_th` clamped to `[−1, M]`.
///
/// Ties (count exactly on the boundary) decide 0.
pub fn count_threshold<T: Real>(p0: T, p1: T, intervals: usize, eta: T) -> Result<i64> {
    if p0 == p1 {
        return Err(Error::Degenerate(format!(
            "p0 = p1 = {p0}: counts carry no information"
        )));
    }
    let one = T::one();
    if !(p0 > T::zero() && p0 < p1 && p1 < one) {
        return domain(format!("need 0 < p0 < p1 < 1, got p0 = {p0}, p1 = {p1}"));
    }
    let m = T::from_usize_lossy(intervals);
    let ln_fail = (one - p1).ln() - (one - p0).ln();
    let slope = p1.ln() - p0.ln() - ln_fail;
    let r = (eta - m * ln_fail) / slope;
    Ok(clamp_count(r, intervals))
}

fn clamp_count<T: Real>(r: T, intervals: usize) -> i64 {
    if r.is_nan() {
        return -1;
    }
    if r >= T::from_usize_lossy(intervals) {
        return intervals as i64;
    }
    if r < T::zero() {
        return -1;
    }
    // rounding can land an exact boundary just below the integer
    let nudge = T::lit(64.0) * T::epsilon() * r.max(T::one());
    (r + nudge)
        .floor()
        .to_i64()
        .unwrap_or(-1)
        .clamp(-1, intervals as i64)
}

fn ln_pow<T: Real>(k: T, p: T) -> T {
    if k == T::zero() {
        T::zero()
    } else {
        k * p.ln()
    }
}

/// Log binomial pmf terms `ln[C(M,k)pᵏ(1−p)^{M−k}]`, `k = 0..=M`, up to a
/// common additive constant.
fn binomial_log_terms<T: Real>(p: T, intervals: usize) -> Vec<T> {
    let m = T::from_usize_lossy(intervals);
    let mut out = Vec::with_capacity(intervals + 1);
    let mut ln_binom = T::zero();
    for k in 0..=intervals {
        if k > 0 {
            ln_binom =
                ln_binom + (T::from_usize_lossy(intervals - k + 1) / T::from_usize_lossy(k)).ln();
        }
        let kf = T::from_usize_lossy(k);
        out.push(ln_binom + ln_pow(kf, p) + ln_pow(m - kf, T::one() - p));
    }
    out
}

/// Lower tail `P(K ≤ b)` and upper tail `P(K > b)` of `Binomial(M, p)`,
/// each accumulated directly in the log domain and normalized by the total
/// so neither is formed as a difference.
fn binomial_tails<T: Real>(p: T, intervals: usize, b: i64) -> (T, T) {
    let terms = binomial_log_terms(p, intervals);
    let total = log_sum_exp(&terms);
    let split = (b + 1).clamp(0, intervals as i64 + 1) as usize;
    let lower = log_sum_exp(&terms[..split]);
    let upper = log_sum_exp(&terms[split..]);
    ((lower - total).exp(), (upper - total).exp())
}

/// `(pe01, pe10)` for count threshold `b_th`.
pub fn error_probs<T: Real>(p0: T, p1: T, intervals: usize, b_th: i64) -> Result<(T, T)> {
    let unit = |p: T| p >= T::zero() && p <= T::one();
    if !(unit(p0) && unit(p1)) {
        return domain("crossover probabilities must lie in [0, 1]");
    }
    if b_th < -1 || b_th > intervals as i64 {
        return domain(format!("count threshold {b_th} outside [-1, {intervals}]"));
    }
    let (pe01, _) = binomial_tails(p1, intervals, b_th);
    let (_, pe10) = binomial_tails(p0, intervals, b_th);
    Ok((pe01, pe10))
}

/// MAP count detector with its error probabilities. Equal crossovers fall
/// back to always deciding the more probable symbol.
pub fn count_detector<T: Real>(
    p0: T,
    p1: T,
    intervals: usize,
    prior_one: T,
) -> Result<CountDetector<T>> {
    let one = T::one();
    let eta = ((one - prior_one) / prior_one).ln();
    let b_th = if p0 == p1 {
        if eta >= T::zero() {
            intervals as i64
        } else {
            -1
        }
    } else {
        count_threshold(p0, p1, intervals, eta)?
    };
    let (pe01, pe10) = error_probs(p0, p1, intervals, b_th)?;
    Ok(CountDetector {
        b_th,
        pe01,
        pe10,
        total_error: (one - prior_one) * pe10 + prior_one * pe01,
    })
}

/// `D(p‖q) = p ln(p/q) + (1−p) ln((1−p)/(1−q))` in nats; `+∞` when `q` is
/// 0 or 1 and differs from `p`.
pub fn kl_bernoulli<T: Real>(p: T, q: T) -> Result<T> {
    let unit = |v: T| v >= T::zero() && v <= T::one();
    if !(unit(p) && unit(q)) {
        return domain(format!(
            "Bernoulli parameters must lie in [0, 1], got {p}, {q}"
        ));
    }
    let one = T::one();
    let term = |a: T, b: T| -> T {
        if a == T::zero() {
            T::zero()
        } else if b == T::zero() {
            T::infinity()
        } else {
            a * (a / b).ln()
        }
    };
    Ok((term(p, q) + term(one - p, one - q)).max(T::zero()))
}

/// Converts nats to bits.
pub fn nats_to_bits<T: Real>(v: T) -> T {
    v / T::LN_2()
}

/// Threshold search: `grid` uniform points on `(0, Ae)` followed by
/// golden-section refinement around the best one.
#[derive(Clone, Copy, Debug)]
pub struct ThresholdSearch {
    pub grid: usize,
    pub refine_tol: f64,
}

impl Default for ThresholdSearch {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            refine_tol: REFINE_TOL,
        }
    }
}

/// Outcome of a one-dimensional threshold search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchResult<T> {
    pub z_th: T,
    pub value: T,
    /// Objective constant over the grid; `z_th` is then the midpoint.
    pub flat: bool,
}

fn uniform_grid<T: Real>(upper: T, n: usize) -> Vec<T> {
    let denom = T::from_usize_lossy(n + 1);
    (0..n)
        .map(|i| upper * T::from_usize_lossy(i + 1) / denom)
        .collect()
}

/// Minimizes `objective` over `(0, upper)`.
fn minimize<T, F>(objective: F, upper: T, search: ThresholdSearch) -> Result<SearchResult<T>>
where
    T: Real,
    F: Fn(T) -> Result<T> + Sync,
{
    if search.grid < MIN_GRID {
        return domain(format!("threshold grid needs at least {MIN_GRID} points"));
    }
    let grid = uniform_grid(upper, search.grid);
    let values: Vec<T> = grid
        .par_iter()
        .map(|&z| objective(z))
        .collect::<Result<_>>()?;
    let lo_v = values.iter().copied().fold(T::infinity(), T::min);
    let hi_v = values.iter().copied().fold(T::neg_infinity(), T::max);
    if hi_v - lo_v <= T::lit(4.0) * T::epsilon() * hi_v.abs().max(T::min_positive_value()) {
        let mid = upper * T::lit(0.5);
        return Ok(SearchResult {
            z_th: mid,
            value: objective(mid)?,
            flat: true,
        });
    }
    let best = values
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v < values[b] { i } else { b });
    let mut a = if best == 0 { T::zero() } else { grid[best - 1] };
    let mut b = if best + 1 == grid.len() {
        upper
    } else {
        grid[best + 1]
    };
    let tol = T::lit(search.refine_tol) * upper;
    let inv_phi = T::lit(0.618_033_988_749_894_8);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = objective(c)?;
    let mut fd = objective(d)?;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d)?;
        }
    }
    let (z, v) = if fc <= fd { (c, fc) } else { (d, fd) };
    Ok(if v <= values[best] {
        SearchResult {
            z_th: z,
            value: v,
            flat: false,
        }
    } else {
        SearchResult {
            z_th: grid[best],
            value: values[best],
            flat: false,
        }
    })
}

/// Error-optimal threshold and its detector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorOptimum<T> {
    pub model: HardDecisionModel<T>,
    pub detector: CountDetector<T>,
    pub flat: bool,
}

/// Minimizes `(1−w)pe10 + w·pe01` over `z_th ∈ (0, Ae)`.
pub fn optimize_threshold_error<T: Real>(
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
    thermal_var: T,
    search: ThresholdSearch,
) -> Result<ErrorOptimum<T>> {
    let objective = |z: T| -> Result<T> {
        Ok(HardDecisionModel::new(z, config, pmt, thermal_var)?
            .detector()?
            .total_error)
    };
    let found = minimize(objective, pmt.pulse_amplitude(), search)?;
    let model = HardDecisionModel::new(found.z_th, config, pmt, thermal_var)?;
    Ok(ErrorOptimum {
        detector: model.detector()?,
        model,
        flat: found.flat,
    })
}

/// KL-optimal threshold with the grid profile.
#[derive(Clone, Debug, PartialEq)]
pub struct KlOptimum<T> {
    pub model: HardDecisionModel<T>,
    pub d01: T,
    pub d10: T,
    pub min_kl: T,
    pub profile: KlProfile<T>,
    pub flat: bool,
}

impl<T: Real> KlOptimum<T> {
    pub fn z_th(&self) -> T {
        self.model.z_th
    }
}

fn min_kl_at<T: Real>(
    z: T,
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
    thermal_var: T,
) -> Result<(T, T)> {
    HardDecisionModel::new(z, config, pmt, thermal_var)?.kl_pair()
}

/// Maximizes `min{D(p₀‖p₁), D(p₁‖p₀)}` over `z_th ∈ (0, Ae)`.
pub fn optimize_threshold_kl<T: Real>(
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
    thermal_var: T,
    search: ThresholdSearch,
) -> Result<KlOptimum<T>> {
    let objective = |z: T| -> Result<T> {
        let (a, b) = min_kl_at(z, config, pmt, thermal_var)?;
        Ok(-a.min(b))
    };
    let found = minimize(objective, pmt.pulse_amplitude(), search)?;
    let grid = uniform_grid(pmt.pulse_amplitude(), search.grid);
    let profile = sensitivity_profile(config, pmt, thermal_var, &grid)?;
    let model = HardDecisionModel::new(found.z_th, config, pmt, thermal_var)?;
    let (d01, d10) = model.kl_pair()?;
    Ok(KlOptimum {
        model,
        d01,
        d10,
        min_kl: d01.min(d10),
        profile,
        flat: found.flat,
    })
}

/// Min-KL curve over `z_grid ⊂ (0, Ae)` with its plateau width.
pub fn sensitivity_profile<T: Real>(
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
    thermal_var: T,
    z_grid: &[T],
) -> Result<KlProfile<T>> {
    let ae = pmt.pulse_amplitude();
    if z_grid.iter().any(|&z| !(z > T::zero() && z < ae)) {
        return domain("profile grid must lie inside (0, Ae)");
    }
    let pairs: Vec<(T, T)> = z_grid
        .par_iter()
        .map(|&z| min_kl_at(z, config, pmt, thermal_var))
        .collect::<Result<_>>()?;
    KlProfile::from_grid(z_grid.to_vec(), pairs)
}

/// `G(a, b) = (ln b − ln a)/(b − a)`, with `G(a, a) = 1/a`.
pub fn log_mean_ratio<T: Real>(a: T, b: T) -> Result<T> {
    if !(a > T::zero() && b > T::zero()) {
        return domain("log_mean_ratio needs positive arguments");
    }
    if a == b {
        return Ok(a.recip());
    }
    // ln(b/a)/(b − a) through ln_1p for nearby arguments
    Ok(((b - a) / a).ln_1p() / (b - a))
}

/// Solution of `G(Z; 0, σ₀²)/G(Z; Ae, σ²+σ₀²) = C`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdRoot<T> {
    pub z: T,
    /// `σ = 0`: the relation is linear in `Z` and solved as such.
    pub linear_fallback: bool,
}

/// Threshold at which the dark-to-pulse density ratio equals `c`.
///
/// The quadratic `αZ² + 2βZ + γ = 0` with `α = 1/σ₀² − 1/s₁²`,
/// `β = Ae/s₁²`, `γ = 2ln(Cσ₀/s₁) − Ae²/s₁²`, `s₁² = σ² + σ₀²` is solved for
/// the `+` root in the cancellation-free form `−γ/(β + √(β² − αγ))`, which
/// reduces to the linear solution when `α = 0`.
pub fn z_of_c<T: Real>(c: T, pmt: &PmtParams<T>, thermal_var: T) -> Result<ThresholdRoot<T>> {
    if !(c > T::zero()) || !c.is_finite() {
        return domain(format!(
            "density ratio must be positive and finite, got {c}"
        ));
    }
    if !(thermal_var > T::zero()) {
        return domain("thermal variance must be positive");
    }
    let ae = pmt.pulse_amplitude();
    let s2 = pmt.shot_var();
    let total = thermal_var + s2;
    let alpha = s2 / (thermal_var * total);
    let beta = ae / total;
    let gamma = T::lit(2.0) * c.ln() + (thermal_var / total).ln() - ae * ae / total;
    let disc = beta * beta - alpha * gamma;
    if disc < T::zero() {
        return Err(Error::NoSolution(format!(
            "no threshold gives density ratio {c} (discriminant {disc})"
        )));
    }
    Ok(ThresholdRoot {
        z: -gamma / (beta + disc.sqrt()),
        linear_fallback: s2 == T::zero(),
    })
}

/// Analytic constants bracketing the KL-optimal density ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlBoundConstants<T> {
    pub c_l0: T,
    pub c_u0: T,
    pub c_l1: T,
    pub c_u1: T,
}

impl<T: Real> KlBoundConstants<T> {
    pub fn c_lower(&self) -> T {
        self.c_l0.max(self.c_l1)
    }

    pub fn c_upper(&self) -> T {
        self.c_u0.min(self.c_u1)
    }
}

/// Maps a bound `K` on `(ṗ₀ ratio)` back to the density ratio
/// `G₀/G₁ = (γ_t − Kγ_b)/(K(1−γ_b) + γ_t − 1)`.
fn ratio_from_slope<T: Real>(k: T, gamma_t: T, gamma_b: T) -> T {
    (gamma_t - k * gamma_b) / (k * (T::one() - gamma_b) + gamma_t - T::one())
}

/// Constants `C_l0, C_u0` (from `D(p₀‖p₁)`) and `C_l1, C_u1` (from
/// `D(p₁‖p₀)`).
pub fn kl_bound_constants<T: Real>(gamma_t: T, gamma_b: T) -> Result<KlBoundConstants<T>> {
    let one = T::one();
    if !(gamma_b > T::zero() && gamma_b < gamma_t && gamma_t < one) {
        return domain("KL threshold bounds need 0 < γ_b < γ_t < 1");
    }
    let r_on = gamma_b / gamma_t;
    let r_off = (one - gamma_b) / (one - gamma_t);
    let c1 = log_mean_ratio(r_on, one)?;
    let c2 = log_mean_ratio(one, r_off)?;
    let c3 = log_mean_ratio(one, gamma_t / gamma_b)?;
    let c4 = log_mean_ratio(r_off.recip(), one)?;
    Ok(KlBoundConstants {
        c_u0: ratio_from_slope(c1, gamma_t, gamma_b),
        c_l0: ratio_from_slope(c2, gamma_t, gamma_b),
        c_u1: ratio_from_slope(c3.recip(), gamma_t, gamma_b),
        c_l1: ratio_from_slope(c4.recip(), gamma_t, gamma_b),
    })
}

/// Analytic bracket `(Z(C_l), Z(C_u))` for the KL-optimal threshold.
pub fn kl_threshold_bounds<T: Real>(
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
    thermal_var: T,
) -> Result<(T, T)> {
    let k = kl_bound_constants(config.gamma_t(), config.gamma_b())?;
    let lower = z_of_c(k.c_lower(), pmt, thermal_var)?.z;
    let upper = z_of_c(k.c_upper(), pmt, thermal_var)?.z;
    Ok((lower, upper))
}
