//! PMT receiver model: photoelectron statistics and the densities of the
//! sampled output signal.
//!
//! A symbol of duration `τ` is split into `M` intervals. Under OOK symbol
//! `X`, the photoelectron count of each interval is Poisson with mean
//! `γ_t = (λ_s + λ_b)/M` (`X = 1`) or `γ_b = λ_b/M` (`X = 0`), and `n`
//! photoelectrons produce the output `z = n·Ae + v` with
//! `v ~ N(0, n·σ² + σ₀²/M)`.
//!
//! Every density takes the thermal variance of its evaluation window
//! explicitly (`thermal_var`); [`PmtParams::interval_thermal_var`] gives the
//! per-interval value `σ₀²/M`.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{domain, Result};
use crate::scalar::Real;

/// Upper Poisson tail mass left out of truncated mixtures.
pub const POISSON_TAIL: f64 = 1e-12;

/// Smallest admissible truncation point for Poisson mixtures.
pub const MIN_TRUNCATION: usize = 3;

/// Photomultiplier parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PmtParams<T> {
    /// Electrons per photoelectron (`A`).
    pub amplification: T,
    /// Charge per electron (`e`).
    pub electron_charge: T,
    /// Spreading factor `ξ`; shot-noise std per photoelectron is `ξ·Ae`.
    pub spreading_factor: T,
    /// Thermal-noise std over a full symbol (`σ₀`).
    pub thermal_std_symbol: T,
}

impl<T: Real> PmtParams<T> {
    pub fn new(
        amplification: T,
        electron_charge: T,
        spreading_factor: T,
        thermal_std_symbol: T,
    ) -> Result<Self> {
        if !(amplification > T::zero()) || !(electron_charge > T::zero()) {
            return domain("amplification and electron charge must be positive");
        }
        if !(spreading_factor >= T::zero()) || !(thermal_std_symbol >= T::zero()) {
            return domain("spreading factor and thermal std must be nonnegative");
        }
        Ok(Self {
            amplification,
            electron_charge,
            spreading_factor,
            thermal_std_symbol,
        })
    }

    /// Parameters in units where `Ae = 1`; `thermal_std_symbol` is then a
    /// multiple of the pulse amplitude.
    pub fn normalized(spreading_factor: T, thermal_std_symbol: T) -> Result<Self> {
        Self::new(T::one(), T::one(), spreading_factor, thermal_std_symbol)
    }

    /// Pulse amplitude `Ae`.
    #[inline]
    pub fn pulse_amplitude(&self) -> T {
        self.amplification * self.electron_charge
    }

    /// Shot-noise std per photoelectron, `σ = ξ·Ae`.
    #[inline]
    pub fn shot_std(&self) -> T {
        self.spreading_factor * self.pulse_amplitude()
    }

    #[inline]
    pub fn shot_var(&self) -> T {
        let s = self.shot_std();
        s * s
    }

    /// Thermal variance of one of `intervals` sampling windows, `σ₀²/M`.
    #[inline]
    pub fn interval_thermal_var(&self, intervals: usize) -> T {
        self.thermal_std_symbol * self.thermal_std_symbol / T::from_usize_lossy(intervals)
    }
}

/// Thermal-noise std from circuit quantities, `σ₀² = 2·k_e·T·τ/R`.
pub fn thermal_std_from_circuit<T: Real>(
    boltzmann: T,
    temperature: T,
    symbol_duration: T,
    load_resistance: T,
) -> Result<T> {
    if !(load_resistance > T::zero()) {
        return domain("load resistance must be positive");
    }
    if boltzmann < T::zero() || temperature < T::zero() || symbol_duration < T::zero() {
        return domain("circuit quantities must be nonnegative");
    }
    Ok((T::lit(2.0) * boltzmann * temperature * symbol_duration / load_resistance).sqrt())
}

/// Per-symbol channel description.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConfig<T> {
    /// Mean signal photoelectrons per symbol (`λ_s`).
    pub lambda_s: T,
    /// Mean background photoelectrons per symbol (`λ_b`).
    pub lambda_b: T,
    /// Number of sampling intervals per symbol (`M`).
    pub intervals: usize,
    /// Prior `w = P(X = 1)`.
    pub prior_one: T,
}

impl<T: Real> ChannelConfig<T> {
    pub fn new(lambda_s: T, lambda_b: T, intervals: usize, prior_one: T) -> Result<Self> {
        if !(lambda_s >= T::zero()) || !(lambda_b >= T::zero()) {
            return domain("photoelectron means must be nonnegative");
        }
        if intervals == 0 {
            return domain("interval count must be positive");
        }
        if !(prior_one > T::zero() && prior_one < T::one()) {
            return domain("prior must lie in (0, 1)");
        }
        Ok(Self {
            lambda_s,
            lambda_b,
            intervals,
            prior_one,
        })
    }

    /// Builds a config from `λ_s` and `SNR_dB = 10·log10(λ_s/λ_b)`.
    pub fn from_snr_db(lambda_s: T, snr_db: T, intervals: usize, prior_one: T) -> Result<Self> {
        let lambda_b = lambda_s / T::lit(10.0).powf(snr_db / T::lit(10.0));
        Self::new(lambda_s, lambda_b, intervals, prior_one)
    }

    /// Builds a config from the total mean `λ_s + λ_b` and the dB ratio.
    pub fn from_total_snr_db(
        lambda_total: T,
        snr_db: T,
        intervals: usize,
        prior_one: T,
    ) -> Result<Self> {
        let ratio = T::lit(10.0).powf(snr_db / T::lit(10.0));
        let lambda_b = lambda_total / (ratio + T::one());
        Self::new(lambda_total - lambda_b, lambda_b, intervals, prior_one)
    }

    /// Per-interval mean under `X = 1`, `(λ_s + λ_b)/M`.
    #[inline]
    pub fn gamma_t(&self) -> T {
        (self.lambda_s + self.lambda_b) / T::from_usize_lossy(self.intervals)
    }

    /// Per-interval mean under `X = 0`, `λ_b/M`.
    #[inline]
    pub fn gamma_b(&self) -> T {
        self.lambda_b / T::from_usize_lossy(self.intervals)
    }

    /// MAP decision offset `η = ln((1 − w)/w)`.
    #[inline]
    pub fn eta(&self) -> T {
        ((T::one() - self.prior_one) / self.prior_one).ln()
    }

    #[inline]
    pub fn gamma_for(&self, x: bool) -> T {
        if x {
            self.gamma_t()
        } else {
            self.gamma_b()
        }
    }
}

/// One transmitted symbol and what the receiver saw.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolSample<T> {
    pub x: bool,
    pub photon_counts: Vec<u32>,
    pub outputs: Vec<T>,
}

/// Mean detected photoelectrons `λ_s = P·g·η·τ/(hν)`.
pub fn signal_rate<T: Real>(
    power: T,
    link_gain: T,
    quantum_eff: T,
    symbol_duration: T,
    photon_energy: T,
) -> Result<T> {
    if !(photon_energy > T::zero()) {
        return domain("photon energy must be positive");
    }
    if !(power >= T::zero()) {
        return domain("transmit power must be nonnegative");
    }
    if !(link_gain > T::zero() && quantum_eff > T::zero() && symbol_duration > T::zero()) {
        return domain("link gain, quantum efficiency and symbol duration must be positive");
    }
    Ok(power * link_gain * quantum_eff * symbol_duration / photon_energy)
}

/// Poisson probability `meanⁿ e^(−mean)/n!`.
pub fn poisson_pmf<T: Real>(mean: T, n: usize) -> Result<T> {
    if !(mean >= T::zero()) {
        return domain("Poisson mean must be nonnegative");
    }
    Ok(poisson_pmf_unchecked(mean, n))
}

fn poisson_pmf_unchecked<T: Real>(mean: T, n: usize) -> T {
    if mean == T::zero() {
        return if n == 0 { T::one() } else { T::zero() };
    }
    if n <= 20 {
        let mut p = (-mean).exp();
        for k in 1..=n {
            p = p * mean / T::from_usize_lossy(k);
        }
        p
    } else {
        let nf = T::from_usize_lossy(n);
        (nf * mean.ln() - mean - (nf + T::one()).ln_gamma()).exp()
    }
}

/// Truncation point of the Poisson mixture: the smallest `n ≥ 3` whose upper
/// tail `P(N > n)` is below [`POISSON_TAIL`].
pub fn poisson_truncation<T: Real>(mean: T) -> usize {
    if mean == T::zero() {
        return MIN_TRUNCATION;
    }
    let tail_tol = T::lit(POISSON_TAIL);
    let mut cdf = T::zero();
    let mut n = 0;
    loop {
        cdf = cdf + poisson_pmf_unchecked(mean, n);
        if n >= MIN_TRUNCATION && T::one() - cdf < tail_tol {
            return n;
        }
        // beyond the mode the remaining tail is bounded by a geometric series
        let nf = T::from_usize_lossy(n + 1);
        if nf > mean {
            let next = poisson_pmf_unchecked(mean, n + 1);
            let ratio = mean / (nf + T::one());
            if n >= MIN_TRUNCATION && next / (T::one() - ratio) < tail_tol {
                return n;
            }
        }
        n += 1;
    }
}

/// Normal density `G(z; mean, variance)`.
pub fn gaussian_pdf<T: Real>(z: T, mean: T, variance: T) -> Result<T> {
    if !(variance > T::zero()) {
        return domain("Gaussian variance must be positive");
    }
    Ok(gaussian_pdf_unchecked(z, mean, variance))
}

#[inline]
pub(crate) fn gaussian_pdf_unchecked<T: Real>(z: T, mean: T, variance: T) -> T {
    let d = z - mean;
    (-(d * d) / (T::lit(2.0) * variance)).exp() / (T::lit(2.0) * T::PI() * variance).sqrt()
}

/// Density of `z = n·Ae + v` when the photoelectron count has the given
/// component weights (`weights[n] = P(N = n)`).
pub fn photon_mixture_pdf<T: Real>(
    z: T,
    weights: &[T],
    pmt: &PmtParams<T>,
    thermal_var: T,
) -> Result<T> {
    if !(thermal_var > T::zero()) {
        return domain("thermal variance must be positive");
    }
    Ok(mixture_unchecked(
        z,
        weights.iter().copied(),
        pmt,
        thermal_var,
    ))
}

fn mixture_unchecked<T: Real>(
    z: T,
    weights: impl Iterator<Item = T>,
    pmt: &PmtParams<T>,
    thermal_var: T,
) -> T {
    let ae = pmt.pulse_amplitude();
    let shot_var = pmt.shot_var();
    weights.enumerate().fold(T::zero(), |acc, (n, w)| {
        let nf = T::from_usize_lossy(n);
        acc + w * gaussian_pdf_unchecked(z, nf * ae, nf * shot_var + thermal_var)
    })
}

/// Poisson weights `P(N = 0..=n_max)` for the truncated output mixture.
pub fn poisson_weights<T: Real>(mean: T) -> Result<Vec<T>> {
    if !(mean >= T::zero()) {
        return domain("Poisson mean must be nonnegative");
    }
    let n_max = poisson_truncation(mean);
    Ok((0..=n_max)
        .map(|n| poisson_pmf_unchecked(mean, n))
        .collect())
}

/// PMT output density for a Poisson number of photoelectrons with the given
/// mean, truncated where the Poisson tail drops below [`POISSON_TAIL`].
pub fn pmt_output_pdf<T: Real>(
    z: T,
    mean_photons: T,
    pmt: &PmtParams<T>,
    thermal_var: T,
) -> Result<T> {
    let weights = poisson_weights(mean_photons)?;
    photon_mixture_pdf(z, &weights, pmt, thermal_var)
}

/// Conditional density of one interval output with per-interval mean
/// `gamma` and thermal variance `σ₀²/M`.
pub fn interval_pdf<T: Real>(z: T, gamma: T, pmt: &PmtParams<T>, intervals: usize) -> Result<T> {
    if intervals == 0 {
        return domain("interval count must be positive");
    }
    pmt_output_pdf(z, gamma, pmt, pmt.interval_thermal_var(intervals))
}

/// Bernoulli (at most one photoelectron) approximation
/// `(1 − γ)·G₀(z) + γ·G₁(z)`.
pub fn single_photon_pdf<T: Real>(z: T, gamma: T, pmt: &PmtParams<T>, thermal_var: T) -> Result<T> {
    if !(gamma >= T::zero() && gamma <= T::one()) {
        return domain("single-photon probability must lie in [0, 1]");
    }
    photon_mixture_pdf(z, &[T::one() - gamma, gamma], pmt, thermal_var)
}

/// Draws interval outputs for one symbol from the true Poisson law.
///
/// Holds the two count distributions so repeated draws skip setup.
#[derive(Clone, Debug)]
pub struct SymbolSampler<T> {
    counts_one: Option<Poisson<f64>>,
    counts_zero: Option<Poisson<f64>>,
    pulse: T,
    shot_var: T,
    thermal_var: T,
    intervals: usize,
}

impl<T: Real> SymbolSampler<T>
where
    StandardNormal: Distribution<T>,
{
    pub fn new(config: &ChannelConfig<T>, pmt: &PmtParams<T>) -> Result<Self> {
        let dist = |mean: T| -> Result<Option<Poisson<f64>>> {
            let m = mean.as_f64();
            if m == 0.0 {
                Ok(None)
            } else {
                Poisson::new(m)
                    .map(Some)
                    .map_err(|e| crate::Error::Domain(format!("Poisson mean {m}: {e}")))
            }
        };
        Ok(Self {
            counts_one: dist(config.gamma_t())?,
            counts_zero: dist(config.gamma_b())?,
            pulse: pmt.pulse_amplitude(),
            shot_var: pmt.shot_var(),
            thermal_var: pmt.interval_thermal_var(config.intervals),
            intervals: config.intervals,
        })
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    #[inline]
    fn draw_interval<R: Rng + ?Sized>(
        &self,
        counts: Option<&Poisson<f64>>,
        rng: &mut R,
    ) -> (u32, T) {
        let n = counts.map_or(0, |d| d.sample(rng) as u32);
        let nf = T::from_u32(n).unwrap();
        let std = (nf * self.shot_var + self.thermal_var).sqrt();
        let noise: T = rng.sample(StandardNormal);
        (n, nf * self.pulse + std * noise)
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: bool, rng: &mut R) -> SymbolSample<T> {
        let mut photon_counts = Vec::with_capacity(self.intervals);
        let mut outputs = Vec::with_capacity(self.intervals);
        let counts = if x {
            self.counts_one.as_ref()
        } else {
            self.counts_zero.as_ref()
        };
        for _ in 0..self.intervals {
            let (n, z) = self.draw_interval(counts, rng);
            photon_counts.push(n);
            outputs.push(z);
        }
        SymbolSample {
            x,
            photon_counts,
            outputs,
        }
    }

    /// Like [`sample`](Self::sample) but reuses `outputs` and skips counts.
    pub fn sample_outputs_into<R: Rng + ?Sized>(&self, x: bool, rng: &mut R, outputs: &mut Vec<T>) {
        outputs.clear();
        let counts = if x {
            self.counts_one.as_ref()
        } else {
            self.counts_zero.as_ref()
        };
        outputs.extend((0..self.intervals).map(|_| self.draw_interval(counts, rng).1));
    }
}

/// Draws a single symbol's interval counts and outputs.
pub fn sample_symbol<T: Real, R: Rng + ?Sized>(
    x: bool,
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
    rng: &mut R,
) -> Result<SymbolSample<T>>
where
    StandardNormal: Distribution<T>,
{
    Ok(SymbolSampler::new(config, pmt)?.sample(x, rng))
}
