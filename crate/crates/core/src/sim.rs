//! Monte Carlo estimation of symbol error rates.
//!
//! Symbols are generated in fixed-size chunks, each with its own ChaCha
//! stream seeded from `SHA-256(master_seed ‖ chunk_index)`. Every detector
//! sees the same samples, so pairwise differences are estimated from
//! discordant decisions rather than from two independent error counts.
//! Chunk tallies merge by addition, which makes the report independent of
//! the number of worker threads.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::channel::{ChannelConfig, PmtParams, SymbolSampler};
use crate::counting::{
    optimize_threshold_error, optimize_threshold_kl, HardDecisionModel, ThresholdSearch,
};
use crate::detector::{
    fit_cubic, fit_linear, hex_digest, CubicFitOptions, MapDetector, XWeighting,
};
use crate::error::{domain, Error, Result};
use crate::scalar::Real;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Paired differences beyond this many standard errors are significant.
pub const SIGNIFICANCE_Z: f64 = 3.0;

/// How a counting receiver picks its per-interval threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CountingRule<T> {
    /// Fixed threshold in signal units.
    Fixed(T),
    ErrorOptimal,
    KlOptimal,
}

/// Detector evaluated in a trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DetectorSpec<T> {
    Exact,
    Linear,
    Cubic { nodes: usize },
    Counting(CountingRule<T>),
}

impl<T: Real> DetectorSpec<T> {
    pub fn label(&self) -> String {
        match self {
            Self::Exact => "exact".into(),
            Self::Linear => "linear".into(),
            Self::Cubic { nodes } => format!("cubic(J={nodes})"),
            Self::Counting(CountingRule::Fixed(z)) => format!("counting(z_th={z:e})"),
            Self::Counting(CountingRule::ErrorOptimal) => "counting(error-optimal)".into(),
            Self::Counting(CountingRule::KlOptimal) => "counting(kl-optimal)".into(),
        }
    }
}

/// Everything that determines a trial's outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialConfig<T> {
    pub channel: ChannelConfig<T>,
    pub pmt: PmtParams<T>,
    pub detectors: Vec<DetectorSpec<T>>,
    pub num_symbols: u64,
    pub master_seed: u64,
    pub chunk_size: u64,
}

impl<T: Real> TrialConfig<T> {
    /// Canonical text form; the config hash is taken over it.
    pub fn canonical(&self) -> String {
        let c = &self.channel;
        let p = &self.pmt;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "channel lambda_s={:e} lambda_b={:e} intervals={} prior_one={:e}",
            c.lambda_s, c.lambda_b, c.intervals, c.prior_one
        );
        let _ = writeln!(
            s,
            "pmt amplification={:e} electron_charge={:e} spreading_factor={:e} thermal_std_symbol={:e}",
            p.amplification, p.electron_charge, p.spreading_factor, p.thermal_std_symbol
        );
        for d in &self.detectors {
            let _ = writeln!(s, "detector {}", d.label());
        }
        let _ = writeln!(
            s,
            "num_symbols={} master_seed={} chunk_size={}",
            self.num_symbols, self.master_seed, self.chunk_size
        );
        s
    }

    pub fn config_hash(&self) -> String {
        hex_digest(self.canonical().as_bytes())
    }
}

/// Per-detector outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorReport {
    pub label: String,
    pub errors: u64,
    pub error_rate: f64,
    pub wilson_ci95: (f64, f64),
    /// Per-interval threshold used by counting receivers.
    pub z_th: Option<f64>,
    /// Analytic error probability where one exists (counting receivers).
    pub analytic_error: Option<f64>,
}

/// Result of [`run_trials`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrialReport {
    pub num_symbols: u64,
    pub detectors: Vec<DetectorReport>,
    /// `discordant[i][j]`: symbols where detector `i` erred and `j` did not.
    pub discordant: Vec<Vec<u64>>,
    pub config_hash: String,
    /// Wall-clock time; not part of [`to_record`](Self::to_record).
    pub elapsed: Duration,
}

impl TrialReport {
    /// Deterministic text record (elapsed time excluded).
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pmtcomm-trial v1");
        let _ = writeln!(s, "config_hash {}", self.config_hash);
        let _ = writeln!(s, "num_symbols {}", self.num_symbols);
        for d in &self.detectors {
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.16e}"));
            let _ = writeln!(
                s,
                "detector label={} errors={} rate={:.16e} ci_lo={:.16e} ci_hi={:.16e} z_th={} analytic={}",
                d.label,
                d.errors,
                d.error_rate,
                d.wilson_ci95.0,
                d.wilson_ci95.1,
                opt(d.z_th),
                opt(d.analytic_error)
            );
        }
        for (i, row) in self.discordant.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "discordant {i} {}", cells.join(" "));
        }
        s
    }
}

/// Wilson score interval for `errors` out of `n` at normal quantile `z`.
pub fn wilson_interval(errors: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = errors as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    (
        (centre - half).max(0.0).min(p),
        (centre + half).min(1.0).max(p),
    )
}

/// Seed for chunk `chunk` of a run with `master_seed`.
pub fn chunk_seed(master_seed: u64, chunk: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(chunk.to_le_bytes());
    h.finalize().into()
}

enum Built<T> {
    Map(MapDetector<T>),
    Count { z_th: T, b_th: i64 },
}

impl<T: Real> Built<T> {
    fn decide(&self, z: &[T]) -> bool {
        match self {
            Self::Map(d) => d.decide(z),
            Self::Count { z_th, b_th } => z.iter().filter(|&&v| v > *z_th).count() as i64 > *b_th,
        }
    }
}

struct Prepared<T> {
    detector: Built<T>,
    z_th: Option<f64>,
    analytic: Option<f64>,
}

fn prepare<T: Real>(spec: &DetectorSpec<T>, config: &TrialConfig<T>) -> Result<Prepared<T>> {
    let (c, p) = (&config.channel, &config.pmt);
    let map = |d| Prepared {
        detector: Built::Map(d),
        z_th: None,
        analytic: None,
    };
    Ok(match *spec {
        DetectorSpec::Exact => map(MapDetector::exact(c, p)?),
        DetectorSpec::Linear => map(MapDetector::approx(c, p, fit_linear(c, p)?)?),
        DetectorSpec::Cubic { nodes } => map(MapDetector::approx(
            c,
            p,
            fit_cubic(
                c,
                p,
                CubicFitOptions {
                    nodes,
                    weighting: XWeighting::Marginal,
                },
            )?,
        )?),
        DetectorSpec::Counting(rule) => {
            let tv = p.interval_thermal_var(c.intervals);
            let model = match rule {
                CountingRule::Fixed(z) => HardDecisionModel::new(z, c, p, tv)?,
                CountingRule::ErrorOptimal => {
                    optimize_threshold_error(c, p, tv, ThresholdSearch::default())?.model
                }
                CountingRule::KlOptimal => {
                    optimize_threshold_kl(c, p, tv, ThresholdSearch::default())?.model
                }
            };
            let det = model.detector()?;
            Prepared {
                detector: Built::Count {
                    z_th: model.z_th,
                    b_th: det.b_th,
                },
                z_th: Some(model.z_th.as_f64()),
                analytic: Some(det.total_error.as_f64()),
            }
        }
    })
}

#[derive(Clone)]
struct Tally {
    errors: Vec<u64>,
    discordant: Vec<Vec<u64>>,
}

impl Tally {
    fn new(n: usize) -> Self {
        Self {
            errors: vec![0; n],
            discordant: vec![vec![0; n]; n],
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.errors.iter_mut().zip(other.errors) {
            *a += b;
        }
        for (ra, rb) in self.discordant.iter_mut().zip(other.discordant) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
        self
    }
}

/// Runs the trial on `workers` threads (`None`: rayon's default).
pub fn run_trials<T: Real>(config: &TrialConfig<T>, workers: Option<usize>) -> Result<TrialReport>
where
    StandardNormal: Distribution<T>,
{
    if config.num_symbols == 0 {
        return domain("a trial needs at least one symbol");
    }
    if config.chunk_size == 0 {
        return domain("chunk size must be positive");
    }
    if config.detectors.is_empty() {
        return domain("a trial needs at least one detector");
    }
    let start = Instant::now();
    let prepared = config
        .detectors
        .iter()
        .map(|d| prepare(d, config))
        .collect::<Result<Vec<_>>>()?;
    let sampler = SymbolSampler::new(&config.channel, &config.pmt)?;
    let w = config.channel.prior_one.as_f64();
    let n_det = prepared.len();
    let chunks = config.num_symbols.div_ceil(config.chunk_size);

    let run_chunk = |chunk: u64| -> Tally {
        let mut rng = ChaCha8Rng::from_seed(chunk_seed(config.master_seed, chunk));
        let begin = chunk * config.chunk_size;
        let count = config.chunk_size.min(config.num_symbols - begin);
        let mut tally = Tally::new(n_det);
        let mut outputs = Vec::with_capacity(sampler.intervals());
        let mut wrong = vec![false; n_det];
        for _ in 0..count {
            let x = rng.random::<f64>() < w;
            sampler.sample_outputs_into(x, &mut rng, &mut outputs);
            for (i, p) in prepared.iter().enumerate() {
                wrong[i] = p.detector.decide(&outputs) != x;
                tally.errors[i] += wrong[i] as u64;
            }
            for i in 0..n_det {
                for j in 0..n_det {
                    tally.discordant[i][j] += (wrong[i] && !wrong[j]) as u64;
                }
            }
        }
        tally
    };

    let body = || {
        (0..chunks)
            .into_par_iter()
            .map(run_chunk)
            .reduce(|| Tally::new(n_det), Tally::merge)
    };
    let tally = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?
            .install(body),
        None => body(),
    };

    let n = config.num_symbols;
    let detectors = config
        .detectors
        .iter()
        .zip(&prepared)
        .zip(&tally.errors)
        .map(|((spec, prep), &errors)| DetectorReport {
            label: spec.label(),
            errors,
            error_rate: errors as f64 / n as f64,
            wilson_ci95: wilson_interval(errors, n, Z95),
            z_th: prep.z_th,
            analytic_error: prep.analytic,
        })
        .collect();
    Ok(TrialReport {
        num_symbols: n,
        detectors,
        discordant: tally.discordant,
        config_hash: config.config_hash(),
        elapsed: start.elapsed(),
    })
}

/// Paired comparison of two detectors from the same trial.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub first: String,
    pub second: String,
    /// `rate(first) − rate(second)`.
    pub difference: f64,
    pub std_error: f64,
    pub z: f64,
    pub significant: bool,
}

/// Paired comparison of detectors `i` and `j`.
pub fn compare_pair(report: &TrialReport, i: usize, j: usize) -> Result<Comparison> {
    let n_det = report.detectors.len();
    if i >= n_det || j >= n_det {
        return Err(Error::Invalid(format!(
            "detector index out of range ({n_det} detectors)"
        )));
    }
    let n = report.num_symbols as f64;
    let (nij, nji) = (
        report.discordant[i][j] as f64,
        report.discordant[j][i] as f64,
    );
    let d = (nij - nji) / n;
    let var = ((nij + nji) / (n * n) - d * d / n).max(0.0);
    let se = var.sqrt();
    let z = if se > 0.0 { d / se } else { 0.0 };
    Ok(Comparison {
        first: report.detectors[i].label.clone(),
        second: report.detectors[j].label.clone(),
        difference: d,
        std_error: se,
        z,
        significant: z.abs() > SIGNIFICANCE_Z,
    })
}

/// All pairwise comparisons `i < j`.
pub fn compare_detectors(report: &TrialReport) -> Result<Vec<Comparison>> {
    let n = report.detectors.len();
    if n < 2 {
        return Err(Error::Invalid(
            "comparison needs at least two detectors".into(),
        ));
    }
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            out.push(compare_pair(report, i, j)?);
        }
    }
    Ok(out)
}
