//! Desk-scale reproductions of the published curves.
//!
//! Each experiment writes one CSV per parameter family, a gnuplot script
//! that plots them, and `manifest.toml` holding the full configuration, the
//! seed, a configuration hash and the hashes of every file written. Feeding
//! the manifest back through `--config` reproduces the CSVs byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, PmtParams};
use crate::counting::{
    kl_threshold_bounds, nats_to_bits, optimize_threshold_error, optimize_threshold_kl,
    sensitivity_profile, ThresholdSearch, MIN_GRID,
};
use crate::detector::{
    fit_cubic, fit_linear, hex_digest, CubicFitOptions, LlrFunction, StatisticDensity, XWeighting,
};
use crate::error::{Error, Result};
use crate::rates::{mi_true_vs_single_photon, rate_bounds};
use crate::sim::{compare_pair, run_trials, DetectorSpec, TrialConfig};

pub const MANIFEST_FILE: &str = "manifest.toml";

/// The reproducible experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentName {
    RateApprox,
    RateBoundsSnr,
    RateBoundsM,
    FxFit,
    ApproxError,
    ThresholdCompare,
    ErrorCompare,
    KlProfile,
}

impl ExperimentName {
    pub const ALL: [Self; 8] = [
        Self::RateApprox,
        Self::RateBoundsSnr,
        Self::RateBoundsM,
        Self::FxFit,
        Self::ApproxError,
        Self::ThresholdCompare,
        Self::ErrorCompare,
        Self::KlProfile,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::RateApprox => "rate-approx",
            Self::RateBoundsSnr => "rate-bounds-snr",
            Self::RateBoundsM => "rate-bounds-M",
            Self::FxFit => "fx-fit",
            Self::ApproxError => "approx-error",
            Self::ThresholdCompare => "threshold-compare",
            Self::ErrorCompare => "error-compare",
            Self::KlProfile => "kl-profile",
        }
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|e| e.as_str()).collect();
                Error::Invalid(format!(
                    "unknown experiment `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

/// Meaning of the `sigma0` values in detection experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sigma0Convention {
    /// `σ₀` is the per-interval thermal standard deviation.
    Interval,
    /// `σ₀` is per symbol; each interval sees `σ₀²/M`.
    Symbol,
}

/// All experiment parameters. Noise levels are in units of `Ae`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub prior_one: f64,
    pub spreading_factor: f64,
    /// `M` for detection experiments and single-point commands.
    pub intervals: usize,
    pub snr_db: f64,
    /// Signal photoelectrons per symbol in detection experiments.
    pub lambda_s: f64,
    /// `σ₀` for single-point commands.
    pub sigma0: f64,
    /// Total per-symbol mean `λ_s + λ_b` in rate experiments.
    pub rate_gamma_t: f64,
    pub gamma_t_grid: Vec<f64>,
    pub snr_grid_db: Vec<f64>,
    pub sigma0_grid: Vec<f64>,
    pub sigma0_sweep: Vec<f64>,
    pub intervals_grid: Vec<usize>,
    pub sigma0_convention: Sigma0Convention,
    /// Interval threshold of the rate lower bound, as a fraction of `Ae`.
    pub threshold_ratio: f64,
    pub cubic_nodes: usize,
    pub weighting: String,
    pub fx_points: usize,
    pub num_symbols: u64,
    pub chunk_size: u64,
    pub grid_size: usize,
    /// `(σ₀, σ)` pairs for the KL profiles.
    pub kl_noise_pairs: Vec<[f64; 2]>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            prior_one: 0.5,
            spreading_factor: 0.1,
            intervals: 1000,
            snr_db: 20.0,
            lambda_s: 10.0,
            sigma0: 0.1,
            rate_gamma_t: 0.01,
            gamma_t_grid: vec![0.01, 0.05],
            snr_grid_db: (0..=15).map(|i| 2.0 * i as f64).collect(),
            sigma0_grid: vec![0.1, 0.15, 0.2],
            sigma0_sweep: (1..=15).map(|i| 0.02 * i as f64).collect(),
            intervals_grid: vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000],
            sigma0_convention: Sigma0Convention::Interval,
            threshold_ratio: 0.5,
            cubic_nodes: crate::detector::DEFAULT_CUBIC_NODES,
            weighting: "marginal".into(),
            fx_points: 1001,
            num_symbols: 100_000,
            chunk_size: 1000,
            grid_size: crate::counting::DEFAULT_GRID,
            kl_noise_pairs: vec![[0.1, 0.1], [0.05, 0.05], [0.02, 0.02]],
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex_digest(self.to_toml().as_bytes())
    }

    /// Applies `key=value`; the value is parsed as a TOML value, falling
    /// back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| invalid(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut table = toml::Table::try_from(&*self).expect("config serializes");
        if !table.contains_key(key) {
            return Err(invalid(format!("unknown override key `{key}`")));
        }
        table.insert(key.to_string(), value);
        *self = toml::Value::Table(table)
            .try_into()
            .map_err(|e| invalid(format!("override `{key}`: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(invalid(msg.to_string()))
            }
        };
        check(
            self.prior_one > 0.0 && self.prior_one < 1.0,
            "prior_one must lie in (0, 1)",
        )?;
        check(
            self.spreading_factor >= 0.0,
            "spreading_factor must be nonnegative",
        )?;
        check(self.intervals >= 1, "intervals must be positive")?;
        check(
            self.lambda_s >= 0.0 && self.rate_gamma_t > 0.0,
            "photoelectron means must be positive",
        )?;
        check(self.sigma0 > 0.0, "sigma0 must be positive")?;
        let pos = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x.is_finite());
        check(
            pos(&self.sigma0_grid) && pos(&self.sigma0_sweep),
            "sigma0 grids must be positive",
        )?;
        check(pos(&self.gamma_t_grid), "gamma_t_grid must be positive")?;
        check(
            self.snr_grid_db.iter().all(|x| x.is_finite()),
            "snr_grid_db must be finite",
        )?;
        check(
            self.intervals_grid.iter().all(|&m| m >= 1),
            "intervals_grid entries must be positive",
        )?;
        check(
            self.threshold_ratio.is_finite(),
            "threshold_ratio must be finite",
        )?;
        check(self.fx_points >= 2, "fx_points must be at least 2")?;
        check(
            self.num_symbols >= 1 && self.chunk_size >= 1,
            "num_symbols and chunk_size must be positive",
        )?;
        check(self.grid_size >= MIN_GRID, "grid_size must be at least 100")?;
        check(
            self.kl_noise_pairs
                .iter()
                .all(|[a, b]| *a > 0.0 && *b >= 0.0),
            "kl_noise_pairs need sigma0 > 0 and sigma ≥ 0",
        )?;
        XWeighting::parse(&self.weighting)?;
        Ok(())
    }

    fn weighting(&self) -> XWeighting {
        XWeighting::parse(&self.weighting).unwrap_or_default()
    }

    fn search(&self) -> ThresholdSearch {
        ThresholdSearch {
            grid: self.grid_size,
            ..ThresholdSearch::default()
        }
    }

    /// Channel for detection experiments at the given SNR.
    pub fn detection_channel(&self, snr_db: f64) -> Result<ChannelConfig<f64>> {
        ChannelConfig::from_snr_db(self.lambda_s, snr_db, self.intervals, self.prior_one)
    }

    /// PMT for detection experiments; `sigma0` follows `sigma0_convention`.
    pub fn detection_pmt(&self, sigma0: f64, spreading: f64) -> Result<PmtParams<f64>> {
        let per_symbol = match self.sigma0_convention {
            Sigma0Convention::Interval => sigma0 * (self.intervals as f64).sqrt(),
            Sigma0Convention::Symbol => sigma0,
        };
        PmtParams::normalized(spreading, per_symbol)
    }

    /// Channel for rate experiments with `intervals` intervals.
    pub fn rate_channel(
        &self,
        gamma_t: f64,
        snr_db: f64,
        intervals: usize,
    ) -> Result<ChannelConfig<f64>> {
        ChannelConfig::from_total_snr_db(gamma_t, snr_db, intervals, self.prior_one)
    }
}

/// A manifest: everything needed to re-run an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub experiment: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    #[serde(default)]
    pub files: Vec<ManifestFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| invalid(format!("manifest: {e}")))?;
        if m.config.hash() != m.config_hash {
            return Err(invalid("manifest config hash does not match its config"));
        }
        Ok(m)
    }
}

/// Loads either a plain config or a manifest. Returns the experiment name
/// recorded in a manifest, if any.
pub fn load_config(text: &str) -> Result<(ExperimentConfig, Option<ExperimentName>)> {
    let table: toml::Table = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
    if table.contains_key("experiment") {
        let m = Manifest::from_toml(text)?;
        Ok((m.config, Some(m.experiment.parse()?)))
    } else {
        Ok((ExperimentConfig::from_toml(text)?, None))
    }
}

/// Numeric CSV table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Real(f64),
    Int(i64),
    Flag(bool),
    /// Value allowed to be infinite (a flagged KL divergence).
    MaybeInf(f64),
    Missing,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Comma-separated text with a header row and 17-significant-digit
    /// floats. Non-finite values are rejected unless flagged.
    pub fn to_csv(&self) -> Result<String> {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells = row
                .iter()
                .zip(&self.columns)
                .map(|(c, name)| match *c {
                    Cell::Real(v) if v.is_finite() => Ok(format!("{v:.16e}")),
                    Cell::Real(v) => Err(Error::Numeric(format!(
                        "non-finite value {v} in column `{name}`"
                    ))),
                    Cell::MaybeInf(v) if v.is_finite() => Ok(format!("{v:.16e}")),
                    Cell::MaybeInf(v) if v == f64::INFINITY => Ok("inf".to_string()),
                    Cell::MaybeInf(v) => Err(Error::Numeric(format!(
                        "invalid value {v} in column `{name}`"
                    ))),
                    Cell::Int(v) => Ok(v.to_string()),
                    Cell::Flag(b) => Ok(u8::from(b).to_string()),
                    Cell::Missing => Ok(String::new()),
                })
                .collect::<Result<Vec<_>>>()?;
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        Ok(s)
    }
}

/// One series in the companion plot script.
#[derive(Clone, Debug)]
struct Series {
    file: String,
    x: usize,
    y: usize,
    title: String,
}

struct Output {
    files: Vec<(String, String)>,
    series: Vec<Series>,
    xlabel: String,
    ylabel: String,
    logscale_y: bool,
    logscale_x: bool,
}

impl Output {
    fn new(xlabel: &str, ylabel: &str) -> Self {
        Self {
            files: Vec::new(),
            series: Vec::new(),
            xlabel: xlabel.into(),
            ylabel: ylabel.into(),
            logscale_y: false,
            logscale_x: false,
        }
    }

    fn table(
        &mut self,
        name: String,
        table: &Table,
        plot: &[(&str, &str)],
        tag: &str,
    ) -> Result<()> {
        let col = |c: &str| table.columns.iter().position(|n| n == c).map(|i| i + 1);
        for (xc, yc) in plot {
            let (Some(x), Some(y)) = (col(xc), col(yc)) else {
                unreachable!("plot columns exist");
            };
            let title = if tag.is_empty() {
                yc.to_string()
            } else {
                format!("{yc} {tag}")
            };
            self.series.push(Series {
                file: name.clone(),
                x,
                y,
                title,
            });
        }
        self.files.push((name, table.to_csv()?));
        Ok(())
    }

    fn gnuplot(&self, experiment: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {experiment}: run with `gnuplot -p {experiment}.gp`");
        let _ = writeln!(s, "set datafile separator ','");
        let _ = writeln!(s, "set key autotitle columnheader");
        let _ = writeln!(s, "set xlabel '{}'", self.xlabel);
        let _ = writeln!(s, "set ylabel '{}'", self.ylabel);
        if self.logscale_x {
            let _ = writeln!(s, "set logscale x");
        }
        if self.logscale_y {
            let _ = writeln!(s, "set logscale y");
        }
        let parts: Vec<String> = self
            .series
            .iter()
            .map(|p| {
                format!(
                    "'{}' using {}:{} with linespoints title '{}'",
                    p.file, p.x, p.y, p.title
                )
            })
            .collect();
        let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
        s
    }
}

/// Files written by [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub manifest: Manifest,
}

fn tag(label: &str, v: f64) -> String {
    format!("{label}_{v}")
}

fn rate_approx(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    for &gt in &cfg.gamma_t_grid {
        let mut t = Table::new(&["sigma0", "true_bits", "approx_bits", "relative_gap"]);
        for &s0 in &cfg.sigma0_sweep {
            let c = cfg.rate_channel(gt, cfg.snr_db, 1)?;
            let p = PmtParams::normalized(cfg.spreading_factor, s0)?;
            let (tr, ap) = mi_true_vs_single_photon(&c, &p)?;
            let rel = if tr > 0.0 { (ap - tr).abs() / tr } else { 0.0 };
            t.push(vec![
                Cell::Real(s0),
                Cell::Real(tr),
                Cell::Real(ap),
                Cell::Real(rel),
            ]);
        }
        out.table(
            format!("rate_approx_{}.csv", tag("gamma_t", gt)),
            &t,
            &[("sigma0", "true_bits"), ("sigma0", "approx_bits")],
            &format!("gamma_t={gt}"),
        )?;
    }
    Ok(())
}

fn rate_bounds_snr(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    for &s0 in &cfg.sigma0_grid {
        let mut t = Table::new(&[
            "snr_db",
            "lower_bits",
            "upper_bits",
            "exact_bits",
            "relative_gap",
            "gap_bound_bits",
        ]);
        let p = PmtParams::normalized(cfg.spreading_factor, s0)?;
        for &snr in &cfg.snr_grid_db {
            let c = cfg.rate_channel(cfg.rate_gamma_t, snr, 1)?;
            let r = rate_bounds(&c, &p, cfg.threshold_ratio * p.pulse_amplitude())?;
            t.push(vec![
                Cell::Real(snr),
                Cell::Real(r.lower_bits),
                Cell::Real(r.upper_bits),
                r.exact_bits.map_or(Cell::Missing, Cell::Real),
                Cell::Real(r.relative_gap()),
                Cell::Real(r.gap_bound_bits),
            ]);
        }
        out.table(
            format!("rate_bounds_snr_{}.csv", tag("sigma0", s0)),
            &t,
            &[
                ("snr_db", "lower_bits"),
                ("snr_db", "upper_bits"),
                ("snr_db", "exact_bits"),
            ],
            &format!("sigma0={s0}"),
        )?;
    }
    Ok(())
}

fn rate_bounds_m(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    for &s0 in &cfg.sigma0_grid {
        let mut t = Table::new(&[
            "intervals",
            "lower_bits",
            "upper_bits",
            "relative_gap",
            "gap_bound_bits",
        ]);
        let p = PmtParams::normalized(cfg.spreading_factor, s0)?;
        for &m in &cfg.intervals_grid {
            let c = cfg.rate_channel(cfg.rate_gamma_t, cfg.snr_db, m)?;
            let r = rate_bounds(&c, &p, cfg.threshold_ratio * p.pulse_amplitude())?;
            t.push(vec![
                Cell::Int(m as i64),
                Cell::Real(r.lower_bits),
                Cell::Real(r.upper_bits),
                Cell::Real(r.relative_gap()),
                Cell::Real(r.gap_bound_bits),
            ]);
        }
        out.table(
            format!("rate_bounds_M_{}.csv", tag("sigma0", s0)),
            &t,
            &[("intervals", "lower_bits"), ("intervals", "upper_bits")],
            &format!("sigma0={s0}"),
        )?;
    }
    out.logscale_x = true;
    Ok(())
}

fn fx_fit(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let c = cfg.detection_channel(cfg.snr_db)?;
    let f = LlrFunction::from_config(&c)?;
    let x0 = f.center();
    let (lo, hi) = (-x0 - 2.0, 2.0 * x0 + 2.0);
    for &s0 in &cfg.sigma0_grid {
        let p = cfg.detection_pmt(s0, cfg.spreading_factor)?;
        let linear = fit_linear(&c, &p)?;
        let cubic = fit_cubic(
            &c,
            &p,
            CubicFitOptions {
                nodes: cfg.cubic_nodes,
                weighting: cfg.weighting(),
            },
        )?;
        let dens = StatisticDensity::new(&c, &p, cfg.weighting())?;
        let mut t = Table::new(&["x", "f_exact", "f_linear", "f_cubic", "x_density"]);
        let n = cfg.fx_points;
        for i in 0..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            t.push(vec![
                Cell::Real(x),
                Cell::Real(f.eval(x)),
                Cell::Real(linear.eval(x)),
                Cell::Real(cubic.eval(x)),
                Cell::Real(dens.eval(x).density),
            ]);
        }
        let name = tag("sigma0", s0);
        out.table(
            format!("fx_fit_{name}.csv"),
            &t,
            &[("x", "f_exact"), ("x", "f_linear"), ("x", "f_cubic")],
            &format!("sigma0={s0}"),
        )?;
        out.files
            .push((format!("cubic_{name}.detector"), cubic.to_record()));
        out.files
            .push((format!("linear_{name}.detector"), linear.to_record()));
    }
    Ok(())
}

fn approx_error(cfg: &ExperimentConfig, out: &mut Output, workers: Option<usize>) -> Result<()> {
    let mut t = Table::new(&[
        "sigma0",
        "exact_error",
        "exact_ci_lo",
        "exact_ci_hi",
        "linear_error",
        "linear_ci_lo",
        "linear_ci_hi",
        "cubic_error",
        "cubic_ci_lo",
        "cubic_ci_hi",
        "linear_minus_exact",
        "linear_z",
        "cubic_minus_exact",
        "cubic_z",
    ]);
    let c = cfg.detection_channel(cfg.snr_db)?;
    for &s0 in &cfg.sigma0_grid {
        let trial = TrialConfig {
            channel: c,
            pmt: cfg.detection_pmt(s0, cfg.spreading_factor)?,
            detectors: vec![
                DetectorSpec::Exact,
                DetectorSpec::Linear,
                DetectorSpec::Cubic {
                    nodes: cfg.cubic_nodes,
                },
            ],
            num_symbols: cfg.num_symbols,
            master_seed: cfg.seed,
            chunk_size: cfg.chunk_size,
        };
        let r = run_trials(&trial, workers)?;
        let lin = compare_pair(&r, 1, 0)?;
        let cub = compare_pair(&r, 2, 0)?;
        let mut row = vec![Cell::Real(s0)];
        for d in &r.detectors {
            row.extend([
                Cell::Real(d.error_rate),
                Cell::Real(d.wilson_ci95.0),
                Cell::Real(d.wilson_ci95.1),
            ]);
        }
        row.extend([
            Cell::Real(lin.difference),
            Cell::Real(lin.z),
            Cell::Real(cub.difference),
            Cell::Real(cub.z),
        ]);
        t.push(row);
    }
    out.table(
        "approx_error.csv".into(),
        &t,
        &[
            ("sigma0", "exact_error"),
            ("sigma0", "linear_error"),
            ("sigma0", "cubic_error"),
        ],
        "",
    )?;
    out.logscale_y = true;
    Ok(())
}

fn thermal_var(pmt: &PmtParams<f64>, intervals: usize) -> f64 {
    pmt.interval_thermal_var(intervals)
}

fn threshold_compare(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let c = cfg.detection_channel(cfg.snr_db)?;
    let mut t = Table::new(&[
        "sigma0",
        "z_error_opt",
        "z_kl_opt",
        "z_kl_lower",
        "z_kl_upper",
        "error_at_error_opt",
        "error_at_kl_opt",
        "kl_resolution_limited",
    ]);
    for &s0 in &cfg.sigma0_sweep {
        let p = cfg.detection_pmt(s0, cfg.spreading_factor)?;
        let tv = thermal_var(&p, c.intervals);
        let e = optimize_threshold_error(&c, &p, tv, cfg.search())?;
        let k = optimize_threshold_kl(&c, &p, tv, cfg.search())?;
        let (lo, hi) = kl_threshold_bounds(&c, &p, tv)?;
        t.push(vec![
            Cell::Real(s0),
            Cell::Real(e.model.z_th),
            Cell::Real(k.z_th()),
            Cell::Real(lo),
            Cell::Real(hi),
            Cell::Real(e.detector.total_error),
            Cell::Real(k.model.detector()?.total_error),
            Cell::Flag(k.profile.resolution_limited()),
        ]);
    }
    out.table(
        "threshold_compare.csv".into(),
        &t,
        &[
            ("sigma0", "z_error_opt"),
            ("sigma0", "z_kl_opt"),
            ("sigma0", "z_kl_lower"),
            ("sigma0", "z_kl_upper"),
        ],
        "",
    )
}

fn error_compare(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    for &s0 in &cfg.sigma0_grid {
        let p = cfg.detection_pmt(s0, cfg.spreading_factor)?;
        let mut t = Table::new(&[
            "snr_db",
            "z_error_opt",
            "z_kl_opt",
            "error_at_error_opt",
            "error_at_kl_opt",
            "ratio",
        ]);
        for &snr in &cfg.snr_grid_db {
            let c = cfg.detection_channel(snr)?;
            let tv = thermal_var(&p, c.intervals);
            let e = optimize_threshold_error(&c, &p, tv, cfg.search())?;
            let k = optimize_threshold_kl(&c, &p, tv, cfg.search())?;
            let ek = k.model.detector()?.total_error;
            let eo = e.detector.total_error;
            t.push(vec![
                Cell::Real(snr),
                Cell::Real(e.model.z_th),
                Cell::Real(k.z_th()),
                Cell::Real(eo),
                Cell::Real(ek),
                Cell::Real(if eo > 0.0 { ek / eo } else { 1.0 }),
            ]);
        }
        out.table(
            format!("error_compare_{}.csv", tag("sigma0", s0)),
            &t,
            &[
                ("snr_db", "error_at_error_opt"),
                ("snr_db", "error_at_kl_opt"),
            ],
            &format!("sigma0={s0}"),
        )?;
    }
    out.logscale_y = true;
    Ok(())
}

fn kl_profile(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let c = cfg.detection_channel(cfg.snr_db)?;
    let mut summary = Table::new(&[
        "sigma0",
        "sigma",
        "argmax",
        "max_min_kl_nats",
        "plateau_width",
        "infinite_kl",
        "resolution_limited",
    ]);
    for &[s0, sigma] in &cfg.kl_noise_pairs {
        let p = cfg.detection_pmt(s0, sigma)?;
        let tv = thermal_var(&p, c.intervals);
        let n = cfg.grid_size;
        let grid: Vec<f64> = (0..n).map(|i| (i + 1) as f64 / (n + 1) as f64).collect();
        let prof = sensitivity_profile(&c, &p, tv, &grid)?;
        let mut t = Table::new(&[
            "z_th",
            "d01_nats",
            "d10_nats",
            "min_kl_nats",
            "d01_bits",
            "d10_bits",
            "min_kl_bits",
            "infinite_kl",
        ]);
        for i in 0..grid.len() {
            let (a, b, m) = (prof.d01[i], prof.d10[i], prof.min_kl[i]);
            t.push(vec![
                Cell::Real(grid[i]),
                Cell::MaybeInf(a),
                Cell::MaybeInf(b),
                Cell::MaybeInf(m),
                Cell::MaybeInf(nats_to_bits(a)),
                Cell::MaybeInf(nats_to_bits(b)),
                Cell::MaybeInf(nats_to_bits(m)),
                Cell::Flag(a.is_infinite() || b.is_infinite()),
            ]);
        }
        out.table(
            format!("kl_profile_sigma0_{s0}_sigma_{sigma}.csv"),
            &t,
            &[("z_th", "min_kl_nats")],
            &format!("sigma0={s0} sigma={sigma}"),
        )?;
        summary.push(vec![
            Cell::Real(s0),
            Cell::Real(sigma),
            Cell::Real(prof.argmax),
            Cell::MaybeInf(prof.max_min_kl()),
            Cell::Real(prof.plateau_width),
            Cell::Flag(prof.has_infinite()),
            Cell::Flag(prof.resolution_limited()),
        ]);
    }
    out.files
        .push(("kl_profile_summary.csv".into(), summary.to_csv()?));
    Ok(())
}

/// Runs `name` with `cfg`, writing into `dir` (created if needed).
pub fn run_experiment(
    name: ExperimentName,
    cfg: &ExperimentConfig,
    dir: &Path,
    workers: Option<usize>,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut out = match name {
        ExperimentName::RateApprox => Output::new("sigma0 / Ae", "rate (bits)"),
        ExperimentName::RateBoundsSnr => Output::new("SNR (dB)", "rate (bits)"),
        ExperimentName::RateBoundsM => Output::new("M", "rate (bits)"),
        ExperimentName::FxFit => Output::new("x", "F(x)"),
        ExperimentName::ApproxError => Output::new("sigma0 / Ae", "error probability"),
        ExperimentName::ThresholdCompare => Output::new("sigma0 / Ae", "z_th / Ae"),
        ExperimentName::ErrorCompare => Output::new("SNR (dB)", "error probability"),
        ExperimentName::KlProfile => Output::new("z_th / Ae", "min KL (nats)"),
    };
    match name {
        ExperimentName::RateApprox => rate_approx(cfg, &mut out)?,
        ExperimentName::RateBoundsSnr => rate_bounds_snr(cfg, &mut out)?,
        ExperimentName::RateBoundsM => rate_bounds_m(cfg, &mut out)?,
        ExperimentName::FxFit => fx_fit(cfg, &mut out)?,
        ExperimentName::ApproxError => approx_error(cfg, &mut out, workers)?,
        ExperimentName::ThresholdCompare => threshold_compare(cfg, &mut out)?,
        ExperimentName::ErrorCompare => error_compare(cfg, &mut out)?,
        ExperimentName::KlProfile => kl_profile(cfg, &mut out)?,
    }
    let script = format!("{}.gp", name.as_str());
    out.files.push((script.clone(), out.gnuplot(name.as_str())));

    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (file, body) in &out.files {
        fs::write(dir.join(file), body)?;
        files.push(ManifestFile {
            name: file.clone(),
            sha256: hex_digest(body.as_bytes()),
        });
    }
    let manifest = Manifest {
        experiment: name.as_str().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        files,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Numeric(format!("manifest: {e}")))?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(ExperimentOutput {
        dir: dir.to_path_buf(),
        files: out.files.into_iter().map(|(n, _)| n).collect(),
        manifest,
    })
}
