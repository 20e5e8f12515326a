//! MAP symbol detection from the interval outputs.
//!
//! Under the single-photon mixtures the per-interval log-likelihood ratio
//! depends on `z` only through the quadratic statistic
//! `x = a₂z² + a₁z + a₀ = ln(G₁(z)/G₀(z))`, giving
//!
//! ```text
//! LLR = Σ_m F(x_m),  F(x) = ln[((1−γ_t) + γ_t eˣ) / ((1−γ_b) + γ_b eˣ)].
//! ```
//!
//! `F` is increasing, bounded by two plateaus and point-symmetric about
//! `x₀`. The reduced-complexity detectors replace `F` with a three-piece
//! linear function or with cubic pieces fitted by weighted least squares.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::channel::{gaussian_pdf_unchecked, ChannelConfig, PmtParams};
use crate::error::{domain, Error, Result};
use crate::scalar::{log_add_exp, Real};

/// Default number of least-squares nodes per cubic segment.
pub const DEFAULT_CUBIC_NODES: usize = 201;

/// Minimum number of least-squares nodes per cubic segment.
pub const MIN_CUBIC_NODES: usize = 8;

const RECORD_MAGIC: &str = "pmtcomm-detector v1";

/// Coefficients of `ln(G₁(z)/G₀(z)) = a₂z² + a₁z + a₀`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LlrCoefficients<T> {
    pub a2: T,
    pub a1: T,
    pub a0: T,
}

impl<T: Real> LlrCoefficients<T> {
    #[inline]
    pub fn statistic(&self, z: T) -> T {
        (self.a2 * z + self.a1) * z + self.a0
    }

    /// Smallest value the statistic can take (`−∞` when `a₂ = 0`).
    pub fn min_statistic(&self) -> T {
        if self.a2 > T::zero() {
            self.a0 - self.a1 * self.a1 / (T::lit(4.0) * self.a2)
        } else {
            T::neg_infinity()
        }
    }
}

/// Quadratic-statistic coefficients for thermal variance `thermal_var`.
pub fn llr_coefficients<T: Real>(pmt: &PmtParams<T>, thermal_var: T) -> Result<LlrCoefficients<T>> {
    if !(thermal_var > T::zero()) {
        return domain("thermal variance must be positive");
    }
    let half = T::lit(0.5);
    let ae = pmt.pulse_amplitude();
    let s2 = pmt.shot_var();
    let total = thermal_var + s2;
    Ok(LlrCoefficients {
        // 1/(2σ₀²) − 1/(2(σ₀²+σ²)) = σ²/(2σ₀²(σ₀²+σ²)), cancellation-free
        a2: half * s2 / (thermal_var * total),
        a1: ae / total,
        a0: half * (thermal_var / total).ln() - half * ae * ae / total,
    })
}

/// The per-interval log-likelihood ratio `F` for fixed `(γ_t, γ_b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LlrFunction<T> {
    pub gamma_t: T,
    pub gamma_b: T,
    ln_t: T,
    ln_not_t: T,
    ln_b: T,
    ln_not_b: T,
}

impl<T: Real> LlrFunction<T> {
    /// Requires `0 ≤ γ_b ≤ γ_t < 1`. `γ_b = 0` is allowed; the right
    /// plateau is then `+∞`.
    pub fn new(gamma_t: T, gamma_b: T) -> Result<Self> {
        if !(gamma_b >= T::zero() && gamma_b <= gamma_t && gamma_t < T::one()) {
            return domain(format!(
                "need 0 ≤ γ_b ≤ γ_t < 1, got γ_t = {gamma_t}, γ_b = {gamma_b}"
            ));
        }
        Ok(Self {
            gamma_t,
            gamma_b,
            ln_t: gamma_t.ln(),
            ln_not_t: (-gamma_t).ln_1p(),
            ln_b: gamma_b.ln(),
            ln_not_b: (-gamma_b).ln_1p(),
        })
    }

    pub fn from_config(config: &ChannelConfig<T>) -> Result<Self> {
        Self::new(config.gamma_t(), config.gamma_b())
    }

    #[inline]
    pub fn eval(&self, x: T) -> T {
        log_add_exp(self.ln_not_t, self.ln_t + x) - log_add_exp(self.ln_not_b, self.ln_b + x)
    }

    /// `F′(x) = (γ_t − γ_b) / [(1−γ_t)(1−γ_b)e^{−x} + (γ_t + γ_b − 2γ_tγ_b) + γ_tγ_b eˣ]`.
    pub fn derivative(&self, x: T) -> T {
        let (t, b) = (self.gamma_t, self.gamma_b);
        let one = T::one();
        let two = T::lit(2.0);
        (t - b) / ((one - t) * (one - b) * (-x).exp() + (t + b - two * t * b) + t * b * x.exp())
    }

    /// `lim_{x→−∞} F = ln((1−γ_t)/(1−γ_b))`.
    pub fn left_plateau(&self) -> T {
        self.ln_not_t - self.ln_not_b
    }

    /// `lim_{x→+∞} F = ln(γ_t/γ_b)`.
    pub fn right_plateau(&self) -> T {
        self.ln_t - self.ln_b
    }

    /// Symmetry centre `x₀ = ½ ln[(1−γ_t)(1−γ_b)/(γ_tγ_b)]`.
    pub fn center(&self) -> T {
        T::lit(0.5) * (self.ln_not_t + self.ln_not_b - self.ln_t - self.ln_b)
    }

    /// `F(x₀)`, the midpoint of the two plateaus.
    pub fn center_value(&self) -> T {
        T::lit(0.5) * (self.ln_t + self.ln_not_t - self.ln_b - self.ln_not_b)
    }
}

/// Evaluates `F(x)` for per-interval means `γ_t`, `γ_b`.
pub fn f_of_x<T: Real>(x: T, gamma_t: T, gamma_b: T) -> Result<T> {
    Ok(LlrFunction::new(gamma_t, gamma_b)?.eval(x))
}

/// Symmetry centre `x₀` of `F`.
pub fn symmetry_center<T: Real>(gamma_t: T, gamma_b: T) -> Result<T> {
    Ok(LlrFunction::new(gamma_t, gamma_b)?.center())
}

fn interval_coefficients<T: Real>(
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
) -> Result<LlrCoefficients<T>> {
    if !(pmt.thermal_std_symbol > T::zero()) {
        return domain("LLR detection needs positive thermal noise");
    }
    llr_coefficients(pmt, pmt.interval_thermal_var(config.intervals))
}

/// Exact single-photon LLR `Σ_m F(a₂z_m² + a₁z_m + a₀)` with per-interval
/// thermal variance `σ₀²/M`.
pub fn llr_exact<T: Real>(z: &[T], config: &ChannelConfig<T>, pmt: &PmtParams<T>) -> Result<T> {
    let coeffs = interval_coefficients(config, pmt)?;
    let f = LlrFunction::from_config(config)?;
    Ok(z.iter()
        .fold(T::zero(), |acc, &zm| acc + f.eval(coeffs.statistic(zm))))
}

/// Which output density weights the statistic `x`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum XWeighting {
    /// `p(z) = (1 − w)p₀(z) + w·p₁(z)`.
    #[default]
    Marginal,
    /// `p₀(z)` only.
    SymbolZero,
    /// `p₁(z)` only.
    SymbolOne,
}

impl XWeighting {
    pub fn name(self) -> &'static str {
        match self {
            Self::Marginal => "marginal",
            Self::SymbolZero => "symbol0",
            Self::SymbolOne => "symbol1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "marginal" => Ok(Self::Marginal),
            "symbol0" => Ok(Self::SymbolZero),
            "symbol1" => Ok(Self::SymbolOne),
            other => Err(Error::Invalid(format!("unknown x weighting `{other}`"))),
        }
    }
}

/// Value of the density of `x` and whether it was capped at the vertex.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XDensity<T> {
    pub density: T,
    pub at_vertex: bool,
}

/// Density of the statistic `x = a₂Z² + a₁Z + a₀` when `Z` follows the
/// single-photon output law selected by `weighting`.
#[derive(Clone, Copy, Debug)]
pub struct StatisticDensity<T> {
    coeffs: LlrCoefficients<T>,
    w0: T,
    w1: T,
    gamma_t: T,
    gamma_b: T,
    pulse: T,
    thermal_var: T,
    pulse_var: T,
}

impl<T: Real> StatisticDensity<T> {
    pub fn new(
        config: &ChannelConfig<T>,
        pmt: &PmtParams<T>,
        weighting: XWeighting,
    ) -> Result<Self> {
        let coeffs = interval_coefficients(config, pmt)?;
        let w = config.prior_one;
        let (w0, w1) = match weighting {
            XWeighting::Marginal => (T::one() - w, w),
            XWeighting::SymbolZero => (T::one(), T::zero()),
            XWeighting::SymbolOne => (T::zero(), T::one()),
        };
        let (gamma_t, gamma_b) = (config.gamma_t(), config.gamma_b());
        if gamma_t > T::one() {
            return domain("single-photon mixture needs γ_t ≤ 1");
        }
        let tv = pmt.interval_thermal_var(config.intervals);
        Ok(Self {
            coeffs,
            w0,
            w1,
            gamma_t,
            gamma_b,
            pulse: pmt.pulse_amplitude(),
            thermal_var: tv,
            pulse_var: tv + pmt.shot_var(),
        })
    }

    pub fn coefficients(&self) -> &LlrCoefficients<T> {
        &self.coeffs
    }

    /// Output density `p(z)` for the selected weighting.
    pub fn z_density(&self, z: T) -> T {
        let g0 = gaussian_pdf_unchecked(z, T::zero(), self.thermal_var);
        let g1 = gaussian_pdf_unchecked(z, self.pulse, self.pulse_var);
        let one = T::one();
        let mix = |g: T| (one - g) * g0 + g * g1;
        self.w0 * mix(self.gamma_b) + self.w1 * mix(self.gamma_t)
    }

    pub fn eval(&self, x: T) -> XDensity<T> {
        let LlrCoefficients { a2, a1, a0 } = self.coeffs;
        if a2 == T::zero() {
            return XDensity {
                density: self.z_density((x - a0) / a1) / a1,
                at_vertex: false,
            };
        }
        let disc = a1 * a1 - T::lit(4.0) * a2 * (a0 - x);
        if disc < T::zero() {
            return XDensity {
                density: T::zero(),
                at_vertex: false,
            };
        }
        let at_vertex = disc == T::zero();
        let root = disc.sqrt().max(T::epsilon() * a1);
        // numerically stable quadratic roots, a₁ > 0
        let q = -T::lit(0.5) * (a1 + root);
        let z_far = q / a2;
        let z_near = (a0 - x) / q;
        XDensity {
            density: (self.z_density(z_far) + self.z_density(z_near)) / root,
            at_vertex,
        }
    }
}

/// Density of `x` at a point; see [`StatisticDensity`].
pub fn pdf_of_x<T: Real>(
    x: T,
    weighting: XWeighting,
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
) -> Result<XDensity<T>> {
    Ok(StatisticDensity::new(config, pmt, weighting)?.eval(x))
}

/// Approximation family of a [`PiecewiseDetector`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PiecewiseKind {
    Linear,
    Cubic,
}

impl PiecewiseKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Cubic => "cubic",
        }
    }
}

/// Piecewise-polynomial stand-in for `F`.
///
/// `segments[i]` holds ascending-power coefficients valid on
/// `[breakpoints[i], breakpoints[i+1])`; outside the breakpoints the
/// plateaus apply.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseDetector<T> {
    pub kind: PiecewiseKind,
    pub breakpoints: Vec<T>,
    pub segments: Vec<Vec<T>>,
    pub left_plateau: T,
    pub right_plateau: T,
    pub center: T,
    /// 1-norm condition numbers of the per-segment normal matrices (cubic).
    pub condition: Vec<T>,
    /// Free-form description of the inputs the detector was fitted from.
    pub source: String,
}

impl<T: Real> PiecewiseDetector<T> {
    pub fn eval(&self, x: T) -> T {
        let bp = &self.breakpoints;
        if bp.is_empty() || x < bp[0] {
            return self.left_plateau;
        }
        if x >= bp[bp.len() - 1] {
            return self.right_plateau;
        }
        // a handful of breakpoints: linear scan beats binary search
        let seg = bp
            .windows(2)
            .position(|w| x >= w[0] && x < w[1])
            .unwrap_or(0);
        self.segments[seg]
            .iter()
            .rev()
            .fold(T::zero(), |acc, &c| acc * x + c)
    }

    fn body(&self) -> String {
        let mut s = String::new();
        let join = |v: &[T]| {
            v.iter()
                .map(|c| format!("{c:e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(s, "{RECORD_MAGIC}");
        let _ = writeln!(s, "kind {}", self.kind.name());
        let _ = writeln!(s, "source {}", self.source);
        let _ = writeln!(s, "center {:e}", self.center);
        let _ = writeln!(s, "left_plateau {:e}", self.left_plateau);
        let _ = writeln!(s, "right_plateau {:e}", self.right_plateau);
        let _ = writeln!(s, "breakpoints {}", join(&self.breakpoints));
        for (i, seg) in self.segments.iter().enumerate() {
            let _ = writeln!(s, "segment {i} {}", join(seg));
        }
        if !self.condition.is_empty() {
            let _ = writeln!(s, "condition {}", join(&self.condition));
        }
        s
    }

    /// Plain-text export ending in a SHA-256 provenance line over the body.
    pub fn to_record(&self) -> String {
        let body = self.body();
        format!("{body}provenance {}\n", hex_digest(body.as_bytes()))
    }

    /// Parses a record written by [`to_record`](Self::to_record), verifying
    /// its provenance hash.
    pub fn from_record(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("detector record: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(RECORD_MAGIC) {
            return Err(bad("missing or unsupported header"));
        }
        let num = |s: &str| -> Result<T> {
            s.parse::<f64>()
                .map(T::lit)
                .map_err(|_| bad(&format!("bad number `{s}`")))
        };
        let nums = |rest: &str| -> Result<Vec<T>> { rest.split_whitespace().map(num).collect() };
        let mut kind = None;
        let mut source = String::new();
        let (mut center, mut left, mut right) = (None, None, None);
        let mut breakpoints = Vec::new();
        let mut segments = Vec::new();
        let mut condition = Vec::new();
        let mut provenance = None;
        for line in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "kind" => {
                    kind = Some(match rest {
                        "linear" => PiecewiseKind::Linear,
                        "cubic" => PiecewiseKind::Cubic,
                        other => return Err(bad(&format!("unknown kind `{other}`"))),
                    })
                }
                "source" => source = rest.to_string(),
                "center" => center = Some(num(rest)?),
                "left_plateau" => left = Some(num(rest)?),
                "right_plateau" => right = Some(num(rest)?),
                "breakpoints" => breakpoints = nums(rest)?,
                "segment" => {
                    let (idx, coeffs) = rest.split_once(' ').ok_or_else(|| bad("empty segment"))?;
                    if idx.parse::<usize>().ok() != Some(segments.len()) {
                        return Err(bad("segments out of order"));
                    }
                    segments.push(nums(coeffs)?);
                }
                "condition" => condition = nums(rest)?,
                "provenance" => provenance = Some(rest.to_string()),
                "" => {}
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        let det = Self {
            kind: kind.ok_or_else(|| bad("missing kind"))?,
            breakpoints,
            segments,
            left_plateau: left.ok_or_else(|| bad("missing left_plateau"))?,
            right_plateau: right.ok_or_else(|| bad("missing right_plateau"))?,
            center: center.ok_or_else(|| bad("missing center"))?,
            condition,
            source,
        };
        if det.breakpoints.len() != det.segments.len() + 1 {
            return Err(bad("breakpoint/segment count mismatch"));
        }
        if det.breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(bad("breakpoints not strictly increasing"));
        }
        let expected = hex_digest(det.body().as_bytes());
        match provenance {
            Some(p) if p == expected => Ok(det),
            Some(_) => Err(bad("provenance hash mismatch")),
            None => Err(bad("missing provenance")),
        }
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn describe<T: Real>(config: &ChannelConfig<T>, pmt: &PmtParams<T>) -> String {
    format!(
        "lambda_s={:e} lambda_b={:e} intervals={} prior_one={:e} pulse={:e} xi={:e} sigma0={:e}",
        config.lambda_s,
        config.lambda_b,
        config.intervals,
        config.prior_one,
        pmt.pulse_amplitude(),
        pmt.spreading_factor,
        pmt.thermal_std_symbol
    )
}

fn strict_llr<T: Real>(config: &ChannelConfig<T>) -> Result<LlrFunction<T>> {
    let f = LlrFunction::from_config(config)?;
    if !(f.gamma_b > T::zero() && f.gamma_b < f.gamma_t) {
        return domain("piecewise detectors need 0 < γ_b < γ_t < 1");
    }
    Ok(f)
}

/// Three-piece linear approximation: the two plateaus joined by the tangent
/// of `F` at `x₀`.
pub fn fit_linear<T: Real>(
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
) -> Result<PiecewiseDetector<T>> {
    let f = strict_llr(config)?;
    let x0 = f.center();
    let f0 = f.center_value();
    let k = f.derivative(x0);
    let x1 = (f.left_plateau() - f0) / k + x0;
    let x2 = (f.right_plateau() - f0) / k + x0;
    Ok(PiecewiseDetector {
        kind: PiecewiseKind::Linear,
        breakpoints: vec![x1, x2],
        segments: vec![vec![f0 - k * x0, k]],
        left_plateau: f.left_plateau(),
        right_plateau: f.right_plateau(),
        center: x0,
        condition: Vec::new(),
        source: describe(config, pmt),
    })
}

/// Options for [`fit_cubic`].
#[derive(Clone, Copy, Debug)]
pub struct CubicFitOptions {
    /// Equally spaced least-squares nodes per segment (`J`).
    pub nodes: usize,
    pub weighting: XWeighting,
}

impl Default for CubicFitOptions {
    fn default() -> Self {
        Self {
            nodes: DEFAULT_CUBIC_NODES,
            weighting: XWeighting::Marginal,
        }
    }
}

/// Cubic least-squares result on one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicFit<T> {
    /// Ascending-power coefficients `[k(1), k(2), k(3), k(4)]`.
    pub coeffs: [T; 4],
    /// 1-norm condition number of the (scaled) normal matrix.
    pub condition: T,
}

/// Minimizes `Σ_j w_j (k₀ + k₁v_j + k₂v_j² + k₃v_j³ − y_j)²`.
///
/// The fit is carried out in a variable mapped to `[−1, 1]` and converted
/// back to powers of `v`.
pub fn weighted_cubic_fit<T: Real>(
    nodes: &[T],
    values: &[T],
    weights: &[T],
) -> Result<CubicFit<T>> {
    let singular = |detail: String| Error::Singular { segment: 0, detail };
    if nodes.len() != values.len() || nodes.len() != weights.len() {
        return Err(Error::Invalid(
            "nodes, values and weights must have equal length".into(),
        ));
    }
    let lo = nodes.iter().copied().fold(T::infinity(), T::min);
    let hi = nodes.iter().copied().fold(T::neg_infinity(), T::max);
    if !(hi > lo) {
        return Err(singular("nodes span an empty interval".into()));
    }
    let wmax = weights.iter().copied().fold(T::zero(), T::max);
    if !(wmax > T::zero()) || !wmax.is_finite() {
        return Err(singular("all weights vanish; use more nodes".into()));
    }
    let two = T::lit(2.0);
    let mid = (lo + hi) / two;
    let half = (hi - lo) / two;

    let mut a = [[T::zero(); 4]; 4];
    let mut b = [T::zero(); 4];
    for ((&v, &y), &w) in nodes.iter().zip(values).zip(weights) {
        let w = w / wmax;
        if w == T::zero() {
            continue;
        }
        let t = (v - mid) / half;
        let basis = [T::one(), t, t * t, t * t * t];
        for r in 0..4 {
            b[r] = b[r] + w * basis[r] * y;
            for c in 0..4 {
                a[r][c] = a[r][c] + w * basis[r] * basis[c];
            }
        }
    }
    let lu = Lu::factor(a)
        .ok_or_else(|| singular("normal matrix is singular; use more nodes".into()))?;
    let scaled = lu.solve(b);
    let inv_norm = (0..4)
        .map(|c| {
            let mut e = [T::zero(); 4];
            e[c] = T::one();
            lu.solve(e).iter().fold(T::zero(), |acc, v| acc + v.abs())
        })
        .fold(T::zero(), T::max);
    let a_norm = (0..4)
        .map(|c| (0..4).fold(T::zero(), |acc, r| acc + a[r][c].abs()))
        .fold(T::zero(), T::max);
    let condition = a_norm * inv_norm;
    if !condition.is_finite() || condition > T::one() / T::epsilon() {
        return Err(singular(format!(
            "condition number {condition} too large; use more nodes"
        )));
    }

    // p(t) with t = (v − mid)/half  →  coefficients in powers of v
    let s = T::one() / half;
    let c = -mid / half;
    // (s v + c)^k expanded
    let pow_terms: [[T; 4]; 4] = [
        [T::one(), T::zero(), T::zero(), T::zero()],
        [c, s, T::zero(), T::zero()],
        [c * c, two * c * s, s * s, T::zero()],
        [
            c * c * c,
            T::lit(3.0) * c * c * s,
            T::lit(3.0) * c * s * s,
            s * s * s,
        ],
    ];
    let mut coeffs = [T::zero(); 4];
    for (k, row) in pow_terms.iter().enumerate() {
        for p in 0..4 {
            coeffs[p] = coeffs[p] + scaled[k] * row[p];
        }
    }
    Ok(CubicFit { coeffs, condition })
}

struct Lu<T> {
    m: [[T; 4]; 4],
    perm: [usize; 4],
}

impl<T: Real> Lu<T> {
    fn factor(mut m: [[T; 4]; 4]) -> Option<Self> {
        let mut perm = [0, 1, 2, 3];
        for k in 0..4 {
            let p = (k..4).max_by(|&i, &j| m[i][k].abs().partial_cmp(&m[j][k].abs()).unwrap())?;
            if !(m[p][k].abs() > T::zero()) {
                return None;
            }
            m.swap(k, p);
            perm.swap(k, p);
            for i in k + 1..4 {
                let f = m[i][k] / m[k][k];
                m[i][k] = f;
                for j in k + 1..4 {
                    m[i][j] = m[i][j] - f * m[k][j];
                }
            }
        }
        Some(Self { m, perm })
    }

    fn solve(&self, b: [T; 4]) -> [T; 4] {
        let mut y = [T::zero(); 4];
        for i in 0..4 {
            y[i] = (0..i).fold(b[self.perm[i]], |acc, j| acc - self.m[i][j] * y[j]);
        }
        let mut x = [T::zero(); 4];
        for i in (0..4).rev() {
            x[i] = (i + 1..4).fold(y[i], |acc, j| acc - self.m[i][j] * x[j]) / self.m[i][i];
        }
        x
    }
}

/// Five-part approximation: plateaus outside `[−x₀, 2x₀)` and cubic
/// least-squares pieces on `[−x₀, 0)`, `[0, x₀)` and `[x₀, 2x₀)`, weighted
/// by the density of `x`.
pub fn fit_cubic<T: Real>(
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
    opts: CubicFitOptions,
) -> Result<PiecewiseDetector<T>> {
    if opts.nodes < MIN_CUBIC_NODES {
        return domain(format!(
            "cubic fit needs at least {MIN_CUBIC_NODES} nodes per segment"
        ));
    }
    let f = strict_llr(config)?;
    let x0 = f.center();
    if !(x0 > T::zero()) {
        return domain("cubic segmentation needs a positive symmetry centre (γ_t + γ_b < 1)");
    }
    let density = StatisticDensity::new(config, pmt, opts.weighting)?;
    let breakpoints = vec![-x0, T::zero(), x0, x0 + x0];
    let mut segments = Vec::with_capacity(3);
    let mut condition = Vec::with_capacity(3);
    let last = T::from_usize_lossy(opts.nodes - 1);
    for (i, w) in breakpoints.windows(2).enumerate() {
        let nodes: Vec<T> = (0..opts.nodes)
            .map(|j| w[0] + (w[1] - w[0]) * T::from_usize_lossy(j) / last)
            .collect();
        let values: Vec<T> = nodes.iter().map(|&v| f.eval(v)).collect();
        let weights: Vec<T> = nodes.iter().map(|&v| density.eval(v).density).collect();
        let fit = weighted_cubic_fit(&nodes, &values, &weights).map_err(|e| match e {
            Error::Singular { detail, .. } => Error::Singular { segment: i, detail },
            other => other,
        })?;
        segments.push(fit.coeffs.to_vec());
        condition.push(fit.condition);
    }
    Ok(PiecewiseDetector {
        kind: PiecewiseKind::Cubic,
        breakpoints,
        segments,
        left_plateau: f.left_plateau(),
        right_plateau: f.right_plateau(),
        center: x0,
        condition,
        source: format!(
            "{} nodes={} weighting={}",
            describe(config, pmt),
            opts.nodes,
            opts.weighting.name()
        ),
    })
}

/// How the per-interval LLR term is evaluated.
#[derive(Clone, Debug, PartialEq)]
pub enum LlrRule<T> {
    Exact(LlrFunction<T>),
    Approx(PiecewiseDetector<T>),
}

/// MAP detector: decides `X = 1` iff `Σ_m g(x_m) > η`.
#[derive(Clone, Debug, PartialEq)]
pub struct MapDetector<T> {
    pub coeffs: LlrCoefficients<T>,
    pub rule: LlrRule<T>,
    pub eta: T,
}

impl<T: Real> MapDetector<T> {
    pub fn exact(config: &ChannelConfig<T>, pmt: &PmtParams<T>) -> Result<Self> {
        Ok(Self {
            coeffs: interval_coefficients(config, pmt)?,
            rule: LlrRule::Exact(LlrFunction::from_config(config)?),
            eta: config.eta(),
        })
    }

    pub fn approx(
        config: &ChannelConfig<T>,
        pmt: &PmtParams<T>,
        detector: PiecewiseDetector<T>,
    ) -> Result<Self> {
        Ok(Self {
            coeffs: interval_coefficients(config, pmt)?,
            rule: LlrRule::Approx(detector),
            eta: config.eta(),
        })
    }

    /// `Σ_m g(x_m)`.
    pub fn statistic(&self, z: &[T]) -> T {
        match &self.rule {
            LlrRule::Exact(f) => z
                .iter()
                .fold(T::zero(), |acc, &v| acc + f.eval(self.coeffs.statistic(v))),
            LlrRule::Approx(g) => z
                .iter()
                .fold(T::zero(), |acc, &v| acc + g.eval(self.coeffs.statistic(v))),
        }
    }

    pub fn decide(&self, z: &[T]) -> bool {
        self.statistic(z) > self.eta
    }
}

/// Detector selector for [`detect`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectorChoice {
    Exact,
    Linear,
    Cubic,
}

/// One-shot MAP decision on an interval-output vector.
pub fn detect<T: Real>(
    z: &[T],
    choice: DetectorChoice,
    config: &ChannelConfig<T>,
    pmt: &PmtParams<T>,
) -> Result<bool> {
    let det = match choice {
        DetectorChoice::Exact => MapDetector::exact(config, pmt)?,
        DetectorChoice::Linear => MapDetector::approx(config, pmt, fit_linear(config, pmt)?)?,
        DetectorChoice::Cubic => MapDetector::approx(
            config,
            pmt,
            fit_cubic(config, pmt, CubicFitOptions::default())?,
        )?,
    };
    Ok(det.decide(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{gaussian_pdf, single_photon_pdf};

    fn fig_setup(s0_interval: f64) -> (ChannelConfig<f64>, PmtParams<f64>) {
        let m = 1000;
        let c = ChannelConfig::<f64>::new(10.0, 0.1, m, 0.5).unwrap();
        let p = PmtParams::<f64>::normalized(0.1, s0_interval * (m as f64).sqrt()).unwrap();
        (c, p)
    }

    #[test]
    fn coefficients_examples() {
        let no_shot = PmtParams::<f64>::normalized(0.0, 1.0).unwrap();
        let c = llr_coefficients(&no_shot, 0.04).unwrap();
        assert_eq!(c.a2, 0.0);
        assert!((c.a1 - 1.0 / 0.04).abs() < 1e-12);
        assert!((c.a0 + 1.0 / (2.0 * 0.04)).abs() < 1e-12);

        let p = PmtParams::<f64>::normalized(0.1, 1.0).unwrap();
        let c = llr_coefficients(&p, 0.01).unwrap();
        assert!((c.a1 - 50.0).abs() < 1e-12);
        for i in 0..=200 {
            let z = -0.5 + 2.0 * i as f64 / 200.0;
            let ratio = gaussian_pdf(z, 1.0, 0.02).unwrap() / gaussian_pdf(z, 0.0, 0.01).unwrap();
            let lhs = c.statistic(z).exp();
            assert!((lhs / ratio - 1.0).abs() < 1e-10, "z = {z}");
        }
        assert!(llr_coefficients(&p, 0.0).is_err());
    }

    #[test]
    fn plateaus_and_center() {
        let (gt, gb) = (0.1, 0.01);
        let f = LlrFunction::<f64>::new(gt, gb).unwrap();
        assert!((f.eval(-60.0) - (0.9f64 / 0.99).ln()).abs() < 1e-12);
        assert!((f.eval(80.0) - 10f64.ln()).abs() < 1e-12);
        let x0 = symmetry_center(gt, gb).unwrap();
        assert!((x0 - 0.5 * 891f64.ln()).abs() < 1e-12);
        assert!((x0 - 3.396_172_213_735_404_5).abs() < 1e-12);
        let mid = 0.5 * (gt * (1.0 - gt) / (gb * (1.0 - gb))).ln();
        assert!((f.eval(x0) - mid).abs() < 1e-12);
        for d in [0.1, 1.0, 10.0] {
            assert!((f.eval(x0 + d) + f.eval(x0 - d) - 2.0 * f.eval(x0)).abs() < 1e-10);
        }
        assert_eq!(symmetry_center(0.5, 0.5).unwrap(), 0.0);
        assert!(f_of_x(0.0, 0.1, 0.2).is_err());
        // γ_b = 0: right plateau representable as +∞
        let g = LlrFunction::<f64>::new(0.1, 0.0).unwrap();
        assert_eq!(g.right_plateau(), f64::INFINITY);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let f = LlrFunction::<f64>::new(0.0101, 1e-4).unwrap();
        for x in [-10.0, 0.0, 3.0, 6.9, 12.0] {
            let h = 1e-5;
            let fd = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
            assert!((fd - f.derivative(x)).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn llr_exact_matches_pdf_ratio() {
        let (c, p) = fig_setup(0.15);
        assert_eq!(llr_exact(&[], &c, &p).unwrap(), 0.0);
        let tv = p.interval_thermal_var(c.intervals);
        let z = [-0.3, 0.02, 0.41, 0.77, 1.05, 2.1];
        let oracle: f64 = z
            .iter()
            .map(|&v| {
                (single_photon_pdf(v, c.gamma_t(), &p, tv).unwrap()
                    / single_photon_pdf(v, c.gamma_b(), &p, tv).unwrap())
                .ln()
            })
            .sum();
        assert!((llr_exact(&z, &c, &p).unwrap() - oracle).abs() < 1e-9);
        let same = ChannelConfig::<f64>::new(0.0, 0.1, 1000, 0.5).unwrap();
        assert_eq!(llr_exact(&z, &same, &p).unwrap(), 0.0);
    }

    #[test]
    fn x_density_linear_case() {
        let c = ChannelConfig::<f64>::new(10.0, 0.1, 100, 0.5).unwrap();
        let p = PmtParams::<f64>::normalized(0.0, 1.0).unwrap();
        let d = StatisticDensity::new(&c, &p, XWeighting::Marginal).unwrap();
        let k = d.coefficients();
        assert_eq!(k.a2, 0.0);
        for x in [-60.0, -50.0, 0.0, 10.0] {
            let expect = d.z_density((x - k.a0) / k.a1) / k.a1;
            assert_eq!(d.eval(x).density, expect);
        }
    }

    #[test]
    fn x_density_below_vertex_is_zero_and_vertex_is_flagged() {
        let (c, p) = fig_setup(0.1);
        let d = StatisticDensity::new(&c, &p, XWeighting::Marginal).unwrap();
        let xmin = d.coefficients().min_statistic();
        assert_eq!(d.eval(xmin - 1.0).density, 0.0);
        let v = d.eval(xmin);
        assert!(v.at_vertex && v.density.is_finite());
    }

    #[test]
    fn linear_fit_construction() {
        let (c, p) = fig_setup(0.1);
        let g = fit_linear(&c, &p).unwrap();
        let f = LlrFunction::from_config(&c).unwrap();
        assert!((g.eval(g.center) - f.eval(g.center)).abs() < 1e-12);
        assert_eq!(g.eval(g.breakpoints[0] - 1e-9), f.left_plateau());
        assert_eq!(g.eval(g.breakpoints[1]), f.right_plateau());
        assert!((g.eval(g.breakpoints[0]) - f.left_plateau()).abs() < 1e-12);
        assert!((g.left_plateau - f.left_plateau()).abs() < 1e-12);
        assert!((g.right_plateau - f.right_plateau()).abs() < 1e-12);
        // the tangent meets the plateaus below F, so the largest error sits
        // at the two junctions and is the same at both by point symmetry
        let (x1, x2) = (g.breakpoints[0], g.breakpoints[1]);
        let e1 = f.eval(x1) - g.eval(x1);
        let e2 = g.right_plateau - f.eval(x2);
        assert!(e1 > 0.0 && (e1 - e2).abs() < 1e-10);
        let n = 20_000;
        for i in 0..=n {
            let x = x1 + (x2 - x1) * i as f64 / n as f64;
            assert!((g.eval(x) - f.eval(x)).abs() <= e1 + 1e-12);
        }
    }

    #[test]
    fn cubic_fit_reproduces_cubic() {
        let nodes: Vec<f64> = (0..51).map(|j| -3.0 + 6.0 * j as f64 / 50.0).collect();
        let poly = |x: f64| 0.7 - 1.3 * x + 0.25 * x * x - 0.04 * x * x * x;
        let values: Vec<f64> = nodes.iter().map(|&x| poly(x)).collect();
        let weights: Vec<f64> = nodes.iter().map(|&x| (-x * x).exp()).collect();
        let fit = weighted_cubic_fit(&nodes, &values, &weights).unwrap();
        let expect = [0.7, -1.3, 0.25, -0.04];
        for (a, b) in fit.coeffs.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn four_weights_interpolate() {
        let nodes: Vec<f64> = (0..20).map(|j| j as f64 * 0.25).collect();
        let values: Vec<f64> = nodes.iter().map(|&x| (x).sin()).collect();
        let mut weights = vec![0.0; 20];
        for i in [1, 6, 11, 17] {
            weights[i] = 1.0 + i as f64;
        }
        let fit = weighted_cubic_fit(&nodes, &values, &weights).unwrap();
        for i in [1, 6, 11, 17] {
            let x = nodes[i];
            let y = fit.coeffs.iter().rev().fold(0.0, |a, &c| a * x + c);
            assert!((y - values[i]).abs() < 1e-9);
        }
        let zero = vec![0.0; 20];
        assert!(matches!(
            weighted_cubic_fit(&nodes, &values, &zero),
            Err(Error::Singular { .. })
        ));
        weights = vec![0.0; 20];
        weights[3] = 1.0;
        weights[4] = 1.0;
        assert!(matches!(
            weighted_cubic_fit(&nodes, &values, &weights),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn cubic_beats_linear_in_weighted_residual() {
        let (c, p) = fig_setup(0.2);
        let opts = CubicFitOptions::default();
        let cubic = fit_cubic(&c, &p, opts).unwrap();
        let linear = fit_linear(&c, &p).unwrap();
        let f = LlrFunction::from_config(&c).unwrap();
        let dens = StatisticDensity::new(&c, &p, XWeighting::Marginal).unwrap();
        for w in cubic.breakpoints.windows(2) {
            let mut rc = 0.0;
            let mut rl = 0.0;
            for j in 0..opts.nodes {
                let v = w[0] + (w[1] - w[0]) * j as f64 / (opts.nodes - 1) as f64;
                let wt = dens.eval(v).density;
                rc += wt * (cubic.eval(v) - f.eval(v)).powi(2);
                rl += wt * (linear.eval(v) - f.eval(v)).powi(2);
            }
            assert!(
                rc <= rl * (1.0 + 1e-12),
                "segment {:?}: cubic {rc} linear {rl}",
                w
            );
        }
        assert!(fit_cubic(&c, &p, CubicFitOptions { nodes: 4, ..opts }).is_err());
    }

    #[test]
    fn record_round_trip_and_tamper_detection() {
        let (c, p) = fig_setup(0.15);
        let det = fit_cubic(&c, &p, CubicFitOptions::default()).unwrap();
        let text = det.to_record();
        let back = PiecewiseDetector::<f64>::from_record(&text).unwrap();
        assert_eq!(back, det);
        let tampered = text.replacen("segment 1 ", "segment 1 1", 1);
        assert!(PiecewiseDetector::<f64>::from_record(&tampered).is_err());
        assert!(PiecewiseDetector::<f64>::from_record("nonsense").is_err());
    }

    #[test]
    fn detect_simple_cases() {
        let (c, p) = fig_setup(0.1);
        let quiet = vec![0.0; c.intervals];
        for choice in [
            DetectorChoice::Exact,
            DetectorChoice::Linear,
            DetectorChoice::Cubic,
        ] {
            assert!(!detect(&quiet, choice, &c, &p).unwrap());
        }
        let mut lit = quiet.clone();
        for v in lit.iter_mut().take(10) {
            *v = 1.0;
        }
        assert!(detect(&lit, DetectorChoice::Exact, &c, &p).unwrap());
    }
}
