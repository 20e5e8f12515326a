//! Globally adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! The integrator keeps a pool of panels and repeatedly bisects the panel
//! with the largest error estimate until the summed estimate drops below the
//! absolute tolerance. Callers seed the pool with breakpoints placed at the
//! features of the integrand (density peaks), which is what makes narrow
//! Gaussian components cheap to resolve.

use crate::error::{Error, Result};
use crate::scalar::Real;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];

// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tuning knobs for [`integrate`].
#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-11,
            max_panels: 20_000,
        }
    }
}

/// Converged integral with its error estimate.
#[derive(Clone, Copy, Debug)]
pub struct QuadResult<T> {
    pub value: T,
    pub abs_error: T,
    pub panels: usize,
}

#[derive(Clone, Copy)]
struct Panel<T> {
    lo: T,
    hi: T,
    value: T,
    err: T,
}

fn gk15<T: Real, F: Fn(T) -> T>(f: &F, lo: T, hi: T) -> (T, T) {
    let half = T::lit(0.5);
    let centre = half * (lo + hi);
    let radius = half * (hi - lo);
    let fc = f(centre);
    let mut kronrod = fc * T::lit(WGK[7]);
    let mut gauss = fc * T::lit(WG[3]);
    for (i, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = radius * T::lit(x);
        let f1 = f(centre - dx);
        let f2 = f(centre + dx);
        kronrod = kronrod + T::lit(w) * (f1 + f2);
        if i % 2 == 1 {
            gauss = gauss + T::lit(WG[i / 2]) * (f1 + f2);
        }
    }
    let value = kronrod * radius;
    let err = ((kronrod - gauss) * radius).abs();
    (value, err)
}

/// Integrates `f` over `[breakpoints[0], breakpoints[last]]`.
///
/// `breakpoints` must be sorted ascending with at least two entries.
pub fn integrate<T, F>(f: F, breakpoints: &[T], opts: QuadOptions) -> Result<QuadResult<T>>
where
    T: Real,
    F: Fn(T) -> T,
{
    if breakpoints.len() < 2 {
        return Err(Error::Domain(
            "quadrature needs at least two breakpoints".into(),
        ));
    }
    if breakpoints.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::Domain(
            "quadrature breakpoints must be ascending".into(),
        ));
    }
    let tol = T::lit(opts.abs_tol);
    let mut panels: Vec<Panel<T>> = breakpoints
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (value, err) = gk15(&f, w[0], w[1]);
            Panel {
                lo: w[0],
                hi: w[1],
                value,
                err,
            }
        })
        .collect();

    loop {
        let total_err = panels.iter().fold(T::zero(), |acc, p| acc + p.err);
        if total_err <= tol {
            break;
        }
        if panels.len() >= opts.max_panels {
            let value = panels.iter().fold(T::zero(), |acc, p| acc + p.value);
            return Err(Error::Numeric(format!(
                "quadrature did not converge: value {value}, error estimate {total_err}, tolerance {tol}, {} panels",
                panels.len()
            )));
        }
        let (worst, _) =
            panels
                .iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, be), (i, p)| {
                    if p.err > be {
                        (i, p.err)
                    } else {
                        (bi, be)
                    }
                });
        let p = panels.swap_remove(worst);
        let mid = T::lit(0.5) * (p.lo + p.hi);
        if !(mid > p.lo && mid < p.hi) {
            // panel exhausted at machine resolution; accept its estimate
            panels.push(Panel {
                err: T::zero(),
                ..p
            });
            continue;
        }
        for (lo, hi) in [(p.lo, mid), (mid, p.hi)] {
            let (value, err) = gk15(&f, lo, hi);
            panels.push(Panel { lo, hi, value, err });
        }
    }

    // sum in ascending position for run-to-run reproducibility
    panels.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());
    let value = panels.iter().fold(T::zero(), |acc, p| acc + p.value);
    let abs_error = panels.iter().fold(T::zero(), |acc, p| acc + p.err);
    Ok(QuadResult {
        value,
        abs_error,
        panels: panels.len(),
    })
}
