//! Adaptive Gauss–Kronrod (7/15) integration.

use crate::error::{Error, Result};

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
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: usize = 60;
const MAX_EVALS: usize = 2_000_000;

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadTol {
    pub rel: f64,
    pub abs: f64,
}

impl Default for QuadTol {
    fn default() -> Self {
        Self { rel: 1e-10, abs: 1e-15 }
    }
}

fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Integrates `f` over `[a, b]`; either end may be infinite.
pub fn integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: QuadTol) -> Result<f64> {
    integrate_dyn(&mut f, a, b, tol)
}

fn integrate_dyn(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: QuadTol) -> Result<f64> {
    if a.is_nan() || b.is_nan() {
        return Err(Error::Numeric("NaN integration limit".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return integrate_dyn(f, b, a, tol).map(|v| -v);
    }
    match (a.is_finite(), b.is_finite()) {
        (true, true) => adaptive(f, a, b, tol),
        (true, false) => adaptive(
            &mut |t: f64| {
                if t >= 1.0 {
                    return 0.0;
                }
                let u = 1.0 - t;
                f(a + t / u) / (u * u)
            },
            0.0,
            1.0,
            tol,
        ),
        (false, true) => adaptive(
            &mut |t: f64| {
                if t >= 1.0 {
                    return 0.0;
                }
                let u = 1.0 - t;
                f(b - t / u) / (u * u)
            },
            0.0,
            1.0,
            tol,
        ),
        (false, false) => {
            let left = integrate_dyn(f, f64::NEG_INFINITY, 0.0, tol)?;
            let right = integrate_dyn(f, 0.0, f64::INFINITY, tol)?;
            Ok(left + right)
        }
    }
}

fn adaptive(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: QuadTol) -> Result<f64> {
    let (whole, err) = gk15(f, a, b);
    let mut evals = 15;
    let mut stack = vec![(a, b, whole, err, 0usize)];
    let mut total = 0.0;
    let mut total_err = 0.0;
    let target = |v: f64| tol.abs.max(tol.rel * v.abs());
    while let Some((lo, hi, val, e, depth)) = stack.pop() {
        let width_share = (hi - lo) / (b - a);
        if e <= target(whole) * width_share || e <= target(val) || depth >= MAX_DEPTH {
            total += val;
            total_err += e;
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let (l, le) = gk15(f, lo, mid);
        let (r, re) = gk15(f, mid, hi);
        evals += 30;
        if evals > MAX_EVALS {
            return Err(Error::Numeric(format!("quadrature on [{a}, {b}] did not converge")));
        }
        stack.push((lo, mid, l, le, depth + 1));
        stack.push((mid, hi, r, re, depth + 1));
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!("quadrature on [{a}, {b}] produced {total}")));
    }
    let _ = total_err;
    Ok(total)
}
